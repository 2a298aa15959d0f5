"""Energy-optimal velocity planning by backward dynamic programming.

The route is split into cells of length ``ds``; node k sits at ``k * ds``.
The state is the speed at a node, the input is the net wheel force applied
over the following cell, and the successor speed comes from the
constant-acceleration spatial update. Cost per cell::

    (v * max(u, 0) + gamma * (v - v_max)**2) * ds

The route must start and end at rest.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grade_map import GradeMap
from .vehicle import VehicleParams, cell_time, resistance, step_spatial_vec, trip_energy

log = logging.getLogger(__name__)

# slack on the speed box when checking successor feasibility
_BOUND_TOL = 1e-9


class InfeasibleRoute(RuntimeError):
    def __init__(self, msg: str, cell: int | None = None):
        super().__init__(msg)
        self.cell = cell


@dataclass(frozen=True)
class RouteProfile:
    """Discretized route: per-cell grade and per-node speed bounds."""

    ds: float
    grade: np.ndarray
    v_max: np.ndarray
    v_min: np.ndarray
    s0: float = 0.0

    def __post_init__(self):
        grade = np.asarray(self.grade, dtype=float)
        v_max = np.asarray(self.v_max, dtype=float)
        v_min = np.asarray(self.v_min, dtype=float)
        if not self.ds > 0:
            raise ValueError("ds must be > 0")
        if grade.size < 1 or v_max.shape != (grade.size + 1,) or v_min.shape != v_max.shape:
            raise ValueError("need N cell grades and N+1 node bounds")
        if np.any(np.abs(grade) >= 1):
            raise ValueError("|grade| must be < 1")
        if np.any(v_min < 0) or np.any(v_max <= v_min):
            k = int(np.argmax((v_min < 0) | (v_max <= v_min)))
            raise ValueError(f"speed bounds inconsistent at node {k}: [{v_min[k]}, {v_max[k]}]")
        if v_min[0] != 0 or v_min[-1] != 0:
            raise ValueError("route ends must admit v = 0 (v_min = 0 at first and last node)")
        object.__setattr__(self, "grade", grade)
        object.__setattr__(self, "v_max", v_max)
        object.__setattr__(self, "v_min", v_min)

    @property
    def n_cells(self) -> int:
        return self.grade.size

    @property
    def length(self) -> float:
        return self.n_cells * self.ds

    @property
    def nodes(self) -> np.ndarray:
        return self.s0 + self.ds * np.arange(self.n_cells + 1)

    @property
    def theta(self) -> np.ndarray:
        return np.arcsin(self.grade)

    @classmethod
    def build(cls, gmap: GradeMap, length: float, ds: float, v_max, v_min=None, *,
              s0: float = 0.0, ramp_accel: float | None = 0.5) -> "RouteProfile":
        """Sample a grade map and speed bounds onto a ``ds`` grid.

        ``v_max``/``v_min`` are callables of arc position or scalars; ``v_min``
        defaults to half of ``v_max``. With ``ramp_accel`` set, ``v_min`` is
        capped by ``sqrt(2 * ramp_accel * d)`` where ``d`` is the distance to
        the nearer route end, so that starting and stopping stay feasible.
        """
        n = int(round(length / ds))
        if n < 1 or abs(n * ds - length) > 1e-6 * max(1.0, length):
            raise ValueError(f"route length {length} is not a multiple of ds={ds}")
        nodes = s0 + ds * np.arange(n + 1)
        mids = nodes[:-1] + 0.5 * ds
        vmax = np.broadcast_to(v_max(nodes) if callable(v_max) else v_max, nodes.shape).astype(float)
        if v_min is None:
            vmin = 0.5 * vmax
        else:
            vmin = np.broadcast_to(v_min(nodes) if callable(v_min) else v_min, nodes.shape).astype(float)
        if ramp_accel is not None:
            d = np.minimum(nodes - nodes[0], nodes[-1] - nodes)
            vmin = np.minimum(vmin, np.sqrt(2.0 * ramp_accel * d))
        vmin[0] = vmin[-1] = 0.0
        return cls(ds, gmap.grade_at(mids), vmax, vmin, s0)


@dataclass(frozen=True)
class DpGrid:
    n_v: int = 41
    n_u: int = 25
    u_min: float = -3000.0
    u_max: float = 3000.0

    def __post_init__(self):
        if self.n_v < 2 or self.n_u < 3:
            raise ValueError("need n_v >= 2 and n_u >= 3")
        if not self.u_min < 0 < self.u_max:
            raise ValueError("input bounds must bracket zero")

    def velocity_levels(self, route: RouteProfile, k: int) -> np.ndarray:
        return np.linspace(route.v_min[k], route.v_max[k], self.n_v)

    def input_levels(self) -> np.ndarray:
        u = np.linspace(self.u_min, self.u_max, self.n_u)
        if not np.any(u == 0.0):
            u = np.sort(np.append(u, 0.0))
        return u


@dataclass(frozen=True)
class PlannerConfig:
    gamma: float = 10.0
    n_v: int = 41
    n_u: int = 25

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass
class DpTables:
    cost_to_go: np.ndarray        # (N+1, n_v)
    policy: np.ndarray            # (N, n_v) input value, nan where infeasible
    levels: np.ndarray            # (N+1, n_v)
    u_levels: np.ndarray
    gamma: float
    snapped: bool = False


@dataclass
class VelocityPlan:
    arc: np.ndarray
    v_ref: np.ndarray
    u: np.ndarray                 # per cell
    cost_to_go: np.ndarray        # per node, along the rolled-out trajectory
    stage_cost: np.ndarray        # per cell
    energy_kwh: float
    trip_time_s: float
    gamma: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ds(self) -> float:
        return float(self.arc[1] - self.arc[0])

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_cost))

    def v_ref_at(self, s):
        """Reference speed at arc position(s).

        Interpolates v**2 linearly between nodes, which is exact for the
        constant-acceleration motion assumed inside a cell. Zero past the end.
        """
        s = np.asarray(s, dtype=float)
        v2 = np.interp(s, self.arc, self.v_ref**2)
        out = np.where(s > self.arc[-1], 0.0, np.sqrt(np.maximum(v2, 0.0)))
        return float(out) if out.ndim == 0 else out

    def summary(self) -> dict:
        return {"energy_kwh": self.energy_kwh, "trip_time_min": self.trip_time_s / 60.0, "gamma": self.gamma}

    def save(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["arc_m", "v_ref_mps", "u_N", "cost_to_go"])
            u = np.append(self.u, 0.0)
            for row in zip(self.arc, self.v_ref, u, self.cost_to_go):
                w.writerow([f"{x:.10g}" for x in row])
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.summary(), fh, indent=2)


def load_plan_csv(path) -> VelocityPlan:
    cols = {k: [] for k in ("arc_m", "v_ref_mps", "u_N", "cost_to_go")}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for k in cols:
                cols[k].append(float(row[k]))
    arc, v, u = (np.array(cols[k]) for k in ("arc_m", "v_ref_mps", "u_N"))
    ds = np.diff(arc)
    return VelocityPlan(arc, v, u[:-1], np.array(cols["cost_to_go"]), np.zeros(u.size - 1),
                        trip_energy(u[:-1], ds), float(np.sum(cell_time(v[:-1], v[1:], ds))))


def stage_cost(v, u, v_max_cell, gamma: float, ds: float):
    return (v * np.maximum(u, 0.0) + gamma * (v - v_max_cell) ** 2) * ds


def _interp_levels(J: np.ndarray, levels: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Linear interpolation of J over ``levels``; +inf if any used neighbour is."""
    n = levels.size
    h = (levels[-1] - levels[0]) / (n - 1)
    pos = (v - levels[0]) / h
    i = np.clip(np.floor(pos).astype(int), 0, n - 2)
    w = np.clip(pos - i, 0.0, 1.0)
    lo, hi = J[i], J[i + 1]
    with np.errstate(invalid="ignore"):
        val = (1.0 - w) * lo + w * hi
    val = np.where(w == 0.0, lo, np.where(w == 1.0, hi, val))
    return np.where(np.isinf(lo) & (w < 1.0) | np.isinf(hi) & (w > 0.0), np.inf, val)


def _snap_index(levels: np.ndarray, v):
    """Index of the nearest velocity level (uniform grid)."""
    h = (levels[-1] - levels[0]) / (levels.size - 1)
    return np.clip(np.rint((np.asarray(v) - levels[0]) / h).astype(int), 0, levels.size - 1)


def _snap_levels(J: np.ndarray, levels: np.ndarray, v: np.ndarray) -> np.ndarray:
    return J[_snap_index(levels, v)]


def _successor_cost(k: int, vn: np.ndarray, clamped: np.ndarray, route: RouteProfile,
                    levels_next: np.ndarray, J_next: np.ndarray, snapped: bool) -> np.ndarray:
    last = k == route.n_cells - 1
    if last:
        # stopping inside the final cell reaches the terminal state
        vn = np.where(clamped, 0.0, vn)
        clamped = np.zeros_like(clamped)
    inside = (vn >= route.v_min[k + 1] - _BOUND_TOL) & (vn <= route.v_max[k + 1] + _BOUND_TOL)
    lookup = _snap_levels if snapped else _interp_levels
    Jn = lookup(J_next, levels_next, np.clip(vn, levels_next[0], levels_next[-1]))
    if last and not snapped:
        Jn = np.where(vn <= _BOUND_TOL, 0.0, np.inf)
    return np.where(inside & ~clamped, Jn, np.inf)


def _tie_order(u_levels: np.ndarray) -> np.ndarray:
    return np.lexsort((u_levels, np.abs(u_levels)))


def backward_sweep(route: RouteProfile, grid: DpGrid, params: VehicleParams, cfg: PlannerConfig,
                   snapped: bool = False) -> DpTables:
    """Bellman recursion from the destination back to the origin.

    ``snapped`` replaces interpolation of the cost-to-go by nearest-level
    lookup; the resulting tables are exactly those of enumerating all input
    sequences under snapped dynamics.
    """
    N = route.n_cells
    u_levels = grid.input_levels()
    order = _tie_order(u_levels)
    levels = np.stack([grid.velocity_levels(route, k) for k in range(N + 1)])
    J = np.full((N + 1, grid.n_v), np.inf)
    J[N] = np.where(levels[N] == 0.0, 0.0, np.inf)
    policy = np.full((N, grid.n_v), np.nan)
    theta = route.theta
    U = u_levels[None, :]
    for k in range(N - 1, -1, -1):
        V = levels[k][:, None]
        vn, clamped = step_spatial_vec(V, theta[k], U, params, route.ds)
        total = stage_cost(V, U, route.v_max[k], cfg.gamma, route.ds) + \
            _successor_cost(k, vn, clamped, route, levels[k + 1], J[k + 1], snapped)
        total = total[:, order]
        best = np.argmin(total, axis=1)
        J[k] = total[np.arange(grid.n_v), best]
        policy[k] = np.where(np.isfinite(J[k]), u_levels[order][best], np.nan)
    if not np.isfinite(J[0, 0]):
        first_bad = next((k for k in range(N + 1) if not np.any(np.isfinite(J[k]))), 0)
        raise InfeasibleRoute(
            f"no feasible speed trajectory from rest at the origin (cell {first_bad} has no finite "
            "cost-to-go); refine the grid or relax the speed bounds", first_bad)
    return DpTables(J, policy, levels, u_levels, cfg.gamma, snapped)


def forward_rollout(tables: DpTables, route: RouteProfile, grid: DpGrid, params: VehicleParams,
                    v0: float = 0.0) -> VelocityPlan:
    """Roll the optimal policy forward from the origin on the continuous dynamics.

    At each node the Bellman minimization is re-evaluated at the actual
    (off-grid) speed against the stored cost-to-go, which is the policy the
    tables encode.
    """
    N = route.n_cells
    u_levels = tables.u_levels
    order = _tie_order(u_levels)
    theta = route.theta
    v = np.empty(N + 1)
    u = np.empty(N)
    ctg = np.empty(N + 1)
    stage = np.empty(N)
    v[0] = v0
    lookup = _snap_levels if tables.snapped else _interp_levels
    ctg[0] = float(lookup(tables.cost_to_go[0], tables.levels[0], np.array([v0]))[0])
    for k in range(N):
        vn, clamped = step_spatial_vec(np.full(u_levels.size, v[k]), theta[k], u_levels, params, route.ds)
        costs = stage_cost(v[k], u_levels, route.v_max[k], tables.gamma, route.ds)
        total = costs + _successor_cost(k, vn, clamped, route, tables.levels[k + 1],
                                        tables.cost_to_go[k + 1], tables.snapped)
        j = order[np.argmin(total[order])]
        if not np.isfinite(total[j]):
            raise InfeasibleRoute(f"rollout left the feasible set in cell {k} at v={v[k]:.3f} m/s", k)
        u[k] = u_levels[j]
        stage[k] = costs[j]
        v[k + 1] = 0.0 if (k == N - 1 and clamped[j]) else vn[j]
        if tables.snapped:
            v[k + 1] = tables.levels[k + 1][_snap_index(tables.levels[k + 1], v[k + 1])]
        ctg[k + 1] = total[j] - costs[j]
    times = cell_time(v[:-1], v[1:], route.ds)
    plan = VelocityPlan(route.nodes, v, u, ctg, stage, trip_energy(u, route.ds), float(np.sum(times)),
                        tables.gamma)
    plan.meta["dp_cost"] = float(tables.cost_to_go[0, 0]) if v0 == 0 else ctg[0]
    return plan


def plan_route(route: RouteProfile, params: VehicleParams, cfg: PlannerConfig,
               u_bounds: tuple[float, float] = (-3000.0, 3000.0)) -> VelocityPlan:
    grid = DpGrid(cfg.n_v, cfg.n_u, *u_bounds)
    tables = backward_sweep(route, grid, params, cfg)
    return forward_rollout(tables, route, grid, params, 0.0)


def brute_force(route: RouteProfile, grid: DpGrid, params: VehicleParams, cfg: PlannerConfig,
                k0: int, v0: float) -> tuple[float, float]:
    """Exhaustive search over all input sequences from node ``k0`` at speed ``v0``.

    Uses snapped dynamics; returns ``(optimal cost, first input)`` with ties
    broken toward smaller |u|, then smaller u. Exponential in the number of
    remaining cells; meant as a test oracle for tiny instances.
    """
    u_levels = grid.input_levels()
    n_rem = route.n_cells - k0
    # every input sequence at once: one row per sequence
    seq = np.array(list(np.ndindex(*([u_levels.size] * n_rem))), dtype=int).reshape(-1, n_rem)
    v = np.full(seq.shape[0], float(v0))
    ok = np.ones(seq.shape[0], dtype=bool)
    costs = np.empty(seq.shape, dtype=float)
    for step in range(n_rem):
        k = k0 + step
        u = u_levels[seq[:, step]]
        costs[:, step] = stage_cost(v, u, route.v_max[k], cfg.gamma, route.ds)
        vn, clamped = step_spatial_vec(v, route.theta[k], u, params, route.ds)
        if k == route.n_cells - 1:
            vn = np.where(clamped, 0.0, vn)
            clamped = np.zeros_like(clamped)
        ok &= ~clamped & (vn >= route.v_min[k + 1] - _BOUND_TOL) & (vn <= route.v_max[k + 1] + _BOUND_TOL)
        levels = grid.velocity_levels(route, k + 1)
        v = levels[_snap_index(levels, np.clip(vn, levels[0], levels[-1]))]
    ok &= v == 0.0
    if not ok.any():
        return np.inf, np.nan
    # same association order as the backward recursion
    total = np.zeros(seq.shape[0])
    for step in reversed(range(n_rem)):
        total = costs[:, step] + total
    u0 = u_levels[seq[:, 0]]
    idx = np.flatnonzero(ok)
    best = idx[np.lexsort((u0[idx], np.abs(u0[idx]), total[idx]))[0]]
    return float(total[best]), float(u0[best])


def bounds_following_plan(route: RouteProfile, params: VehicleParams,
                          u_bounds: tuple[float, float] = (-3000.0, 3000.0)) -> VelocityPlan:
    """Drive at the speed upper bound as closely as the input limits allow.

    Stands in for a traffic-flow speed profile: each cell targets the next
    node's ``v_max`` capped by the braking envelope needed to stop at the end.
    """
    u_min, u_max = u_bounds
    N, ds = route.n_cells, route.ds
    theta = route.theta
    c = params.drag_coeff
    env = np.empty(N + 1)
    env[N] = 0.0
    for k in range(N - 1, -1, -1):
        fixed = params.m * params.g * (params.C_r * np.cos(theta[k]) + np.sin(theta[k]))
        num = env[k + 1] ** 2 - 2.0 * ds * (u_min - fixed) / params.m
        env[k] = np.sqrt(max(num, 0.0) / (1.0 - 2.0 * ds * c / params.m))
    v = np.zeros(N + 1)
    u = np.zeros(N)
    for k in range(N):
        target = min(route.v_max[k + 1], env[k + 1])
        need = params.m * (target**2 - v[k] ** 2) / (2.0 * ds) + resistance(v[k], theta[k], params)
        u[k] = float(np.clip(need, u_min, u_max))
        vn, _ = step_spatial_vec(v[k], theta[k], u[k], params, ds)
        v[k + 1] = min(float(vn), route.v_max[k + 1])
    v[N] = 0.0
    times = cell_time(v[:-1], v[1:], ds)
    return VelocityPlan(route.nodes, v, u, np.zeros(N + 1), np.zeros(N), trip_energy(u, ds),
                        float(np.sum(times)), None, {"profile": "v_max"})


def load_speed_bounds(path, route_nodes: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Read ``arc_m,v_max_mps[,v_min_mps]`` and resample onto the route nodes.

    Missing ``v_min`` defaults to half of ``v_max``.
    """
    arc, vmax, vmin = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "arc_m" not in fields or "v_max_mps" not in fields:
            raise ValueError(f"{path}: need columns arc_m,v_max_mps[,v_min_mps]")
        has_min = "v_min_mps" in fields
        for lineno, row in enumerate(reader, start=2):
            try:
                arc.append(float(row["arc_m"]))
                vmax.append(float(row["v_max_mps"]))
                if has_min:
                    vmin.append(float(row["v_min_mps"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row") from exc
    arc, vmax = np.array(arc), np.array(vmax)
    nodes = np.asarray(route_nodes, dtype=float)
    if arc.size < 1:
        raise ValueError(f"{path}: no speed bounds")
    if np.any(np.diff(arc) <= 0):
        raise ValueError(f"{path}: arc positions must be strictly increasing")
    if np.any(vmax <= 0):
        raise ValueError(f"{path}: v_max must be > 0 everywhere")
    if arc[0] > nodes[0] + 1e-9 or arc[-1] < nodes[-1] - 1e-9:
        raise ValueError(f"{path}: bounds cover [{arc[0]}, {arc[-1]}] m but the route spans "
                         f"[{nodes[0]}, {nodes[-1]}] m")
    vmax_r = np.interp(nodes, arc, vmax)
    vmin_r = np.interp(nodes, arc, np.array(vmin)) if vmin else 0.5 * vmax_r
    return vmax_r, vmin_r
