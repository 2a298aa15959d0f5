"""Receding-horizon speed tracking of a position-indexed reference.

The controller works in time while the reference and the road grade are
indexed by position; the preview projects them onto the horizon assuming
the current speed is held.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import ekf
from .grade_map import GradeMap
from .planner import VelocityPlan
from .vehicle import VehicleParams, resistance, step_time, trip_energy_time, wheel_power

log = logging.getLogger(__name__)

_U_SCALE = 1000.0          # optimize in kN for conditioning
_STATE_PENALTY = 1e6       # exterior penalty weight on speed-box violations


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 5
    gamma: float = 1e-5
    terminal_weight: float = 1e3
    dt: float = 0.2
    u_min: float = -3000.0
    u_max: float = 3000.0
    v_min: float = 0.0
    v_max: float = 40.0
    launch_speed: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")


@dataclass(frozen=True)
class HorizonPreview:
    positions: np.ndarray
    v_ref: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return self.v_ref.size


@dataclass
class MpcSolution:
    u: np.ndarray
    v: np.ndarray
    cost: float
    feasible: bool = True
    iterations: int = 0

    @property
    def u0(self) -> float:
        return float(self.u[0])


def build_preview(s_hat: float, v_now: float, plan: VelocityPlan, gmap: GradeMap, cfg: MpcConfig) -> HorizonPreview:
    if v_now < 0:
        raise ValueError("v_now must be >= 0")
    pos = s_hat + np.arange(cfg.horizon + 1) * cfg.dt * v_now
    return HorizonPreview(pos, np.atleast_1d(plan.v_ref_at(pos)), np.arcsin(np.atleast_1d(gmap.grade_at(pos))))


def rollout(v0: float, u: np.ndarray, theta: np.ndarray, p: VehicleParams, dt: float) -> np.ndarray:
    v = np.empty(u.size + 1)
    v[0] = v0
    for k in range(u.size):
        v[k + 1] = step_time(v[k], theta[k], u[k], p, dt)
    return v


def objective(u: np.ndarray, v: np.ndarray, v_ref: np.ndarray, cfg: MpcConfig) -> float:
    """Tracking + effort + terminal cost of a predicted trajectory (no penalty)."""
    err = v[1:] - v_ref[1:]
    return float(err @ err + cfg.gamma * (u @ u) + cfg.terminal_weight * err[-1] ** 2)


def box_violation(v: np.ndarray, cfg: MpcConfig) -> float:
    return float(np.max(np.maximum(0.0, np.maximum(v[1:] - cfg.v_max, cfg.v_min - v[1:])), initial=0.0))


def _cost_and_grad(z, v0, preview: HorizonPreview, p: VehicleParams, cfg: MpcConfig):
    u = z * _U_SCALE
    N = u.size
    theta, ref = preview.theta, preview.v_ref
    v = np.empty(N + 1)
    v[0] = v0
    active = np.ones(N, dtype=bool)
    for k in range(N):
        nxt = v[k] + cfg.dt * (u[k] - resistance(v[k], theta[k], p)) / p.m
        active[k] = nxt > 0.0
        v[k + 1] = nxt if active[k] else 0.0
    err = v[1:] - ref[1:]
    hi = np.maximum(0.0, v[1:] - cfg.v_max)
    lo = np.maximum(0.0, cfg.v_min - v[1:])
    w = np.ones(N)
    w[-1] += cfg.terminal_weight
    J = float(np.sum(w * err**2) + cfg.gamma * (u @ u) + _STATE_PENALTY * (hi @ hi + lo @ lo))
    dJdv = 2.0 * w * err + 2.0 * _STATE_PENALTY * (hi - lo)
    # adjoint pass
    grad = np.empty(N)
    lam = 0.0
    c2 = 2.0 * p.drag_coeff * cfg.dt / p.m
    for k in range(N - 1, -1, -1):
        lam += dJdv[k]                   # d J / d v[k+1]
        if active[k]:
            grad[k] = lam * cfg.dt / p.m
            lam *= 1.0 - c2 * v[k]
        else:
            grad[k] = 0.0
            lam = 0.0
    grad += 2.0 * cfg.gamma * u
    return J, grad * _U_SCALE


def solve(v_now: float, preview: HorizonPreview, params: VehicleParams, cfg: MpcConfig,
          warm_start: np.ndarray | None = None) -> MpcSolution:
    """Minimize the horizon cost over the input sequence.

    Speed-box constraints enter through a stiff exterior penalty; if the best
    solution still violates them by more than 1e-3 m/s the result is flagged
    infeasible and the saturated best-effort input is returned.
    """
    N = cfg.horizon
    if len(preview) != N + 1:
        raise ValueError("preview length must be horizon + 1")
    if not cfg.v_min <= v_now <= cfg.v_max:
        log.warning("current speed %.3f outside [%.3f, %.3f]; clamping", v_now, cfg.v_min, cfg.v_max)
        v_now = float(np.clip(v_now, cfg.v_min, cfg.v_max))
    lo, hi = cfg.u_min / _U_SCALE, cfg.u_max / _U_SCALE
    eq = float(np.clip(resistance(preview.v_ref[1:], preview.theta[:-1], params).mean(), cfg.u_min, cfg.u_max))
    starts = [np.full(N, eq / _U_SCALE), np.zeros(N)]
    if warm_start is not None and len(warm_start) == N:
        starts.insert(0, np.clip(np.asarray(warm_start, float) / _U_SCALE, lo, hi))
    best = None
    iters = 0
    for z0 in starts:
        res = minimize(_cost_and_grad, z0, args=(v_now, preview, params, cfg), jac=True, method="L-BFGS-B",
                       bounds=[(lo, hi)] * N, options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 200})
        iters += res.nit
        if best is None or res.fun < best.fun:
            best = res
    u = np.clip(best.x * _U_SCALE, cfg.u_min, cfg.u_max)
    v = rollout(v_now, u, preview.theta, params, cfg.dt)
    feasible = box_violation(v, cfg) <= 1e-3
    return MpcSolution(u, v, objective(u, v, preview.v_ref, cfg), feasible, iters)


def enumerate_oracle(v_now: float, preview: HorizonPreview, params: VehicleParams, cfg: MpcConfig,
                     n_points: int = 201) -> MpcSolution:
    """Best input sequence over a dense uniform input grid (exponential in N)."""
    N = cfg.horizon
    grid = np.linspace(cfg.u_min, cfg.u_max, n_points)
    best_cost, best_u = np.inf, None
    rest = np.array(np.meshgrid(*([grid] * (N - 1)), indexing="ij")).reshape(N - 1, -1) if N > 1 else np.zeros((0, 1))
    w = np.ones(N)
    w[-1] += cfg.terminal_weight
    for u0 in grid:
        U = np.vstack([np.full(rest.shape[1], u0), rest])
        v = np.full(U.shape[1], float(v_now))
        cost = cfg.gamma * np.sum(U**2, axis=0)
        ok = np.ones(U.shape[1], dtype=bool)
        for k in range(N):
            v = np.maximum(0.0, v + cfg.dt * (U[k] - resistance(v, preview.theta[k], params)) / params.m)
            cost += w[k] * (v - preview.v_ref[k + 1]) ** 2
            ok &= (v >= cfg.v_min - 1e-12) & (v <= cfg.v_max + 1e-12)
        cost = np.where(ok, cost, np.inf)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost, best_u = float(cost[j]), U[:, j].copy()
    if best_u is None:
        best_u = np.zeros(N)
    v = rollout(v_now, best_u, preview.theta, params, cfg.dt)
    return MpcSolution(best_u, v, best_cost, np.isfinite(best_cost))


# -- localizers ---------------------------------------------------------------
# A localizer reports a position estimate from the true state (``locate``) and
# is told the acceleration actually applied over the step (``advance``).

class TruthLocalizer:
    name = "truth"

    def reset(self, s0: float, v0: float) -> None:
        pass

    def locate(self, s_true: float, v_true: float) -> float:
        return s_true

    def advance(self, s_true: float, a_true: float) -> None:
        pass


class OffsetLocalizer(TruthLocalizer):
    """Reports the true position shifted by a fixed offset (metres ahead if > 0)."""

    def __init__(self, offset: float):
        self.offset = float(offset)
        self.name = f"offset:{offset:g}"

    def locate(self, s_true: float, v_true: float) -> float:
        return s_true + self.offset


class EkfLocalizer:
    """Online grade-map EKF fed by simulated wheel speed, accelerometer and inclinometer."""

    name = "ekf"

    def __init__(self, gmap: GradeMap, cfg, noise, dt: float):
        self.gmap, self.cfg, self.noise, self.dt = gmap, cfg, noise, dt
        self.est = None
        self.rng = None

    def reset(self, s0: float, v0: float) -> None:
        self.est = ekf.initial_estimate(s0, v0, self.cfg)
        self.rng = np.random.default_rng(self.noise.seed)

    def locate(self, s_true: float, v_true: float) -> float:
        v_m = v_true + self.rng.normal(0.0, self.noise.sigma_v)
        th_m = np.arcsin(self.gmap.grade_at(s_true)) + self.rng.normal(0.0, self.noise.sigma_theta)
        self.est = ekf.update(self.est, v_m, th_m, self.gmap, self.cfg)
        return self.est.s

    def advance(self, s_true: float, a_true: float) -> None:
        a_sensor = a_true + self.cfg.g * self.gmap.grade_at(s_true) + \
            self.rng.normal(0.0, self.noise.accel_noise_std)
        self.est = ekf.predict(self.est, a_sensor, self.dt, self.gmap, self.cfg)


def make_localizer(spec: str, gmap: GradeMap | None = None, ekf_cfg=None, noise=None, dt: float = 0.2):
    """Parse ``truth``, ``ekf`` or ``offset:<metres>``."""
    if spec == "truth":
        return TruthLocalizer()
    if spec.startswith("offset:"):
        return OffsetLocalizer(float(spec.split(":", 1)[1]))
    if spec == "ekf":
        if gmap is None or ekf_cfg is None or noise is None:
            raise ValueError("ekf localizer needs a grade map, EKF config and noise spec")
        return EkfLocalizer(gmap, ekf_cfg, noise, dt)
    raise ValueError(f"unknown localizer {spec!r}")


@dataclass
class ClosedLoopLog:
    t: np.ndarray
    s_true: np.ndarray
    s_hat: np.ndarray
    v: np.ndarray
    v_ref: np.ndarray
    u: np.ndarray
    power: np.ndarray
    dt: float
    infeasible_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def energy_kwh(self) -> float:
        return trip_energy_time(self.v, self.u, self.dt)

    @property
    def duration_s(self) -> float:
        return float(self.t.size * self.dt)

    def tracking_rmse(self, skip_s: float = 0.0) -> float:
        m = self.t >= self.t[0] + skip_s
        e = self.v[m] - self.v_ref[m]
        return float(np.sqrt(np.mean(e * e)))

    def summary(self) -> dict:
        return {"energy_kwh": self.energy_kwh, "tracking_rmse_mps": self.tracking_rmse(),
                "duration_s": self.duration_s}

    def save(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "s_true_m", "s_hat_m", "v_mps", "v_ref_mps", "u_N", "power_W"])
            for row in zip(self.t, self.s_true, self.s_hat, self.v, self.v_ref, self.u, self.power):
                w.writerow([f"{x:.10g}" for x in row])
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.summary(), fh, indent=2)


def load_log_csv(path, dt: float | None = None) -> ClosedLoopLog:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    col = {k: np.array([float(r[k]) for r in rows]) for k in
           ("t_s", "s_true_m", "s_hat_m", "v_mps", "v_ref_mps", "u_N", "power_W")}
    if dt is None:
        dt = float(col["t_s"][1] - col["t_s"][0]) if len(rows) > 1 else 0.2
    return ClosedLoopLog(col["t_s"], col["s_true_m"], col["s_hat_m"], col["v_mps"], col["v_ref_mps"],
                         col["u_N"], col["power_W"], dt)


def closed_loop(plant_params: VehicleParams, cfg: MpcConfig, plan: VelocityPlan, gmap: GradeMap,
                localizer="truth", duration: float = 3600.0, *,
                controller_params: VehicleParams | None = None, s_start: float | None = None,
                s_end: float | None = None, v_start: float | None = None) -> ClosedLoopLog:
    """Simulate MPC in closed loop with the longitudinal plant.

    Each step: localize, build the preview from the estimated position, solve,
    apply the first input to the plant. Runs from ``s_start`` (default: plan
    start) until the true position reaches ``s_end`` (default: plan end, where
    the vehicle must also come to rest) or ``duration`` elapses.

    While the vehicle is slower than ``cfg.launch_speed`` the preview is
    projected at that speed, otherwise a start from rest would only ever see
    the zero reference at its own position.
    """
    if abs(plant_params.T_s - cfg.dt) > 1e-12:
        raise ValueError(f"plant sampling time {plant_params.T_s} differs from controller dt {cfg.dt}")
    ctrl_params = controller_params or plant_params
    loc = make_localizer(localizer) if isinstance(localizer, str) else localizer
    s = float(plan.arc[0] if s_start is None else s_start)
    v = float(plan.v_ref_at(s) if v_start is None else v_start)
    end = float(plan.arc[-1] if s_end is None else s_end)
    to_route_end = end >= plan.arc[-1] - 1e-9
    loc.reset(s, v)
    dt = cfg.dt
    log_rows = []
    warm = None
    n_bad = 0
    for k in range(int(np.ceil(duration / dt))):
        if s >= end or (to_route_end and s >= end - 0.5 and v < 0.05):
            break
        s_hat = loc.locate(s, v)
        v_prev = max(v, cfg.launch_speed) if s_hat < plan.arc[-1] else v
        preview = build_preview(s_hat, v_prev, plan, gmap, cfg)
        sol = solve(min(max(v, cfg.v_min), cfg.v_max), preview, ctrl_params, cfg, warm)
        n_bad += not sol.feasible
        u = sol.u0
        warm = np.append(sol.u[1:], sol.u[-1])
        v_next = step_time(v, float(gmap.theta_at(s)), u, plant_params, dt)
        log_rows.append((k * dt, s, s_hat, v, float(plan.v_ref_at(s)), u, wheel_power(v, u)))
        loc.advance(s, (v_next - v) / dt)
        s += v * dt
        v = v_next
    arr = np.array(log_rows, dtype=float).reshape(-1, 7)
    return ClosedLoopLog(*arr.T, dt=dt, infeasible_steps=n_bad,
                         meta={"localizer": getattr(loc, "name", "custom")})
