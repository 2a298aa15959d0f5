"""Experiment orchestration: Monte-Carlo localization, planning, closed loop.

Every scenario is driven by an :class:`~gradeloc.config.ExperimentConfig`
and returns a report object that renders to text and JSON.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import grade_map as gm
from .config import ConfigError, ExperimentConfig
from .ekf import FilterRun, initial_estimate, integrate_velocity, run_filter
from .grade_map import GradeMap, polynomial_road
from .mpc import ClosedLoopLog, closed_loop, make_localizer
from .planner import RouteProfile, VelocityPlan, backward_sweep, bounds_following_plan, DpGrid, \
    forward_rollout
from .sensors import (GroundTruth, SensorTrace, fit_bias, inclination_from_sensors, remove_bias,
                      simulate_truth, synthesize_sensors)

log = logging.getLogger(__name__)

__all__ = ["rmse", "polynomial_road", "build_map", "run_localization_mc", "run_plan",
           "run_closed_loop", "run_energy_vs_offset", "LocalizationReport"]


def rmse(estimates: Sequence[float], truth: Sequence[float]) -> float:
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {t.shape}")
    if e.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((e - t) ** 2)))


def error_slope(t: np.ndarray, err: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``|err|`` against time and its standard error."""
    y = np.abs(err)
    tc = t - t.mean()
    sxx = float(tc @ tc)
    slope = float(tc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * tc
    se = float(np.sqrt((resid @ resid) / max(1, y.size - 2) / sxx))
    return slope, se


def build_map(cfg: ExperimentConfig) -> GradeMap:
    sec = cfg.section("map")
    kind = sec.get("kind", "polynomial")
    try:
        if kind == "polynomial":
            return polynomial_road(sec["coeffs"], float(sec["length"]), float(sec.get("ds", 1.0)),
                                   sec.get("basis", "power"))
        if kind == "sinusoid":
            return gm.sinusoid_road(float(sec["length"]), sec["amplitudes"], sec["wavelengths"],
                                    sec.get("phases"), float(sec.get("ds", 1.0)))
        if kind == "grade_csv":
            return gm.load_grade_csv(sec["path"])
        if kind == "profile_csv":
            return gm.from_elevation(gm.load_profile_csv(sec["path"]), int(sec.get("smoothing_window", 5)))
        if kind == "elevation_json":
            profile = gm.from_geo_samples(gm.load_elevation_json(sec["path"]))
            return gm.from_elevation(profile, int(sec.get("smoothing_window", 5)))
    except KeyError as exc:
        raise ConfigError(f"[map] kind={kind} needs key {exc.args[0]!r}") from exc
    raise ConfigError(f"unknown map kind {kind!r}")


def accel_program(exp: dict, n: int, dt: float) -> np.ndarray:
    """Smooth sinusoidal acceleration around cruising speed."""
    t = np.arange(n) * dt
    amp = float(exp.get("accel_amplitude", 0.3))
    period = float(exp.get("accel_period", 40.0))
    return amp * np.sin(2.0 * np.pi * t / period)


# -- localization --------------------------------------------------------------

@dataclass
class LocalizationRun:
    seed: int
    rmse_integration: float
    rmse_ekf: float
    final_error_integration: float
    final_error_ekf: float
    distance: float
    max_error_ekf: float
    slope_integration: float
    slope_integration_se: float
    slope_ekf: float
    slope_ekf_se: float
    bias_estimate: float | None = None
    clamp_count: int = 0

    @property
    def final_pct_integration(self) -> float:
        return 100.0 * self.final_error_integration / self.distance

    @property
    def final_pct_ekf(self) -> float:
        return 100.0 * self.final_error_ekf / self.distance


@dataclass
class LocalizationReport:
    runs: list[LocalizationRun]
    meta: dict = field(default_factory=dict)

    def _avg(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.runs]))

    @property
    def avg_rmse_integration(self) -> float:
        return self._avg("rmse_integration")

    @property
    def avg_rmse_ekf(self) -> float:
        return self._avg("rmse_ekf")

    @property
    def rmse_ratio(self) -> float:
        return self.avg_rmse_integration / self.avg_rmse_ekf

    def to_dict(self) -> dict:
        rows = []
        for r in self.runs:
            d = asdict(r)
            d["final_pct_integration"] = r.final_pct_integration
            d["final_pct_ekf"] = r.final_pct_ekf
            rows.append(d)
        keys = ("rmse_integration", "rmse_ekf", "final_error_integration", "final_error_ekf",
                "final_pct_integration", "final_pct_ekf")
        avg = {k: float(np.mean([row[k] for row in rows])) for k in keys}
        return {"kind": "localization", "runs": rows, "average": avg, "meta": self.meta}

    def to_text(self) -> str:
        lines = ["Position RMSE [m]",
                 f"{'run':>4} {'seed':>5} {'integration':>12} {'EKF':>8} {'final int':>10} {'final EKF':>10}"]
        for i, r in enumerate(self.runs, 1):
            lines.append(f"{i:>4} {r.seed:>5} {r.rmse_integration:>12.2f} {r.rmse_ekf:>8.2f} "
                         f"{r.final_error_integration:>10.2f} {r.final_error_ekf:>10.2f}")
        d = self.to_dict()["average"]
        lines.append(f"{'avg':>4} {'':>5} {d['rmse_integration']:>12.2f} {d['rmse_ekf']:>8.2f} "
                     f"{d['final_error_integration']:>10.2f} {d['final_error_ekf']:>10.2f}")
        lines.append(f"final drift [% of distance]: integration {d['final_pct_integration']:.3f}  "
                     f"EKF {d['final_pct_ekf']:.3f}")
        return "\n".join(lines)


@dataclass
class LocalizationTraces:
    truth: GroundTruth
    trace: SensorTrace
    run: FilterRun
    s_integrated: np.ndarray


def _inclination(cfg: ExperimentConfig, truth: GroundTruth, trace: SensorTrace, gmap: GradeMap, seed: int):
    noise = cfg.section("noise")
    mode = noise.get("inclination", "derived")
    if mode == "direct":
        # inclinometer-style channel: true inclination plus white noise
        rng = np.random.default_rng([seed, 2])
        theta = np.arcsin(gmap.grade_at(truth.position))
        return theta + rng.normal(0.0, float(noise.get("sigma_theta", 0.0)), theta.size)
    if mode == "derived":
        return inclination_from_sensors(trace, float(noise.get("filter_alpha", 0.2)),
                                        noise.get("diff_mode", "central"))
    raise ConfigError(f"[noise] inclination must be 'direct' or 'derived', got {mode!r}")


def run_localization_once(cfg: ExperimentConfig, seed: int, gmap: GradeMap | None = None,
                          keep_traces: bool = False):
    gmap = gmap if gmap is not None else build_map(cfg)
    exp = cfg.section("experiment")
    dt = float(exp.get("dt", 0.1))
    n = int(round(float(exp.get("duration", 100.0)) / dt))
    truth = simulate_truth(gmap, accel_program(exp, n, dt), dt, float(exp.get("v0", 10.0)),
                           float(exp.get("s0", gmap.start)))
    noise = cfg.noise(seed)
    trace = synthesize_sensors(truth, gmap, noise)
    b_hat = None
    if noise.bias_rate != 0.0 and exp.get("compensate_bias", True):
        # slope profile from the sensors against the map at the reference positions
        th_n = inclination_from_sensors(trace, float(cfg.section("noise").get("filter_alpha", 0.2))).theta
        b_hat = fit_bias(th_n, np.arcsin(gmap.grade_at(truth.position)), dt)
        trace = remove_bias(trace, b_hat)
    theta_m = _inclination(cfg, truth, trace, gmap, seed)
    ekf_cfg = cfg.ekf()
    s0_hat = truth.position[0]
    if exp.get("init_offset", False):
        s0_hat += np.random.default_rng([seed, 1]).normal(0.0, np.sqrt(ekf_cfg.p0[0, 0]))
    run = run_filter(trace, gmap, ekf_cfg, initial_estimate(s0_hat, trace.wheel_speed[0], ekf_cfg), theta_m)
    s_int = integrate_velocity(trace, s0_hat)
    t = truth.time
    e_int = s_int - truth.position
    e_ekf = run.s_hat - truth.position
    si, si_se = error_slope(t, e_int)
    se, se_se = error_slope(t, e_ekf)
    result = LocalizationRun(
        seed=int(seed), rmse_integration=rmse(s_int, truth.position), rmse_ekf=rmse(run.s_hat, truth.position),
        final_error_integration=float(abs(e_int[-1])), final_error_ekf=float(abs(e_ekf[-1])),
        distance=float(truth.position[-1] - truth.position[0]), max_error_ekf=float(np.max(np.abs(e_ekf))),
        slope_integration=si, slope_integration_se=si_se, slope_ekf=se, slope_ekf_se=se_se,
        bias_estimate=b_hat, clamp_count=int(getattr(theta_m, "clamp_count", 0)))
    if keep_traces:
        return result, LocalizationTraces(truth, trace, run, s_int)
    return result


def _once(args):
    cfg, seed = args
    return run_localization_once(cfg, seed)


def run_localization_mc(cfg: ExperimentConfig, workers: int = 1) -> LocalizationReport:
    """One simulated run per seed; EKF and dead reckoning on the same traces."""
    seeds = cfg.seeds
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_once, [(cfg, s) for s in seeds]))
    else:
        gmap = build_map(cfg)
        runs = [run_localization_once(cfg, s, gmap) for s in seeds]
    return LocalizationReport(runs, {"config": cfg.source, "seeds": seeds})


def replay_localization(trace: SensorTrace, gmap: GradeMap, cfg: ExperimentConfig,
                        truth_positions: np.ndarray | None = None, s0: float | None = None,
                        bias_rate: float = 0.0) -> dict:
    """Run the EKF and dead reckoning on a logged trace against a given map."""
    if bias_rate:
        trace = remove_bias(trace, bias_rate)
    noise = cfg.section("noise")
    incl = inclination_from_sensors(trace, float(noise.get("filter_alpha", 0.2)), noise.get("diff_mode", "central"))
    ekf_cfg = cfg.ekf()
    start = gmap.start if s0 is None else s0
    run = run_filter(trace, gmap, ekf_cfg, initial_estimate(start, trace.wheel_speed[0], ekf_cfg), incl)
    s_int = integrate_velocity(trace, start)
    out = {"run": run, "s_integrated": s_int, "clamp_count": incl.clamp_count}
    if truth_positions is not None:
        out["rmse_integration"] = rmse(s_int, truth_positions)
        out["rmse_ekf"] = rmse(run.s_hat, truth_positions)
    return out


# -- planning and control ----------------------------------------------------------

def build_route(cfg: ExperimentConfig, gmap: GradeMap) -> RouteProfile:
    sec = cfg.section("planner")
    ds = float(sec.get("ds", 10.0))
    length = float(sec.get("length", gmap.length))
    length = ds * np.floor(length / ds + 1e-9)
    s0 = gmap.start
    ramp = sec.get("ramp_accel", 0.5)
    if "bounds_path" in sec:
        from .planner import load_speed_bounds
        nodes = s0 + ds * np.arange(int(round(length / ds)) + 1)
        vmax, vmin = load_speed_bounds(sec["bounds_path"], nodes)
        return RouteProfile.build(gmap, length, ds, lambda s: np.interp(s, nodes, vmax),
                                  lambda s: np.interp(s, nodes, vmin), s0=s0, ramp_accel=ramp)
    if "v_max_profile" in sec:
        prof = np.asarray(sec["v_max_profile"], dtype=float)
        vmax = lambda s: np.interp(s, prof[:, 0], prof[:, 1])  # noqa: E731
    else:
        vmax = float(sec.get("v_max", 15.0))
    vmin = sec.get("v_min")
    return RouteProfile.build(gmap, length, ds, vmax, None if vmin is None else float(vmin), s0=s0,
                              ramp_accel=ramp)


def _u_bounds(cfg: ExperimentConfig) -> tuple[float, float]:
    sec = cfg.section("planner")
    return float(sec.get("u_min", -3000.0)), float(sec.get("u_max", 3000.0))


def make_plan(cfg: ExperimentConfig, gmap: GradeMap, route: RouteProfile | None = None,
              gamma: float | None = None) -> VelocityPlan:
    route = route if route is not None else build_route(cfg, gmap)
    pcfg = cfg.planner()
    if gamma is not None:
        pcfg = type(pcfg)(gamma=gamma, n_v=pcfg.n_v, n_u=pcfg.n_u)
    grid = DpGrid(pcfg.n_v, pcfg.n_u, *_u_bounds(cfg))
    tables = backward_sweep(route, grid, cfg.vehicle(), pcfg)
    return forward_rollout(tables, route, grid, cfg.vehicle(), 0.0)


@dataclass
class PlanReport:
    plans: dict[str, VelocityPlan]
    reference: str = "v_max"

    def rows(self) -> list[dict]:
        base = self.plans[self.reference]
        out = []
        for name, p in self.plans.items():
            out.append({"profile": name, "gamma": p.gamma, "energy_kwh": p.energy_kwh,
                        "trip_time_min": p.trip_time_s / 60.0,
                        "energy_improvement_pct": 100.0 * (1.0 - p.energy_kwh / base.energy_kwh),
                        "trip_time_change_pct": 100.0 * (base.trip_time_s - p.trip_time_s) / base.trip_time_s})
        return out

    def to_dict(self) -> dict:
        return {"kind": "plan", "rows": self.rows()}

    def to_text(self) -> str:
        lines = [f"{'profile':<14} {'energy [kWh]':>13} {'trip [min]':>11} {'energy impr.':>13} {'time impr.':>11}"]
        for r in self.rows():
            lines.append(f"{r['profile']:<14} {r['energy_kwh']:>13.3f} {r['trip_time_min']:>11.2f} "
                         f"{r['energy_improvement_pct']:>12.1f}% {r['trip_time_change_pct']:>10.1f}%")
        return "\n".join(lines)


def run_plan(cfg: ExperimentConfig, gammas: Sequence[float] | None = None,
             gmap: GradeMap | None = None) -> PlanReport:
    """DP plans for each gamma next to the bounds-following reference profile."""
    gmap = gmap if gmap is not None else build_map(cfg)
    route = build_route(cfg, gmap)
    if gammas is None:
        gammas = [cfg.planner().gamma]
    plans = {"v_max": bounds_following_plan(route, cfg.vehicle(), _u_bounds(cfg))}
    for g in gammas:
        plans[f"gamma={g:g}"] = make_plan(cfg, gmap, route, g)
    return PlanReport(plans)


def _localizer(cfg: ExperimentConfig, spec: str, gmap: GradeMap):
    return make_localizer(spec, gmap, cfg.ekf(), cfg.noise(), cfg.vehicle().T_s)


def run_closed_loop(cfg: ExperimentConfig, localizer: str | None = None, plan: VelocityPlan | None = None,
                    gmap: GradeMap | None = None, segment: Sequence[float] | None = None) -> ClosedLoopLog:
    gmap = gmap if gmap is not None else build_map(cfg)
    plan = plan if plan is not None else make_plan(cfg, gmap)
    exp = cfg.section("experiment")
    spec = localizer or exp.get("localizer", "truth")
    a, b = (None, None) if segment is None else (float(segment[0]), float(segment[1]))
    return closed_loop(cfg.vehicle(), cfg.mpc(), plan, gmap, _localizer(cfg, spec, gmap),
                       float(exp.get("duration", 3600.0)), s_start=a, s_end=b)


@dataclass
class EnergyOffsetReport:
    offset_m: float
    segment: tuple[float, float]
    truth: ClosedLoopLog
    offset: ClosedLoopLog

    @property
    def energy_truth(self) -> float:
        return self.truth.energy_kwh

    @property
    def energy_offset(self) -> float:
        return self.offset.energy_kwh

    @property
    def increase_pct(self) -> float:
        return 100.0 * (self.energy_offset / self.energy_truth - 1.0)

    def to_dict(self) -> dict:
        return {"kind": "energy_offset", "offset_m": self.offset_m, "segment": list(self.segment),
                "energy_truth_kwh": self.energy_truth, "energy_offset_kwh": self.energy_offset,
                "increase_pct": self.increase_pct}

    def to_text(self) -> str:
        return _energy_offset_text(self.to_dict())


def _energy_offset_text(d: dict) -> str:
    a, b = d["segment"]
    ahead = f"{d['offset_m']:g} m ahead"
    return "\n".join([
        f"segment {a:.0f}-{b:.0f} m, localizer offset {d['offset_m']:+.0f} m",
        f"{'position':<22} {'energy [kWh]':>13}",
        f"{'true position':<22} {d['energy_truth_kwh']:>13.4f}",
        f"{ahead:<22} {d['energy_offset_kwh']:>13.4f}",
        f"increase: {d['increase_pct']:.1f}%"])


def run_energy_vs_offset(cfg: ExperimentConfig, offset_m: float | None = None,
                         segment: Sequence[float] | None = None, plan: VelocityPlan | None = None,
                         gmap: GradeMap | None = None) -> EnergyOffsetReport:
    """Closed-loop energy on a segment with true vs. offset position feedback."""
    exp = cfg.section("experiment")
    offset = float(exp.get("offset_m", 60.0) if offset_m is None else offset_m)
    seg = tuple(float(x) for x in (segment if segment is not None else exp.get("segment", [0.0, 1000.0])))
    gmap = gmap if gmap is not None else build_map(cfg)
    plan = plan if plan is not None else make_plan(cfg, gmap)
    runs = [run_closed_loop(cfg, spec, plan, gmap, seg) for spec in ("truth", f"offset:{offset:g}")]
    return EnergyOffsetReport(offset, seg, *runs)


def save_report(report, json_path, text_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, default=float)
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")


def render_report_json(data: dict) -> str:
    """Text table for a JSON report written by :func:`save_report`."""
    kind = data.get("kind")
    if kind == "localization":
        runs = [LocalizationRun(**{k: v for k, v in r.items() if not k.startswith("final_pct")})
                for r in data["runs"]]
        return LocalizationReport(runs, data.get("meta", {})).to_text()
    if kind == "plan":
        lines = [f"{'profile':<14} {'energy [kWh]':>13} {'trip [min]':>11} {'energy impr.':>13} {'time impr.':>11}"]
        for r in data["rows"]:
            lines.append(f"{r['profile']:<14} {r['energy_kwh']:>13.3f} {r['trip_time_min']:>11.2f} "
                         f"{r['energy_improvement_pct']:>12.1f}% {r['trip_time_change_pct']:>10.1f}%")
        return "\n".join(lines)
    if kind == "energy_offset":
        return _energy_offset_text(data)
    if "energy_kwh" in data:
        return "\n".join(f"{k}: {v}" for k, v in data.items())
    raise ValueError(f"unrecognized report kind {kind!r}")
