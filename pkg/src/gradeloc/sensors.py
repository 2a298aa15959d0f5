"""Synthetic wheel-speed/accelerometer traces, filtering and bias handling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grade_map import GradeMap
from .vehicle import G

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_v: float = 0.1
    sigma_theta: float = 0.01
    accel_noise_std: float = 0.05
    bias_rate: float = 0.0
    process_noise_q: float = 0.0025
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_v", "sigma_theta", "accel_noise_std", "process_noise_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def noiseless(self) -> "NoiseSpec":
        return replace(self, sigma_v=0.0, accel_noise_std=0.0, bias_rate=0.0)


@dataclass(frozen=True)
class GroundTruth:
    dt: float
    position: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray

    def __len__(self):
        return self.position.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def check_consistency(self, tol: float = 1e-9) -> bool:
        """True when the samples satisfy the forward-Euler kinematics."""
        ds = self.position[1:] - (self.position[:-1] + self.velocity[:-1] * self.dt)
        dv = self.velocity[1:] - (self.velocity[:-1] + self.accel[:-1] * self.dt)
        scale = max(1.0, float(np.max(np.abs(self.position))))
        return bool(np.all(np.abs(ds) <= tol * scale) and np.all(np.abs(dv) <= tol * scale))


@dataclass(frozen=True)
class SensorTrace:
    dt: float
    wheel_speed: np.ndarray
    accel: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        ws = np.asarray(self.wheel_speed, dtype=float)
        acc = np.asarray(self.accel, dtype=float)
        if ws.shape != acc.shape or ws.ndim != 1:
            raise ValueError("wheel_speed and accel must be 1-D and equally long")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not (np.all(np.isfinite(ws)) and np.all(np.isfinite(acc))):
            raise ValueError("trace contains non-finite samples")
        object.__setattr__(self, "wheel_speed", ws)
        object.__setattr__(self, "accel", acc)

    def __len__(self):
        return self.wheel_speed.size

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt


@dataclass
class Inclination:
    """Measured inclination with clamp bookkeeping."""

    theta: np.ndarray
    clamp_count: int = 0
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return self.theta.size

    def __getitem__(self, k):
        return self.theta[k]


def simulate_truth(gmap: GradeMap | None, accel_program: Sequence[float], dt: float,
                   v0: float = 0.0, s0: float = 0.0) -> GroundTruth:
    """Forward-Euler integration of s' = v, v' = a.

    Sample k holds the state before ``accel_program[k]`` is applied, so the
    output has one sample per program entry. ``gmap`` is accepted for
    interface symmetry; the kinematics do not depend on the road.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    a = np.asarray(accel_program, dtype=float)
    if a.size == 0:
        raise ValueError("acceleration program is empty")
    n = a.size
    v = np.empty(n)
    s = np.empty(n)
    v[0], s[0] = v0, s0
    for k in range(n - 1):
        v[k + 1] = v[k] + a[k] * dt
        s[k + 1] = s[k] + v[k] * dt
    if np.any(v < -1e-12):
        k = int(np.argmax(v < -1e-12))
        raise ValueError(f"acceleration program drives velocity negative at sample {k}")
    return GroundTruth(dt, s, v, a)


def synthesize_sensors(truth: GroundTruth, gmap: GradeMap, noise: NoiseSpec, t0: float = 0.0) -> SensorTrace:
    """Wheel-speed and accelerometer readings for a ground-truth run.

    The accelerometer sees gravity through the road grade plus a bias that
    grows linearly with time; both channels get white Gaussian noise.
    """
    rng = np.random.default_rng(noise.seed)
    n = len(truth)
    t = t0 + np.arange(n) * truth.dt
    accel = truth.accel + G * gmap.grade_at(truth.position) + noise.bias_rate * t
    wheel = truth.velocity.copy()
    # draw order is fixed so that a seed reproduces the same trace
    accel_noise = rng.normal(0.0, 1.0, n) * noise.accel_noise_std
    wheel_noise = rng.normal(0.0, 1.0, n) * noise.sigma_v
    return SensorTrace(truth.dt, wheel + wheel_noise, accel + accel_noise, t0)


def low_pass(signal: Sequence[float], alpha: float) -> np.ndarray:
    """First-order exponential filter y[k] = a*x[k] + (1-a)*y[k-1], y[0] = x[0]."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(signal, dtype=float)
    if x.size == 0:
        raise ValueError("empty signal")
    if alpha == 1.0:
        return x.copy()
    y = np.empty_like(x)
    y[0] = x[0]
    beta = 1.0 - alpha
    for k in range(1, x.size):
        y[k] = alpha * x[k] + beta * y[k - 1]
    return y


def differentiate(x: np.ndarray, dt: float, mode: str = "central") -> np.ndarray:
    if mode == "central":
        return np.gradient(x, dt, edge_order=1)
    if mode == "backward":
        d = np.empty_like(x)
        d[1:] = np.diff(x) / dt
        d[0] = d[1]
        return d
    raise ValueError(f"unknown differentiation mode {mode!r}")


def inclination_from_sensors(trace: SensorTrace, filter_alpha: float = 0.2, diff_mode: str = "central",
                             max_clamp_fraction: float = 0.01) -> Inclination:
    """Road inclination from the accelerometer minus differentiated wheel speed.

    The wheel speed is low-pass filtered before differentiation. The asin
    argument is clamped to [-1, 1]; the number of clamped samples is reported
    and a warning is attached once it exceeds ``max_clamp_fraction``.
    """
    if len(trace) < 2:
        raise ValueError("trace needs at least 2 samples")
    v_f = low_pass(trace.wheel_speed, filter_alpha)
    vdot = differentiate(v_f, trace.dt, diff_mode)
    ratio = (trace.accel - vdot) / G
    over = np.abs(ratio) > 1.0
    n_clamped = int(np.count_nonzero(over))
    theta = np.arcsin(np.clip(ratio, -1.0, 1.0))
    out = Inclination(theta, n_clamped)
    if n_clamped > max_clamp_fraction * len(trace):
        msg = f"asin argument clamped on {n_clamped}/{len(trace)} samples"
        log.warning(msg)
        out.warnings.append(msg)
    return out


def fit_bias(theta_measured: Sequence[float], theta_reference: Sequence[float], dt: float) -> float:
    """Least-squares drift rate b of e(t) = theta_measured - theta_reference ~ b*t.

    The line passes through the origin, with t measured from the first sample.
    """
    th_m = np.asarray(theta_measured, dtype=float)
    th_r = np.asarray(theta_reference, dtype=float)
    if th_m.shape != th_r.shape or th_m.size < 2:
        raise ValueError("need two equally long series with >= 2 samples")
    t = np.arange(th_m.size) * dt
    tt = float(t @ t)
    if tt == 0.0:
        raise ValueError("all sample times are zero; drift rate is not identifiable")
    return float(t @ (th_m - th_r)) / tt


def fit_bias_stderr(theta_measured, theta_reference, dt: float) -> tuple[float, float]:
    """Drift rate and its standard error from the residual scatter."""
    b = fit_bias(theta_measured, theta_reference, dt)
    e = np.asarray(theta_measured, float) - np.asarray(theta_reference, float)
    t = np.arange(e.size) * dt
    resid = e - b * t
    sigma2 = float(resid @ resid) / max(1, e.size - 1)
    return b, float(np.sqrt(sigma2 / (t @ t)))


def remove_bias(trace: SensorTrace, b: float) -> SensorTrace:
    """Subtract a linear accelerometer drift g*b*t (small-angle form of b*t in rad)."""
    if b == 0.0:
        return trace
    return replace(trace, accel=trace.accel - G * b * trace.time)


def load_trace_csv(path) -> SensorTrace:
    """Read ``t_s,wheel_speed_mps,accel_mps2``; samples must be uniformly spaced."""
    t, ws, acc = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = ["t_s", "wheel_speed_mps", "accel_mps2"]
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t.append(float(row["t_s"]))
                ws.append(float(row["wheel_speed_mps"]))
                acc.append(float(row["accel_mps2"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row") from exc
    if len(t) < 2:
        raise ValueError(f"{path}: need >= 2 samples")
    t = np.array(t)
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * max(1.0, dt):
        raise ValueError(f"{path}: samples are not uniformly spaced in time")
    return SensorTrace(dt, np.array(ws), np.array(acc), float(t[0]))


def save_trace_csv(trace: SensorTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "wheel_speed_mps", "accel_mps2"])
        for row in zip(trace.time, trace.wheel_speed, trace.accel):
            w.writerow([repr(float(x)) for x in row])
