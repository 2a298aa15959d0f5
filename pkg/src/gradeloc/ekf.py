"""Grade-map-aided EKF for longitudinal position and velocity.

State x = [s, v]. Prediction integrates the gravity-compensated accelerometer,
the update fuses wheel speed with the inclination measured from the sensors
against the inclination the map predicts at the estimated position.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grade_map import GradeMap
from .sensors import Inclination, SensorTrace, inclination_from_sensors
from .vehicle import G

# 1 - p**2 floor for the asin derivative
_ASIN_GUARD = 1e-6


class SingularInnovation(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EkfConfig:
    q: float = 0.0025
    r_v: float = 0.01
    r_theta: float = 1e-4
    p0: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.25]))
    g: float = G

    def __post_init__(self):
        if not (self.q > 0 and self.r_v > 0 and self.r_theta > 0):
            raise ValueError("q, r_v and r_theta must be > 0")
        p0 = np.asarray(self.p0, dtype=float)
        if p0.shape != (2, 2) or not np.allclose(p0, p0.T) or np.min(np.linalg.eigvalsh(p0)) < -1e-12:
            raise ValueError("p0 must be a symmetric PSD 2x2 matrix")
        object.__setattr__(self, "p0", p0)

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.r_v, self.r_theta])


@dataclass(frozen=True)
class EkfEstimate:
    mean: np.ndarray
    cov: np.ndarray
    innovation: np.ndarray | None = None
    innovation_cov: np.ndarray | None = None

    @property
    def s(self) -> float:
        return float(self.mean[0])

    @property
    def v(self) -> float:
        return float(self.mean[1])

    @property
    def nis(self) -> float:
        if self.innovation is None:
            return float("nan")
        return float(self.innovation @ np.linalg.solve(self.innovation_cov, self.innovation))

    def is_psd(self, tol: float = 1e-10) -> bool:
        return bool(np.allclose(self.cov, self.cov.T, atol=1e-12) and np.min(np.linalg.eigvalsh(self.cov)) >= -tol)


def initial_estimate(s0: float, v0: float, cfg: EkfConfig) -> EkfEstimate:
    return EkfEstimate(np.array([s0, v0], dtype=float), cfg.p0.copy())


def process_model(x: np.ndarray, a_sensor: float, dt: float, gmap: GradeMap, g: float = G) -> np.ndarray:
    s, v = x
    return np.array([s + v * dt, v + (a_sensor - g * gmap.grade_at(s)) * dt])


def process_jacobian(x: np.ndarray, dt: float, gmap: GradeMap, g: float = G) -> np.ndarray:
    return np.array([[1.0, dt], [-g * gmap.grade_slope_at(x[0]) * dt, 1.0]])


def measurement_model(x: np.ndarray, gmap: GradeMap) -> np.ndarray:
    return np.array([x[1], np.arcsin(gmap.grade_at(x[0]))])


def measurement_jacobian(x: np.ndarray, gmap: GradeMap) -> np.ndarray:
    p = gmap.grade_at(x[0])
    denom = np.sqrt(max(1.0 - p * p, _ASIN_GUARD))
    return np.array([[0.0, 1.0], [gmap.grade_slope_at(x[0]) / denom, 0.0]])


def _cond_sym2(S: np.ndarray) -> float:
    # eigenvalues of a symmetric 2x2 in closed form
    half_tr = 0.5 * (S[0, 0] + S[1, 1])
    r = np.hypot(0.5 * (S[0, 0] - S[1, 1]), S[0, 1])
    lo, hi = abs(half_tr - r), abs(half_tr + r)
    return float(hi / lo) if lo > 0 else np.inf


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(est: EkfEstimate, a_sensor: float, dt: float, gmap: GradeMap, cfg: EkfConfig) -> EkfEstimate:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    F = process_jacobian(est.mean, dt, gmap, cfg.g)
    Gn = np.array([0.0, dt])
    P = F @ est.cov @ F.T + cfg.q * np.outer(Gn, Gn)
    return EkfEstimate(process_model(est.mean, a_sensor, dt, gmap, cfg.g), _sym(P))


def update(est: EkfEstimate, v_m: float, theta_m: float, gmap: GradeMap, cfg: EkfConfig) -> EkfEstimate:
    """Measurement update with Joseph-form covariance.

    Raises ``SingularInnovation`` when the innovation covariance cannot be
    inverted; callers may skip the update in that case.
    """
    x, P = est.mean, est.cov
    H = measurement_jacobian(x, gmap)
    y = np.array([v_m, theta_m]) - measurement_model(x, gmap)
    S = _sym(H @ P @ H.T + cfg.R)
    cond = _cond_sym2(S)
    if cond > 1e12:
        raise SingularInnovation(f"innovation covariance is singular (cond={cond:.3g})")
    K = np.linalg.solve(S, H @ P).T
    I_KH = np.eye(2) - K @ H
    P_new = I_KH @ P @ I_KH.T + K @ cfg.R @ K.T
    return EkfEstimate(x + K @ y, _sym(P_new), y, S)


@dataclass
class FilterRun:
    estimates: list[EkfEstimate]
    inclination: Inclination
    skipped_updates: int = 0

    @property
    def s_hat(self) -> np.ndarray:
        return np.array([e.s for e in self.estimates])

    @property
    def v_hat(self) -> np.ndarray:
        return np.array([e.v for e in self.estimates])

    @property
    def nis(self) -> np.ndarray:
        return np.array([e.nis for e in self.estimates])

    def __len__(self):
        return len(self.estimates)

    def __getitem__(self, k):
        return self.estimates[k]


def run_filter(trace: SensorTrace, gmap: GradeMap, cfg: EkfConfig, init: EkfEstimate,
               theta_m: Sequence[float] | Inclination | None = None, *,
               filter_alpha: float = 0.2, diff_mode: str = "central", skip_singular: bool = True) -> FilterRun:
    """Filter a whole trace.

    Sample k is processed as update(wheel_speed[k], theta_m[k]) followed by
    predict(accel[k]); output k is the posterior after the update at k.
    ``theta_m`` defaults to the inclination derived from the trace itself.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    if theta_m is None:
        incl = inclination_from_sensors(trace, filter_alpha, diff_mode)
    elif isinstance(theta_m, Inclination):
        incl = theta_m
    else:
        incl = Inclination(np.asarray(theta_m, dtype=float))
    if len(incl) != len(trace):
        raise ValueError("inclination series length differs from trace length")
    out = []
    skipped = 0
    est = init
    for k in range(len(trace)):
        try:
            est = update(est, trace.wheel_speed[k], incl.theta[k], gmap, cfg)
        except SingularInnovation:
            if not skip_singular:
                raise
            skipped += 1
        out.append(est)
        est = predict(est, trace.accel[k], trace.dt, gmap, cfg)
    return FilterRun(out, incl, skipped)


def integrate_velocity(trace: SensorTrace, s0: float = 0.0) -> np.ndarray:
    """Dead-reckoned position, s[k] = s0 + dt * sum(wheel_speed[:k])."""
    return s0 + trace.dt * np.concatenate([[0.0], np.cumsum(trace.wheel_speed[:-1])])


def save_estimates_csv(run: FilterRun, trace: SensorTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "s_hat_m", "v_hat_mps", "p11", "p12", "p22", "nis"])
        for t, e in zip(trace.time, run.estimates):
            w.writerow([f"{t:.6f}", f"{e.s:.9g}", f"{e.v:.9g}", f"{e.cov[0, 0]:.9g}",
                        f"{e.cov[0, 1]:.9g}", f"{e.cov[1, 1]:.9g}", f"{e.nis:.9g}"])
