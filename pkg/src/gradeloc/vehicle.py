"""Longitudinal point-mass vehicle model.

One force model is shared by the planner (spatial discretization), the MPC
prediction model and the closed-loop plant (time discretization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

G = 9.81
J_PER_KWH = 3.6e6


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1360.0
    A_f: float = 2.30
    rho: float = 1.225
    C_d: float = 0.24
    C_r: float = 0.01
    g: float = G
    T_s: float = 0.2

    def __post_init__(self):
        for name in ("m", "A_f", "rho", "C_d", "C_r", "g", "T_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle parameter {name} must be > 0")

    @property
    def drag_coeff(self) -> float:
        """Lumped 0.5*rho*C_d*A_f, so that airdrag = drag_coeff * v**2."""
        return 0.5 * self.rho * self.C_d * self.A_f

    def perturbed(self, **scale) -> "VehicleParams":
        """Copy with selected parameters multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * f for k, f in scale.items()})


class ForceBreakdown(NamedTuple):
    u: float
    airdrag: float
    rolling: float
    gravity: float
    total: float


def resistance(v, theta, p: VehicleParams):
    """airdrag + rolling + gravity (N); vectorized over v and theta."""
    return p.drag_coeff * v * v + p.m * p.g * (p.C_r * np.cos(theta) + np.sin(theta))


def forces(v: float, theta: float, u: float, p: VehicleParams) -> ForceBreakdown:
    if v < 0:
        raise ValueError("v must be >= 0")
    airdrag = p.drag_coeff * v * v
    rolling = p.m * p.g * p.C_r * math.cos(theta)
    gravity = p.m * p.g * math.sin(theta)
    return ForceBreakdown(u, airdrag, rolling, gravity, u - airdrag - rolling - gravity)


def total_force(v, theta, u, p: VehicleParams):
    return u - resistance(v, theta, p)


def step_time(v: float, theta: float, u: float, p: VehicleParams, dt: float) -> float:
    """Forward-Euler velocity update over ``dt`` seconds.

    The result is clamped at zero, so a stopped vehicle stays stopped unless
    ``u`` exceeds rolling resistance plus gravity (no backward roll-off).
    """
    f = u - resistance(v, theta, p)
    return max(0.0, v + dt * f / p.m)


def step_time_vec(v, theta, u, p: VehicleParams, dt: float):
    """Vectorized ``step_time`` for arrays of states/inputs."""
    return np.maximum(0.0, v + dt * (u - resistance(v, theta, p)) / p.m)


def step_spatial(v: float, theta: float, u: float, p: VehicleParams, ds: float) -> tuple[float, bool]:
    """Constant-acceleration velocity update over ``ds`` metres.

    Returns ``(v_next, clamped)`` where ``clamped`` flags a negative radicand,
    i.e. the vehicle comes to rest inside the cell.
    """
    rad = v * v + 2.0 * ds * (u - resistance(v, theta, p)) / p.m
    if rad < 0.0:
        return 0.0, True
    return math.sqrt(rad), False


def step_spatial_vec(v, theta, u, p: VehicleParams, ds: float):
    rad = v * v + 2.0 * ds * (u - resistance(v, theta, p)) / p.m
    return np.sqrt(np.maximum(rad, 0.0)), rad < 0.0


def wheel_power(v, u):
    """Positive wheel power v * max(u, 0) in W."""
    out = np.asarray(v, dtype=float) * np.maximum(u, 0.0)
    return float(out) if out.ndim == 0 else out


def trip_energy(u, ds) -> float:
    """Positive wheel work over spatial segments, in kWh.

    ``u`` holds the input applied on each segment and ``ds`` the segment
    lengths (scalar or per-segment).
    """
    u = np.asarray(u, dtype=float)
    work = np.sum(np.maximum(u, 0.0) * np.broadcast_to(ds, u.shape))
    return float(work) / J_PER_KWH


def trip_energy_time(v, u, dt) -> float:
    """Positive wheel work from a time-sampled log, sum(power * dt) in kWh."""
    return float(np.sum(wheel_power(np.asarray(v, float), np.asarray(u, float)) * dt)) / J_PER_KWH


def cell_time(v0, v1, ds):
    """Time to cover ``ds`` with constant acceleration from v0 to v1."""
    vsum = np.asarray(v0, float) + np.asarray(v1, float)
    with np.errstate(divide="ignore"):
        return np.where(vsum > 0, 2.0 * ds / np.where(vsum > 0, vsum, 1.0), np.inf)
