"""TOML experiment configuration and named presets.

A config file has the sections ``[map] [noise] [ekf] [vehicle] [planner]
[mpc] [experiment]``. A file may name a ``preset`` at top level; its own
values are then merged over that preset section by section.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ekf import EkfConfig
from .mpc import MpcConfig
from .planner import PlannerConfig
from .sensors import NoiseSpec
from .vehicle import VehicleParams

SECTIONS = ("map", "noise", "ekf", "vehicle", "planner", "mpc", "experiment")
SCENARIOS = ("localization_mc", "plan", "closed_loop", "energy_vs_offset")


class ConfigError(ValueError):
    pass


# Chebyshev coefficients (on [0, length] mapped to [-1, 1]) of the altitude, in
# metres, of the 1 km stand-in road: five crests, grade within about +-0.1.
_HILLY_1KM_CHEB = [
    0.4001, -0.6522, 0.6983, -0.4624, 0.2129, 0.0072, -0.4931, 0.708,
    0.6537, 0.9997, -0.5, -0.0943, -0.2868, -1.2053, 0.5339, 1.0547,
    -0.3154, -0.466, 0.1108, 0.1349, -0.0271, -0.0284, 0.005, 0.0046,
    -0.0007, -0.0006, 0.0001, 0.0001, -0.0,
]

PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    # ~1 km polynomial road, ten seeds; dead-reckoning RMSE lands in 0.5-1.2 m
    "table1_calibrated": {
        "map": {"kind": "polynomial", "basis": "chebyshev", "coeffs": _HILLY_1KM_CHEB,
                "length": 1000.0, "ds": 1.0},
        "noise": {"sigma_v": 0.3, "sigma_theta": 0.002, "accel_noise_std": 0.05, "bias_rate": 0.0,
                  "process_noise_q": 0.0025, "seed": 0, "inclination": "direct",
                  "filter_alpha": 0.2, "diff_mode": "central"},
        "ekf": {"q": 0.0025, "r_v": 0.09, "r_theta": 4e-6, "p0_s": 1.0, "p0_v": 0.25},
        "experiment": {"scenario": "localization_mc", "n_runs": 10, "seeds": list(range(10)),
                       "dt": 0.1, "duration": 100.0, "v0": 9.0, "accel_amplitude": 0.3,
                       "accel_period": 40.0, "init_offset": False},
    },
    # long sinusoidal hill road for drift growth / final-error checks
    "drift_long": {
        "map": {"kind": "sinusoid", "length": 7000.0, "ds": 1.0,
                "amplitudes": [0.09, 0.04], "wavelengths": [180.0, 530.0], "phases": [0.3, 1.1]},
        "noise": {"sigma_v": 0.3, "sigma_theta": 0.002, "accel_noise_std": 0.05, "bias_rate": 0.0,
                  "process_noise_q": 0.0025, "seed": 0, "inclination": "direct",
                  "filter_alpha": 0.2, "diff_mode": "central"},
        "ekf": {"q": 0.0025, "r_v": 0.09, "r_theta": 4e-6, "p0_s": 0.01, "p0_v": 0.25},
        "experiment": {"scenario": "localization_mc", "n_runs": 20, "seeds": list(range(20)),
                       "dt": 0.1, "duration": 500.0, "v0": 11.0, "accel_amplitude": 0.3,
                       "accel_period": 60.0, "init_offset": False},
    },
    # 5 km route with rolling hills and three speed-limit zones
    "dp_route": {
        "map": {"kind": "sinusoid", "length": 5000.0, "ds": 1.0,
                "amplitudes": [0.04, 0.02], "wavelengths": [900.0, 370.0], "phases": [0.0, 1.0]},
        "planner": {"gamma": 10.0, "n_v": 41, "n_u": 25, "ds": 10.0, "u_min": -3000.0, "u_max": 3000.0,
                    "ramp_accel": 0.5, "v_max_profile": [[0.0, 15.0], [1499.0, 15.0], [1500.0, 20.0],
                                                         [3499.0, 20.0], [3500.0, 12.0], [5000.0, 12.0]]},
        "mpc": {"horizon": 5, "gamma": 1e-5, "terminal_weight": 1e3, "u_min": -3000.0, "u_max": 3000.0,
                "v_min": 0.0, "v_max": 25.0, "launch_speed": 1.0},
        "experiment": {"scenario": "closed_loop", "localizer": "truth", "duration": 3600.0,
                       "offset_m": 60.0, "segment": [2000.0, 3000.0]},
    },
}
PRESETS["energy_offset"] = copy.deepcopy(PRESETS["dp_route"])
PRESETS["energy_offset"]["experiment"]["scenario"] = "energy_vs_offset"


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Parsed config: raw sections plus typed accessors."""

    sections: dict[str, dict[str, Any]] = field(default_factory=dict)
    source: str | None = None

    def section(self, name: str) -> dict[str, Any]:
        return self.sections.get(name, {})

    @property
    def scenario(self) -> str:
        return self.section("experiment").get("scenario", "localization_mc")

    @property
    def seeds(self) -> list[int]:
        exp = self.section("experiment")
        n = int(exp.get("n_runs", 1))
        seeds = list(exp.get("seeds", []))
        if len(seeds) < n:
            start = seeds[-1] + 1 if seeds else int(self.section("noise").get("seed", 0))
            seeds += list(range(start, start + n - len(seeds)))
        return [int(s) for s in seeds[:n]]

    def with_overrides(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig(_merge(self.sections, sections), self.source)

    def noise(self, seed: int | None = None) -> NoiseSpec:
        sec = self.section("noise")
        keys = ("sigma_v", "sigma_theta", "accel_noise_std", "bias_rate", "process_noise_q", "seed")
        spec = NoiseSpec(**{k: sec[k] for k in keys if k in sec})
        if seed is not None:
            spec = NoiseSpec(**{**spec.__dict__, "seed": int(seed)})
        return spec

    def ekf(self) -> EkfConfig:
        sec = self.section("ekf")
        p0 = np.diag([float(sec.get("p0_s", 1.0)), float(sec.get("p0_v", 0.25))])
        return EkfConfig(q=float(sec.get("q", 0.0025)), r_v=float(sec.get("r_v", 0.01)),
                         r_theta=float(sec.get("r_theta", 1e-4)), p0=p0)

    def vehicle(self) -> VehicleParams:
        sec = self.section("vehicle")
        keys = ("m", "A_f", "rho", "C_d", "C_r", "g", "T_s")
        return VehicleParams(**{k: float(sec[k]) for k in keys if k in sec})

    def planner(self) -> PlannerConfig:
        sec = self.section("planner")
        return PlannerConfig(gamma=float(sec.get("gamma", 10.0)), n_v=int(sec.get("n_v", 41)),
                             n_u=int(sec.get("n_u", 25)))

    def mpc(self) -> MpcConfig:
        sec = self.section("mpc")
        keys = ("horizon", "gamma", "terminal_weight", "u_min", "u_max", "v_min", "v_max", "launch_speed")
        kw = {k: sec[k] for k in keys if k in sec}
        return MpcConfig(dt=self.vehicle().T_s, **kw)

    def validate(self) -> None:
        unknown = [k for k in self.sections if k not in SECTIONS]
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if int(self.section("experiment").get("n_runs", 1)) < 1:
            raise ConfigError("n_runs must be >= 1")
        required = {"localization_mc": ("map",), "plan": ("map", "planner"),
                    "closed_loop": ("map", "planner"), "energy_vs_offset": ("map", "planner")}
        missing = [s for s in required[self.scenario] if s not in self.sections]
        if missing:
            raise ConfigError(f"scenario {self.scenario} needs section(s): {', '.join(missing)}")
        try:
            self.noise()
            self.ekf()
            self.vehicle()
            self.planner()
            self.mpc()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return ExperimentConfig(copy.deepcopy(PRESETS[name]), f"preset:{name}")


def load_config(path: str | Path | None = None, preset_name: str | None = None) -> ExperimentConfig:
    """Load a TOML config, layered over a preset when one is named."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    name = preset_name or data.pop("preset", None)
    data.pop("preset", None)
    base = preset(name).sections if name else {}
    cfg = ExperimentConfig(_merge(base, data), str(path) if path else f"preset:{name}")
    cfg.validate()
    return cfg
