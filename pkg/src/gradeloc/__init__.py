"""Grade-map-aided longitudinal localization and eco-driving speed control.

Modules: ``grade_map`` (road grade maps), ``sensors`` (sensor simulation and
inclination), ``ekf`` (position/velocity filter), ``vehicle`` (force model),
``planner`` (DP speed planning), ``mpc`` (speed tracking and closed loop),
``harness`` (experiments) and ``cli``.
"""

from .ekf import EkfConfig, EkfEstimate, run_filter
from .grade_map import GradeMap, polynomial_road, sinusoid_road
from .mpc import MpcConfig, closed_loop
from .planner import PlannerConfig, RouteProfile, backward_sweep, forward_rollout, plan_route
from .sensors import NoiseSpec, synthesize_sensors
from .vehicle import VehicleParams

__version__ = "0.1.0"

__all__ = [
    "EkfConfig", "EkfEstimate", "run_filter", "GradeMap", "polynomial_road", "sinusoid_road",
    "MpcConfig", "closed_loop", "PlannerConfig", "RouteProfile", "backward_sweep", "forward_rollout",
    "plan_route", "NoiseSpec", "synthesize_sensors", "VehicleParams",
]
