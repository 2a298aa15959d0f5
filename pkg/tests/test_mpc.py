import numpy as np
import pytest

from gradeloc.ekf import EkfConfig
from gradeloc.grade_map import GradeMap, sinusoid_road
from gradeloc.mpc import (EkfLocalizer, HorizonPreview, MpcConfig, OffsetLocalizer, TruthLocalizer,
                          build_preview, closed_loop, enumerate_oracle, load_log_csv, make_localizer,
                          objective, rollout, solve)
from gradeloc.planner import PlannerConfig, RouteProfile, VelocityPlan, plan_route
from gradeloc.sensors import NoiseSpec
from gradeloc.vehicle import VehicleParams, resistance, step_time, trip_energy_time

P = VehicleParams()


def static_preview(n, v_ref, theta=0.0):
    return HorizonPreview(np.zeros(n + 1), np.full(n + 1, float(v_ref)), np.full(n + 1, float(theta)))


@pytest.fixture(scope="module")
def short_route():
    gmap = sinusoid_road(1500.0, [0.04], [500.0])
    route = RouteProfile.build(gmap, 1500.0, 10.0, 14.0)
    return gmap, plan_route(route, P, PlannerConfig(10.0))


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(u_min=10.0, u_max=0.0)


def test_preview_positions_and_sampling(short_route):
    gmap, plan = short_route
    cfg = MpcConfig()
    pv = build_preview(100.0, 10.0, plan, gmap, cfg)
    np.testing.assert_array_equal(pv.positions, 100.0 + np.arange(6) * 2.0)
    np.testing.assert_allclose(pv.theta, np.arcsin(gmap.grade_at(pv.positions)))
    np.testing.assert_allclose(pv.v_ref, plan.v_ref_at(pv.positions))
    still = build_preview(100.0, 0.0, plan, gmap, cfg)
    np.testing.assert_array_equal(still.positions, 100.0)
    with pytest.raises(ValueError):
        build_preview(0.0, -1.0, plan, gmap, cfg)


def test_preview_past_route_end_is_zero(short_route):
    gmap, plan = short_route
    pv = build_preview(plan.arc[-1] - 3.0, 10.0, plan, gmap, MpcConfig())
    assert np.all(pv.v_ref[2:] == 0.0)
    assert np.all(np.isfinite(pv.theta))


def test_preview_constant_plan_and_map_ignores_speed():
    gmap = GradeMap([0.0, 1000.0], [0.02, 0.02])
    arc = np.arange(0.0, 1001.0, 10.0)
    plan = VelocityPlan(arc, np.full(arc.size, 12.0), np.zeros(100), np.zeros(101), np.zeros(100), 0.0, 0.0)
    a = build_preview(500.0, 5.0, plan, gmap, MpcConfig())
    b = build_preview(500.0, 20.0, plan, gmap, MpcConfig())
    np.testing.assert_array_equal(a.v_ref, 12.0)
    np.testing.assert_array_equal(a.v_ref, b.v_ref)
    np.testing.assert_allclose(a.theta, np.arcsin(0.02))
    np.testing.assert_array_equal(a.theta, b.theta)


@pytest.mark.parametrize("v0,ref,theta,gamma", [(10.0, 10.5, 0.02, 1e-5), (10.0, 9.0, 0.0, 1e-5),
                                                (5.0, 5.0, 0.05, 1e-3), (10.0, 14.0, 0.0, 1e-5)])
def test_single_step_matches_closed_form(v0, ref, theta, gamma):
    cfg = MpcConfig(horizon=1, gamma=gamma)
    # v1 - ref = b + c u with c = dt/m; cost w (b + c u)^2 + gamma u^2, clamped stationary point
    c = cfg.dt / P.m
    b = v0 - c * resistance(v0, theta, P) - ref
    w = 1.0 + cfg.terminal_weight
    u_star = float(np.clip(-w * b * c / (w * c * c + gamma), cfg.u_min, cfg.u_max))
    sol = solve(v0, static_preview(1, ref, theta), P, cfg)
    assert sol.u0 == pytest.approx(u_star, abs=1e-9 * max(1.0, abs(u_star)))
    assert sol.cost == pytest.approx(w * (b + c * u_star) ** 2 + gamma * u_star**2, rel=1e-9)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_solver_within_oracle(n):
    rng = np.random.default_rng(n)
    cfg = MpcConfig(horizon=n, gamma=1e-5)
    for _ in range(4):
        v0 = rng.uniform(3.0, 20.0)
        pv = HorizonPreview(np.zeros(n + 1), rng.uniform(3.0, 20.0, n + 1), rng.uniform(-0.06, 0.06, n + 1))
        sol = solve(v0, pv, P, cfg)
        ora = enumerate_oracle(v0, pv, P, cfg, 201 if n < 3 else 101)
        assert sol.cost <= ora.cost * 1.001 + 1e-12


def test_equilibrium_reference():
    # with a negligible input weight the optimum holds speed exactly
    cfg = MpcConfig(horizon=3, gamma=1e-12)
    u_eq = resistance(15.0, 0.0, P)
    sol = solve(15.0, static_preview(3, 15.0), P, cfg)
    np.testing.assert_allclose(sol.u, u_eq, rtol=1e-3)
    np.testing.assert_allclose(sol.v, 15.0, atol=1e-4)


def test_huge_gamma_coasts():
    sol = solve(10.0, static_preview(5, 20.0), P, MpcConfig(gamma=1e6))
    assert np.max(np.abs(sol.u)) < 1.0


def test_inputs_within_bounds_and_infeasible_flag():
    cfg = MpcConfig(u_min=-100.0, v_max=10.0)
    # steep descent: the weak brake cannot hold the speed cap
    sol = solve(10.0, static_preview(5, 10.0, -0.3), P, cfg)
    assert not sol.feasible
    assert np.all((sol.u >= cfg.u_min) & (sol.u <= cfg.u_max))
    ok = solve(10.0, static_preview(5, 10.0, 0.0), P, MpcConfig())
    assert ok.feasible


def test_objective_and_rollout_agree():
    cfg = MpcConfig(horizon=3)
    u = np.array([500.0, 0.0, -400.0])
    th = np.array([0.01, 0.0, -0.01, 0.0])
    v = rollout(10.0, u, th, P, cfg.dt)
    assert v[1] == pytest.approx(step_time(10.0, 0.01, 500.0, P, cfg.dt))
    ref = np.full(4, 10.0)
    e = v[1:] - 10.0
    assert objective(u, v, ref, cfg) == pytest.approx(e @ e + cfg.gamma * u @ u + cfg.terminal_weight * e[-1] ** 2)


def test_receding_horizon_cost_does_not_increase():
    cfg = MpcConfig()
    pv = static_preview(5, 12.0, 0.02)
    v, warm, prev = 9.0, None, None
    for _ in range(40):
        sol = solve(v, pv, P, cfg, warm)
        if prev is not None:
            assert sol.cost <= prev + 1e-6
        prev = sol.cost
        warm = np.append(sol.u[1:], sol.u[-1])
        v = step_time(v, 0.02, sol.u0, P, cfg.dt)


def test_localizers():
    t = TruthLocalizer()
    assert t.locate(12.0, 3.0) == 12.0
    o = make_localizer("offset:60")
    assert isinstance(o, OffsetLocalizer) and o.locate(12.0, 3.0) == 72.0
    with pytest.raises(ValueError):
        make_localizer("gps")
    with pytest.raises(ValueError):
        make_localizer("ekf")


def test_closed_loop_truth_tracks_plan(short_route, tmp_path):
    gmap, plan = short_route
    cfg = MpcConfig()
    log = closed_loop(P, cfg, plan, gmap, "truth")
    assert log.s_true[-1] > plan.arc[-1] - 1.0
    assert log.tracking_rmse() < 0.02 * np.mean(log.v_ref)
    assert np.all((log.u >= cfg.u_min) & (log.u <= cfg.u_max))
    assert log.energy_kwh == pytest.approx(trip_energy_time(log.v, log.u, log.dt), rel=1e-12)
    # plan and closed loop agree on the wheel energy to within a few percent
    assert log.energy_kwh == pytest.approx(plan.energy_kwh, rel=0.05)
    log.save(tmp_path / "log.csv", tmp_path / "log.json")
    back = load_log_csv(tmp_path / "log.csv")
    np.testing.assert_allclose(back.v, log.v)
    assert back.dt == pytest.approx(log.dt)


def test_closed_loop_zero_offset_matches_truth(short_route):
    gmap, plan = short_route
    cfg = MpcConfig()
    a = closed_loop(P, cfg, plan, gmap, "truth", s_start=400.0, s_end=700.0)
    b = closed_loop(P, cfg, plan, gmap, "offset:0", s_start=400.0, s_end=700.0)
    assert a.energy_kwh == b.energy_kwh
    assert a.s_true[0] == 400.0


def test_closed_loop_with_ekf_localizer(short_route):
    gmap, plan = short_route
    loc = EkfLocalizer(gmap, EkfConfig(r_v=0.09, r_theta=4e-6), NoiseSpec(sigma_v=0.3, sigma_theta=0.002, seed=1),
                       0.2)
    log = closed_loop(P, MpcConfig(), plan, gmap, loc, s_start=300.0, s_end=900.0)
    assert np.sqrt(np.mean((log.s_hat - log.s_true) ** 2)) < 1.0
    assert log.meta["localizer"] == "ekf"


def test_closed_loop_rejects_mismatched_dt(short_route):
    gmap, plan = short_route
    with pytest.raises(ValueError):
        closed_loop(P, MpcConfig(dt=0.1), plan, gmap, "truth")
