import numpy as np
import pytest

from gradeloc.grade_map import GradeMap, sinusoid_road
from gradeloc.sensors import (NoiseSpec, SensorTrace, differentiate, fit_bias, fit_bias_stderr,
                              inclination_from_sensors, load_trace_csv, low_pass, remove_bias,
                              save_trace_csv, simulate_truth, synthesize_sensors)
from gradeloc.vehicle import G

FLAT = GradeMap([0.0, 1e4], [0.0, 0.0])


def hilly():
    return sinusoid_road(3000.0, [0.06], [300.0])


def test_low_pass_identity_constant_and_step():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(low_pass(x, 1.0), x)
    np.testing.assert_array_equal(low_pass(np.full(5, 2.5), 0.3), 2.5)
    np.testing.assert_allclose(low_pass([0, 1, 1, 1], 0.5), [0.0, 0.5, 0.75, 0.875])


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_low_pass_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        low_pass([1.0, 2.0], alpha)


def test_differentiate_modes():
    x = np.arange(5.0) ** 2
    np.testing.assert_allclose(differentiate(x, 1.0, "central")[1:-1], [2.0, 4.0, 6.0])
    np.testing.assert_allclose(differentiate(x, 1.0, "backward"), [1.0, 1.0, 3.0, 5.0, 7.0])
    with pytest.raises(ValueError):
        differentiate(x, 1.0, "forward")


def test_simulate_truth_is_euler_consistent():
    a = 0.2 * np.sin(np.arange(500) * 0.05)
    tr = simulate_truth(None, a, 0.1, 8.0, 3.0)
    assert len(tr) == 500
    assert tr.position[0] == 3.0
    assert tr.check_consistency()
    with pytest.raises(ValueError, match="negative"):
        simulate_truth(None, np.full(100, -2.0), 0.1, 1.0)


def test_gravity_coupling_noiseless():
    gmap = hilly()
    tr = simulate_truth(gmap, 0.1 * np.sin(np.arange(2000) * 0.01), 0.1, 10.0)
    trace = synthesize_sensors(tr, gmap, NoiseSpec().noiseless())
    np.testing.assert_allclose(trace.accel - tr.accel, G * gmap.grade_at(tr.position), atol=1e-12)
    np.testing.assert_array_equal(trace.wheel_speed, tr.velocity)


def test_synthesize_is_deterministic_per_seed():
    gmap = hilly()
    tr = simulate_truth(gmap, np.zeros(300), 0.1, 10.0)
    a = synthesize_sensors(tr, gmap, NoiseSpec(seed=7))
    b = synthesize_sensors(tr, gmap, NoiseSpec(seed=7))
    c = synthesize_sensors(tr, gmap, NoiseSpec(seed=8))
    np.testing.assert_array_equal(a.wheel_speed, b.wheel_speed)
    np.testing.assert_array_equal(a.accel, b.accel)
    assert not np.array_equal(a.wheel_speed, c.wheel_speed)


def test_inclination_constant_grade_reading():
    trace = SensorTrace(0.1, np.full(50, 10.0), np.full(50, 0.4905))
    incl = inclination_from_sensors(trace)
    np.testing.assert_allclose(incl.theta, np.arcsin(0.05), atol=1e-12)
    assert incl.theta[0] == pytest.approx(0.0500208568, abs=1e-9)
    assert incl.clamp_count == 0


def test_inclination_flat_accelerating_is_zero():
    tr = simulate_truth(FLAT, np.full(400, 0.5), 0.1, 2.0)
    incl = inclination_from_sensors(synthesize_sensors(tr, FLAT, NoiseSpec().noiseless()))
    # the filter lags a ramp by a constant once its start-up transient has decayed
    assert np.max(np.abs(incl.theta[150:-1])) < 1e-9


def test_inclination_recovers_map_at_constant_speed():
    gmap = hilly()
    tr = simulate_truth(gmap, np.zeros(2000), 0.1, 10.0)
    incl = inclination_from_sensors(synthesize_sensors(tr, gmap, NoiseSpec().noiseless()))
    np.testing.assert_allclose(incl.theta, np.arcsin(gmap.grade_at(tr.position)), atol=1e-6)


def test_inclination_clamps_and_counts():
    acc = np.zeros(200)
    acc[100] = 50.0
    incl = inclination_from_sensors(SensorTrace(0.1, np.full(200, 5.0), acc), filter_alpha=1.0,
                                    max_clamp_fraction=0.0)
    assert incl.clamp_count == 1
    assert incl.theta[100] == pytest.approx(np.pi / 2)
    assert incl.warnings


def test_fit_bias_exact_and_zero():
    t = np.arange(100) * 0.1
    assert fit_bias(0.001 * t, np.zeros(100), 0.1) == pytest.approx(0.001, rel=1e-12)
    assert fit_bias(np.zeros(50), np.zeros(50), 0.1) == 0.0
    with pytest.raises(ValueError):
        fit_bias([1.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        fit_bias([1.0, 2.0], [1.0, 2.0], 0.0)


def test_fit_bias_noisy_within_three_standard_errors():
    rng = np.random.default_rng(11)
    t = np.arange(1000) * 0.1
    e = 0.002 * t + rng.normal(0.0, 1e-4, t.size)
    b, se = fit_bias_stderr(e, np.zeros_like(e), 0.1)
    # independent oracle: lstsq through the origin
    ref = np.linalg.lstsq(t[:, None], e, rcond=None)[0][0]
    assert b == pytest.approx(ref, rel=1e-10)
    assert abs(b - 0.002) < 3 * se


def test_remove_bias_cancels_injected_bias():
    gmap = hilly()
    tr = simulate_truth(gmap, np.zeros(500), 0.1, 10.0)
    clean = synthesize_sensors(tr, gmap, NoiseSpec().noiseless())
    # bias_rate acts on the accelerometer (m/s^2 per s); remove_bias takes rad/s
    biased = synthesize_sensors(tr, gmap, NoiseSpec(sigma_v=0.0, accel_noise_std=0.0, bias_rate=0.001))
    np.testing.assert_allclose(remove_bias(biased, 0.001 / G).accel, clean.accel, atol=1e-9)
    assert remove_bias(clean, 0.0) is clean


def test_bias_round_trip_reduces_drift():
    gmap = hilly()
    tr = simulate_truth(gmap, 0.2 * np.sin(np.arange(3000) * 0.02), 0.1, 10.0)
    b = 2e-4
    trace = synthesize_sensors(tr, gmap, NoiseSpec(sigma_v=0.05, accel_noise_std=0.05, bias_rate=b * G, seed=2))
    ref = np.arcsin(gmap.grade_at(tr.position))
    b_hat = fit_bias(inclination_from_sensors(trace).theta, ref, tr.dt)
    assert b_hat == pytest.approx(b, rel=0.05)
    fixed = remove_bias(trace, b_hat)
    residual = fit_bias(inclination_from_sensors(fixed).theta, ref, tr.dt)
    assert abs(residual) < b / 10


def test_trace_csv_round_trip(tmp_path):
    trace = SensorTrace(0.1, np.array([1.0, 1.1, 1.25]), np.array([0.0, -0.5, 0.3]), t0=2.0)
    save_trace_csv(trace, tmp_path / "t.csv")
    back = load_trace_csv(tmp_path / "t.csv")
    assert back.dt == pytest.approx(0.1)
    assert back.t0 == 2.0
    np.testing.assert_array_equal(back.wheel_speed, trace.wheel_speed)
    np.testing.assert_array_equal(back.accel, trace.accel)


def test_trace_csv_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("t_s,wheel_speed_mps,accel_mps2\n0,1,0\n0.1,x,0\n")
    with pytest.raises(ValueError, match=":3"):
        load_trace_csv(p)
    p.write_text("t_s,wheel_speed_mps,accel_mps2\n0,1,0\n0.1,1,0\n0.5,1,0\n")
    with pytest.raises(ValueError, match="uniformly"):
        load_trace_csv(p)


def test_trace_validation():
    with pytest.raises(ValueError):
        SensorTrace(0.1, np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        SensorTrace(0.1, np.array([np.inf]), np.zeros(1))
    with pytest.raises(ValueError):
        NoiseSpec(sigma_v=-1.0)
