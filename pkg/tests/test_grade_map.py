import json
import math

import numpy as np
import pytest

from gradeloc import grade_map as gm
from gradeloc.grade_map import ElevationProfile, GeoSample, GradeMap, MapDataError


def toy_map():
    return GradeMap([0.0, 10.0], [0.0, 0.1])


def test_grade_at_interpolates_and_clamps():
    m = toy_map()
    assert m.grade_at(5.0) == pytest.approx(0.05)
    assert m.grade_at(-5.0) == 0.0
    assert m.grade_at(25.0) == pytest.approx(0.1)
    assert m.grade_at(10.0) == pytest.approx(0.1)
    np.testing.assert_allclose(gm.grade_at(m, [0.0, 2.5]), [0.0, 0.025])


def test_grade_slope_at_segment_and_knot_rule():
    m = GradeMap([0.0, 10.0, 20.0], [0.0, 0.1, 0.0])
    assert m.grade_slope_at(5.0) == pytest.approx(0.01)
    # right-hand segment at an interior knot
    assert m.grade_slope_at(10.0) == pytest.approx(-0.01)
    assert m.grade_slope_at(-1.0) == 0.0
    assert m.grade_slope_at(20.0) == 0.0
    assert GradeMap([0.0, 5.0], [0.03, 0.03]).grade_slope_at(2.0) == 0.0


def test_grade_slope_matches_finite_difference_away_from_knots():
    rng = np.random.default_rng(3)
    arc = np.cumsum(rng.uniform(1.0, 5.0, 40))
    m = GradeMap(arc, rng.uniform(-0.1, 0.1, 40))
    h = 1e-4
    for s in rng.uniform(arc[0], arc[-1], 200):
        if np.min(np.abs(arc - s)) < 2 * h:
            continue
        fd = (m.grade_at(s + h) - m.grade_at(s - h)) / (2 * h)
        assert fd == pytest.approx(m.grade_slope_at(s), abs=1e-9)


def test_grade_map_rejects_bad_knots():
    with pytest.raises(MapDataError):
        GradeMap([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(MapDataError):
        GradeMap([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(MapDataError):
        GradeMap([0.0, 1.0], [0.0, np.nan])


def test_grade_map_is_read_only():
    m = toy_map()
    with pytest.raises(ValueError):
        m.grade[0] = 0.5


def test_from_elevation_flat_and_ramp():
    flat = ElevationProfile([0.0, 50.0, 100.0], [100.0, 100.0, 100.0])
    np.testing.assert_array_equal(gm.from_elevation(flat, 1).grade, 0.0)
    ramp = gm.from_elevation(ElevationProfile([0.0, 100.0], [0.0, 5.0]), 1)
    np.testing.assert_allclose(ramp.grade, [0.05, 0.05])
    np.testing.assert_array_equal(ramp.arc, [0.0, 100.0])


def test_from_elevation_matches_analytic_slope():
    # z = 4 sin(2 pi s / 400): dz/ds = 4 * 2pi/400 cos(...)
    s = np.arange(0.0, 1001.0)
    z = 4.0 * np.sin(2 * np.pi * s / 400.0)
    m = gm.from_elevation(ElevationProfile(s, z), 5)
    exact = 4.0 * 2 * np.pi / 400.0 * np.cos(2 * np.pi * s / 400.0)
    assert np.max(np.abs(m.grade[3:-3] - exact[3:-3])) < 1e-3


def test_from_elevation_errors():
    with pytest.raises(MapDataError):
        gm.from_elevation(ElevationProfile([0.0, 1.0], [0.0, 2.0]), 1)
    with pytest.raises(MapDataError):
        gm.from_elevation(ElevationProfile([0.0, 1.0, 2.0], [0.0, 0.0, 0.0]), 5)
    with pytest.raises(MapDataError):
        gm.moving_average(np.zeros(5), 2)


def test_moving_average_shrinks_window_at_edges():
    x = np.array([0.0, 0.0, 3.0, 0.0, 0.0])
    np.testing.assert_allclose(gm.moving_average(x, 3), [0.0, 1.0, 1.0, 1.0, 0.0])
    np.testing.assert_array_equal(gm.moving_average(x, 1), x)


def test_haversine_equator_spacing():
    # 0.001 deg of latitude on a 6371008.8 m sphere
    d = gm.haversine(0.0, 0.0, 0.001, 0.0)
    assert d == pytest.approx(111.2, abs=0.5)
    assert d == pytest.approx(gm.EARTH_RADIUS_M * math.radians(0.001), rel=1e-9)


def test_from_geo_samples_additive_and_degenerate():
    pts = [GeoSample(0.0, 0.001 * i, 10.0) for i in range(3)]
    prof = gm.from_geo_samples(pts)
    d = gm.haversine(0.0, 0.0, 0.0, 0.001)
    np.testing.assert_allclose(prof.arc, [0.0, d, 2 * d], rtol=1e-9)
    with pytest.raises(MapDataError):
        gm.from_geo_samples([GeoSample(1.0, 1.0, 0.0), GeoSample(1.0, 1.0, 0.0)])


def test_geo_sample_validation():
    with pytest.raises(MapDataError):
        GeoSample(91.0, 0.0, 0.0)
    with pytest.raises(MapDataError):
        GeoSample(0.0, 181.0, 0.0)


def test_load_elevation_json(tmp_path):
    recs = [{"lat": 37.9, "lng": -122.3 + 0.001 * i, "elevation": 10.0 + i, "resolution": 4.8} for i in range(3)]
    p = tmp_path / "elev.json"
    p.write_text(json.dumps(recs))
    pts = gm.load_elevation_json(p)
    assert len(pts) == 3
    assert pts[2].elevation == 12.0
    # elevation-API style wrapper with nested location
    wrapped = {"results": [{"location": {"lat": r["lat"], "lng": r["lng"]}, "elevation": r["elevation"]}
                           for r in recs]}
    p.write_text(json.dumps(wrapped))
    assert len(gm.load_elevation_json(p)) == 3


def test_load_elevation_json_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps([{"lat": 0.0, "lng": 0.0, "elevation": 0.0},
                             {"lat": 95.0, "lng": 0.0, "elevation": 0.0}]))
    with pytest.raises(MapDataError, match="record 1"):
        gm.load_elevation_json(p)
    p.write_text("")
    with pytest.raises(MapDataError):
        gm.load_elevation_json(p)
    p.write_text("[]")
    with pytest.raises(MapDataError, match="need >= 2 samples"):
        gm.load_elevation_json(p)


def test_profile_and_grade_csv_round_trip(tmp_path):
    prof = ElevationProfile([0.0, 10.0, 25.0], [1.0, 1.5, 0.25])
    gm.save_profile_csv(prof, tmp_path / "p.csv")
    back = gm.load_profile_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.arc, prof.arc)
    np.testing.assert_array_equal(back.elevation, prof.elevation)
    m = GradeMap([0.0, 1.0, 2.0], [0.01, -0.02, 0.03])
    gm.save_grade_csv(m, tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "arc_m,grade"
    np.testing.assert_array_equal(gm.load_grade_csv(tmp_path / "g.csv").grade, m.grade)


def test_profile_csv_errors(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("arc_m,elevation_m\n0,1\n1,oops\n")
    with pytest.raises(MapDataError, match=":3"):
        gm.load_profile_csv(p)
    p.write_text("arc,elev\n0,1\n")
    with pytest.raises(MapDataError, match="missing column"):
        gm.load_profile_csv(p)


def test_polynomial_road_linear_and_flat():
    m = gm.polynomial_road([0.0, 0.02], 100.0, 1.0)
    np.testing.assert_allclose(m.grade, 0.02)
    assert m.length == 100.0
    np.testing.assert_array_equal(gm.polynomial_road([0.0], 50.0).grade, 0.0)


def test_polynomial_road_cubic_critical_points():
    # z = s^3/3 - 15 s^2 + 200 s scaled: dz/ds = c (s - 10)(s - 20)
    c = 1e-3
    coeffs = [0.0, 200 * c, -15 * c, c / 3]
    m = gm.polynomial_road(coeffs, 30.0, 0.5)
    sign = np.sign(m.grade)
    crossings = m.arc[:-1][sign[:-1] != sign[1:]]
    roots = np.sort(np.roots([c, -30 * c, 200 * c]).real)
    assert len(crossings) == 2
    np.testing.assert_allclose(crossings, roots, atol=0.5)


def test_polynomial_road_slope_bound():
    with pytest.raises(MapDataError):
        gm.polynomial_road([0.0, 1.5], 10.0)


def test_chebyshev_and_power_bases_agree():
    # z = s/100 on [0, 100] is T1 shifted: z = 0.5 + 0.5 * T1(x)
    power = gm.polynomial_road([0.0, 0.01], 100.0)
    cheb = gm.polynomial_road([0.5, 0.5], 100.0, basis="chebyshev")
    np.testing.assert_allclose(cheb.grade, power.grade, atol=1e-12)


def test_sinusoid_road_grade():
    m = gm.sinusoid_road(1000.0, [0.05], [200.0], [0.0], ds=1.0)
    np.testing.assert_allclose(m.grade, 0.05 * np.cos(2 * np.pi * m.arc / 200.0), atol=1e-12)


def test_shifted_map():
    m = toy_map().shifted(5.0)
    assert m.grade_at(10.0) == pytest.approx(0.05)
