import json

import pytest

from gradeloc.cli import main

SMALL_ROUTE = """preset = "dp_route"
[map]
length = 1200.0
[planner]
v_max_profile = [[0.0, 14.0], [1200.0, 14.0]]
[experiment]
segment = [300.0, 600.0]
"""


@pytest.fixture
def route_cfg(tmp_path):
    p = tmp_path / "route.toml"
    p.write_text(SMALL_ROUTE)
    return p


def test_gen_map(tmp_path):
    out = tmp_path / "o"
    assert main(["gen-map", "--coeffs", "0", "0.02", "--length", "500", "--out", str(out)]) == 0
    assert (out / "grade_map.csv").read_text().splitlines()[0].startswith("arc_m")
    assert (out / "grade_map.png").stat().st_size > 0


def test_localize_writes_reports(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["localize", "--runs", "2", "--seed", "4", "--out", str(out), "--no-figures"]) == 0
    data = json.loads((out / "localization.json").read_text())
    assert [r["seed"] for r in data["runs"]] == [4, 5]
    assert "Position RMSE" in capsys.readouterr().out
    assert not (out / "localization_rmse.png").exists()


def test_plan_track_energy_and_report(tmp_path, route_cfg):
    out = tmp_path / "o"
    common = ["--config", str(route_cfg), "--out", str(out)]
    assert main(["plan", "--gamma", "0.1", "--gamma", "10", *common]) == 0
    assert (out / "plan.png").exists() and (out / "plan.json").exists()
    assert main(["track", "--localizer", "offset:20", "--segment", "300:500", *common]) == 0
    assert (out / "track.csv").exists() and (out / "track.png").exists()
    assert main(["energy-offset", "--offset-m", "60", *common]) == 0
    data = json.loads((out / "energy_offset.json").read_text())
    assert data["segment"] == [300.0, 600.0] and data["offset_m"] == 60.0
    assert main(["report", str(out / "energy_offset.json"), str(out / "plan.json")]) == 0
    assert (out / "plan_summary.png").exists()


@pytest.mark.parametrize("argv", [
    ["localize", "--preset", "nope"],
    ["localize", "--config", "/nonexistent.toml"],
    ["track", "--localizer", "gps"],
])
def test_config_errors_exit_2(tmp_path, argv):
    assert main([*argv, "--out", str(tmp_path)]) == 2


def test_bad_segment_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["energy-offset", "--segment", "500:100", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_infeasible_route_exits_3(tmp_path):
    # 200 N of drive cannot hold 19 m/s against drag and rolling resistance
    bounds = tmp_path / "b.csv"
    bounds.write_text("arc_m,v_max_mps,v_min_mps\n0,20,19\n5000,20,19\n")
    cfg = tmp_path / "c.toml"
    cfg.write_text('preset = "dp_route"\n[planner]\nu_max = 200.0\nn_v = 11\nn_u = 9\n')
    code = main(["plan", "--config", str(cfg), "--route", str(bounds), "--out", str(tmp_path), "--no-figures"])
    assert code == 3


def test_report_rejects_unknown_file(tmp_path):
    assert main(["report", str(tmp_path / "missing.json")]) == 2
