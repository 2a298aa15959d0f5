"""Static figures for the CLI report path (written to files, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_grade_map(gmap, path, elevation=None):
    """Grade along the road, with the altitude profile when available."""
    n = 2 if elevation is not None else 1
    fig, axes = plt.subplots(n, 1, sharex=True, squeeze=False)
    ax = axes[0, 0]
    ax.plot(gmap.arc, 100.0 * np.asarray(gmap.grade), lw=1.0)
    ax.set_ylabel("grade [%]")
    if elevation is not None:
        ax2 = axes[1, 0]
        ax2.plot(elevation.arc, elevation.elevation, lw=1.0, color="tab:brown")
        ax2.set_ylabel("altitude [m]")
    axes[-1, 0].set_xlabel("position [m]")
    return _save(fig, path)


def plot_localization_errors(traces, path):
    """Position error over time for one seed: dead reckoning vs. EKF."""
    t = traces.truth.time
    fig, ax = plt.subplots()
    ax.plot(t, traces.s_integrated - traces.truth.position, lw=0.9, label="velocity integration")
    ax.plot(t, traces.run.s_hat - traces.truth.position, lw=0.9, label="EKF")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("position error [m]")
    ax.legend()
    return _save(fig, path)


def plot_rmse_bars(report, path):
    runs = report.runs
    x = np.arange(len(runs))
    w = 0.4
    fig, ax = plt.subplots()
    ax.bar(x - w / 2, [r.rmse_integration for r in runs], w, label="velocity integration")
    ax.bar(x + w / 2, [r.rmse_ekf for r in runs], w, label="EKF")
    ax.set_xticks(x, [str(r.seed) for r in runs])
    ax.set_xlabel("seed")
    ax.set_ylabel("position RMSE [m]")
    ax.legend()
    return _save(fig, path)


def plot_plans(report, route, path):
    """Planned speed profiles against the speed bounds, grade underneath."""
    fig, (ax, axg) = plt.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [3, 1]})
    ax.fill_between(route.nodes, route.v_min, route.v_max, color="0.9", label="speed bounds")
    for name, plan in report.plans.items():
        ax.plot(plan.arc, plan.v_ref, lw=1.0, label=name)
    ax.set_ylabel("speed [m/s]")
    ax.legend(ncol=2)
    mids = route.nodes[:-1] + 0.5 * route.ds
    axg.plot(mids, 100.0 * route.grade, lw=0.9, color="tab:brown")
    axg.set_ylabel("grade [%]")
    axg.set_xlabel("position [m]")
    return _save(fig, path)


def plot_closed_loop(log, path):
    fig, (ax, axu) = plt.subplots(2, 1, sharex=True)
    ax.plot(log.s_true, log.v_ref, lw=1.0, label="reference")
    ax.plot(log.s_true, log.v, lw=0.9, label="vehicle")
    ax.set_ylabel("speed [m/s]")
    ax.legend()
    axu.plot(log.s_true, log.u, lw=0.8, color="tab:red")
    axu.set_ylabel("wheel force [N]")
    axu.set_xlabel("position [m]")
    return _save(fig, path)


def plot_energy_offset(report, path):
    fig, ax = plt.subplots()
    for name, log in (("true position", report.truth), (f"{report.offset_m:+g} m offset", report.offset)):
        ax.plot(log.s_true, np.cumsum(log.power) * log.dt / 3.6e6, lw=1.0, label=name)
    ax.set_xlabel("position [m]")
    ax.set_ylabel("cumulative wheel energy [kWh]")
    ax.legend()
    return _save(fig, path)


def plot_report(data: dict, path):
    """Summary bar chart for a JSON report; None for unknown report kinds."""
    kind = data.get("kind")
    if kind == "localization":
        runs = data["runs"]
        x = np.arange(len(runs))
        fig, ax = plt.subplots()
        ax.bar(x - 0.2, [r["rmse_integration"] for r in runs], 0.4, label="velocity integration")
        ax.bar(x + 0.2, [r["rmse_ekf"] for r in runs], 0.4, label="EKF")
        ax.set_xticks(x, [str(r["seed"]) for r in runs])
        ax.set_xlabel("seed")
        ax.set_ylabel("position RMSE [m]")
        ax.legend()
        return _save(fig, path)
    if kind == "plan":
        rows = data["rows"]
        names = [r["profile"] for r in rows]
        fig, (ax, axt) = plt.subplots(1, 2)
        ax.bar(names, [r["energy_kwh"] for r in rows], color="tab:green")
        ax.set_ylabel("energy [kWh]")
        axt.bar(names, [r["trip_time_min"] for r in rows], color="tab:blue")
        axt.set_ylabel("trip time [min]")
        for a in (ax, axt):
            a.tick_params(axis="x", labelrotation=30)
        return _save(fig, path)
    if kind == "energy_offset":
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.bar(["true position", f"{data['offset_m']:+g} m"],
               [data["energy_truth_kwh"], data["energy_offset_kwh"]], color=["tab:blue", "tab:orange"])
        ax.set_ylabel("energy [kWh]")
        ax.set_title(f"increase {data['increase_pct']:.1f}%")
        return _save(fig, path)
    return None
