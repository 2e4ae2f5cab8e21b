"""Matplotlib renderers for episode trajectories and suite metrics (SVG output)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from .sim import Status  # noqa: E402

SUCCESS_COLOR = "#2ca02c"
FAILURE_COLOR = "#d62728"
_TRAJ_COLORS = ("#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")
# fixed hash salt and no timestamp keep the SVG bytes reproducible
_SVG_RC = {"svg.hashsalt": "asvnav", "svg.fonttype": "none"}


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})


def render_svg(record, path) -> None:
    """Draw one episode: workspace frame, obstacles, vortex cores, goals and trajectories.

    Elements carry stable ids: ``trajectory_<i>``, ``goal_<i>``, and
    ``success_marker_<i>`` or ``failure_marker_<i>`` at each robot's final pose.
    """
    scenario = record.scenario
    size = scenario["params"]["workspace"]
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    ax.set_xlim(-1, size + 1)
    ax.set_ylim(-1, size + 1)
    ax.set_aspect("equal")
    ax.set_axis_off()
    ax.add_patch(Rectangle((0, 0), size, size, fill=False, edgecolor="black", lw=1.0, gid="workspace"))

    for k, v in enumerate(scenario.get("vortices", [])):
        ax.add_patch(Circle(v["center"], v["r0"], fill=False, linestyle="--", edgecolor="#4a90d9",
                            lw=0.8, gid=f"vortex_{k}"))
    for k, o in enumerate(scenario.get("obstacles", [])):
        ax.add_patch(Circle(o["center"], o["radius"], facecolor="#444444", edgecolor="none", gid=f"obstacle_{k}"))

    for i, robot in enumerate(scenario.get("robots", [])):
        color = _TRAJ_COLORS[i % len(_TRAJ_COLORS)]
        rows = record.rows.get(i, [])
        xs = [robot["start"][0]] + [r.x for r in rows]
        ys = [robot["start"][1]] + [r.y for r in rows]
        ax.plot(xs, ys, color=color, lw=1.2, gid=f"trajectory_{i}")
        ax.plot(*robot["goal"], marker="*", markersize=10, color=color, linestyle="none", gid=f"goal_{i}")
        if i < len(record.outcomes):
            ok = record.outcomes[i] == Status.REACHED_GOAL.value
            ax.plot(xs[-1], ys[-1], marker="o" if ok else "X", markersize=8, linestyle="none",
                    color=SUCCESS_COLOR if ok else FAILURE_COLOR,
                    gid=f"{'success' if ok else 'failure'}_marker_{i}")
    _save(fig, path)


def plot_metrics(documents, path, labels=None) -> None:
    """Success rate, travel time and energy per level for one or more metrics documents."""
    if isinstance(documents, dict):
        documents = [documents]
    if not documents:
        raise ValueError("no metrics documents to plot")
    labels = labels or [d.get("config", {}).get("policy", f"run {k}") for k, d in enumerate(documents)]
    fig = Figure(figsize=(12, 4))
    axes = fig.subplots(1, 3)
    width = 0.8 / len(documents)
    for k, (doc, label) in enumerate(zip(documents, labels)):
        levels = [row["level"] for row in doc["levels"]]
        xs = [x + (k - (len(documents) - 1) / 2) * width for x in range(len(levels))]
        axes[0].bar(xs, [row["success_rate"] for row in doc["levels"]], width, label=label)
        for ax, key in ((axes[1], "travel_time"), (axes[2], "energy")):
            means = [row[key]["mean"] for row in doc["levels"]]
            ax.plot(xs, [m if m is not None else float("nan") for m in means], marker="o", label=label)
        for ax in axes:
            ax.set_xticks(range(len(levels)))
            ax.set_xticklabels([str(lv) for lv in levels])
            ax.set_xlabel("robots")
    axes[0].set_ylabel("success rate")
    axes[0].set_ylim(0, 1.05)
    axes[1].set_ylabel("travel time [s]")
    axes[2].set_ylabel("energy")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
