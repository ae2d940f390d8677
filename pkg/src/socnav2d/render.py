"""Rendering of replay logs and costmap dumps to PNG images.

Maps are drawn in grayscale; the robot path is a colored line with pedestrian
paths in distinct colors, waypoints as markers, and Gaussian pedestrian costs
as alpha shading when rendering a costmap dump.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .engine import parse_replay_log
from .mapgen import grid_from_ref
from .planner import load_costmap_dump

ROBOT_COLOR = "#1f77b4"
PED_CYCLE = ("#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
             "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8")


def _save_with_mapper(fig, ax, out_path):
    """Write the PNG and return a world->PNG-pixel mapper for that file."""
    fig.canvas.draw()
    transform = ax.transData.frozen()
    height_px = int(round(fig.get_size_inches()[1] * fig.dpi))

    def world_to_pixel(point):
        dx, dy = transform.transform(point)
        return int(round(dx)), int(round(height_px - 1 - dy))

    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)
    return world_to_pixel


def _grid_image(ax, occupied, resolution, origin):
    height, width = occupied.shape
    extent = (
        origin[0],
        origin[0] + width * resolution,
        origin[1],
        origin[1] + height * resolution,
    )
    ax.imshow(
        np.where(occupied, 0.0, 1.0),
        cmap="gray",
        vmin=0.0,
        vmax=1.0,
        origin="lower",
        extent=extent,
        interpolation="nearest",
    )
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def render_replay(log_text: str, out_path):
    """Draw the robot and pedestrian trajectories of one episode.

    Returns a world->pixel mapper for the written PNG (used by image checks).
    """
    parsed = parse_replay_log(log_text)
    grid = grid_from_ref(parsed["map"])
    scenario = parsed["scenario"]
    steps = parsed["steps"]

    fig, ax = plt.subplots(figsize=(6.5, 6.5), dpi=110)
    _grid_image(ax, grid.occupied, grid.resolution, grid.origin)

    xs = [scenario["robot_start"][0]] + [rec["pose"][0] for rec in steps]
    ys = [scenario["robot_start"][1]] + [rec["pose"][1] for rec in steps]
    ax.plot(xs, ys, color=ROBOT_COLOR, linewidth=1.8, label="robot")
    ax.plot(xs[-1], ys[-1], marker="o", color=ROBOT_COLOR, markersize=6)
    ax.plot(
        scenario["robot_goal"][0],
        scenario["robot_goal"][1],
        marker="*",
        color="#ffd700",
        markersize=14,
        markeredgecolor="black",
        linestyle="none",
        label="goal",
    )

    n_peds = len(scenario["ped_starts"])
    for k in range(n_peds):
        px = [scenario["ped_starts"][k][0]] + [rec["peds"][k][0] for rec in steps]
        py = [scenario["ped_starts"][k][1]] + [rec["peds"][k][1] for rec in steps]
        color = PED_CYCLE[k % len(PED_CYCLE)]
        ax.plot(px, py, color=color, linewidth=1.0, alpha=0.8)
        ax.plot(px[-1], py[-1], marker="o", color=color, markersize=4)

    outcome = parsed["end"]["outcome"]
    ax.set_title(f"{outcome} in {parsed['end']['steps']} steps")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return _save_with_mapper(fig, ax, out_path)


def render_costmap(dump_file, out_path):
    """Draw a costmap dump: grayscale walls, cost shading, markers.

    Returns a world->pixel mapper for the written PNG.
    """
    costmap, peds, waypoints, path = load_costmap_dump(dump_file)
    occupied = ~np.isfinite(costmap.cost)
    fig, ax = plt.subplots(figsize=(6.5, 6.5), dpi=110)
    _grid_image(ax, occupied, costmap.resolution, costmap.origin)

    soft = np.where(np.isfinite(costmap.cost), costmap.cost - 1.0, 0.0)
    if soft.max() > 0:
        extent = (
            costmap.origin[0],
            costmap.origin[0] + costmap.width * costmap.resolution,
            costmap.origin[1],
            costmap.origin[1] + costmap.height * costmap.resolution,
        )
        ax.imshow(
            soft,
            cmap="plasma",
            origin="lower",
            extent=extent,
            alpha=np.clip(soft / soft.max(), 0.0, 1.0) * 0.85,
            interpolation="nearest",
        )

    if path:
        ax.plot([p[0] for p in path], [p[1] for p in path],
                color=ROBOT_COLOR, linewidth=1.6, label="path")
    if waypoints:
        ax.plot(
            [w[0] for w in waypoints],
            [w[1] for w in waypoints],
            linestyle="none",
            marker="x",
            color="#004488",
            markersize=6,
            label="waypoints",
        )
    for k, (px, py, heading) in enumerate(peds):
        color = PED_CYCLE[k % len(PED_CYCLE)]
        ax.plot(px, py, marker="o", color=color, markersize=7)
        ax.annotate(
            "",
            xy=(px + 0.45 * math.cos(heading), py + 0.45 * math.sin(heading)),
            xytext=(px, py),
            arrowprops=dict(arrowstyle="->", color=color, lw=1.6),
        )

    if path or waypoints:
        ax.legend(loc="upper right", fontsize=8)
    ax.set_title("costmap")
    fig.tight_layout()
    return _save_with_mapper(fig, ax, out_path)
