"""Scenario sampling: robot start/goal pairs at a controlled geodesic
difficulty, plus pedestrian starts and goals."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridmap import OccupancyGrid, base_costmap
from .orca import CrowdMode

MIN_GEODESIC_M = 5.0
MAX_GEODESIC_M = 15.0
MAX_SAMPLE_ATTEMPTS = 10_000

# spawn hygiene: pedestrians never start on top of the robot or each other
MIN_PED_ROBOT_SEPARATION = 1.0
MIN_PED_PED_SEPARATION = 0.4


class ScenarioSamplingError(Exception):
    """The map cannot host a scenario within the attempt budget."""


@dataclass(frozen=True)
class Scenario:
    seed: int
    robot_start: tuple
    robot_goal: tuple
    ped_starts: tuple
    ped_goals: tuple
    mode: CrowdMode

    @property
    def n_pedestrians(self) -> int:
        return len(self.ped_starts)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "robot_start": list(self.robot_start),
            "robot_goal": list(self.robot_goal),
            "ped_starts": [list(p) for p in self.ped_starts],
            "ped_goals": [list(p) for p in self.ped_goals],
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            seed=int(data["seed"]),
            robot_start=tuple(data["robot_start"]),
            robot_goal=tuple(data["robot_goal"]),
            ped_starts=tuple(tuple(p) for p in data["ped_starts"]),
            ped_goals=tuple(tuple(p) for p in data["ped_goals"]),
            mode=CrowdMode(data["mode"]),
        )


def bfs_hop_distances(traversable: np.ndarray, start_cell) -> np.ndarray:
    """4-connected breadth-first hop counts from a cell; -1 where unreachable."""
    height, width = traversable.shape
    dist = np.full((height, width), -1, dtype=np.int32)
    sx, sy = start_cell
    if not traversable[sy, sx]:
        return dist
    dist[sy, sx] = 0
    queue = deque([(sx, sy)])
    while queue:
        cx, cy = queue.popleft()
        d = dist[cy, cx] + 1
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if 0 <= nx < width and 0 <= ny < height:
                if traversable[ny, nx] and dist[ny, nx] < 0:
                    dist[ny, nx] = d
                    queue.append((nx, ny))
    return dist


def geodesic_distance_m(traversable: np.ndarray, resolution: float, start_cell, goal_cell):
    """Shortest obstacle-respecting grid distance in meters, or None when the
    goal is unreachable. 8-connected with sqrt(2) diagonal steps, so a 3 m
    square tops out near 4.2 m and can never host a 5 m scenario."""
    from skimage.graph import MCP_Geometric

    sx, sy = start_cell
    gx, gy = goal_cell
    if not traversable[sy, sx] or not traversable[gy, gx]:
        return None
    costs = np.where(traversable, 1.0, np.inf)
    mcp = MCP_Geometric(costs, fully_connected=True)
    accumulated, _ = mcp.find_costs([(sy, sx)], ends=[(gy, gx)], find_all_ends=False)
    hops = accumulated[gy, gx]
    if not np.isfinite(hops):
        return None
    return float(hops) * resolution


def sample_scenario(
    grid: OccupancyGrid,
    rng: np.random.Generator,
    n_pedestrians: int,
    mode: CrowdMode,
    robot_radius: float = 0.15,
    ped_radius: float = 0.15,
    seed: int | None = None,
) -> Scenario:
    """Rejection-sample a benchmark scenario.

    The robot start/goal pair must have a geodesic distance in [5, 15] m over
    the robot-traversable region (free cells minus the robot-radius wall
    inflation), which also guarantees the initial plan exists. Pedestrian
    starts are uniform over their traversable cells away from the robot;
    goals are uniform over the cells reachable from each start.
    """
    robot_ok = np.isfinite(base_costmap(grid, robot_radius).cost)
    ped_ok = np.isfinite(base_costmap(grid, ped_radius).cost)
    ys, xs = np.nonzero(robot_ok)
    if len(xs) < 2:
        raise ScenarioSamplingError("map has fewer than 2 robot-traversable cells")

    res = grid.resolution
    robot_start = robot_goal = None
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        i, j = rng.integers(0, len(xs), size=2)
        start_cell = (int(xs[i]), int(ys[i]))
        goal_cell = (int(xs[j]), int(ys[j]))
        dist = geodesic_distance_m(robot_ok, res, start_cell, goal_cell)
        if dist is None or not MIN_GEODESIC_M <= dist <= MAX_GEODESIC_M:
            continue
        robot_start = grid.cell_to_world(start_cell)
        robot_goal = grid.cell_to_world(goal_cell)
        break
    else:
        raise ScenarioSamplingError(
            f"no start/goal pair with geodesic distance in "
            f"[{MIN_GEODESIC_M}, {MAX_GEODESIC_M}] m after {MAX_SAMPLE_ATTEMPTS} attempts"
        )

    ped_ys, ped_xs = np.nonzero(ped_ok)
    # 8-connected regions of the pedestrian-traversable mask; goals must share
    # the start's region so the crowd path planner can always reach them
    labels, _ = ndimage.label(ped_ok, structure=np.ones((3, 3), dtype=bool))
    region_cells: dict[int, tuple] = {}
    ped_starts: list = []
    ped_goals: list = []
    attempts = 0
    while len(ped_starts) < n_pedestrians:
        attempts += 1
        if attempts > MAX_SAMPLE_ATTEMPTS:
            raise ScenarioSamplingError("could not place all pedestrians")
        k = int(rng.integers(0, len(ped_xs)))
        cell = (int(ped_xs[k]), int(ped_ys[k]))
        pos = grid.cell_to_world(cell)
        if math.hypot(pos[0] - robot_start[0], pos[1] - robot_start[1]) < MIN_PED_ROBOT_SEPARATION:
            continue
        if any(
            math.hypot(pos[0] - q[0], pos[1] - q[1]) < MIN_PED_PED_SEPARATION
            for q in ped_starts
        ):
            continue
        region = int(labels[cell[1], cell[0]])
        if region not in region_cells:
            gy, gx = np.nonzero(labels == region)
            region_cells[region] = (gx, gy)
        gx, gy = region_cells[region]
        if len(gx) < 2:
            continue
        g = int(rng.integers(0, len(gx)))
        ped_starts.append(pos)
        ped_goals.append(grid.cell_to_world((int(gx[g]), int(gy[g]))))

    return Scenario(
        seed=int(seed) if seed is not None else 0,
        robot_start=robot_start,
        robot_goal=robot_goal,
        ped_starts=tuple(ped_starts),
        ped_goals=tuple(ped_goals),
        mode=mode,
    )
