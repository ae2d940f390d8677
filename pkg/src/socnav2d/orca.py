"""Reciprocal collision avoidance for the pedestrian crowd.

Each agent turns its neighbors (and nearby wall faces) into half-plane
constraints in velocity space, then picks the feasible velocity closest to its
preferred one with a small incremental linear program. Agent pairs split the
avoidance responsibility evenly; walls get full responsibility.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .gridmap import OccupancyGrid

EPSILON = 1e-10

DEFAULT_NEIGHBOR_DISTANCE = 5.0
DEFAULT_MAX_NEIGHBORS = 10
DEFAULT_TIME_HORIZON_AGENTS = 2.0
DEFAULT_TIME_HORIZON_OBSTACLES = 1.0
DEFAULT_PED_RADIUS = 0.15
DEFAULT_PED_PREFERRED_SPEED = 0.5
DEFAULT_PED_MAX_SPEED = 0.6
DEFAULT_GOAL_TOLERANCE = 0.3

# walls only constrain an agent when reachable within the obstacle horizon
_OBSTACLE_RANGE_MARGIN = 0.3


class CrowdMode(enum.Enum):
    COOPERATIVE = "cooperative"
    UNCOOPERATIVE = "uncooperative"


@dataclass
class HalfPlane:
    """Velocity-space constraint: permitted velocities lie on the left of
    ``direction`` as seen from ``point`` (det(direction, point - v) <= 0)."""

    point: np.ndarray
    direction: np.ndarray  # unit vector

    def permits(self, velocity, tol: float = 0.0) -> bool:
        rel = self.point - np.asarray(velocity, dtype=float)
        return self.direction[0] * rel[1] - self.direction[1] * rel[0] <= tol


@dataclass
class Agent:
    """One ORCA pedestrian."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    radius: float = DEFAULT_PED_RADIUS
    preferred_speed: float = DEFAULT_PED_PREFERRED_SPEED
    max_speed: float = DEFAULT_PED_MAX_SPEED
    neighbor_distance: float = DEFAULT_NEIGHBOR_DISTANCE
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS
    time_horizon_agents: float = DEFAULT_TIME_HORIZON_AGENTS
    time_horizon_obstacles: float = DEFAULT_TIME_HORIZON_OBSTACLES
    goal_tolerance: float = DEFAULT_GOAL_TOLERANCE
    heading: float = 0.0  # last movement direction; kept when standing still
    goal_reached: bool = False
    path: list = field(default_factory=list)  # world points toward goal
    path_cursor: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.radius <= 0:
            raise ValueError("agent radius must be positive")
        if self.preferred_speed > self.max_speed:
            raise ValueError("preferred_speed must not exceed max_speed")
        to_goal = self.goal - self.position
        if np.hypot(*to_goal) > 1e-9:
            self.heading = math.atan2(to_goal[1], to_goal[0])


@dataclass(frozen=True)
class RobotBody:
    """The robot as seen by cooperative pedestrians."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float = 0.15


def _det(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _vo_halfplane(rel_pos, rel_vel, velocity, combined_radius, horizon, dt, responsibility):
    """Constraint keeping the relative velocity out of the truncated
    velocity-obstacle cone for ``horizon`` seconds (timestep pushout when
    already overlapping)."""
    dist_sq = rel_pos[0] ** 2 + rel_pos[1] ** 2
    r_sq = combined_radius * combined_radius

    if dist_sq > r_sq:
        inv_horizon = 1.0 / horizon
        # vector from cone apex center to the current relative velocity
        w = rel_vel - inv_horizon * rel_pos
        w_len_sq = w[0] ** 2 + w[1] ** 2
        dot1 = w[0] * rel_pos[0] + w[1] * rel_pos[1]
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # closest VO boundary point lies on the cutoff arc
            w_len = math.sqrt(w_len_sq)
            unit_w = w / w_len
            direction = np.array([unit_w[1], -unit_w[0]])
            u = (combined_radius * inv_horizon - w_len) * unit_w
        else:
            # closest boundary point lies on one of the cone legs
            leg = math.sqrt(dist_sq - r_sq)
            if _det(rel_pos, w) > 0.0:
                direction = (
                    np.array(
                        [
                            rel_pos[0] * leg - rel_pos[1] * combined_radius,
                            rel_pos[0] * combined_radius + rel_pos[1] * leg,
                        ]
                    )
                    / dist_sq
                )
            else:
                direction = (
                    -np.array(
                        [
                            rel_pos[0] * leg + rel_pos[1] * combined_radius,
                            -rel_pos[0] * combined_radius + rel_pos[1] * leg,
                        ]
                    )
                    / dist_sq
                )
            dot2 = rel_vel[0] * direction[0] + rel_vel[1] * direction[1]
            u = dot2 * direction - rel_vel
    else:
        # already overlapping: push apart within one timestep
        inv_dt = 1.0 / dt
        w = rel_vel - inv_dt * rel_pos
        w_len = math.hypot(w[0], w[1])
        if w_len < EPSILON:
            unit_w = np.array([1.0, 0.0])
            w_len = 0.0
        else:
            unit_w = w / w_len
        direction = np.array([unit_w[1], -unit_w[0]])
        u = (combined_radius * inv_dt - w_len) * unit_w

    point = velocity + responsibility * u
    return HalfPlane(point=point, direction=direction)


def agent_halfplanes(agent: Agent, neighbors, dt: float, max_neighbors: int | None = None):
    """One half-plane per in-range neighbor, nearest first, responsibility 1/2.

    ``neighbors`` may mix Agents and RobotBodys; the agent itself must not be
    in the list.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cap = agent.max_neighbors if max_neighbors is None else max_neighbors
    ranked = []
    for idx, other in enumerate(neighbors):
        rel = np.asarray(other.position, dtype=float) - agent.position
        dist = math.hypot(rel[0], rel[1])
        if dist > agent.neighbor_distance:
            continue
        ranked.append((dist, idx, other))
    ranked.sort(key=lambda t: (t[0], t[1]))

    lines = []
    for _, _, other in ranked[:cap]:
        rel_pos = np.asarray(other.position, dtype=float) - agent.position
        rel_vel = agent.velocity - np.asarray(other.velocity, dtype=float)
        lines.append(
            _vo_halfplane(
                rel_pos,
                rel_vel,
                agent.velocity,
                agent.radius + other.radius,
                agent.time_horizon_agents,
                dt,
                0.5,
            )
        )
    return lines


def _closest_point_on_segment(p, a, b):
    ab = (b[0] - a[0], b[1] - a[1])
    ab_sq = ab[0] ** 2 + ab[1] ** 2
    if ab_sq < EPSILON:
        return np.array(a, dtype=float)
    t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / ab_sq
    t = min(1.0, max(0.0, t))
    return np.array([a[0] + t * ab[0], a[1] + t * ab[1]])


def wall_halfplanes(agent: Agent, segments, dt: float):
    """Full-responsibility constraints from nearby wall segments.

    Each segment is reduced to its closest point and treated as a static
    obstacle; at map resolution the exposed cell faces are short enough for
    this to track the wall closely.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    reach = agent.time_horizon_obstacles * agent.max_speed + agent.radius + _OBSTACLE_RANGE_MARGIN
    lines = []
    for a, b in segments:
        closest = _closest_point_on_segment(agent.position, a, b)
        rel_pos = closest - agent.position
        if math.hypot(rel_pos[0], rel_pos[1]) > reach:
            continue
        lines.append(
            _vo_halfplane(
                rel_pos,
                agent.velocity.copy(),
                agent.velocity,
                agent.radius,
                agent.time_horizon_obstacles,
                dt,
                1.0,
            )
        )
    return lines


def orca_halfplanes(agent: Agent, neighbors, static_segments, dt: float):
    """All constraints for one agent: wall lines first, then neighbor lines.

    Returns (halfplanes, n_wall_lines); wall lines are hard constraints that
    the fallback LP never relaxes.
    """
    walls = wall_halfplanes(agent, static_segments, dt)
    agents = agent_halfplanes(agent, neighbors, dt)
    return walls + agents, len(walls)


def _linear_program_1(lines, line_no, radius, opt_velocity, direction_opt, result):
    """Optimize along the boundary of constraint ``line_no`` subject to all
    earlier constraints and the speed disc. Returns the new point or None."""
    line = lines[line_no]
    dot = line.point[0] * line.direction[0] + line.point[1] * line.direction[1]
    discriminant = dot * dot + radius * radius - (line.point[0] ** 2 + line.point[1] ** 2)
    if discriminant < 0.0:
        return None
    sqrt_disc = math.sqrt(discriminant)
    t_left = -dot - sqrt_disc
    t_right = -dot + sqrt_disc

    for i in range(line_no):
        denominator = _det(line.direction, lines[i].direction)
        numerator = _det(lines[i].direction, line.point - lines[i].point)
        if abs(denominator) <= EPSILON:
            if numerator < 0.0:
                return None
            continue
        t = numerator / denominator
        if denominator >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        if opt_velocity[0] * line.direction[0] + opt_velocity[1] * line.direction[1] > 0.0:
            return line.point + t_right * line.direction
        return line.point + t_left * line.direction

    t = line.direction[0] * (opt_velocity[0] - line.point[0]) + line.direction[1] * (
        opt_velocity[1] - line.point[1]
    )
    t = min(max(t, t_left), t_right)
    return line.point + t * line.direction


def _linear_program_2(lines, radius, opt_velocity, direction_opt):
    """Incremental 2D LP over the speed disc. Returns (first failing index or
    len(lines), result)."""
    opt_velocity = np.asarray(opt_velocity, dtype=float)
    if direction_opt:
        result = opt_velocity * radius
    elif opt_velocity[0] ** 2 + opt_velocity[1] ** 2 > radius * radius:
        result = opt_velocity / math.hypot(*opt_velocity) * radius
    else:
        result = opt_velocity.copy()

    for i, line in enumerate(lines):
        if _det(line.direction, line.point - result) > 0.0:
            new_result = _linear_program_1(lines, i, radius, opt_velocity, direction_opt, result)
            if new_result is None:
                return i, result
            result = new_result
    return len(lines), result


def _linear_program_3(lines, n_hard, begin_line, radius, result):
    """Fallback when the 2D LP is infeasible: minimize the worst violation of
    the soft constraints while keeping the hard (wall) ones satisfied."""
    distance = 0.0
    for i in range(begin_line, len(lines)):
        if _det(lines[i].direction, lines[i].point - result) > distance:
            proj = list(lines[:n_hard])
            for j in range(n_hard, i):
                determinant = _det(lines[i].direction, lines[j].direction)
                if abs(determinant) <= EPSILON:
                    if (
                        lines[i].direction[0] * lines[j].direction[0]
                        + lines[i].direction[1] * lines[j].direction[1]
                        > 0.0
                    ):
                        continue  # parallel, same direction
                    point = 0.5 * (lines[i].point + lines[j].point)
                else:
                    point = (
                        lines[i].point
                        + (
                            _det(lines[j].direction, lines[i].point - lines[j].point)
                            / determinant
                        )
                        * lines[i].direction
                    )
                direction = lines[j].direction - lines[i].direction
                direction = direction / math.hypot(*direction)
                proj.append(HalfPlane(point=point, direction=direction))

            temp = result
            count, result = _linear_program_2(
                proj, radius, np.array([-lines[i].direction[1], lines[i].direction[0]]), True
            )
            if count < len(proj):
                result = temp
            distance = _det(lines[i].direction, lines[i].point - result)
    return result


def solve_velocity_lp(lines, preferred, max_speed: float, n_hard: int = 0) -> np.ndarray:
    """Feasible velocity in the speed disc closest to ``preferred``.

    When the constraints cannot all be met, returns the velocity minimizing
    the largest violation of the soft constraints (walls stay hard). Always
    returns a velocity with magnitude <= max_speed (+1e-9).
    """
    if max_speed <= 0:
        raise ValueError("max_speed must be positive")
    count, result = _linear_program_2(lines, max_speed, preferred, False)
    if count < len(lines):
        result = _linear_program_3(lines, n_hard, count, max_speed, result)
    return result


class WallIndex:
    """Merged wall geometry for fast nearby-segment queries.

    Exposed cell faces are fused into maximal straight segments once per grid
    and binned spatially; a query returns the segments whose bounding boxes
    touch the query circle, in deterministic order.
    """

    def __init__(self, grid: OccupancyGrid, bin_size: float = 1.0):
        self.bin_size = bin_size
        self.segments = self._merged_segments(grid)
        self._bins: dict = {}
        for idx, (ax, ay, bx, by) in enumerate(self.segments):
            for bx_i in range(int(min(ax, bx) // bin_size), int(max(ax, bx) // bin_size) + 1):
                for by_i in range(int(min(ay, by) // bin_size), int(max(ay, by) // bin_size) + 1):
                    self._bins.setdefault((bx_i, by_i), []).append(idx)

    @staticmethod
    def _merged_segments(grid: OccupancyGrid):
        res = grid.resolution
        x0, y0 = grid.origin
        occ = grid.occupied
        height, width = occ.shape
        # outside the grid counts as occupied: border faces are never exposed
        padded = np.ones((height + 2, width + 2), dtype=bool)
        padded[1:-1, 1:-1] = occ
        segments = []

        # vertical faces: left/right sides of occupied cells next to free cells
        for side, shift in (("left", 0), ("right", 1)):
            if side == "left":
                exposed = occ & ~padded[1:-1, 0:-2]
            else:
                exposed = occ & ~padded[1:-1, 2:]
            for ix in range(width):
                column = exposed[:, ix]
                iy = 0
                while iy < height:
                    if column[iy]:
                        run = iy
                        while iy < height and column[iy]:
                            iy += 1
                        x = x0 + (ix + shift) * res
                        segments.append((x, y0 + run * res, x, y0 + iy * res))
                    else:
                        iy += 1
        # horizontal faces
        for side, shift in (("bottom", 0), ("top", 1)):
            if side == "bottom":
                exposed = occ & ~padded[0:-2, 1:-1]
            else:
                exposed = occ & ~padded[2:, 1:-1]
            for iy in range(height):
                row = exposed[iy, :]
                ix = 0
                while ix < width:
                    if row[ix]:
                        run = ix
                        while ix < width and row[ix]:
                            ix += 1
                        y = y0 + (iy + shift) * res
                        segments.append((x0 + run * res, y, x0 + ix * res, y))
                    else:
                        ix += 1
        return segments

    def near(self, position, radius: float):
        px, py = float(position[0]), float(position[1])
        bin_size = self.bin_size
        hits = set()
        for bx_i in range(int((px - radius) // bin_size), int((px + radius) // bin_size) + 1):
            for by_i in range(int((py - radius) // bin_size), int((py + radius) // bin_size) + 1):
                hits.update(self._bins.get((bx_i, by_i), ()))
        out = []
        for idx in sorted(hits):
            ax, ay, bx, by = self.segments[idx]
            # cheap reject on the segment's axis-aligned bounding box
            if (
                px + radius < min(ax, bx)
                or px - radius > max(ax, bx)
                or py + radius < min(ay, by)
                or py - radius > max(ay, by)
            ):
                continue
            out.append(((ax, ay), (bx, by)))
        return out


def wall_segments_near(grid: OccupancyGrid, position, radius: float):
    """Exposed faces of occupied cells within ``radius`` of a world point.

    Each face is returned as a ((x1, y1), (x2, y2)) segment in world meters,
    in deterministic row-major order.
    """
    res = grid.resolution
    x0, y0 = grid.origin
    px, py = float(position[0]), float(position[1])
    ix_lo = max(0, math.floor((px - radius - x0) / res))
    ix_hi = min(grid.width - 1, math.floor((px + radius - x0) / res))
    iy_lo = max(0, math.floor((py - radius - y0) / res))
    iy_hi = min(grid.height - 1, math.floor((py + radius - y0) / res))
    occ = grid.occupied
    segments = []
    for iy in range(iy_lo, iy_hi + 1):
        for ix in range(ix_lo, ix_hi + 1):
            if not occ[iy, ix]:
                continue
            cx = x0 + ix * res
            cy = y0 + iy * res
            # a face is exposed when the adjacent cell is free (grid border is not)
            if ix > 0 and not occ[iy, ix - 1]:
                segments.append(((cx, cy), (cx, cy + res)))
            if ix + 1 < grid.width and not occ[iy, ix + 1]:
                segments.append(((cx + res, cy), (cx + res, cy + res)))
            if iy > 0 and not occ[iy - 1, ix]:
                segments.append(((cx, cy), (cx + res, cy)))
            if iy + 1 < grid.height and not occ[iy + 1, ix]:
                segments.append(((cx, cy + res), (cx + res, cy + res)))
    return segments


def _preferred_velocity(agent: Agent) -> np.ndarray:
    """Point along the agent's path (or straight at the goal) at preferred speed."""
    if agent.goal_reached:
        return np.zeros(2)
    target = agent.goal
    while agent.path and agent.path_cursor < len(agent.path):
        candidate = agent.path[agent.path_cursor]
        if np.hypot(*(candidate - agent.position)) < 0.2:
            agent.path_cursor += 1
            continue
        target = candidate
        break
    to_target = target - agent.position
    dist = math.hypot(to_target[0], to_target[1])
    if dist < 1e-9:
        return np.zeros(2)
    return to_target / dist * agent.preferred_speed


def step_crowd(
    agents: list[Agent],
    robot: RobotBody | None,
    grid: OccupancyGrid,
    mode: CrowdMode,
    dt: float,
    wall_index: WallIndex | None = None,
) -> list[Agent]:
    """Advance every pedestrian by one timestep (in place).

    Constraints are built from the pre-step snapshot, then all positions are
    updated together. Cooperative crowds see the robot as one more agent;
    uncooperative crowds ignore it entirely. Passing a precomputed WallIndex
    avoids re-deriving wall geometry every step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    new_velocities = []
    for agent in agents:
        neighbors: list = [other for other in agents if other is not agent]
        if mode is CrowdMode.COOPERATIVE and robot is not None:
            neighbors.append(robot)
        reach = (
            agent.time_horizon_obstacles * agent.max_speed
            + agent.radius
            + _OBSTACLE_RANGE_MARGIN
        )
        if wall_index is not None:
            segments = wall_index.near(agent.position, reach)
        else:
            segments = wall_segments_near(grid, agent.position, reach)
        lines, n_hard = orca_halfplanes(agent, neighbors, segments, dt)
        preferred = _preferred_velocity(agent)
        velocity = solve_velocity_lp(lines, preferred, agent.max_speed, n_hard)
        new_velocities.append(velocity)

    for agent, velocity in zip(agents, new_velocities):
        agent.velocity = velocity
        new_position = agent.position + velocity * dt
        # never embed an agent center inside a wall; skip the move instead
        if not grid.occupied_at_point(new_position):
            agent.position = new_position
        speed = math.hypot(velocity[0], velocity[1])
        if speed >= 1e-3:
            agent.heading = math.atan2(velocity[1], velocity[0])
        if np.hypot(*(agent.goal - agent.position)) <= agent.goal_tolerance:
            agent.goal_reached = True
    return agents


def reachable_free_cells(grid: OccupancyGrid, start_cell) -> np.ndarray:
    """Boolean mask of free cells 8-connected-reachable from start_cell."""
    from collections import deque

    occ = grid.occupied
    reachable = np.zeros_like(occ, dtype=bool)
    sx, sy = start_cell
    if occ[sy, sx]:
        return reachable
    reachable[sy, sx] = True
    queue = deque([(sx, sy)])
    while queue:
        cx, cy = queue.popleft()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = cx + dx, cy + dy
                if 0 <= nx < grid.width and 0 <= ny < grid.height:
                    if not occ[ny, nx] and not reachable[ny, nx]:
                        reachable[ny, nx] = True
                        queue.append((nx, ny))
    return reachable


def reassign_goal(agent: Agent, grid: OccupancyGrid, rng: np.random.Generator) -> Agent:
    """Fresh goal drawn uniformly from the free cells the agent can reach."""
    from scipy import ndimage

    start = grid.world_to_cell(agent.position)
    if grid.occupied[start[1], start[0]]:
        raise ValueError("no reachable free cell for goal reassignment (degenerate map)")
    labels, _ = ndimage.label(~grid.occupied, structure=np.ones((3, 3), dtype=bool))
    ys, xs = np.nonzero(labels == labels[start[1], start[0]])
    if len(xs) == 0:
        raise ValueError("no reachable free cell for goal reassignment (degenerate map)")
    pick = int(rng.integers(len(xs)))
    agent.goal = np.asarray(grid.cell_to_world((int(xs[pick]), int(ys[pick]))))
    agent.goal_reached = False
    agent.path = []
    agent.path_cursor = 0
    return agent
