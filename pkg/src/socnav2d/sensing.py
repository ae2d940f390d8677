"""Field-of-view sensor model: ray casting, pedestrian visibility and the
100x100 egocentric occupancy / pedestrian maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gridmap import OccupancyGrid

LOCAL_MAP_SIZE = 100
LOCAL_MAP_RESOLUTION = 0.1  # meters per ego-map cell (10 m x 10 m window)

DEFAULT_FOV = math.pi / 2
DEFAULT_RANGE = 5.0
DEFAULT_RAY_COUNT = 180


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class SensorSpec:
    fov: float = DEFAULT_FOV  # radians, centered on the robot heading
    range: float = DEFAULT_RANGE  # meters
    ray_count: int = DEFAULT_RAY_COUNT

    def __post_init__(self):
        if not 0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must be in (0, 2*pi]")
        if self.range <= 0:
            raise ValueError("range must be positive")
        if self.ray_count < 2:
            raise ValueError("ray_count must be >= 2")


@dataclass(frozen=True)
class PedestrianEstimate:
    """One sensed pedestrian, robot-relative plus engine-internal world state."""

    distance: float
    bearing: float  # (-pi, pi], robot frame
    relative_heading: float  # (-pi, pi], pedestrian movement direction, robot frame
    world_position: tuple[float, float]
    world_heading: float
    radius: float
    velocity: tuple[float, float]
    agent_id: int = -1


def raycast(grid: OccupancyGrid, origin, angle: float, max_range: float) -> float:
    """Distance along a ray to the first occupied cell boundary.

    Grid traversal (no sampling artifacts). Rays that leave the map or hit
    nothing return max_range; an origin inside a wall returns 0.
    """
    ox, oy = float(origin[0]), float(origin[1])
    res = grid.resolution
    ix = math.floor((ox - grid.origin[0]) / res)
    iy = math.floor((oy - grid.origin[1]) / res)
    if not grid.in_bounds(ix, iy):
        raise ValueError("raycast origin outside the grid")
    if grid.occupied[iy, ix]:
        return 0.0

    dx = math.cos(angle)
    dy = math.sin(angle)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1

    # distance along the ray to the next vertical / horizontal cell boundary
    if dx != 0.0:
        next_x = grid.origin[0] + (ix + (1 if dx > 0 else 0)) * res
        t_max_x = (next_x - ox) / dx
        t_delta_x = res / abs(dx)
    else:
        t_max_x = math.inf
        t_delta_x = math.inf
    if dy != 0.0:
        next_y = grid.origin[1] + (iy + (1 if dy > 0 else 0)) * res
        t_max_y = (next_y - oy) / dy
        t_delta_y = res / abs(dy)
    else:
        t_max_y = math.inf
        t_delta_y = math.inf

    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            ix += step_x
        else:
            t = t_max_y
            t_max_y += t_delta_y
            iy += step_y
        if t > max_range:
            return max_range
        if not grid.in_bounds(ix, iy):
            return max_range
        if grid.occupied[iy, ix]:
            return t


def line_of_sight(grid: OccupancyGrid, origin, target) -> bool:
    """True when the segment origin->target crosses no occupied cell."""
    ox, oy = float(origin[0]), float(origin[1])
    tx, ty = float(target[0]), float(target[1])
    dist = math.hypot(tx - ox, ty - oy)
    if dist < 1e-12:
        return not grid.occupied_at_point(origin)
    angle = math.atan2(ty - oy, tx - ox)
    if grid.occupied_at_point(origin) or grid.occupied_at_point(target):
        return False
    return raycast(grid, origin, angle, dist) >= dist - 1e-9


def visible_pedestrians(robot_pose, agents, grid: OccupancyGrid, spec: SensorSpec):
    """Pedestrians inside the field of view, in range and unoccluded.

    Visibility is tested against the pedestrian center. Output is sorted by
    ascending distance (ties broken by agent id).
    """
    rx, ry, rtheta = robot_pose
    out = []
    for agent in agents:
        px, py = float(agent.position[0]), float(agent.position[1])
        dist = math.hypot(px - rx, py - ry)
        if dist > spec.range:
            continue
        bearing = wrap_angle(math.atan2(py - ry, px - rx) - rtheta)
        if abs(bearing) > spec.fov / 2:
            continue
        if not line_of_sight(grid, (rx, ry), (px, py)):
            continue
        out.append(
            PedestrianEstimate(
                distance=dist,
                bearing=bearing,
                relative_heading=wrap_angle(agent.heading - rtheta),
                world_position=(px, py),
                world_heading=agent.heading,
                radius=agent.radius,
                velocity=(float(agent.velocity[0]), float(agent.velocity[1])),
                agent_id=agent.id,
            )
        )
    out.sort(key=lambda p: (p.distance, p.agent_id))
    return out


def _ego_cell_centers():
    """Robot-frame coordinates of ego-map cell centers.

    Row index i runs along the robot heading (+x), column j along +y (left);
    the robot sits at the map center.
    """
    half = LOCAL_MAP_SIZE / 2.0
    ticks = (np.arange(LOCAL_MAP_SIZE) + 0.5 - half) * LOCAL_MAP_RESOLUTION
    fx, fy = np.meshgrid(ticks, ticks, indexing="ij")
    return fx, fy


_EGO_FX, _EGO_FY = _ego_cell_centers()


def ego_local_map(grid: OccupancyGrid, robot_pose) -> np.ndarray:
    """100x100 robot-centered, robot-aligned occupancy snapshot.

    Cell (i, j) samples the world at the robot-frame point
    ((i+0.5-50)*0.1, (j+0.5-50)*0.1); points beyond the map count as occupied.
    """
    rx, ry, rtheta = robot_pose
    cos_t = math.cos(rtheta)
    sin_t = math.sin(rtheta)
    wx = rx + _EGO_FX * cos_t - _EGO_FY * sin_t
    wy = ry + _EGO_FX * sin_t + _EGO_FY * cos_t
    ix = np.floor((wx - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((wy - grid.origin[1]) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    out = np.ones((LOCAL_MAP_SIZE, LOCAL_MAP_SIZE), dtype=np.uint8)
    out[inside] = grid.occupied[iy[inside], ix[inside]]
    return out


def pedestrian_map(visible, robot_pose) -> np.ndarray:
    """100x100 map marking the footprint discs of visible pedestrians."""
    rx, ry, rtheta = robot_pose
    cos_t = math.cos(rtheta)
    sin_t = math.sin(rtheta)
    out = np.zeros((LOCAL_MAP_SIZE, LOCAL_MAP_SIZE), dtype=np.uint8)
    for ped in visible:
        dx = ped.world_position[0] - rx
        dy = ped.world_position[1] - ry
        # world -> robot frame
        fx = dx * cos_t + dy * sin_t
        fy = -dx * sin_t + dy * cos_t
        mask = (_EGO_FX - fx) ** 2 + (_EGO_FY - fy) ** 2 <= ped.radius**2
        out[mask] = 1
    return out
