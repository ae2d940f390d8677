"""Dynamic window approach: the non-learned local planner baseline.

Samples velocity pairs reachable under acceleration limits, rolls each out at
constant command, discards rollouts that would hit a wall or a pedestrian,
and scores the rest by heading error, speed shortfall and clearance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gridmap import OccupancyGrid, disc_hits_occupied
from .sensing import wrap_angle

V_MAX = 0.5
W_MAX = math.pi / 2

INADMISSIBLE = math.inf


@dataclass(frozen=True)
class DwaConfig:
    heading_weight: float = 0.4
    speed_weight: float = 1.0
    clearance_weight: float = 0.1
    linear_accel: float = 1.0  # m/s^2
    angular_accel: float = math.pi  # rad/s^2
    horizon: float = 1.5  # seconds
    v_samples: int = 11
    w_samples: int = 21
    clearance_norm: float = 5.0  # meters at which the clearance term vanishes
    collision_distance: float = 0.3  # center distance to pedestrians
    robot_radius: float = 0.15
    predict_pedestrians: bool = False  # default: treat them as static obstacles

    def __post_init__(self):
        if min(self.heading_weight, self.speed_weight, self.clearance_weight) < 0:
            raise ValueError("weights must be nonnegative")
        if self.v_samples < 2 or self.w_samples < 2:
            raise ValueError("need at least 2 samples per axis")


@dataclass(frozen=True)
class DwaWorld:
    """Snapshot the planner scores against."""

    grid: OccupancyGrid
    clearance: np.ndarray  # meters to the nearest wall, per cell
    pedestrians: tuple  # of (position (x, y), velocity (vx, vy))


def dynamic_window(v: float, w: float, cfg: DwaConfig, dt: float):
    """Velocity box reachable within one timestep, clipped to the global caps."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_lo = max(-V_MAX, v - cfg.linear_accel * dt)
    v_hi = min(V_MAX, v + cfg.linear_accel * dt)
    w_lo = max(-W_MAX, w - cfg.angular_accel * dt)
    w_hi = min(W_MAX, w + cfg.angular_accel * dt)
    return (v_lo, v_hi), (w_lo, w_hi)


def rollout(pose, v: float, w: float, horizon: float, dt: float):
    """Constant-command forward-Euler unicycle rollout: ceil(horizon/dt) poses."""
    if horizon < dt:
        raise ValueError("horizon must be at least one timestep")
    x, y, theta = pose
    steps = math.ceil(horizon / dt)
    out = []
    for _ in range(steps):
        x += v * math.cos(theta) * dt
        y += v * math.sin(theta) * dt
        theta = wrap_angle(theta + w * dt)
        out.append((x, y, theta))
    return out


def _ped_position(ped, t, predict):
    (px, py), (vx, vy) = ped
    if not predict:
        return px, py
    return px + vx * t, py + vy * t


def score_trajectory(traj, v: float, local_goal, world: DwaWorld, cfg: DwaConfig,
                     dt: float) -> float:
    """Weighted cost of one rollout (lower is better), or INADMISSIBLE.

    A rollout is inadmissible when any pose overlaps a wall with the robot
    body or comes within the collision distance of a pedestrian.
    """
    if not traj:
        raise ValueError("empty trajectory")
    min_clearance = math.inf
    grid = world.grid
    for k, (x, y, _) in enumerate(traj):
        if disc_hits_occupied(grid, (x, y), cfg.robot_radius):
            return INADMISSIBLE
        t = (k + 1) * dt
        for ped in world.pedestrians:
            px, py = _ped_position(ped, t, cfg.predict_pedestrians)
            d = math.hypot(px - x, py - y)
            if d < cfg.collision_distance:
                return INADMISSIBLE
            min_clearance = min(min_clearance, d)
        ix = math.floor((x - grid.origin[0]) / grid.resolution)
        iy = math.floor((y - grid.origin[1]) / grid.resolution)
        if grid.in_bounds(ix, iy):
            min_clearance = min(min_clearance, float(world.clearance[iy, ix]))
        else:
            return INADMISSIBLE

    ex, ey, etheta = traj[-1]
    heading_error = abs(wrap_angle(math.atan2(local_goal[1] - ey, local_goal[0] - ex) - etheta))
    heading_term = heading_error / math.pi
    speed_term = (V_MAX - v) / (2.0 * V_MAX)
    clearance_term = 1.0 - min(max(min_clearance / cfg.clearance_norm, 0.0), 1.0)
    return (
        cfg.heading_weight * heading_term
        + cfg.speed_weight * speed_term
        + cfg.clearance_weight * clearance_term
    )


def dwa_step(pose, v: float, w: float, local_goal, world: DwaWorld, cfg: DwaConfig,
             dt: float):
    """Best admissible (v, w) over the sampled window.

    Ties break toward the lowest v index, then the lowest w index. When every
    sample is inadmissible the robot stops and rotates toward the local goal
    at full rate.
    """
    (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(v, w, cfg, dt)
    v_grid = np.linspace(v_lo, v_hi, cfg.v_samples)
    w_grid = np.linspace(w_lo, w_hi, cfg.w_samples)
    best = None
    best_cost = INADMISSIBLE
    for vs in v_grid:
        for ws in w_grid:
            traj = rollout(pose, float(vs), float(ws), cfg.horizon, dt)
            cost = score_trajectory(traj, float(vs), local_goal, world, cfg, dt)
            if cost < best_cost:
                best_cost = cost
                best = (float(vs), float(ws))
    if best is None:
        bearing = wrap_angle(
            math.atan2(local_goal[1] - pose[1], local_goal[0] - pose[0]) - pose[2]
        )
        return 0.0, W_MAX if bearing >= 0 else -W_MAX
    return best
