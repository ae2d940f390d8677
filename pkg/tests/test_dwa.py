import math

import numpy as np
import pytest

from socnav2d.gridmap import OccupancyGrid, clearance_field, disc_hits_occupied
from socnav2d.dwa import (
    INADMISSIBLE,
    DwaConfig,
    DwaWorld,
    dwa_step,
    dynamic_window,
    rollout,
    score_trajectory,
)

DT = 0.1


def make_world(occ_fn=None, n=200, peds=()):
    occ = np.zeros((n, n), dtype=bool)
    if occ_fn is not None:
        occ_fn(occ)
    grid = OccupancyGrid(occ, resolution=0.1)
    return DwaWorld(grid=grid, clearance=clearance_field(grid), pedestrians=tuple(peds))


def test_dynamic_window_arithmetic():
    cfg = DwaConfig()
    (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(0.0, 0.0, cfg, DT)
    assert (v_lo, v_hi) == (-0.1, pytest.approx(0.1))
    assert w_lo == pytest.approx(-0.1 * math.pi)
    assert w_hi == pytest.approx(0.1 * math.pi)


def test_dynamic_window_saturates_at_caps():
    cfg = DwaConfig()
    (v_lo, v_hi), _ = dynamic_window(0.5, 0.0, cfg, DT)
    assert v_hi == 0.5
    assert v_lo == pytest.approx(0.4)
    _, (w_lo, w_hi) = dynamic_window(0.0, math.pi / 2, cfg, DT)
    assert w_hi == math.pi / 2


def test_rollout_straight_endpoint():
    traj = rollout((0.0, 0.0, 0.0), 0.5, 0.0, horizon=1.0, dt=DT)
    assert len(traj) == 10
    assert traj[-1][0] == pytest.approx(0.5)
    assert traj[-1][1] == 0.0


def test_rollout_pure_rotation():
    traj = rollout((1.0, 2.0, 0.0), 0.0, math.pi / 2, horizon=1.0, dt=DT)
    for x, y, _ in traj:
        assert (x, y) == (1.0, 2.0)
    assert traj[-1][2] == pytest.approx(math.pi / 2 * 1.0)


def closed_form_arc(pose, v, w, t):
    """Exact constant-(v, w) unicycle endpoint (independent of the integrator)."""
    x, y, theta = pose
    r = v / w
    return (
        x + r * (math.sin(theta + w * t) - math.sin(theta)),
        y - r * (math.cos(theta + w * t) - math.cos(theta)),
        theta + w * t,
    )


def test_rollout_converges_to_circular_arc():
    pose = (0.0, 0.0, 0.0)
    v, w, horizon = 0.5, math.pi / 2, 1.0
    exact = closed_form_arc(pose, v, w, horizon)
    errors = []
    for dt in (0.1, 0.05, 0.025):
        traj = rollout(pose, v, w, horizon, dt)
        end = traj[-1]
        errors.append(math.hypot(end[0] - exact[0], end[1] - exact[1]))
    # Euler error stays first-order small and halves with the step
    assert errors[0] < v * w * horizon * 0.1  # < 0.079 m at dt=0.1
    assert errors[1] < errors[0] * 0.6
    assert errors[2] < errors[1] * 0.6
    # arc radius sanity: v/w ~ 0.318
    assert v / w == pytest.approx(0.318, abs=1e-3)


def test_score_zero_when_perfect():
    world = make_world()
    traj = rollout((10.0, 10.0, 0.0), V := 0.5, 0.0, 1.5, DT)
    cost = score_trajectory(traj, V, (15.0, 10.0), world, DwaConfig(clearance_norm=5.0), DT)
    # goal dead ahead, full speed, clearance beyond 5 m on an empty map
    assert cost == pytest.approx(0.0, abs=1e-12)


def test_score_heading_term_isolated():
    world = make_world()
    cfg = DwaConfig()
    traj = rollout((10.0, 10.0, 0.0), 0.5, 0.0, 1.5, DT)
    # goal exactly behind the endpoint: heading error pi -> cost alpha
    end = traj[-1]
    cost = score_trajectory(traj, 0.5, (end[0] - 3.0, end[1]), world, cfg, DT)
    assert cost == pytest.approx(cfg.heading_weight, abs=1e-12)


def test_score_speed_term():
    world = make_world()
    cfg = DwaConfig()
    traj = rollout((10.0, 10.0, 0.0), 0.0, 0.0, 1.5, DT)
    goal = (15.0, 10.0)
    cost = score_trajectory(traj, 0.0, goal, world, cfg, DT)
    assert cost == pytest.approx(cfg.speed_weight * 0.5, abs=1e-12)
    traj_rev = rollout((10.0, 10.0, 0.0), -0.5, 0.0, 1.5, DT)
    cost_rev = score_trajectory(traj_rev, -0.5, goal, world, cfg, DT)
    assert cost_rev > cost  # reversing pays the full speed penalty plus heading


def test_wall_crossing_is_inadmissible():
    def wall(occ):
        occ[:, 105] = True

    world = make_world(wall)
    traj = rollout((10.0, 10.0, 0.0), 0.5, 0.0, 1.5, DT)
    assert score_trajectory(traj, 0.5, (15.0, 10.0), world, DwaConfig(), DT) == INADMISSIBLE


def test_pedestrian_collision_inadmissible_static_and_predicted():
    ped_ahead = ((10.6, 10.0), (0.0, 0.0))
    world = make_world(peds=[ped_ahead])
    traj = rollout((10.0, 10.0, 0.0), 0.5, 0.0, 1.5, DT)
    assert score_trajectory(traj, 0.5, (15.0, 10.0), world, DwaConfig(), DT) == INADMISSIBLE

    # a pedestrian approaching head-on from 1.5 m: the static default clears it...
    oncoming = ((11.5, 10.0), (-0.5, 0.0))
    world2 = make_world(peds=[oncoming])
    static_cost = score_trajectory(traj, 0.5, (15.0, 10.0), world2, DwaConfig(), DT)
    assert static_cost != INADMISSIBLE
    # ...but constant-velocity prediction sees the closing gap (0.1 m at t=1.4)
    cfg_pred = DwaConfig(predict_pedestrians=True)
    assert score_trajectory(traj, 0.5, (15.0, 10.0), world2, cfg_pred, DT) == INADMISSIBLE


def test_dwa_step_open_corridor_full_speed():
    world = make_world()
    cfg = DwaConfig()
    v, w = 0.5, 0.0  # cruising
    choice = dwa_step((10.0, 10.0, 0.0), v, w, (15.0, 10.0), world, cfg, DT)
    assert choice[0] == pytest.approx(0.5)
    assert abs(choice[1]) <= 1e-9
    # exhaustive re-check: the chosen pair attains the sampled minimum
    (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(v, w, cfg, DT)
    best = INADMISSIBLE
    for vs in np.linspace(v_lo, v_hi, cfg.v_samples):
        for ws in np.linspace(w_lo, w_hi, cfg.w_samples):
            traj = rollout((10.0, 10.0, 0.0), float(vs), float(ws), cfg.horizon, DT)
            best = min(best, score_trajectory(traj, float(vs), (15.0, 10.0), world, cfg, DT))
    chosen_traj = rollout((10.0, 10.0, 0.0), *choice, cfg.horizon, DT)
    assert score_trajectory(chosen_traj, choice[0], (15.0, 10.0), world, cfg, DT) == best


def test_dwa_step_turns_toward_lateral_goal():
    world = make_world()
    choice = dwa_step((10.0, 10.0, 0.0), 0.3, 0.0, (10.0, 14.0), world, DwaConfig(), DT)
    assert choice[1] > 0  # goal 90 degrees left


def test_dwa_step_boxed_in_falls_back_to_rotation():
    # a pedestrian already inside the collision distance poisons every sample,
    # including standing still; the fallback rotates toward the local goal
    world = make_world(peds=[((10.25, 10.0), (0.0, 0.0))])
    pose = (10.0, 10.0, 0.0)
    choice = dwa_step(pose, 0.0, 0.0, (10.0, 14.0), world, DwaConfig(), DT)
    assert choice == (0.0, math.pi / 2)  # goal is to the left
    choice2 = dwa_step(pose, 0.0, 0.0, (10.0, 6.0), world, DwaConfig(), DT)
    assert choice2 == (0.0, -math.pi / 2)


def test_selected_velocity_within_window_and_caps():
    rng = np.random.default_rng(13)

    def clutter(occ):
        occ[rng.integers(60, 140, 60), rng.integers(60, 140, 60)] = True

    world = make_world(clutter)
    cfg = DwaConfig()
    v, w = 0.2, -0.4
    for _ in range(30):
        pose = (rng.uniform(7, 13), rng.uniform(7, 13), rng.uniform(-3, 3))
        if disc_hits_occupied(world.grid, pose[:2], cfg.robot_radius):
            continue
        goal = (rng.uniform(7, 13), rng.uniform(7, 13))
        v, w = dwa_step(pose, v, w, goal, world, cfg, DT)
        (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(v, w, cfg, DT)
        assert -0.5 <= v <= 0.5 and -math.pi / 2 <= w <= math.pi / 2


def test_admissible_choice_is_collision_free_when_resimulated():
    def slalom(occ):
        occ[95:106, 110] = True
        occ[90:99, 120] = True

    world = make_world(slalom)
    cfg = DwaConfig()
    pose = (10.0, 10.0, 0.0)
    choice = dwa_step(pose, 0.4, 0.0, (13.0, 10.0), world, cfg, DT)
    traj = rollout(pose, *choice, cfg.horizon, DT)
    for x, y, _ in traj:
        assert not disc_hits_occupied(world.grid, (x, y), cfg.robot_radius)


def test_weight_scaling_leaves_argmin_unchanged():
    def clutter(occ):
        occ[100:104, 112] = True

    world = make_world(clutter)
    pose = (10.0, 10.0, 0.1)
    a = dwa_step(pose, 0.3, 0.0, (12.5, 10.5), world, DwaConfig(), DT)
    scaled = DwaConfig(heading_weight=0.4 * 7, speed_weight=1.0 * 7, clearance_weight=0.1 * 7)
    b = dwa_step(pose, 0.3, 0.0, (12.5, 10.5), world, scaled, DT)
    assert a == b
