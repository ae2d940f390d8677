import math

import numpy as np
import pytest

from socnav2d.engine import (
    OBSERVATION_LENGTH,
    Episode,
    EpisodeConfig,
    EpisodeOverError,
    Outcome,
    REWARD_TERMS,
    ReplayFormatError,
    RewardConfig,
    ScenarioError,
    compute_reward,
    first_divergence,
    integrate,
    normalize_observation,
    parse_replay_log,
    replay_episode,
)
from socnav2d.gridmap import OccupancyGrid
from socnav2d.mapgen import MapGenParams, generate_indoor_map, mapgen_ref
from socnav2d.orca import CrowdMode
from socnav2d.scenario import Scenario


def empty_grid(n=120):
    occ = np.zeros((n, n), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return OccupancyGrid(occ, resolution=0.1)


def scenario_on(grid, start, goal, peds=(), mode=CrowdMode.UNCOOPERATIVE):
    return Scenario(
        seed=0,
        robot_start=tuple(start),
        robot_goal=tuple(goal),
        ped_starts=tuple(tuple(p[0]) for p in peds),
        ped_goals=tuple(tuple(p[1]) for p in peds),
        mode=mode,
    )


def initial_heading(seed):
    return float(np.random.default_rng(seed).uniform(-math.pi, math.pi))


# ------------------------------------------------------------- integrate

def test_integrate_translation():
    assert integrate((0.0, 0.0, 0.0), 0.5, 0.0, 0.1) == pytest.approx((0.05, 0.0, 0.0))


def test_integrate_rotation_only():
    x, y, theta = integrate((1.0, 2.0, 0.0), 0.0, math.pi / 2, 0.1)
    assert (x, y) == (1.0, 2.0)
    assert theta == pytest.approx(0.05 * math.pi)


def test_integrate_heading_wraps():
    _, _, theta = integrate((0.0, 0.0, math.pi), 0.0, 0.5, 0.1)
    assert -math.pi < theta <= math.pi
    assert theta == pytest.approx(-math.pi + 0.05)


# ---------------------------------------------------------------- rewards

def test_reward_ped_boundary_values():
    cfg = RewardConfig()
    common = dict(d_prev=1.0, d_new=1.0, alpha_prev=0.0, alpha_new=0.0,
                  outcome=Outcome.RUNNING, wall_hit=False, waypoint_entered=False)
    at_collision = compute_reward(cfg, nearest_visible_ped=0.3, **common)
    assert at_collision.ped_avoidance == pytest.approx(-1.0)
    at_threshold = compute_reward(cfg, nearest_visible_ped=1.0, **common)
    assert at_threshold.ped_avoidance == 0.0
    midpoint = compute_reward(cfg, nearest_visible_ped=0.65, **common)
    assert midpoint.ped_avoidance == pytest.approx(-0.5)
    nobody = compute_reward(cfg, nearest_visible_ped=math.inf, **common)
    assert nobody.ped_avoidance == 0.0


def test_reward_ped_term_continuous_at_threshold():
    cfg = RewardConfig()
    common = dict(d_prev=1.0, d_new=1.0, alpha_prev=0.0, alpha_new=0.0,
                  outcome=Outcome.RUNNING, wall_hit=False, waypoint_entered=False)
    for eps in (1e-3, 1e-6, 1e-9):
        just_inside = compute_reward(cfg, nearest_visible_ped=1.0 - eps, **common)
        assert abs(just_inside.ped_avoidance) < 2 * eps


def test_reward_dense_sum_hand_case():
    cfg = RewardConfig()
    r = compute_reward(
        cfg,
        d_prev=0.80,
        d_new=0.75,
        alpha_prev=0.5,
        alpha_new=0.4,
        nearest_visible_ped=math.inf,
        outcome=Outcome.RUNNING,
        wall_hit=False,
        waypoint_entered=False,
    )
    assert r.total == pytest.approx(0.044)
    assert r.waypoint_distance == pytest.approx(0.3 * 0.05)
    assert r.waypoint_orientation == pytest.approx(0.3 * 0.1)
    assert r.timestep == -0.001


def test_reward_terminal_terms():
    cfg = RewardConfig()
    common = dict(d_prev=1.0, d_new=1.0, alpha_prev=0.0, alpha_new=0.0,
                  nearest_visible_ped=math.inf, wall_hit=False, waypoint_entered=False)
    assert compute_reward(cfg, outcome=Outcome.SUCCESS, **common).goal == 20.0
    assert compute_reward(cfg, outcome=Outcome.PEDESTRIAN_COLLISION, **common).ped_collision == -20.0
    assert compute_reward(cfg, outcome=Outcome.TIMEOUT, **common).goal == 0.0


def test_reward_disabled_terms_zeroed():
    cfg = RewardConfig(disabled_terms=("waypoint_orientation", "ped_avoidance"))
    r = compute_reward(
        cfg, d_prev=1.0, d_new=0.9, alpha_prev=0.5, alpha_new=0.1,
        nearest_visible_ped=0.5, outcome=Outcome.RUNNING, wall_hit=False,
        waypoint_entered=True,
    )
    assert r.waypoint_orientation == 0.0 and r.ped_avoidance == 0.0
    assert r.waypoint_bonus == 0.8
    ordered = [getattr(r, name) for name in REWARD_TERMS]
    total = 0.0
    for v in ordered:
        total += v
    assert r.total == total


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(disabled_terms=("nonsense",))
    with pytest.raises(ValueError):
        RewardConfig(d_thresh=0.2, d_col=0.3)


# ------------------------------------------------------------ observations

def test_normalize_observation_examples():
    cfg = EpisodeConfig()
    raw = {
        "goal_distance": 7.5,
        "goal_bearing": math.pi / 2,
        "prev_v": 0.5,
        "prev_w": -math.pi / 2,
        "ego_map": np.zeros((100, 100), dtype=np.uint8),
        "ped_map": np.zeros((100, 100), dtype=np.uint8),
        "waypoints": [(1.5, 0.0)] * 5,
        "pedestrians": [(5.0, 0.2, -0.4)],
    }
    obs = normalize_observation(raw, cfg)
    assert obs.goal[0] == pytest.approx(0.5)
    assert obs.goal[1] == pytest.approx(0.5)
    assert obs.prev_action[0] == 1.0
    assert obs.prev_action[1] == -1.0
    assert obs.pedestrians[0, 0] == 1.0  # sensor bound
    assert obs.ped_mask[0] == 1.0 and obs.ped_mask[1] == 0.0
    vec = obs.to_vector()
    assert vec.shape == (OBSERVATION_LENGTH,)
    assert OBSERVATION_LENGTH == 20034
    assert np.all(vec >= -1.0) and np.all(vec <= 1.0)


def test_observation_distance_clamps():
    cfg = EpisodeConfig()
    raw = {
        "goal_distance": 40.0,
        "goal_bearing": -math.pi,
        "prev_v": 0.0,
        "prev_w": 0.0,
        "ego_map": np.ones((100, 100), dtype=np.uint8),
        "ped_map": np.zeros((100, 100), dtype=np.uint8),
        "waypoints": [(20.0, 1.0)] * 5,
        "pedestrians": [],
    }
    obs = normalize_observation(raw, cfg)
    assert obs.goal[0] == 1.0
    assert obs.waypoints[0, 0] == 1.0
    assert np.all(np.abs(obs.to_vector()) <= 1.0)


# -------------------------------------------------------------- episode rules

def test_reset_deterministic_first_observation():
    grid = generate_indoor_map(3, MapGenParams(width_m=12, height_m=12))
    from socnav2d.scenario import sample_scenario

    scenario = sample_scenario(grid, np.random.default_rng(5), 3, CrowdMode.COOPERATIVE)
    a = Episode(grid, EpisodeConfig(seed=11)).reset(scenario)
    b = Episode(grid, EpisodeConfig(seed=11)).reset(scenario)
    assert np.array_equal(a.to_vector(), b.to_vector())


def test_reset_rejects_unreachable_goal():
    occ = np.zeros((60, 60), dtype=bool)
    occ[:, 30] = True  # full wall
    grid = OccupancyGrid(occ, resolution=0.1)
    episode = Episode(grid, EpisodeConfig())
    with pytest.raises(ScenarioError):
        episode.reset(scenario_on(grid, (1.0, 3.0), (5.0, 3.0)))
    # goal inside a wall is an invalid endpoint
    with pytest.raises(ScenarioError):
        episode.reset(scenario_on(grid, (1.0, 3.0), (3.05, 3.0)))


def test_success_at_029_m():
    grid = empty_grid()
    config = EpisodeConfig(seed=4)
    heading = initial_heading(4)
    start = (6.0, 6.0)
    goal = (start[0] + 0.34 * math.cos(heading), start[1] + 0.34 * math.sin(heading))
    episode = Episode(grid, config)
    episode.reset(scenario_on(grid, start, goal))
    obs, reward, outcome, info = episode.step((0.5, 0.0))
    assert info["goal_distance"] == pytest.approx(0.29, abs=1e-9)
    assert outcome is Outcome.SUCCESS
    assert reward.goal == 20.0
    assert reward.total == pytest.approx(
        20.0 + reward.timestep + reward.waypoint_distance + reward.waypoint_orientation
    )


def test_pedestrian_collision_at_029_m():
    grid = empty_grid()
    config = EpisodeConfig(seed=4, ped_preferred_speed=0.0)
    heading = initial_heading(4)
    start = (6.0, 6.0)
    ped_pos = (start[0] + 0.34 * math.cos(heading), start[1] + 0.34 * math.sin(heading))
    goal = (start[0] + 5.0 * math.cos(heading), start[1] + 5.0 * math.sin(heading))
    episode = Episode(grid, config)
    episode.reset(scenario_on(grid, start, goal, peds=[(ped_pos, (9.0, 9.0))]))
    obs, reward, outcome, info = episode.step((0.5, 0.0))
    assert info["nearest_ped_distance"] == pytest.approx(0.29, abs=1e-9)
    assert outcome is Outcome.PEDESTRIAN_COLLISION
    assert reward.ped_collision == -20.0
    with pytest.raises(EpisodeOverError):
        episode.step((0.0, 0.0))


def test_exactly_030_m_is_not_a_collision_but_is_success():
    grid = empty_grid()
    config = EpisodeConfig(seed=4, ped_preferred_speed=0.0)
    heading = initial_heading(4)
    start = (6.0, 6.0)
    ped_pos = (start[0] + 0.35 * math.cos(heading), start[1] + 0.35 * math.sin(heading))
    goal = (start[0] + 0.35 * math.cos(heading), start[1] + 0.35 * math.sin(heading))
    episode = Episode(grid, config)
    episode.reset(scenario_on(grid, start, goal, peds=[(ped_pos, (9.0, 9.0))]))
    obs, reward, outcome, info = episode.step((0.5, 0.0))
    # 0.30 m exactly: success threshold is inclusive, collision is strict
    assert info["nearest_ped_distance"] == pytest.approx(0.30, abs=1e-9)
    assert outcome is Outcome.SUCCESS


def test_timeout_at_step_500():
    grid = empty_grid()
    episode = Episode(grid, EpisodeConfig(seed=1))
    episode.reset(scenario_on(grid, (3.0, 3.0), (9.0, 9.0)))
    for i in range(499):
        _, _, outcome, _ = episode.step((0.0, 0.3))
        assert outcome is Outcome.RUNNING
    _, reward, outcome, info = episode.step((0.0, 0.3))
    assert outcome is Outcome.TIMEOUT
    assert info["step"] == 500


def test_wall_hits_and_random_action_substitution():
    grid = empty_grid()
    episode = Episode(grid, EpisodeConfig(seed=9))
    episode.reset(scenario_on(grid, (6.0, 6.0), (10.0, 6.0)))
    # drive straight at the east wall (white-box pose override for precision)
    episode.pose = (11.72, 6.0, 0.0)
    hits = []
    for i in range(1, 8):
        _, reward, outcome, info = episode.step((0.5, 0.0))
        hits.append((info["wall_hit"], info["substituted_action"]))
        assert outcome is Outcome.RUNNING  # wall collisions never terminate
        if info["wall_hit"]:
            assert reward.wall_collision == -10.0
    assert hits[0] == (True, False)
    assert hits[1] == (True, False)
    assert hits[2] == (True, False)
    assert hits[3] == (True, False)
    assert hits[4] == (True, True)  # exactly the 5th consecutive hit substitutes
    # counter restarted: the next hit is number 1 again
    if hits[5][0]:
        assert hits[5][1] is False


def test_wall_hit_reverts_position_keeps_rotation():
    grid = empty_grid()
    episode = Episode(grid, EpisodeConfig(seed=2))
    episode.reset(scenario_on(grid, (6.0, 6.0), (10.0, 6.0)))
    episode.pose = (11.72, 6.0, 0.0)
    episode.step((0.5, 0.5))
    x, y, theta = episode.pose
    assert (x, y) == (11.72, 6.0)
    assert theta == pytest.approx(0.05)


def test_wall_counter_resets_on_clean_step():
    grid = empty_grid()
    episode = Episode(grid, EpisodeConfig(seed=2))
    episode.reset(scenario_on(grid, (6.0, 6.0), (10.0, 6.0)))
    episode.pose = (11.72, 6.0, 0.0)
    for _ in range(3):
        episode.step((0.5, 0.0))
    assert episode.consecutive_wall_hits == 3
    episode.step((-0.5, 0.0))  # back away cleanly
    assert episode.consecutive_wall_hits == 0


def test_action_clamped_to_caps():
    grid = empty_grid()
    episode = Episode(grid, EpisodeConfig(seed=2))
    episode.reset(scenario_on(grid, (6.0, 6.0), (10.0, 6.0)))
    _, _, _, info = episode.step((3.0, -9.0))
    assert info["applied_action"][0] == 0.5
    assert info["applied_action"][1] == -math.pi / 2


def test_terminal_absorption_no_state_change():
    grid = empty_grid()
    config = EpisodeConfig(seed=4)
    heading = initial_heading(4)
    start = (6.0, 6.0)
    goal = (start[0] + 0.3 * math.cos(heading), start[1] + 0.3 * math.sin(heading))
    episode = Episode(grid, config)
    episode.reset(scenario_on(grid, start, goal))
    episode.step((0.1, 0.0))
    assert episode.outcome is Outcome.SUCCESS
    pose = episode.pose
    with pytest.raises(EpisodeOverError):
        episode.step((0.5, 0.0))
    assert episode.pose == pose


def test_observation_bounds_and_breakdown_identity_over_random_rollout():
    grid = generate_indoor_map(21, MapGenParams(width_m=14, height_m=14))
    from socnav2d.scenario import sample_scenario

    scenario = sample_scenario(grid, np.random.default_rng(3), 4, CrowdMode.COOPERATIVE)
    episode = Episode(grid, EpisodeConfig(seed=8))
    obs = episode.reset(scenario)
    rng = np.random.default_rng(10)
    for _ in range(200):
        action = (rng.uniform(-0.5, 0.5), rng.uniform(-math.pi / 2, math.pi / 2))
        obs, reward, outcome, _ = episode.step(action)
        vec = obs.to_vector()
        assert np.all(vec >= -1.0 - 1e-12) and np.all(vec <= 1.0 + 1e-12)
        ordered_total = 0.0
        for name in REWARD_TERMS:
            ordered_total += getattr(reward, name)
        assert reward.total == ordered_total
        if outcome.terminal:
            break


# ----------------------------------------------------------------- replays

def run_episode_for_log(seed=5, steps=None):
    grid = generate_indoor_map(2, MapGenParams(width_m=12, height_m=12))
    from socnav2d.scenario import sample_scenario

    scenario = sample_scenario(grid, np.random.default_rng(7), 2, CrowdMode.UNCOOPERATIVE)
    episode = Episode(grid, EpisodeConfig(seed=seed, max_steps=steps or 60),
                      map_ref=mapgen_ref(2, MapGenParams(width_m=12, height_m=12)))
    episode.reset(scenario)
    rng = np.random.default_rng(1)
    while not episode.outcome.terminal:
        episode.step((rng.uniform(0, 0.5), rng.uniform(-0.8, 0.8)))
    return episode


def test_replay_log_roundtrip_and_resimulation():
    episode = run_episode_for_log()
    log = episode.replay_log()
    parsed = parse_replay_log(log)
    assert parsed["end"]["outcome"] == episode.outcome.value
    assert len(parsed["steps"]) == parsed["end"]["steps"]
    regenerated = replay_episode(parsed)
    assert regenerated == log
    assert first_divergence(log, regenerated) is None


def test_replay_detects_tampering():
    episode = run_episode_for_log()
    log = episode.replay_log()
    lines = log.splitlines()
    # flip one action byte in the middle of the log
    import json as _json

    idx = len(lines) // 2
    tag, _, payload = lines[idx].partition(" ")
    assert tag == "step"
    record = _json.loads(payload)
    record["cmd"][0] = record["cmd"][0] + 0.01
    lines[idx] = "step " + _json.dumps(record, sort_keys=True, separators=(",", ":"))
    tampered = "\n".join(lines) + "\n"
    regenerated = replay_episode(parse_replay_log(tampered))
    divergence = first_divergence(tampered, regenerated)
    assert divergence is not None
    assert divergence[0] <= idx + 1


def test_replay_parse_errors_carry_line_numbers():
    with pytest.raises(ReplayFormatError):
        parse_replay_log("not a header\n")
    episode = run_episode_for_log()
    log = episode.replay_log()
    truncated = "\n".join(log.splitlines()[:-1]) + "\n"
    with pytest.raises(ReplayFormatError, match="missing 'end'"):
        parse_replay_log(truncated)
    broken = log.replace('"cmd"', '"cmd', 1)
    with pytest.raises(ReplayFormatError) as err:
        parse_replay_log(broken)
    assert err.value.line_number is not None


def test_full_determinism_across_runs():
    logs = []
    for _ in range(2):
        episode = run_episode_for_log(seed=12)
        logs.append(episode.replay_log())
    assert logs[0] == logs[1]
