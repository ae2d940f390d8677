"""Episode simulation: robot kinematics, reward shaping, observation assembly,
termination rules and deterministic stepping of world, crowd and sensors.

One Episode instance is strictly single-writer. Given (map, scenario, seed,
action sequence) every observation, reward and outcome is reproducible
byte-for-byte, which the replay log format relies on.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .gridmap import OccupancyGrid, base_costmap, clearance_field, disc_hits_occupied
from .orca import Agent, RobotBody, WallIndex, reassign_goal, step_crowd
from .planner import (
    GaussianParams,
    InvalidEndpointError,
    NoPathError,
    PlanKind,
    ProximityMode,
    WAYPOINT_REWARD_RADIUS,
    extract_waypoints,
    inflate_pedestrians,
    lethal_pedestrians,
    plan_astar,
    replan_or_keep,
    should_replan,
)
from .sensing import SensorSpec, ego_local_map, pedestrian_map, visible_pedestrians, wrap_angle

V_MAX = 0.5
W_MAX = math.pi / 2

REPLAY_HEADER = "socnav2d-replay 1"

REWARD_TERMS = (
    "goal",
    "ped_collision",
    "wall_collision",
    "waypoint_bonus",
    "timestep",
    "waypoint_distance",
    "ped_avoidance",
    "waypoint_orientation",
)

GLOBAL_PLANNERS = ("ppp", "astar", "fixed")


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    PEDESTRIAN_COLLISION = "pedestrian_collision"
    TIMEOUT = "timeout"

    @property
    def terminal(self):
        return self is not Outcome.RUNNING


class ScenarioError(Exception):
    """Scenario cannot be instantiated on this map."""


class EpisodeOverError(RuntimeError):
    """step() called after a terminal outcome."""


class ReplayFormatError(Exception):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class RewardConfig:
    goal: float = 20.0
    ped_collision: float = -20.0
    wall_collision: float = -10.0
    waypoint_bonus: float = 0.8
    waypoint_bonus_radius: float = WAYPOINT_REWARD_RADIUS
    w_dist: float = 0.3
    w_orient: float = 0.3
    d_thresh: float = 1.0
    d_col: float = 0.3
    timestep: float = -0.001
    disabled_terms: tuple = ()  # names from REWARD_TERMS, e.g. the RL-baseline ablation

    def __post_init__(self):
        if not self.d_thresh > self.d_col > 0:
            raise ValueError("need d_thresh > d_col > 0")
        unknown = set(self.disabled_terms) - set(REWARD_TERMS)
        if unknown:
            raise ValueError(f"unknown reward terms disabled: {sorted(unknown)}")


@dataclass(frozen=True)
class RewardBreakdown:
    goal: float = 0.0
    ped_collision: float = 0.0
    wall_collision: float = 0.0
    waypoint_bonus: float = 0.0
    timestep: float = 0.0
    waypoint_distance: float = 0.0
    ped_avoidance: float = 0.0
    waypoint_orientation: float = 0.0
    total: float = 0.0

    def terms(self):
        return {name: getattr(self, name) for name in REWARD_TERMS}


def _sum_terms(values: dict) -> float:
    total = 0.0
    for name in REWARD_TERMS:
        total += values[name]
    return total


def compute_reward(
    cfg: RewardConfig,
    *,
    d_prev: float,
    d_new: float,
    alpha_prev: float,
    alpha_new: float,
    nearest_visible_ped: float,
    outcome: Outcome,
    wall_hit: bool,
    waypoint_entered: bool,
) -> RewardBreakdown:
    """Itemized per-step reward; disabled terms contribute exactly zero.

    Dense terms reward progress (distance and bearing alignment) toward the
    current waypoint; the pedestrian term ramps from 0 at d_thresh to -1 at
    the collision distance.
    """
    values = {
        "goal": cfg.goal if outcome is Outcome.SUCCESS else 0.0,
        "ped_collision": cfg.ped_collision if outcome is Outcome.PEDESTRIAN_COLLISION else 0.0,
        "wall_collision": cfg.wall_collision if wall_hit else 0.0,
        "waypoint_bonus": cfg.waypoint_bonus if waypoint_entered else 0.0,
        "timestep": cfg.timestep,
        "waypoint_distance": cfg.w_dist * (d_prev - d_new),
        "waypoint_orientation": cfg.w_orient * (alpha_prev - alpha_new),
        "ped_avoidance": 0.0,
    }
    if nearest_visible_ped <= cfg.d_thresh:
        values["ped_avoidance"] = -(cfg.d_thresh - nearest_visible_ped) / (
            cfg.d_thresh - cfg.d_col
        )
    for name in cfg.disabled_terms:
        values[name] = 0.0
    return RewardBreakdown(total=_sum_terms(values), **values)


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    dt: float = 0.1
    max_steps: int = 500
    goal_radius: float = 0.3
    ped_collision_dist: float = 0.3
    robot_radius: float = 0.15
    ped_radius: float = 0.15
    ped_preferred_speed: float = 0.5
    ped_max_speed: float = 0.6
    d_norm: float = 15.0  # distance normalization bound for goal and waypoints
    waypoint_spacing: float = 0.5
    wall_hit_limit: int = 5  # consecutive hits that trigger a random action
    global_planner: str = "ppp"
    sensor: SensorSpec = field(default_factory=SensorSpec)
    gaussian: GaussianParams = field(default_factory=GaussianParams)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.global_planner not in GLOBAL_PLANNERS:
            raise ValueError(
                f"unknown global planner {self.global_planner!r}; valid: {GLOBAL_PLANNERS}"
            )
        for name in ("dt", "max_steps", "goal_radius", "ped_collision_dist", "d_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gaussian"]["proximity_mode"] = self.gaussian.proximity_mode.value
        out["reward"]["disabled_terms"] = list(self.reward.disabled_terms)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeConfig":
        data = dict(data)
        sensor = SensorSpec(**data.pop("sensor", {}))
        gauss = dict(data.pop("gaussian", {}))
        if "proximity_mode" in gauss:
            gauss["proximity_mode"] = ProximityMode(gauss["proximity_mode"])
        reward = dict(data.pop("reward", {}))
        reward["disabled_terms"] = tuple(reward.get("disabled_terms", ()))
        return cls(
            sensor=sensor,
            gaussian=GaussianParams(**gauss),
            reward=RewardConfig(**reward),
            **data,
        )


PED_OBS_SLOTS = 5
WAYPOINT_OBS_COUNT = 5
OBSERVATION_LENGTH = 2 + 10000 + 10000 + 2 + 2 * WAYPOINT_OBS_COUNT + 4 * PED_OBS_SLOTS


@dataclass
class Observation:
    """Normalized episode observation; every scalar lies in [-1, 1].

    Flattening order: goal (2), ego map (10000, row-major), pedestrian map
    (10000), previous action (2), waypoints (10), pedestrian slots (15),
    pedestrian presence mask (5) -> 20034 scalars.
    """

    goal: np.ndarray  # (2,) distance / d_norm, bearing / pi
    ego_map: np.ndarray  # (100, 100) uint8
    ped_map: np.ndarray  # (100, 100) uint8
    prev_action: np.ndarray  # (2,) v / V_MAX, w / W_MAX
    waypoints: np.ndarray  # (5, 2)
    pedestrians: np.ndarray  # (5, 3) distance / range, bearing / pi, heading / pi
    ped_mask: np.ndarray  # (5,) 1.0 for a filled slot

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.goal,
                self.ego_map.reshape(-1).astype(np.float64),
                self.ped_map.reshape(-1).astype(np.float64),
                self.prev_action,
                self.waypoints.reshape(-1),
                self.pedestrians.reshape(-1),
                self.ped_mask,
            ]
        )


def integrate(pose, v: float, w: float, dt: float):
    """Forward-Euler unicycle step; heading wrapped to (-pi, pi]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, theta = pose
    return (
        x + v * math.cos(theta) * dt,
        y + v * math.sin(theta) * dt,
        wrap_angle(theta + w * dt),
    )


def normalize_observation(raw: dict, config: EpisodeConfig) -> Observation:
    """Scale raw polar/velocity fields into [-1, 1] per the observation contract."""
    d_norm = config.d_norm
    sensor_range = config.sensor.range

    goal = np.array(
        [min(max(raw["goal_distance"] / d_norm, 0.0), 1.0), raw["goal_bearing"] / math.pi]
    )
    prev_action = np.array([raw["prev_v"] / V_MAX, raw["prev_w"] / W_MAX])

    waypoints = np.zeros((WAYPOINT_OBS_COUNT, 2))
    for i, (dist, bearing) in enumerate(raw["waypoints"]):
        waypoints[i, 0] = min(max(dist / d_norm, 0.0), 1.0)
        waypoints[i, 1] = bearing / math.pi

    pedestrians = np.zeros((PED_OBS_SLOTS, 3))
    mask = np.zeros(PED_OBS_SLOTS)
    for i, (dist, bearing, heading) in enumerate(raw["pedestrians"][:PED_OBS_SLOTS]):
        pedestrians[i, 0] = min(max(dist / sensor_range, 0.0), 1.0)
        pedestrians[i, 1] = bearing / math.pi
        pedestrians[i, 2] = heading / math.pi
        mask[i] = 1.0

    return Observation(
        goal=goal,
        ego_map=raw["ego_map"],
        ped_map=raw["ped_map"],
        prev_action=prev_action,
        waypoints=waypoints,
        pedestrians=pedestrians,
        ped_mask=mask,
    )


def _json_line(tag: str, payload: dict) -> str:
    return f"{tag} {json.dumps(payload, sort_keys=True, separators=(',', ':'))}"


class Episode:
    """One navigation trial on a fixed map.

    Not safe for concurrent stepping; run independent episodes in parallel
    instead (they share only the immutable grid).
    """

    def __init__(self, grid: OccupancyGrid, config: EpisodeConfig, map_ref: dict | None = None):
        self.grid = grid
        self.config = config
        self.map_ref = map_ref or {"kind": "inline"}
        self.base = base_costmap(grid, config.robot_radius)
        self.ped_base = base_costmap(grid, config.ped_radius)
        self.clearance = clearance_field(grid)
        self.walls = WallIndex(grid)
        self.outcome = Outcome.RUNNING
        self.scenario = None
        self._log: list[str] = []
        self._visible = []
        self._last_obs: Observation | None = None

    @property
    def visible(self):
        """Pedestrian estimates from the most recent sensing pass."""
        return self._visible

    @property
    def last_observation(self) -> "Observation":
        if self._last_obs is None:
            raise RuntimeError("reset() must be called before reading observations")
        return self._last_obs

    # ------------------------------------------------------------- helpers

    def _plan_agent_path(self, agent: Agent):
        try:
            path = plan_astar(self.ped_base, agent.position, agent.goal)
        except (NoPathError, InvalidEndpointError):
            agent.path = []  # fall back to walking straight at the goal
            agent.path_cursor = 0
            return
        agent.path = [np.asarray(self.ped_base.cell_to_world(c)) for c in path]
        agent.path_cursor = 0

    def _prepay_waypoints(self):
        self._paid = {
            i
            for i, p in enumerate(self.waypoints.points)
            if math.hypot(p[0] - self.pose[0], p[1] - self.pose[1])
            <= self.config.reward.waypoint_bonus_radius
        }

    def _robot_body(self):
        vx = self.v * math.cos(self.pose[2])
        vy = self.v * math.sin(self.pose[2])
        return RobotBody(
            position=np.array(self.pose[:2]),
            velocity=np.array([vx, vy]),
            radius=self.config.robot_radius,
        )

    def _sense(self):
        return visible_pedestrians(self.pose, self.agents, self.grid, self.config.sensor)

    def _ped_costmap(self, visible):
        if self.config.global_planner == "astar":
            return lethal_pedestrians(self.base, visible, self.config.ped_collision_dist)
        return inflate_pedestrians(self.base, visible, self.config.gaussian)

    def _build_observation(self, visible) -> Observation:
        x, y, theta = self.pose
        gx, gy = self.scenario.robot_goal
        raw = {
            "goal_distance": math.hypot(gx - x, gy - y),
            "goal_bearing": wrap_angle(math.atan2(gy - y, gx - x) - theta),
            "prev_v": self.v,
            "prev_w": self.w,
            "ego_map": ego_local_map(self.grid, self.pose),
            "ped_map": pedestrian_map(visible, self.pose),
            "waypoints": [
                (
                    math.hypot(p[0] - x, p[1] - y),
                    wrap_angle(math.atan2(p[1] - y, p[0] - x) - theta),
                )
                for p in self.waypoints.upcoming(WAYPOINT_OBS_COUNT)
            ],
            "pedestrians": [
                (p.distance, p.bearing, p.relative_heading) for p in visible
            ],
        }
        return normalize_observation(raw, self.config)

    # --------------------------------------------------------------- reset

    def reset(self, scenario) -> Observation:
        """Place robot and crowd, plan the initial waypoints, log the header."""
        cfg = self.config
        self.scenario = scenario
        self.rng = np.random.default_rng(cfg.seed)
        self.outcome = Outcome.RUNNING
        self.step_index = 0
        self.v = 0.0
        self.w = 0.0
        self.consecutive_wall_hits = 0
        self.replan_count = 0

        start = tuple(float(c) for c in scenario.robot_start)
        goal = tuple(float(c) for c in scenario.robot_goal)
        heading = float(self.rng.uniform(-math.pi, math.pi))
        self.pose = (start[0], start[1], heading)

        # the initial plan ignores pedestrians: the crowd has not been observed yet
        try:
            path = plan_astar(self.base, start, goal)
        except (NoPathError, InvalidEndpointError) as exc:
            raise ScenarioError(f"robot goal unreachable from start: {exc}") from exc
        self.waypoints = extract_waypoints(path, self.base, cfg.waypoint_spacing)
        self._prepay_waypoints()
        self.waypoints.advance(self.pose[:2])

        self.agents = []
        for i, (ped_start, ped_goal) in enumerate(
            zip(scenario.ped_starts, scenario.ped_goals)
        ):
            agent = Agent(
                id=i,
                position=np.asarray(ped_start, dtype=float),
                velocity=np.zeros(2),
                goal=np.asarray(ped_goal, dtype=float),
                radius=cfg.ped_radius,
                preferred_speed=cfg.ped_preferred_speed,
                max_speed=cfg.ped_max_speed,
            )
            self._plan_agent_path(agent)
            self.agents.append(agent)

        visible = self._sense()
        self._visible = visible
        self._log = [
            REPLAY_HEADER,
            _json_line("map", self.map_ref),
            _json_line("config", cfg.to_dict()),
            _json_line("scenario", scenario.to_dict()),
        ]
        self._last_obs = self._build_observation(visible)
        return self._last_obs

    # ---------------------------------------------------------------- step

    def step(self, action):
        """Advance the world by one timestep; returns (obs, reward, outcome, info)."""
        if self.scenario is None:
            raise RuntimeError("reset() must be called before step()")
        if self.outcome.terminal:
            raise EpisodeOverError(f"episode already ended with {self.outcome.value}")
        cfg = self.config
        self.step_index += 1

        cmd_v = min(max(float(action[0]), -V_MAX), V_MAX)
        cmd_w = min(max(float(action[1]), -W_MAX), W_MAX)
        applied_v, applied_w = cmd_v, cmd_w
        pre_pose = self.pose
        target_wp = self.waypoints.current()

        new_pose = integrate(pre_pose, applied_v, applied_w, cfg.dt)
        wall_hit = disc_hits_occupied(self.grid, new_pose[:2], cfg.robot_radius)
        substituted = False
        if wall_hit:
            self.consecutive_wall_hits += 1
            if self.consecutive_wall_hits >= cfg.wall_hit_limit:
                # enough consecutive hits: replace the whole step with a
                # uniformly random admissible action and restart the count
                applied_v = float(self.rng.uniform(-V_MAX, V_MAX))
                applied_w = float(self.rng.uniform(-W_MAX, W_MAX))
                substituted = True
                self.consecutive_wall_hits = 0
                candidate = integrate(pre_pose, applied_v, applied_w, cfg.dt)
                if disc_hits_occupied(self.grid, candidate[:2], cfg.robot_radius):
                    self.pose = (pre_pose[0], pre_pose[1], candidate[2])
                else:
                    self.pose = candidate
            else:
                # blocked: stay in place but keep the commanded rotation
                self.pose = (pre_pose[0], pre_pose[1], new_pose[2])
        else:
            self.consecutive_wall_hits = 0
            self.pose = new_pose
        self.v, self.w = applied_v, applied_w

        step_crowd(self.agents, self._robot_body(), self.grid, self.scenario.mode,
                   cfg.dt, wall_index=self.walls)
        for agent in self.agents:
            if agent.goal_reached:
                reassign_goal(agent, self.grid, self.rng)
                self._plan_agent_path(agent)

        visible = self._sense()
        self._visible = visible

        # waypoint bookkeeping against the pre-step target
        x, y, theta = self.pose
        d_prev = math.hypot(target_wp[0] - pre_pose[0], target_wp[1] - pre_pose[1])
        d_new = math.hypot(target_wp[0] - x, target_wp[1] - y)
        alpha_prev = abs(
            wrap_angle(
                math.atan2(target_wp[1] - pre_pose[1], target_wp[0] - pre_pose[0])
                - pre_pose[2]
            )
        )
        alpha_new = abs(wrap_angle(math.atan2(target_wp[1] - y, target_wp[0] - x) - theta))

        waypoint_entered = False
        for idx, point in enumerate(self.waypoints.points):
            if idx in self._paid:
                continue
            if math.hypot(point[0] - x, point[1] - y) <= cfg.reward.waypoint_bonus_radius:
                self._paid.add(idx)
                waypoint_entered = True
        self.waypoints.advance((x, y))

        replan_event = None
        if cfg.global_planner != "fixed" and should_replan(self.waypoints, visible):
            outcome = replan_or_keep(
                self.waypoints,
                self._ped_costmap(visible),
                (x, y),
                self.scenario.robot_goal,
                cfg.max_steps - self.step_index,
                cfg.dt,
                V_MAX,
            )
            replan_event = {"kind": outcome.kind.value, "reason": outcome.reason}
            if outcome.kind is PlanKind.NEW_PLAN:
                self.waypoints = outcome.waypoints
                self._prepay_waypoints()
                self.waypoints.advance((x, y))
                self.replan_count += 1

        ped_dist = min(
            (math.hypot(a.position[0] - x, a.position[1] - y) for a in self.agents),
            default=math.inf,
        )
        goal_dist = math.hypot(
            self.scenario.robot_goal[0] - x, self.scenario.robot_goal[1] - y
        )
        if ped_dist < cfg.ped_collision_dist:
            self.outcome = Outcome.PEDESTRIAN_COLLISION
        elif goal_dist <= cfg.goal_radius:
            self.outcome = Outcome.SUCCESS
        elif self.step_index >= cfg.max_steps:
            self.outcome = Outcome.TIMEOUT

        nearest_visible = visible[0].distance if visible else math.inf
        reward = compute_reward(
            cfg.reward,
            d_prev=d_prev,
            d_new=d_new,
            alpha_prev=alpha_prev,
            alpha_new=alpha_new,
            nearest_visible_ped=nearest_visible,
            outcome=self.outcome,
            wall_hit=wall_hit,
            waypoint_entered=waypoint_entered,
        )

        info = {
            "step": self.step_index,
            "wall_hit": wall_hit,
            "substituted_action": substituted,
            "applied_action": (applied_v, applied_w),
            "replan": replan_event,
            "replan_count": self.replan_count,
            "nearest_ped_distance": ped_dist,
            "goal_distance": goal_dist,
            "waypoint_cursor": self.waypoints.cursor,
        }

        record = {
            "i": self.step_index,
            "cmd": [cmd_v, cmd_w],
            "applied": [applied_v, applied_w],
            "pose": [x, y, theta],
            "wall_hit": wall_hit,
            "substituted": substituted,
            "wp_bonus": waypoint_entered,
            "cursor": self.waypoints.cursor,
            "replan": replan_event,
            "reward": {**{k: v for k, v in reward.terms().items()}, "total": reward.total},
            "outcome": self.outcome.value,
            "ped_dist": None if math.isinf(ped_dist) else ped_dist,
            "peds": [[float(a.position[0]), float(a.position[1])] for a in self.agents],
        }
        self._log.append(_json_line("step", record))
        if self.outcome.terminal:
            self._log.append(
                _json_line("end", {"outcome": self.outcome.value, "steps": self.step_index})
            )

        self._last_obs = self._build_observation(visible)
        return self._last_obs, reward, self.outcome, info

    # ---------------------------------------------------------------- logs

    def replay_log(self) -> str:
        """Line-oriented episode trace; only complete after a terminal outcome."""
        if not self.outcome.terminal:
            raise RuntimeError("episode still running; replay log is incomplete")
        return "\n".join(self._log) + "\n"


def parse_replay_log(text: str) -> dict:
    """Split a replay log into its records; raises ReplayFormatError with the
    offending line number."""
    lines = text.splitlines()
    if not lines or lines[0] != REPLAY_HEADER:
        raise ReplayFormatError(f"bad header (expected {REPLAY_HEADER!r})", 1)
    out = {"map": None, "config": None, "scenario": None, "steps": [], "end": None}
    expected = {"map": 2, "config": 3, "scenario": 4}
    for number, line in enumerate(lines[1:], start=2):
        tag, _, payload = line.partition(" ")
        try:
            data = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise ReplayFormatError(f"invalid JSON in {tag!r} record: {exc}", number)
        if tag in expected:
            if number != expected[tag]:
                raise ReplayFormatError(f"{tag!r} record out of order", number)
            out[tag] = data
        elif tag == "step":
            out["steps"].append(data)
        elif tag == "end":
            out["end"] = data
        else:
            raise ReplayFormatError(f"unknown record tag {tag!r}", number)
    for key in ("map", "config", "scenario"):
        if out[key] is None:
            raise ReplayFormatError(f"missing {key!r} record", len(lines))
    if out["end"] is None:
        raise ReplayFormatError("missing 'end' record (truncated log?)", len(lines))
    return out


def replay_episode(parsed: dict) -> str:
    """Re-simulate a parsed replay log from its recorded commands.

    The regenerated log is byte-identical to the original for an untampered
    log; any edit shows up as a byte difference.
    """
    from .mapgen import grid_from_ref
    from .scenario import Scenario

    grid = grid_from_ref(parsed["map"])
    config = EpisodeConfig.from_dict(parsed["config"])
    scenario = Scenario.from_dict(parsed["scenario"])
    episode = Episode(grid, config, map_ref=parsed["map"])
    episode.reset(scenario)
    for record in parsed["steps"]:
        episode.step(record["cmd"])
        if episode.outcome.terminal:
            break
    return episode.replay_log()


def first_divergence(original: str, regenerated: str):
    """(line_number, original_line, regenerated_line) of the first differing
    line, or None when the logs match byte for byte."""
    if original == regenerated:
        return None
    a = original.splitlines()
    b = regenerated.splitlines()
    for i, (la, lb) in enumerate(zip(a, b), start=1):
        if la != lb:
            return i, la, lb
    i = min(len(a), len(b)) + 1
    return i, a[i - 1] if len(a) >= i else "<missing>", b[i - 1] if len(b) >= i else "<missing>"
