"""Benchmark harness: runs planner combinations over generated maps and
aggregates success / timing / social-compliance metrics."""

from __future__ import annotations

import math
import socket
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import protocol
from .dwa import DwaConfig, DwaWorld, dwa_step
from .engine import Episode, EpisodeConfig, Outcome, V_MAX, W_MAX
from .mapgen import MapGenParams, generate_indoor_map, mapgen_ref
from .orca import CrowdMode
from .scenario import Scenario, sample_scenario
from .sensing import wrap_angle

GLOBAL_PLANNERS = ("ppp", "astar", "fixed")
LOCAL_PLANNERS = ("dwa", "scripted", "external")

DEFAULT_PSV_DISTANCE = 0.45  # personal-space threshold, between collision and d_thresh


@dataclass(frozen=True)
class PlannerCombo:
    global_planner: str = "ppp"
    local_planner: str = "scripted"

    def __post_init__(self):
        if self.global_planner not in GLOBAL_PLANNERS:
            raise ValueError(
                f"unknown global planner {self.global_planner!r}; valid: {GLOBAL_PLANNERS}"
            )
        if self.local_planner not in LOCAL_PLANNERS:
            raise ValueError(
                f"unknown local planner {self.local_planner!r}; valid: {LOCAL_PLANNERS}"
            )

    @property
    def label(self) -> str:
        return f"{self.local_planner}+{self.global_planner}"

    @classmethod
    def parse(cls, text: str) -> "PlannerCombo":
        local, _, global_p = text.partition("+")
        return cls(global_planner=global_p or "ppp", local_planner=local)


class PolicyDisconnected(Exception):
    """The external policy endpoint went away mid-episode."""


class ScriptedFollower:
    """Pure-pursuit waypoint tracker with no collision avoidance of its own."""

    def __init__(self, turn_gain: float = 2.0):
        self.turn_gain = turn_gain

    def act(self, episode: Episode):
        target = episode.waypoints.current()
        x, y, theta = episode.pose
        bearing = wrap_angle(math.atan2(target[1] - y, target[0] - x) - theta)
        w = min(max(self.turn_gain * bearing, -W_MAX), W_MAX)
        v = max(0.0, V_MAX * (1.0 - abs(bearing) / (math.pi / 2)))
        return v, w


class DwaPolicy:
    """Local DWA steering toward the current global waypoint."""

    def __init__(self, config: DwaConfig | None = None):
        self.config = config or DwaConfig()

    def act(self, episode: Episode):
        world = DwaWorld(
            grid=episode.grid,
            clearance=episode.clearance,
            pedestrians=tuple(
                (p.world_position, p.velocity) for p in episode.visible
            ),
        )
        target = episode.waypoints.current()
        return dwa_step(
            episode.pose,
            episode.v,
            episode.w,
            (target[0], target[1]),
            world,
            self.config,
            episode.config.dt,
        )


class ExternalPolicyClient:
    """Asks a policy server for actions over the newline-JSON act protocol."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        host, _, port = endpoint.rpartition(":")
        try:
            self._sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                                  timeout=timeout)
        except OSError as exc:
            raise PolicyDisconnected(f"cannot connect to policy at {endpoint}: {exc}") from exc
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")
        self.episode_counter = 0

    def act(self, episode: Episode):
        obs = episode.last_observation
        request = protocol.act_request(obs, self.episode_counter, episode.step_index)
        try:
            self._file.write(protocol.encode(request))
            self._file.flush()
            line = self._file.readline()
        except OSError as exc:
            raise PolicyDisconnected(str(exc)) from exc
        if not line:
            raise PolicyDisconnected("policy closed the connection")
        try:
            v_norm, w_norm = protocol.validate_action_reply(protocol.decode(line))
        except protocol.ProtocolError as exc:
            raise PolicyDisconnected(f"bad policy reply: {exc}") from exc
        return v_norm * V_MAX, w_norm * W_MAX

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def make_policy(combo: PlannerCombo, policy_endpoint: str | None = None):
    if combo.local_planner == "scripted":
        return ScriptedFollower()
    if combo.local_planner == "dwa":
        return DwaPolicy()
    if policy_endpoint is None:
        raise ValueError("the external local planner needs --policy-endpoint")
    return ExternalPolicyClient(policy_endpoint)


@dataclass(frozen=True)
class EpisodeResult:
    map_index: int
    slot: int
    combo: str
    mode: str
    n_peds: int
    scenario_seed: int
    engine_seed: int
    outcome: str
    steps: int
    reward_sum: float
    min_ped_distance: float | None
    psv_fraction: float
    replans: int
    aborted: bool = False
    replay: str | None = None


def run_episode(
    grid,
    scenario: Scenario,
    config: EpisodeConfig,
    combo: PlannerCombo,
    psv_distance: float = DEFAULT_PSV_DISTANCE,
    policy=None,
    map_ref: dict | None = None,
    keep_replay: bool = False,
    context: dict | None = None,
) -> EpisodeResult:
    """Drive one episode to termination with the combo's planners."""
    config = EpisodeConfig.from_dict({**config.to_dict(), "global_planner": combo.global_planner})
    episode = Episode(grid, config, map_ref=map_ref)
    episode.reset(scenario)
    if policy is None:
        policy = make_policy(combo)
    if isinstance(policy, ExternalPolicyClient):
        policy.episode_counter += 1

    reward_sum = 0.0
    close_steps = 0
    min_ped = math.inf
    aborted = False
    while not episode.outcome.terminal:
        try:
            action = policy.act(episode)
        except PolicyDisconnected:
            aborted = True
            break
        _, reward, outcome, info = episode.step(action)
        reward_sum += reward.total
        d = info["nearest_ped_distance"]
        if d < min_ped:
            min_ped = d
        if d < psv_distance:
            close_steps += 1

    steps = episode.step_index
    ctx = context or {}
    return EpisodeResult(
        map_index=ctx.get("map_index", 0),
        slot=ctx.get("slot", 0),
        combo=combo.label,
        mode=scenario.mode.value,
        n_peds=scenario.n_pedestrians,
        scenario_seed=ctx.get("scenario_seed", scenario.seed),
        engine_seed=config.seed,
        outcome="aborted" if aborted else episode.outcome.value,
        steps=steps,
        reward_sum=reward_sum,
        min_ped_distance=None if math.isinf(min_ped) else min_ped,
        psv_fraction=(close_steps / steps) if steps else 0.0,
        replans=episode.replan_count,
        aborted=aborted,
        replay=episode.replay_log() if keep_replay and not aborted else None,
    )


# ------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class MetricsRow:
    episodes: int
    sr: float  # % successful
    ts: float | None  # mean steps over successful episodes (None without successes)
    psv: float  # mean % of steps closer than the personal-space threshold
    co: float  # % pedestrian-collision episodes
    to: float  # % timeout episodes

    def as_dict(self):
        return asdict(self)


def _metrics_row(results) -> MetricsRow:
    n = len(results)
    successes = [r for r in results if r.outcome == Outcome.SUCCESS.value]
    collisions = [r for r in results if r.outcome == Outcome.PEDESTRIAN_COLLISION.value]
    timeouts = [r for r in results if r.outcome == Outcome.TIMEOUT.value]
    return MetricsRow(
        episodes=n,
        sr=100.0 * len(successes) / n,
        ts=(sum(r.steps for r in successes) / len(successes)) if successes else None,
        psv=100.0 * sum(r.psv_fraction for r in results) / n,
        co=100.0 * len(collisions) / n,
        to=100.0 * len(timeouts) / n,
    )


@dataclass(frozen=True)
class MetricsReport:
    overall: MetricsRow
    by_mode: dict
    by_density: dict
    aborted: int

    def as_dict(self):
        return {
            "overall": self.overall.as_dict(),
            "by_mode": {k: v.as_dict() for k, v in sorted(self.by_mode.items())},
            "by_density": {str(k): v.as_dict() for k, v in sorted(self.by_density.items())},
            "aborted": self.aborted,
        }


def aggregate(results) -> MetricsReport:
    """Fold episode results into SR/TS/PSV/CO/TO, with mode and density splits.

    Aborted episodes are excluded from every aggregate and reported separately.
    """
    results = sorted(results, key=lambda r: (r.map_index, r.slot, r.combo))
    aborted = sum(1 for r in results if r.aborted)
    valid = [r for r in results if not r.aborted]
    if not valid:
        raise ValueError("no completed episodes to aggregate")
    by_mode = {}
    for mode in sorted({r.mode for r in valid}):
        by_mode[mode] = _metrics_row([r for r in valid if r.mode == mode])
    by_density = {}
    for density in sorted({r.n_peds for r in valid}):
        by_density[density] = _metrics_row([r for r in valid if r.n_peds == density])
    return MetricsReport(
        overall=_metrics_row(valid),
        by_mode=by_mode,
        by_density=by_density,
        aborted=aborted,
    )


# ------------------------------------------------------------ benchmark runs

@dataclass(frozen=True)
class BenchConfig:
    master_seed: int = 0
    n_maps: int = 6
    episodes_per_map: int = 50
    densities: tuple = (3, 4, 5, 6, 7, 8, 9, 10)
    modes: tuple = ("cooperative", "uncooperative")
    combos: tuple = (PlannerCombo("ppp", "scripted"),)
    map_params: MapGenParams = field(default_factory=MapGenParams)
    psv_distance: float = DEFAULT_PSV_DISTANCE
    policy_endpoint: str | None = None
    workers: int = 0  # 0 = one per CPU (capped)
    save_replays: int = 0


def _slot_assignment(config: BenchConfig, slot: int):
    """Density and mode for an episode slot, cycling both axes evenly."""
    density = config.densities[slot % len(config.densities)]
    mode = config.modes[(slot // len(config.densities)) % len(config.modes)]
    return density, mode


def _episode_specs(config: BenchConfig):
    specs = []
    for map_index in range(config.n_maps):
        map_seed = int(
            np.random.SeedSequence([config.master_seed, map_index]).generate_state(1)[0]
        )
        for slot in range(config.episodes_per_map):
            density, mode = _slot_assignment(config, slot)
            seeds = np.random.SeedSequence(
                [config.master_seed, map_index, slot]
            ).generate_state(2)
            for combo in config.combos:
                specs.append(
                    {
                        "map_index": map_index,
                        "map_seed": map_seed,
                        "map_params": asdict(config.map_params),
                        "slot": slot,
                        "combo": (combo.global_planner, combo.local_planner),
                        "n_peds": int(density),
                        "mode": mode,
                        "scenario_seed": int(seeds[0]),
                        "engine_seed": int(seeds[1]),
                        "psv_distance": config.psv_distance,
                        "policy_endpoint": config.policy_endpoint,
                        "keep_replay": False,
                    }
                )
    for i in range(min(config.save_replays, len(specs))):
        specs[i]["keep_replay"] = True
    return specs


_worker_grid_cache: dict = {}


def _run_spec(spec: dict) -> EpisodeResult:
    """Worker entry point; deterministic given the spec alone."""
    key = (spec["map_seed"], tuple(sorted(spec["map_params"].items())))
    if key not in _worker_grid_cache:
        _worker_grid_cache[key] = generate_indoor_map(
            spec["map_seed"], MapGenParams(**spec["map_params"])
        )
    grid = _worker_grid_cache[key]
    combo = PlannerCombo(*spec["combo"])
    rng = np.random.default_rng(spec["scenario_seed"])
    scenario = sample_scenario(
        grid, rng, spec["n_peds"], CrowdMode(spec["mode"]), seed=spec["scenario_seed"]
    )
    config = EpisodeConfig(seed=spec["engine_seed"], global_planner=combo.global_planner)
    policy = make_policy(combo, spec["policy_endpoint"])
    try:
        return run_episode(
            grid,
            scenario,
            config,
            combo,
            psv_distance=spec["psv_distance"],
            policy=policy,
            map_ref=mapgen_ref(spec["map_seed"], MapGenParams(**spec["map_params"])),
            keep_replay=spec["keep_replay"],
            context={
                "map_index": spec["map_index"],
                "slot": spec["slot"],
                "scenario_seed": spec["scenario_seed"],
            },
        )
    finally:
        if isinstance(policy, ExternalPolicyClient):
            policy.close()


def run_benchmark(config: BenchConfig, progress=None):
    """Execute the full sweep; returns (results, {combo_label: MetricsReport}).

    Episodes run in parallel worker processes; the fold is order-independent,
    so the report does not depend on worker count.
    """
    specs = _episode_specs(config)
    results = []
    if config.workers == 1 or config.policy_endpoint is not None:
        # external policies hold per-connection state; keep them in-process
        for i, spec in enumerate(specs):
            results.append(_run_spec(spec))
            if progress:
                progress(i + 1, len(specs))
    else:
        import os

        workers = config.workers or min(os.cpu_count() or 1, 8)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, result in enumerate(pool.map(_run_spec, specs, chunksize=4)):
                results.append(result)
                if progress:
                    progress(i + 1, len(specs))
    results.sort(key=lambda r: (r.map_index, r.slot, r.combo))
    reports = {}
    for combo in config.combos:
        combo_results = [r for r in results if r.combo == combo.label]
        reports[combo.label] = aggregate(combo_results)
    return results, reports
