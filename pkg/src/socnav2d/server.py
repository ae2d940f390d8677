"""Environment service: one episode session per connection, spoken in
newline-delimited JSON over TCP or stdio."""

from __future__ import annotations

import socketserver
import sys

import numpy as np

from . import protocol
from .engine import V_MAX, W_MAX, Episode, EpisodeConfig, EpisodeOverError, RewardConfig
from .mapgen import grid_from_ref
from .orca import CrowdMode
from .scenario import ScenarioSamplingError, sample_scenario


class EnvSession:
    """Request/response state machine for one client connection.

    Sessions share nothing but immutable grids; an error in one request leaves
    the session usable for the next.
    """

    def __init__(self, grid_cache: dict | None = None):
        self.episode: Episode | None = None
        self.step_index = 0
        self._grid_cache = grid_cache if grid_cache is not None else {}

    def _grid_for(self, map_ref: dict):
        key = protocol.encode(map_ref)
        if key not in self._grid_cache:
            self._grid_cache[key] = grid_from_ref(map_ref)
        return self._grid_cache[key]

    def _handle_reset(self, message: dict) -> dict:
        params = protocol.validate_reset(message)
        try:
            grid = self._grid_for(params["map"])
        except Exception as exc:
            raise protocol.ProtocolError("bad_request", f"cannot load map: {exc}") from exc
        try:
            reward = RewardConfig(disabled_terms=params["disabled_reward_terms"])
            config = EpisodeConfig(
                seed=params["seed"],
                global_planner=params["global_planner"],
                reward=reward,
            )
        except ValueError as exc:
            raise protocol.ProtocolError("bad_request", str(exc)) from exc
        rng = np.random.default_rng(params["seed"])
        try:
            scenario = sample_scenario(
                grid,
                rng,
                params["n_peds"],
                CrowdMode(params["mode"]),
                robot_radius=config.robot_radius,
                ped_radius=config.ped_radius,
                seed=params["seed"],
            )
        except ScenarioSamplingError as exc:
            raise protocol.ProtocolError("bad_request", str(exc)) from exc
        self.episode = Episode(grid, config, map_ref=params["map"])
        obs = self.episode.reset(scenario)
        self.step_index = 0
        return protocol.obs_response(obs)

    def _handle_step(self, message: dict) -> dict:
        if self.episode is None:
            raise protocol.ProtocolError("no_episode", "send a reset request first")
        v_norm, w_norm = protocol.validate_step_action(message)
        action = (v_norm * V_MAX, w_norm * W_MAX)
        try:
            obs, reward, outcome, _ = self.episode.step(action)
        except EpisodeOverError as exc:
            raise protocol.ProtocolError("episode_over", str(exc)) from exc
        self.step_index += 1
        return protocol.step_response(obs, reward, outcome, self.step_index)

    def handle_line(self, line: str) -> tuple[dict, bool]:
        """Returns (response, keep_session_open)."""
        try:
            message = protocol.decode(line)
            kind = message["type"]
            if kind == "reset":
                return self._handle_reset(message), True
            if kind == "step":
                return self._handle_step(message), True
            if kind == "close":
                self.episode = None
                return protocol.closed_response(), False
            raise protocol.ProtocolError("bad_request", f"unknown request type {kind!r}")
        except protocol.ProtocolError as exc:
            return protocol.error_response(exc.code, str(exc)), True
        except Exception as exc:  # a bug must not take the session down
            return protocol.error_response("internal", f"{type(exc).__name__}: {exc}"), True


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = EnvSession(grid_cache=self.server.grid_cache)
        for raw in self.rfile:
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                response, keep = protocol.error_response("parse", "not valid UTF-8"), True
            else:
                response, keep = session.handle_line(line)
            self.wfile.write(protocol.encode(response).encode("utf-8"))
            self.wfile.flush()
            if not keep:
                break


class EnvServer(socketserver.ThreadingTCPServer):
    """One thread per connection; grids are cached and shared read-only."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address):
        super().__init__(address, _LineHandler)
        self.grid_cache: dict = {}


def serve_tcp(host: str, port: int):
    """Run the TCP environment service until interrupted."""
    server = EnvServer((host, port))
    bound = server.server_address
    print(f"socnav2d env service listening on {bound[0]}:{bound[1]}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


def serve_stdio(stdin=None, stdout=None):
    """Speak the protocol over stdio (one session; used by subprocess trainers)."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = EnvSession()
    for line in stdin:
        response, keep = session.handle_line(line)
        stdout.write(protocol.encode(response))
        stdout.flush()
        if not keep:
            break
    return 0
