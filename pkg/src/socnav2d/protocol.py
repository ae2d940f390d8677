"""Newline-delimited JSON wire format for driving episodes from another
process (RL trainers, evaluation clients).

Every request gets exactly one response. The 100x100 maps travel as row-major
flat arrays of 0/1 integers; floats are serialized by Python's shortest
round-trip repr (>= 9 significant digits whenever they matter).
"""

from __future__ import annotations

import json
import math

from .engine import OBSERVATION_LENGTH, Observation, RewardBreakdown

PROTOCOL_VERSION = "socnav2d/1"

REQUEST_TYPES = ("reset", "step", "close", "act")
ERROR_CODES = (
    "parse",
    "bad_request",
    "bad_action",
    "no_episode",
    "episode_over",
    "internal",
)

CROWD_MODES = ("cooperative", "uncooperative")


class ProtocolError(Exception):
    """Carries the machine-readable error code for an Error response."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode(message: dict) -> str:
    """One protocol message as a single JSON line (trailing newline included)."""
    return json.dumps(message, sort_keys=True, separators=(",", ":")) + "\n"


def decode(line: str) -> dict:
    """Parse one line into a message dict; raises ProtocolError on bad input."""
    line = line.strip()
    if not line:
        raise ProtocolError("parse", "empty line")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse", f"invalid JSON: {exc}") from exc
    if not isinstance(message, dict):
        raise ProtocolError("parse", "message must be a JSON object")
    if "type" not in message:
        raise ProtocolError("parse", "missing required field 'type'")
    return message


def _require(message: dict, field: str, kind=None):
    if field not in message:
        raise ProtocolError("parse", f"missing required field {field!r}")
    value = message[field]
    if kind is not None and not isinstance(value, kind):
        raise ProtocolError("bad_request", f"field {field!r} has the wrong type")
    return value


def validate_reset(message: dict) -> dict:
    """Normalized Reset parameters: map ref, seed, crowd, planner, reward flags."""
    map_ref = _require(message, "map")
    if isinstance(map_ref, str):
        map_ref = {"kind": "file", "path": map_ref}
    elif not isinstance(map_ref, dict):
        raise ProtocolError("bad_request", "field 'map' must be a path or an object")
    seed = _require(message, "seed", int)
    n_peds = _require(message, "n_peds", int)
    if n_peds < 0:
        raise ProtocolError("bad_request", "field 'n_peds' must be >= 0")
    mode = _require(message, "mode", str)
    if mode not in CROWD_MODES:
        raise ProtocolError("bad_request", f"field 'mode' must be one of {CROWD_MODES}")
    global_planner = message.get("global_planner", "ppp")
    disabled = message.get("disabled_reward_terms", [])
    if not isinstance(disabled, list) or not all(isinstance(t, str) for t in disabled):
        raise ProtocolError("bad_request", "field 'disabled_reward_terms' must be a list of names")
    return {
        "map": map_ref,
        "seed": seed,
        "n_peds": n_peds,
        "mode": mode,
        "global_planner": global_planner,
        "disabled_reward_terms": tuple(disabled),
    }


def validate_step_action(message: dict):
    """The normalized [-1, 1] action pair from a Step request."""
    action = _require(message, "action", list)
    if len(action) != 2 or not all(isinstance(a, (int, float)) for a in action):
        raise ProtocolError("bad_action", "field 'action' must be [v_norm, w_norm]")
    v_norm, w_norm = float(action[0]), float(action[1])
    if not (math.isfinite(v_norm) and math.isfinite(w_norm)):
        raise ProtocolError("bad_action", "action components must be finite")
    if abs(v_norm) > 1.0 or abs(w_norm) > 1.0:
        raise ProtocolError("bad_action", "action components must lie in [-1, 1]")
    return v_norm, w_norm


def observation_payload(obs: Observation) -> dict:
    """Observation as flat JSON-friendly arrays plus the presence mask."""
    return {
        "goal": [float(v) for v in obs.goal],
        "ego_map": [int(v) for v in obs.ego_map.reshape(-1)],
        "ped_map": [int(v) for v in obs.ped_map.reshape(-1)],
        "prev_action": [float(v) for v in obs.prev_action],
        "waypoints": [float(v) for v in obs.waypoints.reshape(-1)],
        "pedestrians": [float(v) for v in obs.pedestrians.reshape(-1)],
        "pedestrian_mask": [int(v) for v in obs.ped_mask],
    }


def observation_payload_length(payload: dict) -> int:
    return sum(
        len(payload[k])
        for k in (
            "goal",
            "ego_map",
            "ped_map",
            "prev_action",
            "waypoints",
            "pedestrians",
            "pedestrian_mask",
        )
    )


def reward_payload(reward: RewardBreakdown) -> dict:
    payload = {name: float(value) for name, value in reward.terms().items()}
    payload["total"] = float(reward.total)
    return payload


def obs_response(obs: Observation) -> dict:
    return {
        "type": "obs",
        "version": PROTOCOL_VERSION,
        "observation": observation_payload(obs),
        "observation_length": OBSERVATION_LENGTH,
    }


def step_response(obs: Observation, reward: RewardBreakdown, outcome, step_index: int) -> dict:
    return {
        "type": "step_result",
        "observation": observation_payload(obs),
        "reward_breakdown": reward_payload(reward),
        "outcome": outcome.value,
        "step_index": step_index,
    }


def error_response(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


def closed_response() -> dict:
    return {"type": "closed"}


# Policy-side protocol: the benchmark connects to an external policy server
# and asks it to act on each observation. Same framing, reversed direction.

def act_request(obs: Observation, episode: int, step: int) -> dict:
    return {
        "type": "act",
        "episode": episode,
        "step": step,
        "observation": observation_payload(obs),
    }


def validate_action_reply(message: dict):
    if message.get("type") != "action":
        raise ProtocolError("bad_request", "policy reply must have type 'action'")
    return validate_step_action(message)
