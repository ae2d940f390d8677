#!/usr/bin/env python3
"""Regenerate the frozen protocol transcripts under tests/golden/.

Each transcript is a block of alternating client (C) and server (S) lines,
blocks separated by blank lines. Lines starting with '#' are comments. Run
from the repository root:

    python3 scripts/make_golden_transcripts.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from socnav2d import protocol
from socnav2d.server import EnvSession

MAP_REF = {
    "kind": "mapgen",
    "seed": 12,
    "params": {"width_m": 12.0, "height_m": 12.0},
}


def reset_line(seed, n_peds=2, mode="cooperative", **extra):
    msg = {"type": "reset", "map": MAP_REF, "seed": seed, "n_peds": n_peds, "mode": mode}
    msg.update(extra)
    return protocol.encode(msg).rstrip("\n")


def step_line(v, w):
    return protocol.encode({"type": "step", "action": [v, w]}).rstrip("\n")


SESSIONS = [
    # plain session: reset, a few steps, close
    [
        reset_line(101),
        step_line(1.0, 0.0),
        step_line(0.5, -0.25),
        step_line(0.0, 1.0),
        step_line(-0.2, 0.0),
        step_line(1.0, -1.0),
        protocol.encode({"type": "close"}).rstrip("\n"),
    ],
    # error handling: the session stays usable after every error
    [
        step_line(0.1, 0.1),  # no episode yet
        "this is not json",
        protocol.encode({"type": "frobnicate"}).rstrip("\n"),
        protocol.encode({"type": "step"}).rstrip("\n"),  # missing field
        reset_line(55, mode="hostile"),  # bad mode
        reset_line(55),
        protocol.encode({"type": "step", "action": [1.5, 0.0]}).rstrip("\n"),  # out of range
        step_line(0.4, 0.2),
        protocol.encode({"type": "close"}).rstrip("\n"),
    ],
    # ablation flags change the reward stream on the same seed
    [
        reset_line(
            77,
            n_peds=3,
            mode="uncooperative",
            global_planner="astar",
            disabled_reward_terms=["waypoint_orientation", "ped_avoidance"],
        ),
        step_line(0.8, 0.1),
        step_line(0.8, 0.1),
        step_line(0.8, -0.3),
        protocol.encode({"type": "close"}).rstrip("\n"),
    ],
]


def main():
    out_path = Path(__file__).resolve().parents[1] / "tests" / "golden" / "protocol_transcripts.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# socnav2d protocol golden transcripts",
        "# C <request line> / S <response line>; blank line separates sessions",
    ]
    pairs = 0
    for session_lines in SESSIONS:
        lines.append("")
        session = EnvSession()
        for request in session_lines:
            response, _ = session.handle_line(request)
            lines.append("C " + request)
            lines.append("S " + protocol.encode(response).rstrip("\n"))
            pairs += 1
    out_path.write_text("\n".join(lines) + "\n")
    print(f"wrote {out_path} with {pairs} request/response pairs")


if __name__ == "__main__":
    main()
