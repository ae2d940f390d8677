"""Command line entry point.

Subcommands: bench (run the benchmark sweep and write reports + figures),
serve (environment service for external trainers), render (replay logs or
costmap dumps to PNG), mapgen (write generated maps), replay (verify a log
re-simulates byte-identically).

Exit codes: 0 success, 1 runtime failure or replay divergence, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import BenchConfig, PlannerCombo, run_benchmark
from .engine import ReplayFormatError, first_divergence, parse_replay_log, replay_episode
from .gridmap import _parse_kv_lines, save_map
from .mapgen import MapGenParams, generate_indoor_map
from .planner import COSTMAP_DUMP_HEADER
from .report import write_report_files

BENCH_CONFIG_KEYS = {
    "seed": int,
    "maps": int,
    "episodes": int,
    "combos": str,
    "densities": str,
    "modes": str,
    "map_width": float,
    "map_height": float,
    "clutter": float,
    "psv_distance": float,
    "workers": int,
    "save_replays": int,
    "policy_endpoint": str,
    "out": str,
}


def _load_config_file(path, parser):
    try:
        raw = _parse_kv_lines(Path(path).read_text())
    except FileNotFoundError:
        parser.error(f"config file not found: {path}")
    except Exception as exc:
        parser.error(f"cannot parse config file {path}: {exc}")
    values = {}
    for key, text in raw.items():
        if key not in BENCH_CONFIG_KEYS:
            parser.error(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(BENCH_CONFIG_KEYS))}"
            )
        try:
            values[key] = BENCH_CONFIG_KEYS[key](text)
        except ValueError:
            parser.error(f"config key {key!r} has invalid value {text!r}")
    return values


def _parse_combos(text, parser):
    combos = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            combos.append(PlannerCombo.parse(token))
        except ValueError as exc:
            parser.error(str(exc))
    if not combos:
        parser.error("no planner combos given")
    return tuple(combos)


def _parse_int_list(text, parser, what):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        parser.error(f"invalid {what} list: {text!r}")


def cmd_bench(args, parser):
    file_values = _load_config_file(args.config, parser) if args.config else {}

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_values.get(key, default)

    combos_text = pick(args.combos, "combos", "scripted+ppp")
    modes_text = pick(args.modes, "modes", "cooperative,uncooperative")
    modes = tuple(m.strip() for m in modes_text.split(",") if m.strip())
    for mode in modes:
        if mode not in ("cooperative", "uncooperative"):
            parser.error(f"unknown crowd mode {mode!r}")
    config = BenchConfig(
        master_seed=pick(args.seed, "seed", 0),
        n_maps=pick(args.maps, "maps", 2),
        episodes_per_map=pick(args.episodes, "episodes", 10),
        densities=_parse_int_list(pick(args.densities, "densities", "3,5,8,10"), parser,
                                  "densities"),
        modes=modes,
        combos=_parse_combos(combos_text, parser),
        map_params=MapGenParams(
            width_m=pick(args.map_width, "map_width", 16.0),
            height_m=pick(args.map_height, "map_height", 16.0),
            clutter_density=pick(args.clutter, "clutter", 0.02),
        ),
        psv_distance=pick(args.psv_distance, "psv_distance", 0.45),
        policy_endpoint=pick(args.policy_endpoint, "policy_endpoint", None),
        workers=pick(args.workers, "workers", 0),
        save_replays=pick(args.save_replays, "save_replays", 0),
    )
    out_dir = Path(pick(args.out, "out", "bench_out"))

    def progress(done, total):
        if args.quiet:
            return
        if done % 10 == 0 or done == total:
            print(f"\r{done}/{total} episodes", end="", file=sys.stderr, flush=True)

    results, reports = run_benchmark(config, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    paths = write_report_files(out_dir, config, results, reports)
    print(paths["summary"].read_text(), end="")
    print(f"report files in {out_dir}/")
    return 0


def cmd_serve(args, parser):
    from .server import serve_stdio, serve_tcp

    if args.stdio:
        return serve_stdio()
    return serve_tcp(args.host, args.port)


def cmd_render(args, parser):
    from .render import render_costmap, render_replay

    in_path = Path(args.input)
    if not in_path.exists():
        parser.error(f"input file not found: {in_path}")
    first_line = in_path.read_text().splitlines()[0] if in_path.read_text() else ""
    try:
        if first_line == COSTMAP_DUMP_HEADER:
            with in_path.open() as fh:
                render_costmap(fh, args.out)
        else:
            render_replay(in_path.read_text(), args.out)
    except ReplayFormatError as exc:
        print(f"error: corrupt replay log: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def cmd_mapgen(args, parser):
    params = MapGenParams(
        width_m=args.width,
        height_m=args.height,
        clutter_density=args.clutter,
        corridor_width_m=args.corridor_width,
        min_room_m=args.min_room,
    )
    grid = generate_indoor_map(args.seed, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    image_path = out if out.suffix in (".pgm", ".png") else out.with_suffix(".pgm")
    save_map(grid, image_path)
    print(f"wrote {image_path} and {image_path.with_suffix('.meta')}")
    return 0


def cmd_replay(args, parser):
    path = Path(args.log)
    if not path.exists():
        parser.error(f"log file not found: {path}")
    text = path.read_text()
    try:
        parsed = parse_replay_log(text)
        regenerated = replay_episode(parsed)
    except ReplayFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: re-simulation failed: {exc}", file=sys.stderr)
        return 1
    divergence = first_divergence(text, regenerated)
    if divergence is None:
        print(f"replay OK: {len(parsed['steps'])} steps reproduce byte-identically")
        return 0
    line_number, original, regen = divergence
    step = "?"
    if original.startswith("step "):
        import json

        step = json.loads(original.partition(" ")[2]).get("i", "?")
    print(f"replay DIVERGED at line {line_number} (step {step}):", file=sys.stderr)
    print(f"  log:   {original[:120]}", file=sys.stderr)
    print(f"  resim: {regen[:120]}", file=sys.stderr)
    return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="socnav2d",
        description="2D indoor social-navigation benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run a benchmark sweep and write reports")
    bench.add_argument("--config", help="key/value config file; flags override it")
    bench.add_argument("--out", help="output directory (default bench_out)")
    bench.add_argument("--seed", type=int, help="master seed")
    bench.add_argument("--maps", type=int, help="number of generated maps")
    bench.add_argument("--episodes", type=int, help="episodes per map (per combo)")
    bench.add_argument("--combos", help="comma list like scripted+ppp,dwa+ppp,scripted+fixed")
    bench.add_argument("--densities", help="comma list of pedestrian counts")
    bench.add_argument("--modes", help="comma list from cooperative,uncooperative")
    bench.add_argument("--map-width", dest="map_width", type=float)
    bench.add_argument("--map-height", dest="map_height", type=float)
    bench.add_argument("--clutter", type=float, help="clutter rectangles per square meter")
    bench.add_argument("--psv-distance", dest="psv_distance", type=float)
    bench.add_argument("--workers", type=int, help="parallel workers (0 = auto)")
    bench.add_argument("--save-replays", dest="save_replays", type=int)
    bench.add_argument("--policy-endpoint", dest="policy_endpoint",
                       help="host:port of an external policy server")
    bench.add_argument("--quiet", action="store_true")
    bench.set_defaults(func=cmd_bench)

    serve = sub.add_parser("serve", help="run the environment service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=5161)
    serve.add_argument("--stdio", action="store_true", help="serve one session over stdio")
    serve.set_defaults(func=cmd_serve)

    render = sub.add_parser("render", help="render a replay log or costmap dump to PNG")
    render.add_argument("input", help="replay log or costmap dump file")
    render.add_argument("-o", "--out", required=True, help="output PNG path")
    render.set_defaults(func=cmd_render)

    mapgen = sub.add_parser("mapgen", help="generate an indoor map")
    mapgen.add_argument("--seed", type=int, required=True)
    mapgen.add_argument("-o", "--out", required=True, help="output image path (.pgm/.png)")
    mapgen.add_argument("--width", type=float, default=16.0)
    mapgen.add_argument("--height", type=float, default=16.0)
    mapgen.add_argument("--clutter", type=float, default=0.02)
    mapgen.add_argument("--corridor-width", dest="corridor_width", type=float, default=1.0)
    mapgen.add_argument("--min-room", dest="min_room", type=float, default=3.0)
    mapgen.set_defaults(func=cmd_mapgen)

    replay = sub.add_parser("replay", help="verify a replay log re-simulates exactly")
    replay.add_argument("log")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
