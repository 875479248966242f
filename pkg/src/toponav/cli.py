"""Command line: build maps, run single navigations, benchmark and compare.

Exit codes: 0 success, 2 navigation failed, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import compare, format_summary, load_map, read_report, run_episode, run_mapping
from .geometry import Pose2D
from .sim import ConfigError, NoiseParams, load_episodes
from .worlds import default_episodes, load_route, load_world

EXIT_OK = 0
EXIT_NAV_FAILED = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as a failed navigation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: tuple[int, ...]) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if len(vals) not in n:
        raise argparse.ArgumentTypeError(f"expected {' or '.join(map(str, n))} values, got {text!r}")
    return vals


def _pose(text: str) -> Pose2D:
    vals = _floats(text, (2, 3))
    return Pose2D(*vals)


def _point(text: str) -> tuple[float, float]:
    return _floats(text, (2,))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toponav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build-map", help="drive a route and save one pipeline's map")
    b.add_argument("--world", required=True, help="'default' or a grid file")
    b.add_argument("--route", required=True, help="'default', 'loop' or a file of x y [theta] lines")
    b.add_argument("--pipeline", required=True, choices=("topo", "metric"))
    b.add_argument("--out", required=True, type=Path)
    b.add_argument("--trans-sigma", type=float, default=0.0, help="odometry noise, m per m")
    b.add_argument("--rot-sigma", type=float, default=0.0, help="odometry noise, rad per rad")
    b.add_argument("--seed", type=int, default=0)

    n = sub.add_parser("navigate", help="run one episode on a saved map")
    n.add_argument("--world", required=True)
    n.add_argument("--map", required=True, type=Path, help="directory written by build-map")
    n.add_argument("--start", required=True, type=_pose, help="X,Y[,THETA]")
    n.add_argument("--goal", required=True, type=_point, help="X,Y")
    n.add_argument("--pipeline", required=True, choices=("topo", "metric"))
    n.add_argument("--trace", type=Path, help="per-tick CSV log")
    n.add_argument("--trans-sigma", type=float, default=0.0)
    n.add_argument("--rot-sigma", type=float, default=0.0)
    n.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("bench", help="map with both pipelines and run an episode suite")
    r.add_argument("--world", required=True)
    r.add_argument("--episodes", required=True, help="episode file, or 'default' for the built-in suite")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--route", default="default", help="mapping route (default: %(default)s)")
    r.add_argument("--seed", type=int, help="reseed episode i with SEED + i")
    r.add_argument("--trans-sigma", type=float, help="override every episode's odometry noise")
    r.add_argument("--timing", action="store_true",
                   help="also write wall-clock planning times (these differ between runs)")
    r.add_argument("--quiet", action="store_true")

    c = sub.add_parser("compare", help="print the summary table of a bench report")
    c.add_argument("--report", required=True, type=Path)
    return p


def cmd_build_map(args) -> int:
    world = load_world(args.world)
    route = load_route(args.route)
    noise = NoiseParams(args.trans_sigma, args.rot_sigma, args.seed)
    res = run_mapping(world, route, args.pipeline, out_dir=args.out, noise=noise)
    info = {"pipeline": args.pipeline, "bytes": res.bytes, "ticks": res.ticks,
            "traveled": round(res.traveled, 3), "path": str(res.path)}
    if args.pipeline == "topo":
        info.update(locations=len(res.map), edges=res.map.num_edges())
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_navigate(args) -> int:
    world = load_world(args.world)
    gmap = load_map(args.map, args.pipeline)
    noise = NoiseParams(args.trans_sigma, args.rot_sigma, args.seed)
    res = run_episode(world, gmap, args.start, args.goal, args.pipeline, noise=noise, trace_out=args.trace)
    print(json.dumps({"success": res.success, "reason": res.reason, "ticks": res.ticks,
                      "traveled": round(res.traveled, 3), "shortest": round(res.shortest, 3),
                      "efficiency": round(res.efficiency, 4), "final_error": round(res.final_error, 3)},
                     sort_keys=True))
    return EXIT_OK if res.success else EXIT_NAV_FAILED


def cmd_bench(args) -> int:
    world = load_world(args.world)
    episodes = default_episodes() if args.episodes == "default" else load_episodes(args.episodes)
    if args.seed is not None:
        episodes = [replace(ep, seed=args.seed + i) for i, ep in enumerate(episodes)]
    if args.trans_sigma is not None:
        episodes = [replace(ep, noise_trans_sigma=args.trans_sigma) for ep in episodes]

    def progress(i, pipeline, r, seconds):
        if not args.quiet:
            print(f"episode {i:3d} {pipeline:6s} {'ok  ' if r.success else 'FAIL'} "
                  f"eff={r.efficiency:.3f} ticks={r.ticks} {seconds:.1f}s", file=sys.stderr)

    report = compare(world, episodes, load_route(args.route), progress=progress)
    out = report.write(args.out, timing=args.timing)
    print(format_summary(read_report(out)))
    return EXIT_OK


def cmd_compare(args) -> int:
    print(format_summary(read_report(args.report)))
    return EXIT_OK


COMMANDS = {"build-map": cmd_build_map, "navigate": cmd_navigate, "bench": cmd_bench, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"toponav: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
