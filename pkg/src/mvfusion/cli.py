"""Command line front end.

Verbs map to pipeline stages plus ``run-all`` and ``preset``.  Exit codes:
0 success, 2 configuration problem, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .configio import ALL_STAGES, ConfigError, run_config_from_ini
from .geometry import GeometryError
from .pipeline import StageError, load_scene, materialize_preset, run

_STAGE_VERBS = {
    "simulate": ("simulate",),
    "image": ("phase1",),
    "interp": ("interp",),
    "fuse": ("fuse",),
    "score": ("score",),
    "baseline": ("baseline",),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration file (INI)")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel receiver workers for the imaging stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvfusion",
        description="Multistatic covariance imaging and multi-view fusion pipeline",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb in _STAGE_VERBS:
        p = sub.add_parser(verb, help=f"run the {verb} stage")
        _add_common(p)

    p = sub.add_parser("run-all", help="run the configured stages in order")
    _add_common(p)
    p.add_argument("--stages", nargs="+", default=None, choices=list(ALL_STAGES),
                   help="subset of stages to run")

    p = sub.add_parser("preset", help="write a named benchmark configuration")
    p.add_argument("name", choices=["fig2", "fig4", "fig5", "table1_col2"])
    p.add_argument("--out", default=".", help="directory for the generated files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "preset":
            run_p, scene_p = materialize_preset(args.name, args.out)
            print(f"wrote {run_p} and {scene_p}")
            return 0
        cfg = run_config_from_ini(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if getattr(args, "workers", None) is not None:
            cfg.workers = args.workers
        scene = load_scene(cfg)
        if args.verb == "run-all":
            stages = tuple(args.stages) if args.stages else None
            run(cfg, scene, stages)
        else:
            run(cfg, scene, _STAGE_VERBS[args.verb])
        return 0
    except (ConfigError, GeometryError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
