"""``wismc`` command line: ingest -> estimate -> simulate -> analyze/compare.

Exit codes: 0 success, 1 validation or insufficient data, 2 I/O or configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ArtifactMismatch, InputError, WismcError

log = logging.getLogger("wismc")


def _symbol_arg(text: str) -> tuple[str, str]:
    sym, sep, path = text.partition("=")
    if not sep or not sym or not path:
        raise argparse.ArgumentTypeError(f"expected SYMBOL=PATH, got {text!r}")
    return sym, path


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--symbol", action="append", type=_symbol_arg, default=[],
                        metavar="SYM=PATH", help="tick CSV for a symbol (repeatable)")
    common.add_argument("--states", type=int)
    common.add_argument("--levels", dest="index_levels", type=int)
    common.add_argument("--lam", type=float)
    common.add_argument("--lam-grid", type=_float_list, help="comma-separated lambda values")
    common.add_argument("--t-max", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--leader")
    common.add_argument("--follower")
    common.add_argument("--follower-index-at", choices=("transition", "minute"))
    common.add_argument("--min-count", type=int)
    common.add_argument("--replications", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (default: $WISMC_JOBS or 1)")
    common.add_argument("--force", action="store_true", help="accept artifacts from another config")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="wismc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="resample tick CSVs to 1-minute returns")
    sub.add_parser("estimate", parents=[common], help="fit kernels (and follower) from returns")
    sub.add_parser("simulate", parents=[common], help="generate synthetic series from models")
    a = sub.add_parser("analyze", parents=[common], help="ACF and correlation reports for one source")
    a.add_argument("--source", choices=("real", "synth"), default="real")
    c = sub.add_parser("compare", parents=[common], help="real vs synthetic ACF and correlations")
    c.add_argument("--real-matrix", help="long-form correlation CSV instead of data/")
    c.add_argument("--synth-matrix", help="long-form correlation CSV instead of synth/")
    return p


_OVERRIDES = ("output_dir", "states", "index_levels", "lam", "lam_grid", "t_max", "horizon",
              "seed", "warmup", "leader", "follower", "follower_index_at", "min_count",
              "replications", "jobs")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in _OVERRIDES}
    if args.symbol:
        overrides["symbols"] = dict(args.symbol)
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            rows = pipeline.run_ingest(cfg)
            for sym in sorted(rows):
                print(f"{sym}: {rows[sym]} returns")
        elif args.command == "estimate":
            res = pipeline.run_estimate(cfg)
            for sym in res["symbols"]:
                print(f"{sym}: lambda={res['lambda'][sym]:.4f}")
            if cfg.leader is not None:
                print(f"follower model: {cfg.follower} | leader {cfg.leader}")
        elif args.command == "simulate":
            for man in pipeline.run_simulate(cfg, force=args.force):
                for sym, info in sorted(man["symbols"].items()):
                    print(f"{sym}: {info['horizon']} minutes ({info['role']}), warm-up {info['warmup']}")
        elif args.command == "analyze":
            pipeline.run_analyze(cfg, args.source)
            print(f"reports written to {cfg.out / 'reports'}")
        elif args.command == "compare":
            res = pipeline.run_compare(cfg, args.real_matrix, args.synth_matrix)
            if res.get("median_ratio") is not None:
                print((cfg.out / "reports" / "summary.txt").read_text(), end="")
            else:
                print(f"ACF comparison written to {cfg.out / 'reports'}")
    except (OSError, InputError, ArtifactMismatch) as exc:
        print(f"wismc: error: {exc}", file=sys.stderr)
        return 2
    except WismcError as exc:
        print(f"wismc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
