"""Command line entry point: ``pathmon <stage> --config cfg.yaml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .pipeline import STAGES, PipelineError, run_stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathmon", description="Predictive monitoring pipeline over clinical event logs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage" if stage != "all" else "run every stage in order")
        p.add_argument("--config", help="YAML config document (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--model", choices=("logreg", "rf"), help="override model.kind")
        p.add_argument("--force", action="store_true", help="run despite stale or conflicting artifacts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "model.kind": args.model})
        if args.out is not None:
            # --out is relative to the working directory, not the config file
            cfg.raw["out"] = str(Path(args.out).resolve())
        entries = run_stage(args.stage, cfg, force=args.force)
    except (PipelineError, ConfigError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "stage", None):
            err["stage"] = exc.stage
        print(json.dumps(err), file=sys.stderr)
        return 2
    except Exception as exc:  # anything else still gets a machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    for e in entries:
        print(json.dumps({"stage": e["stage"], "outputs": sorted(e["outputs"]), "stats": e["stats"]}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
