"""``flowlab`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, PROFILES, load_config
from .pipeline import STAGES, Pipeline, StageError
from .report import ReportIncomplete, build_report

HELP = {
    "simulate": "run the solver ensembles",
    "render": "label regimes and render image datasets",
    "noise": "generate annulus and Fourier noise sets",
    "spectra": "write energy and image spectra summaries",
    "train": "train the classifiers over all seeds",
    "effdim": "effective dimension of trained and random networks",
    "adversarial": "class fractions on adversarial inputs",
    "ood": "accuracy on out-of-distribution settings",
    "pipeline": "run every stage and write the report",
    "report": "collect existing artifacts into the report bundle",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowlab", description="Chaos vs. turbulence experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON file merged over the profile")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--profile", choices=sorted(PROFILES), help="built-in profile (default desk)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        if args.command != "report":
            cfg = load_config(args.config, args.profile, args.seed)
            until = "ood" if args.command == "pipeline" else args.command
            Pipeline(cfg, args.out).run(until)
        if args.command in ("pipeline", "report"):
            build_report(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage {exc.stage} failed: {exc}", file=sys.stderr)
        return 1
    except ReportIncomplete as exc:
        print(f"report incomplete: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
