"""Command-line entry point: ``parley <stage> --config campaign.json``."""

from __future__ import annotations

import argparse
import logging
import sys

from ._http import ServiceError
from .pipeline import STAGES, ConfigError, StageError, load_config, with_overrides
from .survey import SurveyError
from .synth import SynthesisError

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parley", description="AI phone-survey pipeline with an offline simulator.")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    helps = {
        "synth": "synthesize gold response sets and personas",
        "run": "place calls and archive transcripts",
        "extract": "extract response sets from transcripts",
        "score": "write WER and accuracy reports",
        "upload": "import extracted records into the data-capture store",
        "simulate": "run every stage offline against the simulator and a local stub store",
    }
    for name in STAGES:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="campaign config (JSON)")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=("http", "simulate"))
        p.add_argument("--extractor", choices=("llm", "rules"))
        p.add_argument("--parallelism", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = with_overrides(
            load_config(args.config),
            seed=args.seed,
            parallelism=args.parallelism,
            mode=args.mode,
            extractor=args.extractor,
        )
    except ConfigError as exc:
        print(f"parley: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        STAGES[args.stage](cfg)
    except ConfigError as exc:
        print(f"parley: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StageError, ServiceError, SurveyError, SynthesisError, OSError) as exc:
        print(f"parley {args.stage}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
