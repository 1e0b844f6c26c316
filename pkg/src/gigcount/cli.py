"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 transport error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import PipelineError

log = logging.getLogger("gigcount")

STAGES = {
    "ingest": pipeline.ingest,
    "enrich": pipeline.enrich,
    "train": pipeline.train,
    "estimate": pipeline.estimate,
    "report": pipeline.report,
    "figures": pipeline.figures,
    "run": pipeline.run_all,
}


def _copy_sample(dest: Path) -> None:
    src = resources.files("gigcount") / "data"
    with resources.as_file(src) as path:
        shutil.copytree(path, dest, dirs_exist_ok=True,
                        ignore=shutil.ignore_patterns("__pycache__", "__init__.py"))
    print(f"sample census, fixtures and config written to {dest}")
    print(f"try: gigcount run --config {dest / 'sample.ini'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gigcount",
        description="Estimate the number of workers on online labour platforms.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "validate the census and write size-bucketed summaries",
        "enrich": "acquire popularity features and apply imputation rules",
        "train": "grid-search and fit the Poisson boosting model",
        "estimate": "predict missing sizes, bootstrap the total, run the adjustment cascade",
        "report": "render the human-readable results table",
        "figures": "write figure data files",
        "run": "all stages, ingest through figures",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="pipeline INI file")
        p.add_argument("--seed", type=int, help="overrides both split and bootstrap seeds")
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--replay", dest="mode", action="store_const", const="replay",
                          help="replay recorded fixtures")
        mode.add_argument("--live", dest="mode", action="store_const", const="live",
                          help="fetch from the configured providers, recording responses")
    p = sub.add_parser("init-sample", help="copy the bundled sample census and config")
    p.add_argument("dest", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "init-sample":
        _copy_sample(args.dest)
        return 0
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out_dir=args.out,
                                                      mode=args.mode)
        result = STAGES[args.command](cfg)
    except PipelineError as exc:
        print(f"gigcount {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command in ("ingest", "report") and isinstance(result, str):
        sys.stdout.write(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
