"""Command-line entry point.

Exit status: 0 on success, 1 when a stage hit data errors (outputs for the
good records are still written), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("asrcurate")

_HELP = {
    "ingest": "parse subtitle sources and pre-built manifests into one validated manifest",
    "pack": "pack observations into speech chunks and pick non-speech chunks",
    "annotate": "attach language detections to chunks (file mode, or --service to query endpoints)",
    "gate": "score chunks against ASR hypotheses and assign stage1/stage2/rejected",
    "collate": "build training token plans with timestamps, prompts and loss masks",
    "stats": "write corpus hours per dataset and stage",
    "eval": "write pooled WER and corpus BLEU per test set and system",
    "validate-config": "check the config file and the existence of its input files",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asrcurate", description="ASR training-corpus curation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in _HELP.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("-c", "--config", required=True, help="pipeline config file (YAML)")
        p.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
        if name == "validate-config":
            continue
        p.add_argument("--seed", type=int, default=None, help="override packing.rng_seed and collate.rng_seed")
        p.add_argument("--dry-run", action="store_true", help="print planned record counts without writing outputs")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes (default: number of cores); output order does not depend on it")
        if name == "annotate":
            p.add_argument("--service", action="store_true",
                           help="query the detection/transcription services and write their result files first")
    return parser


def validate_config(cfg) -> list[str]:
    """Source inputs that should exist before the pipeline starts."""
    problems = []
    for key in ("sources", "detections", "hypotheses", "tokens", "eval_pairs"):
        p = getattr(cfg.paths, key)
        if p is not None and not p.exists():
            problems.append(f"paths.{key} does not exist: {p}")
    for p in cfg.paths.manifests:
        if not p.exists():
            problems.append(f"paths.manifests entry does not exist: {p}")
    return problems


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            problems = validate_config(cfg)
            for p in problems:
                print(f"config error: {p}", file=sys.stderr)
            if problems:
                return EXIT_CONFIG
            print(f"{args.config}: ok")
            return EXIT_OK
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        kwargs = {"workers": args.workers, "dry_run": args.dry_run}
        if args.command == "annotate":
            kwargs["service"] = args.service
        result = pipeline.RUNNERS[args.command](cfg, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    label = "planned" if args.dry_run else "done"
    print(f"{result.stage} {label}: {json.dumps(result.counts, sort_keys=True)}")
    for p in result.outputs:
        print(f"  wrote {p}")
    if result.errors:
        for e in result.errors[:20]:
            print(f"  error: {e}", file=sys.stderr)
        if len(result.errors) > 20:
            print(f"  ... {len(result.errors) - 20} more", file=sys.stderr)
        print(f"{result.stage}: {len(result.errors)} data errors", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
