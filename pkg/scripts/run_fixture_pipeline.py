"""Run every stage on the fixture corpus and print the two reports.

    python3 scripts/run_fixture_pipeline.py [--config configs/example.yaml] [--workers 4]

Generates data/fixture first if it is missing.
"""

import argparse
import subprocess
import sys
from pathlib import Path

from asrcurate.config import load_config
from asrcurate.pipeline import run_all

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description="run the whole pipeline on the fixture corpus")
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "example.yaml")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if not cfg.paths.sources.exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "make_fixture_corpus.py")], check=True)
    for res in run_all(cfg, args.workers):
        print(f"{res.stage:9s} {res.counts}")
        for err in res.errors[:5]:
            print(f"          error: {err}")
    for base in (cfg.paths.stats_report, cfg.paths.eval_report):
        print()
        print(base.with_name(base.name + ".txt").read_text(), end="")


if __name__ == "__main__":
    main()
