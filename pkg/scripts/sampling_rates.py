"""Empirical timestamp and previous-context rates of the collator, per stage
and seed, against the configured target rates.

    python3 scripts/sampling_rates.py [--n 20000] [--seeds 0 1 2]
"""

import argparse

from asrcurate.collator import CollateOptions, SpecialTokens, build_token_plan
from asrcurate.gate import STAGE1, STAGE2, StageDecision
from asrcurate.manifest import Observation
from asrcurate.packer import Chunk

OBS = (Observation("o0", 0.0, 2.5, "x"), Observation("o1", 3.0, 6.0, "x"))
TOKENS = {"o0": [10, 11, 12], "o1": [13, 14]}


def rates(stage, n, seed):
    opts = CollateOptions(rng_seed=seed)
    ts = prev = 0
    for i in range(n):
        c = Chunk(f"{stage}-{i}", "d", "m", "svt", 0.0, 6.0, OBS, "x")
        plan = build_token_plan(c, StageDecision(c.chunk_id, stage, True), TOKENS, [20, 21], opts, SpecialTokens())
        ts += plan.has_timestamps
        prev += plan.has_prev_context
    return ts / n, prev / n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    opts = CollateOptions()
    targets = {STAGE1: opts.timestamp_rate_stage1, STAGE2: opts.timestamp_rate_stage2}
    print(f"{'stage':7s} {'seed':>4s} {'timestamps':>10s} {'target':>6s} {'prev_ctx':>8s} {'target':>6s}")
    for stage in (STAGE1, STAGE2):
        for seed in args.seeds:
            ts, prev = rates(stage, args.n, seed)
            print(f"{stage:7s} {seed:4d} {ts:10.4f} {targets[stage]:6.2f} {prev:8.4f} {opts.prev_context_rate:6.2f}")


if __name__ == "__main__":
    main()
