"""Corpus composition accounting and the WER/BLEU evaluation harness."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Mapping

from .errors import DataError, EmptyReferenceError
from .gate import STAGE1, STAGE2
from .metrics import DEFAULT_PROFILE, BleuStats, NormProfile, edit_distance, words

STAT_STAGES = (STAGE1, STAGE2)


@dataclass
class CorpusStats:
    """Hours per (dataset, stage) with per-stage grand totals.

    With ``inclusive_stage1`` the Stage 1 figures also count Stage 2 chunks,
    which is how a Stage 1 training mix is actually composed. Non-speech
    chunks are totalled separately and kept out of the dataset rows.
    """

    hours: dict[tuple[str, str], float] = field(default_factory=dict)
    totals: dict[str, float] = field(default_factory=lambda: {s: 0.0 for s in STAT_STAGES})
    nonspeech_hours: float = 0.0
    inclusive_stage1: bool = False

    @property
    def datasets(self) -> list[str]:
        return sorted({d for d, _ in self.hours})

    def get(self, dataset: str, stage: str) -> float:
        return self.hours.get((dataset, stage), 0.0)

    def combined(self) -> dict[str, float]:
        """Stage 1 and Stage 2 hours together, per dataset (disjoint labels only)."""
        if self.inclusive_stage1:
            return {d: self.get(d, STAGE1) for d in self.datasets}
        return {d: self.get(d, STAGE1) + self.get(d, STAGE2) for d in self.datasets}

    def render_text(self) -> str:
        header = ("dataset", "stage1_h", "stage2_h")
        rows = [(d, f"{self.get(d, STAGE1):.1f}", f"{self.get(d, STAGE2):.1f}") for d in self.datasets]
        rows.append(("total", f"{self.totals[STAGE1]:.1f}", f"{self.totals[STAGE2]:.1f}"))
        rows.append(("nonspeech", f"{self.nonspeech_hours:.1f}", ""))
        return _align([header, *rows], 1)

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "stage1_h", "stage2_h"])
        for d in self.datasets:
            w.writerow([d, repr(self.get(d, STAGE1)), repr(self.get(d, STAGE2))])
        w.writerow(["total", repr(self.totals[STAGE1]), repr(self.totals[STAGE2])])
        w.writerow(["nonspeech", repr(self.nonspeech_hours), ""])
        return buf.getvalue()


def corpus_stats(
    decisions: Iterable[Mapping],
    durations: Mapping[str, float],
    inclusive_stage1: bool = False,
) -> CorpusStats:
    """Sum chunk durations (seconds) into hours by dataset and stage.

    Each decision is a mapping with ``chunk_id``, ``dataset``, ``stage`` and
    optionally ``is_nonspeech``. A decision whose chunk has no duration is a
    data integrity error.
    """
    seconds = defaultdict(list)
    nonspeech = []
    for d in decisions:
        cid = d["chunk_id"]
        if cid not in durations:
            raise DataError(f"decision for chunk {cid!r} has no matching chunk duration")
        dur = float(durations[cid])
        if dur < 0:
            raise DataError(f"chunk {cid!r} has negative duration")
        stage = d["stage"]
        if stage not in STAT_STAGES:
            continue
        if d.get("is_nonspeech", False):
            nonspeech.append(dur)
            continue
        seconds[(d["dataset"], stage)].append(dur)
        if inclusive_stage1 and stage == STAGE2:
            seconds[(d["dataset"], STAGE1)].append(dur)

    stats = CorpusStats(inclusive_stage1=inclusive_stage1)
    # fsum is correctly rounded, so the totals do not depend on record order
    for key, values in seconds.items():
        stats.hours[key] = math.fsum(values) / 3600
    for stage in STAT_STAGES:
        stats.totals[stage] = math.fsum(v for (_, s), vals in seconds.items() if s == stage for v in vals) / 3600
    stats.nonspeech_hours = math.fsum(nonspeech) / 3600
    return stats


# --- evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class PairScore:
    test_set: str
    system: str
    edits: int
    ref_words: int
    bleu_stats: BleuStats


@dataclass(frozen=True)
class EvalRow:
    test_set: str
    system: str
    wer: float  # percent
    bleu: float  # 0-100
    utterances: int
    ref_words: int
    edits: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    COLUMNS = ("test_set", "system", "wer", "bleu", "utterances", "ref_words")

    def row(self, test_set: str, system: str) -> EvalRow:
        for r in self.rows:
            if r.test_set == test_set and r.system == system:
                return r
        raise KeyError((test_set, system))

    def render_text(self) -> str:
        lines = [self.COLUMNS] + [
            (r.test_set, r.system, f"{r.wer:.1f}", f"{r.bleu:.1f}", str(r.utterances), str(r.ref_words))
            for r in self.rows
        ]
        return _align(lines, 2)

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.test_set, r.system, f"{r.wer:.1f}", f"{r.bleu:.1f}", r.utterances, r.ref_words])
        return buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({
            "test_set": rec["test_set"],
            "system": rec["system"],
            "wer": float(rec["wer"]),
            "bleu": float(rec["bleu"]),
            "utterances": int(rec["utterances"]),
            "ref_words": int(rec["ref_words"]),
        })
    return rows


def score_pair(pair: Mapping, profile: NormProfile = DEFAULT_PROFILE, max_n: int = 4, index: int | None = None) -> PairScore:
    ref = words(pair["reference"], profile)
    if not ref:
        where = f"pair {index} " if index is not None else "pair "
        raise EmptyReferenceError(f"{where}({pair['test_set']}/{pair['system']}) has an empty reference")
    hyp = words(pair["hypothesis"], profile)
    return PairScore(pair["test_set"], pair["system"], edit_distance(ref, hyp), len(ref), BleuStats.from_tokens(ref, hyp, max_n))


def _score_indexed(item, profile, max_n):
    i, pair = item
    return score_pair(pair, profile, max_n, i)


def evaluate(
    pairs: Iterable[Mapping],
    profile: NormProfile = DEFAULT_PROFILE,
    max_n: int = 4,
    bleu_smoothing: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Pooled WER and corpus BLEU per (test set, system).

    WER is total edits over total reference words; BLEU adds up n-gram
    statistics across all pairs before taking precisions.
    """
    items = list(enumerate(pairs))
    fn = partial(_score_indexed, profile=profile, max_n=max_n)
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(workers) as pool:
            scores = list(pool.map(fn, items, chunksize=max(1, len(items) // (workers * 4))))
    else:
        scores = [fn(it) for it in items]

    groups: dict[tuple[str, str], list[PairScore]] = defaultdict(list)
    for s in scores:
        groups[(s.test_set, s.system)].append(s)
    report = EvalReport()
    for (test_set, system), group in sorted(groups.items()):
        edits = sum(s.edits for s in group)
        ref_words = sum(s.ref_words for s in group)
        stats = BleuStats(max_n=max_n)
        for s in group:
            stats += s.bleu_stats
        report.rows.append(
            EvalRow(test_set, system, 100.0 * edits / ref_words, 100.0 * stats.score(bleu_smoothing),
                    len(group), ref_words, edits)
        )
    return report


def _align(rows, text_cols: int) -> str:
    """Left-align the first ``text_cols`` columns, right-align the numbers."""
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    out = []
    for r in rows:
        cells = [str(c).ljust(w) if i < text_cols else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"
