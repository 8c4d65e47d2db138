"""Language gating and the two quality stages.

Stage 1 is a relaxed CER/BLEU filter applied to every required ASR
hypothesis, so a chunk only passes when the independent transcribers
both agree with the reference. Stage 2 adds BLEU, weighted ROUGE-N and
a boundary CER bound on top of Stage 1, so the Stage 2 set is always a
subset of the Stage 1 set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConfigError, EmptyReferenceError
from .metrics import PRIMARY, SECONDARY, ChunkScores, MetricConfig, score_texts, words
from .packer import Chunk

STAGE2 = "stage2"
STAGE1 = "stage1"
REJECTED = "rejected"
DEFERRED = "deferred"
STAGES = (STAGE2, STAGE1, REJECTED, DEFERRED)

RETAINED = "retained"
NOSPEECH = "nospeech"

BOUNDARY_CER_MAX = 0.2


@dataclass(frozen=True)
class Stage1Limits:
    cer_max: float = 0.6
    bleu_min: float = 0.2


@dataclass(frozen=True)
class Stage2Limits:
    bleu_min: float = 0.7
    rouge_weighted_min: float = 0.7
    boundary_cer_max: float = BOUNDARY_CER_MAX


@dataclass(frozen=True)
class DatasetThresholds:
    stage1: Stage1Limits = Stage1Limits()
    stage2: Stage2Limits = Stage2Limits()
    require_both_hypotheses: bool = True


@dataclass(frozen=True)
class Thresholds:
    """Per-dataset limits; unknown dataset tags use the ``"default"`` block."""

    datasets: Mapping[str, DatasetThresholds] = field(default_factory=lambda: {"default": DatasetThresholds()})
    timestamp_boundary_cer_max: float = BOUNDARY_CER_MAX
    # "primary": the Stage 2 boundary rule looks at the primary hypothesis only;
    # "required": it applies to every required hypothesis
    boundary_rule_sources: str = "primary"

    def __post_init__(self):
        if "default" not in self.datasets:
            raise ConfigError("thresholds need a 'default' dataset block")
        if self.boundary_rule_sources not in ("primary", "required"):
            raise ConfigError(f"boundary_rule_sources must be 'primary' or 'required'")
        if not 0 <= self.timestamp_boundary_cer_max <= 1:
            raise ConfigError("timestamp_boundary_cer_max must be in [0, 1]")
        for name, t in self.datasets.items():
            values = (t.stage1.cer_max, t.stage1.bleu_min, t.stage2.bleu_min,
                      t.stage2.rouge_weighted_min, t.stage2.boundary_cer_max)
            if not all(0 <= v <= 1 for v in values):
                raise ConfigError(f"thresholds for {name!r} must lie in [0, 1]")
            if t.stage2.bleu_min < t.stage1.bleu_min:
                raise ConfigError(f"{name!r}: stage2 bleu_min is looser than stage1 bleu_min")

    def for_dataset(self, dataset: str) -> DatasetThresholds:
        return self.datasets.get(dataset, self.datasets["default"])


@dataclass(frozen=True)
class Check:
    stage: str
    metric: str
    source: str
    value: float | None
    threshold: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "metric": self.metric,
            "source": self.source,
            "value": self.value,
            "threshold": self.threshold,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class StageDecision:
    chunk_id: str
    stage: str
    timestamp_eligible: bool = False
    reasons: tuple[Check, ...] = ()
    is_nonspeech: bool = False

    @property
    def failed(self) -> list[Check]:
        return [c for c in self.reasons if not c.passed]

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "stage": self.stage,
            "timestamp_eligible": self.timestamp_eligible,
            "is_nonspeech": self.is_nonspeech,
            "reasons": [c.to_dict() for c in self.reasons],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            chunk_id=d["chunk_id"],
            stage=d["stage"],
            timestamp_eligible=d["timestamp_eligible"],
            reasons=tuple(Check.from_dict(c) for c in d["reasons"]),
            is_nonspeech=d["is_nonspeech"],
        )


@dataclass(frozen=True)
class LanguageDetection:
    chunk_id: str
    language: str
    confidence: float = 1.0

    def to_dict(self):
        return {"chunk_id": self.chunk_id, "language": self.language, "confidence": self.confidence}


@dataclass(frozen=True)
class LanguageDecision:
    chunk_id: str
    status: str
    language: str | None
    reason: str = ""


def language_gate(
    chunk_id: str,
    detection: LanguageDetection | None,
    target_language: str = "sv",
    is_nonspeech: bool = False,
) -> LanguageDecision:
    """Keep speech chunks detected as ``target_language``.

    Non-speech candidates skip the language test and are kept only when the
    detector reports no speech. A missing detection defers the chunk.
    """
    if detection is None:
        return LanguageDecision(chunk_id, DEFERRED, None, "no language detection record")
    lang = detection.language
    if is_nonspeech:
        if lang == NOSPEECH:
            return LanguageDecision(chunk_id, RETAINED, lang)
        return LanguageDecision(chunk_id, REJECTED, lang, f"speech detected ({lang}) in non-speech candidate")
    if lang == target_language:
        return LanguageDecision(chunk_id, RETAINED, lang)
    return LanguageDecision(chunk_id, REJECTED, lang, f"detected {lang!r}, want {target_language!r}")


def score_chunk(chunk: Chunk, hypotheses: Mapping[str, str], config: MetricConfig = MetricConfig()) -> list[ChunkScores]:
    if chunk.is_nonspeech:
        raise ValueError(f"chunk {chunk.chunk_id}: non-speech chunks are not scored")
    if not hypotheses:
        raise ValueError(f"chunk {chunk.chunk_id}: no hypotheses to score")
    if not words(chunk.reference_text, config.profile):
        raise EmptyReferenceError(f"chunk {chunk.chunk_id}: reference text is empty")
    order = {PRIMARY: 0, SECONDARY: 1}
    sources = sorted(hypotheses, key=lambda s: (order.get(s, 2), s))
    return [score_texts(chunk.reference_text, hypotheses[s], s, config) for s in sources]


def _required_sources(t: DatasetThresholds) -> list[str]:
    return [PRIMARY, SECONDARY] if t.require_both_hypotheses else [PRIMARY]


def _missing(chunk_id, by_source, required) -> StageDecision | None:
    missing = [s for s in required if s not in by_source]
    if not missing:
        return None
    reasons = tuple(Check(STAGE1, "hypothesis", s, None, None, False) for s in missing)
    return StageDecision(chunk_id, DEFERRED, False, reasons)


def stage1_filter(
    scores: Sequence[ChunkScores],
    thresholds: Thresholds,
    dataset: str,
    chunk_id: str = "",
) -> StageDecision:
    t = thresholds.for_dataset(dataset)
    by_source = {s.hypothesis_source: s for s in scores}
    required = _required_sources(t)
    deferred = _missing(chunk_id, by_source, required)
    if deferred:
        return deferred
    checks = []
    for src in required:
        s = by_source[src]
        checks.append(Check(STAGE1, "cer", src, s.cer, t.stage1.cer_max, s.cer <= t.stage1.cer_max))
        checks.append(Check(STAGE1, "bleu", src, s.bleu, t.stage1.bleu_min, s.bleu >= t.stage1.bleu_min))
    passed = all(c.passed for c in checks)

    p = by_source[PRIMARY]
    limit = thresholds.timestamp_boundary_cer_max
    ts_checks = [
        Check("timestamps", "head_cer_10", PRIMARY, p.head_cer_10, limit, p.head_cer_10 <= limit),
        Check("timestamps", "tail_cer_10", PRIMARY, p.tail_cer_10, limit, p.tail_cer_10 <= limit),
    ]
    eligible = passed and all(c.passed for c in ts_checks)
    return StageDecision(chunk_id, STAGE1 if passed else REJECTED, eligible, tuple(checks + ts_checks))


def stage2_filter(
    scores: Sequence[ChunkScores],
    thresholds: Thresholds,
    dataset: str,
    chunk_id: str = "",
) -> StageDecision:
    """Full decision: the Stage 1 result, promoted to Stage 2 when every stricter check passes."""
    first = stage1_filter(scores, thresholds, dataset, chunk_id)
    if first.stage != STAGE1:
        return first
    t = thresholds.for_dataset(dataset)
    by_source = {s.hypothesis_source: s for s in scores}
    required = _required_sources(t)
    checks = []
    for src in required:
        s = by_source[src]
        checks.append(Check(STAGE2, "bleu", src, s.bleu, t.stage2.bleu_min, s.bleu >= t.stage2.bleu_min))
        checks.append(
            Check(STAGE2, "rouge_weighted", src, s.rouge_weighted, t.stage2.rouge_weighted_min,
                  s.rouge_weighted >= t.stage2.rouge_weighted_min)
        )
    boundary_sources = [PRIMARY] if thresholds.boundary_rule_sources == "primary" else required
    for src in boundary_sources:
        s = by_source[src]
        worst = max(s.head_cer_10, s.tail_cer_10)
        limit = t.stage2.boundary_cer_max
        checks.append(Check(STAGE2, "boundary_cer_10", src, worst, limit, worst <= limit))
    promoted = all(c.passed for c in checks)
    return StageDecision(
        chunk_id,
        STAGE2 if promoted else STAGE1,
        first.timestamp_eligible,
        first.reasons + tuple(checks),
    )


decide = stage2_filter


def nonspeech_decision(chunk_id: str, detection: LanguageDetection) -> StageDecision:
    """Non-speech chunks confirmed silent join the Stage 1 pool, never with timestamps."""
    check = Check(STAGE1, "nospeech", "language_detection", detection.confidence, None, detection.language == NOSPEECH)
    stage = STAGE1 if check.passed else REJECTED
    return StageDecision(chunk_id, stage, False, (check,), is_nonspeech=True)
