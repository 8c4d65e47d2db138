"""Text normalization and the transcript comparison metrics.

All scoring functions take raw text and normalize it with a ``NormProfile``
before tokenizing. Words are whitespace-split tokens of the normalized text;
characters are the normalized text itself, spaces included.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

from .errors import ConfigError, EmptyReferenceError

ROUGE_WEIGHTS = (0.0, 0.25, 0.5, 0.25)
BOUNDARY_K = 10
WORD_MATCH_MAX_DIST = 0.34

PRIMARY = "primary_asr"
SECONDARY = "secondary_asr"


@dataclass(frozen=True)
class NormProfile:
    lowercase: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True
    digit_policy: str = "keep"

    def __post_init__(self):
        if self.digit_policy not in ("keep", "drop"):
            raise ConfigError(f"digit_policy must be 'keep' or 'drop', got {self.digit_policy!r}")


DEFAULT_PROFILE = NormProfile()


@lru_cache(maxsize=4096)
def _char_class(ch: str) -> str:
    cat = unicodedata.category(ch)
    if cat[0] == "P":
        return "P"
    return "D" if cat == "Nd" else ""


@lru_cache(maxsize=65536)
def normalize(text: str, profile: NormProfile = DEFAULT_PROFILE) -> str:
    text = unicodedata.normalize("NFC", text)
    if profile.lowercase:
        text = unicodedata.normalize("NFC", text.lower())
    strip, drop = profile.strip_punctuation, profile.digit_policy == "drop"
    if strip or drop:
        out = []
        for ch in text:
            cls = _char_class(ch)
            if strip and cls == "P":
                out.append(" ")
            elif not (drop and cls == "D"):
                out.append(ch)
        text = "".join(out)
    if profile.collapse_whitespace:
        text = " ".join(text.split())
    return text


def words(text: str, profile: NormProfile = DEFAULT_PROFILE) -> list[str]:
    return normalize(text, profile).split()


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    # trim the shared prefix and suffix, they never contribute
    lo = 0
    while lo < len(a) and lo < len(b) and a[lo] == b[lo]:
        lo += 1
    hi_a, hi_b = len(a), len(b)
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    # bit-parallel DP over the columns of the shorter sequence (Myers, Hyyro)
    peq: dict = {}
    for j, y in enumerate(b):
        peq[y] = peq.get(y, 0) | (1 << j)
    mask = (1 << len(b)) - 1
    top = 1 << (len(b) - 1)
    pv, mv, dist = mask, 0, len(b)
    for x in a:
        eq = peq.get(x, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (~(xh | pv) & mask)
        mh = pv & xh
        if ph & top:
            dist += 1
        elif mh & top:
            dist -= 1
        ph = ((ph << 1) | 1) & mask
        mh = (mh << 1) & mask
        pv = mh | (~(xv | ph) & mask)
        mv = ph & xv
    return dist


def _error_rate(ref_tokens: Sequence, hyp_tokens: Sequence) -> float:
    if not ref_tokens:
        raise EmptyReferenceError("reference is empty after normalization")
    return edit_distance(ref_tokens, hyp_tokens) / len(ref_tokens)


def wer(reference: str, hypothesis: str, profile: NormProfile = DEFAULT_PROFILE) -> float:
    return _error_rate(words(reference, profile), words(hypothesis, profile))


def cer(reference: str, hypothesis: str, profile: NormProfile = DEFAULT_PROFILE) -> float:
    return _error_rate(normalize(reference, profile), normalize(hypothesis, profile))


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Sufficient statistics for BLEU; add them up to get corpus BLEU."""

    max_n: int = 4
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)
    hyp_len: int = 0
    ref_len: int = 0

    def __post_init__(self):
        if not self.matches:
            self.matches = [0] * self.max_n
        if not self.totals:
            self.totals = [0] * self.max_n

    def __iadd__(self, other: "BleuStats") -> "BleuStats":
        if other.max_n != self.max_n:
            raise ValueError("cannot add BLEU statistics of different orders")
        self.matches = [x + y for x, y in zip(self.matches, other.matches)]
        self.totals = [x + y for x, y in zip(self.totals, other.totals)]
        self.hyp_len += other.hyp_len
        self.ref_len += other.ref_len
        return self

    @classmethod
    def from_tokens(cls, ref: Sequence[str], hyp: Sequence[str], max_n: int = 4) -> "BleuStats":
        stats = cls(max_n=max_n, hyp_len=len(hyp), ref_len=len(ref))
        for n in range(1, max_n + 1):
            hyp_counts = ngrams(hyp, n)
            ref_counts = ngrams(ref, n)
            stats.matches[n - 1] = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            stats.totals[n - 1] = sum(hyp_counts.values())
        return stats

    def score(self, smoothing: bool = False) -> float:
        """Geometric mean of modified precisions times the brevity penalty.

        Orders for which the hypothesis has no n-grams are left out, so a
        short hypothesis identical to its reference still scores 1. With
        ``smoothing`` the precisions for n >= 2 get add-one counts.
        """
        if self.hyp_len == 0:
            return 0.0
        log_sum = 0.0
        orders = 0
        for n, (m, t) in enumerate(zip(self.matches, self.totals), 1):
            if t == 0:
                continue
            if smoothing and n >= 2:
                m, t = m + 1, t + 1
            if m == 0:
                return 0.0
            log_sum += math.log(m / t)
            orders += 1
        if self.hyp_len >= self.ref_len:
            bp = 1.0
        else:
            bp = math.exp(1.0 - self.ref_len / self.hyp_len)
        return min(1.0, bp * math.exp(log_sum / orders))


def bleu(
    reference: str,
    hypothesis: str,
    max_n: int = 4,
    smoothing: bool = True,
    profile: NormProfile = DEFAULT_PROFILE,
) -> float:
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    ref = words(reference, profile)
    if not ref:
        raise EmptyReferenceError("BLEU reference is empty after normalization")
    return BleuStats.from_tokens(ref, words(hypothesis, profile), max_n).score(smoothing)


def _rouge_from_tokens(ref: Sequence[str], hyp: Sequence[str], n: int, mode: str) -> float:
    ref_counts = ngrams(ref, n)
    hyp_counts = ngrams(hyp, n)
    ref_total = sum(ref_counts.values())
    if ref_total == 0:
        return 0.0
    overlap = sum(min(c, hyp_counts[g]) for g, c in ref_counts.items())
    recall = overlap / ref_total
    if mode == "recall":
        return recall
    if mode == "f1":
        hyp_total = sum(hyp_counts.values())
        if overlap == 0 or hyp_total == 0:
            return 0.0
        precision = overlap / hyp_total
        return 2 * precision * recall / (precision + recall)
    raise ConfigError(f"unknown ROUGE mode {mode!r}")


def rouge_n(
    reference: str,
    hypothesis: str,
    n: int,
    profile: NormProfile = DEFAULT_PROFILE,
    mode: str = "recall",
) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _rouge_from_tokens(words(reference, profile), words(hypothesis, profile), n, mode)


def check_rouge_weights(weights: Sequence[float]) -> tuple[float, ...]:
    weights = tuple(float(w) for w in weights)
    if not weights:
        raise ConfigError("ROUGE weights must not be empty")
    if any(w < 0 or math.isnan(w) for w in weights):
        raise ConfigError(f"ROUGE weights must be non-negative: {weights}")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ConfigError(f"ROUGE weights must sum to 1, got {math.fsum(weights)}")
    return weights


def weighted_rouge(
    reference: str,
    hypothesis: str,
    weights: Sequence[float] = ROUGE_WEIGHTS,
    profile: NormProfile = DEFAULT_PROFILE,
    mode: str = "recall",
) -> float:
    weights = check_rouge_weights(weights)
    ref = words(reference, profile)
    hyp = words(hypothesis, profile)
    total = 0.0
    for n, w in enumerate(weights, 1):
        if w:
            total += w * _rouge_from_tokens(ref, hyp, n, mode)
    return min(1.0, total)


def boundary_cer(
    reference: str,
    hypothesis: str,
    k: int = BOUNDARY_K,
    profile: NormProfile = DEFAULT_PROFILE,
) -> tuple[float, float]:
    """CER of the first k and the last k normalized characters."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ref = normalize(reference, profile)
    hyp = normalize(hypothesis, profile)
    if not ref:
        raise EmptyReferenceError("reference is empty after normalization")
    head = edit_distance(ref[:k], hyp[:k]) / len(ref[:k])
    tail = edit_distance(ref[-k:], hyp[-k:]) / len(ref[-k:])
    return head, tail


def _word_distance(a: str, b: str) -> float:
    return edit_distance(a, b) / max(len(a), len(b))


def boundary_word_match(
    reference: str,
    hypothesis: str,
    profile: NormProfile = DEFAULT_PROFILE,
) -> tuple[float, float]:
    """Length-normalized edit distance between the first words and the last words."""
    ref = words(reference, profile)
    hyp = words(hypothesis, profile)
    if not ref:
        raise EmptyReferenceError("reference has no words after normalization")
    if not hyp:
        raise ValueError("hypothesis has no words after normalization")
    return _word_distance(ref[0], hyp[0]), _word_distance(ref[-1], hyp[-1])


def boundary_words_match(
    reference: str,
    hypothesis: str,
    max_norm_dist: float = WORD_MATCH_MAX_DIST,
    profile: NormProfile = DEFAULT_PROFILE,
) -> tuple[bool, bool]:
    head, tail = boundary_word_match(reference, hypothesis, profile)
    return head <= max_norm_dist, tail <= max_norm_dist


@dataclass(frozen=True)
class MetricConfig:
    profile: NormProfile = DEFAULT_PROFILE
    bleu_max_n: int = 4
    bleu_smoothing: bool = True
    rouge_weights: tuple[float, ...] = ROUGE_WEIGHTS
    rouge_mode: str = "recall"
    boundary_k: int = BOUNDARY_K
    word_match_max_dist: float = WORD_MATCH_MAX_DIST

    def __post_init__(self):
        object.__setattr__(self, "rouge_weights", check_rouge_weights(self.rouge_weights))
        if self.bleu_max_n < 1:
            raise ConfigError("bleu max_n must be >= 1")
        if self.boundary_k < 1:
            raise ConfigError("boundary k must be >= 1")
        if self.rouge_mode not in ("recall", "f1"):
            raise ConfigError(f"unknown ROUGE mode {self.rouge_mode!r}")


@dataclass(frozen=True)
class ChunkScores:
    hypothesis_source: str
    wer: float
    cer: float
    bleu: float
    rouge_weighted: float
    head_cer_10: float
    tail_cer_10: float
    head_word_match: float
    tail_word_match: float

    def to_dict(self) -> dict:
        return {
            "hypothesis_source": self.hypothesis_source,
            "wer": self.wer,
            "cer": self.cer,
            "bleu": self.bleu,
            "rouge_weighted": self.rouge_weighted,
            "head_cer_10": self.head_cer_10,
            "tail_cer_10": self.tail_cer_10,
            "head_word_match": self.head_word_match,
            "tail_word_match": self.tail_word_match,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkScores":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def score_texts(reference: str, hypothesis: str, source: str, config: MetricConfig = MetricConfig()) -> ChunkScores:
    """Every metric for one reference/hypothesis pair.

    An empty hypothesis is legal (the ASR may output nothing); its word
    match distances are reported as 1.0.
    """
    p = config.profile
    head, tail = boundary_cer(reference, hypothesis, config.boundary_k, p)
    if words(hypothesis, p):
        head_w, tail_w = boundary_word_match(reference, hypothesis, p)
    else:
        head_w = tail_w = 1.0
    return ChunkScores(
        hypothesis_source=source,
        wer=wer(reference, hypothesis, p),
        cer=cer(reference, hypothesis, p),
        bleu=bleu(reference, hypothesis, config.bleu_max_n, config.bleu_smoothing, p),
        rouge_weighted=weighted_rouge(reference, hypothesis, config.rouge_weights, p, config.rouge_mode),
        head_cer_10=head,
        tail_cer_10=tail,
        head_word_match=head_w,
        tail_word_match=tail_w,
    )
