"""Packing observations into training chunks, plus non-speech chunk candidates."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError
from .manifest import AudioDocument, Observation, SliceSpec, ms
from .seeding import keyed_rng, stable_hash, unit_draw

MAX_CHUNK_LEN = 30.0
# 100 h of non-speech against a 56 514 h corpus
NONSPEECH_FRACTION = 100 / 56514


@dataclass(frozen=True)
class PackPolicy:
    max_chunk_len: float = MAX_CHUNK_LEN
    short_len_choices: tuple[tuple[float, float], ...] = ((5.0, 0.2), (10.0, 0.3), (20.0, 0.3), (30.0, 0.2))
    nonspeech_target_fraction: float = NONSPEECH_FRACTION
    min_gap_for_nonspeech: float = 5.0
    nonspeech_margin: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "short_len_choices", tuple((float(l), float(w)) for l, w in self.short_len_choices)
        )
        if not 0 < self.max_chunk_len <= MAX_CHUNK_LEN:
            raise ConfigError(f"max_chunk_len must be in (0, {MAX_CHUNK_LEN}]")
        for length, weight in self.short_len_choices:
            if not 0 < length <= self.max_chunk_len:
                raise ConfigError(f"short chunk length {length} outside (0, {self.max_chunk_len}]")
            if weight < 0 or math.isnan(weight):
                raise ConfigError(f"short chunk weight {weight} is negative")
        if self.short_len_choices and not sum(w for _, w in self.short_len_choices) > 0:
            raise ConfigError("short chunk weights are all zero")
        if not 0 <= self.nonspeech_target_fraction < 1:
            raise ConfigError("nonspeech_target_fraction must be in [0, 1)")
        if self.min_gap_for_nonspeech < 0 or self.nonspeech_margin < 0:
            raise ConfigError("non-speech gap and margin must be non-negative")

    def fingerprint(self) -> str:
        return stable_hash(json.dumps(asdict(self), sort_keys=True))[:12]


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    media_ref: str
    dataset: str
    start: float
    end: float
    observations: tuple[Observation, ...] = ()
    reference_text: str = ""
    is_nonspeech: bool = False
    oversize: bool = False
    prev_obs_ids: tuple[str, ...] = ()

    @property
    def duration(self) -> float:
        return ms(self.end - self.start)

    @property
    def obs_ids(self) -> list[str]:
        return [o.obs_id for o in self.observations]

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "media_ref": self.media_ref,
            "dataset": self.dataset,
            "start": self.start,
            "end": self.end,
            "is_nonspeech": self.is_nonspeech,
            "oversize": self.oversize,
            "reference_text": self.reference_text,
            "observations": [o.to_dict() for o in self.observations],
            "prev_obs_ids": list(self.prev_obs_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(
            chunk_id=d["chunk_id"],
            doc_id=d["doc_id"],
            media_ref=d["media_ref"],
            dataset=d["dataset"],
            start=d["start"],
            end=d["end"],
            observations=tuple(Observation(**o) for o in d["observations"]),
            reference_text=d["reference_text"],
            is_nonspeech=d["is_nonspeech"],
            oversize=d["oversize"],
            prev_obs_ids=tuple(d["prev_obs_ids"]),
        )


def make_chunk_id(doc_id: str, start: float, end: float, fingerprint: str = "") -> str:
    return stable_hash(doc_id, f"{start:.3f}", f"{end:.3f}", fingerprint)[:16]


def _previous_run(doc: AudioDocument, first: int, window: float) -> tuple[str, ...]:
    """Observations directly before index ``first`` that end by its start, within ``window`` seconds."""
    start = doc.observations[first].start
    ids = []
    for o in reversed(doc.observations[:first]):
        if o.end > start or o.start < start - window:
            break
        ids.append(o.obs_id)
    return tuple(reversed(ids))


def _make_chunk(doc, first, members, fingerprint, window, oversize=False) -> Chunk:
    start = members[0].start
    end = max(o.end for o in members)
    rebased = tuple(
        Observation(o.obs_id, ms(o.start - start), ms(o.end - start), o.text, o.kind) for o in members
    )
    text = " ".join(t for t in (o.text.strip() for o in members) if t)
    return Chunk(
        chunk_id=make_chunk_id(doc.doc_id, start, end, fingerprint),
        doc_id=doc.doc_id,
        media_ref=doc.media_ref,
        dataset=doc.dataset,
        start=start,
        end=end,
        observations=rebased,
        reference_text=text,
        oversize=oversize,
        prev_obs_ids=_previous_run(doc, first, window),
    )


def pack_chunks(doc: AudioDocument, max_len: float = MAX_CHUNK_LEN, fingerprint: str = "") -> list[Chunk]:
    """Greedy left-to-right packing of a document's observations.

    The open chunk takes the next observation while the span from the chunk
    start to that observation's end stays within ``max_len``. Observations
    longer than ``max_len`` become singleton chunks flagged ``oversize``.
    """
    if not 0 < max_len <= MAX_CHUNK_LEN:
        raise ValueError(f"max_len must be in (0, {MAX_CHUNK_LEN}], got {max_len}")
    chunks = []
    members: list[Observation] = []
    first = 0
    for i, o in enumerate(doc.observations):
        if ms(o.end - o.start) > max_len:
            if members:
                chunks.append(_make_chunk(doc, first, members, fingerprint, max_len))
                members = []
            chunks.append(_make_chunk(doc, i, [o], fingerprint, max_len, oversize=True))
            continue
        if members and ms(o.end - members[0].start) <= max_len:
            members.append(o)
            continue
        if members:
            chunks.append(_make_chunk(doc, first, members, fingerprint, max_len))
        members = [o]
        first = i
    if members:
        chunks.append(_make_chunk(doc, first, members, fingerprint, max_len))
    return chunks


def draw_short_len(doc_id: str, policy: PackPolicy) -> float:
    if not policy.short_len_choices:
        raise ConfigError("policy has no short_len_choices")
    rng = keyed_rng(policy.rng_seed, doc_id, "short_len")
    lengths = [l for l, _ in policy.short_len_choices]
    weights = [w for _, w in policy.short_len_choices]
    return rng.choices(lengths, weights=weights)[0]


def sample_short_chunks(doc: AudioDocument, policy: PackPolicy, fingerprint: str = "") -> list[Chunk]:
    """Pack with a per-document length drawn from ``short_len_choices``.

    An observation longer than the drawn length still fits the model window,
    so it only counts as oversize against ``max_chunk_len``.
    """
    chunks = pack_chunks(doc, draw_short_len(doc.doc_id, policy), fingerprint)
    return [
        replace(c, oversize=c.duration > policy.max_chunk_len) if c.oversize else c
        for c in chunks
    ]


def extract_nonspeech(doc: AudioDocument, policy: PackPolicy, fingerprint: str = "") -> list[Chunk]:
    """Non-speech candidates: one chunk per inter-observation gap of at least
    ``min_gap_for_nonspeech`` seconds, shrunk by ``nonspeech_margin`` on both
    sides and capped at ``max_chunk_len``.

    These are candidates only. The corpus-wide duration cap is applied by
    ``select_nonspeech`` and speech absence is confirmed downstream.
    """
    if policy.nonspeech_target_fraction <= 0:
        return []
    out = []
    max_end = None
    for o in doc.observations:
        if max_end is not None and ms(o.start - max_end) >= policy.min_gap_for_nonspeech:
            start = ms(max_end + policy.nonspeech_margin)
            end = ms(min(o.start - policy.nonspeech_margin, start + policy.max_chunk_len))
            if end > start:
                out.append(
                    Chunk(
                        chunk_id=make_chunk_id(doc.doc_id, start, end, fingerprint + ":nonspeech"),
                        doc_id=doc.doc_id,
                        media_ref=doc.media_ref,
                        dataset=doc.dataset,
                        start=start,
                        end=end,
                        is_nonspeech=True,
                    )
                )
        max_end = o.end if max_end is None else max(max_end, o.end)
    return out


def select_nonspeech(candidates: list[Chunk], speech_seconds: float, policy: PackPolicy) -> list[Chunk]:
    """Corpus-level cap: keep candidates, in a seeded hash order, while their
    total duration stays within ``nonspeech_target_fraction * speech_seconds``.

    The result keeps the input order and does not depend on it otherwise.
    """
    budget = policy.nonspeech_target_fraction * speech_seconds
    ranked = sorted(candidates, key=lambda c: (unit_draw(policy.rng_seed, c.chunk_id, "nonspeech"), c.chunk_id))
    keep = set()
    total = 0.0
    for c in ranked:
        if total + c.duration <= budget:
            keep.add(c.chunk_id)
            total += c.duration
    return [c for c in candidates if c.chunk_id in keep]


def emit_slice_spec(chunk: Chunk) -> SliceSpec:
    return SliceSpec(chunk.media_ref, chunk.start, chunk.end)
