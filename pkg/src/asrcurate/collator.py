"""Training token plans: prompt, special tokens, transcript, timestamps, loss mask.

Layout of a plan (``max_target_len`` positions)::

    [start_of_prev, prev...]  [sot, lang, transcribe, (no_timestamps)]  [text]  eot  eot eot ...
    \\_____ prompt ________/  \\__________ specials _________________/                 padding

The prompt never contributes to the loss. The first end_of_transcript after
the prompt does; every later one is padding and is masked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .errors import ConfigError, DataError, PlanOverflowError
from .gate import STAGE1, STAGE2, StageDecision
from .packer import MAX_CHUNK_LEN, Chunk
from .seeding import unit_draw


# sot, language, task, no_timestamps, eot: the shortest plan there is
MIN_TARGET_LEN = 5


@dataclass(frozen=True)
class SpecialTokens:
    # Whisper large-v3 vocabulary layout, Swedish language tag
    start_of_prev: int = 50362
    start_of_transcript: int = 50258
    language_tag: int = 50273
    task_transcribe: int = 50360
    no_timestamps: int = 50364
    end_of_transcript: int = 50257
    timestamp_base: int = 50365

    def __post_init__(self):
        ids = [self.start_of_prev, self.start_of_transcript, self.language_tag,
               self.task_transcribe, self.no_timestamps, self.end_of_transcript, self.timestamp_base]
        if any(not isinstance(i, int) or i < 0 for i in ids):
            raise ConfigError("special token ids must be non-negative integers")
        if len(set(ids)) != len(ids):
            raise ConfigError("special token ids must be distinct")


@dataclass(frozen=True)
class CollateOptions:
    timestamp_rate_stage1: float = 0.05
    timestamp_rate_stage2: float = 0.5
    prev_context_rate: float = 0.5
    timestamp_resolution: float = 0.02
    max_target_len: int = 448
    max_timestamp: float = MAX_CHUNK_LEN
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("timestamp_rate_stage1", "timestamp_rate_stage2", "prev_context_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be a probability")
        if self.timestamp_resolution <= 0:
            raise ConfigError("timestamp_resolution must be positive")
        if self.max_target_len < MIN_TARGET_LEN:
            raise ConfigError(f"max_target_len must be >= {MIN_TARGET_LEN}")

    def timestamp_rate(self, stage: str) -> float:
        if stage == STAGE2:
            return self.timestamp_rate_stage2
        if stage == STAGE1:
            return self.timestamp_rate_stage1
        raise ValueError(f"no timestamp rate for stage {stage!r}")


@dataclass(frozen=True)
class TokenPlan:
    chunk_id: str
    token_ids: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    prompt_len: int
    has_timestamps: bool
    has_prev_context: bool
    is_nonspeech: bool

    @property
    def meta(self) -> dict:
        return {
            "has_timestamps": self.has_timestamps,
            "has_prev_context": self.has_prev_context,
            "is_nonspeech": self.is_nonspeech,
        }

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "token_ids": list(self.token_ids),
            "loss_mask": [int(m) for m in self.loss_mask],
            "prompt_len": self.prompt_len,
            "meta": self.meta,
        }


def timestamp_index(t: float, resolution: float = 0.02, max_time: float = MAX_CHUNK_LEN) -> int:
    if not 0 <= t <= max_time:
        raise ValueError(f"timestamp {t} outside [0, {max_time}]")
    q = Decimal(repr(float(t))) / Decimal(repr(float(resolution)))
    return int(q.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def quantize_timestamp(
    t: float,
    resolution: float = 0.02,
    timestamp_base: int = SpecialTokens.timestamp_base,
    max_time: float = MAX_CHUNK_LEN,
) -> int:
    return timestamp_base + timestamp_index(t, resolution, max_time)


def dequantize_timestamp(token: int, resolution: float = 0.02, timestamp_base: int = SpecialTokens.timestamp_base) -> float:
    return (token - timestamp_base) * resolution


def build_loss_mask(token_ids: Sequence[int], specials: SpecialTokens, prompt_len: int) -> list[bool]:
    eot = specials.end_of_transcript
    first = next((i for i in range(prompt_len, len(token_ids)) if token_ids[i] == eot), None)
    if first is None:
        raise DataError("token sequence has no end_of_transcript after the prompt")
    return [prompt_len <= i <= first for i in range(len(token_ids))]


def _timestamps_ordered(chunk: Chunk, resolution: float) -> bool:
    # overlapping observations would produce out-of-order timestamp tokens
    last = 0
    for o in chunk.observations:
        if timestamp_index(o.start, resolution, o.end) < last:
            return False
        last = timestamp_index(o.end, resolution, o.end)
    return True


def build_token_plan(
    chunk: Chunk,
    decision: StageDecision,
    text_tokens: Mapping[str, Sequence[int]],
    prev_tokens: Sequence[int] | None,
    options: CollateOptions = CollateOptions(),
    specials: SpecialTokens = SpecialTokens(),
) -> TokenPlan:
    """Assemble the target sequence and loss mask for one gated chunk.

    Timestamp and previous-context sampling are hashed from
    (rng_seed, chunk_id), so a plan does not depend on processing order.
    An overlong prompt is cut from the front first; a transcript that does
    not fit on its own raises ``PlanOverflowError``.
    """
    if decision.stage not in (STAGE1, STAGE2):
        raise ValueError(f"chunk {chunk.chunk_id} has stage {decision.stage!r}, not trainable")
    eot = specials.end_of_transcript
    seed = options.rng_seed

    has_ts = (
        decision.timestamp_eligible
        and not chunk.is_nonspeech
        and unit_draw(seed, chunk.chunk_id, "timestamps") < options.timestamp_rate(decision.stage)
        and _timestamps_ordered(chunk, options.timestamp_resolution)
    )
    want_prev = bool(prev_tokens) and unit_draw(seed, chunk.chunk_id, "prev_context") < options.prev_context_rate

    header = [specials.start_of_transcript, specials.language_tag, specials.task_transcribe]
    if not has_ts:
        header.append(specials.no_timestamps)

    def ts(t):
        return quantize_timestamp(t, options.timestamp_resolution, specials.timestamp_base, options.max_timestamp)

    text = []
    if not chunk.is_nonspeech:
        for o in chunk.observations:
            try:
                toks = list(text_tokens[o.obs_id])
            except KeyError:
                raise DataError(f"chunk {chunk.chunk_id}: no tokens for observation {o.obs_id!r}") from None
            if eot in toks:
                raise DataError(f"observation {o.obs_id!r}: text tokens contain end_of_transcript")
            if has_ts:
                text.extend([ts(o.start), *toks, ts(o.end)])
            else:
                text.extend(toks)

    core = header + text + [eot]
    if len(core) > options.max_target_len:
        raise PlanOverflowError(
            f"chunk {chunk.chunk_id}: transcript needs {len(core)} tokens, max_target_len is {options.max_target_len}"
        )
    prompt = []
    if want_prev:
        room = options.max_target_len - len(core) - 1
        if room > 0:
            prompt = [specials.start_of_prev, *list(prev_tokens)[-room:]]
    token_ids = prompt + core
    token_ids += [eot] * (options.max_target_len - len(token_ids))
    mask = build_loss_mask(token_ids, specials, len(prompt))
    return TokenPlan(
        chunk_id=chunk.chunk_id,
        token_ids=tuple(token_ids),
        loss_mask=tuple(mask),
        prompt_len=len(prompt),
        has_timestamps=has_ts,
        has_prev_context=bool(prompt),
        is_nonspeech=chunk.is_nonspeech,
    )


def load_token_map(path) -> dict[str, list[int]]:
    """Read a tokenizer exchange file: one ``{"obs_id": ..., "tokens": [...]}`` per line."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                obs_id, tokens = rec["obs_id"], rec["tokens"]
                if not isinstance(obs_id, str) or not all(isinstance(t, int) and t >= 0 for t in tokens):
                    raise ValueError("bad obs_id or token list")
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{line_no}: malformed token record ({exc})") from exc
            out[obs_id] = list(tokens)
    return out
