"""Unified observation manifest: data model, JSONL I/O, subtitle ingestion."""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .errors import DuplicateDocumentError, ManifestError

SCHEMA_ID = "asrcurate.manifest/v1"
SAMPLE_RATE = 16000
CHANNELS = 1

SUBTITLE_BLOCK = "subtitle_block"
ALIGNED_SENTENCE = "aligned_sentence"
OBSERVATION_KINDS = (SUBTITLE_BLOCK, ALIGNED_SENTENCE)

_DOC_FIELDS = {"schema_id", "doc_id", "media_ref", "dataset", "duration", "observations"}
_OBS_FIELDS = {"obs_id", "start", "end", "text", "kind"}


def ms(seconds: float) -> float:
    """Round to millisecond precision, the resolution of every timecode we store."""
    return round(float(seconds), 3)


@dataclass(frozen=True)
class Observation:
    obs_id: str
    start: float
    end: float
    text: str
    kind: str = SUBTITLE_BLOCK

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"observation {self.obs_id!r}: need 0 <= start < end, got [{self.start}, {self.end}]")
        if self.kind not in OBSERVATION_KINDS:
            raise ValueError(f"observation {self.obs_id!r}: unknown kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"obs_id": self.obs_id, "start": self.start, "end": self.end, "text": self.text, "kind": self.kind}


@dataclass(frozen=True)
class AudioDocument:
    doc_id: str
    media_ref: str
    dataset: str
    duration: float
    observations: tuple[Observation, ...] = ()

    def to_dict(self) -> dict:
        return {
            "schema_id": SCHEMA_ID,
            "doc_id": self.doc_id,
            "media_ref": self.media_ref,
            "dataset": self.dataset,
            "duration": self.duration,
            "observations": [o.to_dict() for o in self.observations],
        }


@dataclass(frozen=True)
class SliceSpec:
    media_ref: str
    start: float
    end: float
    sample_rate: int = SAMPLE_RATE
    channels: int = CHANNELS


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number, got {value!r}")
    return ms(value)


def _string(value, name):
    if not isinstance(value, str):
        raise ValueError(f"{name} must be a string, got {value!r}")
    return value


def document_from_dict(rec: dict, allowed_datasets: Iterable[str] | None = None) -> AudioDocument:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    schema = rec.get("schema_id", SCHEMA_ID)
    if schema != SCHEMA_ID:
        raise ValueError(f"unsupported schema_id {schema!r}")
    missing = _DOC_FIELDS - {"schema_id"} - rec.keys()
    if missing:
        raise ValueError(f"missing fields: {sorted(missing)}")
    extra = rec.keys() - _DOC_FIELDS
    if extra:
        raise ValueError(f"unknown fields: {sorted(extra)}")
    dataset = _string(rec["dataset"], "dataset")
    if allowed_datasets is not None and dataset not in allowed_datasets:
        raise ValueError(f"dataset {dataset!r} not in allow-list")
    duration = _number(rec["duration"], "duration")
    if duration < 0:
        raise ValueError(f"negative duration {duration}")
    obs_recs = rec["observations"]
    if not isinstance(obs_recs, list):
        raise ValueError("observations must be a list")
    observations = []
    for i, o in enumerate(obs_recs):
        if not isinstance(o, dict) or set(o.keys()) != _OBS_FIELDS:
            raise ValueError(f"observation {i}: fields must be exactly {sorted(_OBS_FIELDS)}")
        observations.append(
            Observation(
                obs_id=_string(o["obs_id"], "obs_id"),
                start=_number(o["start"], "start"),
                end=_number(o["end"], "end"),
                text=_string(o["text"], "text"),
                kind=_string(o["kind"], "kind"),
            )
        )
    observations.sort(key=lambda o: o.start)
    return AudioDocument(
        doc_id=_string(rec["doc_id"], "doc_id"),
        media_ref=_string(rec["media_ref"], "media_ref"),
        dataset=dataset,
        duration=duration,
        observations=tuple(observations),
    )


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for raw in stream:
        yield raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def parse_manifest(
    stream: IO | bytes,
    errors: list[ManifestError] | None = None,
    allowed_datasets: Iterable[str] | None = None,
) -> list[AudioDocument]:
    """Parse a JSONL manifest.

    Malformed lines raise ``ManifestError`` unless an ``errors`` list is
    given, in which case they are appended there and parsing continues.
    A repeated doc_id always raises ``DuplicateDocumentError``.
    """
    if allowed_datasets is not None:
        allowed_datasets = frozenset(allowed_datasets)
    docs = []
    seen = {}
    for line_no, line in enumerate(_lines(stream), 1):
        if not line.strip():
            continue
        try:
            doc = document_from_dict(json.loads(line), allowed_datasets)
        except (ValueError, UnicodeDecodeError) as exc:
            err = ManifestError(str(exc), line_no)
            if errors is None:
                raise err from exc
            errors.append(err)
            continue
        if doc.doc_id in seen:
            raise DuplicateDocumentError(f"duplicate doc_id {doc.doc_id!r} (first on line {seen[doc.doc_id]})", line_no)
        seen[doc.doc_id] = line_no
        docs.append(doc)
    return docs


def dumps_document(doc: AudioDocument) -> str:
    return json.dumps(doc.to_dict(), ensure_ascii=False)


def serialize_manifest(docs: Iterable[AudioDocument]) -> bytes:
    return "".join(dumps_document(d) + "\n" for d in docs).encode("utf-8")


def read_manifest(path, errors=None, allowed_datasets=None) -> list[AudioDocument]:
    with open(path, "rb") as f:
        return parse_manifest(f, errors, allowed_datasets)


# --- subtitles -------------------------------------------------------------

_TIME = r"(?:(\d+):)?(\d{1,2}):(\d{1,2})[.,](\d{1,3})"
TIMECODE_RE = re.compile(rf"^\s*{_TIME}\s*(?:-->|→)\s*{_TIME}")
_TAG_RE = re.compile(r"<[^>]*>|\{\\[^}]*\}")


def _seconds(h, m, s, frac) -> float:
    return int(h or 0) * 3600 + int(m) * 60 + int(s) + int(frac.ljust(3, "0")) / 1000


def parse_timecode_line(line: str) -> tuple[float, float]:
    m = TIMECODE_RE.match(line)
    if not m:
        raise ValueError(f"unparseable time range {line.strip()!r}")
    g = m.groups()
    return ms(_seconds(*g[:4])), ms(_seconds(*g[4:]))


def _blocks(text: str):
    """Yield (first line number, lines) for each blank-line separated block."""
    block, first = [], None
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip():
            if first is None:
                first = i
            block.append(line.rstrip())
        elif block:
            yield first, block
            block, first = [], None
    if block:
        yield first, block


def ingest_subtitles(
    subtitle,
    media_ref: str,
    dataset: str,
    doc_id: str | None = None,
    duration: float | None = None,
    errors: list[ManifestError] | None = None,
) -> AudioDocument:
    """Turn an SRT/VTT-style subtitle file into a document of subtitle blocks.

    ``subtitle`` is the file content or a path. Blocks whose time range cannot
    be parsed, or whose range is empty or reversed, are reported through
    ``errors`` (or raised if it is None) and left out.
    """
    if isinstance(subtitle, Path):
        subtitle = subtitle.read_text(encoding="utf-8-sig")
    if doc_id is None:
        doc_id = Path(media_ref).stem
    parsed = []
    for line_no, lines in _blocks(subtitle):
        if lines[0].strip().upper().startswith("WEBVTT"):
            continue
        idx = next((i for i, l in enumerate(lines) if "-->" in l or "→" in l), None)
        try:
            if idx is None:
                raise ValueError("block has no time range")
            start, end = parse_timecode_line(lines[idx])
            if not start < end:
                raise ValueError(f"empty or reversed time range [{start}, {end}]")
        except ValueError as exc:
            err = ManifestError(str(exc), line_no)
            if errors is None:
                raise err from exc
            errors.append(err)
            continue
        body = " ".join(_TAG_RE.sub("", l).strip() for l in lines[idx + 1:])
        parsed.append((start, end, " ".join(body.split())))
    parsed.sort(key=lambda p: p[0])
    observations = tuple(
        Observation(f"{doc_id}:{i:05d}", start, end, text, SUBTITLE_BLOCK)
        for i, (start, end, text) in enumerate(parsed)
    )
    if duration is None:
        duration = max((o.end for o in observations), default=0.0)
    return AudioDocument(doc_id, media_ref, dataset, ms(duration), observations)


# --- validation ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    obs_id: str | None = None
    severity: str = "error"


@dataclass
class ValidationReport:
    doc_id: str
    violations: list[Violation] = field(default_factory=list)

    def __len__(self):
        return len(self.violations)

    def __bool__(self):
        return bool(self.violations)

    @property
    def errors(self):
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self):
        return [v for v in self.violations if v.severity == "warning"]


def validate_document(doc: AudioDocument, allowed_datasets: Iterable[str] | None = None) -> ValidationReport:
    report = ValidationReport(doc.doc_id)
    add = report.violations.append
    if not doc.doc_id:
        add(Violation("empty_doc_id", "doc_id is empty"))
    if doc.duration < 0:
        add(Violation("negative_duration", f"duration {doc.duration} < 0"))
    if allowed_datasets is not None and doc.dataset not in set(allowed_datasets):
        add(Violation("unknown_dataset", f"dataset {doc.dataset!r} not in allow-list"))
    seen_ids = set()
    prev_start = None
    max_end = None
    for o in doc.observations:
        if o.obs_id in seen_ids:
            add(Violation("duplicate_obs_id", f"obs_id {o.obs_id!r} repeated", o.obs_id))
        seen_ids.add(o.obs_id)
        if o.start < 0 or o.end > doc.duration:
            add(Violation("out_of_range", f"[{o.start}, {o.end}] outside [0, {doc.duration}]", o.obs_id))
        if prev_start is not None and o.start < prev_start:
            add(Violation("unsorted", f"starts at {o.start} before previous start {prev_start}", o.obs_id))
        if max_end is not None and o.start < max_end:
            add(Violation("overlap", f"starts at {o.start} before previous end {max_end}", o.obs_id, "warning"))
        prev_start = o.start
        max_end = o.end if max_end is None else max(max_end, o.end)
    return report
