"""ASR hypotheses and language detections, from files or from a service.

File mode reads line-delimited records keyed by chunk_id. Service mode posts
batches of slice specs to ``/transcribe`` and ``/detect_language`` and turns
the responses into the same records, so downstream code cannot tell the two
apart.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import httpx

from .errors import DataError, SchemaError
from .gate import LanguageDetection
from .manifest import SliceSpec
from .metrics import PRIMARY, SECONDARY

log = logging.getLogger(__name__)

HYPOTHESIS_SOURCES = (PRIMARY, SECONDARY)


class DuplicateRecordWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Hypothesis:
    chunk_id: str
    source: str
    text: str
    model_id: str = ""

    def to_dict(self):
        return {"chunk_id": self.chunk_id, "source": self.source, "text": self.text, "model_id": self.model_id}


@dataclass
class HypothesisStore:
    records: dict[tuple[str, str], Hypothesis] = field(default_factory=dict)
    errors: list[DataError] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def get(self, chunk_id: str, source: str) -> Hypothesis | None:
        return self.records.get((chunk_id, source))

    def texts_for(self, chunk_id: str) -> dict[str, str]:
        return {s: h.text for s in HYPOTHESIS_SOURCES if (h := self.records.get((chunk_id, s)))}

    def add(self, h: Hypothesis, where: str = ""):
        key = (h.chunk_id, h.source)
        if key in self.records:
            msg = f"{where}duplicate hypothesis for {key}; keeping the last one"
            log.warning(msg)
            warnings.warn(msg, DuplicateRecordWarning, stacklevel=3)
        self.records[key] = h


@dataclass
class DetectionStore:
    records: dict[str, LanguageDetection] = field(default_factory=dict)
    errors: list[DataError] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def get(self, chunk_id: str) -> LanguageDetection | None:
        return self.records.get(chunk_id)

    def add(self, d: LanguageDetection, where: str = ""):
        if d.chunk_id in self.records:
            msg = f"{where}duplicate detection for {d.chunk_id!r}; keeping the last one"
            log.warning(msg)
            warnings.warn(msg, DuplicateRecordWarning, stacklevel=3)
        self.records[d.chunk_id] = d


def hypothesis_from_dict(rec) -> Hypothesis:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    chunk_id, source, text = rec.get("chunk_id"), rec.get("source"), rec.get("text")
    if not isinstance(chunk_id, str) or not chunk_id:
        raise ValueError("chunk_id must be a non-empty string")
    if source not in HYPOTHESIS_SOURCES:
        raise ValueError(f"source must be one of {HYPOTHESIS_SOURCES}, got {source!r}")
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    model_id = rec.get("model_id", "")
    if not isinstance(model_id, str):
        raise ValueError("model_id must be a string")
    return Hypothesis(chunk_id, source, text, model_id)


def detection_from_dict(rec) -> LanguageDetection:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    chunk_id, language = rec.get("chunk_id"), rec.get("language")
    confidence = rec.get("confidence", 1.0)
    if not isinstance(chunk_id, str) or not chunk_id:
        raise ValueError("chunk_id must be a non-empty string")
    if not isinstance(language, str) or not language:
        raise ValueError("language must be a non-empty string")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)) or not 0 <= confidence <= 1:
        raise ValueError(f"confidence must be in [0, 1], got {confidence!r}")
    return LanguageDetection(chunk_id, language, float(confidence))


def _load(lines: Iterable[str], parse, store, name: str):
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = parse(json.loads(line))
        except ValueError as exc:
            store.errors.append(DataError(f"{name}:{line_no}: {exc}"))
            continue
        store.add(rec, f"{name}:{line_no}: ")
    return store


def load_hypotheses(source) -> HypothesisStore:
    """Index a hypothesis file by (chunk_id, source).

    ``source`` is a path or an iterable of lines. Malformed lines are
    collected in ``store.errors``; a repeated key keeps the last record and
    emits a ``DuplicateRecordWarning``.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as f:
            return _load(f, hypothesis_from_dict, HypothesisStore(), str(source))
    return _load(source, hypothesis_from_dict, HypothesisStore(), "<stream>")


def load_detections(source) -> DetectionStore:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as f:
            return _load(f, detection_from_dict, DetectionStore(), str(source))
    return _load(source, detection_from_dict, DetectionStore(), "<stream>")


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


# --- service mode ----------------------------------------------------------

@dataclass(frozen=True)
class ServiceConfig:
    base_url: str
    batch_size: int = 16
    max_in_flight: int = 4
    attempts: int = 3
    backoff: float = 0.5
    timeout: float = 60.0
    auth_header: str = "Authorization"
    auth_token: str | None = None


@dataclass(frozen=True)
class ItemFailure:
    chunk_id: str
    error: str
    retryable: bool = False


@dataclass
class BatchResult:
    records: list = field(default_factory=list)
    failures: list[ItemFailure] = field(default_factory=list)


class _Transient(Exception):
    pass


class ServiceClient:
    """Batched JSON client for the transcription and language detection service.

    ``transport`` can be any ``httpx`` transport; tests pass a ``MockTransport``.
    """

    def __init__(self, config: ServiceConfig, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        self.config = config
        headers = {}
        if config.auth_token:
            headers[config.auth_header] = config.auth_token
        self._client = httpx.Client(
            base_url=config.base_url, headers=headers, timeout=config.timeout, transport=transport
        )
        self._sleep = sleep

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, payload: list[dict]):
        """POST with retries on transport errors, 5xx, 429 and ``retryable`` bodies.

        Returns the decoded JSON list, or raises ``_Transient``/``DataError``
        once attempts are exhausted or the failure is permanent.
        """
        last = "no attempt made"
        for attempt in range(self.config.attempts):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(path, json=payload)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                continue
            if 200 <= resp.status_code < 300:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise SchemaError(f"{path}: response is not JSON") from exc
            body = {}
            try:
                body = resp.json()
            except ValueError:
                pass
            error = body.get("error", resp.reason_phrase) if isinstance(body, dict) else resp.reason_phrase
            retryable = body.get("retryable") if isinstance(body, dict) else None
            if retryable is None:
                retryable = resp.status_code >= 500 or resp.status_code == 429
            last = f"HTTP {resp.status_code}: {error}"
            if not retryable:
                raise DataError(last)
        raise _Transient(last)

    def _run(self, path: str, slices: Sequence[tuple[str, SliceSpec]], parse_item) -> BatchResult:
        result = BatchResult()
        if not slices:
            return result
        size = self.config.batch_size
        batches = [list(slices[i:i + size]) for i in range(0, len(slices), size)]

        def one(batch):
            payload = [
                {"chunk_id": cid, "media_ref": s.media_ref, "start": s.start, "end": s.end} for cid, s in batch
            ]
            wanted = [cid for cid, _ in batch]
            try:
                body = self._post(path, payload)
            except (_Transient, DataError) as exc:
                retryable = isinstance(exc, _Transient)
                return [], [ItemFailure(cid, str(exc), retryable) for cid in wanted]
            if not isinstance(body, list):
                raise SchemaError(f"{path}: response must be a JSON list")
            records, failures, seen = [], [], set()
            for item in body:
                if not isinstance(item, dict) or not isinstance(item.get("chunk_id"), str):
                    raise SchemaError(f"{path}: response item without chunk_id: {item!r}")
                cid = item["chunk_id"]
                if cid not in wanted:
                    raise SchemaError(f"{path}: response names unrequested chunk {cid!r}")
                seen.add(cid)
                if "error" in item:
                    failures.append(ItemFailure(cid, str(item["error"]), bool(item.get("retryable", False))))
                    continue
                try:
                    records.append(parse_item(item))
                except ValueError as exc:
                    raise SchemaError(f"{path}: bad item for {cid!r}: {exc}") from exc
            failures += [ItemFailure(cid, "missing from response") for cid in wanted if cid not in seen]
            return records, failures

        with ThreadPoolExecutor(max_workers=max(1, self.config.max_in_flight)) as pool:
            for records, failures in pool.map(one, batches):
                result.records += records
                result.failures += failures
        return result

    def request_transcription(
        self, slices: Sequence[tuple[str, SliceSpec]], source: str = PRIMARY, model_id: str = ""
    ) -> BatchResult:
        def parse(item):
            if not isinstance(item.get("text"), str):
                raise ValueError("text must be a string")
            return Hypothesis(item["chunk_id"], source, item["text"], str(item.get("model_id", model_id)))

        return self._run("/transcribe", slices, parse)

    def request_language(self, slices: Sequence[tuple[str, SliceSpec]]) -> BatchResult:
        return self._run("/detect_language", slices, detection_from_dict)
