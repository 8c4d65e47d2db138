"""Pipeline stages. Each stage reads its declared input files and writes its
outputs atomically; stages share nothing but those files.

ingest -> pack -> annotate -> gate -> collate, plus stats and eval reports.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import clients
from .collator import build_token_plan, load_token_map
from .config import PipelineConfig
from .errors import ConfigError, DataError, ManifestError
from .gate import (
    DEFERRED, REJECTED, RETAINED, STAGE1, STAGE2, Check, LanguageDetection, StageDecision,
    decide, language_gate, nonspeech_decision, score_chunk,
)
from .manifest import (
    AudioDocument, document_from_dict, dumps_document, ingest_subtitles, read_manifest, validate_document,
)
from .metrics import PRIMARY, SECONDARY
from .packer import Chunk, emit_slice_spec, extract_nonspeech, pack_chunks, sample_short_chunks, select_nonspeech
from .report import corpus_stats, evaluate

log = logging.getLogger(__name__)

STAGE_NAMES = ("ingest", "pack", "annotate", "gate", "collate", "stats", "eval")

# inputs that must exist before a stage runs, and outputs it writes
STAGE_IO = {
    "ingest": ((), ("manifest",)),
    "pack": (("manifest",), ("chunks",)),
    "annotate": (("chunks", "detections"), ("annotated",)),
    "gate": (("chunks", "annotated", "hypotheses"), ("decisions",)),
    "collate": (("chunks", "decisions", "tokens"), ("plans",)),
    "stats": (("chunks", "decisions"), ("stats_report",)),
    "eval": (("eval_pairs",), ("eval_report",)),
}


@dataclass
class StageResult:
    stage: str
    counts: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    def bump(self, key, n=1):
        self.counts[key] = self.counts.get(key, 0) + n


# --- file helpers ----------------------------------------------------------

def atomic_write(path: Path, data: str | bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: invalid JSON ({exc})") from exc
    return out


def read_chunks(path) -> list[Chunk]:
    return [Chunk.from_dict(r) for r in read_jsonl(path)]


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map, in a process pool when ``workers > 1``."""
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def require_paths(cfg: PipelineConfig, stage: str):
    """Raise ConfigError naming the first missing input or unset output path."""
    inputs, outputs = STAGE_IO[stage]
    if stage == "ingest":
        if cfg.paths.sources is None and not cfg.paths.manifests:
            raise ConfigError("ingest needs paths.sources or paths.manifests")
        inputs = tuple(k for k in ("sources",) if cfg.paths.sources is not None)
        for p in cfg.paths.manifests:
            if not p.exists():
                raise ConfigError(f"ingest: input file does not exist: {p}")
    for key in inputs:
        p = getattr(cfg.paths, key)
        if p is None:
            raise ConfigError(f"{stage}: paths.{key} is not set")
        if not p.exists():
            raise ConfigError(f"{stage}: input file does not exist: {p}")
    for key in outputs:
        if getattr(cfg.paths, key) is None:
            raise ConfigError(f"{stage}: paths.{key} is not set")


# --- ingest ----------------------------------------------------------------

def _ingest_source(rec: dict, base: Path, allowed) -> tuple[AudioDocument | None, list[str]]:
    errs: list[ManifestError] = []
    sub = Path(rec["subtitle"])
    if not sub.is_absolute():
        sub = base / sub
    try:
        text = sub.read_text(encoding="utf-8-sig")
    except OSError as exc:
        return None, [f"{rec.get('doc_id')}: cannot read subtitle file {sub}: {exc}"]
    if allowed is not None and rec["dataset"] not in allowed:
        return None, [f"{rec.get('doc_id')}: dataset {rec['dataset']!r} not in allow-list"]
    doc = ingest_subtitles(text, rec["media_ref"], rec["dataset"], rec.get("doc_id"), rec.get("duration"), errs)
    return doc, [f"{doc.doc_id}: {e}" for e in errs]


def run_ingest(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "ingest")
    res = StageResult("ingest")
    docs: list[AudioDocument] = []
    if cfg.paths.sources is not None:
        recs = read_jsonl(cfg.paths.sources)
        fn = partial(_ingest_source, base=cfg.paths.sources.parent, allowed=frozenset(cfg.allowed_datasets))
        for doc, errs in parallel_map(fn, recs, workers):
            res.errors += errs
            res.bump("subtitle_block_errors", len(errs))
            if doc is not None:
                docs.append(doc)
    for m in cfg.paths.manifests:
        errs: list[ManifestError] = []
        docs += read_manifest(m, errs, cfg.allowed_datasets)
        res.errors += [f"{m}: {e}" for e in errs]
        res.bump("manifest_line_errors", len(errs))
    seen = set()
    for d in docs:
        if d.doc_id in seen:
            raise DataError(f"duplicate doc_id {d.doc_id!r} across ingest inputs")
        seen.add(d.doc_id)
        report = validate_document(d, cfg.allowed_datasets)
        res.bump("validation_warnings", len(report.warnings))
        res.bump("validation_errors", len(report.errors))
        res.errors += [f"{d.doc_id}: {v.code}: {v.message}" for v in report.errors]
    res.counts["documents"] = len(docs)
    res.counts["observations"] = sum(len(d.observations) for d in docs)
    if not dry_run:
        atomic_write(cfg.paths.manifest, "".join(dumps_document(d) + "\n" for d in docs))
        res.outputs.append(cfg.paths.manifest)
    return res


# --- pack ------------------------------------------------------------------

def _pack_document(doc: AudioDocument, policy, fingerprint: str):
    full = pack_chunks(doc, policy.max_chunk_len, fingerprint)
    chunks = {c.chunk_id: c for c in full}
    if policy.short_len_choices:
        for c in sample_short_chunks(doc, policy, fingerprint):
            chunks.setdefault(c.chunk_id, c)
    speech = sorted(chunks.values(), key=lambda c: (c.start, c.end, c.chunk_id))
    speech_seconds = sum(c.duration for c in full if not c.oversize)
    return speech, extract_nonspeech(doc, policy, fingerprint), speech_seconds


def run_pack(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "pack")
    res = StageResult("pack")
    errs: list[ManifestError] = []
    docs = read_manifest(cfg.paths.manifest, errs, cfg.allowed_datasets)
    res.errors += [str(e) for e in errs]
    usable = []
    for d in docs:
        report = validate_document(d, cfg.allowed_datasets)
        if report.errors:
            res.errors += [f"{d.doc_id}: {v.code}: {v.message}" for v in report.errors]
            res.bump("documents_skipped")
        else:
            usable.append(d)
    policy = cfg.packing
    fn = partial(_pack_document, policy=policy, fingerprint=policy.fingerprint())
    packed = parallel_map(fn, usable, workers)

    # corpus-wide non-speech cap: single pass over all candidates
    candidates = [c for _, cands, _ in packed for c in cands]
    total_speech = sum(s for _, _, s in packed)
    chosen = {c.chunk_id for c in select_nonspeech(candidates, total_speech, policy)}

    out = []
    for speech, cands, _ in packed:
        out += speech
        out += [c for c in cands if c.chunk_id in chosen]
    res.counts["documents"] = len(usable)
    res.counts["speech_chunks"] = sum(not c.is_nonspeech for c in out)
    res.counts["oversize_chunks"] = sum(c.oversize for c in out)
    res.counts["nonspeech_candidates"] = len(candidates)
    res.counts["nonspeech_chunks"] = len(chosen)
    if not dry_run:
        atomic_write(cfg.paths.chunks, jsonl(c.to_dict() for c in out))
        res.outputs.append(cfg.paths.chunks)
    return res


# --- annotate --------------------------------------------------------------

def _service_client(cfg: PipelineConfig, url: str, transport=None) -> clients.ServiceClient:
    s = cfg.service
    return clients.ServiceClient(
        clients.ServiceConfig(url, s.batch_size, s.max_in_flight, s.attempts, s.backoff, s.timeout,
                              s.auth_header, s.auth_token),
        transport=transport,
    )


def fetch_from_service(cfg: PipelineConfig, chunks: list[Chunk], res: StageResult, transport=None):
    """Service mode: detect language for every chunk, transcribe retained speech
    chunks with both ASR systems, and write the detection/hypothesis files."""
    s = cfg.service
    if not s.detect_url:
        raise ConfigError("service mode needs service.detect_url (or ASRCURATE_DETECT_URL)")
    slices = [(c.chunk_id, emit_slice_spec(c)) for c in chunks]
    with _service_client(cfg, s.detect_url, transport) as client:
        det = client.request_language(slices)
    res.errors += [f"detect {f.chunk_id}: {f.error}" for f in det.failures]
    atomic_write(cfg.paths.detections, jsonl(d.to_dict() for d in det.records))
    by_id = {d.chunk_id: d for d in det.records}
    retained = [
        (c.chunk_id, emit_slice_spec(c)) for c in chunks
        if not c.is_nonspeech and language_gate(c.chunk_id, by_id.get(c.chunk_id), cfg.target_language).status == RETAINED
    ]
    hyps = []
    for source, url in ((PRIMARY, s.primary_asr_url), (SECONDARY, s.secondary_asr_url)):
        if not url:
            continue
        with _service_client(cfg, url, transport) as client:
            out = client.request_transcription(retained, source)
        hyps += out.records
        res.errors += [f"transcribe[{source}] {f.chunk_id}: {f.error}" for f in out.failures]
    if cfg.paths.hypotheses is None:
        raise ConfigError("service mode needs paths.hypotheses to store transcriptions")
    atomic_write(cfg.paths.hypotheses, jsonl(h.to_dict() for h in sorted(hyps, key=lambda h: (h.chunk_id, h.source))))


def run_annotate(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False, service: bool = False,
                 transport=None) -> StageResult:
    res = StageResult("annotate")
    if service:
        for key in ("chunks", "detections", "annotated"):
            if getattr(cfg.paths, key) is None:
                raise ConfigError(f"annotate: paths.{key} is not set")
        if not cfg.paths.chunks.exists():
            raise ConfigError(f"annotate: input file does not exist: {cfg.paths.chunks}")
        chunks = read_chunks(cfg.paths.chunks)
        if not dry_run:
            fetch_from_service(cfg, chunks, res, transport)
    else:
        require_paths(cfg, "annotate")
        chunks = read_chunks(cfg.paths.chunks)
    if dry_run and service:
        res.counts["chunks"] = len(chunks)
        return res
    store = clients.load_detections(cfg.paths.detections)
    res.errors += [str(e) for e in store.errors]
    out = []
    for c in chunks:
        ld = language_gate(c.chunk_id, store.get(c.chunk_id), cfg.target_language, c.is_nonspeech)
        res.bump(ld.status)
        det = store.get(c.chunk_id)
        out.append({
            "chunk_id": c.chunk_id,
            "status": ld.status,
            "language": ld.language,
            "confidence": det.confidence if det else None,
            "reason": ld.reason,
        })
    res.counts["chunks"] = len(chunks)
    if not dry_run:
        atomic_write(cfg.paths.annotated, jsonl(out))
        res.outputs.append(cfg.paths.annotated)
    return res


# --- gate ------------------------------------------------------------------

def gate_chunk(item, cfg: PipelineConfig) -> tuple[dict, str | None]:
    """Decision record for one chunk; the second element is a data error message, if any."""
    chunk, lang, hyps = item
    cid = chunk.chunk_id
    scores = []
    error = None
    if lang is None or lang["status"] == DEFERRED:
        decision = StageDecision(cid, DEFERRED, reasons=(Check("language", "language", "detection", None, None, False),),
                                 is_nonspeech=chunk.is_nonspeech)
    elif lang["status"] == REJECTED:
        decision = StageDecision(
            cid, REJECTED,
            reasons=(Check("language", "language", f"detected:{lang['language']}", lang["confidence"], None, False),),
            is_nonspeech=chunk.is_nonspeech,
        )
    elif chunk.is_nonspeech:
        decision = nonspeech_decision(cid, LanguageDetection(cid, lang["language"], lang["confidence"]))
    elif chunk.oversize:
        decision = StageDecision(cid, REJECTED, reasons=(Check("pack", "duration", "chunk", chunk.duration,
                                                               cfg.packing.max_chunk_len, False),))
    elif not hyps:
        decision = StageDecision(cid, DEFERRED, reasons=(Check(STAGE1, "hypothesis", PRIMARY, None, None, False),))
    else:
        try:
            scored = score_chunk(chunk, hyps, cfg.metrics)
        except ValueError as exc:
            decision = StageDecision(cid, REJECTED, reasons=(Check(STAGE1, "reference", "chunk", None, None, False),))
            error = str(exc)
        else:
            decision = decide(scored, cfg.thresholds, chunk.dataset, cid)
            scores = [s.to_dict() for s in scored]
    rec = decision.to_dict()
    rec.update(doc_id=chunk.doc_id, dataset=chunk.dataset, duration=chunk.duration, scores=scores)
    return rec, error


def run_gate(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "gate")
    res = StageResult("gate")
    chunks = read_chunks(cfg.paths.chunks)
    annotated = {r["chunk_id"]: r for r in read_jsonl(cfg.paths.annotated)}
    store = clients.load_hypotheses(cfg.paths.hypotheses)
    res.errors += [str(e) for e in store.errors]
    items = [(c, annotated.get(c.chunk_id), store.texts_for(c.chunk_id)) for c in chunks]
    out = []
    for rec, err in parallel_map(partial(gate_chunk, cfg=cfg), items, workers):
        out.append(rec)
        res.bump(rec["stage"])
        if rec["timestamp_eligible"]:
            res.bump("timestamp_eligible")
        if err:
            res.errors.append(err)
    res.counts["chunks"] = len(out)
    if not dry_run:
        atomic_write(cfg.paths.decisions, jsonl(out))
        res.outputs.append(cfg.paths.decisions)
    return res


# --- collate ---------------------------------------------------------------

def collate_chunk(item, cfg: PipelineConfig, tokens: dict) -> tuple[dict | None, str | None]:
    chunk, decision = item
    try:
        prev = None
        if chunk.prev_obs_ids:
            prev = []
            for oid in chunk.prev_obs_ids:
                if oid not in tokens:
                    raise DataError(f"chunk {chunk.chunk_id}: no tokens for previous observation {oid!r}")
                prev += tokens[oid]
        plan = build_token_plan(chunk, decision, tokens, prev, cfg.collate, cfg.special_tokens)
    except DataError as exc:
        return None, str(exc)
    return plan.to_dict(), None


_TOKENS: dict = {}


def _collate_worker(item, cfg):
    return collate_chunk(item, cfg, _TOKENS)


def _init_tokens(tokens):
    _TOKENS.clear()
    _TOKENS.update(tokens)


def run_collate(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "collate")
    res = StageResult("collate")
    chunks = {c.chunk_id: c for c in read_chunks(cfg.paths.chunks)}
    tokens = load_token_map(cfg.paths.tokens)
    items = []
    for rec in read_jsonl(cfg.paths.decisions):
        if rec["stage"] not in (STAGE1, STAGE2):
            continue
        if rec["chunk_id"] not in chunks:
            raise DataError(f"decision for unknown chunk {rec['chunk_id']!r}")
        items.append((chunks[rec["chunk_id"]], StageDecision.from_dict(rec)))
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_tokens, initargs=(tokens,)) as pool:
            results = list(pool.map(partial(_collate_worker, cfg=cfg), items,
                                    chunksize=max(1, len(items) // (workers * 4))))
    else:
        results = [collate_chunk(it, cfg, tokens) for it in items]
    out = []
    for plan, err in results:
        if err:
            res.errors.append(err)
            res.bump("failed")
            continue
        out.append(plan)
        for k, v in plan["meta"].items():
            if v:
                res.bump(k)
    res.counts["plans"] = len(out)
    if not dry_run:
        atomic_write(cfg.paths.plans, jsonl(out))
        res.outputs.append(cfg.paths.plans)
    return res


# --- reports ---------------------------------------------------------------

def run_stats(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "stats")
    res = StageResult("stats")
    durations = {c.chunk_id: c.duration for c in read_chunks(cfg.paths.chunks)}
    decisions = read_jsonl(cfg.paths.decisions)
    stats = corpus_stats(decisions, durations, cfg.inclusive_stage1)
    res.counts["decisions"] = len(decisions)
    if not dry_run:
        base = cfg.paths.stats_report
        for suffix, body in ((".txt", stats.render_text()), (".csv", stats.render_csv())):
            p = base.with_name(base.name + suffix)
            atomic_write(p, body)
            res.outputs.append(p)
    return res


def run_eval(cfg: PipelineConfig, workers: int = 1, dry_run: bool = False) -> StageResult:
    require_paths(cfg, "eval")
    res = StageResult("eval")
    pairs = read_jsonl(cfg.paths.eval_pairs)
    for i, p in enumerate(pairs, 1):
        missing = {"test_set", "system", "reference", "hypothesis"} - p.keys()
        if missing:
            raise DataError(f"{cfg.paths.eval_pairs}:{i}: missing fields {sorted(missing)}")
    report = evaluate(pairs, cfg.metrics.profile, cfg.metrics.bleu_max_n, cfg.eval_bleu_smoothing, workers)
    res.counts["pairs"] = len(pairs)
    res.counts["rows"] = len(report.rows)
    if not dry_run:
        base = cfg.paths.eval_report
        for suffix, body in ((".txt", report.render_text()), (".csv", report.render_csv())):
            p = base.with_name(base.name + suffix)
            atomic_write(p, body)
            res.outputs.append(p)
    return res


RUNNERS = {
    "ingest": run_ingest,
    "pack": run_pack,
    "annotate": run_annotate,
    "gate": run_gate,
    "collate": run_collate,
    "stats": run_stats,
    "eval": run_eval,
}


def run_all(cfg: PipelineConfig, workers: int = 1) -> list[StageResult]:
    return [RUNNERS[name](cfg, workers) for name in STAGE_NAMES]
