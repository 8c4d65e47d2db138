"""Curation toolkit turning subtitled / aligned audio collections into
quality-gated ASR training manifests and token plans."""

from .manifest import AudioDocument, Observation, SliceSpec, parse_manifest, ingest_subtitles, validate_document
from .metrics import (
    NormProfile, ChunkScores, normalize, edit_distance, wer, cer, bleu, rouge_n, weighted_rouge,
    boundary_cer, boundary_word_match,
)
from .packer import Chunk, PackPolicy, pack_chunks, sample_short_chunks, extract_nonspeech, emit_slice_spec
from .gate import Thresholds, StageDecision, language_gate, score_chunk, stage1_filter, stage2_filter
from .collator import SpecialTokens, CollateOptions, TokenPlan, quantize_timestamp, build_token_plan, build_loss_mask
from .report import CorpusStats, EvalReport, corpus_stats, evaluate

__version__ = "0.1.0"
