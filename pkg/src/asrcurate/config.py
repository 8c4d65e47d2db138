"""Pipeline configuration: a versioned YAML file mapped onto the module dataclasses.

Unknown keys anywhere are rejected. Relative paths are resolved against the
directory of the config file. Service endpoints and the auth token may be
overridden from the environment (see ``ENV_OVERRIDES``).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .collator import CollateOptions, SpecialTokens
from .errors import ConfigError
from .gate import DatasetThresholds, Stage1Limits, Stage2Limits, Thresholds
from .metrics import MetricConfig, NormProfile
from .packer import PackPolicy

SCHEMA = "asrcurate.config/v1"

DEFAULT_DATASETS = ("svt", "smdb", "youtube", "riksdag", "dialects", "nst")

PATH_KEYS = (
    "sources", "manifests", "manifest", "chunks", "detections", "annotated", "hypotheses",
    "decisions", "tokens", "plans", "eval_pairs", "stats_report", "eval_report",
)

ENV_OVERRIDES = {
    "ASRCURATE_PRIMARY_ASR_URL": "primary_asr_url",
    "ASRCURATE_SECONDARY_ASR_URL": "secondary_asr_url",
    "ASRCURATE_DETECT_URL": "detect_url",
    "ASRCURATE_AUTH_TOKEN": "auth_token",
}


@dataclass(frozen=True)
class Paths:
    sources: Path | None = None
    manifests: tuple[Path, ...] = ()
    manifest: Path | None = None
    chunks: Path | None = None
    detections: Path | None = None
    annotated: Path | None = None
    hypotheses: Path | None = None
    decisions: Path | None = None
    tokens: Path | None = None
    plans: Path | None = None
    eval_pairs: Path | None = None
    stats_report: Path | None = None
    eval_report: Path | None = None


@dataclass(frozen=True)
class ServiceSettings:
    primary_asr_url: str | None = None
    secondary_asr_url: str | None = None
    detect_url: str | None = None
    batch_size: int = 16
    max_in_flight: int = 4
    attempts: int = 3
    backoff: float = 0.5
    timeout: float = 60.0
    auth_header: str = "Authorization"
    auth_token: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = Paths()
    target_language: str = "sv"
    allowed_datasets: tuple[str, ...] = DEFAULT_DATASETS
    metrics: MetricConfig = MetricConfig()
    packing: PackPolicy = PackPolicy()
    thresholds: Thresholds = field(default_factory=Thresholds)
    collate: CollateOptions = CollateOptions()
    special_tokens: SpecialTokens = SpecialTokens()
    inclusive_stage1: bool = False
    eval_bleu_smoothing: bool = False
    service: ServiceSettings = ServiceSettings()
    source_file: Path | None = None

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(
            self,
            packing=dataclasses.replace(self.packing, rng_seed=seed),
            collate=dataclasses.replace(self.collate, rng_seed=seed),
        )


def _take(section: Any, where: str, allowed: set[str]) -> dict:
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return dict(section)


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _make(cls, section, where, **convert):
    data = _take(section, where, _fields(cls))
    for key, fn in convert.items():
        if key in data:
            data[key] = fn(data[key])
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _thresholds(section) -> Thresholds:
    data = _take(section, "thresholds", {"timestamp_boundary_cer_max", "boundary_rule_sources", "datasets"})
    datasets = {}
    raw = data.pop("datasets", None) or {"default": {}}
    if not isinstance(raw, dict):
        raise ConfigError("thresholds.datasets: expected a mapping")
    for name, block in raw.items():
        where = f"thresholds.datasets.{name}"
        b = _take(block, where, {"stage1", "stage2", "require_both_hypotheses"})
        datasets[name] = DatasetThresholds(
            stage1=_make(Stage1Limits, b.get("stage1"), where + ".stage1"),
            stage2=_make(Stage2Limits, b.get("stage2"), where + ".stage2"),
            require_both_hypotheses=bool(b.get("require_both_hypotheses", True)),
        )
    return _make(Thresholds, {**data, "datasets": datasets}, "thresholds")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent, source_file=path)


def config_from_dict(raw, base_dir=Path("."), source_file=None, environ=None) -> PipelineConfig:
    top = _take(raw, "config", {
        "schema", "paths", "target_language", "allowed_datasets", "normalization", "metrics",
        "packing", "thresholds", "collate", "special_tokens", "stats", "eval", "service",
    })
    if top.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {top.get('schema')!r}")

    def resolve(p):
        if not isinstance(p, str):
            raise ConfigError(f"paths: expected a string, got {p!r}")
        return (Path(base_dir) / p).resolve()

    paths = _take(top.get("paths"), "paths", set(PATH_KEYS))
    if "manifests" in paths:
        m = paths["manifests"]
        paths["manifests"] = tuple(resolve(p) for p in ([m] if isinstance(m, str) else m or []))
    for k, v in paths.items():
        if k != "manifests" and v is not None:
            paths[k] = resolve(v)

    profile = _make(NormProfile, top.get("normalization"), "normalization")
    metrics = _make(MetricConfig, {**_take(top.get("metrics"), "metrics", _fields(MetricConfig) - {"profile"}),
                                   "profile": profile}, "metrics",
                    rouge_weights=tuple)
    packing = _make(PackPolicy, top.get("packing"), "packing",
                    short_len_choices=lambda v: tuple(tuple(x) for x in v))
    stats = _take(top.get("stats"), "stats", {"inclusive_stage1"})
    ev = _take(top.get("eval"), "eval", {"bleu_smoothing"})

    service = _take(top.get("service"), "service", _fields(ServiceSettings))
    env = os.environ if environ is None else environ
    for var, key in ENV_OVERRIDES.items():
        if env.get(var):
            service[key] = env[var]
    allowed = top.get("allowed_datasets", DEFAULT_DATASETS)
    if not isinstance(allowed, (list, tuple)) or not all(isinstance(d, str) for d in allowed):
        raise ConfigError("allowed_datasets must be a list of strings")
    target = top.get("target_language", "sv")
    if not isinstance(target, str) or not target:
        raise ConfigError("target_language must be a non-empty string")

    return PipelineConfig(
        paths=Paths(**paths),
        target_language=target,
        allowed_datasets=tuple(allowed),
        metrics=metrics,
        packing=packing,
        thresholds=_thresholds(top.get("thresholds")),
        collate=_make(CollateOptions, top.get("collate"), "collate"),
        special_tokens=_make(SpecialTokens, top.get("special_tokens"), "special_tokens"),
        inclusive_stage1=bool(stats.get("inclusive_stage1", False)),
        eval_bleu_smoothing=bool(ev.get("bleu_smoothing", False)),
        service=_make(ServiceSettings, service, "service"),
        source_file=source_file,
    )
