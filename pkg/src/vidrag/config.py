"""Pipeline configuration: defaults, TOML file loading, environment overrides."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .ports import KINDS, ExtractorEndpoint

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Environment variables overriding endpoint URLs, one per extractor kind.
ENDPOINT_ENV_VARS = {
    "ocr": "VIDRAG_OCR_URL",
    "asr": "VIDRAG_ASR_URL",
    "detect": "VIDRAG_DET_URL",
    "embed_text": "VIDRAG_EMBED_URL",
    "clip_score": "VIDRAG_CLIP_URL",
    "lvlm_generate": "VIDRAG_LVLM_URL",
}


@dataclass
class PipelineConfig:
    frames_n: int = 32
    t_retrieval: float = 0.3
    t_keyframe: float = 0.3
    beta: float = 4.0
    base_frames: int = 16
    asr_max_chars: int = 256
    budget_tokens: int | str | None = None
    use_ocr: bool = True
    use_asr: bool = True
    use_det: bool = True
    request_encoding: str = "concat"  # or "average"
    group_by_kind: bool = False
    hit_cap: int | None = None
    template_dir: str | None = None
    fps_default: float = 1.0
    bench_workers: int = 1
    mock_dir: str | None = None
    endpoints: dict[str, ExtractorEndpoint] = field(default_factory=dict)

    def __post_init__(self):
        if self.frames_n < 1:
            raise ValueError("frames_n must be >= 1")
        for name in ("t_retrieval", "t_keyframe"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.asr_max_chars < 1:
            raise ValueError("asr_max_chars must be >= 1")
        if self.request_encoding not in ("concat", "average"):
            raise ValueError(f"unknown request_encoding {self.request_encoding!r}")

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _endpoint_from(kind: str, value, defaults: dict) -> ExtractorEndpoint:
    if isinstance(value, str):
        value = {"url": value}
    return ExtractorEndpoint(
        kind=kind,
        base_url=value["url"],
        timeout_s=float(value.get("timeout_s", defaults.get("timeout_s", 30.0))),
        max_retries=int(value.get("max_retries", defaults.get("max_retries", 3))),
        retry_backoff_s=float(
            value.get("retry_backoff_s", defaults.get("retry_backoff_s", 0.5))
        ),
        bearer_token=value.get("bearer_token", defaults.get("bearer_token")),
    )


def load_config(
    path: str | Path | None = None, env: dict[str, str] | None = None
) -> PipelineConfig:
    """Build a PipelineConfig from an optional TOML file plus env overrides.

    File shape: a ``[pipeline]`` table mirroring PipelineConfig fields and an
    ``[endpoints]`` table mapping kinds to URLs or per-kind tables
    (``url``, ``timeout_s``, ``max_retries``, ``retry_backoff_s``,
    ``bearer_token``); ``[endpoints.defaults]`` sets shared options.
    """
    env = os.environ if env is None else env
    pipeline: dict = {}
    endpoint_values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        pipeline = data.get("pipeline", {})
        endpoint_values = data.get("endpoints", {})

    defaults = endpoint_values.pop("defaults", {}) if endpoint_values else {}
    endpoints = {
        kind: _endpoint_from(kind, value, defaults)
        for kind, value in endpoint_values.items()
        if kind in KINDS
    }
    for kind, var in ENDPOINT_ENV_VARS.items():
        url = env.get(var)
        if url:
            base = endpoints.get(kind)
            endpoints[kind] = _endpoint_from(
                kind,
                {
                    "url": url,
                    **(
                        {
                            "timeout_s": base.timeout_s,
                            "max_retries": base.max_retries,
                            "retry_backoff_s": base.retry_backoff_s,
                            "bearer_token": base.bearer_token,
                        }
                        if base
                        else {}
                    ),
                },
                defaults,
            )

    known = {f for f in PipelineConfig.__dataclass_fields__ if f != "endpoints"}
    kwargs = {k: v for k, v in pipeline.items() if k in known}
    unknown = set(pipeline) - known
    if unknown:
        raise ValueError(f"unknown [pipeline] keys in {path}: {sorted(unknown)}")
    return PipelineConfig(endpoints=endpoints, **kwargs)
