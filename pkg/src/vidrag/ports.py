"""Abstract interfaces to the external models the pipeline depends on.

Five model capabilities sit behind ports: text recognition (OCR), speech
transcription (ASR), prompt-driven object detection, text embedding, and
image-text scoring plus text generation from the video-language model.
Concrete implementations are the JSON-over-HTTP client in ``wire`` and the
deterministic fixture-backed mocks in ``mocks``.

All port calls are idempotent at the protocol level; retrying a timed-out
request never corrupts pipeline state.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("ocr", "asr", "detect", "embed_text", "clip_score", "lvlm_generate")


@dataclass(frozen=True)
class FrameRef:
    """One sampled video frame: its position, timestamp, and image location."""

    frame_index: int
    timestamp_s: float
    image_ref: str

    def __post_init__(self):
        if self.frame_index < 0 or self.timestamp_s < 0:
            raise ValueError("frame_index and timestamp_s must be non-negative")


@dataclass(frozen=True)
class OcrLine:
    frame_index: int
    text: str
    confidence: float

    def __post_init__(self):
        if not self.text:
            raise ValueError("OCR line text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class AsrSegment:
    t_start_s: float
    t_end_s: float
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("ASR segment text must be non-empty")
        if self.t_end_s <= self.t_start_s:
            raise ValueError("t_end_s must be greater than t_start_s")


@dataclass(frozen=True)
class Detection:
    """A detected object: ``box`` is (x_min, y_min, length, width) in pixels,
    with length along x and width along y."""

    frame_index: int
    category: str
    box: tuple[float, float, float, float]
    score: float


@dataclass(frozen=True)
class ExtractorEndpoint:
    kind: str
    base_url: str
    timeout_s: float = 30.0
    max_retries: int = 3
    retry_backoff_s: float = 0.5
    bearer_token: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}")


class OcrPort(abc.ABC):
    @abc.abstractmethod
    def ocr(self, frames: Sequence[FrameRef]) -> list[OcrLine]:
        """Recognize text on each frame; frames without text yield no lines."""


class AsrPort(abc.ABC):
    @abc.abstractmethod
    def transcribe(self, audio_ref: str) -> list[AsrSegment]:
        """Transcribe speech into ordered, non-overlapping segments.

        Raises NoAudioTrack when the input carries no audio; this is a
        skip signal, not a failure.
        """


class DetectPort(abc.ABC):
    @abc.abstractmethod
    def detect(self, frames: Sequence[FrameRef], entity_prompts: Sequence[str]) -> list[Detection]:
        """Detect the prompted entities; categories are verbatim prompt strings."""


class EmbedPort(abc.ABC):
    @abc.abstractmethod
    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed each text; one vector per input, all of equal dimension."""


class ClipScorePort(abc.ABC):
    @abc.abstractmethod
    def clip_scores(self, frames: Sequence[FrameRef], prompts: Sequence[str]) -> np.ndarray:
        """Score every (prompt, frame) pair; shape (len(prompts), len(frames))."""


class LvlmPort(abc.ABC):
    @abc.abstractmethod
    def generate(self, frames: Sequence[FrameRef], prompt: str) -> str:
        """Generate text from the model; ``frames`` may be empty (text-only call)."""


@dataclass
class PortSet:
    """The full set of ports one pipeline run operates against."""

    ocr: OcrPort
    asr: AsrPort
    detect: DetectPort
    embed: EmbedPort
    clip: ClipScorePort
    lvlm: LvlmPort
    fingerprint: dict[str, str] = field(default_factory=dict)


# Shared precondition checks, used by every port implementation.

def check_frames(frames: Sequence[FrameRef]) -> None:
    if not frames:
        raise ValueError("frames must be non-empty")


def check_prompts(prompts: Sequence[str]) -> None:
    if not prompts or any(not p for p in prompts):
        raise ValueError("entity prompts must be non-empty strings")


def check_texts(texts: Sequence[str]) -> None:
    if not texts or any(not t for t in texts):
        raise ValueError("texts must be non-empty strings")
