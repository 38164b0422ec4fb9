"""Build the three per-video databases: OCR, ASR (vector-indexed), and
detections on selected keyframes.

The OCR and ASR paths embed their text records and store them in a
``FlatIndex``; the detection path first narrows work to keyframes whose
scaled prompt-frame similarity clears a threshold. Builders never mutate
shared state, so the three paths can run in any order or concurrently.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MalformedResponse, NoAudioTrack, PortError
from .ports import (
    AsrPort,
    AsrSegment,
    ClipScorePort,
    Detection,
    DetectPort,
    EmbedPort,
    FrameRef,
    OcrPort,
)
from .vector_index import FlatIndex, IndexEntry

logger = logging.getLogger(__name__)

AUX_KINDS = ("ocr", "asr", "det")

DEFAULT_ASR_MAX_CHARS = 256


@dataclass(frozen=True)
class AuxRecord:
    """One timestamped auxiliary text snippet stored in a database."""

    id: str
    kind: str
    t_start_s: float
    t_end_s: float
    frame_index: int | None
    text: str

    def __post_init__(self):
        if self.kind not in AUX_KINDS:
            raise ValueError(f"unknown aux kind {self.kind!r}")
        if not self.text:
            raise ValueError("aux record text must be non-empty")
        if self.kind == "asr":
            if self.t_end_s <= self.t_start_s:
                raise ValueError("asr records need t_end_s > t_start_s")
        else:
            if self.frame_index is None or self.t_start_s != self.t_end_s:
                raise ValueError(f"{self.kind} records are frame-anchored instants")

    def to_payload(self) -> dict:
        return asdict(self)

    @classmethod
    def from_payload(cls, payload: dict) -> "AuxRecord":
        return cls(
            id=str(payload["id"]),
            kind=payload["kind"],
            t_start_s=float(payload["t_start_s"]),
            t_end_s=float(payload["t_end_s"]),
            frame_index=payload.get("frame_index"),
            text=payload["text"],
        )


def _index_records(records: Sequence[AuxRecord], embed_port: EmbedPort) -> FlatIndex:
    index = FlatIndex()
    if not records:
        return index
    vectors = embed_port.embed_text([r.text for r in records])
    index.add(
        IndexEntry(id=r.id, vector=v, payload=r.to_payload())
        for r, v in zip(records, vectors)
    )
    return index


def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def build_ocr_db(
    frames: Sequence[FrameRef], ocr_port: OcrPort, embed_port: EmbedPort
) -> FlatIndex:
    """Recognize, deduplicate, embed and index per-frame OCR text.

    All lines of a frame are joined in reading order into one record;
    consecutive frames with identical normalized text keep only the earliest
    occurrence. Frames whose OCR call fails are skipped with a warning.
    """
    records: list[AuxRecord] = []
    previous_norm: str | None = None
    for frame in frames:
        try:
            lines = ocr_port.ocr([frame])
        except PortError as exc:
            logger.warning("OCR failed on frame %d, skipping: %s", frame.frame_index, exc)
            previous_norm = None
            continue
        text = "\n".join(line.text for line in lines)
        if not text:
            previous_norm = None
            continue
        norm = _normalize_text(text)
        if norm == previous_norm:
            previous_norm = norm
            continue
        previous_norm = norm
        records.append(
            AuxRecord(
                id=f"ocr-{frame.frame_index:04d}",
                kind="ocr",
                t_start_s=frame.timestamp_s,
                t_end_s=frame.timestamp_s,
                frame_index=frame.frame_index,
                text=text,
            )
        )
    return _index_records(records, embed_port)


def chunk_asr(segments: Sequence[AsrSegment], max_chars: int) -> list[AuxRecord]:
    """Greedily merge consecutive segments into chunks of at most ``max_chars``.

    A chunk closes when appending the next segment (joined with a space)
    would exceed the limit; a single segment longer than the limit stays as
    its own oversize chunk, never split. Every input character appears in
    exactly one chunk, in order.
    """
    if max_chars < 1:
        raise ValueError("max_chars must be >= 1")
    groups: list[list[AsrSegment]] = []
    current: list[AsrSegment] = []
    current_len = 0
    for segment in segments:
        if current and current_len + 1 + len(segment.text) > max_chars:
            groups.append(current)
            current, current_len = [], 0
        if current:
            current_len += 1 + len(segment.text)
        else:
            current_len = len(segment.text)
        current.append(segment)
    if current:
        groups.append(current)

    return [
        AuxRecord(
            id=f"asr-{i:04d}",
            kind="asr",
            t_start_s=group[0].t_start_s,
            t_end_s=group[-1].t_end_s,
            frame_index=None,
            text=" ".join(s.text for s in group),
        )
        for i, group in enumerate(groups)
    ]


def build_asr_db(
    audio_ref: str | None,
    asr_port: AsrPort,
    embed_port: EmbedPort,
    max_chars: int = DEFAULT_ASR_MAX_CHARS,
) -> FlatIndex:
    """Transcribe, chunk, embed and index speech; no audio yields an empty index."""
    if audio_ref is None:
        return FlatIndex()
    try:
        segments = asr_port.transcribe(audio_ref)
    except NoAudioTrack:
        logger.info("no audio track in %s; ASR database left empty", audio_ref)
        return FlatIndex()
    return _index_records(chunk_asr(segments, max_chars), embed_port)


@dataclass
class KeyframeSelection:
    """Outcome of scaled prompt-frame similarity thresholding.

    ``raw_scores[j]`` is the mean prompt similarity of frame j, and
    ``normalized_scores[j] = alpha * raw / sum(raw)`` with
    ``alpha = beta * m / base_frames``, so the normalized scores sum to alpha
    (selection is invariant to a positive rescaling of the raw scores).
    """

    selected: list[int] = field(default_factory=list)  # frame_index values
    raw_scores: list[float] = field(default_factory=list)
    normalized_scores: list[float] = field(default_factory=list)
    alpha: float = 0.0
    beta: float = 0.0
    base_frames: int = 0
    m: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "KeyframeSelection":
        return cls(**data)


def select_keyframes(
    frames: Sequence[FrameRef],
    entity_prompts: Sequence[str],
    clip_port: ClipScorePort,
    t: float,
    beta: float,
    base_frames: int,
) -> KeyframeSelection:
    """Pick the frames whose normalized prompt similarity strictly exceeds ``t``.

    ``entity_prompts`` must already be filtered and prefixed for the scorer.
    If all raw scores sum to zero, nothing is selected.
    """
    if not frames:
        raise ValueError("frames must be non-empty")
    if not entity_prompts:
        raise ValueError("entity_prompts must be non-empty")
    matrix = np.asarray(clip_port.clip_scores(frames, entity_prompts), dtype=np.float64)
    if matrix.shape != (len(entity_prompts), len(frames)):
        raise MalformedResponse(
            f"score matrix has shape {matrix.shape}, expected "
            f"{(len(entity_prompts), len(frames))}"
        )
    m = len(frames)
    raw = matrix.mean(axis=0)
    alpha = beta * m / base_frames
    total = float(raw.sum())
    if total == 0.0:
        normalized = np.zeros(m, dtype=np.float64)
    else:
        normalized = alpha * raw / total
    selected = [frames[j].frame_index for j in range(m) if normalized[j] > t]
    return KeyframeSelection(
        selected=selected,
        raw_scores=[float(v) for v in raw],
        normalized_scores=[float(v) for v in normalized],
        alpha=alpha,
        beta=beta,
        base_frames=base_frames,
        m=m,
    )


def build_det_db(
    keyframes: Sequence[FrameRef],
    entity_prompts: Sequence[str],
    det_port: DetectPort,
) -> dict[int, list[Detection]]:
    """Run detection on the selected keyframes, grouped by frame index.

    An empty keyframe set yields an empty database without touching the
    detector. Detections with non-positive extents are rejected with a
    warning.
    """
    if not keyframes:
        return {}
    detections = det_port.detect(keyframes, entity_prompts)
    by_frame: dict[int, list[Detection]] = {frame.frame_index: [] for frame in keyframes}
    for det in detections:
        _, _, length, width = det.box
        if length <= 0 or width <= 0:
            logger.warning(
                "rejecting degenerate box %s for %r on frame %d",
                det.box, det.category, det.frame_index,
            )
            continue
        by_frame.setdefault(det.frame_index, []).append(det)
    return by_frame


# --- on-disk forms ---------------------------------------------------------

def write_detections_jsonl(path: str | Path, by_frame: dict[int, list[Detection]]) -> None:
    lines = []
    for frame_index in sorted(by_frame):
        for det in by_frame[frame_index]:
            lines.append(
                json.dumps(
                    {
                        "frame_index": det.frame_index,
                        "category": det.category,
                        "box": list(det.box),
                        "score": det.score,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_detections_jsonl(path: str | Path) -> dict[int, list[Detection]]:
    by_frame: dict[int, list[Detection]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        det = Detection(
            frame_index=int(data["frame_index"]),
            category=data["category"],
            box=tuple(data["box"]),
            score=float(data["score"]),
        )
        by_frame.setdefault(det.frame_index, []).append(det)
    return by_frame
