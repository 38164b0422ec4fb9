"""Frame sources: pre-extracted frame directories and decodable video files.

A frame directory is the first-class input (no codecs required): either a
``frames.json`` manifest listing files with timestamps, or a plain directory
of images timestamped at a default rate. Video files are decoded with OpenCV
when it is installed, dumping the sampled frames as PNGs next to the
database.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeFailure
from .ports import FrameRef

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
AUDIO_SUFFIXES = (".json", ".wav", ".mp3", ".flac", ".m4a")

FRAMES_MANIFEST = "frames.json"


@dataclass
class FrameSource:
    """Every available frame of one video, plus its audio reference (if any)."""

    frames: list[FrameRef]
    audio_ref: str | None


def _load_frame_dir(root: Path, fps_default: float) -> FrameSource:
    manifest_path = root / FRAMES_MANIFEST
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        fps = float(manifest.get("fps", fps_default))
        frames = []
        for position, item in enumerate(manifest["frames"]):
            timestamp = float(item.get("timestamp_s", position / fps))
            frames.append(FrameRef(position, timestamp, str(root / item["file"])))
        audio = manifest.get("audio")
        audio_ref = str(root / audio) if audio else None
        return FrameSource(frames=frames, audio_ref=audio_ref)

    files = sorted(
        p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if not files:
        raise DecodeFailure(f"no frames found in directory {root}")
    frames = [
        FrameRef(position, position / fps_default, str(path))
        for position, path in enumerate(files)
    ]
    audio_candidates = [
        p for p in root.iterdir()
        if p.is_file() and p.stem == "audio" and p.suffix.lower() in AUDIO_SUFFIXES
    ]
    audio_ref = str(audio_candidates[0]) if audio_candidates else None
    return FrameSource(frames=frames, audio_ref=audio_ref)


def _sidecar_audio(video_path: Path) -> str | None:
    for suffix in (".audio.json", ".wav", ".mp3"):
        candidate = video_path.with_name(video_path.stem + suffix)
        if candidate.is_file():
            return str(candidate)
    return None


def _decode_video(video_path: Path, n: int, dump_dir: Path, fps_default: float) -> FrameSource:
    try:
        import cv2
    except ImportError as exc:
        raise DecodeFailure(
            f"OpenCV is not installed; pre-extract {video_path} into a frame directory"
        ) from exc

    capture = cv2.VideoCapture(str(video_path))
    if not capture.isOpened():
        raise DecodeFailure(f"cannot open video {video_path}")
    fps = capture.get(cv2.CAP_PROP_FPS) or fps_default
    total = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
    if total <= 0:
        raise DecodeFailure(f"video {video_path} reports no frames")

    wanted = sorted({int(round(v)) for v in np.linspace(0, total - 1, min(n, total))})
    dump_dir.mkdir(parents=True, exist_ok=True)
    frames: list[FrameRef] = []
    source_index = 0
    position = 0
    while wanted:
        ok, image = capture.read()
        if not ok:
            break
        if source_index == wanted[0]:
            wanted.pop(0)
            out = dump_dir / f"frame_{position:05d}.png"
            cv2.imwrite(str(out), image)
            frames.append(FrameRef(position, source_index / fps, str(out)))
            position += 1
        source_index += 1
    capture.release()
    if not frames:
        raise DecodeFailure(f"decoded no frames from {video_path}")
    return FrameSource(frames=frames, audio_ref=_sidecar_audio(video_path))


def sample_uniform(frames: list[FrameRef], n: int) -> list[FrameRef]:
    """Uniformly sample ``n`` frames by position, re-indexed from zero."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(frames) > n:
        picks = [int(round(v)) for v in np.linspace(0, len(frames) - 1, n)]
        frames = [frames[i] for i in picks]
    return [
        FrameRef(position, frame.timestamp_s, frame.image_ref)
        for position, frame in enumerate(frames)
    ]


def prepare_frames(
    video: str | Path,
    n: int,
    workdir: str | Path,
    fps_default: float = 1.0,
) -> FrameSource:
    """Resolve a video input into ``n`` uniformly sampled, timestamped frames.

    ``video`` is either a frame directory or a decodable video file;
    ``workdir`` receives dumped PNGs when decoding is needed.
    """
    path = Path(video)
    if path.is_dir():
        source = _load_frame_dir(path, fps_default)
        return FrameSource(sample_uniform(source.frames, n), source.audio_ref)
    if path.is_file():
        # Decoding already samples: only the wanted frames are dumped.
        return _decode_video(path, n, Path(workdir) / "frames", fps_default)
    raise DecodeFailure(f"video input {path} does not exist")
