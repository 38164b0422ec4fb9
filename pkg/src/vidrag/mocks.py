"""Deterministic fixture-backed ports for tests and GPU-free runs.

Mock mode is a first-class execution mode: every mock is a pure function of
(request, fixture set), so whole-pipeline runs are byte-reproducible. A
fixture directory may contain any of:

    ocr.json         {"<image basename>": [{"text": ..., "confidence": ...}, ...]}
    asr.json         {"<audio basename>": [{"t_start_s", "t_end_s", "text"}, ...]}
                     or {"<audio basename>": "no-audio"}; unknown names mean
                     no audio track.
    detections.json  {"<image basename>": {"<category>": [[x, y, l, w, score], ...]}}
    clip_scores.json {"<prompt>": {"<image basename>": score}}; missing → 0.0
    embeddings.json  {"dim": n, "vectors": {"<text>": [...]}}; texts not listed
                     fall back to the hashed bag-of-words embedder
    lvlm.json        {"rules": [{"contains": ..., "reply": ...}],
                      "decouple_reply": ..., "default_reply": ...,
                      "max_prompt_chars": ...}

Missing files behave as empty fixtures.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContextOverflow, NoAudioTrack
from .ports import (
    AsrPort,
    AsrSegment,
    ClipScorePort,
    Detection,
    DetectPort,
    EmbedPort,
    FrameRef,
    LvlmPort,
    OcrLine,
    OcrPort,
    PortSet,
    check_frames,
    check_prompts,
    check_texts,
)

DEFAULT_EMBED_DIM = 64


def hashed_bow_embedding(text: str, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    """Deterministic bag-of-words feature-hashing embedding.

    Texts sharing tokens land near each other, which is enough for retrieval
    semantics in tests. Uses sha256, so results are identical across runs and
    platforms. Never returns a zero vector.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    if not vec.any():
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        vec[int.from_bytes(digest[:4], "big") % dim] = 1.0
    return vec


def _frame_key(frame: FrameRef) -> str:
    return Path(frame.image_ref).name


@dataclass
class MockFixtureSet:
    ocr: dict = field(default_factory=dict)
    asr: dict = field(default_factory=dict)
    detections: dict = field(default_factory=dict)
    clip_scores: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    embed_dim: int = DEFAULT_EMBED_DIM
    lvlm: dict = field(default_factory=dict)

    @classmethod
    def load(cls, fixture_dir: str | Path) -> "MockFixtureSet":
        root = Path(fixture_dir)

        def read(name: str) -> dict:
            path = root / name
            if not path.is_file():
                return {}
            return json.loads(path.read_text(encoding="utf-8"))

        embeddings_file = read("embeddings.json")
        vectors = embeddings_file.get("vectors", {})
        dim = embeddings_file.get("dim")
        if dim is None:
            dim = len(next(iter(vectors.values()))) if vectors else DEFAULT_EMBED_DIM
        return cls(
            ocr=read("ocr.json"),
            asr=read("asr.json"),
            detections=read("detections.json"),
            clip_scores=read("clip_scores.json"),
            embeddings=vectors,
            embed_dim=int(dim),
            lvlm=read("lvlm.json"),
        )


class MockOcrPort(OcrPort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def ocr(self, frames: Sequence[FrameRef]) -> list[OcrLine]:
        check_frames(frames)
        lines = []
        for frame in frames:
            for entry in self.fixtures.ocr.get(_frame_key(frame), []):
                lines.append(
                    OcrLine(frame.frame_index, entry["text"], entry.get("confidence", 1.0))
                )
        return lines


class MockAsrPort(AsrPort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def transcribe(self, audio_ref: str) -> list[AsrSegment]:
        entry = self.fixtures.asr.get(Path(audio_ref).name, "no-audio")
        if entry == "no-audio":
            raise NoAudioTrack(f"no audio fixture for {audio_ref}")
        segments = [AsrSegment(s["t_start_s"], s["t_end_s"], s["text"]) for s in entry]
        segments.sort(key=lambda s: s.t_start_s)
        return segments


class MockDetectPort(DetectPort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def detect(self, frames: Sequence[FrameRef], entity_prompts: Sequence[str]) -> list[Detection]:
        check_frames(frames)
        check_prompts(entity_prompts)
        detections = []
        for frame in frames:
            per_category = self.fixtures.detections.get(_frame_key(frame), {})
            for category in entity_prompts:
                for box in per_category.get(category, []):
                    x, y, length, width = box[:4]
                    score = box[4] if len(box) > 4 else 1.0
                    detections.append(
                        Detection(frame.frame_index, category, (x, y, length, width), score)
                    )
        return detections


class MockEmbedPort(EmbedPort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]:
        check_texts(texts)
        out = []
        for text in texts:
            if text in self.fixtures.embeddings:
                out.append(np.asarray(self.fixtures.embeddings[text], dtype=np.float64))
            else:
                out.append(hashed_bow_embedding(text, self.fixtures.embed_dim))
        return out


class MockClipScorePort(ClipScorePort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def clip_scores(self, frames: Sequence[FrameRef], prompts: Sequence[str]) -> np.ndarray:
        check_frames(frames)
        check_prompts(prompts)
        matrix = np.zeros((len(prompts), len(frames)), dtype=np.float64)
        for i, prompt in enumerate(prompts):
            per_frame = self.fixtures.clip_scores.get(prompt, {})
            for j, frame in enumerate(frames):
                matrix[i, j] = float(per_frame.get(_frame_key(frame), 0.0))
        return matrix


class MockLvlmPort(LvlmPort):
    def __init__(self, fixtures: MockFixtureSet):
        self.fixtures = fixtures

    def generate(self, frames: Sequence[FrameRef], prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        limit = self.fixtures.lvlm.get("max_prompt_chars")
        if limit is not None and len(prompt) > limit:
            raise ContextOverflow(f"prompt length {len(prompt)} exceeds mock limit {limit}")
        for rule in self.fixtures.lvlm.get("rules", []):
            if rule["contains"] in prompt:
                return rule["reply"]
        if not frames and "decouple_reply" in self.fixtures.lvlm:
            return self.fixtures.lvlm["decouple_reply"]
        return self.fixtures.lvlm.get("default_reply", "")


def mock_ports(fixture_dir: str | Path) -> PortSet:
    """Build the full port set from one fixture directory."""
    fixtures = MockFixtureSet.load(fixture_dir)
    fingerprint = {kind: f"mock:{Path(fixture_dir).resolve()}" for kind in (
        "ocr", "asr", "detect", "embed_text", "clip_score", "lvlm_generate"
    )}
    return PortSet(
        ocr=MockOcrPort(fixtures),
        asr=MockAsrPort(fixtures),
        detect=MockDetectPort(fixtures),
        embed=MockEmbedPort(fixtures),
        clip=MockClipScorePort(fixtures),
        lvlm=MockLvlmPort(fixtures),
        fingerprint=fingerprint,
    )
