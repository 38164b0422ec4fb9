"""Model engines behind the shim servers.

Each engine is a callable mapping a validated request payload to a result
payload. Every kind ships a deterministic ``builtin`` engine that computes
its answer from the request bytes alone (no model weights, no network), so
the full pipeline can run end to end on synthetic fixtures:

    ocr           pixel-exact bitmap-font recognition (pixel_text)
    asr           decodes a JSON transcript container {"segments": [...]}
    detect        finds rectangles whose color is the prompt's hash signature
    embed_text    sha256 feature-hashed bag-of-words vectors
    clip_score    fraction of pixels matching the prompt's color signature
    lvlm_generate scripted rules file, else a lexical-overlap heuristic

Real model bindings (easyocr, whisper, sentence-transformers) can be selected
with --model and load lazily; they fail at startup with a clear error when
the library or weights are unavailable.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .pixel_text import recognize_lines

Engine = Callable[[dict], dict]


class ShimRequestError(Exception):
    """Maps to the {"ok": false} envelope with a specific error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _decode_image(frame: dict) -> Image.Image:
    try:
        raw = base64.b64decode(frame["image_b64"], validate=True)
        return Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise ShimRequestError("bad_image", f"frame {frame.get('frame_index')}: {exc}") from exc


# --- ocr ---------------------------------------------------------------------

def ocr_builtin(payload: dict) -> dict:
    lines = []
    for frame in payload["frames"]:
        image = _decode_image(frame)
        for _top, text in recognize_lines(image):
            lines.append(
                {"frame_index": frame["frame_index"], "text": text, "confidence": 1.0}
            )
    return {"lines": lines}


# --- asr ---------------------------------------------------------------------

def asr_builtin(payload: dict) -> dict:
    """Decode a JSON transcript container: {"segments": [{t_start_s, t_end_s, text}]}.

    A container with "segments": null signals a missing audio track. Raw
    audio formats are not supported by the builtin engine.
    """
    try:
        raw = base64.b64decode(payload["audio_b64"], validate=True)
        container = json.loads(raw.decode("utf-8"))
    except Exception as exc:
        raise ShimRequestError(
            "unsupported_audio",
            f"builtin asr reads JSON transcript containers only: {exc}",
        ) from exc
    segments = container.get("segments")
    if segments is None:
        raise ShimRequestError("no_audio_track", "container reports no audio track")
    cleaned = [
        {
            "t_start_s": float(seg["t_start_s"]),
            "t_end_s": float(seg["t_end_s"]),
            "text": str(seg["text"]),
        }
        for seg in segments
    ]
    cleaned.sort(key=lambda seg: seg["t_start_s"])
    return {"segments": cleaned}


# --- color-signature detection and scoring ------------------------------------

COLOR_TOLERANCE = 10
MIN_REGION_PIXELS = 6


def color_for(prompt: str) -> tuple[int, int, int]:
    """Deterministic mid-brightness color signature for a prompt.

    The range [60, 240] keeps signatures distinct from both the white fixture
    background and near-black text ink.
    """
    digest = hashlib.sha256(prompt.strip().lower().encode("utf-8")).digest()
    return tuple(60 + (b * 180) // 255 for b in digest[:3])


def _color_mask(pixels: np.ndarray, color: tuple[int, int, int]) -> np.ndarray:
    diff = np.abs(pixels.astype(np.int16) - np.asarray(color, dtype=np.int16))
    return (diff <= COLOR_TOLERANCE).all(axis=2)


def detect_builtin(payload: dict) -> dict:
    from scipy import ndimage

    detections = []
    for frame in payload["frames"]:
        pixels = np.asarray(_decode_image(frame))
        for prompt in payload["prompts"]:
            mask = _color_mask(pixels, color_for(prompt))
            labels, count = ndimage.label(mask)
            for slice_y, slice_x in ndimage.find_objects(labels, count):
                region = mask[slice_y, slice_x]
                if region.sum() < MIN_REGION_PIXELS:
                    continue
                detections.append(
                    {
                        "frame_index": frame["frame_index"],
                        "category": prompt,
                        "box": [
                            float(slice_x.start),
                            float(slice_y.start),
                            float(slice_x.stop - slice_x.start),
                            float(slice_y.stop - slice_y.start),
                        ],
                        "score": 0.95,
                    }
                )
    detections.sort(key=lambda d: (d["frame_index"], d["category"], d["box"]))
    return {"detections": detections}


CLIP_PREFIX = "A picture of "


def clip_score_builtin(payload: dict) -> dict:
    """Image-text score = fraction of pixels carrying the prompt's color.

    The pipeline prefixes detection entities for scoring; the prefix is
    stripped so the signature matches the raw entity used at detection time.
    """
    images = [np.asarray(_decode_image(frame)) for frame in payload["frames"]]
    scores = []
    for prompt in payload["prompts"]:
        entity = prompt[len(CLIP_PREFIX):] if prompt.startswith(CLIP_PREFIX) else prompt
        color = color_for(entity)
        scores.append([float(_color_mask(pixels, color).mean()) for pixels in images])
    return {"scores": scores}


# --- text embedding -------------------------------------------------------------

def make_embed_builtin(dim: int = 64) -> Engine:
    def embed(payload: dict) -> dict:
        vectors = []
        for text in payload["texts"]:
            vec = np.zeros(dim, dtype=np.float64)
            for token in re.findall(r"[a-z0-9]+", text.lower()):
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "big") % dim
                vec[bucket] += 1.0 if digest[4] & 1 else -1.0
            if not vec.any():
                digest = hashlib.sha256(text.encode("utf-8")).digest()
                vec[int.from_bytes(digest[:4], "big") % dim] = 1.0
            norm = np.linalg.norm(vec)
            vectors.append((vec / norm).tolist())
        return {"vectors": vectors}

    return embed


# --- text generation --------------------------------------------------------------

_QUESTION_LINE = re.compile(r"^Question:\s*(.+)$", re.MULTILINE)
# option labels are a single letter or a short number ("A.", "(b)", "12:")
_OPTION_LINE = re.compile(r"^\(?([A-Za-z]|[0-9]{1,2})[\.\):]\s+(.+)$", re.MULTILINE)


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def lexical_reply(prompt: str) -> str:
    """Weights-free fallback generator.

    Decouple-style prompts (they name the JSON keys) get a speech request
    derived from the question. Multiple-choice prompts get the option whose
    words overlap the prompt context most; anything else gets a stock line.
    """
    question_match = _QUESTION_LINE.search(prompt)
    question = question_match.group(1).strip() if question_match else ""
    if '"ASR"' in prompt and '"DET"' in prompt:
        return json.dumps({"ASR": question or "the spoken audio", "DET": None, "TYPE": None})

    options = _OPTION_LINE.findall(prompt)
    if options:
        context = _tokens(prompt[: question_match.start()] if question_match else prompt)
        best_key, best_overlap = options[0][0], -1
        for key, body in options:
            overlap = len(_tokens(body) & context)
            if overlap > best_overlap:
                best_key, best_overlap = key, overlap
        return f"The best answer is {best_key}."
    return "There is not enough information in the video to answer."


def make_lvlm_builtin(rules_path: str | Path | None = None) -> Engine:
    rules: list[dict] = []
    default_reply: str | None = None
    if rules_path is not None:
        script = json.loads(Path(rules_path).read_text(encoding="utf-8"))
        rules = script.get("rules", [])
        default_reply = script.get("default")

    def generate(payload: dict) -> dict:
        prompt = payload["prompt"]
        for rule in rules:
            if rule["contains"] in prompt:
                return {"text": rule["reply"]}
        if default_reply is not None:
            return {"text": default_reply}
        return {"text": lexical_reply(prompt)}

    return generate


# --- optional real-model bindings ---------------------------------------------------

def _easyocr_engine(model: str) -> Engine:
    import easyocr  # noqa: F401 - availability check at startup

    reader = easyocr.Reader(["en"], gpu=False)

    def engine(payload: dict) -> dict:
        lines = []
        for frame in payload["frames"]:
            pixels = np.asarray(_decode_image(frame))
            for _box, text, confidence in reader.readtext(pixels):
                if text:
                    lines.append(
                        {
                            "frame_index": frame["frame_index"],
                            "text": text,
                            "confidence": max(0.0, min(1.0, float(confidence))),
                        }
                    )
        return {"lines": lines}

    return engine


def _whisper_engine(model: str) -> Engine:
    import tempfile

    import whisper

    name = model.split(":", 1)[1] if ":" in model else "base"
    loaded = whisper.load_model(name)

    def engine(payload: dict) -> dict:
        raw = base64.b64decode(payload["audio_b64"])
        with tempfile.NamedTemporaryFile(suffix=".wav") as handle:
            handle.write(raw)
            handle.flush()
            result = loaded.transcribe(handle.name)
        segments = [
            {"t_start_s": float(s["start"]), "t_end_s": float(s["end"]), "text": s["text"].strip()}
            for s in result.get("segments", [])
            if s.get("text", "").strip()
        ]
        return {"segments": segments}

    return engine


def _sentence_transformer_engine(model: str) -> Engine:
    from sentence_transformers import SentenceTransformer

    name = model.split(":", 1)[1]
    loaded = SentenceTransformer(name)

    def engine(payload: dict) -> dict:
        vectors = loaded.encode(list(payload["texts"]), convert_to_numpy=True)
        return {"vectors": [v.tolist() for v in vectors]}

    return engine


def build_engine(kind: str, model: str = "builtin") -> tuple[Engine, str]:
    """Construct the engine for ``kind``; returns (engine, model label).

    Raises at startup (not per request) when a requested real-model binding
    cannot load.
    """
    if kind == "ocr":
        if model == "builtin":
            return ocr_builtin, "builtin-pixel-ocr"
        if model == "easyocr":
            return _easyocr_engine(model), "easyocr"
    elif kind == "asr":
        if model == "builtin":
            return asr_builtin, "builtin-transcript-container"
        if model.startswith("whisper"):
            return _whisper_engine(model), model
    elif kind == "detect":
        if model == "builtin":
            return detect_builtin, "builtin-color-signature"
    elif kind == "embed_text":
        if model == "builtin":
            return make_embed_builtin(), "builtin-hashed-bow-64"
        match = re.fullmatch(r"hash(\d+)", model)
        if match:
            dim = int(match.group(1))
            return make_embed_builtin(dim), f"builtin-hashed-bow-{dim}"
        if model.startswith("st:"):
            return _sentence_transformer_engine(model), model
    elif kind == "clip_score":
        if model == "builtin":
            return clip_score_builtin, "builtin-color-presence"
    elif kind == "lvlm_generate":
        if model == "builtin":
            return make_lvlm_builtin(), "builtin-lexical"
        if model.startswith("scripted:"):
            path = model.split(":", 1)[1]
            return make_lvlm_builtin(path), f"scripted:{Path(path).name}"
    raise ValueError(f"no engine for kind={kind!r} model={model!r}")
