"""JSON-over-HTTP client for the extractor wire protocol.

Every backend kind speaks the same envelope on ``POST /v1/extract``:

    request:  {"kind": "<kind>", "payload": {...}}
    response: {"ok": true, "result": {...}}
              {"ok": false, "error": {"code": "...", "message": "..."}}

Images cross the wire as base64-encoded bytes inside payloads. Responses are
validated against the JSON schemas shipped in ``vidrag/schemas``; anything
that fails validation raises MalformedResponse, never a partial result.
Transport failures and 5xx replies are retried with bounded exponential
backoff before raising BackendUnavailable.
"""

from __future__ import annotations

import base64
import json
import time
from functools import lru_cache
from importlib import resources
from typing import Any, Sequence

import jsonschema
import numpy as np
import requests

from .errors import (
    BackendUnavailable,
    ContextOverflow,
    DimensionMismatch,
    MalformedResponse,
    NoAudioTrack,
)
from .ports import (
    AsrPort,
    AsrSegment,
    ClipScorePort,
    Detection,
    DetectPort,
    EmbedPort,
    ExtractorEndpoint,
    FrameRef,
    LvlmPort,
    OcrLine,
    OcrPort,
    check_frames,
    check_prompts,
    check_texts,
)

EXTRACT_PATH = "/v1/extract"

# Envelope error codes with a dedicated engine-side meaning.
ERROR_NO_AUDIO_TRACK = "no_audio_track"
ERROR_CONTEXT_OVERFLOW = "context_overflow"


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """Load one packaged wire schema ('envelope', 'ocr', ...)."""
    text = (resources.files("vidrag") / "schemas" / f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_payload(kind: str, side: str, instance: dict) -> None:
    """Validate a request payload or result body against its kind schema."""
    jsonschema.validate(instance, load_schema(kind)["properties"][side])


def encode_image(path: str) -> str:
    with open(path, "rb") as fh:
        return base64.b64encode(fh.read()).decode("ascii")


def frame_payload(frame: FrameRef) -> dict[str, Any]:
    return {
        "frame_index": frame.frame_index,
        "timestamp_s": frame.timestamp_s,
        "image_b64": encode_image(frame.image_ref),
    }


class WireClient:
    """One endpoint, one kind: sends envelopes and returns validated results."""

    def __init__(self, endpoint: ExtractorEndpoint):
        self.endpoint = endpoint

    def call(self, payload: dict[str, Any]) -> dict[str, Any]:
        validate_payload(self.endpoint.kind, "request", payload)
        body = {"kind": self.endpoint.kind, "payload": payload}
        headers = {"Content-Type": "application/json"}
        if self.endpoint.bearer_token:
            headers["Authorization"] = f"Bearer {self.endpoint.bearer_token}"

        url = self.endpoint.base_url.rstrip("/") + EXTRACT_PATH
        attempts = max(1, self.endpoint.max_retries)
        last_error = "unknown"
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.endpoint.retry_backoff_s * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    url, json=body, headers=headers, timeout=self.endpoint.timeout_s
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise BackendUnavailable(
                    f"{self.endpoint.kind} backend rejected the request "
                    f"(HTTP {response.status_code}): {response.text[:200]}"
                )
            return self._handle_body(response.content)
        raise BackendUnavailable(
            f"{self.endpoint.kind} backend at {url} unreachable after "
            f"{attempts} attempts: {last_error}"
        )

    def _handle_body(self, raw: bytes) -> dict[str, Any]:
        try:
            envelope = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise MalformedResponse(f"{self.endpoint.kind} backend sent non-JSON bytes") from exc
        try:
            jsonschema.validate(envelope, load_schema("envelope")["properties"]["response"])
        except jsonschema.ValidationError as exc:
            raise MalformedResponse(
                f"{self.endpoint.kind} response envelope invalid: {exc.message}"
            ) from exc

        if not envelope["ok"]:
            code = envelope["error"]["code"]
            message = envelope["error"]["message"]
            if code == ERROR_NO_AUDIO_TRACK:
                raise NoAudioTrack(message)
            if code == ERROR_CONTEXT_OVERFLOW:
                raise ContextOverflow(message)
            raise BackendUnavailable(f"{self.endpoint.kind} backend error {code}: {message}")

        result = envelope["result"]
        try:
            validate_payload(self.endpoint.kind, "result", result)
        except jsonschema.ValidationError as exc:
            raise MalformedResponse(
                f"{self.endpoint.kind} result failed schema validation: {exc.message}"
            ) from exc
        return result


class HttpOcrPort(OcrPort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def ocr(self, frames: Sequence[FrameRef]) -> list[OcrLine]:
        check_frames(frames)
        result = self.client.call({"frames": [frame_payload(f) for f in frames]})
        try:
            return [
                OcrLine(line["frame_index"], line["text"], line["confidence"])
                for line in result["lines"]
            ]
        except ValueError as exc:
            raise MalformedResponse(f"OCR backend violated line invariants: {exc}") from exc


class HttpAsrPort(AsrPort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def transcribe(self, audio_ref: str) -> list[AsrSegment]:
        with open(audio_ref, "rb") as fh:
            audio_b64 = base64.b64encode(fh.read()).decode("ascii")
        result = self.client.call({"audio_b64": audio_b64})
        try:
            segments = [
                AsrSegment(seg["t_start_s"], seg["t_end_s"], seg["text"])
                for seg in result["segments"]
            ]
        except ValueError as exc:
            raise MalformedResponse(f"ASR backend violated segment invariants: {exc}") from exc
        segments.sort(key=lambda s: s.t_start_s)
        for previous, current in zip(segments, segments[1:]):
            if current.t_start_s < previous.t_end_s:
                raise MalformedResponse("ASR backend returned overlapping segments")
        return segments


class HttpDetectPort(DetectPort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def detect(self, frames: Sequence[FrameRef], entity_prompts: Sequence[str]) -> list[Detection]:
        check_frames(frames)
        check_prompts(entity_prompts)
        result = self.client.call(
            {"frames": [frame_payload(f) for f in frames], "prompts": list(entity_prompts)}
        )
        detections = []
        for det in result["detections"]:
            if det["category"] not in entity_prompts:
                raise MalformedResponse(
                    f"detector returned unprompted category {det['category']!r}"
                )
            detections.append(
                Detection(det["frame_index"], det["category"], tuple(det["box"]), det["score"])
            )
        return detections


class HttpEmbedPort(EmbedPort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def embed_text(self, texts: Sequence[str]) -> list[np.ndarray]:
        check_texts(texts)
        result = self.client.call({"texts": list(texts)})
        vectors = [np.asarray(v, dtype=np.float64) for v in result["vectors"]]
        if len(vectors) != len(texts):
            raise MalformedResponse(
                f"embedder returned {len(vectors)} vectors for {len(texts)} texts"
            )
        dims = {v.shape[0] for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"embedder returned mixed dimensions {sorted(dims)}")
        return vectors


class HttpClipScorePort(ClipScorePort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def clip_scores(self, frames: Sequence[FrameRef], prompts: Sequence[str]) -> np.ndarray:
        check_frames(frames)
        check_prompts(prompts)
        result = self.client.call(
            {"frames": [frame_payload(f) for f in frames], "prompts": list(prompts)}
        )
        matrix = np.asarray(result["scores"], dtype=np.float64)
        if matrix.shape != (len(prompts), len(frames)):
            raise MalformedResponse(
                f"scorer returned shape {matrix.shape}, expected {(len(prompts), len(frames))}"
            )
        if not np.all(np.isfinite(matrix)):
            raise MalformedResponse("scorer returned non-finite scores")
        return matrix


class HttpLvlmPort(LvlmPort):
    def __init__(self, endpoint: ExtractorEndpoint):
        self.client = WireClient(endpoint)

    def generate(self, frames: Sequence[FrameRef], prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        result = self.client.call(
            {"frames": [frame_payload(f) for f in frames], "prompt": prompt}
        )
        return result["text"]


PORT_CLASSES = {
    "ocr": HttpOcrPort,
    "asr": HttpAsrPort,
    "detect": HttpDetectPort,
    "embed_text": HttpEmbedPort,
    "clip_score": HttpClipScorePort,
    "lvlm_generate": HttpLvlmPort,
}


def http_port(endpoint: ExtractorEndpoint):
    return PORT_CLASSES[endpoint.kind](endpoint)
