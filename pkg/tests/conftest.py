from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from vidrag.ports import FrameRef

# 1x1 black PNG, enough for ports that base64 whatever bytes the file holds.
TINY_PNG = bytes.fromhex(
    "89504e470d0a1a0a0000000d49484452000000010000000108060000001f15c489"
    "0000000d4944415478da63640000000600023081d02f0000000049454e44ae426082"
)


def write_frames(directory: Path, names: list[str], fps: float = 1.0) -> list[FrameRef]:
    """Create tiny PNG files and matching FrameRefs (timestamp = index / fps)."""
    directory.mkdir(parents=True, exist_ok=True)
    frames = []
    for position, name in enumerate(names):
        path = directory / name
        path.write_bytes(TINY_PNG)
        frames.append(FrameRef(position, position / fps, str(path)))
    return frames


def write_fixtures(directory: Path, **files) -> Path:
    """Dump fixture JSON files (ocr=..., asr=..., lvlm=..., ...) into a dir."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (directory / f"{name}.json").write_text(
            json.dumps(content, ensure_ascii=False), encoding="utf-8"
        )
    return directory


class StubBackend:
    """Minimal HTTP server returning scripted responses for /v1/extract."""

    def __init__(self):
        self.responses: list = []  # each: (status, bytes) or (status, dict)
        self.requests: list[dict] = []
        self._server: HTTPServer | None = None
        self._thread: threading.Thread | None = None

    def enqueue(self, status: int, body) -> None:
        self.responses.append((status, body))

    def enqueue_ok(self, result: dict) -> None:
        self.enqueue(200, {"ok": True, "result": result})

    def enqueue_error(self, code: str, message: str = "boom") -> None:
        self.enqueue(200, {"ok": False, "error": {"code": code, "message": message}})

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def start(self) -> "StubBackend":
        backend = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    backend.requests.append(json.loads(raw))
                except ValueError:
                    backend.requests.append({"_raw": raw.decode("utf-8", "replace")})
                status, body = (
                    backend.responses.pop(0) if backend.responses else (200, {"ok": True, "result": {}})
                )
                payload = body if isinstance(body, bytes) else json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = HTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server:
            self._server.shutdown()
            self._server.server_close()


@pytest.fixture
def stub_backend():
    backend = StubBackend().start()
    yield backend
    backend.stop()


# --- scripted end-to-end scenario -------------------------------------------

DECOUPLE_MARKER = "Reply with a single JSON object"
ANSWER_MARKER = "Respond with only the letter"

SCENARIO_QUESTION = "What is the price of the red car?"
SCENARIO_OPTIONS = [
    "A. five thousand dollars",
    "B. ten thousand dollars",
    "C. twenty thousand dollars",
    "D. it is free",
]

ASR_SEGMENT_1 = "the price of the red car is ten thousand dollars"
ASR_SEGMENT_2 = "thanks for watching everyone"


def make_scenario(tmp_path: Path, lvlm_rules=None, lvlm_extra=None) -> dict:
    """A small frame-dir video plus fixtures driving a fixed ask() outcome.

    8 frames at 1 fps; OCR text on frames 1 and 4; two speech segments; one
    detectable entity ("red car") on frames 2 and 6 whose scaled similarity
    clears the keyframe threshold. Embeddings for the retrieval-relevant
    strings are pinned so exactly one OCR and one ASR record score above 0.3.
    """
    video = tmp_path / "clip"
    frames = write_frames(video, [f"f{i}.png" for i in range(8)])
    (video / "audio.json").write_text(
        json.dumps({"segments": [
            {"t_start_s": 2.0, "t_end_s": 4.0, "text": ASR_SEGMENT_1},
            {"t_start_s": 5.0, "t_end_s": 7.0, "text": ASR_SEGMENT_2},
        ]}),
        encoding="utf-8",
    )

    decouple_reply = json.dumps(
        {"ASR": "price statements", "DET": ["red car"], "TYPE": ["number", "location"]}
    )
    request_text = f"price statements {SCENARIO_QUESTION}"
    rules = lvlm_rules if lvlm_rules is not None else [
        {"contains": DECOUPLE_MARKER, "reply": decouple_reply},
        {"contains": ANSWER_MARKER, "reply": "The best answer is B."},
    ]
    lvlm = {"rules": rules}
    if lvlm_extra:
        lvlm.update(lvlm_extra)

    fixtures = write_fixtures(
        tmp_path / "fixtures",
        ocr={
            "f1.png": [{"text": "SALE 50% OFF today", "confidence": 0.97}],
            "f4.png": [{"text": "EXIT", "confidence": 0.99}],
        },
        asr={"audio.json": [
            {"t_start_s": 2.0, "t_end_s": 4.0, "text": ASR_SEGMENT_1},
            {"t_start_s": 5.0, "t_end_s": 7.0, "text": ASR_SEGMENT_2},
        ]},
        detections={
            "f2.png": {"red car": [[10, 20, 30, 20, 0.95], [60, 30, 20, 15, 0.9]]},
            "f6.png": {"red car": [[5, 5, 40, 30, 0.85]]},
        },
        clip_scores={"A picture of red car": {"f2.png": 0.6, "f6.png": 0.4}},
        embeddings={
            "dim": 2,
            "vectors": {
                request_text: [1.0, 0.0],
                SCENARIO_QUESTION: [1.0, 0.0],
                "SALE 50% OFF today": [0.8, 0.6],
                "EXIT": [0.0, 1.0],
                ASR_SEGMENT_1: [0.6, 0.8],
                ASR_SEGMENT_2: [-1.0, 0.0],
            },
        },
        lvlm=lvlm,
    )
    return {
        "video": video,
        "frames": frames,
        "fixtures": fixtures,
        "question": SCENARIO_QUESTION,
        "options": SCENARIO_OPTIONS,
        "decouple_reply": decouple_reply,
        "request_text": request_text,
    }


class CountingProxy:
    """Wraps a port object, counting method invocations by name."""

    def __init__(self, inner, counters: dict, prefix: str):
        self._inner = inner
        self._counters = counters
        self._prefix = prefix

    def __getattr__(self, attr):
        value = getattr(self._inner, attr)
        if not callable(value):
            return value

        def wrapped(*args, **kwargs):
            key = f"{self._prefix}.{attr}"
            self._counters[key] = self._counters.get(key, 0) + 1
            return value(*args, **kwargs)

        return wrapped


def counting_ports(ports):
    """Wrap a PortSet in counting proxies; returns (wrapped, counters)."""
    from vidrag.ports import PortSet

    counters: dict[str, int] = {}
    wrapped = PortSet(
        ocr=CountingProxy(ports.ocr, counters, "ocr"),
        asr=CountingProxy(ports.asr, counters, "asr"),
        detect=CountingProxy(ports.detect, counters, "detect"),
        embed=CountingProxy(ports.embed, counters, "embed"),
        clip=CountingProxy(ports.clip, counters, "clip"),
        lvlm=CountingProxy(ports.lvlm, counters, "lvlm"),
        fingerprint=dict(ports.fingerprint),
    )
    return wrapped, counters
