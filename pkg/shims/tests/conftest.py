from __future__ import annotations

import base64
import io
from pathlib import Path

import pytest
from PIL import Image

from vidrag_shims.engines import color_for
from vidrag_shims.pixel_text import render_text

REPO_SCHEMAS = Path(__file__).resolve().parents[2] / "schemas"


def make_image(width=320, height=240, texts=(), boxes=()) -> Image.Image:
    """White canvas with rendered text lines and color-signature rectangles.

    ``texts``: iterable of (x, y, string); ``boxes``: (x, y, w, h, entity).
    """
    image = Image.new("RGB", (width, height), "white")
    for x, y, w, h, entity in boxes:
        block = Image.new("RGB", (w, h), color_for(entity))
        image.paste(block, (x, y))
    for x, y, text in texts:
        render_text(image, (x, y), text)
    return image


def image_b64(image: Image.Image) -> str:
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def frame_payload(index: int, image: Image.Image, timestamp: float | None = None) -> dict:
    return {
        "frame_index": index,
        "timestamp_s": float(index) if timestamp is None else timestamp,
        "image_b64": image_b64(image),
    }


def envelope(kind: str, payload: dict) -> dict:
    return {"kind": kind, "payload": payload}


@pytest.fixture(scope="session")
def schemas_dir() -> Path:
    assert (REPO_SCHEMAS / "envelope.json").is_file(), "run tests from the repo checkout"
    return REPO_SCHEMAS
