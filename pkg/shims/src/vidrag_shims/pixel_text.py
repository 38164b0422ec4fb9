"""Bitmap-font text rendering and recognition for synthetic fixtures.

Glyphs come from Pillow's built-in default font, rasterized once into a
monochrome atlas. ``render_text`` stamps glyph bitmaps onto an image at
integer positions (no antialiasing), and ``recognize_lines`` reads them back
by exact template matching, so the pair forms a lossless round trip on
uncompressed images. Only near-black pixels count as ink, which keeps the
colored rectangles used by the detection fixtures out of the text pass.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from PIL import Image, ImageFont

CHARSET = (
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    ".,:;%$!?-'/()+"
)

GLYPH_SPACING = 1   # blank columns between glyphs
SPACE_ADVANCE = 6   # cursor advance for a space
INK_THRESHOLD = 60  # all channels below this count as ink


@lru_cache(maxsize=1)
def _atlas() -> tuple[dict[str, np.ndarray], int]:
    """Per-character boolean bitmaps, bottom-aligned into a common cell height.

    Cells are trimmed to tight horizontal ink bounds (no bearings), so a
    glyph's first rendered column is always an ink column; the recognizer
    relies on that to anchor template comparisons.
    """
    font = ImageFont.load_default()
    raw: dict[str, np.ndarray] = {}
    height = 1
    for char in CHARSET:
        mask = font.getmask(char, mode="1")
        width, char_height = mask.size
        if width == 0 or char_height == 0:
            continue
        bitmap = np.array(mask, dtype=np.uint8).reshape(char_height, width) > 0
        if not bitmap.any():
            continue
        columns = np.nonzero(bitmap.any(axis=0))[0]
        raw[char] = bitmap[:, columns[0]:columns[-1] + 1]
        height = max(height, char_height)
    atlas = {}
    for char, bitmap in raw.items():
        cell = np.zeros((height, bitmap.shape[1]), dtype=bool)
        cell[height - bitmap.shape[0]:, :] = bitmap
        atlas[char] = cell
    return atlas, height


def cell_height() -> int:
    return _atlas()[1]


def text_width(text: str) -> int:
    atlas, _ = _atlas()
    width = 0
    for char in text:
        if char == " ":
            width += SPACE_ADVANCE
        elif char in atlas:
            width += atlas[char].shape[1] + GLYPH_SPACING
    return width


def render_text(image: Image.Image, xy: tuple[int, int], text: str,
                fill: tuple[int, int, int] = (0, 0, 0)) -> None:
    """Stamp ``text`` onto ``image`` in the atlas font, top-left at ``xy``."""
    atlas, height = _atlas()
    pixels = np.array(image)
    x, y = xy
    for char in text:
        if char == " ":
            x += SPACE_ADVANCE
            continue
        cell = atlas.get(char)
        if cell is None:
            continue
        h, w = cell.shape
        region = pixels[y:y + h, x:x + w]
        if region.shape[:2] != (h, w):
            break  # ran off the image
        region[cell] = fill
        x += w + GLYPH_SPACING
    image.paste(Image.fromarray(pixels))


def _recognize_line(ink: np.ndarray, top: int, bottom: int) -> str:
    atlas, height = _atlas()
    cell_top = bottom - height + 1
    if cell_top < 0:
        cell_top = 0
    band = ink[cell_top:cell_top + height, :]
    if band.shape[0] < height:
        band = np.vstack([band, np.zeros((height - band.shape[0], ink.shape[1]), bool)])
    columns = np.nonzero(band.any(axis=0))[0]
    if columns.size == 0:
        return ""
    # widest-first maximal munch avoids prefix collisions between glyphs
    candidates = sorted(atlas.items(), key=lambda kv: (-kv[1].shape[1], kv[0]))

    out: list[str] = []
    x = int(columns[0])
    limit = int(columns[-1])
    while x <= limit:
        if not band[:, x].any():
            remaining = columns[columns >= x]
            if remaining.size == 0:
                break
            gap_to = int(remaining[0])
            if out and gap_to - x >= SPACE_ADVANCE - GLYPH_SPACING - 1:
                out.append(" ")
            x = gap_to
            continue
        matched = False
        for char, cell in candidates:
            w = cell.shape[1]
            window = band[:, x:x + w]
            if window.shape[1] == w and np.array_equal(window, cell):
                out.append(char)
                x += w + GLYPH_SPACING
                matched = True
                break
        if not matched:
            x += 1  # unknown ink column, skip it
    return "".join(out).strip()


def recognize_lines(image: Image.Image) -> list[tuple[int, str]]:
    """Read rendered text back as (top_row, text) pairs, top to bottom."""
    pixels = np.asarray(image.convert("RGB"))
    ink = (pixels < INK_THRESHOLD).all(axis=2)
    rows = np.nonzero(ink.any(axis=1))[0]
    if rows.size == 0:
        return []
    lines: list[tuple[int, str]] = []
    band_start = prev = int(rows[0])
    for row in list(rows[1:]) + [None]:
        if row is not None and row == prev + 1:
            prev = int(row)
            continue
        text = _recognize_line(ink, band_start, prev)
        if text:
            lines.append((band_start, text))
        if row is not None:
            band_start = prev = int(row)
    return lines
