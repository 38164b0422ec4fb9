"""Render per-keyframe detections as natural-language object summaries.

Raw detector output ("category: [x_min, y_min, length, width]") is hard for a
generation model to reason about, so each keyframe's detections become three
kinds of text: object locations, object counts, and pairwise spatial
relations. All functions are pure; identical inputs produce byte-identical
summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .ports import Detection

# Pairwise relation vocabulary. Directions use image pixel coordinates
# (y grows downward): "above" means the smaller y-center.
OVERLAPPING = "overlapping with"
DIRECTIONS = (
    "to the left of",
    "to the upper-left of",
    "above",
    "to the upper-right of",
    "to the right of",
    "to the lower-right of",
    "below",
    "to the lower-left of",
)

DEFAULT_IOU_CUTOFF = 0.5


@dataclass
class SceneGraphSummary:
    frame_index: int
    loc_texts: list[str] = field(default_factory=list)
    cnt_text: str = ""
    rel_texts: list[str] = field(default_factory=list)
    node_ids: dict[int, int] = field(default_factory=dict)  # detection position -> node id

    @property
    def is_empty(self) -> bool:
        return not (self.loc_texts or self.cnt_text or self.rel_texts)


def _fmt(value: float) -> str:
    return f"{float(value):g}"


def box_center(box: tuple[float, float, float, float]) -> tuple[float, float]:
    x_min, y_min, length, width = box
    return x_min + length / 2.0, y_min + width / 2.0


def box_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ax, ay, al, aw = a
    bx, by, bl, bw = b
    ix = max(0.0, min(ax + al, bx + bl) - max(ax, bx))
    iy = max(0.0, min(ay + aw, by + bw) - max(ay, by))
    inter = ix * iy
    union = al * aw + bl * bw - inter
    return inter / union if union > 0 else 0.0


def positional_description(a: Detection, b: Detection, iou_cutoff: float = DEFAULT_IOU_CUTOFF) -> str:
    """Describe where ``a`` sits relative to ``b``.

    Boxes with intersection-over-union above ``iou_cutoff`` (or coincident
    centers) are "overlapping with"; otherwise the center-to-center angle is
    bucketed into eight 45-degree bands (axis bands span ±22.5 degrees).
    """
    if box_iou(a.box, b.box) > iou_cutoff:
        return OVERLAPPING
    ax, ay = box_center(a.box)
    bx, by = box_center(b.box)
    dx, dy = bx - ax, by - ay
    if dx == 0 and dy == 0:
        return OVERLAPPING
    degrees = math.degrees(math.atan2(dy, dx))
    # Bands are half-open [lo, hi) starting at -22.5°, walking counter-clockwise
    # in screen terms; the wrap band (±180°) is index 4, "to the right of".
    band = int(math.floor((degrees + 22.5) / 45.0)) % 8
    return DIRECTIONS[band]


def build_summary(frame_index: int, detections: Sequence[Detection]) -> SceneGraphSummary:
    """Summarize one keyframe's detections as location/count/relation texts.

    Node ids are 1..k in detection input order; relation texts cover each
    unordered pair exactly once (i < j). The location coordinate pair is the
    box center derived from (x_min, y_min, length, width).
    """
    summary = SceneGraphSummary(frame_index=frame_index)
    if not detections:
        return summary
    for position, det in enumerate(detections):
        if det.frame_index != frame_index:
            raise ValueError(
                f"detection frame {det.frame_index} does not match summary frame {frame_index}"
            )
        node_id = position + 1
        summary.node_ids[position] = node_id
        cx, cy = box_center(det.box)
        _, _, length, width = det.box
        summary.loc_texts.append(
            f"Object {node_id} is a {det.category} located at coordinates "
            f"[{_fmt(cx)}, {_fmt(cy)}] with dimensions {_fmt(length)} × {_fmt(width)}"
        )

    counts: dict[str, int] = {}
    for det in detections:
        counts[det.category] = counts.get(det.category, 0) + 1
    summary.cnt_text = "Object counting:" + "".join(
        f"\n- {category}: {number}" for category, number in counts.items()
    )

    for i in range(len(detections)):
        for j in range(i + 1, len(detections)):
            a, b = detections[i], detections[j]
            relation = positional_description(a, b)
            summary.rel_texts.append(
                f"Object {i + 1} ({a.category}) is {relation} Object {j + 1} ({b.category})"
            )
    return summary
