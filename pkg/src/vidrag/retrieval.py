"""Query-time retrieval: encode requests, search the text indexes, and pick
the detection summary components the request asked for."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .database import AuxRecord
from .decouple import Query, RetrievalRequestSet
from .ports import EmbedPort
from .scene_graph import SceneGraphSummary
from .vector_index import FlatIndex, normalize

logger = logging.getLogger(__name__)

# Maps a retrieval-request component onto the summary field it selects.
TYPE_TO_COMPONENT = {"location": "loc", "number": "cnt", "relation": "rel"}


@dataclass(frozen=True)
class AuxHit:
    record: AuxRecord
    score: float


@dataclass(frozen=True)
class DetEntry:
    """One keyframe's selected detection texts, with its selection score."""

    frame_index: int
    timestamp_s: float
    score: float
    text: str


@dataclass
class RetrievedAux:
    ocr_hits: list[AuxHit] = field(default_factory=list)
    asr_hits: list[AuxHit] = field(default_factory=list)
    det_types: frozenset[str] = frozenset()
    det_entries: list[DetEntry] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not (self.ocr_hits or self.asr_hits or self.det_entries)


def request_text_for_kind(req: RetrievalRequestSet, kind: str) -> str | None:
    """The request string driving retrieval for one text kind.

    The decouple phase defines speech requests explicitly; OCR retrieval has
    no dedicated request key, so it reuses an explicit OCR request when the
    model produced one and otherwise falls back to the speech request.
    """
    if kind == "asr":
        return req.asr_request
    if kind == "ocr":
        return req.ocr_request if req.ocr_request is not None else req.asr_request
    raise ValueError(f"no retrieval request for kind {kind!r}")


def encode_request(
    req: RetrievalRequestSet,
    query: Query,
    embed_port: EmbedPort,
    kind: str,
    mode: str = "concat",
) -> np.ndarray:
    """Embed the retrieval request for ``kind`` combined with the question.

    ``mode`` "concat" embeds the single joined string; "average" embeds the
    request and the question separately and averages. When the request is
    absent the question alone is embedded. The result is unit-normalized.
    """
    request_text = request_text_for_kind(req, kind)
    if request_text is None:
        vectors = embed_port.embed_text([query.question])
        return normalize(vectors[0])
    if mode == "concat":
        vectors = embed_port.embed_text([f"{request_text} {query.question}"])
        return normalize(vectors[0])
    if mode == "average":
        vectors = embed_port.embed_text([request_text, query.question])
        return normalize(np.mean(np.stack(vectors), axis=0))
    raise ValueError(f"unknown request encoding mode {mode!r}")


def retrieve_text(
    index: FlatIndex,
    e_req: np.ndarray,
    threshold: float,
    hit_cap: int | None = None,
) -> list[AuxHit]:
    """Return records with similarity strictly above ``threshold``, re-sorted
    into ascending time order for chronological assembly."""
    if index.size() == 0:
        return []
    hits = index.search(e_req, threshold)
    if hit_cap is not None:
        hits = hits[:hit_cap]  # search order: best first
    aux = [AuxHit(AuxRecord.from_payload(index.payload(h.id)), h.score) for h in hits]
    aux.sort(key=lambda h: (h.record.t_start_s, h.record.id))
    return aux


def select_det(
    summaries: Sequence[SceneGraphSummary],
    det_types: frozenset[str] | set[str],
    timestamps: Sequence[float] | None = None,
    scores: Sequence[float] | None = None,
) -> list[DetEntry]:
    """Materialize the requested summary components for every keyframe.

    ``det_types`` picks the subset: location -> loc_texts, number -> cnt_text,
    relation -> rel_texts. An empty type set selects nothing. ``timestamps``
    and ``scores`` run parallel to ``summaries`` (defaulting to zeros).
    """
    if not det_types:
        return []
    timestamps = timestamps if timestamps is not None else [0.0] * len(summaries)
    scores = scores if scores is not None else [0.0] * len(summaries)
    entries = []
    for summary, timestamp, score in zip(summaries, timestamps, scores):
        parts: list[str] = []
        if "location" in det_types:
            parts.extend(summary.loc_texts)
        if "number" in det_types and summary.cnt_text:
            parts.append(summary.cnt_text)
        if "relation" in det_types:
            parts.extend(summary.rel_texts)
        if parts:
            entries.append(
                DetEntry(
                    frame_index=summary.frame_index,
                    timestamp_s=float(timestamp),
                    score=float(score),
                    text="\n".join(parts),
                )
            )
    return entries
