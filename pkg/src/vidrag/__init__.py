"""vidrag: retrieval-augmented question answering over long videos.

Auxiliary texts (recognized characters, transcribed speech, detected objects)
are extracted from a video by pluggable model backends, indexed per video,
retrieved by thresholded embedding similarity, and merged chronologically
into the generation prompt.
"""

from .assembly import AssembledContext, assemble, estimate_tokens, render_answer_prompt
from .config import PipelineConfig, load_config
from .database import (
    AuxRecord,
    KeyframeSelection,
    build_asr_db,
    build_det_db,
    build_ocr_db,
    chunk_asr,
    select_keyframes,
)
from .decouple import (
    Query,
    RetrievalRequestSet,
    filter_entities,
    parse_requests,
    render_decouple_prompt,
    to_clip_prompts,
)
from .pipeline import AskResult, make_ports, run_ask, run_bench, run_build
from .ports import AsrSegment, Detection, ExtractorEndpoint, FrameRef, OcrLine, PortSet
from .retrieval import RetrievedAux, encode_request, retrieve_text, select_det
from .scene_graph import SceneGraphSummary, build_summary, positional_description
from .vector_index import FlatIndex, IndexEntry, SearchHit, normalize

__version__ = "0.1.0"

__all__ = [
    "AssembledContext",
    "AskResult",
    "AuxRecord",
    "AsrSegment",
    "Detection",
    "ExtractorEndpoint",
    "FlatIndex",
    "FrameRef",
    "IndexEntry",
    "KeyframeSelection",
    "OcrLine",
    "PipelineConfig",
    "PortSet",
    "Query",
    "RetrievalRequestSet",
    "RetrievedAux",
    "SceneGraphSummary",
    "SearchHit",
    "assemble",
    "build_asr_db",
    "build_det_db",
    "build_ocr_db",
    "build_summary",
    "chunk_asr",
    "encode_request",
    "estimate_tokens",
    "filter_entities",
    "load_config",
    "make_ports",
    "normalize",
    "parse_requests",
    "positional_description",
    "render_answer_prompt",
    "render_decouple_prompt",
    "retrieve_text",
    "run_ask",
    "run_bench",
    "run_build",
    "select_det",
    "select_keyframes",
    "to_clip_prompts",
]
