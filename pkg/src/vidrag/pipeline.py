"""End-to-end orchestration: build per-video databases, answer questions,
and run multiple-choice benchmarks.

Build extracts the query-independent databases (OCR, ASR) and caches them per
video; detection is query-driven, so it runs at ask time keyed by the
requested entity set. Ask wires the phases together: decouple the question,
retrieve each auxiliary kind, assemble the context, and call the generation
backend, emitting a deterministic audit record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .assembly import assemble, render_answer_prompt, resolve_budget
from .config import PipelineConfig
from .database import (
    KeyframeSelection,
    build_asr_db,
    build_det_db,
    build_ocr_db,
    read_detections_jsonl,
    select_keyframes,
    write_detections_jsonl,
)
from .decouple import (
    Query,
    RetrievalRequestSet,
    filter_entities,
    parse_requests,
    render_decouple_prompt,
    to_clip_prompts,
)
from .errors import (
    BackendUnavailable,
    ContextOverflow,
    CorruptManifest,
    EmptyDataset,
    PortError,
    UnparseableReply,
)
from .frames import FrameRef, prepare_frames
from .mocks import mock_ports
from .ports import (
    AsrPort,
    ClipScorePort,
    DetectPort,
    EmbedPort,
    LvlmPort,
    OcrPort,
    PortSet,
)
from .retrieval import RetrievedAux, encode_request, retrieve_text, select_det
from .scene_graph import build_summary
from .vector_index import FlatIndex
from .wire import http_port

logger = logging.getLogger(__name__)

BUILD_META = "build_meta.json"


class _Unconfigured(OcrPort, AsrPort, DetectPort, EmbedPort, ClipScorePort, LvlmPort):
    """Placeholder port that fails loudly when an endpoint is missing."""

    def __init__(self, kind: str):
        self.kind = kind

    def _raise(self):
        raise BackendUnavailable(
            f"no endpoint configured for extractor kind {self.kind!r} "
            f"(set it in the config file or the matching VIDRAG_*_URL variable)"
        )

    def ocr(self, frames):
        self._raise()

    def transcribe(self, audio_ref):
        self._raise()

    def detect(self, frames, entity_prompts):
        self._raise()

    def embed_text(self, texts):
        self._raise()

    def clip_scores(self, frames, prompts):
        self._raise()

    def generate(self, frames, prompt):
        self._raise()


def make_ports(config: PipelineConfig) -> PortSet:
    """Mock ports when a fixture directory is set, HTTP ports otherwise."""
    if config.mock_dir:
        return mock_ports(config.mock_dir)

    def port_for(kind: str):
        endpoint = config.endpoints.get(kind)
        return http_port(endpoint) if endpoint else _Unconfigured(kind)

    fingerprint = {
        kind: (config.endpoints[kind].base_url if kind in config.endpoints else "unconfigured")
        for kind in ("ocr", "asr", "detect", "embed_text", "clip_score", "lvlm_generate")
    }
    return PortSet(
        ocr=port_for("ocr"),
        asr=port_for("asr"),
        detect=port_for("detect"),
        embed=port_for("embed_text"),
        clip=port_for("clip_score"),
        lvlm=port_for("lvlm_generate"),
        fingerprint=fingerprint,
    )


# --- build phase -----------------------------------------------------------

def _input_signature(video: Path) -> str:
    digest = hashlib.sha256()
    if video.is_dir():
        for path in sorted(p for p in video.rglob("*") if p.is_file()):
            digest.update(str(path.relative_to(video)).encode("utf-8"))
            digest.update(path.read_bytes())
    else:
        digest.update(video.read_bytes())
    return digest.hexdigest()


def _build_fingerprint(video: Path, config: PipelineConfig, ports: PortSet) -> str:
    payload = {
        "input": _input_signature(video),
        "frames_n": config.frames_n,
        "asr_max_chars": config.asr_max_chars,
        "use_ocr": config.use_ocr,
        "use_asr": config.use_asr,
        "endpoints": ports.fingerprint,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _portable(path: str, root: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(root.resolve()))
    except ValueError:
        return str(Path(path).resolve())


def _resolve(path: str, root: Path) -> str:
    p = Path(path)
    return str(p if p.is_absolute() else root / p)


def default_db_dir(video: str | Path) -> Path:
    video = Path(video)
    return video.parent / (video.name + ".vidragdb")


def run_build(
    video: str | Path,
    config: PipelineConfig,
    ports: PortSet | None = None,
    out_dir: str | Path | None = None,
    entities: Sequence[str] | None = None,
    force: bool = False,
) -> Path:
    """Build (or reuse) the per-video database directory.

    Idempotent: rebuilding with identical inputs, parameters and endpoints is
    a cache hit that makes no extractor calls. ``entities`` triggers the
    detection path eagerly; otherwise it runs lazily at ask time.
    """
    video = Path(video)
    ports = ports or make_ports(config)
    out = Path(out_dir) if out_dir is not None else default_db_dir(video)
    out.mkdir(parents=True, exist_ok=True)

    fingerprint = _build_fingerprint(video, config, ports)
    meta_path = out / BUILD_META
    if not force and meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except ValueError:
            meta = {}
        if meta.get("fingerprint") == fingerprint:
            logger.info("build cache hit for %s at %s", video, out)
            return out

    source = prepare_frames(video, config.frames_n, out, config.fps_default)
    frames = source.frames

    def ocr_task() -> FlatIndex:
        if not config.use_ocr:
            return FlatIndex()
        try:
            return build_ocr_db(frames, ports.ocr, ports.embed)
        except PortError as exc:
            logger.warning("OCR path failed, leaving OCR database empty: %s", exc)
            return FlatIndex()

    def asr_task() -> FlatIndex:
        if not config.use_asr:
            return FlatIndex()
        try:
            return build_asr_db(source.audio_ref, ports.asr, ports.embed, config.asr_max_chars)
        except PortError as exc:
            logger.warning("ASR path failed, leaving ASR database empty: %s", exc)
            return FlatIndex()

    eager_entities = filter_entities(list(entities)) if entities else []
    if entities and not eager_entities:
        logger.warning("no eager detection: none of %s passed the entity filter", entities)

    def det_task():
        if eager_entities:
            _run_det_path(frames, eager_entities, config, ports, out)

    (out / "det").mkdir(exist_ok=True)
    with ThreadPoolExecutor(max_workers=3) as pool:
        ocr_future = pool.submit(ocr_task)
        asr_future = pool.submit(asr_task)
        det_future = pool.submit(det_task)
        ocr_index = ocr_future.result()
        asr_index = asr_future.result()
        det_future.result()

    ocr_index.save(out / "ocr")
    asr_index.save(out / "asr")

    meta = {
        "fingerprint": fingerprint,
        "video": str(video.resolve()),
        "frames": [
            {
                "frame_index": f.frame_index,
                "timestamp_s": f.timestamp_s,
                "file": _portable(f.image_ref, out),
            }
            for f in frames
        ],
        "audio_ref": _portable(source.audio_ref, out) if source.audio_ref else None,
        "params": {
            "frames_n": config.frames_n,
            "asr_max_chars": config.asr_max_chars,
            "t_retrieval": config.t_retrieval,
            "t_keyframe": config.t_keyframe,
            "beta": config.beta,
            "base_frames": config.base_frames,
        },
        "endpoints": ports.fingerprint,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return out


def _load_index(path: Path) -> FlatIndex:
    if not (path / "manifest.json").is_file():
        return FlatIndex()
    try:
        return FlatIndex.load(path)
    except CorruptManifest as exc:
        logger.warning("discarding unreadable index at %s: %s", path, exc)
        return FlatIndex()


def load_build(db_dir: str | Path) -> tuple[list[FrameRef], str | None, dict]:
    """Read a built database's frame manifest and audio reference."""
    db = Path(db_dir)
    meta = json.loads((db / BUILD_META).read_text(encoding="utf-8"))
    frames = [
        FrameRef(item["frame_index"], item["timestamp_s"], _resolve(item["file"], db))
        for item in meta["frames"]
    ]
    audio_ref = _resolve(meta["audio_ref"], db) if meta.get("audio_ref") else None
    return frames, audio_ref, meta


# --- detection path (query-driven, entity-keyed cache) ----------------------

def _det_cache_key(entities: Sequence[str], config: PipelineConfig, ports: PortSet) -> str:
    payload = {
        "entities": sorted(entities),
        "t_keyframe": config.t_keyframe,
        "beta": config.beta,
        "base_frames": config.base_frames,
        "clip": ports.fingerprint.get("clip_score", ""),
        "detect": ports.fingerprint.get("detect", ""),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _run_det_path(
    frames: list[FrameRef],
    entities: list[str],
    config: PipelineConfig,
    ports: PortSet,
    db_dir: Path,
):
    """Select keyframes for ``entities`` and detect on them, with caching."""
    cache = db_dir / "det" / _det_cache_key(entities, config, ports)
    selection_path = cache / "keyframes.json"
    detections_path = cache / "detections.jsonl"
    if selection_path.is_file() and detections_path.is_file():
        selection = KeyframeSelection.from_dict(
            json.loads(selection_path.read_text(encoding="utf-8"))["selection"]
        )
        return selection, read_detections_jsonl(detections_path)

    prompts = to_clip_prompts(entities)
    selection = select_keyframes(
        frames, prompts, ports.clip, config.t_keyframe, config.beta, config.base_frames
    )
    selected = set(selection.selected)
    keyframe_refs = [f for f in frames if f.frame_index in selected]
    by_frame = build_det_db(keyframe_refs, entities, ports.detect)

    cache.mkdir(parents=True, exist_ok=True)
    selection_blob = json.dumps(
        {"entities": entities, "selection": selection.to_dict()}, indent=2, sort_keys=True
    )
    selection_path.write_text(selection_blob, encoding="utf-8")
    write_detections_jsonl(detections_path, by_frame)
    # Mirror of the most recent detection run, the documented audit location.
    (db_dir / "keyframes.json").write_text(selection_blob, encoding="utf-8")
    write_detections_jsonl(db_dir / "det" / "detections.jsonl", by_frame)
    return selection, by_frame


# --- ask phase ---------------------------------------------------------------

@dataclass
class AskResult:
    predicted: str
    reply: str
    audit: dict
    timings: dict[str, float] = field(default_factory=dict)


_OPTION_KEY = re.compile(r"\s*\(?([A-Za-z0-9]+)[\.\):]\s+")


def option_letter(option: str) -> str:
    match = _OPTION_KEY.match(option)
    return match.group(1).upper() if match else option.strip().upper()


def parse_choice(reply: str, options: Sequence[str]) -> str:
    """Extract the chosen option key from a model reply, else "unparsed"."""
    letters = [option_letter(o) for o in options]
    stripped = reply.strip().rstrip(".")
    if stripped.upper() in letters:
        return stripped.upper()
    match = re.search(r"(?i)\banswer\s*(?:is|:)?\s*\(?([A-Za-z0-9]+)\)?", reply)
    if match and match.group(1).upper() in letters:
        return match.group(1).upper()
    pattern = re.compile(r"\b(" + "|".join(re.escape(l) for l in letters) + r")\b")
    match = pattern.search(reply)
    if match:
        return match.group(1)
    lowered = reply.lower()
    for option, letter in zip(options, letters):
        body = _OPTION_KEY.sub("", option, count=1).strip().lower()
        if body and body in lowered:
            return letter
    return "unparsed"


def run_ask(
    target: str | Path,
    question: str,
    options: Sequence[str] | None,
    config: PipelineConfig,
    ports: PortSet | None = None,
    db_out: str | Path | None = None,
) -> AskResult:
    """Answer one question against a built database (or build it first).

    ``target`` is a database directory or a video input. Emits an audit
    record capturing the retrieval requests, keyframe scores, retrieved ids,
    assembled context, and the raw model output; the audit is a pure function
    of inputs + fixtures, with timings reported separately.
    """
    ports = ports or make_ports(config)
    target = Path(target)
    timings: dict[str, float] = {}

    if (target / BUILD_META).is_file():
        db_dir = target
    else:
        started = time.perf_counter()
        db_dir = run_build(target, config, ports, out_dir=db_out)
        timings["build_s"] = time.perf_counter() - started

    frames, _audio_ref, _meta = load_build(db_dir)
    query = Query(question=question, options=list(options or []))

    # Phase 1: decouple the question into retrieval requests (no frames).
    started = time.perf_counter()
    decouple_prompt = render_decouple_prompt(query, config.template_dir)
    raw_reply = ports.lvlm.generate([], decouple_prompt.rendered)
    degraded = False
    try:
        requests_set = parse_requests(raw_reply)
    except UnparseableReply:
        logger.warning("decouple reply unparseable; degrading to query-only retrieval")
        requests_set = RetrievalRequestSet()
        degraded = True
    timings["decouple_s"] = time.perf_counter() - started

    # Phase 2: retrieval over the per-kind databases.
    started = time.perf_counter()
    ocr_hits, asr_hits = [], []
    if config.use_ocr:
        ocr_index = _load_index(db_dir / "ocr")
        if ocr_index.size():
            e_req = encode_request(
                requests_set, query, ports.embed, "ocr", config.request_encoding
            )
            ocr_hits = retrieve_text(ocr_index, e_req, config.t_retrieval, config.hit_cap)
    if config.use_asr:
        asr_index = _load_index(db_dir / "asr")
        if asr_index.size():
            e_req = encode_request(
                requests_set, query, ports.embed, "asr", config.request_encoding
            )
            asr_hits = retrieve_text(asr_index, e_req, config.t_retrieval, config.hit_cap)
    timings["retrieve_s"] = time.perf_counter() - started

    selection = None
    det_entries = []
    entities = requests_set.det_entities if config.use_det else []
    if entities:
        started = time.perf_counter()
        selection, by_frame = _run_det_path(frames, entities, config, ports, db_dir)
        ts_by_index = {f.frame_index: f.timestamp_s for f in frames}
        norm_by_index = {
            f.frame_index: selection.normalized_scores[pos]
            for pos, f in enumerate(frames)
        }
        summaries = [build_summary(idx, by_frame.get(idx, [])) for idx in selection.selected]
        det_entries = select_det(
            summaries,
            requests_set.det_types,
            timestamps=[ts_by_index[i] for i in selection.selected],
            scores=[norm_by_index[i] for i in selection.selected],
        )
        timings["detect_s"] = time.perf_counter() - started

    aux = RetrievedAux(
        ocr_hits=ocr_hits,
        asr_hits=asr_hits,
        det_types=requests_set.det_types,
        det_entries=det_entries,
    )

    # Phase 3: assemble and generate, shrinking once on context overflow.
    started = time.perf_counter()
    budget = resolve_budget(config.budget_tokens)
    ctx = assemble(aux, budget, config.group_by_kind)
    answer_prompt = render_answer_prompt(ctx, query, config.template_dir)
    try:
        reply = ports.lvlm.generate(frames, answer_prompt)
    except ContextOverflow:
        fallback = max(1, (budget if budget is not None else ctx.token_estimate) // 2)
        logger.warning("context overflow; retrying once with budget %d", fallback)
        ctx = assemble(aux, fallback, config.group_by_kind)
        answer_prompt = render_answer_prompt(ctx, query, config.template_dir)
        reply = ports.lvlm.generate(frames, answer_prompt)
    timings["generate_s"] = time.perf_counter() - started

    predicted = parse_choice(reply, query.options) if query.options else reply

    audit = {
        "db": str(db_dir),
        "question": question,
        "options": list(query.options),
        "decouple": {
            "template": decouple_prompt.template_id,
            "raw_reply": raw_reply,
            "degraded": degraded,
            "requests": {
                "asr": requests_set.asr_request,
                "ocr": requests_set.ocr_request,
                "det": requests_set.det_entities,
                "type": sorted(requests_set.det_types),
            },
        },
        "keyframes": selection.to_dict() if selection else None,
        "retrieved": {
            "ocr": [{"id": h.record.id, "score": h.score} for h in ocr_hits],
            "asr": [{"id": h.record.id, "score": h.score} for h in asr_hits],
            "det_frames": list(selection.selected) if selection else [],
        },
        "context": {
            "sections": [
                {
                    "kind": s.kind,
                    "t_start_s": s.t_start_s,
                    "t_end_s": s.t_end_s,
                    "id": s.section_id,
                    "score": s.score,
                    "text": s.text,
                }
                for s in ctx.sections
            ],
            "rendered": ctx.rendered,
            "token_estimate": ctx.token_estimate,
        },
        "answer_prompt": answer_prompt,
        "reply": reply,
        "predicted": predicted,
    }
    return AskResult(predicted=predicted, reply=reply, audit=audit, timings=timings)


# --- bench phase -------------------------------------------------------------

@dataclass
class QaItem:
    video: str
    question: str
    options: list[str]
    answer: str
    duration: str | None = None

    @classmethod
    def from_json(cls, data: dict) -> "QaItem":
        return cls(
            video=data["video"],
            question=data["question"],
            options=list(data.get("options", [])),
            answer=str(data["answer"]).upper(),
            duration=data.get("duration"),
        )


@dataclass
class BenchSummary:
    total: int
    correct: int
    accuracy: float
    per_duration: dict[str, dict]
    results: list[dict]


class _KeyedLocks:
    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def get(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())


def run_bench(
    dataset_path: str | Path,
    config: PipelineConfig,
    out_dir: str | Path,
    ports: PortSet | None = None,
) -> BenchSummary:
    """Run a multiple-choice QA dataset and score accuracy.

    Dataset: JSONL, one item per line with keys video / question / options /
    answer and an optional duration tag. Per-item failures are recorded as
    "unparsed" and never abort the run.
    """
    dataset_path = Path(dataset_path)
    items: list[QaItem] = []
    for line in dataset_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            items.append(QaItem.from_json(json.loads(line)))
    if not items:
        raise EmptyDataset(f"no items in {dataset_path}")

    ports = ports or make_ports(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    build_locks = _KeyedLocks()

    def evaluate(position: int, item: QaItem) -> dict:
        record = {
            "index": position,
            "video": item.video,
            "question": item.question,
            "gold": item.answer,
            "duration": item.duration,
            "predicted": "unparsed",
            "correct": False,
            "aux_tokens": 0,
            "timings": {},
            "error": None,
        }
        try:
            video = Path(item.video)
            db_dir = video if (video / BUILD_META).is_file() else default_db_dir(video)
            with build_locks.get(str(db_dir)):
                if not (db_dir / BUILD_META).is_file():
                    run_build(video, config, ports, out_dir=db_dir)
            result = run_ask(db_dir, item.question, item.options, config, ports)
            record["predicted"] = result.predicted
            record["correct"] = result.predicted == item.answer
            record["aux_tokens"] = result.audit["context"]["token_estimate"]
            record["timings"] = result.timings
        except Exception as exc:  # noqa: BLE001 - per-item isolation by design
            logger.warning("bench item %d failed: %s", position, exc)
            record["error"] = str(exc)
        return record

    workers = max(1, config.bench_workers)
    if workers == 1:
        results = [evaluate(i, item) for i, item in enumerate(items)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda pair: evaluate(*pair), enumerate(items)))

    correct = sum(1 for r in results if r["correct"])
    per_duration: dict[str, dict] = {}
    if any(item.duration for item in items):
        for record in results:
            bucket = record["duration"] or "untagged"
            stats = per_duration.setdefault(bucket, {"total": 0, "correct": 0})
            stats["total"] += 1
            stats["correct"] += int(record["correct"])
        for stats in per_duration.values():
            stats["accuracy"] = stats["correct"] / stats["total"]

    summary = BenchSummary(
        total=len(items),
        correct=correct,
        accuracy=correct / len(items),
        per_duration=per_duration,
        results=results,
    )
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for record in results:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    (out / "summary.json").write_text(
        json.dumps(
            {
                "total": summary.total,
                "correct": summary.correct,
                "accuracy": summary.accuracy,
                "per_duration": summary.per_duration,
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return summary
