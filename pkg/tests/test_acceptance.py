"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report lines alongside the test outcomes.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from conftest import ANSWER_MARKER, DECOUPLE_MARKER, make_scenario, write_fixtures, write_frames
from vidrag.assembly import assemble, resolve_budget
from vidrag.config import PipelineConfig
from vidrag.database import AuxRecord, select_keyframes
from vidrag.mocks import mock_ports
from vidrag.pipeline import run_ask, run_build
from vidrag.ports import ClipScorePort, Detection
from vidrag.retrieval import AuxHit, DetEntry, RetrievedAux, retrieve_text
from vidrag.scene_graph import OVERLAPPING, build_summary, positional_description
from vidrag.vector_index import FlatIndex, IndexEntry


def report(name: str, passed: bool = True, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: {status}{suffix}")
    assert passed, f"{name} failed {suffix}"


# --- criterion 1: index-oracle equivalence -----------------------------------

def test_index_oracle_equivalence():
    rng = np.random.default_rng(2024)
    dim, count, queries = 64, 1000, 50
    vectors = rng.standard_normal((count, dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    ids = [f"v{i:05d}" for i in range(count)]

    index = FlatIndex()
    index.add(IndexEntry(id=i, vector=v, payload={"id": i}) for i, v in zip(ids, vectors))

    # independent oracle: float32-stored rows scanned in float64
    stored = vectors.astype(np.float32).astype(np.float64)

    started = time.perf_counter()
    checked = 0
    for _ in range(queries):
        query = rng.standard_normal(dim)
        unit = query / np.linalg.norm(query)
        scores = np.clip(stored @ unit, -1.0, 1.0)
        for threshold in (0.0, 0.3, 0.5):
            expected = sorted(
                ((ids[i], float(scores[i])) for i in np.nonzero(scores > threshold)[0]),
                key=lambda h: (-h[1], h[0]),
            )
            hits = index.search(query, threshold)
            assert [h.id for h in hits] == [e[0] for e in expected]
            assert np.allclose(
                [h.score for h in hits], [e[1] for e in expected], atol=1e-6
            )
            checked += 1
    elapsed = time.perf_counter() - started
    report(
        "index-oracle-equivalence",
        elapsed < 5.0,
        f"{checked} threshold sweeps over {queries} queries in {elapsed:.2f}s",
    )


# --- criterion 2: threshold monotonicity (retrieval-volume structure) ----------


def test_threshold_monotonicity_and_boundaries():
    # Synthetic DB with exactly known similarities to the probe query.
    rng = np.random.default_rng(7)
    dim = 16
    query = np.zeros(dim)
    query[0] = 1.0
    targets = np.linspace(0.05, 0.95, 40)  # all strictly positive sims
    records, entries = [], []
    for i, sim in enumerate(targets):
        perp = rng.standard_normal(dim)
        perp[0] = 0.0
        perp /= np.linalg.norm(perp)
        vector = sim * query + np.sqrt(1 - sim**2) * perp
        record = AuxRecord(
            id=f"rec-{i:04d}", kind="asr", t_start_s=float(i), t_end_s=float(i) + 1.0,
            frame_index=None, text=f"synthetic auxiliary text number {i}",
        )
        records.append(record)
        entries.append(IndexEntry(id=record.id, vector=vector, payload=record.to_payload()))
    index = FlatIndex()
    index.add(entries)

    thresholds = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0]
    sizes, tokens = [], []
    for t in thresholds:
        hits = retrieve_text(index, query, t)
        expected_ids = {r.id for r, s in zip(records, targets) if s > t}
        assert {h.record.id for h in hits} == expected_ids
        ctx = assemble(RetrievedAux(asr_hits=hits))
        sizes.append(len(hits))
        tokens.append(ctx.token_estimate)

    assert all(a >= b for a, b in zip(sizes, sizes[1:])), sizes
    assert sizes[0] == len(records)      # t = 0.0 retrieves every record
    assert sizes[-1] == 0                # t = 1.0 retrieves nothing
    assert tokens[-1] == 0               # ... and assembles zero auxiliary tokens
    assert tokens[0] > 0
    report(
        "threshold-monotonicity",
        True,
        f"sizes {sizes} / tokens {tokens} over t={thresholds}",
    )


# --- criterion 3: keyframe selection math ---------------------------------------

class _RowClipPort(ClipScorePort):
    def __init__(self, row):
        self.row = list(row)

    def clip_scores(self, frames, prompts):
        return np.tile(np.asarray(self.row, dtype=np.float64), (len(prompts), 1))


def test_keyframe_selection_math(tmp_path):
    prompts = ["A picture of dog"]

    frames16 = write_frames(tmp_path / "a", [f"f{i}.png" for i in range(16)])
    uniform = select_keyframes(frames16, prompts, _RowClipPort([0.7] * 16),
                               t=0.3, beta=4.0, base_frames=16)
    assert uniform.alpha == pytest.approx(4.0)
    assert uniform.normalized_scores == pytest.approx([0.25] * 16)
    assert uniform.selected == []

    one_hot = [0.0] * 16
    one_hot[11] = 1.0
    spike = select_keyframes(frames16, prompts, _RowClipPort(one_hot),
                             t=0.3, beta=4.0, base_frames=16)
    assert spike.selected == [11]
    assert spike.normalized_scores[11] == pytest.approx(4.0)

    frames8 = write_frames(tmp_path / "b", [f"f{i}.png" for i in range(8)])
    raw = [0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05]
    hand = select_keyframes(frames8, prompts, _RowClipPort(raw),
                            t=0.3, beta=4.0, base_frames=16)
    assert hand.alpha == pytest.approx(2.0)
    assert hand.normalized_scores == pytest.approx([0.8, 0.2, 0.2, 0.2, 0.2, 0.2, 0.1, 0.1])
    assert hand.selected == [0]

    rng = np.random.default_rng(55)
    frames10 = write_frames(tmp_path / "c", [f"f{i}.png" for i in range(10)])
    for _ in range(100):
        row = rng.random(10)
        c = float(rng.uniform(np.nextafter(0, 1), 10.0))
        base = select_keyframes(frames10, prompts, _RowClipPort(row),
                                t=0.3, beta=4.0, base_frames=16)
        scaled = select_keyframes(frames10, prompts, _RowClipPort(c * row),
                                  t=0.3, beta=4.0, base_frames=16)
        assert scaled.selected == base.selected
        assert scaled.normalized_scores == pytest.approx(base.normalized_scores, abs=1e-9)

    report("keyframe-selection-math", True,
           "uniform/one-hot/hand-computed cases + 100 scale-invariance draws")


# --- criterion 4: scene-graph suite ------------------------------------------------

def test_scene_graph_suite():
    # byte-for-byte template formats
    summary = build_summary(0, [Detection(0, "person", (10.0, 20.0, 30.0, 40.0), 0.9)])
    assert summary.loc_texts == [
        "Object 1 is a person located at coordinates [25, 40] with dimensions 30 × 40"
    ]
    assert summary.cnt_text == "Object counting:\n- person: 1"
    pair = build_summary(0, [
        Detection(0, "person", (0.0, 40.0, 20.0, 20.0), 0.9),
        Detection(0, "dog", (80.0, 40.0, 20.0, 20.0), 0.9),
    ])
    assert pair.rel_texts == ["Object 1 (person) is to the left of Object 2 (dog)"]

    opposite = {
        "to the left of": "to the right of", "to the right of": "to the left of",
        "above": "below", "below": "above",
        "to the upper-left of": "to the lower-right of",
        "to the lower-right of": "to the upper-left of",
        "to the upper-right of": "to the lower-left of",
        "to the lower-left of": "to the upper-right of",
    }
    rng = np.random.default_rng(404)
    categories = ["person", "dog", "car", "sign", "tree"]
    for _ in range(500):
        k = int(rng.integers(0, 7))
        detections = [
            Detection(
                0,
                categories[int(rng.integers(0, len(categories)))],
                (
                    float(rng.integers(0, 300)), float(rng.integers(0, 300)),
                    float(rng.integers(1, 100)), float(rng.integers(1, 100)),
                ),
                0.9,
            )
            for _ in range(k)
        ]
        summary = build_summary(0, detections)
        assert len(summary.rel_texts) == k * (k - 1) // 2
        if k:
            counted = sum(
                int(line.rsplit(": ", 1)[1]) for line in summary.cnt_text.splitlines()[1:]
            )
            assert counted == k
        shifted = [
            Detection(0, d.category, (d.box[0] + 53.0, d.box[1] + 17.0, d.box[2], d.box[3]), d.score)
            for d in detections
        ]
        assert build_summary(0, shifted).rel_texts == summary.rel_texts
        for i in range(k):
            for j in range(i + 1, k):
                forward = positional_description(detections[i], detections[j])
                backward = positional_description(detections[j], detections[i])
                if forward == OVERLAPPING:
                    assert backward == OVERLAPPING
                else:
                    assert backward == opposite[forward]

    report("scene-graph-suite", True,
           "templates byte-exact; 500 random sets: counts, pairs, antisymmetry, translation")


# --- criterion 5: end-to-end determinism + ablation structure -----------------------

def test_end_to_end_determinism_and_ablation(tmp_path):
    scenario = make_scenario(tmp_path)
    config = PipelineConfig(frames_n=8, asr_max_chars=50, mock_dir=str(scenario["fixtures"]))
    db = run_build(scenario["video"], config, out_dir=tmp_path / "db")

    audits = set()
    for _ in range(5):
        result = run_ask(db, scenario["question"], scenario["options"], config)
        audits.add(json.dumps(result.audit, sort_keys=True, ensure_ascii=False))
        assert result.predicted == "B"
    assert len(audits) == 1

    def sections(**flags):
        cfg = PipelineConfig(
            frames_n=8, asr_max_chars=50, mock_dir=str(scenario["fixtures"]), **flags
        )
        return run_ask(db, scenario["question"], scenario["options"], cfg).audit["context"]

    det_only = sections(use_ocr=False, use_asr=False)
    det_ocr = sections(use_asr=False)
    det_ocr_asr = sections()

    def of_kind(ctx, kind):
        return [s for s in ctx["sections"] if s["kind"] == kind]

    assert of_kind(det_only, "ocr") == [] and of_kind(det_only, "asr") == []
    assert of_kind(det_ocr, "asr") == []
    assert of_kind(det_ocr, "det") == of_kind(det_only, "det")
    assert of_kind(det_ocr_asr, "det") == of_kind(det_only, "det")
    assert of_kind(det_ocr_asr, "ocr") == of_kind(det_ocr, "ocr")
    grows = (
        len(det_only["rendered"]) < len(det_ocr["rendered"]) < len(det_ocr_asr["rendered"])
    )
    assert grows
    report("end-to-end-determinism", True,
           "5 byte-identical audits; ablation DET -> +OCR -> +ASR strictly grows")


# --- criterion 6: budget preset --------------------------------------------------------

def test_budget_preset_soundness():
    rng = np.random.default_rng(99)
    worst = 0
    for case in range(50):
        ocr_hits, asr_hits, det_entries = [], [], []
        for i in range(int(rng.integers(2, 15))):
            words = " ".join(
                rng.choice(["sign", "text", "sale", "exit", "menu", "banner"], size=rng.integers(10, 120))
            )
            record = AuxRecord(id=f"ocr-{case:02d}{i:03d}", kind="ocr",
                               t_start_s=float(i), t_end_s=float(i),
                               frame_index=i, text=words)
            ocr_hits.append(AuxHit(record, float(rng.random())))
        for i in range(int(rng.integers(2, 15))):
            words = " ".join(
                rng.choice(["speech", "price", "welcome", "thanks", "story"], size=rng.integers(10, 120))
            )
            record = AuxRecord(id=f"asr-{case:02d}{i:03d}", kind="asr",
                               t_start_s=float(i), t_end_s=float(i) + 0.5,
                               frame_index=None, text=words)
            asr_hits.append(AuxHit(record, float(rng.random())))
        for i in range(int(rng.integers(0, 8))):
            words = " ".join(
                rng.choice(["Object", "located", "coordinates", "counting"], size=rng.integers(10, 100))
            )
            det_entries.append(DetEntry(i, float(i), float(rng.random()), words))

        aux = RetrievedAux(ocr_hits=ocr_hits, asr_hits=asr_hits, det_entries=det_entries)
        ctx = assemble(aux, budget_tokens=resolve_budget("paper-default"))
        assert ctx.token_estimate <= 2048
        worst = max(worst, ctx.token_estimate)
    report("budget-preset", True, f"50 synthetic cases, max estimate {worst} <= 2048")


# --- criterion 7: degradation paths ------------------------------------------------------

def test_degradation_paths(tmp_path):
    # 7a: video with no audio track at all
    video = tmp_path / "mute"
    write_frames(video, [f"f{i}.png" for i in range(4)])
    fixtures = write_fixtures(
        tmp_path / "fx-mute",
        ocr={"f1.png": [{"text": "HELLO", "confidence": 0.9}]},
        lvlm={"rules": [
            {"contains": DECOUPLE_MARKER, "reply": '{"ASR": null, "DET": null, "TYPE": null}'},
            {"contains": ANSWER_MARKER, "reply": "A"},
        ]},
    )
    config = PipelineConfig(frames_n=4, mock_dir=str(fixtures))
    result = run_ask(video, "What is shown?", ["A. text", "B. nothing"], config,
                     db_out=tmp_path / "db-mute")
    assert result.predicted == "A"
    assert "What is shown?" in result.audit["answer_prompt"]

    # 7b: decouple reply is all-NULL -> query-only retrieval, no detection
    scenario = make_scenario(
        tmp_path / "nulls",
        lvlm_rules=[
            {"contains": DECOUPLE_MARKER, "reply": '{"ASR": null, "DET": null, "TYPE": null}'},
            {"contains": ANSWER_MARKER, "reply": "B"},
        ],
    )
    config = PipelineConfig(frames_n=8, asr_max_chars=50, mock_dir=str(scenario["fixtures"]))
    result = run_ask(scenario["video"], scenario["question"], scenario["options"], config,
                     db_out=tmp_path / "db-nulls")
    assert result.predicted == "B"
    assert result.audit["keyframes"] is None

    # 7c: empty OCR everywhere -> context may be empty, prompt still valid
    video3 = tmp_path / "blank"
    write_frames(video3, [f"f{i}.png" for i in range(4)])
    fixtures3 = write_fixtures(
        tmp_path / "fx-blank",
        lvlm={"rules": [
            {"contains": DECOUPLE_MARKER, "reply": '{"ASR": null, "DET": null, "TYPE": null}'},
            {"contains": ANSWER_MARKER, "reply": "B"},
        ]},
    )
    config3 = PipelineConfig(frames_n=4, mock_dir=str(fixtures3))
    result = run_ask(video3, "Which option?", ["A. x", "B. y"], config3,
                     db_out=tmp_path / "db-blank")
    assert result.predicted == "B"
    assert result.audit["context"]["rendered"] == ""
    assert result.audit["context"]["token_estimate"] == 0
    assert "Which option?" in result.audit["answer_prompt"]

    report("degradation-paths", True, "no-audio, all-NULL decouple, empty OCR all answered")
