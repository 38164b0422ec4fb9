"""Merge retrieved auxiliary texts chronologically and render the final prompt.

Sections are interleaved by start time (the default) or grouped per kind, an
optional token budget drops the least-similar records per kind round-robin,
and the answer prompt places the auxiliary block before the question.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .decouple import Query
from .retrieval import RetrievedAux

# Tie-break priority at equal timestamps (interleaved mode).
KIND_PRIORITY = {"ocr": 0, "det": 1, "asr": 2}
# Per-kind block order for grouped rendering.
GROUPED_ORDER = {"ocr": 0, "asr": 1, "det": 2}
# Fixed cycle order for budget-driven drops.
DROP_CYCLE = ("ocr", "det", "asr")

TOKENS_PER_WORD = 1.3

AUX_HEADER = "Auxiliary video information (time-ordered):"

BUDGET_PRESETS = {"paper-default": 2048}


def estimate_tokens(text: str) -> int:
    """Cheap token estimate: whitespace words times a subword factor."""
    if not text:
        return 0
    return math.ceil(len(text.split()) * TOKENS_PER_WORD)


def resolve_budget(value: int | str | None) -> int | None:
    """Resolve a numeric budget or a named preset to a token count."""
    if value is None:
        return None
    if isinstance(value, str):
        if value in BUDGET_PRESETS:
            return BUDGET_PRESETS[value]
        return int(value)
    return int(value)


@dataclass(frozen=True)
class Section:
    kind: str
    t_start_s: float
    t_end_s: float
    section_id: str
    text: str
    score: float


@dataclass
class AssembledContext:
    sections: list[Section] = field(default_factory=list)
    rendered: str = ""
    token_estimate: int = 0


def _clock(seconds: float) -> str:
    total = int(round(seconds))
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours:02d}:{minutes:02d}:{secs:02d}"
    return f"{minutes:02d}:{secs:02d}"


def _header(section: Section) -> str:
    label = section.kind.upper()
    if section.kind == "asr" and section.t_end_s > section.t_start_s:
        return f"[{label} {_clock(section.t_start_s)}-{_clock(section.t_end_s)}]"
    return f"[{label} @ {_clock(section.t_start_s)}]"


def _sections_from(aux: RetrievedAux) -> list[Section]:
    sections = []
    for hit in aux.ocr_hits:
        record = hit.record
        sections.append(
            Section("ocr", record.t_start_s, record.t_end_s, record.id, record.text, hit.score)
        )
    for hit in aux.asr_hits:
        record = hit.record
        sections.append(
            Section("asr", record.t_start_s, record.t_end_s, record.id, record.text, hit.score)
        )
    for entry in aux.det_entries:
        sections.append(
            Section(
                "det",
                entry.timestamp_s,
                entry.timestamp_s,
                f"det-{entry.frame_index:04d}",
                entry.text,
                entry.score,
            )
        )
    return sections


def _sort(sections: list[Section], group_by_kind: bool) -> list[Section]:
    if group_by_kind:
        key = lambda s: (GROUPED_ORDER[s.kind], s.t_start_s, s.section_id)
    else:
        key = lambda s: (s.t_start_s, KIND_PRIORITY[s.kind], s.section_id)
    return sorted(sections, key=key)


def _render(sections: list[Section]) -> str:
    return "\n\n".join(f"{_header(s)}\n{s.text}" for s in sections)


def assemble(
    aux: RetrievedAux,
    budget_tokens: int | None = None,
    group_by_kind: bool = False,
) -> AssembledContext:
    """Merge all retrieved texts into one ordered context.

    With a budget set, the lowest-similarity record is dropped per kind in a
    fixed round-robin until the estimate fits (a single remaining record is
    kept even if oversize). The drop sequence does not depend on the budget
    value, so any record surviving budget B survives every larger budget.
    """
    sections = _sort(_sections_from(aux), group_by_kind)

    if budget_tokens is not None:
        queues: dict[str, list[Section]] = {kind: [] for kind in DROP_CYCLE}
        for section in sections:
            queues[section.kind].append(section)
        for kind in DROP_CYCLE:
            queues[kind].sort(key=lambda s: (s.score, s.section_id), reverse=False)

        kept = list(sections)
        cycle = 0
        while len(kept) > 1 and estimate_tokens(_render(kept)) > budget_tokens:
            kind = DROP_CYCLE[cycle % len(DROP_CYCLE)]
            cycle += 1
            queue = queues[kind]
            if not queue:
                if all(not queues[k] for k in DROP_CYCLE):
                    break
                continue
            victim = queue.pop(0)
            kept = [s for s in kept if not (s.kind == kind and s.section_id == victim.section_id)]
        sections = kept

    rendered = _render(sections)
    return AssembledContext(
        sections=sections,
        rendered=rendered,
        token_estimate=estimate_tokens(rendered),
    )


def _template(template_id: str, template_dir: str | Path | None) -> str:
    if template_dir is not None:
        return (Path(template_dir) / f"{template_id}.txt").read_text(encoding="utf-8")
    return (resources.files("vidrag") / "assets" / "prompts" / f"{template_id}.txt").read_text(
        encoding="utf-8"
    )


def render_answer_prompt(
    ctx: AssembledContext, query: Query, template_dir: str | Path | None = None
) -> str:
    """Render the final generation prompt: auxiliary block, then the question.

    An empty context omits the auxiliary block entirely, degrading to a
    vanilla question prompt.
    """
    template_id = "answer_mc" if query.is_multiple_choice else "answer_open"
    template = _template(template_id, template_dir)
    aux_section = f"{AUX_HEADER}\n{ctx.rendered}\n\n" if ctx.rendered else ""
    return (
        template.replace("{aux_section}", aux_section)
        .replace("{question}", query.question)
        .replace("{options_block}", "\n".join(query.options))
    )
