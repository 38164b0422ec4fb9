"""First pipeline phase: turn a user question into typed retrieval requests.

The generation model is prompted (text only, no frames) to emit a JSON object
with keys ASR, DET and TYPE, each possibly null. This module renders that
prompt, parses the reply into a ``RetrievalRequestSet``, and filters detection
requests down to concrete physical entities a vision model can ground.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import UnparseableReply

DET_TYPES = frozenset({"location", "number", "relation"})

CLIP_PROMPT_PREFIX = "A picture of "


@dataclass
class Query:
    question: str
    options: list[str] = field(default_factory=list)
    video_id: str = ""

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValueError("question must be non-empty")

    @property
    def is_multiple_choice(self) -> bool:
        return bool(self.options)


@dataclass
class RetrievalRequestSet:
    """Parsed retrieval requests; ``None`` / empty means that path is skipped."""

    asr_request: str | None = None
    ocr_request: str | None = None
    det_entities: list[str] = field(default_factory=list)
    det_types: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.det_entities:
            self.det_types = frozenset()

    @property
    def all_absent(self) -> bool:
        return (
            self.asr_request is None
            and self.ocr_request is None
            and not self.det_entities
        )

    def to_reply_json(self) -> str:
        """Serialize in the same JSON shape the model is asked to produce."""
        return json.dumps(
            {
                "ASR": self.asr_request,
                "OCR": self.ocr_request,
                "DET": self.det_entities or None,
                "TYPE": sorted(self.det_types) or None,
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class DecouplePrompt:
    template_id: str
    rendered: str


# --- prompt rendering ----------------------------------------------------

def _asset_text(relpath: str) -> str:
    return (resources.files("vidrag") / "assets" / relpath).read_text(encoding="utf-8")


def render_decouple_prompt(query: Query, template_dir: str | Path | None = None) -> DecouplePrompt:
    """Render the request-decoupling prompt for ``query``.

    Multiple-choice questions use ``decouple_mc``, open questions
    ``decouple_open``. ``template_dir`` overrides the packaged templates.
    """
    template_id = "decouple_mc" if query.is_multiple_choice else "decouple_open"
    if template_dir is not None:
        template = (Path(template_dir) / f"{template_id}.txt").read_text(encoding="utf-8")
    else:
        template = _asset_text(f"prompts/{template_id}.txt")
    rendered = template.replace("{question}", query.question).replace(
        "{options_block}", "\n".join(query.options)
    )
    return DecouplePrompt(template_id=template_id, rendered=rendered)


# --- reply parsing -------------------------------------------------------

def _first_json_object(text: str) -> dict | None:
    """Extract the first decodable JSON object from free-form model text."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
        except ValueError:
            continue
        if isinstance(value, dict):
            return value
    return None


def _is_nullish(value) -> bool:
    return value is None or (isinstance(value, str) and value.strip().upper() in ("", "NULL", "NONE"))


def _as_text(value) -> str | None:
    if _is_nullish(value):
        return None
    if isinstance(value, (str, int, float)):
        text = str(value).strip()
        return text or None
    return None


def _as_text_list(value) -> list[str]:
    if _is_nullish(value):
        return []
    if isinstance(value, (str, int, float)):
        value = [value]
    if not isinstance(value, list):
        return []
    out = []
    for item in value:
        text = _as_text(item)
        if text is not None:
            out.append(text)
    return out


def parse_requests(
    raw_reply: str, entity_filter: "EntityFilter | None" = None
) -> RetrievalRequestSet:
    """Parse a model reply into a ``RetrievalRequestSet``.

    Tolerates markdown code fences and surrounding prose; the first JSON
    object found wins. Keys are matched case-insensitively; null / "NULL" /
    empty values mean "not required". Detection phrases are passed through the
    entity filter, and TYPE values outside {location, number, relation} are
    dropped.

    Raises UnparseableReply when no JSON object can be recovered; callers fall
    back to an all-absent request set.
    """
    obj = _first_json_object(raw_reply)
    if obj is None:
        raise UnparseableReply("no JSON object found in model reply")
    by_key = {str(k).strip().upper(): v for k, v in obj.items()}

    entities = _as_text_list(by_key.get("DET"))
    entities = (entity_filter or default_entity_filter()).filter(entities)

    types = frozenset(
        t.strip().lower()
        for t in _as_text_list(by_key.get("TYPE"))
        if t.strip().lower() in DET_TYPES
    )

    return RetrievalRequestSet(
        asr_request=_as_text(by_key.get("ASR")),
        ocr_request=_as_text(by_key.get("OCR")),
        det_entities=entities,
        det_types=types,
    )


# --- entity filtering ----------------------------------------------------

# Closed-class word lists for the built-in tagger. The engine must run
# without an NLP dependency; a real tagger can be plugged in via EntityFilter.
_DETERMINERS = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "no",
    "each", "every", "either", "neither", "both", "all", "few", "many", "most",
    "much", "several", "such", "what", "which", "whose",
}
_PRONOUNS = {
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us",
    "them", "my", "your", "his", "its", "our", "their", "mine", "yours",
    "hers", "ours", "theirs", "who", "whom", "something", "anything",
    "nothing", "everything", "someone", "anyone", "everyone",
}
_PREPOSITIONS = {
    "in", "on", "at", "by", "for", "with", "about", "against", "between",
    "into", "through", "during", "before", "after", "above", "below", "to",
    "from", "up", "down", "of", "off", "over", "under", "near", "around",
}
_CONJUNCTIONS = {"and", "or", "but", "nor", "so", "yet", "if", "while", "because", "although"}
_COMMON_VERBS = {
    "be", "is", "are", "was", "were", "been", "being", "am", "do", "does",
    "did", "have", "has", "had", "go", "goes", "went", "get", "gets", "got",
    "make", "makes", "made", "say", "says", "said", "see", "sees", "saw",
    "show", "shows", "appear", "appears", "happen", "happens", "run", "runs",
    "running", "walk", "walking", "talk", "talking", "speak", "speaking",
    "move", "moving", "look", "looking", "wear", "wearing", "hold", "holding",
}
_COMMON_ADVERBS = {
    "very", "quite", "rather", "too", "also", "just", "only", "not", "never",
    "always", "often", "sometimes", "here", "there", "now", "then", "soon",
    "again", "almost", "already", "together", "quickly", "slowly", "well",
}
# Ambiguous words that are as often noun heads (light, glass, metal, ...) are
# deliberately absent: noun modifiers are accepted by the compound rule anyway.
_COMMON_ADJECTIVES = {
    # colors
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown",
    "black", "white", "gray", "grey", "golden", "silver", "dark",
    "blonde", "beige", "cyan", "magenta",
    # size / shape / age / state
    "big", "small", "large", "little", "tiny", "huge", "tall", "short",
    "long", "wide", "narrow", "thick", "thin", "round", "square", "flat",
    "old", "young", "new", "ancient", "modern", "broken", "open", "closed",
    "empty", "full", "wet", "dry", "hot", "cold", "warm", "cool", "clean",
    "dirty", "bright", "shiny", "fast", "slow", "heavy", "wooden",
    "striped", "spotted", "left", "right", "front",
    "back", "upper", "lower", "first", "second", "third", "middle", "main",
    "happy", "sad", "angry", "beautiful", "pretty", "ugly", "giant",
}
_ADJ_SUFFIXES = ("ous", "ful", "less", "ish", "able", "ible")


class RuleBasedTagger:
    """Coarse part-of-speech tagger from closed-class lists and suffixes.

    Unknown words default to nouns, which is the right bias for an
    open-vocabulary entity filter (object names cannot be enumerated).
    """

    def tag(self, token: str) -> str:
        word = token.lower()
        if word in _COMMON_ADJECTIVES:
            return "adj"
        if word in _DETERMINERS or word in _PRONOUNS or word in _PREPOSITIONS or word in _CONJUNCTIONS:
            return "other"
        if word in _COMMON_VERBS:
            return "verb"
        if word in _COMMON_ADVERBS or (word.endswith("ly") and len(word) > 3):
            return "adv"
        if word.endswith(_ADJ_SUFFIXES) and len(word) > 4:
            return "adj"
        return "noun"


def _load_lexicon(path: str | Path | None) -> frozenset[str]:
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = _asset_text("config/abstract_terms.txt")
    terms = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            terms.add(line)
    return frozenset(terms)


class EntityFilter:
    """Keeps detection phrases naming concrete, groundable entities.

    A phrase survives when it is a single noun or a compound whose head (last
    token) is a noun and whose modifiers are adjectives or nouns, and when it
    is not listed in the abstract-concept lexicon. Output is lowercased,
    whitespace-normalized, deduplicated, and order-preserving.
    """

    def __init__(self, tagger: RuleBasedTagger | None = None, lexicon_path: str | Path | None = None):
        self.tagger = tagger or RuleBasedTagger()
        self.lexicon = _load_lexicon(lexicon_path)

    def _normalize(self, phrase: str) -> str:
        cleaned = re.sub(r"[^\w\s'-]", " ", phrase.lower())
        return " ".join(cleaned.split())

    def keeps(self, phrase: str) -> bool:
        normalized = self._normalize(phrase)
        if not normalized or normalized in self.lexicon:
            return False
        tokens = normalized.split()
        tags = [self.tagger.tag(t) for t in tokens]
        if tags[-1] != "noun" or tokens[-1] in self.lexicon:
            return False
        return all(tag in ("adj", "noun") for tag in tags[:-1])

    def filter(self, phrases: list[str]) -> list[str]:
        out: list[str] = []
        seen: set[str] = set()
        for phrase in phrases:
            normalized = self._normalize(phrase)
            if normalized in seen or not self.keeps(phrase):
                continue
            seen.add(normalized)
            out.append(normalized)
        return out


@lru_cache(maxsize=1)
def default_entity_filter() -> EntityFilter:
    return EntityFilter()


def filter_entities(phrases: list[str], entity_filter: EntityFilter | None = None) -> list[str]:
    """Filter detection request phrases to CLIP-groundable physical entities."""
    return (entity_filter or default_entity_filter()).filter(phrases)


def to_clip_prompts(entities: list[str]) -> list[str]:
    """Prefix each (already filtered) entity for image-text scoring."""
    return [CLIP_PROMPT_PREFIX + e for e in entities]
