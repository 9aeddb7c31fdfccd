"""Prompt composition for feasibility queries.

Every prompt is assembled from four components: a persona sentence, an
instruction sentence, an optional guidance block of known-feasible
example pairs, and a query sentence about the target pair. Rendering is
a pure function of its inputs, so identical inputs always produce
byte-identical messages.

The ``a/an`` placeholder in query templates is resolved with a
vowel-initial heuristic on the state token (a/e/i/o/u take "an");
rendered text never contains the literal placeholder.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace

from .errors import EmptyGuidanceError, PromptFormatError, ValidationError
from .labelspace import Pair, PairSpace, related_seen

PERSONA = "You are a helpful, respectful and honest assistant."
CANONICAL_INSTRUCTION = "Answer with a single word, yes or no."
CANONICAL_QUERY = "Does a/an {s} {o} exist in the real world?"

# Grid search component sentences: 4 instructions x 4 guidance headers x 4 queries.
INSTRUCTIONS = (
    "Answer with a single word, yes or no.",
    "Answer with a single word, yes or no, followed by an explanation.",
    "Answer with yes or no.",
    "Answer with yes or no, followed by an explanation.",
)
GUIDANCE_HEADERS = (
    "The following list consists of words that fit together.",
    "The following list consists of word combinations that make sense.",
    "The given list consists of word combinations that make sense.",
    "The given list comprises word combinations that make sense.",
)
QUERIES = (
    'Considering the list above, does "{s} {o}" fit into the list?',
    'Does "{s} {o}" fit into the list above?',
    'Does "{s} {o}" align with the contents of the list provided above?',
    'Considering the list above, does "{s} {o}" align with the contents?',
)

QA_SCORE_HEADER = (
    "The following list consists of words and their likelihood of existence "
    "in the real world, scored on a scale of 0 to 9."
)
QA_SCORE_QUERY = 'What is the score for "{s} {o}"?'
QA_SCORE_INSTRUCTION = "Answer with a single integer from 0 to 9."

PLACEMENTS = ("system", "hmsg_begin", "hmsg_last")
FORMATS = ("canonical", "list_guided", "qa_yes", "qa_score")
GUIDANCE_MODES = ("related", "random")

_VOWELS = "aeiou"


@dataclass(frozen=True)
class PromptSpec:
    """Structured prompt components, prior to rendering for a concrete pair."""

    persona: str = PERSONA
    instruction: str = CANONICAL_INSTRUCTION
    instruction_placement: str = "system"
    guidance: str = ""
    query: str = CANONICAL_QUERY
    format: str = "canonical"

    def __post_init__(self) -> None:
        if not self.persona:
            raise PromptFormatError("persona must be non-empty")
        if self.instruction_placement not in PLACEMENTS:
            raise PromptFormatError(f"unknown instruction placement {self.instruction_placement!r}")
        if self.format not in FORMATS:
            raise PromptFormatError(f"unknown prompt format {self.format!r}")
        if self.query.count("{s}") != 1 or self.query.count("{o}") != 1:
            raise PromptFormatError("query must contain {s} and {o} exactly once each")
        if self.format == "canonical" and self.guidance:
            raise PromptFormatError("canonical prompts take no guidance header")


@dataclass(frozen=True)
class GuidanceSet:
    """In-context example pairs selected for one query pair."""

    pairs: tuple[Pair, ...]
    selection_mode: str
    requested_count: int
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.pairs) > self.requested_count:
            raise ValidationError("guidance holds more pairs than were requested")


@dataclass(frozen=True)
class PromptText:
    """Rendered chat messages, ready to send."""

    system_message: str
    human_message: str


def resolve_article(template: str, state: str) -> str:
    """Replace every ``a/an`` placeholder with the article the state token takes."""
    article = "an" if state[:1] in _VOWELS else "a"
    return template.replace("a/an", article)


def _fill(template: str, state: str, obj: str) -> str:
    return resolve_article(template, state).replace("{s}", state).replace("{o}", obj)


def _assemble(spec: PromptSpec, body_lines: list[str]) -> PromptText:
    if spec.instruction_placement == "system":
        system = f"{spec.persona} {spec.instruction}"
        lines = body_lines
    elif spec.instruction_placement == "hmsg_begin":
        system = spec.persona
        lines = [spec.instruction] + body_lines
    else:
        system = spec.persona
        lines = body_lines + [spec.instruction]
    return PromptText(system_message=system, human_message="\n".join(lines))


def compose_canonical(spec: PromptSpec, state: str, obj: str) -> PromptText:
    """Render the plain existence question with no in-context examples."""
    if spec.format != "canonical":
        raise PromptFormatError(f"compose_canonical needs a canonical spec, got {spec.format!r}")
    return _assemble(spec, [_fill(spec.query, state, obj)])


def compose_guided(spec: PromptSpec, state: str, obj: str, guidance: GuidanceSet) -> PromptText:
    """Render the list-guided prompt: header, one item line per pair, query."""
    if spec.format != "list_guided":
        raise PromptFormatError(f"compose_guided needs a list_guided spec, got {spec.format!r}")
    if not guidance.pairs:
        raise EmptyGuidanceError("list_guided prompt with no guidance pairs; use the canonical fallback")
    lines: list[str] = []
    if spec.guidance:
        lines.append(spec.guidance)
    lines.extend(f"- {p.state} {p.object}" for p in guidance.pairs)
    lines.append(_fill(spec.query, state, obj))
    return _assemble(spec, lines)


def compose_qa(spec: PromptSpec, state: str, obj: str, guidance: GuidanceSet) -> PromptText:
    """Render a question-answer style prompt.

    ``qa_yes`` repeats the query sentence answered "Yes." for every
    guidance pair, then asks it unanswered for the target. ``qa_score``
    lists each guidance pair with a fixed score of 9 under the 0-9
    header, then asks for the target's score.
    """
    if spec.format not in ("qa_yes", "qa_score"):
        raise PromptFormatError(f"compose_qa needs a qa_yes or qa_score spec, got {spec.format!r}")
    if not guidance.pairs:
        raise EmptyGuidanceError("qa prompt with no guidance pairs; use the canonical fallback")
    lines: list[str] = []
    if spec.format == "qa_yes":
        lines.extend(f"{_fill(spec.query, p.state, p.object)} Yes." for p in guidance.pairs)
        lines.append(_fill(spec.query, state, obj))
    else:
        if spec.guidance:
            lines.append(spec.guidance)
        lines.extend(f"- {p.state} {p.object}, score: 9" for p in guidance.pairs)
        lines.append(_fill(spec.query, state, obj))
    return _assemble(spec, lines)


def canonical_fallback(spec: PromptSpec) -> PromptSpec:
    """Canonical variant of ``spec``, used when a pair has no guidance pairs."""
    return replace(spec, format="canonical", guidance="", query=CANONICAL_QUERY)


def canonical_spec() -> PromptSpec:
    return PromptSpec()


def guided_spec(
    instruction: str = CANONICAL_INSTRUCTION,
    guidance: str = GUIDANCE_HEADERS[1],
    query: str = QUERIES[1],
    instruction_placement: str = "system",
) -> PromptSpec:
    return PromptSpec(
        instruction=instruction,
        instruction_placement=instruction_placement,
        guidance=guidance,
        query=query,
        format="list_guided",
    )


def qa_yes_spec() -> PromptSpec:
    return PromptSpec(format="qa_yes")


def qa_score_spec() -> PromptSpec:
    return PromptSpec(
        instruction=QA_SCORE_INSTRUCTION,
        guidance=QA_SCORE_HEADER,
        query=QA_SCORE_QUERY,
        format="qa_score",
    )


def enumerate_grid() -> list[PromptSpec]:
    """All 64 instruction x guidance x query combinations as list_guided specs."""
    return [
        PromptSpec(instruction=i, guidance=g, query=q, format="list_guided")
        for i in INSTRUCTIONS
        for g in GUIDANCE_HEADERS
        for q in QUERIES
    ]


# Per-dataset winning combinations from the grid search. The third dataset
# used different guidance headers depending on the downstream image model,
# so both variants are exposed rather than guessing a single default.
PRESETS: dict[str, PromptSpec] = {
    "mit-states": guided_spec(INSTRUCTIONS[1], GUIDANCE_HEADERS[0], QUERIES[1]),
    "ut-zappos": guided_spec(INSTRUCTIONS[0], GUIDANCE_HEADERS[2], QUERIES[0]),
    "cgqa-clip": guided_spec(INSTRUCTIONS[1], GUIDANCE_HEADERS[2], QUERIES[2]),
    "cgqa-tuned": guided_spec(INSTRUCTIONS[1], GUIDANCE_HEADERS[3], QUERIES[2]),
}


def select_guidance(space: PairSpace, query: Pair, n: int, mode: str, seed: int = 0) -> GuidanceSet:
    """Pick up to ``n`` in-context pairs for ``query``.

    ``related`` takes the first pairs of the related-seen ordering;
    ``random`` samples without replacement from the whole seen set using
    a seeded shuffle.
    """
    if n < 0:
        raise ValidationError("guidance count must be >= 0")
    if mode == "related":
        chosen = related_seen(space, query)[:n]
    elif mode == "random":
        pool = sorted(space.seen, key=space.index_of)
        if n > len(pool):
            raise ValidationError(f"requested {n} random pairs but only {len(pool)} seen pairs exist")
        rng = random.Random(seed)
        rng.shuffle(pool)
        chosen = pool[:n]
    else:
        raise ValidationError(f"unknown guidance mode {mode!r}")
    return GuidanceSet(pairs=tuple(chosen), selection_mode=mode, requested_count=n, seed=seed)


_SCORE_SUFFIX = re.compile(r", score: \d+$")


def extract_item_lines(human_message: str) -> list[str]:
    """Payload of each ``- `` item line, with any score suffix removed.

    Useful for round-tripping rendered guidance blocks in tests and
    debugging; splitting an item back into (state, object) is only
    unambiguous when the state is a single word.
    """
    items = []
    for line in human_message.split("\n"):
        if line.startswith("- "):
            items.append(_SCORE_SUFFIX.sub("", line[2:]))
    return items
