"""Compositional label space: state/object vocabularies and pair splits.

A label space lives on disk as plain text files: ``states.txt`` and
``objects.txt`` (one lowercase token per line, file order is canonical),
plus ``seen.tsv`` and ``unseen.tsv`` (``state<TAB>object`` per line) and
an optional ``val_unseen.tsv`` marking the validation split used for
threshold calibration.

Loading is strict: malformed input is rejected, never repaired. Silently
dropping or fixing lines would shift the dense pair indexing that every
downstream score matrix relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import (
    DuplicateEntryError,
    MalformedLineError,
    MissingFileError,
    SplitOverlapError,
    UnknownPrimitiveError,
)

STATES_FILE = "states.txt"
OBJECTS_FILE = "objects.txt"
SEEN_FILE = "seen.tsv"
UNSEEN_FILE = "unseen.tsv"
VAL_UNSEEN_FILE = "val_unseen.tsv"


class Pair(NamedTuple):
    """One compositional class: a state applied to an object."""

    state: str
    object: str

    def text(self) -> str:
        return f"{self.state} {self.object}"


@dataclass(frozen=True)
class PairSpace:
    """The universe of pairs plus its seen/unseen annotation.

    ``states`` and ``objects`` keep file order; that order defines the
    canonical enumeration of all pairs and therefore every dense index.
    Instances are immutable and safe to share across threads.
    """

    states: tuple[str, ...]
    objects: tuple[str, ...]
    seen: frozenset[Pair]
    unseen: frozenset[Pair]
    val_unseen: frozenset[Pair] | None = None

    @property
    def all_count(self) -> int:
        return len(self.states) * len(self.objects)

    @cached_property
    def _state_pos(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def _object_pos(self) -> dict[str, int]:
        return {o: i for i, o in enumerate(self.objects)}

    def index_of(self, pair: Pair) -> int:
        """Dense index of ``pair`` in canonical enumeration order."""
        try:
            return self._state_pos[pair.state] * len(self.objects) + self._object_pos[pair.object]
        except KeyError:
            raise UnknownPrimitiveError(f"unknown primitive in pair {pair.text()!r}") from None


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingFileError(f"required file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _check_token(token: str, path: Path, lineno: int) -> str:
    if not token:
        raise MalformedLineError(f"{path}:{lineno}: empty token")
    if "\t" in token or "\r" in token:
        raise MalformedLineError(f"{path}:{lineno}: token contains tab or carriage return")
    if token != token.lower():
        raise MalformedLineError(f"{path}:{lineno}: token must be lowercase: {token!r}")
    return token


def _load_tokens(path: Path) -> tuple[str, ...]:
    tokens: list[str] = []
    known: set[str] = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        token = _check_token(line, path, lineno)
        if token in known:
            raise DuplicateEntryError(f"{path}:{lineno}: duplicate token {token!r}")
        known.add(token)
        tokens.append(token)
    return tuple(tokens)


def _load_pairs(path: Path, states: set[str], objects: set[str]) -> tuple[Pair, ...]:
    pairs: list[Pair] = []
    known: set[Pair] = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLineError(f"{path}:{lineno}: expected 'state<TAB>object', got {line!r}")
        state = _check_token(fields[0], path, lineno)
        obj = _check_token(fields[1], path, lineno)
        if state not in states:
            raise UnknownPrimitiveError(f"{path}:{lineno}: unknown state {state!r}")
        if obj not in objects:
            raise UnknownPrimitiveError(f"{path}:{lineno}: unknown object {obj!r}")
        pair = Pair(state, obj)
        if pair in known:
            raise DuplicateEntryError(f"{path}:{lineno}: duplicate pair {pair.text()!r}")
        known.add(pair)
        pairs.append(pair)
    return tuple(pairs)


def load_pair_space(directory: str | Path) -> PairSpace:
    """Load and validate a label space directory.

    Raises a distinct validation error for each failure mode: missing
    file, malformed line, unknown primitive, duplicate entry, or overlap
    between the seen and unseen splits.
    """
    d = Path(directory)
    states = _load_tokens(d / STATES_FILE)
    objects = _load_tokens(d / OBJECTS_FILE)
    state_set, object_set = set(states), set(objects)
    seen = _load_pairs(d / SEEN_FILE, state_set, object_set)
    unseen = _load_pairs(d / UNSEEN_FILE, state_set, object_set)
    overlap = set(seen) & set(unseen)
    if overlap:
        sample = sorted(overlap)[0]
        raise SplitOverlapError(
            f"{len(overlap)} pair(s) appear in both seen and unseen splits, e.g. {sample.text()!r}"
        )
    val_path = d / VAL_UNSEEN_FILE
    val_unseen = frozenset(_load_pairs(val_path, state_set, object_set)) if val_path.is_file() else None
    return PairSpace(
        states=states,
        objects=objects,
        seen=frozenset(seen),
        unseen=frozenset(unseen),
        val_unseen=val_unseen,
    )


def enumerate_all(space: PairSpace) -> list[Pair]:
    """All pairs in canonical order: state-major over file order."""
    return [Pair(s, o) for s in space.states for o in space.objects]


def confusing_pairs(space: PairSpace) -> frozenset[Pair]:
    """Pairs that are neither seen nor unseen (presumed-infeasible distractors)."""
    universe = frozenset(Pair(s, o) for s in space.states for o in space.objects)
    return universe - space.seen - space.unseen


def related_seen(space: PairSpace, query: Pair) -> list[Pair]:
    """Seen pairs sharing the query's state or object, in canonical order.

    May be empty when neither of the query's primitives occurs in any
    seen pair.
    """
    space.index_of(query)  # validates both primitives
    hits = [p for p in space.seen if p.state == query.state or p.object == query.object]
    hits.sort(key=space.index_of)
    return hits


def write_pairs_tsv(pairs: Iterable[Pair], path: str | Path) -> None:
    """Write pairs in the ``state<TAB>object`` format used by the split files."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(f"{pair.state}\t{pair.object}\n")
