"""Word-embedding feasibility baselines.

A query pair is scored by how similar its state is to states that
co-occur with its object in the seen set, and vice versa for the object
side; the two sides are reduced (max by default) and averaged. Both the
GloVe-style and ConceptNet-style baselines share this code path and
differ only in the embedding text file supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedLineError, MissingFileError, OOVError, ValidationError
from .labelspace import Pair, PairSpace, enumerate_all
from .llm_scoring import FeasibilityTable, METHOD_CONCEPTNET, METHOD_GLOVE, SEEN_SENTINEL

OOV_POLICIES = ("zero_vector", "error")
SIDE_REDUCTIONS = ("max", "mean")


@dataclass
class EmbeddingSet:
    """Token embeddings plus the policy for out-of-vocabulary words.

    Multi-word tokens are looked up with spaces replaced by underscores
    first; when that key is absent the per-word vectors are averaged.
    """

    dimension: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zero_vector"
    _resolved: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValidationError("embedding dimension must be >= 1")
        if self.oov_policy not in OOV_POLICIES:
            raise ValidationError(f"unknown oov policy {self.oov_policy!r}")

    def _word_vector(self, word: str) -> np.ndarray:
        vec = self.vectors.get(word)
        if vec is not None:
            return vec
        if self.oov_policy == "error":
            raise OOVError(f"no embedding for word {word!r}")
        return np.zeros(self.dimension)

    def vector(self, token: str) -> np.ndarray:
        """Embedding of a primitive token, resolving multi-word tokens."""
        cached = self._resolved.get(token)
        if cached is not None:
            return cached
        joined = self.vectors.get(token.replace(" ", "_"))
        if joined is not None:
            vec = joined
        else:
            words = token.split(" ")
            vec = np.mean([self._word_vector(w) for w in words], axis=0)
        self._resolved[token] = vec
        return vec


def load_embeddings(path: str | Path, oov_policy: str = "zero_vector") -> EmbeddingSet:
    """Load a text embedding file: ``token v1 v2 ... vD`` per line."""
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"embedding file not found: {p}")
    vectors: dict[str, np.ndarray] = {}
    dimension: int | None = None
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise MalformedLineError(f"{p}:{lineno}: expected 'token v1 ... vD'")
            token = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedLineError(f"{p}:{lineno}: non-numeric vector component") from None
            if dimension is None:
                dimension = vec.shape[0]
            elif vec.shape[0] != dimension:
                raise MalformedLineError(
                    f"{p}:{lineno}: dimension {vec.shape[0]} differs from {dimension}"
                )
            vectors[token] = vec
    if dimension is None:
        raise MalformedLineError(f"{p}: embedding file is empty")
    return EmbeddingSet(dimension=dimension, vectors=vectors, oov_policy=oov_policy)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    if np.array_equal(u, v):
        return 1.0
    value = float(np.dot(u, v) / (norm_u * norm_v))
    return max(-1.0, min(1.0, value))


class _SimilarityMemo:
    """Caches primitive vectors and pairwise cosines for one table build."""

    def __init__(self, emb: EmbeddingSet):
        self.emb = emb
        self._cos: dict[tuple[str, str], float] = {}

    def cos(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        value = self._cos.get(key)
        if value is None:
            value = cosine(self.emb.vector(a), self.emb.vector(b))
            self._cos[key] = value
        return value


def _reduce(values: list[float], how: str) -> float:
    if not values:
        return 0.0
    if how == "max":
        return max(values)
    return math.fsum(values) / len(values)


class _Cooccurrence:
    """Seen-set co-occurrence lists, precomputed once per table build.

    Per-query scans over the whole seen set would make large spaces
    quadratic.
    """

    def __init__(self, space: PairSpace):
        self.states_by_object: dict[str, list[str]] = {}
        self.objects_by_state: dict[str, list[str]] = {}
        for p in sorted(space.seen, key=space.index_of):
            self.states_by_object.setdefault(p.object, []).append(p.state)
            self.objects_by_state.setdefault(p.state, []).append(p.object)


def _pair_score(
    memo: _SimilarityMemo, cooc: _Cooccurrence, query: Pair, side_reduce: str
) -> float:
    rho_obj = _reduce(
        [memo.cos(query.state, s) for s in cooc.states_by_object.get(query.object, [])], side_reduce
    )
    rho_state = _reduce(
        [memo.cos(query.object, o) for o in cooc.objects_by_state.get(query.state, [])], side_reduce
    )
    return (rho_obj + rho_state) / 2.0


def primitive_feasibility(
    space: PairSpace,
    emb: EmbeddingSet,
    query: Pair,
    side_reduce: str = "max",
) -> float:
    """Similarity of the query to seen co-occurrence patterns.

    The object side compares the query state against states seen with
    the query object; the state side compares the query object against
    objects seen with the query state. A side with no co-occurrences
    contributes 0, and the two sides are averaged.
    """
    if side_reduce not in SIDE_REDUCTIONS:
        raise ValidationError(f"unknown side reduction {side_reduce!r}")
    return _pair_score(_SimilarityMemo(emb), _Cooccurrence(space), query, side_reduce)


def baseline_table(
    space: PairSpace,
    emb: EmbeddingSet,
    method: str,
    side_reduce: str = "max",
) -> FeasibilityTable:
    """Score all pairs with the embedding baseline; seen pairs get the sentinel."""
    if method not in (METHOD_GLOVE, METHOD_CONCEPTNET):
        raise ValidationError(f"baseline method must be glove or conceptnet, got {method!r}")
    if side_reduce not in SIDE_REDUCTIONS:
        raise ValidationError(f"unknown side reduction {side_reduce!r}")
    memo = _SimilarityMemo(emb)
    cooc = _Cooccurrence(space)
    entries: dict[Pair, float] = {}
    provenance: dict[Pair, str] = {}
    for pair in enumerate_all(space):
        if pair in space.seen:
            entries[pair] = SEEN_SENTINEL
            provenance[pair] = "seen-exempt"
        else:
            entries[pair] = _pair_score(memo, cooc, pair, side_reduce)
    return FeasibilityTable(entries=entries, method=method, normalized=False, provenance=provenance)
