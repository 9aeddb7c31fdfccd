"""Score normalization, threshold calibration, and label-space filtering.

The threshold is searched over midpoints of consecutive distinct scores
(plus one accept-everything value below the minimum), which is exact
with respect to the finite score set: no grid resolution parameter, no
threshold between two candidates can produce a different candidate set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .labelspace import Pair, PairSpace, enumerate_all, write_pairs_tsv
from .llm_scoring import FeasibilityTable


@dataclass(frozen=True)
class CalibrationResult:
    """Chosen threshold plus the full accuracy curve it was selected from."""

    tau: float
    candidate_taus: tuple[float, ...]
    val_unseen_accuracy_at_tau: dict[float, float]
    method: str


@dataclass(frozen=True)
class CandidateSet:
    """Pairs kept after thresholding; always a superset of the seen pairs."""

    pairs: frozenset[Pair]
    source_tau: float
    always_contains_seen: bool = True


def normalize(table: FeasibilityTable) -> FeasibilityTable:
    """Min-max rescale of non-sentinel scores into [0, 1].

    Sentinel entries stay sentinel. When all finite scores are equal
    they map to 0.5 so a mid-range threshold neither accepts nor rejects
    everything silently.
    """
    if not table.entries:
        raise ValidationError("cannot normalize an empty table")
    finite = [v for v in table.entries.values() if not math.isinf(v)]
    lo = min(finite) if finite else 0.0
    hi = max(finite) if finite else 0.0

    def rescale(value: float) -> float:
        if math.isinf(value):
            return value
        if hi == lo:
            return 0.5
        return (value - lo) / (hi - lo)

    return FeasibilityTable(
        entries={p: rescale(v) for p, v in table.entries.items()},
        method=table.method,
        normalized=True,
        provenance=dict(table.provenance),
    )


def candidate_thresholds(table: FeasibilityTable) -> list[float]:
    """Midpoints between consecutive distinct finite scores, plus one
    value below the minimum (the accept-everything end)."""
    finite = sorted({v for v in table.entries.values() if not math.isinf(v)})
    if not finite:
        raise ValidationError("table holds only sentinel scores; nothing to threshold")
    taus = [finite[0] - 1.0]
    taus.extend((a + b) / 2.0 for a, b in zip(finite, finite[1:]))
    return taus


def filter_space(space: PairSpace, table: FeasibilityTable, tau: float) -> CandidateSet:
    """Pairs whose score passes the threshold, plus every seen pair."""
    if len(table.entries) != space.all_count:
        raise ValidationError(
            f"table covers {len(table.entries)} pairs but the space holds {space.all_count}"
        )
    keep = {p for p, v in table.entries.items() if v >= tau}
    return CandidateSet(pairs=frozenset(keep | set(space.seen)), source_tau=tau)


def select_threshold(table: FeasibilityTable, space: PairSpace, val_matrix) -> CalibrationResult:
    """Pick the threshold maximizing unseen validation accuracy.

    Every validation image is classified by raw argmax (no calibration
    bias) over the candidates surviving each threshold; ties in accuracy
    break toward the smallest threshold, keeping more pairs.
    """
    from .oweval import classify  # local import breaks the module cycle

    if not table.normalized:
        raise ValidationError("calibrate on a normalized table")
    if not val_matrix.images:
        raise ValidationError("no validation images")
    all_pairs = set(enumerate_all(space))
    for image_id, true_pair in val_matrix.images:
        if true_pair not in all_pairs:
            raise ValidationError(
                f"validation label {true_pair.text()!r} (image {image_id!r}) is outside the label space"
            )

    taus = candidate_thresholds(table)
    accuracy: dict[float, float] = {}
    best_tau = taus[0]
    best_acc = -1.0
    for tau in taus:
        candidates = filter_space(space, table, tau)
        predictions = classify(val_matrix, candidates, 0.0, space)
        correct = sum(
            1 for (image, pred) in zip(val_matrix.images, predictions) if pred == image[1]
        )
        acc = correct / len(val_matrix.images)
        accuracy[tau] = acc
        if acc > best_acc:
            best_acc = acc
            best_tau = tau
    return CalibrationResult(
        tau=best_tau,
        candidate_taus=tuple(taus),
        val_unseen_accuracy_at_tau=accuracy,
        method=table.method,
    )


def save_calibration(result: CalibrationResult, path: str | Path) -> None:
    """CSV of threshold vs validation accuracy with the chosen row flagged."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "val_unseen_accuracy", "chosen"])
        for tau in result.candidate_taus:
            writer.writerow(
                [repr(tau), repr(result.val_unseen_accuracy_at_tau[tau]), int(tau == result.tau)]
            )


def load_calibration_tau(path: str | Path) -> float:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tau", "val_unseen_accuracy", "chosen"]:
            raise ValidationError(f"unexpected calibration header in {path}: {header!r}")
        for row in reader:
            if len(row) == 3 and row[2] == "1":
                return float(row[0])
    raise ValidationError(f"no chosen threshold recorded in {path}")


def save_candidates(candidates: CandidateSet, space: PairSpace, path: str | Path) -> None:
    """Write the candidate pairs as TSV in canonical order."""
    ordered = [p for p in enumerate_all(space) if p in candidates.pairs]
    write_pairs_tsv(ordered, path)


def load_candidates(path: str | Path, space: PairSpace) -> CandidateSet:
    """Read a candidate TSV back, validating the seen-superset invariant."""
    pairs: set[Pair] = set()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"candidate file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'state<TAB>object'")
        pair = Pair(fields[0], fields[1])
        space.index_of(pair)  # validates primitives
        pairs.add(pair)
    missing_seen = set(space.seen) - pairs
    if missing_seen:
        sample = sorted(missing_seen)[0]
        raise ValidationError(
            f"candidate set drops {len(missing_seen)} seen pair(s), e.g. {sample.text()!r}"
        )
    return CandidateSet(pairs=frozenset(pairs), source_tau=math.nan)
