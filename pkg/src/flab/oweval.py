"""Open-world evaluation: calibration-bias sweep, isolation metrics, reports.

The sweep subtracts a bias from seen-class scores before the argmax and
varies it to trade seen against unseen accuracy. Bias candidates are the
midpoints of per-image decision margins plus one sentinel beyond each
extreme, which makes the sweep exact over the finite data: predictions
are constant between consecutive margins, so no finer grid can reach a
point this sweep misses.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MissingFileError, ValidationError
from .feasibility_core import CandidateSet
from .labelspace import Pair, PairSpace, confusing_pairs, enumerate_all
from .llm_scoring import FeasibilityTable

META_FILE = "meta.json"
PAIRS_FILE = "pairs.tsv"
IMAGES_FILE = "images.tsv"
SCORES_FILE = "scores.bin"


@dataclass
class ScoreMatrix:
    """Per-image classifier scores over every pair in canonical order."""

    pair_index: list[Pair]
    images: list[tuple[str, Pair]]
    scores: np.ndarray  # (n_images, n_pairs)

    def __post_init__(self) -> None:
        n_images, n_pairs = len(self.images), len(self.pair_index)
        if self.scores.shape != (n_images, n_pairs):
            raise ValidationError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{n_images} images x {n_pairs} pairs"
            )
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("score matrix contains non-finite values")
        index = set(self.pair_index)
        for image_id, true_pair in self.images:
            if true_pair not in index:
                raise ValidationError(
                    f"image {image_id!r} has true pair {true_pair.text()!r} outside the pair index"
                )

    @cached_property
    def column_of(self) -> dict[Pair, int]:
        return {p: i for i, p in enumerate(self.pair_index)}


@dataclass(frozen=True)
class EvalResult:
    """Best seen/unseen accuracy, best harmonic mean, and curve area."""

    S: float
    U: float
    H: float
    AUC: float
    sweep: tuple[tuple[float, float, float], ...]  # (bias, seen_acc, unseen_acc)


@dataclass(frozen=True)
class IsolationReport:
    """How well thresholded scores recover the annotated feasible pairs."""

    feasible_acc: float
    infeasible_acc: float
    arith_mean: float
    harm_mean: float
    tau: float


@dataclass(frozen=True)
class ReportRow:
    pair: Pair
    margin: float  # score minus threshold
    feasible: bool


def harmonic_mean(a: float, b: float) -> float:
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def isolation_means(feasible_acc: float, infeasible_acc: float) -> tuple[float, float]:
    """Arithmetic and harmonic means of the two isolation accuracies."""
    return (feasible_acc + infeasible_acc) / 2.0, harmonic_mean(feasible_acc, infeasible_acc)


def save_score_matrix(matrix: ScoreMatrix, directory: str | Path) -> None:
    """Write the on-disk matrix format (row-major little-endian float32)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(matrix.scores, dtype="<f4").tobytes()
    checksum = hashlib.sha256(data).hexdigest()
    (d / SCORES_FILE).write_bytes(data)
    with open(d / PAIRS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for i, p in enumerate(matrix.pair_index):
            fh.write(f"{i}\t{p.state}\t{p.object}\n")
    with open(d / IMAGES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for image_id, p in matrix.images:
            fh.write(f"{image_id}\t{p.state}\t{p.object}\n")
    meta = {"n_images": len(matrix.images), "n_pairs": len(matrix.pair_index), "checksum": checksum}
    with open(d / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_score_matrix(directory: str | Path, space: PairSpace | None = None) -> ScoreMatrix:
    """Load and validate a matrix directory.

    With ``space`` given, the stored pair list must equal the canonical
    enumeration of that space.
    """
    d = Path(directory)
    meta_path = d / META_FILE
    if not meta_path.is_file():
        raise MissingFileError(f"required file not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{meta_path}: not valid JSON: {exc}") from None
    for key in ("n_images", "n_pairs", "checksum"):
        if key not in meta:
            raise ValidationError(f"{meta_path}: missing key {key!r}")
    try:
        n_images, n_pairs = int(meta["n_images"]), int(meta["n_pairs"])
    except (TypeError, ValueError):
        raise ValidationError(f"{meta_path}: n_images and n_pairs must be integers") from None

    pairs_path = d / PAIRS_FILE
    if not pairs_path.is_file():
        raise MissingFileError(f"required file not found: {pairs_path}")
    pair_index: list[Pair] = []
    for lineno, line in enumerate(pairs_path.read_text(encoding="utf-8").splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValidationError(f"{pairs_path}:{lineno}: expected 'index<TAB>state<TAB>object'")
        try:
            index = int(fields[0])
        except ValueError:
            raise ValidationError(f"{pairs_path}:{lineno}: non-integer index {fields[0]!r}") from None
        if index != lineno - 1:
            raise ValidationError(f"{pairs_path}:{lineno}: index column out of order")
        pair_index.append(Pair(fields[1], fields[2]))
    if len(pair_index) != n_pairs:
        raise ValidationError(f"{pairs_path}: {len(pair_index)} pairs but meta says {n_pairs}")
    if space is not None and pair_index != enumerate_all(space):
        raise ValidationError(f"{pairs_path}: pair order does not match the label space enumeration")

    images_path = d / IMAGES_FILE
    if not images_path.is_file():
        raise MissingFileError(f"required file not found: {images_path}")
    images: list[tuple[str, Pair]] = []
    for lineno, line in enumerate(images_path.read_text(encoding="utf-8").splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValidationError(f"{images_path}:{lineno}: expected 'image_id<TAB>state<TAB>object'")
        images.append((fields[0], Pair(fields[1], fields[2])))
    if len(images) != n_images:
        raise ValidationError(f"{images_path}: {len(images)} images but meta says {n_images}")

    scores_path = d / SCORES_FILE
    if not scores_path.is_file():
        raise MissingFileError(f"required file not found: {scores_path}")
    data = scores_path.read_bytes()
    if hashlib.sha256(data).hexdigest() != meta["checksum"]:
        raise ValidationError(f"{scores_path}: checksum mismatch")
    expected = n_images * n_pairs * 4
    if len(data) != expected:
        raise ValidationError(f"{scores_path}: {len(data)} bytes, expected {expected}")
    scores = np.frombuffer(data, dtype="<f4").reshape(n_images, n_pairs)
    return ScoreMatrix(pair_index=pair_index, images=images, scores=scores)


def _candidate_columns(matrix: ScoreMatrix, candidates: CandidateSet) -> np.ndarray:
    pairs = candidates.pairs
    if not pairs:
        raise ValidationError("empty candidate set")
    column_of = matrix.column_of
    missing = [p for p in pairs if p not in column_of]
    if missing:
        raise ValidationError(
            f"{len(missing)} candidate pair(s) missing from the score matrix, "
            f"e.g. {sorted(missing)[0].text()!r}"
        )
    return np.array(sorted(column_of[p] for p in pairs), dtype=np.int64)


def classify(
    matrix: ScoreMatrix, candidates: CandidateSet, bias: float, space: PairSpace
) -> list[Pair]:
    """Predict one pair per image: argmax of score minus bias on seen classes.

    Ties break toward the lowest pair index, deterministically.
    """
    cols = _candidate_columns(matrix, candidates)
    sub = matrix.scores[:, cols].astype(np.float64)
    seen_mask = np.array([matrix.pair_index[c] in space.seen for c in cols], dtype=np.float64)
    adjusted = sub - bias * seen_mask
    picks = np.argmax(adjusted, axis=1)  # first max wins: lowest pair index
    return [matrix.pair_index[cols[k]] for k in picks]


def _pareto_frontier(points: set[tuple[float, float]]) -> list[tuple[float, float]]:
    frontier = []
    for p in points:
        dominated = any(
            q != p and q[0] >= p[0] and q[1] >= p[1] for q in points
        )
        if not dominated:
            frontier.append(p)
    return frontier


def _frontier_auc(points: list[tuple[float, float]], best_s: float, best_u: float) -> float:
    """Trapezoidal area under the Pareto frontier, in percent.

    The sweep's own endpoints (0, U) and (S, 0) are re-added after
    pruning so the left edge of the staircase is integrated even when a
    single point dominates the whole curve.
    """
    pts = set(_pareto_frontier(set(points)))
    pts.add((0.0, best_u))
    pts.add((best_s, 0.0))
    curve = sorted(pts, key=lambda t: (t[0], -t[1]))
    area = 0.0
    for (s1, u1), (s2, u2) in zip(curve, curve[1:]):
        area += (s2 - s1) * (u1 + u2) / 2.0
    return 100.0 * area


def sweep_eval(matrix: ScoreMatrix, candidates: CandidateSet, space: PairSpace) -> EvalResult:
    """Full calibration-bias sweep over the candidate label space.

    Images whose true pair was filtered out stay in the evaluation and
    count as errors for their split.
    """
    seen_rows, unseen_rows = [], []
    for row, (image_id, true_pair) in enumerate(matrix.images):
        if true_pair in space.seen:
            seen_rows.append(row)
        elif true_pair in space.unseen:
            unseen_rows.append(row)
        else:
            raise ValidationError(
                f"image {image_id!r} is labeled {true_pair.text()!r}, "
                "which is in neither the seen nor the unseen split"
            )
    if not seen_rows or not unseen_rows:
        raise ValidationError("sweep needs at least one seen-labeled and one unseen-labeled image")

    cols = _candidate_columns(matrix, candidates)
    sub = matrix.scores[:, cols].astype(np.float64)
    seen_mask = np.array([matrix.pair_index[c] in space.seen for c in cols], dtype=bool)

    # Per-image decision margin: best seen-candidate score minus best
    # non-seen-candidate score. The prediction flips sides exactly when
    # the bias crosses this margin.
    if seen_mask.any() and (~seen_mask).any():
        best_seen = sub[:, seen_mask].max(axis=1)
        best_unseen = sub[:, ~seen_mask].max(axis=1)
        margins = np.unique(best_seen - best_unseen)
        biases = [float(margins[0]) - 1.0]
        biases.extend(float((a + b) / 2.0) for a, b in zip(margins, margins[1:]))
        biases.append(float(margins[-1]) + 1.0)
    else:
        biases = [0.0]  # one-sided candidate set: no trade-off to sweep

    truth_cols = np.array([matrix.column_of[p] for _, p in matrix.images], dtype=np.int64)
    seen_rows_arr = np.array(seen_rows, dtype=np.int64)
    unseen_rows_arr = np.array(unseen_rows, dtype=np.int64)

    sweep: list[tuple[float, float, float]] = []
    for bias in biases:
        adjusted = sub - bias * seen_mask.astype(np.float64)
        picks = cols[np.argmax(adjusted, axis=1)]
        correct = picks == truth_cols
        seen_acc = float(correct[seen_rows_arr].mean())
        unseen_acc = float(correct[unseen_rows_arr].mean())
        sweep.append((bias, seen_acc, unseen_acc))

    best_s = max(s for _, s, _ in sweep)
    best_u = max(u for _, _, u in sweep)
    best_h = max(harmonic_mean(s, u) for _, s, u in sweep)
    auc = _frontier_auc([(s, u) for _, s, u in sweep], best_s, best_u)
    return EvalResult(S=best_s, U=best_u, H=best_h, AUC=auc, sweep=tuple(sweep))


def isolation_metrics(table: FeasibilityTable, tau: float, space: PairSpace) -> IsolationReport:
    """Fraction of unseen pairs kept and confusing pairs dropped at ``tau``."""
    if not table.normalized:
        raise ValidationError("isolation metrics run on a normalized table")
    confusing = confusing_pairs(space)
    if not space.unseen:
        raise ValidationError("label space has no unseen pairs")
    if not confusing:
        raise ValidationError("label space has no confusing pairs")
    feasible_acc = sum(1 for y in space.unseen if table.entries[y] >= tau) / len(space.unseen)
    infeasible_acc = sum(1 for y in confusing if table.entries[y] < tau) / len(confusing)
    arith, harm = isolation_means(feasible_acc, infeasible_acc)
    return IsolationReport(
        feasible_acc=feasible_acc,
        infeasible_acc=infeasible_acc,
        arith_mean=arith,
        harm_mean=harm,
        tau=tau,
    )


def score_histograms(
    table: FeasibilityTable, space: PairSpace, bins: int
) -> list[tuple[float, float, int, int]]:
    """Bin normalized scores of unseen (feasible) and confusing pairs over [0, 1]."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    if not table.normalized:
        raise ValidationError("histograms run on a normalized table")
    edges = np.linspace(0.0, 1.0, bins + 1)
    feasible = np.array([table.entries[y] for y in sorted(space.unseen)])
    confusing = np.array([table.entries[y] for y in sorted(confusing_pairs(space))])
    feas_counts, _ = np.histogram(feasible, bins=edges)
    conf_counts, _ = np.histogram(confusing, bins=edges)
    return [
        (float(edges[i]), float(edges[i + 1]), int(feas_counts[i]), int(conf_counts[i]))
        for i in range(bins)
    ]


def export_distribution(
    table: FeasibilityTable, space: PairSpace, bins: int, path: str | Path
) -> list[tuple[float, float, int, int]]:
    rows = score_histograms(table, space, bins)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "feasible_count", "confusing_count"])
        for low, high, feas, conf in rows:
            writer.writerow([repr(low), repr(high), feas, conf])
    return rows


def qualitative_report(table: FeasibilityTable, tau: float, pairs: list[Pair]) -> list[ReportRow]:
    """Signed score-minus-threshold and verdict per pair, best first.

    A pair sitting exactly on the threshold is feasible: the filter is
    inclusive.
    """
    for pair in pairs:
        if pair not in table.entries:
            raise ValidationError(f"pair {pair.text()!r} is not in the table")
    rows = [
        ReportRow(pair=p, margin=table.entries[p] - tau, feasible=table.entries[p] >= tau)
        for p in pairs
    ]
    rows.sort(key=lambda r: r.margin, reverse=True)
    return rows


def write_eval_csv(result: EvalResult, summary_path: str | Path, sweep_path: str | Path) -> None:
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["S", "U", "H", "AUC"])
        writer.writerow([repr(result.S), repr(result.U), repr(result.H), repr(result.AUC)])
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bias", "seen_acc", "unseen_acc"])
        for bias, seen_acc, unseen_acc in result.sweep:
            writer.writerow([repr(bias), repr(seen_acc), repr(unseen_acc)])


def write_isolation_csv(report: IsolationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feasible_acc", "infeasible_acc", "arith_mean", "harm_mean", "tau"])
        writer.writerow(
            [
                repr(report.feasible_acc),
                repr(report.infeasible_acc),
                repr(report.arith_mean),
                repr(report.harm_mean),
                repr(report.tau),
            ]
        )


def write_qualitative_csv(rows: list[ReportRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "object", "score_minus_tau", "verdict"])
        for row in rows:
            writer.writerow(
                [row.pair.state, row.pair.object, repr(row.margin), "feasible" if row.feasible else "infeasible"]
            )
