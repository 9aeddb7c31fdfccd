from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from flab_export.cli import main as export_cli
from flab_export.errors import ImageReadError, JobValidationError
from flab_export.export import ExportJob, export_scores

# The exporter's output contract is the evaluation pipeline's input
# contract, so round-trip validation goes through that loader.
from flab.feasibility_core import CandidateSet
from flab.labelspace import enumerate_all, load_pair_space
from flab.oweval import load_score_matrix, sweep_eval

STATES = ["hot", "wet", "dark"]
OBJECTS = ["fire", "dog", "street"]
SEEN = [("hot", "fire"), ("wet", "street"), ("dark", "street")]
UNSEEN = [("dark", "fire"), ("wet", "dog")]


def write_pairs_dir(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "states.txt").write_text("".join(f"{s}\n" for s in STATES), encoding="utf-8")
    (root / "objects.txt").write_text("".join(f"{o}\n" for o in OBJECTS), encoding="utf-8")
    (root / "seen.tsv").write_text("".join(f"{s}\t{o}\n" for s, o in SEEN), encoding="utf-8")
    (root / "unseen.tsv").write_text("".join(f"{s}\t{o}\n" for s, o in UNSEEN), encoding="utf-8")
    return root


def write_images(root: Path, labels: list[tuple[str, str]]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    lines = []
    for i, (state, obj) in enumerate(labels):
        pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        path = root / f"img{i}.png"
        Image.fromarray(pixels, "RGB").save(path)
        lines.append(f"img{i}\t{path.name}\t{state}\t{obj}\n")
    listing = root / "images.tsv"
    listing.write_text("".join(lines), encoding="utf-8")
    return listing


@pytest.fixture
def toy_job(tmp_path) -> ExportJob:
    pairs_dir = write_pairs_dir(tmp_path / "pairs")
    labels = SEEN[:2] + UNSEEN + [SEEN[2]]  # five images across both splits
    images_file = write_images(tmp_path / "imgs", labels)
    return ExportJob(
        images_file=images_file,
        pairs_dir=pairs_dir,
        template="a photo of {s} {o}",
        model="hash",
    )


def test_export_validates_under_primary_loader(toy_job, tmp_path):
    out = export_scores(toy_job, tmp_path / "matrix")
    space = load_pair_space(toy_job.pairs_dir)
    matrix = load_score_matrix(out, space)
    assert matrix.scores.shape == (5, 9)
    assert np.all(np.isfinite(matrix.scores))
    assert matrix.scores.min() >= -1.0 and matrix.scores.max() <= 1.0


def test_rerun_is_byte_identical(toy_job, tmp_path):
    first = export_scores(toy_job, tmp_path / "m1")
    second = export_scores(toy_job, tmp_path / "m2")
    for name in ("scores.bin", "meta.json", "pairs.tsv", "images.tsv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_sweep_eval_runs_on_export(toy_job, tmp_path):
    out = export_scores(toy_job, tmp_path / "matrix")
    space = load_pair_space(toy_job.pairs_dir)
    matrix = load_score_matrix(out, space)
    candidates = CandidateSet(pairs=frozenset(enumerate_all(space)), source_tau=-math.inf)
    result = sweep_eval(matrix, candidates, space)
    assert 0.0 <= result.S <= 1.0
    assert 0.0 <= result.U <= 1.0
    assert result.sweep


def test_two_image_export_has_exact_byte_size(tmp_path):
    pairs_dir = write_pairs_dir(tmp_path / "pairs")
    images_file = write_images(tmp_path / "imgs", [SEEN[0], UNSEEN[0]])
    job = ExportJob(images_file=images_file, pairs_dir=pairs_dir, template="{s} {o}")
    out = export_scores(job, tmp_path / "matrix")
    assert (out / "scores.bin").stat().st_size == 2 * 9 * 4


def test_row_swap_permutes_matrix_rows(toy_job, tmp_path):
    base = export_scores(toy_job, tmp_path / "base")
    original = np.frombuffer((base / "scores.bin").read_bytes(), dtype="<f4").reshape(5, 9)

    lines = Path(toy_job.images_file).read_text(encoding="utf-8").splitlines(keepends=True)
    lines[0], lines[3] = lines[3], lines[0]
    Path(toy_job.images_file).write_text("".join(lines), encoding="utf-8")
    swapped_dir = export_scores(toy_job, tmp_path / "swapped")
    swapped = np.frombuffer((swapped_dir / "scores.bin").read_bytes(), dtype="<f4").reshape(5, 9)

    expected = original.copy()
    expected[[0, 3]] = expected[[3, 0]]
    assert np.array_equal(swapped, expected)


def test_cli_export(toy_job, tmp_path):
    runner = CliRunner()
    out = tmp_path / "cli_out"
    result = runner.invoke(
        export_cli,
        [
            "--images", str(toy_job.images_file),
            "--pairs", str(toy_job.pairs_dir),
            "--template", "a photo of {s} {o}",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    space = load_pair_space(toy_job.pairs_dir)
    assert load_score_matrix(out, space).scores.shape == (5, 9)


def test_existing_output_dir_is_refused(toy_job, tmp_path):
    out = tmp_path / "matrix"
    export_scores(toy_job, out)
    with pytest.raises(JobValidationError):
        export_scores(toy_job, out)


def test_template_needs_both_placeholders(toy_job):
    with pytest.raises(JobValidationError):
        ExportJob(
            images_file=toy_job.images_file,
            pairs_dir=toy_job.pairs_dir,
            template="a photo of {s}",
        )


def test_missing_image_file_rejected(toy_job, tmp_path):
    listing = Path(toy_job.images_file)
    listing.write_text(
        listing.read_text(encoding="utf-8") + "ghost\tmissing.png\thot\tfire\n", encoding="utf-8"
    )
    with pytest.raises(JobValidationError):
        export_scores(toy_job, tmp_path / "never")


def test_unreadable_image_is_distinct_error(toy_job, tmp_path):
    first_image = Path(toy_job.images_file).parent / "img0.png"
    first_image.write_bytes(b"this is not a png")
    with pytest.raises(ImageReadError):
        export_scores(toy_job, tmp_path / "never")


def test_unknown_label_rejected(toy_job, tmp_path):
    listing = Path(toy_job.images_file)
    img = listing.parent / "img0.png"
    listing.write_text(f"img0\t{img.name}\tnostate\tfire\n", encoding="utf-8")
    with pytest.raises(JobValidationError):
        export_scores(toy_job, tmp_path / "never")


def test_unknown_model_rejected(toy_job, tmp_path):
    job = ExportJob(
        images_file=toy_job.images_file,
        pairs_dir=toy_job.pairs_dir,
        template="{s} {o}",
        model="nonsense",
    )
    with pytest.raises(JobValidationError):
        export_scores(job, tmp_path / "never")
