"""Score-matrix export: cosine similarity of image and label embeddings.

Output follows the evaluation pipeline's score-matrix directory layout:
``pairs.tsv`` (dense index over state-major pair enumeration),
``images.tsv``, ``scores.bin`` (row-major little-endian float32), and
``meta.json`` carrying the matrix checksum. Writing is atomic: files
land in a temp directory that is renamed into place, so a crashed
export never leaves a half-written matrix behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedder import get_embedder
from .errors import JobValidationError


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: Path
    true_state: str
    true_object: str


@dataclass(frozen=True)
class ExportJob:
    images_file: Path
    pairs_dir: Path
    template: str
    model: str = "hash"
    batch_size: int = 32

    def __post_init__(self) -> None:
        if "{s}" not in self.template or "{o}" not in self.template:
            raise JobValidationError("template must contain both {s} and {o}")
        if self.batch_size < 1:
            raise JobValidationError("batch size must be >= 1")


def _read_tokens(path: Path) -> list[str]:
    if not path.is_file():
        raise JobValidationError(f"required file not found: {path}")
    tokens = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            raise JobValidationError(f"{path}:{lineno}: empty token")
        tokens.append(line)
    return tokens


def load_vocabulary(pairs_dir: Path) -> tuple[list[str], list[str]]:
    states = _read_tokens(pairs_dir / "states.txt")
    objects = _read_tokens(pairs_dir / "objects.txt")
    return states, objects


def read_image_list(path: Path, states: list[str], objects: list[str]) -> list[ImageRecord]:
    if not path.is_file():
        raise JobValidationError(f"image list not found: {path}")
    state_set, object_set = set(states), set(objects)
    records = []
    base = path.parent
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 4:
            raise JobValidationError(
                f"{path}:{lineno}: expected 'image_id<TAB>path<TAB>state<TAB>object'"
            )
        image_id, raw_path, state, obj = fields
        image_path = Path(raw_path)
        if not image_path.is_absolute():
            image_path = base / image_path
        if not image_path.is_file():
            raise JobValidationError(f"{path}:{lineno}: image file not found: {image_path}")
        if state not in state_set:
            raise JobValidationError(f"{path}:{lineno}: unknown state {state!r}")
        if obj not in object_set:
            raise JobValidationError(f"{path}:{lineno}: unknown object {obj!r}")
        records.append(ImageRecord(image_id, image_path, state, obj))
    if not records:
        raise JobValidationError(f"{path}: image list is empty")
    return records


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero vectors score 0 against everything
    return matrix / norms


def export_scores(job: ExportJob, out_dir: Path) -> Path:
    """Run the export and return the final output directory."""
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise JobValidationError(f"output directory already exists: {out_dir}")
    states, objects = load_vocabulary(Path(job.pairs_dir))
    records = read_image_list(Path(job.images_file), states, objects)
    pairs = [(s, o) for s in states for o in objects]
    labels = [job.template.replace("{s}", s).replace("{o}", o) for s, o in pairs]

    embedder = get_embedder(job.model)
    text_emb = _unit_rows(embedder.embed_texts(labels, job.batch_size).astype(np.float64))
    image_emb = _unit_rows(
        embedder.embed_images([r.path for r in records], job.batch_size).astype(np.float64)
    )
    scores = np.ascontiguousarray(image_emb @ text_emb.T, dtype="<f4")

    data = scores.tobytes()
    checksum = hashlib.sha256(data).hexdigest()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp_dir = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=out_dir.parent))
    try:
        (tmp_dir / "scores.bin").write_bytes(data)
        with open(tmp_dir / "pairs.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for i, (s, o) in enumerate(pairs):
                fh.write(f"{i}\t{s}\t{o}\n")
        with open(tmp_dir / "images.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(f"{record.image_id}\t{record.true_state}\t{record.true_object}\n")
        meta = {"n_images": len(records), "n_pairs": len(pairs), "checksum": checksum}
        with open(tmp_dir / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.rename(tmp_dir, out_dir)
    except BaseException:
        for leftover in tmp_dir.glob("*"):
            leftover.unlink()
        if tmp_dir.exists():
            tmp_dir.rmdir()
        raise
    return out_dir
