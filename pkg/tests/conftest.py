from __future__ import annotations

import random
import re
from pathlib import Path

import numpy as np
import pytest

from flab.labelspace import Pair, PairSpace, enumerate_all, load_pair_space
from flab.oweval import ScoreMatrix
from flab.prompts import PromptText

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "prompts"


def write_space_dir(
    directory: Path,
    states: list[str],
    objects: list[str],
    seen: list[tuple[str, str]],
    unseen: list[tuple[str, str]],
    val_unseen: list[tuple[str, str]] | None = None,
) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "states.txt").write_text("".join(f"{s}\n" for s in states), encoding="utf-8")
    (directory / "objects.txt").write_text("".join(f"{o}\n" for o in objects), encoding="utf-8")
    (directory / "seen.tsv").write_text("".join(f"{s}\t{o}\n" for s, o in seen), encoding="utf-8")
    (directory / "unseen.tsv").write_text("".join(f"{s}\t{o}\n" for s, o in unseen), encoding="utf-8")
    if val_unseen is not None:
        (directory / "val_unseen.tsv").write_text(
            "".join(f"{s}\t{o}\n" for s, o in val_unseen), encoding="utf-8"
        )
    return directory


def random_space(
    rng: random.Random,
    n_states: int,
    n_objects: int,
    n_seen: int,
    n_unseen: int,
    n_val: int = 0,
) -> PairSpace:
    """Build an in-memory toy space with disjoint random splits."""
    states = [f"s{i}" for i in range(n_states)]
    objects = [f"o{i}" for i in range(n_objects)]
    universe = [(s, o) for s in states for o in objects]
    assert n_seen + n_unseen + n_val <= len(universe)
    sample = rng.sample(universe, n_seen + n_unseen + n_val)
    seen = frozenset(Pair(*p) for p in sample[:n_seen])
    unseen = frozenset(Pair(*p) for p in sample[n_seen : n_seen + n_unseen])
    val = frozenset(Pair(*p) for p in sample[n_seen + n_unseen :]) if n_val else None
    return PairSpace(
        states=tuple(states), objects=tuple(objects), seen=seen, unseen=unseen, val_unseen=val
    )


def random_matrix(
    rng: random.Random,
    space: PairSpace,
    n_seen_images: int,
    n_unseen_images: int,
    granularity: float = 0.01,
) -> ScoreMatrix:
    """Random score matrix with labels drawn from both splits.

    Scores land on a coarse grid so decision margins are well separated,
    keeping dense-sweep oracles exact.
    """
    pair_index = enumerate_all(space)
    labels = [rng.choice(sorted(space.seen)) for _ in range(n_seen_images)]
    labels += [rng.choice(sorted(space.unseen)) for _ in range(n_unseen_images)]
    images = [(f"img{i}", label) for i, label in enumerate(labels)]
    steps = round(1.0 / granularity)
    scores = np.array(
        [[rng.randint(0, steps) * granularity for _ in pair_index] for _ in images],
        dtype=np.float32,
    )
    return ScoreMatrix(pair_index=pair_index, images=images, scores=scores)


def zappos_shaped_space() -> PairSpace:
    """16 states x 12 objects with 83 seen and 33 unseen pairs."""
    rng = random.Random(20240209)
    return random_space(rng, 16, 12, 83, 33)


def load_prompt_fixture(name: str) -> PromptText:
    text = (FIXTURES_DIR / name).read_text(encoding="utf-8")
    match = re.match(r"=== system ===\n(.*)\n=== human ===\n(.*)\n\Z", text, re.S)
    assert match, f"fixture {name} does not match the expected layout"
    return PromptText(system_message=match.group(1), human_message=match.group(2))


@pytest.fixture
def tiny_space_dir(tmp_path: Path) -> Path:
    """3x3 space: 3 seen, 2 unseen, 1 val pair; leaves 4 confusing pairs."""
    return write_space_dir(
        tmp_path / "tiny",
        states=["hot", "wet", "dark"],
        objects=["fire", "dog", "street"],
        seen=[("hot", "fire"), ("wet", "street"), ("dark", "street")],
        unseen=[("dark", "fire"), ("wet", "dog")],
        val_unseen=[("hot", "dog")],
    )


@pytest.fixture
def tiny_space(tiny_space_dir: Path) -> PairSpace:
    return load_pair_space(tiny_space_dir)
