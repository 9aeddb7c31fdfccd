from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from flab.errors import EmptyGuidanceError, PromptFormatError, ValidationError
from flab.labelspace import Pair
from flab.prompts import (
    GUIDANCE_HEADERS,
    INSTRUCTIONS,
    PRESETS,
    QUERIES,
    GuidanceSet,
    PromptSpec,
    canonical_fallback,
    canonical_spec,
    compose_canonical,
    compose_guided,
    compose_qa,
    enumerate_grid,
    extract_item_lines,
    guided_spec,
    qa_score_spec,
    qa_yes_spec,
    select_guidance,
)

from .conftest import load_prompt_fixture, random_space


def guidance_of(*pairs: tuple[str, str], mode: str = "related") -> GuidanceSet:
    return GuidanceSet(
        pairs=tuple(Pair(*p) for p in pairs), selection_mode=mode, requested_count=len(pairs)
    )


class TestCanonical:
    def test_wet_fire(self):
        text = compose_canonical(canonical_spec(), "wet", "fire")
        assert text.human_message == "Does a wet fire exist in the real world?"

    def test_vowel_state_takes_an(self):
        text = compose_canonical(canonical_spec(), "old", "dog")
        assert text.human_message == "Does an old dog exist in the real world?"

    def test_golden_fixture_dark_fire(self):
        fixture = load_prompt_fixture("canonical_dark_fire.txt")
        assert compose_canonical(canonical_spec(), "dark", "fire") == fixture

    def test_rejects_query_without_placeholders(self):
        with pytest.raises(PromptFormatError):
            PromptSpec(query="Does it exist?")

    def test_rejects_non_canonical_spec(self):
        with pytest.raises(PromptFormatError):
            compose_canonical(guided_spec(), "wet", "fire")


class TestGuided:
    def test_golden_fixture(self):
        fixture = load_prompt_fixture("guided_dark_fire.txt")
        rendered = compose_guided(guided_spec(), "dark", "fire", guidance_of(("dark", "lightning")))
        assert rendered == fixture

    def test_single_item_can_be_the_query_itself(self):
        rendered = compose_guided(guided_spec(), "dark", "fire", guidance_of(("dark", "fire")))
        items = [l for l in rendered.human_message.split("\n") if l.startswith("- ")]
        assert items == ["- dark fire"]

    def test_line_count_with_twenty_items(self):
        rng = random.Random(0)
        space = random_space(rng, 6, 6, 30, 0)
        query = Pair(space.states[0], space.objects[0])
        guidance = select_guidance(space, query, 20, "random", seed=1)
        assert len(guidance.pairs) == 20
        rendered = compose_guided(guided_spec(), query.state, query.object, guidance)
        assert len(rendered.human_message.split("\n")) == 1 + 20 + 1
        hmsg_spec = guided_spec(instruction_placement="hmsg_begin")
        rendered = compose_guided(hmsg_spec, query.state, query.object, guidance)
        assert len(rendered.human_message.split("\n")) == 1 + 1 + 20 + 1

    def test_empty_guidance_raises(self):
        with pytest.raises(EmptyGuidanceError):
            compose_guided(guided_spec(), "dark", "fire", guidance_of())

    def test_canonical_fallback_keeps_instruction(self):
        fb = canonical_fallback(PRESETS["mit-states"])
        assert fb.format == "canonical"
        assert fb.instruction == PRESETS["mit-states"].instruction
        rendered = compose_canonical(fb, "dark", "fire")
        assert rendered.human_message == "Does a dark fire exist in the real world?"


class TestQA:
    def test_qa_yes_consonant_article(self):
        rendered = compose_qa(qa_yes_spec(), "wet", "fire", guidance_of(("red", "apple")))
        assert "Does a red apple exist in the real world? Yes." in rendered.human_message

    def test_qa_yes_golden_fixture(self):
        fixture = load_prompt_fixture("qa_yes_red_apple.txt")
        rendered = compose_qa(qa_yes_spec(), "red", "apple", guidance_of(("red", "tomato")))
        assert rendered == fixture

    def test_qa_score_items_end_with_score_nine(self):
        rendered = compose_qa(
            qa_score_spec(), "dark", "fire", guidance_of(("hot", "fire"), ("old", "dog"))
        )
        items = [l for l in rendered.human_message.split("\n") if l.startswith("- ")]
        assert len(items) == 2
        assert all(l.endswith("score: 9") for l in items)

    def test_qa_score_golden_fixture(self):
        fixture = load_prompt_fixture("qa_score_dark_fire.txt")
        rendered = compose_qa(
            qa_score_spec(),
            "dark",
            "fire",
            guidance_of(("hot", "fire"), ("old", "dog"), ("wet", "street")),
        )
        assert rendered == fixture

    def test_empty_guidance_raises(self):
        with pytest.raises(EmptyGuidanceError):
            compose_qa(qa_score_spec(), "dark", "fire", guidance_of())


class TestGrid:
    def test_sixty_four_distinct_specs(self):
        specs = enumerate_grid()
        assert len(specs) == 64
        triples = {(s.instruction, s.guidance, s.query) for s in specs}
        assert len(triples) == 64

    def test_grid_renders_distinct_prompts(self):
        # Instructions live in the system message, so distinctness holds
        # over the full rendered (system, human) pair.
        guidance = guidance_of(("dark", "lightning"), ("hot", "fire"))
        rendered = {
            (t.system_message, t.human_message)
            for t in (compose_guided(s, "dark", "fire", guidance) for s in enumerate_grid())
        }
        assert len(rendered) == 64

    def test_presets(self):
        assert (
            PRESETS["mit-states"].instruction
            == "Answer with a single word, yes or no, followed by an explanation."
        )
        assert PRESETS["mit-states"].guidance == "The following list consists of words that fit together."
        assert PRESETS["mit-states"].query == 'Does "{s} {o}" fit into the list above?'
        assert PRESETS["ut-zappos"].instruction == "Answer with a single word, yes or no."
        assert (
            PRESETS["ut-zappos"].query == 'Considering the list above, does "{s} {o}" fit into the list?'
        )
        assert (
            PRESETS["cgqa-clip"].guidance == "The given list consists of word combinations that make sense."
        )
        assert (
            PRESETS["cgqa-tuned"].guidance == "The given list comprises word combinations that make sense."
        )
        assert (
            PRESETS["cgqa-clip"].query
            == 'Does "{s} {o}" align with the contents of the list provided above?'
        )
        grid_triples = {(s.instruction, s.guidance, s.query) for s in enumerate_grid()}
        for preset in PRESETS.values():
            assert (preset.instruction, preset.guidance, preset.query) in grid_triples


class TestSelectGuidance:
    def test_related_caps_at_available(self):
        rng = random.Random(4)
        space = random_space(rng, 8, 8, 40, 0)
        query = Pair(space.states[0], space.objects[0])
        available = [
            p for p in space.seen if p.state == query.state or p.object == query.object
        ]
        got = select_guidance(space, query, 200, "related")
        assert len(got.pairs) == len(available)

    def test_same_seed_is_deterministic(self):
        space = random_space(random.Random(4), 6, 6, 20, 0)
        query = Pair(space.states[0], space.objects[0])
        a = select_guidance(space, query, 5, "random", seed=42)
        b = select_guidance(space, query, 5, "random", seed=42)
        assert a == b

    def test_random_matches_seeded_shuffle_oracle(self):
        space = random_space(random.Random(8), 4, 4, 12, 0)
        query = Pair(space.states[0], space.objects[0])
        got = select_guidance(space, query, 5, "random", seed=13)

        # Hand-rolled Fisher-Yates over the canonical seen ordering,
        # consuming randrange exactly as the stdlib shuffle does.
        pool = sorted(space.seen, key=space.index_of)
        rng = random.Random(13)
        for i in reversed(range(1, len(pool))):
            j = rng.randrange(i + 1)
            pool[i], pool[j] = pool[j], pool[i]
        assert list(got.pairs) == pool[:5]

    def test_random_overdraw_rejected(self):
        space = random_space(random.Random(8), 2, 2, 3, 0)
        with pytest.raises(ValidationError):
            select_guidance(space, Pair(space.states[0], space.objects[0]), 4, "random")


single_word = st.from_regex(r"[a-z]{1,8}", fullmatch=True)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(single_word, single_word), min_size=1, max_size=10, unique=True),
    single_word,
    single_word,
    st.sampled_from(range(64)),
)
def test_guided_roundtrip_recovers_items(items, qs, qo, spec_index):
    spec = enumerate_grid()[spec_index]
    guidance = GuidanceSet(
        pairs=tuple(Pair(s, o) for s, o in items),
        selection_mode="related",
        requested_count=len(items),
    )
    rendered = compose_guided(spec, qs, qo, guidance)
    recovered = [Pair(*t.split(" ", 1)) for t in extract_item_lines(rendered.human_message)]
    assert recovered == list(guidance.pairs)


def test_guided_roundtrip_many_random_cases():
    rng = random.Random(123)
    grid = enumerate_grid()
    for _ in range(500):
        n_states, n_objects = rng.randint(2, 6), rng.randint(2, 6)
        n_seen = rng.randint(1, min(10, n_states * n_objects))
        space = random_space(rng, n_states, n_objects, n_seen, 0)
        query = Pair(rng.choice(space.states), rng.choice(space.objects))
        count = rng.randint(1, min(8, len(space.seen)))
        guidance = select_guidance(space, query, count, "random", seed=rng.randrange(10**6))
        if not guidance.pairs:
            continue
        spec = rng.choice(grid)
        rendered = compose_guided(spec, query.state, query.object, guidance)
        recovered = [Pair(*t.split(" ", 1)) for t in extract_item_lines(rendered.human_message)]
        assert recovered == list(guidance.pairs)


@settings(max_examples=150, deadline=None)
@given(single_word, single_word, st.sampled_from(["canonical", "list_guided", "qa_yes", "qa_score"]))
def test_rendered_text_never_contains_article_placeholder(state, obj, fmt):
    if fmt == "canonical":
        rendered = compose_canonical(canonical_spec(), state, obj)
    else:
        guidance = guidance_of(("dark", "lightning"))
        spec = {"list_guided": guided_spec(), "qa_yes": qa_yes_spec(), "qa_score": qa_score_spec()}[fmt]
        rendered = compose_qa(spec, state, obj, guidance) if fmt.startswith("qa") else compose_guided(
            spec, state, obj, guidance
        )
    assert "a/an" not in rendered.system_message
    assert "a/an" not in rendered.human_message


def test_rendering_is_pure():
    guidance = guidance_of(("dark", "lightning"))
    first = compose_guided(guided_spec(), "dark", "fire", guidance)
    second = compose_guided(guided_spec(), "dark", "fire", guidance)
    assert first == second


def test_no_trailing_whitespace_on_any_line():
    guidance = guidance_of(("dark", "lightning"), ("hot", "fire"))
    for rendered in (
        compose_canonical(canonical_spec(), "dark", "fire"),
        compose_guided(guided_spec(), "dark", "fire", guidance),
        compose_qa(qa_yes_spec(), "dark", "fire", guidance),
        compose_qa(qa_score_spec(), "dark", "fire", guidance),
    ):
        for line in rendered.human_message.split("\n"):
            assert line == line.rstrip()
