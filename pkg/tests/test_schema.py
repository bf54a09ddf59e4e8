from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from plotnpolish.schema import (
    CharacterSpec,
    DuplicatePageError,
    SchemaError,
    StoryIdea,
    StoryPage,
    StoryPlan,
    compose_prompt,
    parse_plan,
    serialize_plan,
    with_idea,
)

WATERCOLOR = StoryIdea(
    idea_text="A scientist woman creates a weather-changing machine",
    page_count=6,
    story_style="children's picture book style",
    visual_style="watercolor painting style",
)


class TestComposePrompt:
    def test_full_page_composition(self, sample_story_text):
        plan = parse_plan(sample_story_text, default_idea=WATERCOLOR)
        expected = (
            "Dr. Mira standing in her lab beside a large, intricate "
            "weather-changing machine with blinking lights and rotating gears, "
            "A cluttered laboratory filled with various scientific instruments "
            "and a large window overlooking the park, "
            "watercolor painting style"
        )
        assert compose_prompt(plan.pages[0]) == expected

    def test_empty_background_and_style_is_identity(self):
        page = StoryPage(page=1, plot_text="t", context_prompt="a boy on a hill")
        assert compose_prompt(page) == "a boy on a hill"

    def test_composition_is_deterministic(self, sample_story_text):
        plan = parse_plan(sample_story_text, default_idea=WATERCOLOR)
        for page in plan.pages:
            # independent oracle: plain string concatenation of the parts
            parts = [page.context_prompt, page.background_prompt, page.style_prompt]
            expected = ", ".join(p for p in parts if p)
            assert compose_prompt(page) == expected
            assert compose_prompt(page) == compose_prompt(page)

    @given(
        context=st.text(min_size=1).filter(lambda s: s.strip()),
        background=st.text(),
        style=st.text(),
    )
    def test_no_double_separator_and_context_substring(self, context, background, style):
        page = StoryPage(
            page=1,
            plot_text="",
            context_prompt=context,
            background_prompt=background,
            style_prompt=style,
        )
        composed = compose_prompt(page)
        assert ", , " not in composed
        assert not composed.endswith(", ")
        assert context.strip() in composed


class TestParsePlan:
    def test_sample_story_shape(self, sample_story_text):
        plan = parse_plan(sample_story_text)
        assert len(plan.characters) == 2
        assert len(plan.pages) == 6
        assert plan.characters[0].name == "Dr. Mira"
        assert plan.characters[0].category == "woman"
        assert plan.characters[1].category == "sparrow"
        assert [p.page for p in plan.pages] == [1, 2, 3, 4, 5, 6]

    def test_empty_object_rejected(self):
        with pytest.raises(SchemaError, match="Main Characters missing"):
            parse_plan("{}")

    def test_round_trip_is_structurally_equal(self, sample_story_text):
        plan = parse_plan(sample_story_text)
        again = parse_plan(serialize_plan(plan))
        assert again == plan

    def test_strict_mode_rejects_trailing_commas(self, sample_story_text):
        with pytest.raises(SchemaError, match="invalid JSON"):
            parse_plan(sample_story_text, strict=True)

    def test_strict_mode_rejects_missing_image_prompt(self, sample_story_text):
        data = json.loads(serialize_plan(parse_plan(sample_story_text)))
        del data["Story"][2]["Image_Prompt"]
        with pytest.raises(SchemaError, match="Image_Prompt"):
            parse_plan(json.dumps(data), strict=True)

    def test_duplicate_page_indices_rejected(self, sample_story_text):
        text = sample_story_text.replace('"Page": 2', '"Page": 1')
        with pytest.raises(DuplicatePageError):
            parse_plan(text)

    def test_non_contiguous_pages_rejected(self, sample_story_text):
        text = sample_story_text.replace('"Page": 6', '"Page": 8')
        with pytest.raises(SchemaError, match="contiguous"):
            parse_plan(text)

    def test_unknown_fields_preserved(self, sample_story_text):
        data = json.loads(serialize_plan(parse_plan(sample_story_text)))
        data["Story"][0]["Mood"] = "hopeful"
        data["Narrator"] = "third person"
        plan = parse_plan(json.dumps(data))
        assert plan.pages[0].extras["Mood"] == "hopeful"
        assert plan.extras["Narrator"] == "third person"
        round_tripped = json.loads(serialize_plan(plan))
        assert round_tripped["Story"][0]["Mood"] == "hopeful"
        assert round_tripped["Narrator"] == "third person"

    def test_default_idea_fills_page_styles(self, sample_story_text):
        plan = parse_plan(sample_story_text, default_idea=WATERCOLOR)
        assert all(p.style_prompt == "watercolor painting style" for p in plan.pages)
        bare = parse_plan(sample_story_text)
        assert all(p.style_prompt == "" for p in bare.pages)


class TestSerializePlan:
    def test_field_names_match_interchange_format(self, sample_story_text):
        plan = parse_plan(sample_story_text)
        data = json.loads(serialize_plan(plan))
        assert set(data) == {"plotnpolish_schema", "Main Characters", "Story"}
        assert data["plotnpolish_schema"] == "1"
        for char in data["Main Characters"]:
            assert list(char) == ["Name", "Description", "Category"]
        for page in data["Story"]:
            assert list(page) == ["Page", "Text", "Image_Prompt", "Location_Description"]

    def test_single_page_plan(self):
        plan = StoryPlan(
            characters=(CharacterSpec("Pip", "a small bird", "bird"),),
            pages=(StoryPage(page=1, plot_text="Pip wakes.", context_prompt="Pip in a nest"),),
        )
        data = json.loads(serialize_plan(plan))
        assert len(data["Story"]) == 1

    def test_serialization_fixed_point(self, sample_story_text):
        first = serialize_plan(parse_plan(sample_story_text))
        second = serialize_plan(parse_plan(first))
        assert first == second

    def test_idea_block_round_trips(self, sample_story_text):
        plan = with_idea(parse_plan(sample_story_text), WATERCOLOR)
        text = serialize_plan(plan)
        again = parse_plan(text, strict=True)
        assert again.idea == WATERCOLOR
        assert serialize_plan(again) == text


# --- property: parse . serialize is identity over generated plans ----------

_name = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll")), min_size=1, max_size=12
)
_noun = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=10)
_prose = st.text(min_size=1, max_size=60).filter(lambda s: s.strip())


@st.composite
def plans(draw):
    n_chars = draw(st.integers(1, 4))
    names = draw(
        st.lists(_name, min_size=n_chars, max_size=n_chars, unique=True)
    )
    characters = tuple(
        CharacterSpec(name=nm, description=draw(_prose), category=draw(_noun))
        for nm in names
    )
    n_pages = draw(st.integers(1, 8))
    pages = tuple(
        StoryPage(
            page=i,
            plot_text=draw(_prose),
            context_prompt=draw(_prose),
            background_prompt=draw(st.one_of(st.just(""), _prose)),
        )
        for i in range(1, n_pages + 1)
    )
    return StoryPlan(characters=characters, pages=pages)


@given(plans())
def test_parse_serialize_identity(plan):
    assert parse_plan(serialize_plan(plan)) == plan
