"""Story-plan data model and its JSON interchange format.

The JSON layout mirrors what the story planner's language model emits:
a "Main Characters" array (Name / Description / Category) and a "Story"
array of pages (Page / Text / Image_Prompt / Location_Description).
Files written by this module additionally carry a schema version field;
files coming straight from an LLM are accepted without it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

SCHEMA_VERSION_FIELD = "plotnpolish_schema"
SCHEMA_VERSION = "1"

PROMPT_SEPARATOR = ", "

_CATEGORY_RE = re.compile(r"^[a-z][a-z' -]*$")


class SchemaError(ValueError):
    """Raised when plan JSON is missing or carries invalid fields."""


class DuplicatePageError(SchemaError):
    """Raised when two story pages share the same page index."""


class ValidationError(ValueError):
    """Raised when a value object violates its own invariants."""


@dataclass(frozen=True)
class StoryIdea:
    """User-supplied seed for a story: the idea, length and styles."""

    idea_text: str
    page_count: int
    story_style: str
    visual_style: str = ""

    def validate(self) -> None:
        if self.page_count < 1:
            raise ValidationError("page_count must be >= 1")
        if not self.idea_text.strip():
            raise ValidationError("idea_text must be non-empty")
        if not self.story_style.strip():
            raise ValidationError("story_style must be non-empty")
        # visual_style may be empty: it means "no plan-wide style suffix".


@dataclass(frozen=True)
class CharacterSpec:
    """A named story character plus the noun used to detect it in frames."""

    name: str
    description: str
    category: str
    extras: Mapping[str, Any] = field(default_factory=dict)

    def validate(self, strict: bool = False) -> None:
        if not self.name.strip():
            raise SchemaError("Name missing")
        if not self.category.strip():
            raise SchemaError(f"Category missing (character {self.name!r})")
        if strict and not _CATEGORY_RE.match(self.category):
            raise SchemaError(
                f"Category must be a lowercase noun phrase, got {self.category!r}"
            )


@dataclass(frozen=True)
class StoryPage:
    """One story page: plot text plus the three image-prompt components."""

    page: int
    plot_text: str
    context_prompt: str
    background_prompt: str = ""
    style_prompt: str = ""
    extras: Mapping[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.page < 1:
            raise SchemaError(f"Page index must be >= 1, got {self.page}")
        if not self.context_prompt.strip():
            raise SchemaError(f"Image_Prompt missing (page {self.page})")


@dataclass(frozen=True)
class StoryPlan:
    """A full story plan: optional idea, characters, and ordered pages.

    ``idea`` is None for plans parsed from raw LLM output, which carries
    no idea block; plans produced by the planner always have one.
    """

    characters: tuple[CharacterSpec, ...]
    pages: tuple[StoryPage, ...]
    idea: StoryIdea | None = None
    extras: Mapping[str, Any] = field(default_factory=dict)

    @property
    def page_count(self) -> int:
        return len(self.pages)

    def character(self, name: str) -> CharacterSpec:
        for spec in self.characters:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def validate(self, strict: bool = False) -> None:
        names = [c.name for c in self.characters]
        if len(set(names)) != len(names):
            raise SchemaError("character names must be unique")
        for spec in self.characters:
            spec.validate(strict=strict)
        indices = [p.page for p in self.pages]
        if len(set(indices)) != len(indices):
            raise DuplicatePageError(f"repeated page indices in {indices}")
        if indices != list(range(1, len(indices) + 1)):
            raise SchemaError(f"page indices must be contiguous 1..n, got {indices}")
        for page in self.pages:
            page.validate()
        if self.idea is not None:
            self.idea.validate()
            if self.idea.page_count != len(self.pages):
                raise SchemaError(
                    f"plan has {len(self.pages)} pages but idea declares "
                    f"{self.idea.page_count}"
                )


def compose_prompt(page: StoryPage) -> str:
    """Join the page's context, background and style prompts into one T2I prompt.

    Empty components are skipped, so the result never contains consecutive
    separators or a trailing one.
    """
    parts = [page.context_prompt, page.background_prompt, page.style_prompt]
    return PROMPT_SEPARATOR.join(p.strip() for p in parts if p.strip())


def _strip_trailing_commas(text: str) -> str:
    """Remove commas that directly precede a closing brace/bracket.

    Operates outside JSON string literals only, so string contents are
    never altered.
    """
    out: list[str] = []
    in_string = False
    escaped = False
    pending_comma = -1  # index in `out` of a comma that may be trailing
    for ch in text:
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
            pending_comma = -1
            out.append(ch)
        elif ch == ",":
            pending_comma = len(out)
            out.append(ch)
        elif ch in "}]":
            if pending_comma >= 0:
                out[pending_comma] = ""
            pending_comma = -1
            out.append(ch)
        else:
            if pending_comma >= 0 and not ch.isspace():
                pending_comma = -1
            out.append(ch)
    return "".join(out)


_CHARACTER_KEYS = ("Name", "Description", "Category")
_PAGE_KEYS = ("Page", "Text", "Image_Prompt", "Location_Description")
_IDEA_KEYS = ("Idea_Text", "Page_Count", "Story_Style", "Visual_Style")


def _extras(obj: Mapping[str, Any], known: tuple[str, ...]) -> dict[str, Any]:
    return {k: v for k, v in obj.items() if k not in known}


def _parse_character(obj: Any, position: int, strict: bool) -> CharacterSpec:
    if not isinstance(obj, dict):
        raise SchemaError(f"Main Characters entry {position} is not an object")
    for key in ("Name", "Category"):
        if key not in obj:
            raise SchemaError(f"{key} missing (character {position})")
    category = str(obj["Category"])
    if not strict:
        category = category.strip().lower()
    spec = CharacterSpec(
        name=str(obj["Name"]),
        description=str(obj.get("Description", "")),
        category=category,
        extras=_extras(obj, _CHARACTER_KEYS),
    )
    spec.validate(strict=strict)
    return spec


def _parse_page(obj: Any, position: int, style: str, strict: bool) -> StoryPage:
    if not isinstance(obj, dict):
        raise SchemaError(f"Story entry {position} is not an object")
    required = _PAGE_KEYS if strict else ("Page", "Image_Prompt")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{key} missing (story entry {position})")
    try:
        index = int(obj["Page"])
    except (TypeError, ValueError):
        raise SchemaError(f"Page is not an integer (story entry {position})") from None
    return StoryPage(
        page=index,
        plot_text=str(obj.get("Text", "")),
        context_prompt=str(obj["Image_Prompt"]),
        background_prompt=str(obj.get("Location_Description", "")),
        style_prompt=style,
        extras=_extras(obj, _PAGE_KEYS),
    )


def _parse_idea(obj: Any) -> StoryIdea:
    if not isinstance(obj, dict):
        raise SchemaError("Idea is not an object")
    for key in ("Idea_Text", "Page_Count", "Story_Style"):
        if key not in obj:
            raise SchemaError(f"{key} missing (Idea)")
    return StoryIdea(
        idea_text=str(obj["Idea_Text"]),
        page_count=int(obj["Page_Count"]),
        story_style=str(obj["Story_Style"]),
        visual_style=str(obj.get("Visual_Style", "")),
    )


def parse_plan(
    json_text: str,
    *,
    strict: bool = False,
    default_idea: StoryIdea | None = None,
) -> StoryPlan:
    """Parse plan JSON into a validated :class:`StoryPlan`.

    Lenient mode (the default) tolerates trailing commas, which LLM output
    routinely contains, and lowercases categories. Strict mode accepts only
    well-formed JSON and the full required key set; it is what serialized
    plans are held to.

    Pages inherit their style prompt from the idea's visual style (the JSON
    carries no per-page style field). ``default_idea`` supplies the idea for
    inputs without an "Idea" block; unknown fields survive a round trip.
    """
    if not strict:
        json_text = _strip_trailing_commas(json_text)
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("top-level value must be an object")

    if "Main Characters" not in data:
        raise SchemaError("Main Characters missing")
    if "Story" not in data:
        raise SchemaError("Story missing")

    idea = default_idea
    if "Idea" in data:
        idea = _parse_idea(data["Idea"])
    style = idea.visual_style if idea is not None else ""

    characters = tuple(
        _parse_character(obj, i, strict)
        for i, obj in enumerate(data["Main Characters"], start=1)
    )
    pages = tuple(
        _parse_page(obj, i, style, strict)
        for i, obj in enumerate(data["Story"], start=1)
    )
    pages = tuple(sorted(pages, key=lambda p: p.page))

    known_top = ("Main Characters", "Story", "Idea", SCHEMA_VERSION_FIELD)
    plan = StoryPlan(
        characters=characters,
        pages=pages,
        idea=idea,
        extras=_extras(data, known_top),
    )
    plan.validate(strict=strict)
    return plan


def serialize_plan(plan: StoryPlan) -> str:
    """Serialize a plan to JSON with the interchange field names.

    Key order is fixed (version, idea, characters, story; unknown fields
    after the known ones), so serialize-parse-serialize is byte stable.
    Per-page style prompts are not written: they are derived from the
    idea's visual style on parse.
    """
    plan.validate()
    data: dict[str, Any] = {SCHEMA_VERSION_FIELD: SCHEMA_VERSION}
    if plan.idea is not None:
        data["Idea"] = {
            "Idea_Text": plan.idea.idea_text,
            "Page_Count": plan.idea.page_count,
            "Story_Style": plan.idea.story_style,
            "Visual_Style": plan.idea.visual_style,
        }
    data["Main Characters"] = [
        {
            "Name": c.name,
            "Description": c.description,
            "Category": c.category,
            **dict(c.extras),
        }
        for c in plan.characters
    ]
    data["Story"] = [
        {
            "Page": p.page,
            "Text": p.plot_text,
            "Image_Prompt": p.context_prompt,
            "Location_Description": p.background_prompt,
            **dict(p.extras),
        }
        for p in plan.pages
    ]
    data.update(plan.extras)
    return json.dumps(data, indent=4, ensure_ascii=False) + "\n"


def with_idea(plan: StoryPlan, idea: StoryIdea) -> StoryPlan:
    """Attach an idea to a plan, refreshing page style prompts from it."""
    pages = tuple(replace(p, style_prompt=idea.visual_style) for p in plan.pages)
    return replace(plan, idea=idea, pages=pages)
