"""Story-plan generation and conversational refinement via an LLM.

The chat client is an interface: an HTTP client for real chat-completion
endpoints and a scripted client for offline tests. Malformed model output
is retried with a corrective message carrying the parse error; the
recorded conversation keeps only the initiating user message and the
final successful reply, so each call grows it by exactly two turns.
"""

from __future__ import annotations

import json
import logging
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .schema import (
    SchemaError,
    StoryIdea,
    StoryPlan,
    ValidationError,
    parse_plan,
)

logger = logging.getLogger(__name__)

LLM_KEY_ENV = "PLOTNPOLISH_LLM_KEY"


class LLMUnavailable(RuntimeError):
    """Raised when the language-model service cannot be reached or used."""


class PlanRejected(RuntimeError):
    """Raised when the model never produced a parseable plan."""

    def __init__(self, message: str, last_raw: str):
        super().__init__(message)
        self.last_raw = last_raw


def default_system_prompt_template() -> str:
    return (
        resources.files("plotnpolish")
        .joinpath("assets/story_system_prompt_v1.txt")
        .read_text(encoding="utf-8")
    )


@dataclass(frozen=True)
class Turn:
    role: str  # "user" | "assistant"
    content: str
    plan: StoryPlan | None = None
    parse_error: str | None = None


@dataclass(frozen=True)
class Conversation:
    """Alternating user/assistant turns with per-reply plan snapshots."""

    turns: tuple[Turn, ...] = ()

    def __post_init__(self) -> None:
        for i, turn in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if turn.role != expected:
                raise ValueError(
                    f"turn {i} has role {turn.role!r}, expected {expected!r}"
                )

    @property
    def latest_plan(self) -> StoryPlan | None:
        for turn in reversed(self.turns):
            if turn.plan is not None:
                return turn.plan
        return None

    def user_turn_count(self) -> int:
        return sum(1 for t in self.turns if t.role == "user")


@dataclass(frozen=True)
class PlannerConfig:
    model_identifier: str = "gpt-4"
    system_prompt_template: str = field(default_factory=default_system_prompt_template)
    max_retries: int = 2
    temperature: float = 0.7
    base_url: str = "https://api.openai.com/v1"
    verbose_log_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")


class ChatClient(ABC):
    """Minimal chat-completion interface."""

    @abstractmethod
    def complete(
        self, messages: Sequence[dict[str, str]], *, model: str, temperature: float
    ) -> str:
        """Return the assistant reply for a message history."""


class ScriptedChatClient(ChatClient):
    """Deterministic stand-in that replays canned replies in order."""

    def __init__(self, replies: Sequence[str]):
        self._replies = list(replies)
        self.calls: list[list[dict[str, str]]] = []

    def complete(self, messages, *, model, temperature):
        self.calls.append([dict(m) for m in messages])
        if not self._replies:
            raise LLMUnavailable("scripted client ran out of replies")
        return self._replies.pop(0)


class HttpChatClient(ChatClient):
    """Chat-completion client for OpenAI-style HTTP endpoints.

    Credentials come from the PLOTNPOLISH_LLM_KEY environment variable.
    """

    def __init__(self, base_url: str, api_key: str | None = None, transport=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_KEY_ENV)
        self._client = httpx.Client(transport=transport, timeout=120.0)

    def complete(self, messages, *, model, temperature):
        import httpx

        if not self.api_key:
            raise LLMUnavailable(f"no API key: set {LLM_KEY_ENV}")
        try:
            response = self._client.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {self.api_key}"},
                json={
                    "model": model,
                    "temperature": temperature,
                    "messages": list(messages),
                },
            )
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise LLMUnavailable(f"chat completion failed: {exc}") from exc
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise LLMUnavailable(f"malformed chat completion response: {exc}") from exc


def _log_exchange(config: PlannerConfig, messages, raw: str) -> None:
    if config.verbose_log_dir is None:
        return
    directory = Path(config.verbose_log_dir)
    directory.mkdir(parents=True, exist_ok=True)
    stamp = f"{time.time():.6f}".replace(".", "_")
    payload = {"request": list(messages), "response": raw}
    (directory / f"llm_{stamp}.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8"
    )


def _render_system_prompt(idea: StoryIdea, config: PlannerConfig) -> str:
    return config.system_prompt_template.format(
        page_count=idea.page_count,
        story_style=idea.story_style,
        visual_style=idea.visual_style or "none given",
    )


def _request_plan(
    messages: list[dict[str, str]],
    idea: StoryIdea,
    config: PlannerConfig,
    client: ChatClient,
) -> tuple[StoryPlan, str]:
    """Ask for a plan, re-asking with the parse error on malformed output."""
    last_raw = ""
    attempts = config.max_retries + 1
    for attempt in range(attempts):
        raw = client.complete(
            messages, model=config.model_identifier, temperature=config.temperature
        )
        _log_exchange(config, messages, raw)
        last_raw = raw
        try:
            plan = parse_plan(raw, default_idea=idea)
            return plan, raw
        except SchemaError as error:
            logger.warning("plan parse failed (attempt %d/%d): %s", attempt + 1, attempts, error)
            messages = messages + [
                {"role": "assistant", "content": raw},
                {
                    "role": "user",
                    "content": (
                        f"That output was invalid: {error}. "
                        "Reply with ONLY the corrected JSON object."
                    ),
                },
            ]
    raise PlanRejected(
        f"model produced no valid plan in {attempts} attempts", last_raw=last_raw
    )


def generate_plan(
    idea: StoryIdea, config: PlannerConfig, client: ChatClient | None = None
) -> tuple[StoryPlan, Conversation]:
    """Generate a story plan from an idea.

    Returns the parsed plan and a two-turn conversation (the request and
    the model's successful reply) ready for refinement.
    """
    idea.validate()
    if client is None:
        client = HttpChatClient(config.base_url)
    initial = (
        f"Create a story plan for this idea: {idea.idea_text}. "
        f"Use exactly {idea.page_count} pages."
    )
    messages = [
        {"role": "system", "content": _render_system_prompt(idea, config)},
        {"role": "user", "content": initial},
    ]
    plan, raw = _request_plan(messages, idea, config, client)
    conversation = Conversation(
        turns=(Turn("user", initial), Turn("assistant", raw, plan=plan))
    )
    return plan, conversation


def refine_plan(
    conversation: Conversation,
    feedback: str,
    config: PlannerConfig,
    client: ChatClient | None = None,
) -> tuple[StoryPlan, Conversation]:
    """Apply user feedback to the latest plan; the full history is resent."""
    if not feedback.strip():
        raise ValidationError("feedback must be non-empty")
    current = conversation.latest_plan
    if current is None or current.idea is None:
        raise ValueError("conversation has no plan to refine")
    if client is None:
        client = HttpChatClient(config.base_url)
    messages = [
        {"role": "system", "content": _render_system_prompt(current.idea, config)}
    ]
    messages += [{"role": t.role, "content": t.content} for t in conversation.turns]
    messages.append({"role": "user", "content": feedback})
    plan, raw = _request_plan(messages, current.idea, config, client)
    updated = Conversation(
        turns=conversation.turns
        + (Turn("user", feedback), Turn("assistant", raw, plan=plan))
    )
    return plan, updated
