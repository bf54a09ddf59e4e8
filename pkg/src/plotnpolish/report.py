"""Project reports: storyboard figures rendered to files plus CSV summaries."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .pipeline import Project


def _caption(project: Project, index: int) -> str:
    if project.plan is not None and index < len(project.plan.pages):
        text = project.plan.pages[index].plot_text
        return text if len(text) <= 90 else text[:87] + "..."
    return f"frame {index + 1}"


def render_storyboard(project: Project, path: str | Path, columns: int = 3) -> Path:
    """Render the frame board with captions to an image file."""
    path = Path(path)
    n = max(1, len(project.frames))
    columns = min(columns, n)
    rows = math.ceil(n / columns)
    fig, axes = plt.subplots(rows, columns, figsize=(4 * columns, 4.6 * rows))
    axes = [axes] if n == 1 and rows * columns == 1 else list(axes.flat)
    for ax in axes:
        ax.axis("off")
    for frame, ax in zip(project.frames, axes):
        ax.imshow(frame.image)
        ax.set_title(f"page {frame.index + 1} ({frame.provenance})", fontsize=10)
        ax.text(
            0.5, -0.06, _caption(project, frame.index),
            transform=ax.transAxes, ha="center", va="top", fontsize=8, wrap=True,
        )
    fig.suptitle(f"project {project.project_id}", fontsize=12)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_turn_history(project: Project, path: str | Path) -> Path | None:
    """Render one row per edit turn: the before/after of its first changed frame."""
    path = Path(path)
    changed: list[tuple[int, str, str, str]] = []
    for turn_index, turn in enumerate(project.turns):
        for before, after in zip(turn.before_ids, turn.after_ids):
            if before != after:
                label = f"turn {turn_index + 1}: {turn.request.kind}"
                if turn.request.concept:
                    label += f" [{turn.request.concept}]"
                changed.append((turn_index, label, before, after))
                break
    if not changed:
        return None
    fig, axes = plt.subplots(len(changed), 2, figsize=(8, 4 * len(changed)), squeeze=False)
    for row, (turn_index, label, before, after) in enumerate(changed):
        for col, frame_hash, title in ((0, before, "before"), (1, after, "after")):
            ax = axes[row][col]
            ax.imshow(project.store.get(frame_hash))
            ax.set_title(f"{label} ({title})", fontsize=9)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_frames_csv(project: Project, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["index", "page", "hash", "provenance", "prompt"])
        for frame in project.frames:
            prompt = ""
            if project.plan is not None and frame.index < len(project.plan.pages):
                from .schema import compose_prompt

                prompt = compose_prompt(project.plan.pages[frame.index])
            writer.writerow(
                [frame.index, frame.index + 1, frame.hash, frame.provenance, prompt]
            )
    return path


def write_turns_csv(project: Project, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["index", "kind", "concept", "prompt", "seed", "strength", "timestamp", "warnings"]
        )
        for index, turn in enumerate(project.turns):
            writer.writerow(
                [
                    index,
                    turn.request.kind,
                    turn.request.concept,
                    turn.request.edit_prompt,
                    turn.seed,
                    turn.strength,
                    turn.timestamp,
                    "; ".join(turn.warnings),
                ]
            )
    return path


def write_report(project: Project, out_dir: str | Path) -> dict[str, str]:
    """Render all report artifacts into a directory; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    if len(project.frames):
        artifacts["storyboard"] = str(
            render_storyboard(project, out_dir / "storyboard.png")
        )
    history = render_turn_history(project, out_dir / "turn_history.png")
    if history is not None:
        artifacts["turn_history"] = str(history)
    artifacts["frames_csv"] = str(write_frames_csv(project, out_dir / "frames.csv"))
    artifacts["turns_csv"] = str(write_turns_csv(project, out_dir / "turns.csv"))
    return artifacts
