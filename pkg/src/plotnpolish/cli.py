"""Command-line driver for planning, visualization, editing and serving.

Flag names mirror the edit-request wire fields. With --json, results go to
stdout and machine-readable errors to stderr as single JSON objects. Exit
codes: 0 success, 2 usage, 3 schema/input, 4 backend/LLM, 5 replay
divergence.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline, planner, report
from .backend import (
    BackendDescriptor,
    BackendUnavailable,
    UnsupportedByBackend,
    WeightsNotFound,
    resolve_backend,
)
from .grid import GridLayout
from .perception import EstimatorUnavailable, resolve_estimator
from .pipeline import EditRequest, PipelineConfig, ReplayDivergence, UnreadableImage
from .planner import (
    HttpChatClient,
    LLMUnavailable,
    PlanRejected,
    PlannerConfig,
    ScriptedChatClient,
)
from .schema import SchemaError, StoryIdea, ValidationError, parse_plan, serialize_plan

EXIT_SCHEMA = 3
EXIT_BACKEND = 4
EXIT_REPLAY = 5

_SCHEMA_ERRORS = (SchemaError, ValidationError, UnreadableImage)
_BACKEND_ERRORS = (
    BackendUnavailable,
    UnsupportedByBackend,
    WeightsNotFound,
    LLMUnavailable,
    PlanRejected,
    EstimatorUnavailable,
)


def emits_result(fn):
    """Print the command's result dict and map exceptions to exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        json_mode = ctx.obj.get("json", False)
        try:
            result = fn(*args, **kwargs)
        except _SCHEMA_ERRORS as exc:
            _fail(json_mode, EXIT_SCHEMA, exc)
        except _BACKEND_ERRORS as exc:
            _fail(json_mode, EXIT_BACKEND, exc)
        except ReplayDivergence as exc:
            _fail(json_mode, EXIT_REPLAY, exc)
        else:
            if json_mode:
                click.echo(json.dumps(result, indent=2, sort_keys=True))
            else:
                for key, value in result.items():
                    if key == "status":
                        continue
                    click.echo(f"{key}: {value}")
        return None

    return wrapper


def _fail(json_mode: bool, code: int, exc: Exception) -> None:
    if json_mode:
        payload = {
            "status": "error",
            "code": code,
            "error": type(exc).__name__,
            "message": str(exc),
        }
        click.echo(json.dumps(payload, sort_keys=True), err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _parse_grid(value: str) -> GridLayout:
    try:
        rows, cols = value.lower().split("x")
        return GridLayout(rows=int(rows), cols=int(cols))
    except (ValueError, TypeError):
        raise click.BadParameter(f"grid must look like 3x3, got {value!r}")


def _parse_pages(value: str | None) -> tuple[int, ...] | None:
    if value is None:
        return None
    try:
        return tuple(int(p) for p in value.split(","))
    except ValueError:
        raise click.BadParameter(f"frames must be comma-separated page numbers, got {value!r}")


def _config_from_flags(backend: str, checkpoint: str, grid: str, local_strength: float,
                       global_strength: float, t_steps: int) -> PipelineConfig:
    descriptor = BackendDescriptor(
        kind=backend,
        checkpoint_ref=checkpoint,
        supports_image_prompt=True,
        supports_personalization_weights=True,
    )
    return PipelineConfig(
        layout=_parse_grid(grid),
        local_strength=local_strength,
        global_strength=global_strength,
        t_steps=t_steps,
        backend=descriptor,
    )


def _load_project(project_dir: str) -> pipeline.Project:
    return pipeline.load_project(project_dir)


def _edit_result(project: pipeline.Project, command: str) -> dict:
    return {
        "status": "ok",
        "command": command,
        "project_id": project.project_id,
        "frames": project.frames.hashes(),
        "turns": len(project.turns),
    }


@click.group()
@click.option("--json", "json_mode", is_flag=True, help="machine-readable output")
@click.option("--verbose", is_flag=True, help="debug logging")
@click.pass_context
def main(ctx: click.Context, json_mode: bool, verbose: bool) -> None:
    """Story visualization and consistent multi-frame editing."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_mode
    ctx.obj["verbose"] = verbose
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command()
@click.option("--idea", required=True, help="the story idea text")
@click.option("--pages", type=int, required=True, help="number of story pages")
@click.option("--story-style", default="children's picture book style", show_default=True)
@click.option("--visual-style", default="watercolor painting style", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="plan.json", show_default=True)
@click.option("--stub-llm", type=click.Path(exists=True, dir_okay=False),
              help="file with a canned LLM reply instead of a live endpoint")
@click.option("--model", default="gpt-4", show_default=True)
@click.option("--base-url", default="https://api.openai.com/v1", show_default=True)
@click.pass_context
@emits_result
def plan(ctx, idea, pages, story_style, visual_style, out, stub_llm, model, base_url):
    """Generate a story plan from an idea via the LLM (or a canned reply)."""
    story_idea = StoryIdea(
        idea_text=idea, page_count=pages, story_style=story_style, visual_style=visual_style
    )
    config = PlannerConfig(
        model_identifier=model,
        base_url=base_url,
        verbose_log_dir=Path(out).parent if ctx.obj["verbose"] else None,
    )
    if stub_llm:
        canned = Path(stub_llm).read_text(encoding="utf-8")
        client = ScriptedChatClient([canned] * (config.max_retries + 1))
    else:
        client = HttpChatClient(base_url)
    story_plan, _ = planner.generate_plan(story_idea, config, client)
    Path(out).write_text(serialize_plan(story_plan), encoding="utf-8")
    return {
        "status": "ok",
        "command": "plan",
        "out": str(out),
        "characters": len(story_plan.characters),
        "pages": len(story_plan.pages),
    }


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path(file_okay=False))
@click.option("--plan", "plan_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", default="mock", show_default=True)
@click.option("--checkpoint", default="", help="checkpoint reference for real backends")
@click.option("--grid", default="3x3", show_default=True)
@click.option("--local-strength", type=float, default=0.4, show_default=True)
@click.option("--global-strength", type=float, default=1.0, show_default=True)
@click.option("--t-steps", type=int, default=50, show_default=True)
@emits_result
def visualize(project_dir, plan_file, seed, backend, checkpoint, grid,
              local_strength, global_strength, t_steps):
    """Create a project and sample its story template, one frame per page."""
    config = _config_from_flags(backend, checkpoint, grid, local_strength,
                                global_strength, t_steps)
    story_plan = parse_plan(Path(plan_file).read_text(encoding="utf-8"))
    project = pipeline.new_project(
        plan=story_plan, seed=seed, config=config, project_id=Path(project_dir).name
    )
    project = pipeline.visualize(project, resolve_backend(config.backend))
    pipeline.save_project(project, project_dir)
    return _edit_result(project, "visualize")


def _run_request(project_dir: str, request: EditRequest, seed: int | None,
                 command: str, reference=None) -> dict:
    project = _load_project(project_dir)
    backend = resolve_backend(project.config.backend)
    estimator = resolve_estimator(project.config.estimator)
    effective_seed = seed if seed is not None else project.seed
    if request.kind == "personalized":
        project = pipeline.personalize(
            project, request, effective_seed, reference=reference,
            backend=backend, estimator=estimator,
        )
    else:
        project = pipeline.execute_request(
            project, request, effective_seed, backend=backend, estimator=estimator
        )
    pipeline.save_project(project, project_dir)
    return _edit_result(project, command)


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--concept", default="", help="what to segment and edit")
@click.option("--prompt", default="", help="the edit prompt")
@click.option("--kind", type=click.Choice(["local", "consistency_pass"]), default="local",
              show_default=True)
@click.option("--mask-source", type=click.Choice(["segmentation", "attention", "user_supplied"]),
              default="segmentation", show_default=True)
@click.option("--strength", type=float, default=None, help="override depth strength")
@click.option("--frames", default=None, help="comma-separated 1-based page numbers")
@click.option("--mask-file", "mask_files", multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="user-supplied mask PNG per targeted frame")
@click.option("--seed", type=int, default=None)
@emits_result
def edit(project_dir, concept, prompt, kind, mask_source, strength, frames, mask_files, seed):
    """Apply a masked, blended edit of one concept across frames."""
    user_masks = None
    if mask_files:
        from .perception import load_mask

        project = _load_project(project_dir)
        user_masks = tuple(project.store.put(load_mask(f)) for f in mask_files)
        pipeline.save_project(project, project_dir)
    request = EditRequest(
        kind=kind,
        concept=concept,
        edit_prompt=prompt,
        mask_source=mask_source,
        strength_override=strength,
        pages=_parse_pages(frames),
        user_masks=user_masks,
    )
    request.validate()
    return _run_request(project_dir, request, seed, "edit")


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--prompt", required=True, help="the style prompt")
@click.option("--strength", type=float, default=None, help="override depth strength")
@click.option("--frames", default=None, help="comma-separated 1-based page numbers")
@click.option("--seed", type=int, default=None)
@emits_result
def style(project_dir, prompt, strength, frames, seed):
    """Apply a global style transformation; blending is omitted."""
    request = EditRequest(
        kind="global_style",
        edit_prompt=prompt,
        strength_override=strength,
        pages=_parse_pages(frames),
    )
    request.validate()
    return _run_request(project_dir, request, seed, "style")


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--concept", required=True)
@click.option("--prompt", required=True)
@click.option("--reference", required=True, type=click.Path(exists=True, dir_okay=False),
              help="reference image for the personalized subject")
@click.option("--strength", type=float, default=None)
@click.option("--frames", default=None)
@click.option("--seed", type=int, default=None)
@emits_result
def personalize(project_dir, concept, prompt, reference, strength, frames, seed):
    """Edit with an image-prompt reference so a custom subject appears."""
    request = EditRequest(
        kind="personalized",
        concept=concept,
        edit_prompt=prompt,
        strength_override=strength,
        pages=_parse_pages(frames),
        reference="pending",
    )
    return _run_request(project_dir, request, seed, "personalize", reference=reference)


@main.command("import")
@click.argument("images", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--project", "project_dir", required=True, type=click.Path(file_okay=False))
@click.option("--plan", "plan_file", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", default="mock", show_default=True)
@click.option("--checkpoint", default="")
@click.option("--grid", default="3x3", show_default=True)
@click.option("--local-strength", type=float, default=0.4, show_default=True)
@click.option("--global-strength", type=float, default=1.0, show_default=True)
@click.option("--t-steps", type=int, default=50, show_default=True)
@click.option("--resolution", type=int, default=512, show_default=True)
@emits_result
def import_cmd(images, project_dir, plan_file, seed, backend, checkpoint, grid,
               local_strength, global_strength, t_steps, resolution):
    """Import existing story images into a new editable project."""
    config = _config_from_flags(backend, checkpoint, grid, local_strength,
                                global_strength, t_steps)
    from dataclasses import replace as dc_replace

    config = dc_replace(config, working_resolution=resolution)
    story_plan = None
    if plan_file:
        story_plan = parse_plan(Path(plan_file).read_text(encoding="utf-8"))
    project = pipeline.import_frames(
        list(images), plan=story_plan, seed=seed, config=config,
        project_id=Path(project_dir).name,
    )
    pipeline.save_project(project, project_dir)
    return _edit_result(project, "import")


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True, file_okay=False))
@emits_result
def replay(project_dir):
    """Re-execute all recorded turns and verify bit-exact reproduction."""
    project = _load_project(project_dir)
    frames = pipeline.replay(
        project,
        resolve_backend(project.config.backend),
        resolve_estimator(project.config.estimator),
    )
    return {
        "status": "ok",
        "command": "replay",
        "project_id": project.project_id,
        "frames": frames.hashes(),
        "turns": len(project.turns),
    }


@main.command("report")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="report output directory (default: <project>/report)")
@emits_result
def report_cmd(project_dir, out_dir):
    """Render storyboard figures and CSV summaries for a project."""
    project = _load_project(project_dir)
    destination = Path(out_dir) if out_dir else Path(project_dir) / "report"
    artifacts = report.write_report(project, destination)
    return {"status": "ok", "command": "report", **artifacts}


@main.command()
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8023, show_default=True)
@click.option("--backend", default="mock", show_default=True)
@click.option("--checkpoint", default="")
@click.option("--workers", type=int, default=1, show_default=True)
def serve(data_dir, host, port, backend, checkpoint, workers):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    descriptor = BackendDescriptor(
        kind=backend,
        checkpoint_ref=checkpoint,
        supports_image_prompt=True,
        supports_personalization_weights=True,
    )
    config = PipelineConfig(backend=descriptor)
    llm_client = None
    import os

    if os.environ.get(planner.LLM_KEY_ENV):
        llm_client = HttpChatClient("https://api.openai.com/v1")
    app = create_app(
        data_dir, config=config, workers=workers, llm_client=llm_client
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
