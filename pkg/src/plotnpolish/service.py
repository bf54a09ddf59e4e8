"""HTTP API over projects, planning, visualization and multi-turn editing.

Handlers are a thin veneer: each 2xx response corresponds to exactly one
pipeline or planner operation. Denoising runs as asynchronous jobs polled
via GET /jobs/{id}; each project takes one mutating operation at a time,
enforced with a per-project lock (violations get 409). Job records are
persisted, so a restart mid-job marks it failed instead of losing it.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import pipeline, planner
from .backend import Backend, BackendUnavailable, WeightsNotFound, resolve_backend
from .perception import Estimator, resolve_estimator
from .pipeline import EditRequest, PipelineConfig, Project, UnreadableImage
from .planner import ChatClient, Conversation, LLMUnavailable, PlannerConfig, Turn
from .schema import (
    SchemaError,
    StoryIdea,
    ValidationError,
    parse_plan,
    serialize_plan,
)
from .storage import atomic_write_json

logger = logging.getLogger(__name__)

JOB_STATES = ("queued", "running", "done", "failed")


@dataclass
class Job:
    job_id: str
    project_id: str
    kind: str
    state: str = "queued"
    done_steps: int = 0
    total_steps: int = 0
    error: str | None = None
    result: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "project_id": self.project_id,
            "kind": self.kind,
            "state": self.state,
            "progress": {"done": self.done_steps, "total": self.total_steps},
            "error": self.error,
            "result": self.result,
        }


class CreateProjectBody(BaseModel):
    plan: dict | None = None
    idea: dict | None = None
    seed: int = 0
    config: dict | None = None


class RefineBody(BaseModel):
    feedback: str


class VisualizeBody(BaseModel):
    seed: int | None = None


class EditBody(BaseModel):
    request: dict
    seed: int | None = None


class MaskPreviewBody(BaseModel):
    concept: str
    mask_source: str = "segmentation"


class ApiError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


@dataclass
class ServiceState:
    data_dir: Path
    backend: Backend
    estimator: Estimator
    llm_client: ChatClient | None
    planner_config: PlannerConfig
    default_config: PipelineConfig
    workers: int = 1
    projects: dict[str, Project] = field(default_factory=dict)
    conversations: dict[str, Conversation] = field(default_factory=dict)
    locks: dict[str, threading.Lock] = field(default_factory=dict)
    jobs: dict[str, Job] = field(default_factory=dict)
    executor: ThreadPoolExecutor | None = None

    def __post_init__(self) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.executor = ThreadPoolExecutor(max_workers=self.workers)
        self._load_jobs()
        self._load_projects()

    # -- persistence ----------------------------------------------------

    @property
    def jobs_path(self) -> Path:
        return self.data_dir / "jobs.json"

    def persist_jobs(self) -> None:
        atomic_write_json(self.jobs_path, [job.to_dict() for job in self.jobs.values()])

    def _load_jobs(self) -> None:
        if not self.jobs_path.is_file():
            return
        for record in json.loads(self.jobs_path.read_text(encoding="utf-8")):
            job = Job(
                job_id=record["job_id"],
                project_id=record["project_id"],
                kind=record["kind"],
                state=record["state"],
                done_steps=record.get("progress", {}).get("done", 0),
                total_steps=record.get("progress", {}).get("total", 0),
                error=record.get("error"),
                result=record.get("result"),
            )
            # a restart mid-job can never silently lose work
            if job.state in ("queued", "running"):
                job.state = "failed"
                job.error = "interrupted by service restart"
            self.jobs[job.job_id] = job
        self.persist_jobs()

    def _load_projects(self) -> None:
        projects_dir = self.data_dir / "projects"
        if not projects_dir.is_dir():
            return
        for path in sorted(projects_dir.iterdir()):
            if (path / "project.json").is_file():
                project = pipeline.load_project(path)
                self.projects[project.project_id] = project

    def project_dir(self, project_id: str) -> Path:
        return self.data_dir / "projects" / project_id

    def save(self, project: Project) -> None:
        pipeline.save_project(project, self.project_dir(project.project_id))
        self.projects[project.project_id] = project

    # -- lookup and locking ----------------------------------------------

    def get_project(self, project_id: str) -> Project:
        project = self.projects.get(project_id)
        if project is None:
            raise ApiError(404, f"unknown project {project_id}")
        return project

    def lock_for(self, project_id: str) -> threading.Lock:
        return self.locks.setdefault(project_id, threading.Lock())

    def acquire(self, project_id: str) -> threading.Lock:
        lock = self.lock_for(project_id)
        if not lock.acquire(blocking=False):
            raise ApiError(409, f"project {project_id} has a mutation in progress")
        return lock

    # -- jobs -------------------------------------------------------------

    def submit_job(self, project_id: str, kind: str, runner) -> Job:
        """Run ``runner`` under the project lock as a background job.

        The lock is taken before returning, so a second mutating request
        is rejected with 409 while the job runs.
        """
        lock = self.acquire(project_id)
        job = Job(job_id=uuid.uuid4().hex[:12], project_id=project_id, kind=kind)
        self.jobs[job.job_id] = job
        self.persist_jobs()

        def progress(done: int, total: int) -> None:
            job.done_steps, job.total_steps = done, total

        def run() -> None:
            job.state = "running"
            self.persist_jobs()
            try:
                project = runner(progress)
                self.save(project)
                job.result = {"frames": project.frames.hashes()}
                job.state = "done"
            except Exception as exc:  # noqa: BLE001 - job errors become status
                logger.exception("job %s failed", job.job_id)
                job.state = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
            finally:
                self.persist_jobs()
                lock.release()

        self.executor.submit(run)
        return job


def _project_info(project: Project) -> dict[str, Any]:
    return {
        "project_id": project.project_id,
        "seed": project.seed,
        "plan": json.loads(serialize_plan(project.plan)) if project.plan else None,
        "frames": [
            {"index": f.index, "hash": f.hash, "provenance": f.provenance}
            for f in project.frames
        ],
        "turns": [t.to_record() for t in project.turns],
        "config": project.config.to_dict(),
    }


def _seed_conversation(project: Project) -> Conversation:
    """Bootstrap a refinable conversation for plans created without one."""
    plan = project.plan
    idea = plan.idea or StoryIdea(
        idea_text="the existing story plan",
        page_count=len(plan.pages),
        story_style="storybook",
    )
    if plan.idea is None:
        from .schema import with_idea

        plan = with_idea(plan, idea)
    raw = serialize_plan(plan)
    return Conversation(
        turns=(
            Turn("user", f"Here is the current story plan:\n{raw}"),
            Turn("assistant", raw, plan=plan),
        )
    )


def create_app(
    data_dir: str | Path,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    llm_client: ChatClient | None = None,
    planner_config: PlannerConfig | None = None,
    config: PipelineConfig | None = None,
    workers: int = 1,
) -> FastAPI:
    default_config = config or PipelineConfig()
    state = ServiceState(
        data_dir=Path(data_dir),
        backend=backend or resolve_backend(default_config.backend),
        estimator=estimator or resolve_estimator(default_config.estimator),
        llm_client=llm_client,
        planner_config=planner_config or PlannerConfig(),
        default_config=default_config,
        workers=workers,
    )
    app = FastAPI(title="plotnpolish", version="0.1.0")
    app.state.service = state

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.exception_handler(SchemaError)
    @app.exception_handler(ValidationError)
    @app.exception_handler(UnreadableImage)
    @app.exception_handler(WeightsNotFound)
    async def handle_bad_request(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(BackendUnavailable)
    @app.exception_handler(LLMUnavailable)
    async def handle_unavailable(request: Request, exc: Exception):
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    # -- projects -------------------------------------------------------

    @app.post("/projects", status_code=201)
    def create_project(body: CreateProjectBody):
        if (body.plan is None) == (body.idea is None):
            raise ApiError(400, "provide exactly one of plan or idea")
        pipeline_config = (
            PipelineConfig.from_dict(body.config) if body.config else state.default_config
        )
        if body.plan is not None:
            plan = parse_plan(json.dumps(body.plan))
        else:
            if state.llm_client is None:
                raise LLMUnavailable("no language model configured for plan generation")
            idea = StoryIdea(
                idea_text=str(body.idea.get("idea_text", "")),
                page_count=int(body.idea.get("page_count", 0)),
                story_style=str(body.idea.get("story_style", "")),
                visual_style=str(body.idea.get("visual_style", "")),
            )
            plan, conversation = planner.generate_plan(
                idea, state.planner_config, state.llm_client
            )
            project = pipeline.new_project(plan=plan, seed=body.seed, config=pipeline_config)
            state.conversations[project.project_id] = conversation
            state.save(project)
            return _project_info(project)
        project = pipeline.new_project(plan=plan, seed=body.seed, config=pipeline_config)
        state.save(project)
        return _project_info(project)

    @app.get("/projects/{project_id}")
    def get_project(project_id: str):
        return _project_info(state.get_project(project_id))

    @app.post("/projects/{project_id}/plan/refine")
    def refine_plan(project_id: str, body: RefineBody):
        project = state.get_project(project_id)
        if project.plan is None:
            raise ApiError(400, "project has no plan to refine")
        if state.llm_client is None:
            raise LLMUnavailable("no language model configured for plan refinement")
        lock = state.acquire(project_id)
        try:
            conversation = state.conversations.get(project_id)
            if conversation is None:
                conversation = _seed_conversation(project)
            plan, conversation = planner.refine_plan(
                conversation, body.feedback, state.planner_config, state.llm_client
            )
            state.conversations[project_id] = conversation
            state.save(replace(project, plan=plan))
        finally:
            lock.release()
        return {"plan": json.loads(serialize_plan(plan))}

    # -- rendering and editing -------------------------------------------

    @app.post("/projects/{project_id}/visualize", status_code=202)
    def visualize(project_id: str, body: VisualizeBody | None = None):
        project = state.get_project(project_id)
        seed = body.seed if body is not None and body.seed is not None else project.seed
        if seed != project.seed:
            project = replace(project, seed=seed)

        def run(progress):
            return pipeline.visualize(project, state.backend)

        return state.submit_job(project_id, "visualize", run).to_dict()

    @app.post("/projects/{project_id}/edits", status_code=202)
    def submit_edit(project_id: str, body: EditBody):
        project = state.get_project(project_id)
        request = EditRequest.from_wire(body.request)
        seed = body.seed if body.seed is not None else project.seed

        def run(progress):
            return pipeline.execute_request(
                project,
                request,
                seed,
                backend=state.backend,
                estimator=state.estimator,
                progress=progress,
            )

        return state.submit_job(project_id, "edit", run).to_dict()

    @app.post("/projects/{project_id}/undo")
    def undo(project_id: str):
        project = state.get_project(project_id)
        lock = state.acquire(project_id)
        try:
            if not project.turns:
                raise ApiError(400, "nothing to undo")
            reverted = pipeline.undo(project)
            state.save(reverted)
        finally:
            lock.release()
        return _project_info(reverted)

    @app.post("/projects/{project_id}/import", status_code=201)
    def import_images(project_id: str, files: list[UploadFile]):
        project = state.get_project(project_id)
        if len(project.frames):
            raise ApiError(409, "project already has frames")
        if not files:
            raise ApiError(400, "no files uploaded")
        lock = state.acquire(project_id)
        try:
            from PIL import Image, UnidentifiedImageError

            images = []
            for upload in files:
                try:
                    with Image.open(io.BytesIO(upload.file.read())) as img:
                        images.append(np.asarray(img.convert("RGB")))
                except UnidentifiedImageError as exc:
                    raise UnreadableImage(f"cannot read {upload.filename}") from exc
            imported = pipeline.import_frames(
                images,
                plan=project.plan,
                seed=project.seed,
                config=project.config,
                project_id=project.project_id,
            )
            state.save(imported)
        finally:
            lock.release()
        return _project_info(imported)

    @app.post("/projects/{project_id}/masks/preview")
    def preview_masks(project_id: str, body: MaskPreviewBody):
        project = state.get_project(project_id)
        frames = pipeline.preview_masks(
            project,
            body.concept,
            mask_source=body.mask_source,
            backend=state.backend,
            estimator=state.estimator,
        )
        return {"frames": frames}

    @app.post("/projects/{project_id}/references", status_code=201)
    def upload_reference(project_id: str, files: list[UploadFile]):
        project = state.get_project(project_id)
        if len(files) != 1:
            raise ApiError(400, "upload exactly one reference image")
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(io.BytesIO(files[0].file.read())) as img:
                image = np.asarray(img.convert("RGB"))
        except UnidentifiedImageError as exc:
            raise UnreadableImage(f"cannot read {files[0].filename}") from exc
        return {"reference": pipeline.store_reference(project, image)}

    # -- frames and jobs --------------------------------------------------

    @app.get("/projects/{project_id}/frames")
    def list_frames(project_id: str):
        project = state.get_project(project_id)
        return {
            "frames": [
                {"index": f.index, "hash": f.hash, "provenance": f.provenance}
                for f in project.frames
            ]
        }

    @app.get("/frames/{frame_hash}")
    def get_frame(frame_hash: str):
        for project in state.projects.values():
            if frame_hash in project.store:
                array = project.store.get(frame_hash)
                from PIL import Image

                buffer = io.BytesIO()
                if array.ndim == 2:
                    Image.fromarray(np.asarray(array) > 0).save(buffer, format="PNG")
                else:
                    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(
                        buffer, format="PNG"
                    )
                return Response(content=buffer.getvalue(), media_type="image/png")
        raise ApiError(404, f"unknown frame {frame_hash}")

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise ApiError(404, f"unknown job {job_id}")
        return job.to_dict()

    return app
