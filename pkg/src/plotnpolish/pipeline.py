"""High-level story workflows: template visualization, consistency passes,
local/global/personalized edits, multi-turn history, replay and undo.

A Project is immutable: every operation returns a successor, and all frame
pixels live in a content-addressed object store shared along the chain.
Edit turns record request, seed and frame hashes, which makes any project
replayable bit-exactly under the mock backend.
"""

from __future__ import annotations

import json
import logging
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import grid as grid_ops
from .backend import (
    Backend,
    BackendDescriptor,
    DenoiseCondition,
    NoiseSchedule,
    WeightsNotFound,
    resolve_backend,
)
from .grid import DEFAULT_LAYOUT, GridLayout, GridState, MaskStore
from .perception import (
    ConceptMask,
    Estimator,
    MaskExtraction,
    attention_mask,
    dilate_mask,
    extract_depth,
    extract_masks,
    resolve_estimator,
)
from .schema import (
    CharacterSpec,
    StoryPlan,
    ValidationError,
    compose_prompt,
    parse_plan,
    serialize_plan,
)
from .storage import ObjectStore, atomic_write_json, atomic_write_text, content_hash

logger = logging.getLogger(__name__)

# seed stream tag for the initial noising of latents to the top timestep
_INIT_STREAM = 3

EDIT_KINDS = ("local", "global_style", "personalized", "consistency_pass")
MASK_SOURCES = ("segmentation", "attention", "user_supplied")
PROVENANCES = ("template", "edited", "imported")

WIRE_VERSION = 1


class UnreadableImage(ValueError):
    """Raised when an input image cannot be read."""


class ReplayDivergence(RuntimeError):
    """Raised when replaying a project does not reproduce its stored frames."""


# --------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class Frame:
    index: int
    image: np.ndarray  # (H, W, 3) uint8
    provenance: str

    @property
    def hash(self) -> str:
        return content_hash(self.image)


@dataclass(frozen=True)
class FrameSet:
    frames: tuple[Frame, ...] = ()

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, index: int) -> Frame:
        return self.frames[index]

    def images(self) -> list[np.ndarray]:
        return [f.image for f in self.frames]

    def hashes(self) -> list[str]:
        return [f.hash for f in self.frames]


# --------------------------------------------------------------------------
# requests and turns


@dataclass(frozen=True)
class EditRequest:
    """One user-issued edit, serializable for the wire and for replay.

    ``pages`` are 1-based page numbers as shown in the plan; None targets
    every frame. ``user_masks`` and ``reference`` are content hashes into
    the project's object store.
    """

    kind: str
    concept: str = ""
    edit_prompt: str = ""
    mask_source: str = "segmentation"
    strength_override: float | None = None
    pages: tuple[int, ...] | None = None
    instance_overrides: Mapping[int, int] = field(default_factory=dict)
    reference: str | None = None
    user_masks: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.kind not in EDIT_KINDS:
            raise ValidationError(f"unknown edit kind {self.kind!r}")
        if self.mask_source not in MASK_SOURCES:
            raise ValidationError(f"unknown mask source {self.mask_source!r}")
        if self.kind in ("local", "personalized") and not self.concept.strip():
            raise ValidationError(f"{self.kind} edits require a concept")
        if self.kind == "global_style" and self.concept.strip():
            raise ValidationError("global style edits take no concept")
        if self.kind in ("local", "global_style", "personalized") and not self.edit_prompt.strip():
            raise ValidationError(f"{self.kind} edits require an edit prompt")
        if self.kind == "personalized" and not self.reference:
            raise ValidationError("personalized edits require a reference")
        if self.mask_source == "user_supplied" and not self.user_masks:
            raise ValidationError("user_supplied mask source requires user_masks")
        if self.strength_override is not None and not 0.0 <= self.strength_override <= 1.0:
            raise ValidationError("strength_override must lie in [0, 1]")
        if self.pages is not None:
            if len(self.pages) == 0:
                raise ValidationError("pages must be None or non-empty")
            if len(set(self.pages)) != len(self.pages) or any(p < 1 for p in self.pages):
                raise ValidationError("pages must be unique 1-based page numbers")

    def to_wire(self) -> dict[str, Any]:
        return {
            "wire_version": WIRE_VERSION,
            "kind": self.kind,
            "concept": self.concept,
            "edit_prompt": self.edit_prompt,
            "mask_source": self.mask_source,
            "strength_override": self.strength_override,
            "pages": list(self.pages) if self.pages is not None else None,
            "instance_overrides": {str(k): v for k, v in self.instance_overrides.items()},
            "reference": self.reference,
            "user_masks": list(self.user_masks) if self.user_masks is not None else None,
        }

    @classmethod
    def from_wire(cls, data: Mapping[str, Any]) -> "EditRequest":
        if not isinstance(data, Mapping):
            raise ValidationError("edit request must be a JSON object")
        version = data.get("wire_version", WIRE_VERSION)
        if version != WIRE_VERSION:
            raise ValidationError(f"unsupported wire_version {version}")
        if "kind" not in data:
            raise ValidationError("kind missing")
        pages = data.get("pages")
        masks = data.get("user_masks")
        try:
            request = cls(
                kind=str(data["kind"]),
                concept=str(data.get("concept") or ""),
                edit_prompt=str(data.get("edit_prompt") or ""),
                mask_source=str(data.get("mask_source") or "segmentation"),
                strength_override=(
                    None
                    if data.get("strength_override") is None
                    else float(data["strength_override"])
                ),
                pages=None if pages is None else tuple(int(p) for p in pages),
                instance_overrides={
                    int(k): int(v)
                    for k, v in (data.get("instance_overrides") or {}).items()
                },
                reference=data.get("reference"),
                user_masks=None if masks is None else tuple(str(m) for m in masks),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed edit request: {exc}") from exc
        request.validate()
        return request


@dataclass(frozen=True)
class EditTurn:
    request: EditRequest
    seed: int
    strength: float
    before_ids: tuple[str, ...]
    after_ids: tuple[str, ...]
    warnings: tuple[str, ...] = ()
    timestamp: str = ""

    def to_record(self) -> dict[str, Any]:
        return {
            "request": self.request.to_wire(),
            "seed": self.seed,
            "strength": self.strength,
            "before": list(self.before_ids),
            "after": list(self.after_ids),
            "warnings": list(self.warnings),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "EditTurn":
        return cls(
            request=EditRequest.from_wire(record["request"]),
            seed=int(record["seed"]),
            strength=float(record["strength"]),
            before_ids=tuple(record["before"]),
            after_ids=tuple(record["after"]),
            warnings=tuple(record.get("warnings", ())),
            timestamp=str(record.get("timestamp", "")),
        )


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    layout: GridLayout = DEFAULT_LAYOUT
    local_strength: float = 0.4
    global_strength: float = 1.0
    t_steps: int = 50
    dilation_radius: int = 3
    working_resolution: int = 512
    mask_downsample: str = "or"
    epsilon_mode: str = "per_step"
    estimator: str = "synthetic"
    backend: BackendDescriptor = field(
        default_factory=lambda: BackendDescriptor(
            kind="mock",
            supports_image_prompt=True,
            supports_personalization_weights=True,
        )
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "layout": {"rows": self.layout.rows, "cols": self.layout.cols},
            "local_strength": self.local_strength,
            "global_strength": self.global_strength,
            "t_steps": self.t_steps,
            "dilation_radius": self.dilation_radius,
            "working_resolution": self.working_resolution,
            "mask_downsample": self.mask_downsample,
            "epsilon_mode": self.epsilon_mode,
            "estimator": self.estimator,
            "backend": {
                "kind": self.backend.kind,
                "checkpoint_ref": self.backend.checkpoint_ref,
                "supports_image_prompt": self.backend.supports_image_prompt,
                "supports_personalization_weights": self.backend.supports_personalization_weights,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        layout = data.get("layout", {})
        backend = data.get("backend", {})
        return cls(
            layout=GridLayout(
                rows=int(layout.get("rows", 3)), cols=int(layout.get("cols", 3))
            ),
            local_strength=float(data.get("local_strength", 0.4)),
            global_strength=float(data.get("global_strength", 1.0)),
            t_steps=int(data.get("t_steps", 50)),
            dilation_radius=int(data.get("dilation_radius", 3)),
            working_resolution=int(data.get("working_resolution", 512)),
            mask_downsample=str(data.get("mask_downsample", "or")),
            epsilon_mode=str(data.get("epsilon_mode", "per_step")),
            estimator=str(data.get("estimator", "synthetic")),
            backend=BackendDescriptor(
                kind=str(backend.get("kind", "mock")),
                checkpoint_ref=str(backend.get("checkpoint_ref", "")),
                supports_image_prompt=bool(backend.get("supports_image_prompt", True)),
                supports_personalization_weights=bool(
                    backend.get("supports_personalization_weights", True)
                ),
            ),
        )


# --------------------------------------------------------------------------
# project


@dataclass(frozen=True)
class Project:
    project_id: str
    seed: int
    config: PipelineConfig
    plan: StoryPlan | None = None
    frames: FrameSet = field(default_factory=FrameSet)
    turns: tuple[EditTurn, ...] = ()
    baseline_ids: tuple[str, ...] = ()
    baseline_provenance: str = "template"
    store: ObjectStore = field(default_factory=ObjectStore, compare=False)

    def frame_provenance(self, frame_hash: str) -> str:
        return (
            self.baseline_provenance
            if frame_hash in self.baseline_ids
            else "edited"
        )


def new_project(
    plan: StoryPlan | None = None,
    seed: int = 0,
    config: PipelineConfig | None = None,
    project_id: str | None = None,
) -> Project:
    if plan is not None:
        plan.validate()
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return Project(
        project_id=project_id or uuid.uuid4().hex[:12],
        seed=seed,
        config=config or PipelineConfig(),
        plan=plan,
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _get_backend(project: Project, backend: Backend | None) -> Backend:
    return backend if backend is not None else resolve_backend(project.config.backend)


def _get_estimator(project: Project, estimator: Estimator | None) -> Estimator:
    return estimator if estimator is not None else resolve_estimator(project.config.estimator)


# --------------------------------------------------------------------------
# template visualization


def render_template(plan: StoryPlan, seed: int, backend: Backend) -> FrameSet:
    """Sample one template frame per page from its composed prompt.

    Frame i is drawn with seed ``seed + page number`` so pages are
    independently seeded but the whole template is reproducible.
    """
    plan.validate()
    frames = tuple(
        Frame(
            index=i,
            image=backend.sample_template(compose_prompt(page), seed + page.page),
            provenance="template",
        )
        for i, page in enumerate(plan.pages)
    )
    return FrameSet(frames)


def visualize(project: Project, backend: Backend | None = None) -> Project:
    """Create the project's template frames from its plan."""
    if project.plan is None:
        raise ValueError("project has no plan to visualize")
    if len(project.frames):
        raise ValueError("project already has frames")
    backend = _get_backend(project, backend)
    frames = render_template(project.plan, project.seed, backend)
    for frame in frames:
        project.store.put(frame.image)
    return replace(
        project,
        frames=frames,
        baseline_ids=tuple(frames.hashes()),
        baseline_provenance="template",
    )


# --------------------------------------------------------------------------
# imports


def _load_source(source: np.ndarray | str | Path) -> np.ndarray:
    if isinstance(source, np.ndarray):
        if source.ndim != 3 or source.shape[2] != 3:
            raise UnreadableImage(f"expected (H, W, 3) image, got {source.shape}")
        return source.astype(np.uint8)
    from PIL import Image, UnidentifiedImageError

    path = Path(source)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise UnreadableImage(f"cannot read image {path}: {exc}") from exc


def fit_to_resolution(image: np.ndarray, resolution: int) -> np.ndarray:
    """Scale the shorter side to ``resolution`` and center-crop square.

    Images already at the working resolution pass through byte-identical.
    """
    h, w = image.shape[:2]
    if h == resolution and w == resolution:
        return image
    from PIL import Image

    scale = resolution / min(h, w)
    new_w = max(resolution, round(w * scale))
    new_h = max(resolution, round(h * scale))
    resized = np.asarray(
        Image.fromarray(image).resize((new_w, new_h), Image.LANCZOS)
    )
    top = (new_h - resolution) // 2
    left = (new_w - resolution) // 2
    return resized[top : top + resolution, left : left + resolution]


def import_frames(
    sources: Sequence[np.ndarray | str | Path],
    plan: StoryPlan | None = None,
    seed: int = 0,
    config: PipelineConfig | None = None,
    project_id: str | None = None,
) -> Project:
    """Build a project from existing imagery; all edit operations apply."""
    if len(sources) == 0:
        raise UnreadableImage("no input images")
    project = new_project(plan=plan, seed=seed, config=config, project_id=project_id)
    resolution = project.config.working_resolution
    frames = tuple(
        Frame(
            index=i,
            image=fit_to_resolution(_load_source(source), resolution),
            provenance="imported",
        )
        for i, source in enumerate(sources)
    )
    frame_set = FrameSet(frames)
    for frame in frames:
        project.store.put(frame.image)
    return replace(
        project,
        frames=frame_set,
        baseline_ids=tuple(frame_set.hashes()),
        baseline_provenance="imported",
    )


# --------------------------------------------------------------------------
# editing


def _target_indices(request: EditRequest, n: int) -> list[int]:
    if request.pages is None:
        return list(range(n))
    indices = sorted(p - 1 for p in request.pages)
    if any(i < 0 or i >= n for i in indices):
        raise ValidationError(f"pages out of range 1..{n}: {request.pages}")
    return indices


def _user_extractions(
    project: Project, request: EditRequest, targets: list[int], n: int
) -> list[MaskExtraction]:
    masks = request.user_masks or ()
    if len(masks) != len(targets):
        raise ValidationError(
            f"{len(masks)} user masks supplied for {len(targets)} target frames"
        )
    shape = project.frames[0].image.shape[:2]
    by_index: dict[int, np.ndarray] = {}
    for index, key in zip(targets, masks):
        if key not in project.store:
            raise ValidationError(f"user mask {key} not in object store")
        mask = np.asarray(project.store.get(key), dtype=np.float64)
        if mask.shape != shape:
            raise ValidationError(
                f"user mask shape {mask.shape} does not match frames {shape}"
            )
        by_index[index] = (mask > 0).astype(np.float64)
    out = []
    for i in range(n):
        mask = by_index.get(i, np.zeros(shape))
        selected = ConceptMask(
            frame_index=i,
            concept=request.concept,
            mask=mask,
            confidence=1.0 if mask.any() else 0.0,
            instance_id=0 if mask.any() else -1,
        )
        out.append(MaskExtraction(selected=selected, candidates=(selected,)))
    return out


def _prepare_state(
    project: Project,
    backend: Backend,
    pixel_masks: list[np.ndarray],
    estimator: Estimator,
    seed: int,
) -> GridState:
    images = project.frames.images()
    schedule_top = NoiseSchedule.linear_signal(project.config.t_steps)
    originals = [backend.encode(img).data for img in images]
    latents = []
    for i, f_latent in enumerate(originals):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM, i]))
        eps = rng.standard_normal(f_latent.shape)
        latents.append(
            grid_ops.noised_original(
                f_latent, schedule_top.alpha_bar(schedule_top.t_steps), eps
            )
        )
    s = backend.scale_factor
    latent_masks = [
        grid_ops.resize_mask_to_latent(m, s, mode=project.config.mask_downsample)
        for m in pixel_masks
    ]
    depth_maps = extract_depth(images, estimator)
    latent_depths = []
    for depth_map in depth_maps:
        d = depth_map.depth
        h, w = d.shape
        latent_depths.append(d.reshape(h // s, s, w // s, s).mean(axis=(1, 3)))
    return GridState(
        latents=latents,
        masks=MaskStore(latent_masks),
        depths=latent_depths,
        original_latents=originals,
        timestep=project.config.t_steps,
        scale_factor=s,
    )


def _finish_turn(
    project: Project,
    request: EditRequest,
    seed: int,
    strength: float,
    targets: list[int],
    out_images: list[np.ndarray] | None,
    warnings: list[str],
) -> Project:
    before = tuple(project.frames.hashes())
    new_frames = []
    for frame in project.frames:
        if out_images is not None and frame.index in targets:
            new_frames.append(
                Frame(index=frame.index, image=out_images[frame.index], provenance="edited")
            )
        else:
            new_frames.append(frame)
    frame_set = FrameSet(tuple(new_frames))
    for frame in frame_set:
        project.store.put(frame.image)
    turn = EditTurn(
        request=request,
        seed=seed,
        strength=strength,
        before_ids=before,
        after_ids=tuple(frame_set.hashes()),
        warnings=tuple(warnings),
        timestamp=_now(),
    )
    return replace(project, frames=frame_set, turns=project.turns + (turn,))


def apply_request(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    """Execute one concrete edit request, appending exactly one turn."""
    request.validate()
    if len(project.frames) == 0:
        raise ValueError("project has no frames; visualize or import first")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    backend = _get_backend(project, backend)
    estimator = _get_estimator(project, estimator)

    if request.kind == "global_style":
        return _global_edit(project, request, seed, backend, estimator, progress)
    if request.kind == "consistency_pass" and not request.concept.strip():
        raise ValidationError(
            "consistency_pass needs a concrete concept here; use execute_request "
            "to expand over all characters"
        )
    return _masked_edit(project, request, seed, backend, estimator, progress)


def _resolve_edit_prompt(project: Project, request: EditRequest) -> str:
    if request.edit_prompt.strip():
        return request.edit_prompt
    # consistency passes default to the character's visual description
    if project.plan is not None:
        for character in project.plan.characters:
            if character.category == request.concept:
                return character.description
    return request.concept


def _masked_edit(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend,
    estimator: Estimator,
    progress: Callable[[int, int], None] | None,
) -> Project:
    n = len(project.frames)
    targets = _target_indices(request, n)
    images = project.frames.images()

    if request.mask_source == "segmentation":
        extractions = extract_masks(images, request.concept, estimator)
    elif request.mask_source == "attention":
        extractions = attention_mask(images, request.concept, backend)
    else:
        extractions = _user_extractions(project, request, targets, n)

    for page, instance_id in request.instance_overrides.items():
        index = page - 1
        if index not in targets:
            raise ValidationError(f"instance override for untargeted page {page}")
        extractions[index] = extractions[index].override(instance_id)

    warnings: list[str] = []
    shape = images[0].shape[:2]
    pixel_masks: list[np.ndarray] = []
    for i in range(n):
        if i in targets:
            selected = extractions[i].selected
            if extractions[i].warning:
                warnings.append(extractions[i].warning)
            if selected.is_empty:
                pixel_masks.append(np.zeros(shape))
            else:
                pixel_masks.append(
                    dilate_mask(selected, project.config.dilation_radius).mask
                )
        else:
            pixel_masks.append(np.zeros(shape))

    strength = (
        request.strength_override
        if request.strength_override is not None
        else project.config.local_strength
    )

    if not any(m.any() for m in pixel_masks):
        warnings.append(f"NoMaskAnywhere: concept {request.concept!r} matched no frame")
        logger.warning(warnings[-1])
        return _finish_turn(project, request, seed, strength, targets, None, warnings)

    image_prompt = None
    if request.kind == "personalized":
        if request.reference is None or request.reference not in project.store:
            raise WeightsNotFound(
                f"reference {request.reference!r} not found in object store"
            )
        image_prompt = backend.load_personalization(
            reference_image=project.store.get(request.reference)
        )

    cond = DenoiseCondition(
        text_prompt=_resolve_edit_prompt(project, request),
        conditioning_strength=strength,
        image_prompt=image_prompt,
    )
    state = _prepare_state(project, backend, pixel_masks, estimator, seed)
    out_images = grid_ops.denoise_grid(
        state,
        cond,
        backend,
        NoiseSchedule.linear_signal(project.config.t_steps),
        blending=True,
        layout=project.config.layout,
        seed=seed,
        epsilon_mode=project.config.epsilon_mode,
        progress=progress,
    )
    return _finish_turn(project, request, seed, strength, targets, out_images, warnings)


def _global_edit(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend,
    estimator: Estimator,
    progress: Callable[[int, int], None] | None,
) -> Project:
    n = len(project.frames)
    targets = _target_indices(request, n)
    shape = project.frames[0].image.shape[:2]
    # masks are present but the blending-off path never reads them
    pixel_masks = [np.zeros(shape) for _ in range(n)]
    strength = (
        request.strength_override
        if request.strength_override is not None
        else project.config.global_strength
    )
    cond = DenoiseCondition(
        text_prompt=request.edit_prompt, conditioning_strength=strength
    )
    state = _prepare_state(project, backend, pixel_masks, estimator, seed)
    out_images = grid_ops.denoise_grid(
        state,
        cond,
        backend,
        NoiseSchedule.linear_signal(project.config.t_steps),
        blending=False,
        layout=project.config.layout,
        seed=seed,
        epsilon_mode=project.config.epsilon_mode,
        progress=progress,
    )
    assert state.masks.access_count == 0
    return _finish_turn(project, request, seed, strength, targets, out_images, [])


def edit(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    if request.kind != "local":
        raise ValidationError(f"edit() handles local requests, got {request.kind!r}")
    return apply_request(project, request, seed, backend, estimator, progress)


def style(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    if request.kind != "global_style":
        raise ValidationError(f"style() handles global_style requests, got {request.kind!r}")
    return apply_request(project, request, seed, backend, estimator, progress)


def personalize(
    project: Project,
    request: EditRequest,
    seed: int,
    reference: np.ndarray | str | Path | None = None,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    """Personalized edit; ``reference`` is stored and recorded by hash."""
    if request.kind != "personalized":
        raise ValidationError(
            f"personalize() handles personalized requests, got {request.kind!r}"
        )
    if reference is not None:
        image = _load_source(reference)
        key = project.store.put(image)
        request = replace(request, reference=key)
    return apply_request(project, request, seed, backend, estimator, progress)


def consistency_pass(
    project: Project,
    character: CharacterSpec,
    seed: int,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    """Unify one character's appearance across all frames.

    Runs the local-edit path with the character's category as the concept
    and its visual description as the edit prompt.
    """
    request = EditRequest(
        kind="consistency_pass",
        concept=character.category,
        edit_prompt=character.description,
    )
    return apply_request(project, request, seed, backend, estimator, progress)


def execute_request(
    project: Project,
    request: EditRequest,
    seed: int,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Project:
    """Service-facing dispatcher; may append several turns.

    A consistency_pass without a concept expands to one pass per declared
    character, in declaration order.
    """
    request.validate()
    if request.kind == "consistency_pass" and not request.concept.strip():
        if project.plan is None:
            raise ValidationError("consistency_pass without concept needs a plan")
        current = project
        for character in project.plan.characters:
            current = consistency_pass(current, character, seed, backend, estimator, progress)
        return current
    return apply_request(project, request, seed, backend, estimator, progress)


def preview_masks(
    project: Project,
    concept: str,
    mask_source: str = "segmentation",
    backend: Backend | None = None,
    estimator: Estimator | None = None,
) -> list[dict[str, Any]]:
    """Extract concept masks for display without editing anything.

    Every candidate instance is persisted to the object store (1-bit PNG)
    so a client can overlay the exact masks and pick an instance when
    detections are ambiguous.
    """
    if len(project.frames) == 0:
        raise ValueError("project has no frames")
    backend = _get_backend(project, backend)
    estimator = _get_estimator(project, estimator)
    images = project.frames.images()
    if mask_source == "segmentation":
        extractions = extract_masks(images, concept, estimator)
    elif mask_source == "attention":
        extractions = attention_mask(images, concept, backend)
    else:
        raise ValidationError(f"cannot preview mask source {mask_source!r}")
    preview = []
    for index, extraction in enumerate(extractions):
        instances = [
            {
                "instance_id": candidate.instance_id,
                "confidence": candidate.confidence,
                "mask": project.store.put(candidate.mask.astype(np.float64)),
                "selected": candidate.instance_id == extraction.selected.instance_id,
            }
            for candidate in extraction.candidates
        ]
        preview.append(
            {"index": index, "instances": instances, "warning": extraction.warning}
        )
    return preview


def store_reference(project: Project, image: np.ndarray | str | Path) -> str:
    """Put a personalization reference image into the project's store."""
    return project.store.put(_load_source(image))


# --------------------------------------------------------------------------
# history


def undo(project: Project) -> Project:
    """Return the project as it was before its most recent turn."""
    if not project.turns:
        raise ValueError("nothing to undo")
    last = project.turns[-1]
    frames = tuple(
        Frame(
            index=i,
            image=project.store.get(frame_hash),
            provenance=project.frame_provenance(frame_hash),
        )
        for i, frame_hash in enumerate(last.before_ids)
    )
    return replace(project, frames=FrameSet(frames), turns=project.turns[:-1])


def replay(
    project: Project,
    backend: Backend | None = None,
    estimator: Estimator | None = None,
) -> FrameSet:
    """Re-execute every turn from the baseline and verify frame hashes.

    Raises :class:`ReplayDivergence` if stored frames are corrupt or any
    turn fails to reproduce its recorded output.
    """
    backend = _get_backend(project, backend)
    estimator = _get_estimator(project, estimator)
    baseline_frames = []
    for i, frame_hash in enumerate(project.baseline_ids):
        image = project.store.get(frame_hash)
        if content_hash(image) != frame_hash:
            raise ReplayDivergence(f"stored frame {frame_hash} is corrupted")
        baseline_frames.append(
            Frame(index=i, image=image, provenance=project.baseline_provenance)
        )
    current = replace(
        project, frames=FrameSet(tuple(baseline_frames)), turns=()
    )
    for turn_index, turn in enumerate(project.turns):
        current = apply_request(current, turn.request, turn.seed, backend, estimator)
        recomputed = tuple(current.frames.hashes())
        if recomputed != turn.after_ids:
            raise ReplayDivergence(
                f"turn {turn_index} replayed to different frames"
            )
    if tuple(current.frames.hashes()) != tuple(project.frames.hashes()):
        raise ReplayDivergence("replayed frames do not match the project state")
    return current.frames


# --------------------------------------------------------------------------
# persistence: plan.json, frames/<hash>.png, turns.jsonl, project.json


def save_project(project: Project, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    project.store.bind(directory / "frames")
    if project.plan is not None:
        atomic_write_text(directory / "plan.json", serialize_plan(project.plan))
    lines = [json.dumps(t.to_record(), ensure_ascii=False) for t in project.turns]
    atomic_write_text(directory / "turns.jsonl", "".join(line + "\n" for line in lines))
    atomic_write_json(
        directory / "project.json",
        {
            "plotnpolish_schema": "1",
            "project_id": project.project_id,
            "seed": project.seed,
            "config": project.config.to_dict(),
            "baseline_ids": list(project.baseline_ids),
            "baseline_provenance": project.baseline_provenance,
            "frames": [
                {"index": f.index, "hash": f.hash, "provenance": f.provenance}
                for f in project.frames
            ],
        },
    )
    return directory


def load_project(directory: str | Path) -> Project:
    directory = Path(directory)
    meta_path = directory / "project.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"not a project directory: {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    store = ObjectStore(directory / "frames")
    plan = None
    plan_path = directory / "plan.json"
    if plan_path.is_file():
        plan = parse_plan(plan_path.read_text(encoding="utf-8"))
    turns = []
    turns_path = directory / "turns.jsonl"
    if turns_path.is_file():
        for line in turns_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                turns.append(EditTurn.from_record(json.loads(line)))
    frames = tuple(
        Frame(
            index=int(f["index"]),
            image=store.get(f["hash"]),
            provenance=str(f["provenance"]),
        )
        for f in meta.get("frames", [])
    )
    return Project(
        project_id=str(meta["project_id"]),
        seed=int(meta["seed"]),
        config=PipelineConfig.from_dict(meta.get("config", {})),
        plan=plan,
        frames=FrameSet(frames),
        turns=tuple(turns),
        baseline_ids=tuple(meta.get("baseline_ids", ())),
        baseline_provenance=str(meta.get("baseline_provenance", "template")),
        store=store,
    )
