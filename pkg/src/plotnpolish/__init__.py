"""Training-free story visualization and consistent multi-frame editing."""

from .backend import (
    Backend,
    BackendDescriptor,
    DenoiseCondition,
    LatentTensor,
    MockBackend,
    NoiseSchedule,
    register_backend,
    resolve_backend,
)
from .grid import GridLayout, denoise_grid
from .perception import SyntheticEstimator, register_estimator, resolve_estimator
from .pipeline import (
    EditRequest,
    Frame,
    FrameSet,
    PipelineConfig,
    Project,
    edit,
    execute_request,
    import_frames,
    load_project,
    new_project,
    personalize,
    replay,
    save_project,
    style,
    undo,
    visualize,
)
from .planner import PlannerConfig, generate_plan, refine_plan
from .schema import (
    StoryIdea,
    StoryPlan,
    compose_prompt,
    parse_plan,
    serialize_plan,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendDescriptor",
    "DenoiseCondition",
    "EditRequest",
    "Frame",
    "FrameSet",
    "GridLayout",
    "LatentTensor",
    "MockBackend",
    "NoiseSchedule",
    "PipelineConfig",
    "PlannerConfig",
    "Project",
    "StoryIdea",
    "StoryPlan",
    "SyntheticEstimator",
    "compose_prompt",
    "denoise_grid",
    "edit",
    "execute_request",
    "generate_plan",
    "import_frames",
    "load_project",
    "new_project",
    "parse_plan",
    "personalize",
    "refine_plan",
    "register_backend",
    "register_estimator",
    "replay",
    "resolve_backend",
    "resolve_estimator",
    "save_project",
    "serialize_plan",
    "style",
    "undo",
    "visualize",
]
