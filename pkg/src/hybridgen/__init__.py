"""Demonstration augmentation through pose adaptation and constrained replanning."""

from .adapt import (
    AdaptationContext,
    adapt_demo_stage2,
    adapt_segment,
    transform_endeffector,
    transform_grasp,
)
from .constraints import (
    ConstraintAtom,
    ConstraintPlan,
    Keypoint,
    KeypointTracker,
    eval_atom,
    moved_keypoints,
    semantic_cost,
    validate_plan,
)
from .demos import (
    Dataset,
    DatasetMetadata,
    Demonstration,
    LabeledPose,
    SubtaskSegment,
    attach_segments,
    label_from_intervals,
    load,
    save,
)
from .gateway import (
    Attachment,
    VlmRequest,
    VlmResponse,
    fetch,
    parse_intervals,
    render_prompt,
)
from .geometry import (
    DistanceWeights,
    Pose,
    compose,
    geodesic_angle,
    interpolate,
    inverse,
    pose_distance,
)
from .keypoints import ExtractionConfig, ResponseMap, extract, load_response_map
from .pipeline import PipelineConfig, report, stage1, stage2, validate_dataset
from .planner import (
    IkResult,
    KinematicChain,
    PlanOptions,
    PlanProblem,
    PlanResult,
    PlanWeights,
    SdfEnvironment,
    collision_cost,
    ik_cost,
    ik_solve,
    replan,
    sdf,
    select_subsegment,
    smoothness_cost,
)
from .scene import ObjectPlacement, SceneDescription, VariantSpec, WorkspaceBounds
from .selection import GraspCandidate, pick, relative_grasp, select_topk
from .simenv import (
    ExecutionTrace,
    TaskSpec,
    check_success,
    execute,
    load_task,
    sample_scene,
)

__version__ = "0.1.0"
