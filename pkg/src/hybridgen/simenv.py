"""Kinematic desk-scale simulator: scene sampling, playback, success checks.

No dynamics: objects are poses with signed-distance shapes. Execution plays
an end-effector trajectory step by step; closing the gripper within reach
of an object's grasp point attaches it, and the attached object then
follows the end-effector rigidly until the gripper opens. Penetration
between the carried object and the rest of the scene is recorded as a
collision event unless the task declares the pair an intended contact.

Tasks are defined declaratively (shipped as JSON assets, overridable from a
config file): object shapes and named points, subtask structure, variant
sampling regions, and geometric success-predicate parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .constraints import Keypoint
from .errors import ParseError, SamplingError, ValidationError
from .geometry import Pose, compose, inverse, rotate_vector
from .planner import SdfEnvironment
from .scene import (
    ObjectPlacement,
    ObjectVariantSpec,
    SceneDescription,
    VariantSpec,
    WorkspaceBounds,
)
from .sdf import Capsule, Primitive, Sphere, primitive_from_dict

GRIPPER_CLOSED = 0.5
GRASP_REACH = 0.01  # m, end-effector to grasp point at attach

BUILTIN_TASKS = ("square-analog", "threading-analog")


@dataclass(frozen=True)
class SubtaskRef:
    target_object: str
    grasp_object: str | None = None


@dataclass(frozen=True)
class KeypointRef:
    """One entry of the scene keypoint layout: the end-effector or a named object point."""

    object: str | None  # None marks the end-effector slot (always index 0)
    point: str = "grasp"  # "grasp" | "feature"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    description: str
    workspace: WorkspaceBounds
    object_templates: dict[str, ObjectPlacement]
    subtasks: tuple[SubtaskRef, ...]
    grasp_object: str
    target_object: str
    keypoint_layout: tuple[KeypointRef, ...]
    success: dict
    variants: dict[str, VariantSpec]
    allowed_contacts: frozenset[frozenset[str]] = frozenset()

    def __post_init__(self):
        for ref in self.subtasks:
            if ref.target_object not in self.object_templates:
                raise ValidationError(f"subtask targets unknown object {ref.target_object!r}")
            if ref.grasp_object is not None and ref.grasp_object not in self.object_templates:
                raise ValidationError(f"subtask grasps unknown object {ref.grasp_object!r}")
        if self.keypoint_layout and self.keypoint_layout[0].object is not None:
            raise ValidationError("keypoint 0 must be the end-effector slot")

    def variant_spec(self, variant: str) -> VariantSpec:
        if variant not in self.variants:
            raise ValidationError(f"task {self.name!r} has no variant {variant!r}")
        return self.variants[variant]


@dataclass(frozen=True)
class TraceStep:
    ee_pose: Pose
    gripper: float
    attached_object: str | None
    object_poses: dict[str, Pose]


@dataclass(frozen=True)
class TraceEvent:
    kind: str  # "attach" | "detach" | "collision"
    step: int
    object: str
    other: str | None = None


@dataclass(frozen=True)
class ExecutionTrace:
    steps: tuple[TraceStep, ...]
    events: tuple[TraceEvent, ...]
    success: bool = False

    def collisions(self) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == "collision"]

    def final_step(self) -> TraceStep:
        if not self.steps:
            raise ValidationError("trace has no steps")
        return self.steps[-1]


# --- task loading ------------------------------------------------------------


def _pose_from_json(values) -> Pose:
    return Pose.from_list(values)


def _variant_from_json(data: dict) -> VariantSpec:
    objects = {}
    for name, spec in data.items():
        region = spec.get("region")
        objects[name] = ObjectVariantSpec(
            nominal=_pose_from_json(spec["nominal"]),
            region=None if region is None else (tuple(region[0]), tuple(region[1])),
            yaw_range=tuple(spec.get("yaw_range", (0.0, 0.0))),
            fixed=bool(spec.get("fixed", False)),
        )
    return VariantSpec(objects=objects)


def task_from_dict(doc: dict) -> TaskSpec:
    try:
        templates = {
            name: ObjectPlacement(
                pose=Pose.identity(),
                shape=primitive_from_dict(obj["shape"]),
                grasp_point=tuple(obj.get("grasp_point", (0, 0, 0))),
                feature_point=tuple(obj.get("feature_point", (0, 0, 0))),
                axis=tuple(obj.get("axis", (0, 0, 1))),
            )
            for name, obj in doc["objects"].items()
        }
        return TaskSpec(
            name=str(doc["name"]),
            description=str(doc.get("description", doc["name"])),
            workspace=WorkspaceBounds.from_dict(doc["workspace"]),
            object_templates=templates,
            subtasks=tuple(
                SubtaskRef(s["target_object"], s.get("grasp_object")) for s in doc["subtasks"]
            ),
            grasp_object=str(doc["interaction"]["grasp_object"]),
            target_object=str(doc["interaction"]["target_object"]),
            keypoint_layout=tuple(
                KeypointRef(k.get("object"), k.get("point", "grasp")) for k in doc["keypoints"]
            ),
            success=dict(doc["success"]),
            variants={name: _variant_from_json(v) for name, v in doc["variants"].items()},
            allowed_contacts=frozenset(
                frozenset(pair) for pair in doc.get("allowed_contacts", [])
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed task definition: {exc}") from exc


def load_task(name_or_path: str) -> TaskSpec:
    """A builtin task by name, or any task definition from a JSON file."""
    if name_or_path in BUILTIN_TASKS:
        text = (
            resources.files("hybridgen.tasks")
            .joinpath(name_or_path.replace("-", "_") + ".json")
            .read_text()
        )
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValidationError(
                f"unknown task {name_or_path!r}; builtins are {', '.join(BUILTIN_TASKS)}"
            )
        text = path.read_text()
    try:
        return task_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid task JSON: {exc.msg}", exc.lineno, exc.colno) from exc


# --- scene sampling -----------------------------------------------------------


def _probe_points(shape: Primitive) -> list[tuple[float, float, float]]:
    if isinstance(shape, Sphere):
        return [shape.center]
    if isinstance(shape, Capsule):
        ax, ay, az = shape.a
        bx, by, bz = shape.b
        return [
            (ax + t * (bx - ax), ay + t * (by - ay), az + t * (bz - az))
            for t in (0.0, 0.25, 0.5, 0.75, 1.0)
        ]
    corners = [shape.center]
    hx, hy, hz = shape.half_extents
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                local = (sx * hx, sy * hy, sz * hz)
                off = shape.orientation.apply(local)
                corners.append(
                    (shape.center[0] + off[0], shape.center[1] + off[1], shape.center[2] + off[2])
                )
    return corners


def penetrates(a: Primitive, b: Primitive) -> bool:
    """Approximate overlap test between world-frame primitives.

    Exact when either primitive is a sphere; capsules and boxes are probed
    at axis samples and corners, which is sufficient for scene sanity
    checks at desk scale.
    """
    if isinstance(a, Sphere):
        return b.sdf(a.center) < a.radius
    if isinstance(b, Sphere):
        return a.sdf(b.center) < b.radius
    if isinstance(a, Capsule):
        return any(b.sdf(p) < a.radius for p in _probe_points(a))
    if isinstance(b, Capsule):
        return any(a.sdf(p) < b.radius for p in _probe_points(b))
    return any(b.sdf(p) < 0.0 for p in _probe_points(a)) or any(
        a.sdf(p) < 0.0 for p in _probe_points(b)
    )


def sample_scene(
    task: TaskSpec,
    variant_spec: VariantSpec,
    rng: np.random.Generator,
    variant_name: str = "D0",
    max_attempts: int = 100,
) -> SceneDescription:
    """Sample object placements for one environment reset.

    Fixed objects take their nominal pose; others draw a position uniformly
    from their region and a yaw from their range. Scenes with penetrating
    object pairs (beyond declared intended contacts) are rejected and
    resampled.
    """
    names = sorted(task.object_templates)
    for _ in range(max_attempts):
        placements: dict[str, ObjectPlacement] = {}
        for name in names:
            template = task.object_templates[name]
            spec = variant_spec.objects.get(name)
            if spec is None:
                raise ValidationError(f"variant spec is missing object {name!r}")
            if spec.fixed or spec.region is None:
                pose = spec.nominal
            else:
                lower, upper = spec.region
                position = tuple(
                    float(rng.uniform(lo, hi)) if hi > lo else lo
                    for lo, hi in zip(lower, upper)
                )
                yaw = float(rng.uniform(*spec.yaw_range)) if spec.yaw_range[1] > spec.yaw_range[0] else spec.yaw_range[0]
                yaw_pose = Pose.from_axis_angle((0, 0, 1), yaw)
                rotation = compose(yaw_pose, Pose(spec.nominal.rotation, (0, 0, 0))).rotation
                pose = Pose(rotation, position)
            placements[name] = replace(template, pose=pose)
        if _scene_clear(placements, task.allowed_contacts):
            return SceneDescription(
                objects=placements,
                workspace=task.workspace,
                variant=variant_name,
                allowed_contacts=task.allowed_contacts,
            )
    raise SamplingError(
        f"could not sample a penetration-free scene in {max_attempts} attempts "
        f"(task {task.name!r}); regions are too dense"
    )


def _scene_clear(placements: dict[str, ObjectPlacement], allowed) -> bool:
    names = sorted(placements)
    shapes = {name: placements[name].world_shape() for name in names}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if frozenset((a, b)) in allowed:
                continue
            if penetrates(shapes[a], shapes[b]):
                return False
    return True


# --- execution ----------------------------------------------------------------


def execute(traj, scene: SceneDescription) -> ExecutionTrace:
    """Kinematic playback of an end-effector trajectory in a scene."""
    if not traj:
        raise ValidationError("cannot execute an empty trajectory")
    object_poses = {name: obj.pose for name, obj in scene.objects.items()}
    attached: str | None = None
    ee_in_object: Pose | None = None  # end-effector pose in the grasped object frame
    steps: list[TraceStep] = []
    events: list[TraceEvent] = []
    prev_gripper = 0.0
    for i, lp in enumerate(traj):
        ee = lp.pose
        if attached is None and lp.gripper >= GRIPPER_CLOSED > prev_gripper:
            name = _grasp_candidate(scene, object_poses, ee)
            if name is not None:
                attached = name
                ee_in_object = compose(inverse(object_poses[name]), ee)
                events.append(TraceEvent("attach", i, name))
        elif attached is not None and lp.gripper < GRIPPER_CLOSED <= prev_gripper:
            events.append(TraceEvent("detach", i, attached))
            attached = None
            ee_in_object = None
        if attached is not None:
            object_poses[attached] = compose(ee, inverse(ee_in_object))
            carried_shape = scene.objects[attached].shape.transformed(object_poses[attached])
            for other, placement in scene.objects.items():
                if other == attached or scene.contact_allowed(attached, other):
                    continue
                if penetrates(carried_shape, placement.shape.transformed(object_poses[other])):
                    events.append(TraceEvent("collision", i, attached, other))
        steps.append(
            TraceStep(
                ee_pose=ee,
                gripper=lp.gripper,
                attached_object=attached,
                object_poses=dict(object_poses),
            )
        )
        prev_gripper = lp.gripper
    return ExecutionTrace(steps=tuple(steps), events=tuple(events))


def _grasp_candidate(scene, object_poses, ee: Pose) -> str | None:
    ex, ey, ez = ee.translation
    best_name, best_dist = None, GRASP_REACH
    for name in sorted(scene.objects):
        gp = object_poses[name].apply(scene.objects[name].grasp_point)
        d = math.sqrt((ex - gp[0]) ** 2 + (ey - gp[1]) ** 2 + (ez - gp[2]) ** 2)
        if d <= best_dist:
            best_name, best_dist = name, d
    return best_name


# --- success predicates --------------------------------------------------------


def check_success(trace: ExecutionTrace, task: TaskSpec) -> bool:
    """Task-specific geometric predicate at the final execution step."""
    params = task.success
    kind = params.get("kind")
    final = trace.final_step()
    if kind == "insertion":
        return _insertion_success(final, task, params)
    if kind == "threading":
        return _threading_success(final, task, params)
    raise ValidationError(f"unknown success predicate {kind!r} for task {task.name!r}")


def _point_line_distance(point, a, b) -> float:
    px, py, pz = point
    ax, ay, az = a
    bx, by, bz = b
    ab = (bx - ax, by - ay, bz - az)
    ap = (px - ax, py - ay, pz - az)
    denom = ab[0] ** 2 + ab[1] ** 2 + ab[2] ** 2
    if denom == 0:
        return math.sqrt(ap[0] ** 2 + ap[1] ** 2 + ap[2] ** 2)
    t = (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom
    d = (ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2])
    return math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)


def _insertion_success(final: TraceStep, task: TaskSpec, params: dict) -> bool:
    obj = params["object"]
    target = params["target"]
    obj_pose = final.object_poses[obj]
    target_pose = final.object_poses[target]
    shape = task.object_templates[target].shape
    if isinstance(shape, Capsule):
        axis_a, axis_b = target_pose.apply(shape.a), target_pose.apply(shape.b)
    else:
        axis_a = target_pose.translation
        axis_b = target_pose.apply(task.object_templates[target].axis)
    center = obj_pose.translation
    if _point_line_distance(center, axis_a, axis_b) > float(params["axis_radius"]):
        return False
    height = center[2] - target_pose.translation[2]
    if height > float(params["max_height"]):
        return False
    if params.get("require_released", False) and final.attached_object == obj:
        return False
    return True


def _threading_success(final: TraceStep, task: TaskSpec, params: dict) -> bool:
    obj = params["object"]
    target = params["target"]
    obj_template = task.object_templates[obj]
    target_template = task.object_templates[target]
    obj_pose = final.object_poses[obj]
    target_pose = final.object_poses[target]
    tip = obj_pose.apply(obj_template.feature_point)
    hole = target_pose.apply(target_template.feature_point)
    dist = math.dist(tip, hole)
    if dist > float(params["radius"]):
        return False
    obj_axis = rotate_vector(obj_pose.rotation, obj_template.axis)
    hole_axis = rotate_vector(target_pose.rotation, target_template.axis)
    cross = (
        obj_axis[1] * hole_axis[2] - obj_axis[2] * hole_axis[1],
        obj_axis[2] * hole_axis[0] - obj_axis[0] * hole_axis[2],
        obj_axis[0] * hole_axis[1] - obj_axis[1] * hole_axis[0],
    )
    dot = sum(a * b for a, b in zip(obj_axis, hole_axis))
    angle = math.atan2(math.sqrt(sum(c * c for c in cross)), dot)
    # The hole has no front or back: alignment is axis-symmetric.
    angle = min(angle, math.pi - angle)
    return angle <= float(params["max_axis_angle"])


# --- bridges to the planner -----------------------------------------------------


def scene_keypoints(task: TaskSpec, scene: SceneDescription) -> list[Keypoint]:
    """World keypoints per the task layout; index 0 is the end-effector slot."""
    points: list[Keypoint] = []
    for idx, ref in enumerate(task.keypoint_layout):
        if ref.object is None:
            points.append(Keypoint(idx, (0.0, 0.0, 0.0)))
            continue
        placement = scene.objects[ref.object]
        pos = (
            placement.world_feature_point() if ref.point == "feature" else placement.world_grasp_point()
        )
        points.append(Keypoint(idx, pos))
    return points


def environment_from_scene(scene: SceneDescription, exclude=()) -> SdfEnvironment:
    """Planner obstacle set from a scene, optionally excluding interaction objects."""
    primitives = tuple(
        obj.world_shape() for name, obj in sorted(scene.objects.items()) if name not in exclude
    )
    return SdfEnvironment(primitives=primitives, workspace=scene.workspace)
