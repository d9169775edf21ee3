"""Scene data model shared by the simulator, planner, and dataset files.

Scenes are kinematic: each object is a pose plus a signed-distance shape in
the object's local frame. Objects also carry two named local points used by
the execution and success machinery: ``grasp_point`` (where the gripper must
be to attach the object) and ``feature_point`` (task-relevant location such
as a needle tip or peg top), plus a unit ``axis`` for alignment predicates.

``allowed_contacts`` lists object pairs whose interpenetration is the point
of the task (a ring sliding over its peg) and therefore not a collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError, ValidationError
from .geometry import Pose, Vec3
from .sdf import Primitive, primitive_from_dict

VARIANTS = ("D0", "D1", "D2")


@dataclass(frozen=True)
class WorkspaceBounds:
    lower: Vec3
    upper: Vec3

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(c) for c in self.lower))
        object.__setattr__(self, "upper", tuple(float(c) for c in self.upper))
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValidationError("workspace bounds must have lower < upper on every axis")

    def contains(self, point) -> bool:
        return all(lo <= p <= hi for p, lo, hi in zip(point, self.lower, self.upper))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @staticmethod
    def from_dict(data: dict) -> "WorkspaceBounds":
        return WorkspaceBounds(tuple(data["lower"]), tuple(data["upper"]))


@dataclass(frozen=True)
class ObjectPlacement:
    pose: Pose
    shape: Primitive
    grasp_point: Vec3 = (0.0, 0.0, 0.0)
    feature_point: Vec3 = (0.0, 0.0, 0.0)
    axis: Vec3 = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "grasp_point", tuple(float(c) for c in self.grasp_point))
        object.__setattr__(self, "feature_point", tuple(float(c) for c in self.feature_point))
        object.__setattr__(self, "axis", tuple(float(c) for c in self.axis))

    def world_shape(self) -> Primitive:
        return self.shape.transformed(self.pose)

    def world_grasp_point(self) -> Vec3:
        return self.pose.apply(self.grasp_point)

    def world_feature_point(self) -> Vec3:
        return self.pose.apply(self.feature_point)

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.as_list(),
            "shape": self.shape.to_dict(),
            "grasp_point": list(self.grasp_point),
            "feature_point": list(self.feature_point),
            "axis": list(self.axis),
        }

    @staticmethod
    def from_dict(data: dict) -> "ObjectPlacement":
        return ObjectPlacement(
            pose=Pose.from_list(data["pose"]),
            shape=primitive_from_dict(data["shape"]),
            grasp_point=tuple(data.get("grasp_point", (0, 0, 0))),
            feature_point=tuple(data.get("feature_point", (0, 0, 0))),
            axis=tuple(data.get("axis", (0, 0, 1))),
        )


@dataclass(frozen=True)
class SceneDescription:
    objects: dict[str, ObjectPlacement]
    workspace: WorkspaceBounds
    variant: str = "D0"
    allowed_contacts: frozenset[frozenset[str]] = frozenset()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        object.__setattr__(
            self,
            "allowed_contacts",
            frozenset(frozenset(pair) for pair in self.allowed_contacts),
        )
        for name, obj in self.objects.items():
            if not self.workspace.contains(obj.pose.translation):
                raise ValidationError(f"object {name!r} placed outside the workspace")

    def contact_allowed(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.allowed_contacts

    def to_dict(self) -> dict:
        return {
            "objects": {name: obj.to_dict() for name, obj in sorted(self.objects.items())},
            "workspace": self.workspace.to_dict(),
            "variant": self.variant,
            "allowed_contacts": sorted(sorted(pair) for pair in self.allowed_contacts),
        }

    @staticmethod
    def from_dict(data: dict) -> "SceneDescription":
        try:
            return SceneDescription(
                objects={
                    name: ObjectPlacement.from_dict(obj)
                    for name, obj in data["objects"].items()
                },
                workspace=WorkspaceBounds.from_dict(data["workspace"]),
                variant=data.get("variant", "D0"),
                allowed_contacts=frozenset(
                    frozenset(pair) for pair in data.get("allowed_contacts", [])
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed scene: {exc}") from exc


@dataclass(frozen=True)
class ObjectVariantSpec:
    """How one object is placed on environment reset.

    The position region is an axis-aligned box (lower, upper); axes may be
    degenerate (lower == upper) to pin a coordinate. Yaw is sampled
    uniformly in yaw_range and applied about world z on top of the nominal
    rotation. Fixed objects always reset to the nominal pose.
    """

    nominal: Pose
    region: tuple[Vec3, Vec3] | None = None
    yaw_range: tuple[float, float] = (0.0, 0.0)
    fixed: bool = False

    def __post_init__(self):
        if self.region is not None:
            lower = tuple(float(c) for c in self.region[0])
            upper = tuple(float(c) for c in self.region[1])
            if any(lo > hi for lo, hi in zip(lower, upper)):
                raise ValidationError("variant region needs lower <= upper on every axis")
            object.__setattr__(self, "region", (lower, upper))
        if self.yaw_range[0] > self.yaw_range[1]:
            raise ValidationError("yaw range must be ordered")


@dataclass(frozen=True)
class VariantSpec:
    objects: dict[str, ObjectVariantSpec] = field(default_factory=dict)
