"""Declarative constraint IR, atom evaluation, and the semantic cost.

A constraint plan holds stages of sub-goal and path atoms over scene
keypoints, plus per-stage grasp/release keypoint arrays. An atom's cost is
satisfied iff <= 0; the soft semantic cost squares the positive part so it
is smooth at the boundary.

Keypoint id 0 is always the end-effector. Keypoints on a grasped object
rigidly follow the end-effector between attach and release; the tracker
below reproduces that motion when atoms are evaluated along a trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParseError, ValidationError
from .geometry import Pose, Vec3, compose, inverse

GRASP_PROXIMITY = 0.01  # m, end-effector to grasp point
GRIPPER_CLOSED = 0.5

ATOM_KINDS = ("point_offset", "axis_angle", "height_above", "grasp_maintained", "within_radius")
ROLE_SUBGOAL = "subgoal"
ROLE_PATH = "path"


@dataclass(frozen=True)
class Keypoint:
    id: int
    position: Vec3

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))


@dataclass(frozen=True)
class ConstraintAtom:
    kind: str
    stage: int
    role: str
    i: int = 0
    j: int = 0
    offset: Vec3 = (0.0, 0.0, 0.0)
    tolerance: float = 0.0
    axis: Vec3 = (0.0, 0.0, 1.0)
    max_angle: float = 0.0
    min_height: float = 0.0
    point: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 0.0
    keypoint: int = 0

    def __post_init__(self):
        if self.kind not in ATOM_KINDS:
            raise ValidationError(f"unknown constraint kind {self.kind!r}")
        if self.role not in (ROLE_SUBGOAL, ROLE_PATH):
            raise ValidationError(f"constraint role must be subgoal or path, got {self.role!r}")
        if self.tolerance < 0 or self.radius < 0:
            raise ValidationError("tolerances must be nonnegative")


@dataclass(frozen=True)
class ConstraintPlan:
    num_stages: int
    atoms: tuple[ConstraintAtom, ...]
    grasp_keypoints: tuple[int, ...]
    release_keypoints: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "grasp_keypoints", tuple(int(k) for k in self.grasp_keypoints))
        object.__setattr__(self, "release_keypoints", tuple(int(k) for k in self.release_keypoints))

    def stage_atoms(self, stage: int, role: str) -> list[ConstraintAtom]:
        return [a for a in self.atoms if a.stage == stage and a.role == role]


def validate_plan(plan: ConstraintPlan) -> list[str]:
    """Structural violations of the plan, empty when well-formed."""
    violations = []
    if len(plan.grasp_keypoints) != plan.num_stages:
        violations.append(
            f"grasp_keypoints has {len(plan.grasp_keypoints)} entries for {plan.num_stages} stages"
        )
    if len(plan.release_keypoints) != plan.num_stages:
        violations.append(
            f"release_keypoints has {len(plan.release_keypoints)} entries for {plan.num_stages} stages"
        )
    for atom in plan.atoms:
        if not 0 <= atom.stage < plan.num_stages:
            violations.append(f"atom references stage {atom.stage} outside [0, {plan.num_stages})")
    grasped: set[int] = set()
    for stage in range(plan.num_stages):
        if stage < len(plan.grasp_keypoints) and plan.grasp_keypoints[stage] >= 0:
            grasped.add(plan.grasp_keypoints[stage])
            subgoals = plan.stage_atoms(stage, ROLE_SUBGOAL)
            paths = plan.stage_atoms(stage, ROLE_PATH)
            if len(subgoals) != 1:
                violations.append(
                    f"stage {stage}: grasp stages need only one sub-goal constraint, found {len(subgoals)}"
                )
            if paths:
                violations.append(f"stage {stage}: grasp stages take no path constraints")
        if stage < len(plan.release_keypoints):
            released = plan.release_keypoints[stage]
            if released >= 0 and released not in grasped:
                violations.append(
                    f"stage {stage}: keypoint {released} released without a prior grasp"
                )
    return violations


def moved_keypoints(
    base_keypoints,
    ee_pose: Pose,
    grasped_keypoint: int | None = None,
    grasp_pose_at_attach: Pose | None = None,
):
    """Keypoint positions after the end-effector has moved since attach.

    The grasped keypoint follows the end-effector rigidly relative to its
    pose at attach time; all other keypoints stay put.
    """
    points = [tuple(float(c) for c in p) for p in base_keypoints]
    if grasped_keypoint is None:
        return points
    if grasp_pose_at_attach is None:
        raise ValidationError("a grasped keypoint needs the attach-time end-effector pose")
    if not 0 <= grasped_keypoint < len(points):
        raise ValidationError(f"grasped keypoint {grasped_keypoint} does not exist")
    motion = compose(ee_pose, inverse(grasp_pose_at_attach))
    points[grasped_keypoint] = motion.apply(points[grasped_keypoint])
    return points


@dataclass
class KeypointTracker:
    """Produces current keypoint positions for a moving end-effector.

    Index 0 always mirrors the end-effector translation.
    """

    base_keypoints: list[Vec3]
    grasped_keypoint: int | None = None
    grasp_pose_at_attach: Pose | None = None

    def positions(self, ee_pose: Pose) -> list[Vec3]:
        pts = moved_keypoints(
            self.base_keypoints, ee_pose, self.grasped_keypoint, self.grasp_pose_at_attach
        )
        pts[0] = ee_pose.translation
        return pts


def _norm3(v) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def _angle_between(u, v) -> float:
    cx = u[1] * v[2] - u[2] * v[1]
    cy = u[2] * v[0] - u[0] * v[2]
    cz = u[0] * v[1] - u[1] * v[0]
    dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
    return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), dot)


def eval_atom(atom: ConstraintAtom, ee_pose: Pose, keypoints, gripper: float) -> float:
    """Cost of one atom at the current keypoint state; satisfied iff <= 0."""

    def kp(idx: int) -> Vec3:
        if not 0 <= idx < len(keypoints):
            raise ValidationError(f"constraint references keypoint {idx}, only {len(keypoints)} exist")
        return keypoints[idx]

    if atom.kind == "point_offset":
        ki, kj = kp(atom.i), kp(atom.j)
        target = (kj[0] + atom.offset[0], kj[1] + atom.offset[1], kj[2] + atom.offset[2])
        return _norm3((ki[0] - target[0], ki[1] - target[1], ki[2] - target[2])) - atom.tolerance
    if atom.kind == "axis_angle":
        ki, kj = kp(atom.i), kp(atom.j)
        vec = (ki[0] - kj[0], ki[1] - kj[1], ki[2] - kj[2])
        if _norm3(vec) < 1e-12:
            return -atom.max_angle  # coincident points carry no direction; treat as aligned
        return _angle_between(vec, atom.axis) - atom.max_angle
    if atom.kind == "height_above":
        ki, kj = kp(atom.i), kp(atom.j)
        return (kj[2] + atom.min_height) - ki[2]
    if atom.kind == "grasp_maintained":
        km = kp(atom.keypoint)
        ee = ee_pose.translation
        dist = _norm3((ee[0] - km[0], ee[1] - km[1], ee[2] - km[2]))
        return max(dist - GRASP_PROXIMITY, GRIPPER_CLOSED - gripper)
    if atom.kind == "within_radius":
        ki = kp(atom.i)
        d = (ki[0] - atom.point[0], ki[1] - atom.point[1], ki[2] - atom.point[2])
        return _norm3(d) - atom.radius
    raise ValidationError(f"unknown constraint kind {atom.kind!r}")


def semantic_cost(traj, plan: ConstraintPlan, stage: int, keypoint_tracker: KeypointTracker) -> float:
    """Soft constraint cost of one stage over its trajectory.

    Path atoms accumulate squared hinge costs at every replanning pose;
    sub-goal atoms contribute at the stage's final pose only.
    """
    if not 0 <= stage < plan.num_stages:
        raise ValidationError(f"stage {stage} outside [0, {plan.num_stages})")
    total = 0.0
    path_atoms = plan.stage_atoms(stage, ROLE_PATH)
    if path_atoms:
        for p in traj:
            if p.label != "R":
                continue
            pts = keypoint_tracker.positions(p.pose)
            for atom in path_atoms:
                total += max(eval_atom(atom, p.pose, pts, p.gripper), 0.0) ** 2
    subgoal_atoms = plan.stage_atoms(stage, ROLE_SUBGOAL)
    if subgoal_atoms and traj:
        final = traj[-1]
        pts = keypoint_tracker.positions(final.pose)
        for atom in subgoal_atoms:
            total += max(eval_atom(atom, final.pose, pts, final.gripper), 0.0) ** 2
    return total


# --- IR serialization ------------------------------------------------------

_ATOM_FIELDS = {
    "point_offset": ("i", "j", "offset", "tolerance"),
    "axis_angle": ("i", "j", "axis", "max_angle"),
    "height_above": ("i", "j", "min_height"),
    "grasp_maintained": ("keypoint",),
    "within_radius": ("i", "point", "radius"),
}


def atom_to_dict(atom: ConstraintAtom) -> dict:
    out = {"kind": atom.kind, "stage": atom.stage, "role": atom.role}
    for name in _ATOM_FIELDS[atom.kind]:
        value = getattr(atom, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def atom_from_dict(data: dict) -> ConstraintAtom:
    kind = data.get("kind")
    if kind not in _ATOM_FIELDS:
        raise ParseError(f"unknown constraint kind {kind!r}")
    kwargs = {}
    try:
        for name in _ATOM_FIELDS[kind]:
            value = data[name]
            kwargs[name] = tuple(value) if isinstance(value, list) else value
        return ConstraintAtom(kind=kind, stage=int(data["stage"]), role=str(data["role"]), **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed {kind} atom: {exc}") from exc


def plan_to_dict(plan: ConstraintPlan) -> dict:
    return {
        "num_stages": plan.num_stages,
        "grasp_keypoints": list(plan.grasp_keypoints),
        "release_keypoints": list(plan.release_keypoints),
        "atoms": [atom_to_dict(a) for a in plan.atoms],
    }


def plan_from_dict(data: dict) -> ConstraintPlan:
    try:
        return ConstraintPlan(
            num_stages=int(data["num_stages"]),
            atoms=tuple(atom_from_dict(a) for a in data["atoms"]),
            grasp_keypoints=tuple(data["grasp_keypoints"]),
            release_keypoints=tuple(data["release_keypoints"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed constraint plan: {exc}") from exc
