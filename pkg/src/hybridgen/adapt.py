"""Object-centric adaptation of source poses to a new scene.

The invariant driving everything here: the grasped object's pose relative
to the target object is carried over from the source demonstration. For a
source end-effector pose E' holding the object at G' = E' * offset^-1, the
new grasp pose is

    G = O_new * O_src^-1 * G'

and the new end-effector pose is E = G * offset. The per-pose net effect is
left-multiplication by O_new * O_src^-1, so segments transform rigidly
about their target object.

The end-effector-to-grasped-object offset is frozen per segment, captured
at the grasp event (first pose where the gripper crosses 0.5 closed).
Approach segments with no grasped object use an identity offset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .demos import Demonstration, LabeledPose
from .errors import ValidationError
from .geometry import Pose, compose, inverse
from .scene import SceneDescription
from .selection import GraspCandidate


@dataclass(frozen=True)
class AdaptationContext:
    src_target_world: Pose
    src_grasp_world: Pose
    new_target_world: Pose
    grasp_offset: Pose = Pose.identity()

    def delta(self) -> Pose:
        """Rigid map applied to every world pose of the segment."""
        return compose(self.new_target_world, inverse(self.src_target_world))


def transform_grasp(ctx: AdaptationContext) -> Pose:
    """Grasped-object pose in the new scene preserving the source relative pose."""
    return compose(ctx.delta(), ctx.src_grasp_world)


def transform_endeffector(ctx: AdaptationContext, src_ee: Pose) -> Pose:
    """End-effector pose in the new scene for one source end-effector pose.

    The object pose implied by src_ee and the frozen offset is retargeted to
    the new scene and the offset re-applied; algebraically this reduces to
    delta * src_ee.
    """
    grasp_src = compose(src_ee, inverse(ctx.grasp_offset))
    grasp_new = compose(ctx.delta(), grasp_src)
    return compose(grasp_new, ctx.grasp_offset)


def adapt_segment(segment_poses, ctx: AdaptationContext) -> list[LabeledPose]:
    """Transform every pose of a segment with one context; labels and grippers kept."""
    if not segment_poses:
        raise ValidationError("segment has no poses")
    return [replace(p, pose=transform_endeffector(ctx, p.pose)) for p in segment_poses]


def grasp_event_index(poses, threshold: float = 0.5) -> int | None:
    """Index of the first pose where the gripper crosses closed, if any."""
    prev = 0.0
    for i, p in enumerate(poses):
        if p.gripper >= threshold > prev:
            return i
        prev = p.gripper
    return None


def segment_context(
    demo: Demonstration,
    segment_index: int,
    new_scene: SceneDescription,
) -> AdaptationContext:
    """Build the adaptation context for one segment of a source demonstration.

    The source grasp reference is the grasped object's scene placement (the
    object does not move before it is grasped); segments without a grasped
    object fall back to the target object with an identity offset.
    """
    seg = demo.segments[segment_index]
    if seg.target_object not in demo.scene.objects:
        raise ValidationError(f"segment targets unknown object {seg.target_object!r}")
    if seg.target_object not in new_scene.objects:
        raise ValidationError(f"new scene is missing object {seg.target_object!r}")
    src_target = demo.scene.objects[seg.target_object].pose
    new_target = new_scene.objects[seg.target_object].pose
    if seg.grasp_object is None:
        return AdaptationContext(src_target, src_target, new_target, Pose.identity())
    if seg.grasp_object not in demo.scene.objects:
        raise ValidationError(f"segment grasps unknown object {seg.grasp_object!r}")
    if demo.grasp_offset is None:
        raise ValidationError(
            f"segment {segment_index} grasps {seg.grasp_object!r} but the demo has no grasp offset"
        )
    return AdaptationContext(
        src_target_world=src_target,
        src_grasp_world=demo.scene.objects[seg.grasp_object].pose,
        new_target_world=new_target,
        grasp_offset=demo.grasp_offset,
    )


def adapt_demo_stage2(
    demo: Demonstration,
    new_scene: SceneDescription,
    selected: GraspCandidate,
) -> Demonstration:
    """Adapt a whole demonstration to a new scene, pose transformation only.

    Every segment is rigidly retargeted to its target object's new placement;
    labels are preserved but not acted on. Provenance records the selected
    source candidate.
    """
    new_poses: list[LabeledPose] = []
    for i, seg in enumerate(demo.segments):
        ctx = segment_context(demo, i, new_scene)
        new_poses.extend(adapt_segment(demo.segment_poses(seg), ctx))
    return replace(
        demo,
        poses=tuple(new_poses),
        scene=new_scene,
        source_id=f"{selected.source_demo_id}/seg{selected.segment_index}",
    )
