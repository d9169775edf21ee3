"""Grasp-object-relative-to-target subtask selection.

Candidates are scored by how close the source scene's grasp-object pose
relative to the target object is to the same relative pose in the scene
being generated; the top-k nearest are kept and one is drawn uniformly.
A random-selection path exists for the ablation configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import DistanceWeights, Pose, compose, inverse, pose_distance


@dataclass(frozen=True)
class GraspCandidate:
    source_demo_id: str
    segment_index: int
    rel_grasp: Pose


def relative_grasp(grasp_pose_world: Pose, target_pose_world: Pose) -> Pose:
    """Pose of the grasped object expressed in the target object's frame."""
    return compose(inverse(target_pose_world), grasp_pose_world)


def select_topk(
    current_rel: Pose,
    candidates: list[GraspCandidate],
    k: int,
    w: DistanceWeights = DistanceWeights(),
) -> list[int]:
    """Indices of the k candidates nearest to current_rel, ascending by distance.

    Ties are broken by (source_demo_id, segment_index) so results do not
    depend on candidate-list order.
    """
    if not candidates:
        raise ValidationError("candidate list is empty")
    if k < 1:
        raise ValidationError("k must be >= 1")
    keyed = sorted(
        range(len(candidates)),
        key=lambda i: (
            pose_distance(current_rel, candidates[i].rel_grasp, w),
            candidates[i].source_demo_id,
            candidates[i].segment_index,
        ),
    )
    return keyed[: min(k, len(candidates))]


def pick(topk_indices: list[int], rng: np.random.Generator) -> int:
    """Uniform draw from a nonempty top-k index list."""
    if not topk_indices:
        raise ValidationError("cannot pick from an empty selection")
    return topk_indices[int(rng.integers(len(topk_indices)))]
