"""Demonstration data model, interval-based labeling, and dataset files.

A demonstration is an ordered list of end-effector poses with gripper
commands. Each pose is labeled D (data-dependent, copied from the source
after adaptation) or R (replanning, regenerated by the optimizer). Subtask
segments partition the pose list into contiguous object-centric slices.

Time-to-index convention (fixed so fixtures are stable): a demonstration
recorded at `fps` has pose i at time i / fps; a time t maps to video index
v = round(t * fps * upsample) and on to pose index v // upsample (half-up
rounding on the video index, floor on the division). The demo duration is
(N - 1) / fps, the timestamp of the last pose.

Datasets are stored as a single self-describing JSON file with an explicit
``format_version``; round-trips are bit-exact for all numeric fields. See
docs/dataset-format.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ParseError, ValidationError, VersionError
from .geometry import Pose
from .scene import SceneDescription

FORMAT_VERSION = "1"

LABEL_DATA = "D"
LABEL_REPLAN = "R"


@dataclass(frozen=True)
class LabeledPose:
    pose: Pose
    gripper: float
    label: str = LABEL_REPLAN

    def __post_init__(self):
        if not 0.0 <= self.gripper <= 1.0:
            raise ValidationError(f"gripper command {self.gripper} outside [0, 1]")
        if self.label not in (LABEL_DATA, LABEL_REPLAN):
            raise ValidationError(f"pose label must be 'D' or 'R', got {self.label!r}")


@dataclass(frozen=True)
class SubtaskSegment:
    """Half-open pose index range [start_index, end_index) targeting one object."""

    start_index: int
    end_index: int
    target_object: str
    grasp_object: str | None = None


@dataclass(frozen=True)
class Demonstration:
    poses: tuple[LabeledPose, ...]
    segments: tuple[SubtaskSegment, ...]
    scene: SceneDescription
    source_id: str
    grasp_offset: Pose | None = None

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "segments", tuple(self.segments))
        _check_segment_cover(self.segments, len(self.poses))

    def segment_poses(self, segment: SubtaskSegment) -> tuple[LabeledPose, ...]:
        return self.poses[segment.start_index : segment.end_index]


@dataclass(frozen=True)
class DatasetMetadata:
    task: str
    variant: str = "D0"
    stage: str = "source"
    seed: int = 0
    fps: float = 20.0

    def __post_init__(self):
        if self.stage not in ("source", "stage1", "stage2"):
            raise ValidationError(f"unknown generation stage {self.stage!r}")


@dataclass(frozen=True)
class Dataset:
    demonstrations: tuple[Demonstration, ...]
    metadata: DatasetMetadata

    def __post_init__(self):
        object.__setattr__(self, "demonstrations", tuple(self.demonstrations))


def _check_segment_cover(segments, n_poses: int):
    if not segments and n_poses == 0:
        return
    if not segments:
        raise ValidationError("demonstration has poses but no segments")
    prev = 0
    for seg in segments:
        if seg.start_index != prev:
            raise ValidationError(
                f"segments must be contiguous: expected start {prev}, got {seg.start_index}"
            )
        if seg.end_index <= seg.start_index:
            raise ValidationError(f"segment [{seg.start_index}, {seg.end_index}) is empty")
        prev = seg.end_index
    if prev != n_poses:
        raise ValidationError(f"segments cover [0, {prev}) but demo has {n_poses} poses")


def label_from_intervals(demo: Demonstration, intervals, fps: float, upsample: int = 10) -> Demonstration:
    """Label poses D inside the given time intervals (seconds), R elsewhere."""
    if fps <= 0:
        raise ValidationError("fps must be positive")
    if upsample < 1:
        raise ValidationError("upsample factor must be >= 1")
    spans = sorted((float(iv["start"]), float(iv["end"])) for iv in intervals)
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValidationError(f"intervals overlap: [{s0}, {e0}] and starting {s1}")
    n = len(demo.poses)
    duration = (n - 1) / fps
    is_data = [False] * n
    for start, end in spans:
        if start < 0 or end < start:
            raise ValidationError(f"malformed interval [{start}, {end}]")
        if end > duration + 1e-9:
            raise IndexError(f"interval end {end} s exceeds demo duration {duration} s")
        i0 = round(start * fps * upsample) // upsample
        i1 = round(end * fps * upsample) // upsample
        for i in range(i0, min(i1, n - 1) + 1):
            is_data[i] = True
    poses = tuple(
        replace(p, label=LABEL_DATA if flag else LABEL_REPLAN)
        for p, flag in zip(demo.poses, is_data)
    )
    return replace(demo, poses=poses)


def attach_segments(demo: Demonstration, boundaries) -> Demonstration:
    """Attach subtask segments from boundary records {end_index, target_object, grasp_object?}."""
    segments = []
    prev = 0
    for b in boundaries:
        end = int(b["end_index"])
        if end <= prev:
            raise ValidationError(f"segment boundaries must be strictly increasing, got {end} after {prev}")
        segments.append(
            SubtaskSegment(prev, end, str(b["target_object"]), b.get("grasp_object"))
        )
        prev = end
    if prev != len(demo.poses):
        raise ValidationError(f"last boundary {prev} must equal pose count {len(demo.poses)}")
    return replace(demo, segments=tuple(segments))


# --- serialization ---------------------------------------------------------


def _demo_to_dict(demo: Demonstration) -> dict:
    return {
        "source_id": demo.source_id,
        "grasp_offset": None if demo.grasp_offset is None else demo.grasp_offset.as_list(),
        "poses": [[*p.pose.as_list(), p.gripper, p.label] for p in demo.poses],
        "segments": [
            {
                "start_index": s.start_index,
                "end_index": s.end_index,
                "target_object": s.target_object,
                "grasp_object": s.grasp_object,
            }
            for s in demo.segments
        ],
        "scene": demo.scene.to_dict(),
    }


def _demo_from_dict(data: dict) -> Demonstration:
    poses = []
    for row in data["poses"]:
        if len(row) != 9:
            raise ParseError(f"pose row must have 9 entries, got {len(row)}")
        poses.append(LabeledPose(Pose.from_list(row[:7]), float(row[7]), str(row[8])))
    segments = [
        SubtaskSegment(
            int(s["start_index"]), int(s["end_index"]), s["target_object"], s.get("grasp_object")
        )
        for s in data["segments"]
    ]
    return Demonstration(
        poses=tuple(poses),
        segments=tuple(segments),
        scene=SceneDescription.from_dict(data["scene"]),
        source_id=str(data["source_id"]),
        grasp_offset=None if data["grasp_offset"] is None else Pose.from_list(data["grasp_offset"]),
    )


def save(dataset: Dataset, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "metadata": {
            "task": dataset.metadata.task,
            "variant": dataset.metadata.variant,
            "stage": dataset.metadata.stage,
            "seed": dataset.metadata.seed,
            "fps": dataset.metadata.fps,
        },
        "demonstrations": [_demo_to_dict(d) for d in dataset.demonstrations],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load(path) -> Dataset:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid dataset JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise ParseError("dataset file must contain a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    try:
        meta = doc["metadata"]
        metadata = DatasetMetadata(
            task=str(meta["task"]),
            variant=str(meta["variant"]),
            stage=str(meta["stage"]),
            seed=int(meta["seed"]),
            fps=float(meta["fps"]),
        )
        demos = tuple(_demo_from_dict(d) for d in doc["demonstrations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed dataset content: {exc}") from exc
    return Dataset(demonstrations=demos, metadata=metadata)
