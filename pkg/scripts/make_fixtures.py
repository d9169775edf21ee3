#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Writes, under tests/fixtures/:
  source_square.json     10 synthetic source demonstrations (square-analog)
  source_threading.json  3 synthetic source demonstrations (threading-analog)
  recorded/              response files keyed by request hash: one
                         video-analysis response per source demo plus one
                         constraint proposal per task
  corridor_problem.json  the committed planner feasibility fixture
  config_square.json     pipeline configuration used by the acceptance run

Every synthetic demonstration is verified to succeed in its own scene
before being written. Deterministic: fixed seeds throughout.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from hybridgen.constraints import plan_to_dict
from hybridgen.demos import (
    Dataset,
    DatasetMetadata,
    Demonstration,
    LabeledPose,
    SubtaskSegment,
    save,
)
from hybridgen.gateway import Attachment, KIND_CONSTRAINT_PROPOSAL, KIND_VIDEO_ANALYSIS, RecordedTransport, build_request
from hybridgen.geometry import Pose, compose
from hybridgen.planner import desk_chain, problem_to_dict, PlanOptions, PlanProblem, SdfEnvironment
from hybridgen.constraints import ConstraintAtom, ConstraintPlan, Keypoint
from hybridgen.scene import WorkspaceBounds
from hybridgen.sdf import Sphere
from hybridgen.simenv import check_success, execute, load_task, sample_scene

FIXTURES = ROOT / "tests" / "fixtures"
FPS = 20.0

# D-labeled time intervals, identical for every demo of a task: the start
# anchor, the precision grasp, and the insertion / threading phase.
SQUARE_INTERVALS = [
    {"start": 0, "end": 0.05},
    {"start": 0.45, "end": 0.7},
    {"start": 1.75, "end": 2.4},
]
THREADING_INTERVALS = [
    {"start": 0, "end": 0.05},
    {"start": 0.45, "end": 0.7},
    {"start": 1.65, "end": 2.0},
]


def yaw_of(pose: Pose) -> float:
    x = pose.apply((1.0, 0.0, 0.0))
    t = pose.translation
    return math.atan2(x[1] - t[1], x[0] - t[0])


def wrap_angle(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a < -math.pi:
        a += 2 * math.pi
    return a


def ee(x, y, z, yaw, grip, label) -> LabeledPose:
    return LabeledPose(Pose.from_axis_angle((0, 0, 1), yaw, (x, y, z)), grip, label)


def lerp(a, b, t):
    return a + (b - a) * t


def synth_square_demo(scene, idx: int) -> Demonstration:
    ring = scene.objects["ring"].pose
    peg = scene.objects["peg"].pose
    rx, ry, _ = ring.translation
    px, py, _ = peg.translation
    yr, yp = yaw_of(ring), yaw_of(peg)
    dyaw = wrap_angle(yp - yr)
    grasp_z = 0.038
    start = (rx - 0.05, ry + 0.04, 0.17)
    hover = (rx, ry, 0.058)
    poses = []
    poses.append(ee(*start, yr, 0.0, "D"))
    poses.append(ee(lerp(start[0], hover[0], 0.1), lerp(start[1], hover[1], 0.1), lerp(start[2], hover[2], 0.1), yr, 0.0, "D"))
    for k in range(2, 9):  # approach, replannable
        t = (k - 1) / 8
        poses.append(ee(lerp(start[0], hover[0], t), lerp(start[1], hover[1], t), lerp(start[2], hover[2], t), yr, 0.0, "R"))
    for k in range(4):  # precision descend
        poses.append(ee(rx, ry, 0.058 - 0.005 * (k + 1), yr, 0.0, "D"))
    poses.append(ee(rx, ry, grasp_z, yr, 1.0, "D"))  # close gripper
    poses.append(ee(rx, ry, 0.055, yr, 1.0, "D"))  # first lift
    n_transit = 20
    for k in range(n_transit):  # transit, replannable
        t = (k + 1) / (n_transit + 1)
        x = lerp(rx, px, t)
        y = lerp(ry, py, t)
        z = lerp(0.055, 0.156, t) + 0.12 * math.sin(math.pi * t)
        poses.append(ee(x, y, z, yr + t * dyaw, 1.0, "R"))
    for k in range(12):  # insertion descend
        z = 0.156 - (k + 1) * (0.118 / 12)
        poses.append(ee(px, py, z, yp, 1.0, "D"))
    poses.append(ee(px, py, grasp_z, yp, 0.0, "D"))  # release
    poses.append(ee(px, py, 0.082, yp, 0.0, "D"))  # retreat
    assert len(poses) == 49
    return Demonstration(
        poses=tuple(poses),
        segments=(
            SubtaskSegment(0, 15, "ring"),
            SubtaskSegment(15, 35, "peg", "ring"),
            SubtaskSegment(35, 49, "peg", "ring"),
        ),
        scene=scene,
        source_id=f"square-src-{idx:02d}",
        grasp_offset=Pose.from_translation((0, 0, 0.008)),
    )


def synth_threading_demo(scene, idx: int) -> Demonstration:
    rod = scene.objects["rod"].pose
    post = scene.objects["post"].pose
    yr, yp = yaw_of(rod), yaw_of(post)
    dyaw = wrap_angle(yp - yr)
    offset_local = (-0.03, 0.0, 0.008)  # end-effector in the rod frame

    def ee_for_rod(rod_pose: Pose, grip, label) -> LabeledPose:
        p = compose(rod_pose, Pose.from_translation(offset_local))
        return LabeledPose(p, grip, label)

    grasp_pt = rod.apply((-0.03, 0.0, 0.0))
    hole = post.apply((0.0, 0.0, 0.13))
    axis_w = np.subtract(post.apply((1.0, 0.0, 0.0)), post.translation)
    # The rod origin sits 0.05 behind the tip along its own axis.
    pre_origin = np.subtract(hole, 0.11 * axis_w)
    end_origin = np.subtract(hole, 0.05 * axis_w)

    start = (grasp_pt[0] - 0.05, grasp_pt[1] + 0.04, 0.17)
    hover = (grasp_pt[0], grasp_pt[1], 0.036)
    poses = []
    poses.append(ee(*start, yr, 0.0, "D"))
    poses.append(ee(lerp(start[0], hover[0], 0.1), lerp(start[1], hover[1], 0.1), lerp(start[2], hover[2], 0.1), yr, 0.0, "D"))
    for k in range(2, 9):
        t = (k - 1) / 8
        poses.append(ee(lerp(start[0], hover[0], t), lerp(start[1], hover[1], t), lerp(start[2], hover[2], t), yr, 0.0, "R"))
    for k in range(4):
        poses.append(ee(grasp_pt[0], grasp_pt[1], 0.036 - 0.005 * (k + 1), yr, 0.0, "D"))
    poses.append(ee(grasp_pt[0], grasp_pt[1], 0.016, yr, 1.0, "D"))  # close
    poses.append(ee(grasp_pt[0], grasp_pt[1], 0.04, yr, 1.0, "D"))  # lift
    n_transit = 18
    for k in range(n_transit):
        t = (k + 1) / (n_transit + 1)
        origin = (
            lerp(rod.translation[0], pre_origin[0], t),
            lerp(rod.translation[1], pre_origin[1], t),
            lerp(0.032, pre_origin[2], t) + 0.09 * math.sin(math.pi * t),
        )
        rod_pose = Pose.from_axis_angle((0, 0, 1), yr + t * dyaw, origin)
        poses.append(ee_for_rod(rod_pose, 1.0, "R"))
    for k in range(8):  # threading slide
        t = (k + 1) / 8
        origin = tuple(lerp(np.array(pre_origin), np.array(end_origin), t))
        rod_pose = Pose.from_axis_angle((0, 0, 1), yp, origin)
        poses.append(ee_for_rod(rod_pose, 1.0, "D"))
    assert len(poses) == 41
    return Demonstration(
        poses=tuple(poses),
        segments=(
            SubtaskSegment(0, 15, "rod"),
            SubtaskSegment(15, 33, "post", "rod"),
            SubtaskSegment(33, 41, "post", "rod"),
        ),
        scene=scene,
        source_id=f"threading-src-{idx:02d}",
        grasp_offset=Pose.from_translation(offset_local),
    )


def apply_labels(demo: Demonstration, intervals) -> Demonstration:
    from hybridgen.demos import label_from_intervals

    return label_from_intervals(demo, intervals, fps=FPS, upsample=10)


def build_source(task_name, intervals, synth, count, seed) -> Dataset:
    task = load_task(task_name)
    demos = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        scene = sample_scene(task, task.variant_spec("D1"), rng, variant_name="D1")
        demo = synth(scene, i)
        labeled = apply_labels(demo, intervals)
        # Label layout must reproduce the hand-designed D/R structure.
        assert [p.label for p in labeled.poses] == [p.label for p in demo.poses], (
            task_name,
            i,
            [p.label for p in labeled.poses],
        )
        trace = execute(list(demo.poses), scene)
        assert not trace.collisions(), (task_name, i, trace.collisions())
        assert check_success(trace, task), (task_name, i)
        demos.append(labeled)
    return Dataset(
        demonstrations=tuple(demos),
        metadata=DatasetMetadata(task=task_name, variant="D1", stage="source", seed=seed, fps=FPS),
    )


def record(directory: Path, request, raw_text: str):
    path = RecordedTransport.record_path(directory, request)
    path.write_text(json.dumps({"raw_text": raw_text}, indent=1) + "\n")
    return path


def fenced(doc) -> str:
    return "```json\n" + json.dumps(doc, indent=1) + "\n```\n"


def square_constraint_plan() -> ConstraintPlan:
    return ConstraintPlan(
        num_stages=3,
        atoms=(
            ConstraintAtom("point_offset", 0, "subgoal", i=0, j=1, offset=(0, 0, 0.008), tolerance=0.005),
            ConstraintAtom("point_offset", 1, "subgoal", i=0, j=2, offset=(0, 0, 0.036), tolerance=0.015),
            ConstraintAtom("height_above", 1, "subgoal", i=0, j=3, min_height=0.02),
            ConstraintAtom("grasp_maintained", 1, "path", keypoint=1),
            ConstraintAtom("point_offset", 2, "subgoal", i=1, j=2, offset=(0, 0, -0.09), tolerance=0.02),
            ConstraintAtom("grasp_maintained", 2, "path", keypoint=1),
        ),
        grasp_keypoints=(1, -1, -1),
        release_keypoints=(-1, -1, 1),
    )


def threading_constraint_plan() -> ConstraintPlan:
    return ConstraintPlan(
        num_stages=3,
        atoms=(
            ConstraintAtom("point_offset", 0, "subgoal", i=0, j=1, offset=(0, 0, 0.008), tolerance=0.005),
            ConstraintAtom("point_offset", 1, "subgoal", i=0, j=2, offset=(0, 0, 0.008), tolerance=0.15),
            ConstraintAtom("grasp_maintained", 1, "path", keypoint=1),
            ConstraintAtom("grasp_maintained", 2, "path", keypoint=1),
        ),
        grasp_keypoints=(1, -1, -1),
        release_keypoints=(-1, -1, -1),
    )


def write_recordings(recorded_dir: Path):
    recorded_dir.mkdir(parents=True, exist_ok=True)
    for task_name, intervals, count, plan in (
        ("square-analog", SQUARE_INTERVALS, 10, square_constraint_plan()),
        ("threading-analog", THREADING_INTERVALS, 3, threading_constraint_plan()),
    ):
        task = load_task(task_name)
        prefix = "square" if task_name == "square-analog" else "threading"
        for i in range(count):
            request = build_request(
                KIND_VIDEO_ANALYSIS,
                task.description,
                [Attachment("video", f"{prefix}-src-{i:02d}")],
            )
            record(recorded_dir, request, fenced(intervals))
        request = build_request(
            KIND_CONSTRAINT_PROPOSAL,
            task.description,
            [Attachment("image", f"{task_name}:annotated-scene")],
        )
        record(recorded_dir, request, "```json\n" + json.dumps(plan_to_dict(plan), indent=1) + "\n```\n")


def corridor_problem() -> PlanProblem:
    n = 16
    poses = []
    for i in range(n):
        t = i / (n - 1)
        label = "D" if i in (0, n - 1) else "R"
        poses.append(LabeledPose(Pose.from_translation((-0.3 + 0.6 * t, 0.0, 0.1)), 0.0, label))
    plan = ConstraintPlan(
        num_stages=1,
        atoms=(ConstraintAtom("height_above", 0, "path", i=0, j=1, min_height=0.05),),
        grasp_keypoints=(-1,),
        release_keypoints=(-1,),
    )
    env = SdfEnvironment(
        (Sphere((0.0, 0.02, 0.06), 0.08),),
        WorkspaceBounds((-0.35, -0.35, -0.01), (0.35, 0.35, 0.45)),
    )
    return PlanProblem(
        trajectory=tuple(poses),
        env=env,
        plan=plan,
        stage=0,
        chain=desk_chain(),
        keypoints=(Keypoint(0, (0, 0, 0)), Keypoint(1, (0, 0, 0))),
        options=PlanOptions(max_iters=150, tol=1e-6, restarts=3, margin=0.02, seed=7),
    )


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)

    square = build_source("square-analog", SQUARE_INTERVALS, synth_square_demo, 10, seed=101)
    save(square, FIXTURES / "source_square.json")
    print(f"wrote source_square.json ({len(square.demonstrations)} demos)")

    threading = build_source("threading-analog", THREADING_INTERVALS, synth_threading_demo, 3, seed=202)
    save(threading, FIXTURES / "source_threading.json")
    print(f"wrote source_threading.json ({len(threading.demonstrations)} demos)")

    write_recordings(FIXTURES / "recorded")
    print("wrote recorded responses")

    problem = corridor_problem()
    (FIXTURES / "corridor_problem.json").write_text(
        json.dumps(problem_to_dict(problem), indent=1) + "\n"
    )
    print("wrote corridor_problem.json")

    config = {
        "task": "square-analog",
        "variant": "D1",
        "stage1_attempt_target": 50,
        "stage2_attempt_target": 1000,
        "k": 3,
        "seed": 2024,
        "planner_max_iters": 55,
        "planner_tol": 1e-5,
        "planner_restarts": 2,
        "collision_margin": 0.015,
        "transport": "recorded:tests/fixtures/recorded",
        "workers": 1,
    }
    (FIXTURES / "config_square.json").write_text(json.dumps(config, indent=1) + "\n")
    print("wrote config_square.json")


if __name__ == "__main__":
    main()
