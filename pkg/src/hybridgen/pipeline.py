"""Two-stage dataset expansion with success filtering.

Stage 1 grows a labeled, segmented source dataset by sampling fresh scenes,
picking source subtask segments with grasp-relative top-k selection,
adapting their data-dependent poses object-centrically, and replanning the
replanning runs under the recorded constraint plan. Stage 2 expands the
stage-1 output further with pose-only adaptation (no replanning), freely
recombining subtask segments across all stage-1 demonstrations.

Every attempt is driven by an RNG seeded with (config seed, stage, attempt
index), so outputs are byte-identical for a fixed seed regardless of the
worker count. Kept demonstrations are the first successes in attempt
order. Generated demonstrations are executed kinematically and kept only
when the task's success predicate holds and no collision was recorded.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adapt import adapt_segment, grasp_event_index, segment_context
from .constraints import ConstraintPlan, validate_plan
from .demos import Dataset, DatasetMetadata, Demonstration, LabeledPose, SubtaskSegment
from .errors import PipelineError, SamplingError, ValidationError
from .gateway import (
    Attachment,
    KIND_CONSTRAINT_PROPOSAL,
    KIND_VIDEO_ANALYSIS,
    TOKEN_ENV_VAR,
    build_request,
    fetch,
    transport_from_spec,
)
from .geometry import Pose, pose_distance
from .demos import label_from_intervals
from .planner import (
    KinematicChain,
    PlanOptions,
    PlanProblem,
    PlanWeights,
    desk_chain,
    replan,
)
from .selection import GraspCandidate, pick, relative_grasp, select_topk
from .simenv import (
    TaskSpec,
    check_success,
    environment_from_scene,
    execute,
    load_task,
    sample_scene,
    scene_keypoints,
)

FAILURE_KINDS = (
    "planner-infeasible",
    "boundary-gap",
    "execution-collision",
    "predicate-failed",
    "scene-sampling",
)


@dataclass(frozen=True)
class PipelineConfig:
    task: str = "square-analog"
    variant: str = "D1"
    stage1_attempt_target: int = 50
    stage2_attempt_target: int = 1000
    k: int = 3
    seed: int = 0
    weights: PlanWeights = PlanWeights()
    planner_max_iters: int = 60
    planner_tol: float = 1e-5
    planner_restarts: int = 2
    collision_margin: float = 0.015
    use_vlm: bool = True
    use_grt: bool = True
    transport: str = ""
    workers: int = 1
    attempt_budget_factor: int = 10
    max_boundary_gap: float = 0.05

    def __post_init__(self):
        if self.stage1_attempt_target < 1 or self.stage2_attempt_target < 1:
            raise ValidationError("generation targets must be >= 1")
        if self.k < 1:
            raise ValidationError("top-k must be >= 1")
        if self.workers < 1:
            raise ValidationError("worker count must be >= 1")

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        weights = data.get("weights", {})
        fields = {k: v for k, v in data.items() if k != "weights"}
        return PipelineConfig(
            **fields,
            weights=PlanWeights(
                lambda_p=float(weights.get("lambda_p", 100.0)),
                lambda_c=float(weights.get("lambda_c", 1.0)),
                lambda_l=float(weights.get("lambda_l", 0.1)),
                lambda_ik=float(weights.get("lambda_ik", 20.0)),
            ),
        )

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass
class StageReport:
    stage: str
    attempts: int = 0
    successes: int = 0
    failures: dict = field(default_factory=lambda: {k: 0 for k in FAILURE_KINDS})
    wall_time: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "attempts": self.attempts,
            "successes": self.successes,
            "failures": dict(self.failures),
            "wall_time": self.wall_time,
            "seed": self.seed,
        }


@dataclass
class GenerationReport:
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}


@dataclass(frozen=True)
class _AttemptOutcome:
    index: int
    demo: Demonstration | None
    failure: str | None


@dataclass(frozen=True)
class _StageContext:
    """Everything one generation attempt needs; shipped once per worker."""

    cfg: PipelineConfig
    task: TaskSpec
    stage_no: int
    candidates: tuple  # per-subtask tuples of (GraspCandidate, Demonstration)
    plan: ConstraintPlan | None
    chain: KinematicChain
    carried_margin: float


# --- shared helpers -----------------------------------------------------------


def _grasped_keypoint_index(task: TaskSpec, object_name: str | None) -> int | None:
    if object_name is None:
        return None
    for idx, ref in enumerate(task.keypoint_layout):
        if ref.object == object_name:
            return idx
    return None


def _source_candidates(dataset: Dataset, task: TaskSpec):
    """Per-subtask candidate lists over all demonstrations of a dataset."""
    per_seg: list[list] = [[] for _ in task.subtasks]
    for demo in dataset.demonstrations:
        if len(demo.segments) != len(task.subtasks):
            raise ValidationError(
                f"demo {demo.source_id!r} has {len(demo.segments)} segments, "
                f"task defines {len(task.subtasks)} subtasks"
            )
        rel = relative_grasp(
            demo.scene.objects[task.grasp_object].pose,
            demo.scene.objects[task.target_object].pose,
        )
        for seg_idx in range(len(demo.segments)):
            per_seg[seg_idx].append((GraspCandidate(demo.source_id, seg_idx, rel), demo))
    return tuple(tuple(c) for c in per_seg)


def _select_segment_sources(ctx: _StageContext, scene, rng) -> list:
    """One (candidate, demo) pair per subtask, top-k or random per config."""
    current_rel = relative_grasp(
        scene.objects[ctx.task.grasp_object].pose,
        scene.objects[ctx.task.target_object].pose,
    )
    chosen = []
    for seg_idx in range(len(ctx.task.subtasks)):
        cands = ctx.candidates[seg_idx]
        if ctx.cfg.use_grt:
            indices = select_topk(current_rel, [c for c, _ in cands], ctx.cfg.k)
        else:
            indices = list(range(len(cands)))
        chosen.append(cands[pick(indices, rng)])
    return chosen


def _stitch(ctx: _StageContext, scene, chosen):
    """Adapted segments concatenated, with spans and the grasp offset."""
    stitched: list[LabeledPose] = []
    spans: list[tuple[int, int, SubtaskSegment]] = []
    grasp_offset: Pose | None = None
    for seg_idx, (_cand, demo) in enumerate(chosen):
        seg = demo.segments[seg_idx]
        adapted = adapt_segment(demo.segment_poses(seg), segment_context(demo, seg_idx, scene))
        spans.append((len(stitched), len(stitched) + len(adapted), seg))
        stitched.extend(adapted)
        if seg.grasp_object is not None and grasp_offset is None:
            grasp_offset = demo.grasp_offset
    return stitched, spans, grasp_offset


def _rebuild_segments(spans) -> tuple[SubtaskSegment, ...]:
    return tuple(
        SubtaskSegment(start, end, seg.target_object, seg.grasp_object)
        for start, end, seg in spans
    )


def _max_step_gap(stitched) -> float:
    worst = 0.0
    for a, b in zip(stitched, stitched[1:]):
        ta, tb = a.pose.translation, b.pose.translation
        d = ((ta[0] - tb[0]) ** 2 + (ta[1] - tb[1]) ** 2 + (ta[2] - tb[2]) ** 2) ** 0.5
        worst = max(worst, d)
    return worst


def _execute_and_filter(ctx: _StageContext, stitched, scene) -> str | None:
    trace = execute(stitched, scene)
    if trace.collisions():
        return "execution-collision"
    if not check_success(trace, ctx.task):
        return "predicate-failed"
    return None


# --- stage 1 -------------------------------------------------------------------


def _replan_stages(ctx: _StageContext, stitched, spans, scene, rng):
    """Replan every replanning run, segment by segment. Returns None on failure."""
    keypoints = scene_keypoints(ctx.task, scene)
    for seg_idx, (start, end, seg) in enumerate(spans):
        if not any(p.label == "R" for p in stitched[start:end]):
            continue
        lo = start - 1 if start > 0 else start
        hi = end + 1 if end < len(stitched) else end
        sub = list(stitched[lo:hi])
        if lo < start:
            sub[0] = replace(sub[0], label="D")
        if hi > end:
            sub[-1] = replace(sub[-1], label="D")
        grasped = _grasped_keypoint_index(ctx.task, seg.grasp_object)
        attach_pose = None
        if grasped is not None:
            g = grasp_event_index(stitched)
            if g is None:
                return None
            attach_pose = stitched[g].pose
        exclude = {seg.target_object}
        if seg.grasp_object is not None:
            exclude.add(seg.grasp_object)
        margin = ctx.cfg.collision_margin + (ctx.carried_margin if seg.grasp_object else 0.0)
        problem = PlanProblem(
            trajectory=tuple(sub),
            env=environment_from_scene(scene, exclude=exclude),
            plan=ctx.plan,
            stage=seg_idx,
            chain=ctx.chain,
            weights=ctx.cfg.weights,
            keypoints=tuple(keypoints),
            grasped_keypoint=grasped,
            grasp_attach_pose=attach_pose,
            subgoal_index=(end - 1) - lo,
            options=PlanOptions(
                max_iters=ctx.cfg.planner_max_iters if ctx.cfg.use_vlm else 0,
                tol=ctx.cfg.planner_tol,
                restarts=ctx.cfg.planner_restarts,
                margin=margin,
                seed=int(rng.integers(2**31)),
            ),
        )
        result = replan(problem)
        if not result.feasible:
            return None
        for k in range(start, end):
            stitched[k] = result.trajectory[k - lo]
    return stitched


def _stage1_attempt(ctx: _StageContext, attempt_index: int) -> _AttemptOutcome:
    rng = np.random.default_rng((ctx.cfg.seed, ctx.stage_no, attempt_index))
    try:
        scene = sample_scene(
            ctx.task,
            ctx.task.variant_spec(ctx.cfg.variant),
            rng,
            variant_name=ctx.cfg.variant,
        )
    except SamplingError:
        return _AttemptOutcome(attempt_index, None, "scene-sampling")
    chosen = _select_segment_sources(ctx, scene, rng)
    stitched, spans, grasp_offset = _stitch(ctx, scene, chosen)
    planned = _replan_stages(ctx, stitched, spans, scene, rng)
    if planned is None:
        return _AttemptOutcome(attempt_index, None, "planner-infeasible")
    if _max_step_gap(planned) > ctx.cfg.max_boundary_gap:
        return _AttemptOutcome(attempt_index, None, "boundary-gap")
    failure = _execute_and_filter(ctx, planned, scene)
    if failure is not None:
        return _AttemptOutcome(attempt_index, None, failure)
    provenance = ",".join(cand.source_demo_id for cand, _ in chosen)
    demo = Demonstration(
        poses=tuple(planned),
        segments=_rebuild_segments(spans),
        scene=scene,
        source_id=f"stage{ctx.stage_no}:{attempt_index:05d}[{provenance}]",
        grasp_offset=grasp_offset,
    )
    return _AttemptOutcome(attempt_index, demo, None)


def _stage2_attempt(ctx: _StageContext, attempt_index: int) -> _AttemptOutcome:
    rng = np.random.default_rng((ctx.cfg.seed, ctx.stage_no, attempt_index))
    try:
        scene = sample_scene(
            ctx.task,
            ctx.task.variant_spec(ctx.cfg.variant),
            rng,
            variant_name=ctx.cfg.variant,
        )
    except SamplingError:
        return _AttemptOutcome(attempt_index, None, "scene-sampling")
    chosen = _select_segment_sources(ctx, scene, rng)
    stitched, spans, grasp_offset = _stitch(ctx, scene, chosen)
    failure = _execute_and_filter(ctx, stitched, scene)
    if failure is not None:
        return _AttemptOutcome(attempt_index, None, failure)
    provenance = ",".join(cand.source_demo_id for cand, _ in chosen)
    demo = Demonstration(
        poses=tuple(stitched),
        segments=_rebuild_segments(spans),
        scene=scene,
        source_id=f"stage{ctx.stage_no}:{attempt_index:05d}[{provenance}]",
        grasp_offset=grasp_offset,
    )
    return _AttemptOutcome(attempt_index, demo, None)


# --- attempt loop (serial or worker pool) ---------------------------------------

_WORKER_CTX: _StageContext | None = None


def _init_worker(ctx: _StageContext):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_attempt(index: int) -> _AttemptOutcome:
    assert _WORKER_CTX is not None
    if _WORKER_CTX.stage_no == 1:
        return _stage1_attempt(_WORKER_CTX, index)
    return _stage2_attempt(_WORKER_CTX, index)


def _run_attempts(ctx: _StageContext, target: int, report: StageReport) -> list[Demonstration]:
    budget = ctx.cfg.attempt_budget_factor * target
    attempt_fn = _stage1_attempt if ctx.stage_no == 1 else _stage2_attempt
    kept: list[Demonstration] = []
    if ctx.cfg.workers == 1:
        for index in range(budget):
            outcome = attempt_fn(ctx, index)
            _tally(report, outcome)
            if outcome.demo is not None:
                kept.append(outcome.demo)
                if len(kept) == target:
                    break
        return kept
    with multiprocessing.Pool(ctx.cfg.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
        # imap preserves attempt order, so the kept set is identical to a
        # serial run; leaving the with-block abandons any prefetched work.
        for outcome in pool.imap(_worker_attempt, range(budget), chunksize=2):
            _tally(report, outcome)
            if outcome.demo is not None:
                kept.append(outcome.demo)
                if len(kept) == target:
                    break
    return kept


def _tally(report: StageReport, outcome: _AttemptOutcome):
    report.attempts += 1
    if outcome.demo is not None:
        report.successes += 1
    else:
        report.failures[outcome.failure] = report.failures.get(outcome.failure, 0) + 1


# --- public stages ---------------------------------------------------------------


def _fetch_constraint_plan(task: TaskSpec, cfg: PipelineConfig) -> ConstraintPlan:
    transport = transport_from_spec(cfg.transport, token=os.environ.get(TOKEN_ENV_VAR))
    request = build_request(
        KIND_CONSTRAINT_PROPOSAL,
        task.description,
        [Attachment("image", f"{task.name}:annotated-scene")],
    )
    response = fetch(request, transport)
    if not response.valid or not isinstance(response.parsed, ConstraintPlan):
        raise ValidationError(
            f"constraint proposal for {task.name!r} is invalid: {list(response.violations)}"
        )
    plan = response.parsed
    if plan.num_stages != len(task.subtasks):
        raise ValidationError(
            f"constraint plan has {plan.num_stages} stages, task defines {len(task.subtasks)} subtasks"
        )
    return plan


def _carried_margin(task: TaskSpec) -> float:
    shape = task.object_templates[task.grasp_object].shape
    return shape.bounding_radius() + 0.01


def label_dataset(src: Dataset, cfg: PipelineConfig, upsample: int = 10) -> Dataset:
    """Apply recorded (or fetched) video-analysis intervals to every demo."""
    task = load_task(cfg.task)
    transport = transport_from_spec(cfg.transport, token=os.environ.get(TOKEN_ENV_VAR))
    labeled = []
    for demo in src.demonstrations:
        request = build_request(
            KIND_VIDEO_ANALYSIS, task.description, [Attachment("video", demo.source_id)]
        )
        response = fetch(request, transport)
        if not response.valid:
            raise ValidationError(
                f"video analysis for {demo.source_id!r} is invalid: {list(response.violations)}"
            )
        labeled.append(
            label_from_intervals(demo, response.parsed, fps=src.metadata.fps, upsample=upsample)
        )
    return replace(src, demonstrations=tuple(labeled))


def stage1(src: Dataset, cfg: PipelineConfig) -> tuple[Dataset, GenerationReport]:
    """First expansion: adapt + replan until the success target is met."""
    if not src.demonstrations:
        raise ValidationError("stage 1 needs at least one source demonstration")
    task = load_task(cfg.task)
    plan = _fetch_constraint_plan(task, cfg) if cfg.use_vlm else None
    if plan is not None:
        issues = validate_plan(plan)
        if issues:
            raise ValidationError(f"constraint plan is malformed: {issues}")
    ctx = _StageContext(
        cfg=cfg,
        task=task,
        stage_no=1,
        candidates=_source_candidates(src, task),
        plan=plan,
        chain=desk_chain(),
        carried_margin=_carried_margin(task),
    )
    report = StageReport(stage="stage1", seed=cfg.seed)
    start = time.perf_counter()
    kept = _run_attempts(ctx, cfg.stage1_attempt_target, report)
    report.wall_time = time.perf_counter() - start
    if not kept:
        raise PipelineError(
            f"stage 1 produced no successes in {report.attempts} attempts: {report.failures}",
            report=report,
        )
    dataset = Dataset(
        demonstrations=tuple(kept),
        metadata=DatasetMetadata(
            task=cfg.task, variant=cfg.variant, stage="stage1", seed=cfg.seed, fps=src.metadata.fps
        ),
    )
    return dataset, GenerationReport(stages=[report])


def stage2(stage1_out: Dataset, cfg: PipelineConfig) -> tuple[Dataset, GenerationReport]:
    """Second expansion: pose-only adaptation at scale, free subtask selection."""
    if not stage1_out.demonstrations:
        raise ValidationError("stage 2 needs a nonempty stage-1 dataset")
    task = load_task(cfg.task)
    ctx = _StageContext(
        cfg=cfg,
        task=task,
        stage_no=2,
        candidates=_source_candidates(stage1_out, task),
        plan=None,
        chain=desk_chain(),
        carried_margin=_carried_margin(task),
    )
    report = StageReport(stage="stage2", seed=cfg.seed)
    start = time.perf_counter()
    kept = _run_attempts(ctx, cfg.stage2_attempt_target, report)
    report.wall_time = time.perf_counter() - start
    if not kept:
        raise PipelineError(
            f"stage 2 produced no successes in {report.attempts} attempts: {report.failures}",
            report=report,
        )
    dataset = Dataset(
        demonstrations=tuple(kept),
        metadata=DatasetMetadata(
            task=cfg.task,
            variant=cfg.variant,
            stage="stage2",
            seed=cfg.seed,
            fps=stage1_out.metadata.fps,
        ),
    )
    return dataset, GenerationReport(stages=[report])


# --- reporting and validation -----------------------------------------------------


def validate_dataset(dataset: Dataset) -> list[str]:
    """Re-execute every demonstration; list the ones that no longer succeed."""
    task = load_task(dataset.metadata.task)
    failures = []
    for demo in dataset.demonstrations:
        trace = execute(list(demo.poses), demo.scene)
        if trace.collisions():
            failures.append(f"{demo.source_id}: collision on re-execution")
        elif not check_success(trace, task):
            failures.append(f"{demo.source_id}: success predicate failed on re-execution")
    return failures


def report(dataset: Dataset, generation: GenerationReport | None = None) -> tuple[str, dict]:
    """Human summary plus machine-readable statistics for a dataset."""
    lengths = [len(d.poses) for d in dataset.demonstrations]
    histogram: dict[int, int] = {}
    for n in lengths:
        histogram[n] = histogram.get(n, 0) + 1
    grasp_poses = []
    for demo in dataset.demonstrations:
        g = grasp_event_index(demo.poses)
        if g is not None:
            grasp_poses.append(demo.poses[g].pose)
    diversity = 0.0
    if len(grasp_poses) > 1:
        total, count = 0.0, 0
        for i in range(len(grasp_poses)):
            for j in range(i + 1, len(grasp_poses)):
                total += pose_distance(grasp_poses[i], grasp_poses[j])
                count += 1
        diversity = total / count
    stats = {
        "task": dataset.metadata.task,
        "variant": dataset.metadata.variant,
        "stage": dataset.metadata.stage,
        "seed": dataset.metadata.seed,
        "demonstrations": len(dataset.demonstrations),
        "trajectory_length_histogram": {str(k): v for k, v in sorted(histogram.items())},
        "mean_pairwise_grasp_pose_distance": diversity,
    }
    if generation is not None:
        stats["generation"] = generation.to_dict()
        for s in generation.stages:
            stats.setdefault("generation_success_rate", {})[s.stage] = (
                s.successes / s.attempts if s.attempts else 0.0
            )
    lines = [
        f"task: {stats['task']} variant {stats['variant']} stage {stats['stage']}",
        f"demonstrations: {stats['demonstrations']}",
        f"trajectory lengths: {stats['trajectory_length_histogram']}",
        f"grasp-pose diversity (mean pairwise distance): {diversity:.4f}",
    ]
    if generation is not None:
        for s in generation.stages:
            rate = s.successes / s.attempts if s.attempts else 0.0
            lines.append(
                f"{s.stage}: {s.successes}/{s.attempts} attempts kept ({rate:.1%}), "
                f"failures {s.failures}"
            )
    return "\n".join(lines), stats
