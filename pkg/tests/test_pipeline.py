import dataclasses
import json

import numpy as np
import pytest
from click.testing import CliRunner

from hybridgen import demos
from hybridgen.adapt import adapt_demo_stage2, grasp_event_index, segment_context, adapt_segment
from hybridgen.cli import cli
from hybridgen.errors import PipelineError, ValidationError
from hybridgen.geometry import DistanceWeights, pose_distance
from hybridgen.pipeline import (
    PipelineConfig,
    label_dataset,
    report,
    stage1,
    stage2,
    validate_dataset,
)
from hybridgen.selection import GraspCandidate
from hybridgen.simenv import check_success, execute, load_task

from .conftest import FIXTURES

RECORDED = f"recorded:{FIXTURES / 'recorded'}"


@pytest.fixture(scope="module")
def source_square():
    return demos.load(FIXTURES / "source_square.json")


@pytest.fixture(scope="module")
def cfg():
    base = PipelineConfig.from_file(FIXTURES / "config_square.json")
    return dataclasses.replace(base, transport=RECORDED)


@pytest.fixture(scope="module")
def stage1_small(source_square, cfg):
    small = dataclasses.replace(cfg, stage1_attempt_target=6)
    return stage1(source_square, small)


def test_label_dataset_applies_recorded_intervals(source_square, cfg):
    stripped = dataclasses.replace(
        source_square,
        demonstrations=tuple(
            dataclasses.replace(
                d, poses=tuple(dataclasses.replace(p, label="R") for p in d.poses)
            )
            for d in source_square.demonstrations
        ),
    )
    labeled = label_dataset(stripped, cfg)
    for fresh, committed in zip(labeled.demonstrations, source_square.demonstrations):
        assert [p.label for p in fresh.poses] == [p.label for p in committed.poses]


def test_stage1_structure_and_success(stage1_small, cfg):
    out, gen = stage1_small
    assert len(out.demonstrations) == 6
    assert out.metadata.stage == "stage1"
    assert out.metadata.task == cfg.task
    task = load_task(cfg.task)
    for demo in out.demonstrations:
        assert len(demo.segments) == len(task.subtasks)
        trace = execute(list(demo.poses), demo.scene)
        assert not trace.collisions()
        assert check_success(trace, task)
    stage = gen.stages[0]
    assert stage.successes == 6
    assert stage.attempts >= 6
    assert stage.seed == cfg.seed


def test_stage1_deterministic_bytes(source_square, cfg, tmp_path, stage1_small):
    out1, _ = stage1_small
    out2, _ = stage1(source_square, dataclasses.replace(cfg, stage1_attempt_target=6))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    demos.save(out1, p1)
    demos.save(out2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_stage1_interpolation_ablation_config():
    # VLM off: no constraint plan, zero planner iterations, pure
    # interpolation between the data-dependent anchors. The threading task
    # has no obstacle in the transit corridor, so the path succeeds end to
    # end and the replanned poses must sit exactly on the anchor chord.
    src = demos.load(FIXTURES / "source_threading.json")
    ablated = PipelineConfig(
        task="threading-analog",
        variant="D1",
        stage1_attempt_target=2,
        seed=11,
        use_vlm=False,
        transport=RECORDED,
    )
    out, _ = stage1(src, ablated)
    assert len(out.demonstrations) == 2
    for demo in out.demonstrations:
        seg = demo.segments[1]
        left = demo.poses[seg.start_index - 1].pose.translation
        right = demo.poses[seg.end_index].pose.translation
        run = [p for p in demo.segment_poses(seg) if p.label == "R"]
        assert run
        for p in run:
            t = np.asarray(p.pose.translation)
            chord = np.asarray(right) - np.asarray(left)
            rel = t - np.asarray(left)
            # Collinear with the chord: zero distance to the segment line.
            cross = np.linalg.norm(np.cross(chord, rel))
            assert cross / np.linalg.norm(chord) < 1e-9


def test_stage1_square_interpolation_fails_on_fence(source_square, cfg):
    # With the fence in the way, the interpolation-only configuration cannot
    # generate: every attempt drags the carried ring through the wall.
    ablated = dataclasses.replace(
        cfg, use_vlm=False, stage1_attempt_target=5, attempt_budget_factor=2
    )
    with pytest.raises(PipelineError) as err:
        stage1(source_square, ablated)
    assert "execution-collision" in str(err.value)


def test_stage1_grt_off_uses_random_selection(source_square, cfg):
    randomized = dataclasses.replace(cfg, use_grt=False, stage1_attempt_target=2)
    out, _ = stage1(source_square, randomized)
    assert len(out.demonstrations) == 2


def test_stage1_zero_successes_raises(source_square, cfg):
    impossible = dataclasses.replace(
        cfg, stage1_attempt_target=2, attempt_budget_factor=1, max_boundary_gap=1e-9
    )
    with pytest.raises(PipelineError):
        stage1(source_square, impossible)


def test_stage1_empty_source_rejected(cfg, source_square):
    empty = dataclasses.replace(source_square, demonstrations=())
    with pytest.raises(ValidationError):
        stage1(empty, cfg)


def test_stage2_runs_and_marks_metadata(stage1_small, cfg):
    out1, _ = stage1_small
    out2, gen = stage2(out1, dataclasses.replace(cfg, stage2_attempt_target=10))
    assert len(out2.demonstrations) == 10
    assert out2.metadata.stage == "stage2"
    task = load_task(cfg.task)
    for demo in out2.demonstrations:
        trace = execute(list(demo.poses), demo.scene)
        assert check_success(trace, task)


def test_stage2_single_demo_degenerate_selection(stage1_small, cfg):
    out1, _ = stage1_small
    single = dataclasses.replace(out1, demonstrations=out1.demonstrations[:1])
    out2, _ = stage2(single, dataclasses.replace(cfg, stage2_attempt_target=3))
    assert len(out2.demonstrations) == 3
    # All segments necessarily come from the sole stage-1 demo.
    src = out1.demonstrations[0].source_id
    for demo in out2.demonstrations:
        assert src in demo.source_id


def test_stage2_recombination_matches_whole_demo_adaptation(stage1_small, cfg):
    # When every subtask selects the same source demo, per-segment assembly
    # equals the whole-demo adaptation operation.
    out1, _ = stage1_small
    demo = out1.demonstrations[0]
    task = load_task(cfg.task)
    rng = np.random.default_rng(55)
    from hybridgen.simenv import sample_scene

    scene = sample_scene(task, task.variant_spec(cfg.variant), rng, variant_name=cfg.variant)
    whole = adapt_demo_stage2(demo, scene, GraspCandidate(demo.source_id, 0, demo.scene.objects["ring"].pose))
    stitched = []
    for i, seg in enumerate(demo.segments):
        stitched.extend(adapt_segment(demo.segment_poses(seg), segment_context(demo, i, scene)))
    assert len(stitched) == len(whole.poses)
    for a, b in zip(stitched, whole.poses):
        assert pose_distance(a.pose, b.pose, DistanceWeights(1, 1)) < 1e-12


def test_validate_dataset_detects_corruption(stage1_small):
    out1, _ = stage1_small
    assert validate_dataset(out1) == []
    # Shift a whole demo sideways: the gripper closes nowhere near the ring,
    # nothing is ever grasped, and the predicate fails on re-execution.
    broken_demo = out1.demonstrations[0]
    poses = tuple(
        dataclasses.replace(
            p,
            pose=p.pose.__class__(
                p.pose.rotation, tuple(np.add(p.pose.translation, (0.0, 0.0, 0.1)))
            ),
        )
        for p in broken_demo.poses
    )
    corrupted = dataclasses.replace(
        out1, demonstrations=(dataclasses.replace(broken_demo, poses=poses),)
    )
    failures = validate_dataset(corrupted)
    assert failures


def test_report_stats_match_hand_count(stage1_small):
    out1, gen = stage1_small
    text, stats = report(out1, gen)
    assert stats["demonstrations"] == len(out1.demonstrations)
    hist = stats["trajectory_length_histogram"]
    assert sum(hist.values()) == len(out1.demonstrations)
    lengths = sorted({len(d.poses) for d in out1.demonstrations})
    assert sorted(int(k) for k in hist) == lengths
    # Diversity proxy: recompute by hand.
    grasp_poses = [d.poses[grasp_event_index(d.poses)].pose for d in out1.demonstrations]
    total, count = 0.0, 0
    for i in range(len(grasp_poses)):
        for j in range(i + 1, len(grasp_poses)):
            total += pose_distance(grasp_poses[i], grasp_poses[j])
            count += 1
    assert stats["mean_pairwise_grasp_pose_distance"] == pytest.approx(total / count)
    assert "stage1" in text
    assert stats["generation_success_rate"]["stage1"] == pytest.approx(
        gen.stages[0].successes / gen.stages[0].attempts
    )


def test_report_empty_dataset():
    empty = demos.Dataset((), demos.DatasetMetadata(task="square-analog"))
    text, stats = report(empty)
    assert stats["demonstrations"] == 0
    assert stats["mean_pairwise_grasp_pose_distance"] == 0.0
    assert json.dumps(stats)  # machine-readable


def test_threading_pipeline_smoke():
    src = demos.load(FIXTURES / "source_threading.json")
    cfg = PipelineConfig(
        task="threading-analog",
        variant="D1",
        stage1_attempt_target=2,
        stage2_attempt_target=3,
        seed=11,
        planner_max_iters=40,
        transport=RECORDED,
    )
    out1, _ = stage1(src, cfg)
    assert len(out1.demonstrations) == 2
    out2, _ = stage2(out1, cfg)
    assert len(out2.demonstrations) == 3


def test_workers_do_not_change_bytes(source_square, cfg, tmp_path, stage1_small):
    out1, _ = stage1_small
    parallel = dataclasses.replace(cfg, stage1_attempt_target=6, workers=2)
    out2, _ = stage1(source_square, parallel)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    demos.save(out1, a)
    demos.save(out2, b)
    assert a.read_bytes() == b.read_bytes()


# --- CLI ---------------------------------------------------------------------


def run_cli(*args):
    return CliRunner().invoke(cli, args, catch_exceptions=False)


def test_cli_label_and_report(tmp_path, source_square):
    src_path = tmp_path / "src.json"
    demos.save(source_square, src_path)
    out_path = tmp_path / "labeled.json"
    result = run_cli(
        "--vlm", RECORDED, "label", str(src_path), str(out_path)
    )
    assert result.exit_code == 0, result.output
    assert out_path.exists()
    result = run_cli("report", str(out_path), "--out", str(tmp_path / "stats.json"))
    assert result.exit_code == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["demonstrations"] == 10


def test_cli_augment_small(tmp_path, source_square):
    src_path = tmp_path / "src.json"
    demos.save(source_square, src_path)
    config = json.loads((FIXTURES / "config_square.json").read_text())
    config["stage1_attempt_target"] = 2
    config["stage2_attempt_target"] = 3
    config["transport"] = RECORDED
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out1 = tmp_path / "stage1.json"
    result = run_cli("--config", str(cfg_path), "augment1", str(src_path), str(out1))
    assert result.exit_code == 0, result.output
    assert out1.exists() and (tmp_path / "stage1.json.report.json").exists()
    out2 = tmp_path / "stage2.json"
    result = run_cli("--config", str(cfg_path), "augment2", str(out1), str(out2))
    assert result.exit_code == 0, result.output
    loaded = demos.load(out2)
    assert loaded.metadata.stage == "stage2"
    result = run_cli("validate", str(out2))
    assert result.exit_code == 0, result.output


def test_cli_plan_dump(tmp_path):
    dump = tmp_path / "plan_out.json"
    result = run_cli("plan", str(FIXTURES / "corridor_problem.json"), "--dump", str(dump))
    assert result.exit_code == 0, result.output
    doc = json.loads(dump.read_text())
    assert doc["result"]["feasible"] is True
    assert "trajectory" in doc["problem"]


def test_cli_keypoints(tmp_path):
    from hybridgen.keypoints import save_response_map

    from .test_keypoints import gaussian_map

    path = tmp_path / "map.json"
    save_response_map(gaussian_map(16, 16, [(8, 8, 1.0)]), path)
    result = run_cli("keypoints", "--map", str(path), "--clusters", "1", "--top-fraction", "0.1")
    assert result.exit_code == 0
    points = json.loads(result.output)
    assert len(points) == 1


def test_cli_exit_codes(tmp_path):
    import subprocess
    import sys

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    proc = subprocess.run(
        [sys.executable, "-m", "hybridgen.cli", "report", str(bad)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    missing_recording = tmp_path / "cfg.json"
    missing_recording.write_text(
        json.dumps({"transport": f"recorded:{tmp_path}", "stage1_attempt_target": 1})
    )
    src_path = tmp_path / "src.json"
    demos.save(demos.load(FIXTURES / "source_square.json"), src_path)
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "hybridgen.cli",
            "--config",
            str(missing_recording),
            "augment1",
            str(src_path),
            str(tmp_path / "out.json"),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 3
    assert "recording not found" in proc.stderr
