"""Command-line interface.

Exit codes: 0 success, 2 validation or parse error, 3 pipeline error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import demos, keypoints as kp, pipeline
from .errors import HybridgenError, ParseError, ValidationError
from .planner import problem_from_dict, problem_to_dict, replan, result_to_dict


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="pipeline config JSON")
@click.option("--seed", type=int, default=None, help="override the RNG seed")
@click.option("--workers", type=int, default=None, help="attempt-level worker processes")
@click.option("--vlm", "transport", default=None, help="recorded:<dir> or http(s)://<url>")
@click.pass_context
def cli(ctx, config, seed, workers, transport):
    """Demonstration augmentation: adapt, replan, execute, filter."""
    cfg = pipeline.PipelineConfig.from_file(config) if config else pipeline.PipelineConfig()
    overrides = {"seed": seed, "workers": workers, "transport": transport}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    ctx.obj = cfg


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.option("--upsample", type=int, default=10, show_default=True)
@click.pass_obj
def label(cfg, input_path, output_path, upsample):
    """Label a source dataset from recorded video-analysis intervals."""
    src = demos.load(input_path)
    labeled = pipeline.label_dataset(src, cfg, upsample=upsample)
    demos.save(labeled, output_path)
    click.echo(f"labeled {len(labeled.demonstrations)} demonstrations -> {output_path}")


def _write_report(report: pipeline.GenerationReport, output_path: str):
    path = Path(output_path).with_suffix(Path(output_path).suffix + ".report.json")
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return path


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.pass_obj
def augment1(cfg, input_path, output_path):
    """First expansion: adaptation plus constraint-guided replanning."""
    src = demos.load(input_path)
    out, report = pipeline.stage1(src, cfg)
    demos.save(out, output_path)
    report_path = _write_report(report, output_path)
    stage = report.stages[0]
    click.echo(
        f"stage1 kept {stage.successes}/{stage.attempts} attempts -> {output_path} "
        f"(report {report_path})"
    )


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.pass_obj
def augment2(cfg, input_path, output_path):
    """Second expansion: pose-only adaptation at scale."""
    src = demos.load(input_path)
    out, report = pipeline.stage2(src, cfg)
    demos.save(out, output_path)
    report_path = _write_report(report, output_path)
    stage = report.stages[0]
    click.echo(
        f"stage2 kept {stage.successes}/{stage.attempts} attempts -> {output_path} "
        f"(report {report_path})"
    )


@cli.command()
@click.argument("problem_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dump", type=click.Path(dir_okay=False), help="write problem+result JSON")
def plan(problem_path, dump):
    """Solve a single replanning problem from a JSON file."""
    problem = problem_from_dict(json.loads(Path(problem_path).read_text()))
    result = replan(problem)
    click.echo(
        f"feasible={result.feasible} converged={result.converged} "
        f"iterations={result.iterations} total={result.costs['total']:.6g}"
    )
    if dump:
        doc = {"problem": problem_to_dict(problem), "result": result_to_dict(result)}
        Path(dump).write_text(json.dumps(doc, indent=2) + "\n")
        click.echo(f"dumped -> {dump}")
    if not result.feasible:
        sys.exit(3)


@cli.command()
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
def validate(dataset_path):
    """Re-execute every demonstration and re-check success."""
    dataset = demos.load(dataset_path)
    failures = pipeline.validate_dataset(dataset)
    if failures:
        for line in failures:
            click.echo(line, err=True)
        sys.exit(3)
    click.echo(f"all {len(dataset.demonstrations)} demonstrations re-verify")


@cli.command("report")
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--generation-report", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="write stats JSON here")
def report_cmd(dataset_path, generation_report, out):
    """Dataset statistics: counts, length histogram, diversity proxy."""
    dataset = demos.load(dataset_path)
    generation = None
    if generation_report:
        doc = json.loads(Path(generation_report).read_text())
        generation = pipeline.GenerationReport(
            stages=[
                pipeline.StageReport(
                    stage=s["stage"],
                    attempts=s["attempts"],
                    successes=s["successes"],
                    failures=s["failures"],
                    wall_time=s.get("wall_time", 0.0),
                    seed=s.get("seed", 0),
                )
                for s in doc["stages"]
            ]
        )
    text, stats = pipeline.report(dataset, generation)
    click.echo(text)
    if out:
        Path(out).write_text(json.dumps(stats, indent=2) + "\n")


@cli.command("keypoints")
@click.option("--map", "map_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clusters", type=int, default=5, show_default=True)
@click.option("--top-fraction", type=float, default=0.2, show_default=True)
@click.option("--bandwidth", type=float, default=0.04, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def keypoints_cmd(map_path, clusters, top_fraction, bandwidth, seed):
    """Extract 3D keypoints from a response-map file."""
    resp = kp.load_response_map(map_path)
    cfg = kp.ExtractionConfig(
        num_clusters=clusters, top_fraction=top_fraction, merge_bandwidth=bandwidth
    )
    points = kp.extract(resp, cfg, np.random.default_rng(seed))
    click.echo(json.dumps([{"id": p.id, "position": list(p.position)} for p in points]))


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(130)
    except (ValidationError, ParseError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except HybridgenError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
