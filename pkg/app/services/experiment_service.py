"""Experiment driver: spec loading, the triangulate/optimize pipeline and report files."""
import csv
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation
from sqlalchemy.orm import Session

from app.core.config import settings
from app.core.errors import ConfigError, UnderconstrainedError
from app.core.lie import so3_exp
from app.models.geometry import Pose
from app.models.scene import SyntheticScene, Trajectory
from app.models.window import KeyframeState, Observation, WindowState
from app.schemas.evaluation import EvalReport
from app.schemas.experiment import ExperimentResult, ExperimentSpec, ModeSummary, RunMetrics
from app.schemas.window import SlidePolicy, SolverConfig, WindowReport
from app.services import run_service
from app.services.evaluation_service import evaluate_trajectory, format_tum
from app.services.simulation_service import generate_scene, project_scene
from app.services.window_service import (
    optimize_window,
    slide_window,
    triangulate_new_lines,
    triangulate_new_points,
)

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["seed", "mode", "ate_rmse", "rpe_trans", "rpe_rot_deg", "iterations",
               "final_cost", "lines_in_window", "points_in_window"]


def load_spec(source: Union[str, Path, Dict[str, Any]]) -> ExperimentSpec:
    """Validate an experiment spec from a JSON file path or a parsed document."""
    if isinstance(source, dict):
        document = source
    else:
        try:
            document = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError(str(source), f"cannot read spec file: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(document, dict):
        raise ConfigError("$", "spec must be a JSON object")
    try:
        return ExperimentSpec.model_validate(document)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "$"
        raise ConfigError(path, first["msg"])


def config_hash(spec: ExperimentSpec) -> str:
    canonical = json.dumps(spec.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def initial_keyframe(scene: SyntheticScene, k: int, spec: ExperimentSpec, rng: np.random.Generator) -> KeyframeState:
    """Ground truth for the two gauge keyframes, perturbed ground truth after them."""
    pose = scene.poses[k]
    if k >= 2:
        dt = spec.noise.init_pose_sigma_t * rng.standard_normal(3)
        dphi = np.radians(spec.noise.init_pose_sigma_r_deg) * rng.standard_normal(3)
        R = Rotation.from_matrix(pose.R @ so3_exp(dphi)).as_matrix()
        pose = Pose(R, pose.t + dt, "body", "world")
    return KeyframeState.from_pose(k, pose, float(scene.timestamps[k]))


def _refine(state: WindowState, solver: SolverConfig, context: str) -> Tuple[WindowState, Optional[WindowReport]]:
    """Optimize the window; the report is None when the window is underconstrained."""
    try:
        return optimize_window(state, config=solver)
    except UnderconstrainedError as exc:
        logger.warning("%s: optimization skipped, %s", context, exc)
        return state, None


def run_pipeline(
    scene: SyntheticScene,
    observations: Sequence[Sequence[Observation]],
    spec: ExperimentSpec,
    mode: str,
    seed: int,
) -> Tuple[Trajectory, RunMetrics]:
    """Insert keyframes one by one, optimizing the window before triangulating new tracks.

    The new keyframe is first refined against the landmarks already in the
    window, so tracks it starts are triangulated from a corrected pose. A
    last optimization after the final keyframe takes in its new landmarks.

    Returns the estimated trajectory of every keyframe, taken from the
    window when the keyframe leaves it or at the end of the sequence.
    """
    use_lines = mode == "lines_on"
    solver = spec.solver.model_copy(update={"use_lines": use_lines})
    capacity = spec.window_capacity or settings.WINDOW_CAPACITY
    policy = SlidePolicy(capacity=capacity)
    rng = np.random.default_rng([seed, 2])

    state = WindowState(keyframes=[], camera=scene.camera, T_bc=scene.T_bc, capacity=capacity)
    estimates: Dict[int, Pose] = {}
    iterations = 0
    skipped = 0
    final_cost = 0.0

    def refine(context: str) -> None:
        nonlocal state, iterations, skipped, final_cost
        if len(state.keyframes) < 2 or not (state.points or state.lines):
            return
        state, report = _refine(state, solver, f"seed {seed} {mode} {context}")
        if report is None:
            skipped += 1
            return
        iterations += report.iterations
        final_cost = report.final_cost

    for k in range(scene.n_keyframes):
        if len(state.keyframes) >= capacity:
            oldest = state.keyframes[0]
            estimates[oldest.frame_id] = oldest.pose
        state = slide_window(state, initial_keyframe(scene, k, spec, rng), policy, observations[k])
        refine(f"keyframe {k}")
        state, _ = triangulate_new_points(state, config=solver)
        if use_lines:
            state, _ = triangulate_new_lines(state, config=solver)
    refine("final window")

    for kf in state.keyframes:
        estimates[kf.frame_id] = kf.pose
    ordered = [estimates[k] for k in range(scene.n_keyframes)]
    trajectory = Trajectory.from_poses(scene.timestamps, ordered)
    metrics = RunMetrics(
        report=EvalReport(ate_rmse=0.0, rpe_trans=0.0, rpe_rot_deg=0.0, rpe_delta=spec.evaluation.rpe_delta,
                          rpe_pairs=0, n_poses=len(ordered)),
        iterations=iterations,
        final_cost=final_cost,
        lines_in_window=len(state.lines),
        points_in_window=len(state.points),
        skipped_optimizations=skipped,
    )
    return trajectory, metrics


def _summaries(runs: List[RunMetrics]) -> Dict[str, ModeSummary]:
    summaries = {}
    for mode in sorted({run.report.mode for run in runs}):
        subset = [run for run in runs if run.report.mode == mode]
        ate = np.array([run.report.ate_rmse for run in subset])
        summaries[mode] = ModeSummary(
            runs=len(subset),
            mean_ate_rmse=float(ate.mean()),
            std_ate_rmse=float(ate.std()),
            mean_rpe_trans=float(np.mean([run.report.rpe_trans for run in subset])),
            mean_rpe_rot_deg=float(np.mean([run.report.rpe_rot_deg for run in subset])),
            mean_iterations=float(np.mean([run.iterations for run in subset])),
        )
    return summaries


def _line_comparison(runs: List[RunMetrics]) -> Tuple[Optional[float], Optional[float]]:
    by_seed: Dict[int, Dict[str, float]] = {}
    for run in runs:
        by_seed.setdefault(run.report.seed, {})[run.report.mode] = run.report.ate_rmse
    paired = [v for v in by_seed.values() if "lines_on" in v and "lines_off" in v]
    if not paired:
        return None, None
    mean_on = float(np.mean([v["lines_on"] for v in paired]))
    mean_off = float(np.mean([v["lines_off"] for v in paired]))
    improvement = 100.0 * (mean_off - mean_on) / mean_off if mean_off > 0 else 0.0
    better = float(np.mean([v["lines_on"] < v["lines_off"] for v in paired]))
    return improvement, better


def check_assertions(spec: ExperimentSpec, result: ExperimentResult) -> List[str]:
    failures = []
    assertions = spec.assertions
    if assertions is None:
        return failures
    if assertions.max_ate_rmse is not None:
        for run in result.runs:
            if run.report.ate_rmse > assertions.max_ate_rmse:
                failures.append(f"seed {run.report.seed} {run.report.mode}: ATE {run.report.ate_rmse:.6g} m "
                                f"exceeds {assertions.max_ate_rmse:.6g} m")
    if assertions.max_mean_ate_rmse is not None:
        for mode, summary in result.modes.items():
            if summary.mean_ate_rmse > assertions.max_mean_ate_rmse:
                failures.append(f"{mode}: mean ATE {summary.mean_ate_rmse:.6g} m over {summary.runs} seeds "
                                f"exceeds {assertions.max_mean_ate_rmse:.6g} m")
    if assertions.min_line_improvement_pct is not None:
        if result.line_improvement_pct is None:
            failures.append("line improvement needs both lines_on and lines_off runs")
        elif result.line_improvement_pct < assertions.min_line_improvement_pct:
            failures.append(f"line improvement {result.line_improvement_pct:.3f}% below "
                            f"{assertions.min_line_improvement_pct:.3f}%")
    if assertions.min_line_better_fraction is not None:
        if result.line_better_fraction is None:
            failures.append("line better fraction needs both lines_on and lines_off runs")
        elif result.line_better_fraction < assertions.min_line_better_fraction:
            failures.append(f"lines improved {result.line_better_fraction:.3f} of seeds, below "
                            f"{assertions.min_line_better_fraction:.3f}")
    return failures


def runs_csv(runs: List[RunMetrics]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RUN_COLUMNS)
    for run in runs:
        r = run.report
        writer.writerow([r.seed, r.mode, f"{r.ate_rmse:.9g}", f"{r.rpe_trans:.9g}", f"{r.rpe_rot_deg:.9g}",
                         run.iterations, f"{run.final_cost:.9g}", run.lines_in_window, run.points_in_window])
    return buffer.getvalue()


def aggregate_json(result: ExperimentResult) -> str:
    document = {
        "config_hash": result.config_hash,
        "seeds": result.seeds,
        "modes": {mode: summary.model_dump() for mode, summary in result.modes.items()},
        "line_improvement_pct": result.line_improvement_pct,
        "line_better_fraction": result.line_better_fraction,
        "assertion_failures": result.assertion_failures,
        "passed": result.passed,
    }
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def run_experiment(
    spec: ExperimentSpec,
    out_dir: Optional[Union[str, Path]] = None,
    db: Optional[Session] = None,
) -> ExperimentResult:
    """Run every seed in every ablation mode and evaluate against ground truth.

    Report files are written only once all seeds finished, so a failure
    leaves no partial output behind.
    """
    digest = config_hash(spec)
    runs: List[RunMetrics] = []
    files: Dict[str, str] = {}
    for seed in spec.seeds:
        scene = generate_scene(spec.scene, seed)
        observations = project_scene(scene, spec.noise.pixel_sigma, seed)
        truth = scene.trajectory
        files[f"gt_{seed}.tum"] = format_tum(truth)
        for mode in spec.ablation.modes:
            estimate, metrics = run_pipeline(scene, observations, spec, mode, seed)
            report = evaluate_trajectory(estimate, truth, spec.evaluation.rpe_delta, spec.evaluation.align)
            metrics.report = report.model_copy(update={"seed": seed, "mode": mode, "config_hash": digest})
            runs.append(metrics)
            files[f"traj_{seed}_{mode}.tum"] = format_tum(estimate)
            logger.info("seed %d %s: ATE %.6g m, RPE %.6g m / %.6g deg",
                        seed, mode, report.ate_rmse, report.rpe_trans, report.rpe_rot_deg)

    improvement, better = _line_comparison(runs)
    result = ExperimentResult(
        config_hash=digest,
        seeds=list(spec.seeds),
        runs=runs,
        modes=_summaries(runs),
        line_improvement_pct=improvement,
        line_better_fraction=better,
    )
    result.assertion_failures = check_assertions(spec, result)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["runs.csv"] = runs_csv(runs)
        files["aggregate.json"] = aggregate_json(result)
        for name, content in sorted(files.items()):
            (out / name).write_text(content)
    if db is not None:
        run_service.record_reports(db, result)

    for mode, summary in result.modes.items():
        logger.info("%s: mean ATE %.6g m over %d seeds", mode, summary.mean_ate_rmse, summary.runs)
    if result.assertion_failures:
        logger.warning("%d experiment assertions failed", len(result.assertion_failures))
    return result
