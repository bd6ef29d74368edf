import pytest

from app.schemas.experiment import ExperimentResult, ModeSummary
from app.services.experiment_service import check_assertions, load_spec, run_experiment
from scripts.make_examples import SPECS


def example(name: str, **overrides):
    return load_spec(dict(SPECS[name], **overrides))


def summary(mean_ate: float) -> ModeSummary:
    return ModeSummary(runs=20, mean_ate_rmse=mean_ate, std_ate_rmse=0.0, mean_rpe_trans=0.0,
                       mean_rpe_rot_deg=0.0, mean_iterations=0.0)


def test_mean_ate_assertion():
    spec = load_spec({"seeds": [1], "assertions": {"max_mean_ate_rmse": 0.01}})
    result = ExperimentResult(config_hash="x", seeds=[1], runs=[],
                              modes={"lines_on": summary(0.004), "lines_off": summary(0.012)})
    failures = check_assertions(spec, result)
    assert len(failures) == 1
    assert failures[0].startswith("lines_off: mean ATE 0.012 m over 20 seeds")


def test_noiseless_window_scale_runs_never_skip_optimization():
    spec = example("window.json", noise={"pixel_sigma": 0.0, "init_pose_sigma_t": 0.05, "init_pose_sigma_r_deg": 2.0},
                   seeds=[1, 2, 3, 4, 5], assertions={"max_ate_rmse": 1e-6})
    result = run_experiment(spec)
    assert result.assertion_failures == []
    for run in result.runs:
        assert run.skipped_optimizations == 0
        assert run.report.ate_rmse < 1e-6
    assert all(run.lines_in_window > 0 for run in result.runs if run.report.mode == "lines_on")


def test_window_example_stays_under_a_centimetre():
    result = run_experiment(example("window.json"))
    assert result.assertion_failures == []
    assert result.passed
    for mode in ("lines_on", "lines_off"):
        assert result.modes[mode].runs == 20
        assert result.modes[mode].mean_ate_rmse < 0.01


def test_lines_improve_the_ablation_example():
    result = run_experiment(example("ablation.json"))
    assert result.assertion_failures == []
    assert result.line_improvement_pct >= 5.0
    assert result.line_better_fraction >= 0.75
    assert result.modes["lines_on"].mean_ate_rmse < result.modes["lines_off"].mean_ate_rmse


@pytest.mark.parametrize("name", sorted(SPECS))
def test_example_specs_load(name):
    spec = example(name)
    assert spec.seeds == SPECS[name]["seeds"]
