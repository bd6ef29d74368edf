import numpy as np
import pytest

from app.core.errors import ArgumentError
from app.core.lie import so3_exp
from app.models.geometry import Pose
from app.models.scene import Trajectory
from app.services.evaluation_service import (
    ate_rmse,
    evaluate_trajectory,
    format_tum,
    parse_delta,
    parse_tum,
    read_tum,
    rpe,
    write_tum,
)


def straight_line(n=10, step=0.1, dt=0.5):
    poses = [Pose(np.eye(3), [k * step, 0.0, 0.0]) for k in range(n)]
    return Trajectory.from_poses(np.arange(n) * dt, poses)


def scattered(seed=0, n=20):
    rng = np.random.default_rng(seed)
    poses = [Pose(so3_exp(rng.normal(scale=0.2, size=3)), rng.normal(size=3)) for _ in range(n)]
    return Trajectory.from_poses(np.arange(n) * 0.1, poses)


def shifted(traj: Trajectory, offset) -> Trajectory:
    return Trajectory(traj.timestamps, traj.positions + np.asarray(offset), traj.quaternions)


# TUM files

def test_format_and_parse_tum(tmp_path):
    traj = scattered(1, 5)
    text = format_tum(traj)
    assert len(text.splitlines()) == 5
    assert all(len(line.split()) == 8 for line in text.splitlines())

    path = tmp_path / "traj.tum"
    write_tum(path, traj)
    back = read_tum(path)
    np.testing.assert_allclose(back.timestamps, traj.timestamps)
    np.testing.assert_allclose(back.positions, traj.positions, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(back.quaternions, traj.quaternions, rtol=1e-8, atol=1e-9)


def test_parse_skips_comments_and_normalizes_quaternion():
    traj = parse_tum("# timestamp tx ty tz qx qy qz qw\n\n0.0 1 2 3 0 0 0 2\n")
    assert len(traj) == 1
    np.testing.assert_allclose(traj.quaternions[0], [0.0, 0.0, 0.0, 1.0])


def test_parse_reports_line_number():
    with pytest.raises(ArgumentError, match="line 2: expected 8 values"):
        parse_tum("0 0 0 0 0 0 0 1\n1 2 3\n")
    with pytest.raises(ArgumentError, match="line 1: non-numeric"):
        parse_tum("0 0 0 x 0 0 0 1\n")
    with pytest.raises(ArgumentError, match="zero quaternion"):
        parse_tum("0 0 0 0 0 0 0 0\n")


# ATE

def test_ate_of_identical_trajectories_is_zero():
    traj = scattered(2)
    assert ate_rmse(traj, traj) == pytest.approx(0.0, abs=1e-12)
    assert ate_rmse(traj, traj, align=False) == 0.0


def test_ate_constant_offset_removed_by_alignment():
    truth = scattered(3)
    estimate = shifted(truth, [1.0, 0.0, 0.0])
    assert ate_rmse(estimate, truth, align=False) == pytest.approx(1.0)
    assert ate_rmse(estimate, truth, align=True) < 1e-12


def test_ate_rigid_motion_removed_by_alignment():
    truth = scattered(4)
    motion = Pose(so3_exp([0.1, -0.3, 0.2]), [2.0, -1.0, 0.5])
    estimate = Trajectory.from_poses(truth.timestamps, [motion @ p for p in truth.poses])
    assert ate_rmse(estimate, truth) < 1e-9
    assert ate_rmse(estimate, truth, align=False) > 0.1


def test_ate_rejects_mismatched_trajectories():
    truth = straight_line(10)
    with pytest.raises(ArgumentError, match="lengths differ"):
        ate_rmse(straight_line(9), truth)
    with pytest.raises(ArgumentError, match="timestamps"):
        ate_rmse(straight_line(10, dt=0.4), truth)


# RPE

def test_rpe_of_identical_trajectories_is_zero():
    traj = scattered(5)
    trans, rot, pairs = rpe(traj, traj, 1)
    assert trans == pytest.approx(0.0, abs=1e-12)
    assert rot == pytest.approx(0.0, abs=1e-5)
    assert pairs == len(traj) - 1


def test_rpe_measures_per_frame_drift():
    truth = straight_line(10, step=0.1)
    estimate = straight_line(10, step=0.11)
    trans, rot, pairs = rpe(estimate, truth, 1)
    assert trans == pytest.approx(0.01)
    assert rot == pytest.approx(0.0, abs=1e-9)
    assert pairs == 9
    assert rpe(estimate, truth, 3)[0] == pytest.approx(0.03)


def test_rpe_all_pairs():
    traj = straight_line(10)
    assert rpe(traj, traj, "all")[2] == 45


def test_rpe_seconds_delta_uses_timestamps():
    truth = straight_line(10, step=0.1, dt=0.5)
    estimate = straight_line(10, step=0.11, dt=0.5)
    by_time = rpe(estimate, truth, "1s")
    by_frames = rpe(estimate, truth, 2)
    assert by_time[2] == by_frames[2] == 8
    assert by_time[0] == pytest.approx(by_frames[0])


def test_rpe_delta_beyond_trajectory_rejected():
    traj = straight_line(5, dt=0.5)
    with pytest.raises(ArgumentError):
        rpe(traj, traj, 5)
    with pytest.raises(ArgumentError):
        rpe(traj, traj, "3s")


@pytest.mark.parametrize("delta,expected", [
    (1, ("frames", 1.0)),
    ("4", ("frames", 4.0)),
    ("0.5s", ("seconds", 0.5)),
    ("ALL", ("all", 0.0)),
])
def test_parse_delta(delta, expected):
    assert parse_delta(delta) == expected


@pytest.mark.parametrize("delta", ["0", "-1", "1.5", "abc", "0s"])
def test_parse_delta_rejects(delta):
    with pytest.raises(ArgumentError):
        parse_delta(delta)


def test_evaluate_trajectory_report():
    truth = straight_line(10, step=0.1)
    estimate = straight_line(10, step=0.11)
    report = evaluate_trajectory(estimate, truth, delta="all", align=False)
    assert report.n_poses == 10
    assert report.rpe_pairs == 45
    assert report.rpe_delta == "all"
    assert not report.aligned
    assert report.ate_rmse > 0.0
