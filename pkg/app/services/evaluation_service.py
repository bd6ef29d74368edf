"""Trajectory I/O in TUM format and ATE/RPE metrics."""
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from app.core.errors import ArgumentError
from app.core.lie import rotation_angle
from app.models.geometry import Pose
from app.models.scene import Trajectory
from app.schemas.evaluation import EvalReport

logger = logging.getLogger(__name__)

TIME_TOL = 1e-6


def format_tum(traj: Trajectory) -> str:
    """One `timestamp tx ty tz qx qy qz qw` row per pose, 9 significant digits."""
    rows = []
    for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
        rows.append(" ".join(f"{value:.9g}" for value in (t, *p, *q)))
    return "".join(row + "\n" for row in rows)


def parse_tum(text: str) -> Trajectory:
    timestamps, positions, quaternions = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if len(fields) != 8:
            raise ArgumentError(f"TUM line {lineno}: expected 8 values, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ArgumentError(f"TUM line {lineno}: non-numeric value")
        q = np.array(values[4:])
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise ArgumentError(f"TUM line {lineno}: zero quaternion")
        timestamps.append(values[0])
        positions.append(values[1:4])
        quaternions.append(q / norm)
    return Trajectory(np.array(timestamps), np.array(positions).reshape(-1, 3),
                      np.array(quaternions).reshape(-1, 4))


def read_tum(path: Union[str, Path]) -> Trajectory:
    return parse_tum(Path(path).read_text())


def write_tum(path: Union[str, Path], traj: Trajectory) -> None:
    Path(path).write_text(format_tum(traj))


def _check_matched(estimate: Trajectory, truth: Trajectory) -> None:
    if len(estimate) != len(truth):
        raise ArgumentError(f"trajectory lengths differ: {len(estimate)} vs {len(truth)}")
    if len(estimate) and np.max(np.abs(estimate.timestamps - truth.timestamps)) > TIME_TOL:
        raise ArgumentError("trajectory timestamps do not match")


def align_se3(model: np.ndarray, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Horn's closed-form rotation and translation taking `model` (N, 3) onto `data`."""
    model_mean = model.mean(axis=0)
    data_mean = data.mean(axis=0)
    W = (model - model_mean).T @ (data - data_mean)
    U, _, Vh = np.linalg.svd(W.T)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vh) < 0:
        S[2, 2] = -1.0
    rot = U @ S @ Vh
    return rot, data_mean - rot @ model_mean


def ate_rmse(estimate: Trajectory, truth: Trajectory, align: bool = True) -> float:
    """RMSE of position errors, after SE(3) alignment of the estimate when `align`."""
    _check_matched(estimate, truth)
    if not len(estimate):
        raise ArgumentError("cannot evaluate an empty trajectory")
    positions = estimate.positions
    if align:
        rot, trans = align_se3(positions, truth.positions)
        positions = positions @ rot.T + trans
    errors = np.linalg.norm(positions - truth.positions, axis=1)
    return float(np.sqrt(np.mean(errors ** 2)))


def parse_delta(delta: Union[str, int, float]) -> Tuple[str, float]:
    """'all', an integer frame count ('1', 1) or seconds ('1s', '0.5s')."""
    if isinstance(delta, (int, np.integer)):
        return "frames", float(delta)
    text = str(delta).strip().lower()
    if text == "all":
        return "all", 0.0
    try:
        if text.endswith("s"):
            value = float(text[:-1])
            kind = "seconds"
        else:
            value = float(int(text))
            kind = "frames"
    except ValueError:
        raise ArgumentError(f"invalid RPE delta {delta!r}")
    if value <= 0:
        raise ArgumentError("RPE delta must be positive")
    return kind, value


def _pairs(timestamps: np.ndarray, kind: str, value: float) -> List[Tuple[int, int]]:
    n = len(timestamps)
    if kind == "all":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if kind == "frames":
        step = int(value)
        if step >= n:
            raise ArgumentError(f"delta of {step} frames exceeds a trajectory of {n} poses")
        return [(i, i + step) for i in range(n - step)]
    if n == 0 or timestamps[-1] - timestamps[0] < value - TIME_TOL:
        raise ArgumentError(f"delta of {value}s exceeds the trajectory span")
    pairs = []
    for i in range(n):
        j = int(np.searchsorted(timestamps, timestamps[i] + value - TIME_TOL))
        if j < n:
            pairs.append((i, j))
    return pairs


def rpe(estimate: Trajectory, truth: Trajectory, delta: Union[str, int, float] = 1) -> Tuple[float, float, int]:
    """Relative pose error RMSE: (translation m, rotation deg, pair count).

    `delta` selects fixed frame or time offsets, or every pair of poses
    with 'all'.
    """
    _check_matched(estimate, truth)
    kind, value = parse_delta(delta)
    pairs = _pairs(truth.timestamps, kind, value)
    if not pairs:
        raise ArgumentError("no pose pairs at the requested delta")
    est, gt = estimate.poses, truth.poses
    trans, rot = [], []
    for i, j in pairs:
        rel_gt: Pose = gt[i].inverse() @ gt[j]
        rel_est: Pose = est[i].inverse() @ est[j]
        error = rel_gt.inverse() @ rel_est
        trans.append(float(np.linalg.norm(error.t)))
        rot.append(np.degrees(rotation_angle(error.R)))
    return (float(np.sqrt(np.mean(np.square(trans)))),
            float(np.sqrt(np.mean(np.square(rot)))), len(pairs))


def evaluate_trajectory(
    estimate: Trajectory,
    truth: Trajectory,
    delta: Union[str, int, float] = 1,
    align: bool = True,
) -> EvalReport:
    ate = ate_rmse(estimate, truth, align=align)
    rpe_trans, rpe_rot, n_pairs = rpe(estimate, truth, delta)
    logger.debug("ATE %.6g m, RPE %.6g m / %.6g deg over %d pairs", ate, rpe_trans, rpe_rot, n_pairs)
    return EvalReport(ate_rmse=ate, rpe_trans=rpe_trans, rpe_rot_deg=rpe_rot, rpe_delta=str(delta),
                      rpe_pairs=n_pairs, n_poses=len(truth), aligned=align)
