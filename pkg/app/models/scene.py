from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from app.core.errors import ArgumentError
from app.models.geometry import CameraModel, Pose


@dataclass(frozen=True)
class Trajectory:
    """Timestamped body poses, positions in meters, quaternions (x, y, z, w)."""
    timestamps: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        if not (len(timestamps) == len(positions) == len(quaternions)):
            raise ArgumentError("trajectory arrays have different lengths")
        if len(quaternions) and np.any(np.abs(np.linalg.norm(quaternions, axis=1) - 1.0) > 1e-6):
            raise ArgumentError("trajectory quaternions must be unit norm")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "quaternions", quaternions)

    @classmethod
    def from_poses(cls, timestamps: Sequence[float], poses: Sequence[Pose]) -> "Trajectory":
        return cls(
            np.asarray(timestamps, dtype=float),
            np.array([pose.t for pose in poses]).reshape(-1, 3),
            np.array([pose.quaternion for pose in poses]).reshape(-1, 4),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def rotations(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, 3, 3))
        return Rotation.from_quat(self.quaternions).as_matrix()

    @property
    def poses(self) -> List[Pose]:
        return [Pose(R, t) for R, t in zip(self.rotations, self.positions)]


@dataclass(frozen=True)
class SyntheticScene:
    """Ground truth of a generated corridor scene.

    `lines` holds segment endpoints with shape (M, 2, 3); `poses` are the
    body-to-world transforms of the keyframes.
    """
    points: np.ndarray
    lines: np.ndarray
    poses: List[Pose]
    timestamps: np.ndarray
    camera: CameraModel
    T_bc: Pose
    seed: int
    near_plane: float = 0.1
    min_segment_px: float = 20.0

    @property
    def n_keyframes(self) -> int:
        return len(self.poses)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory.from_poses(self.timestamps, self.poses)

    def camera_pose(self, k: int) -> Pose:
        return self.poses[k] @ self.T_bc
