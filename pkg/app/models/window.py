from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from app.core.errors import ArgumentError
from app.models.geometry import CameraModel, OrthonormalLine, Pose
from app.models.image import LineSegment2D

POINT = "point"
LINE = "line"


@dataclass
class KeyframeState:
    """Body state of one keyframe in the window.

    Velocity and IMU biases are carried but never optimized: no inertial
    factor exists to constrain them.
    """
    frame_id: int
    p: np.ndarray
    q: np.ndarray
    timestamp: float = 0.0
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    optimize_inertial: bool = False

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ArgumentError(f"keyframe {self.frame_id}: quaternion is not unit norm")

    @classmethod
    def from_pose(cls, frame_id: int, T_wb: Pose, timestamp: float = 0.0) -> "KeyframeState":
        return cls(frame_id=frame_id, p=np.array(T_wb.t), q=T_wb.quaternion, timestamp=timestamp)

    @property
    def R(self) -> np.ndarray:
        return Rotation.from_quat(self.q).as_matrix()

    @property
    def pose(self) -> Pose:
        """Body-to-world transform T_wb."""
        return Pose(self.R, self.p, "body", "world")

    def camera_pose(self, T_bc: Pose) -> Pose:
        """Camera-to-world transform T_wc = T_wb ∘ T_bc."""
        return self.pose @ T_bc


@dataclass
class PointLandmark:
    landmark_id: int
    anchor: int
    bearing: np.ndarray
    inv_depth: float

    def __post_init__(self):
        self.bearing = np.asarray(self.bearing, dtype=float).reshape(3)
        if self.inv_depth <= 0:
            raise ArgumentError(f"point {self.landmark_id}: inverse depth must be positive")
        if abs(np.linalg.norm(self.bearing) - 1.0) > 1e-9:
            raise ArgumentError(f"point {self.landmark_id}: bearing is not a unit vector")

    @property
    def point_in_anchor(self) -> np.ndarray:
        return self.bearing / self.inv_depth


@dataclass(frozen=True)
class Observation:
    """One measurement of a landmark in a keyframe.

    Point observations carry `uv`; line observations carry `segment`, whose
    midpoint is the default residual location.
    """
    keyframe_id: int
    feature_id: int
    kind: str
    uv: Optional[np.ndarray] = None
    segment: Optional[LineSegment2D] = None
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (POINT, LINE):
            raise ArgumentError(f"unknown observation kind {self.kind!r}")
        if self.kind == POINT and self.uv is None:
            raise ArgumentError("point observation without pixel coordinates")
        if self.kind == LINE and self.segment is None:
            raise ArgumentError("line observation without a segment")
        if self.sigma <= 0:
            raise ArgumentError("observation sigma must be positive")
        if self.uv is not None:
            object.__setattr__(self, "uv", np.asarray(self.uv, dtype=float).reshape(2))

    @classmethod
    def point(cls, keyframe_id: int, feature_id: int, uv, sigma: float = 1.0) -> "Observation":
        return cls(keyframe_id, feature_id, POINT, uv=uv, sigma=sigma)

    @classmethod
    def line(cls, keyframe_id: int, feature_id: int, segment: LineSegment2D, sigma: float = 1.0) -> "Observation":
        return cls(keyframe_id, feature_id, LINE, segment=segment, sigma=sigma)

    @property
    def midpoint(self) -> np.ndarray:
        return self.segment.midpoint


@dataclass
class WindowState:
    """Everything the window optimizer estimates, plus its fixed context.

    Landmarks are keyed by feature id and keyframes are addressed by
    `frame_id`; observations of landmarks that are not triangulated yet are
    kept so later keyframes can complete their tracks.
    """
    keyframes: List[KeyframeState]
    camera: CameraModel
    T_bc: Pose
    points: Dict[int, PointLandmark] = field(default_factory=dict)
    lines: Dict[int, OrthonormalLine] = field(default_factory=dict)
    observations: List[Observation] = field(default_factory=list)
    capacity: int = 10

    def __post_init__(self):
        if len(self.keyframes) > self.capacity:
            raise ArgumentError(f"{len(self.keyframes)} keyframes exceed window capacity {self.capacity}")
        ids = [kf.frame_id for kf in self.keyframes]
        if len(set(ids)) != len(ids):
            raise ArgumentError("duplicate keyframe ids in window")

    @property
    def frame_ids(self) -> List[int]:
        return [kf.frame_id for kf in self.keyframes]

    def keyframe(self, frame_id: int) -> KeyframeState:
        for kf in self.keyframes:
            if kf.frame_id == frame_id:
                return kf
        raise ArgumentError(f"keyframe {frame_id} is not in the window")

    def index_of(self, frame_id: int) -> int:
        return self.frame_ids.index(frame_id)

    def observations_of(self, kind: str, feature_id: int) -> List[Observation]:
        return [o for o in self.observations if o.kind == kind and o.feature_id == feature_id]

    def copy(self) -> "WindowState":
        return WindowState(
            keyframes=[
                KeyframeState(kf.frame_id, kf.p.copy(), kf.q.copy(), kf.timestamp,
                              kf.v.copy(), kf.b_a.copy(), kf.b_g.copy(), kf.optimize_inertial)
                for kf in self.keyframes
            ],
            camera=self.camera,
            T_bc=self.T_bc,
            points={k: PointLandmark(p.landmark_id, p.anchor, p.bearing.copy(), p.inv_depth)
                    for k, p in self.points.items()},
            lines=dict(self.lines),
            observations=list(self.observations),
            capacity=self.capacity,
        )
