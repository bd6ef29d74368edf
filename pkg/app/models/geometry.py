from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from app.core.errors import ArgumentError
from app.core.lie import rot2

FRAMES = ("", "world", "body", "camera")

ROTATION_TOL = 1e-9


def _check_rotation(R: np.ndarray, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ArgumentError(f"{name} must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_TOL) or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        raise ArgumentError(f"{name} is not a rotation matrix")
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid transform x_target = R @ x_source + t.

    Frame tags are informational ("world", "body", "camera"); composition
    checks them only when both sides are tagged.
    """
    R: np.ndarray
    t: np.ndarray
    source: str = ""
    target: str = ""

    def __post_init__(self):
        R = _check_rotation(self.R, "rotation").copy()
        t = np.asarray(self.t, dtype=float).reshape(3).copy()
        if self.source not in FRAMES or self.target not in FRAMES:
            raise ArgumentError(f"unknown frame tag {self.source!r}->{self.target!r}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, source: str = "", target: str = "") -> "Pose":
        return cls(np.eye(3), np.zeros(3), source, target)

    @classmethod
    def from_quaternion(cls, q, t, source: str = "", target: str = "") -> "Pose":
        """Build from a unit quaternion in (x, y, z, w) order."""
        q = np.asarray(q, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > ROTATION_TOL:
            raise ArgumentError("quaternion must have unit norm")
        return cls(Rotation.from_quat(q).as_matrix(), t, source, target)

    @classmethod
    def from_rotvec(cls, rotvec, t, source: str = "", target: str = "") -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), t, source, target)

    @property
    def quaternion(self) -> np.ndarray:
        q = Rotation.from_matrix(self.R).as_quat()
        # canonical sign, w >= 0
        return -q if q[3] < 0 else q

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        if self.source and other.target and self.source != other.target:
            raise ArgumentError(f"cannot compose {self.source}->{self.target} after {other.source}->{other.target}")
        R = Rotation.from_matrix(self.R @ other.R).as_matrix()
        return Pose(R, self.R @ other.t + self.t, other.source, self.target)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t, self.target, self.source)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.t


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 752
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ArgumentError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def K_L(self) -> np.ndarray:
        """Line projection matrix: image line l = K_L @ n_c."""
        return np.array([
            [self.fy, 0.0, 0.0],
            [0.0, self.fx, 0.0],
            [-self.fy * self.cx, -self.fx * self.cy, self.fx * self.fy],
        ])

    def project(self, points_c: np.ndarray) -> np.ndarray:
        """Pinhole projection of camera-frame points, (3,) or (N, 3)."""
        points_c = np.asarray(points_c, dtype=float)
        z = points_c[..., 2]
        u = self.fx * points_c[..., 0] / z + self.cx
        v = self.fy * points_c[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def back_project(self, pixels: np.ndarray) -> np.ndarray:
        """Rays K^-1 (u, v, 1) with unit z component."""
        pixels = np.asarray(pixels, dtype=float)
        x = (pixels[..., 0] - self.cx) / self.fx
        y = (pixels[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        return (
            (pixels[..., 0] >= 0.0) & (pixels[..., 0] <= self.width - 1)
            & (pixels[..., 1] >= 0.0) & (pixels[..., 1] <= self.height - 1)
        )


@dataclass(frozen=True)
class PluckerLine:
    """Space line (n, d) with n = X x d for any point X on the line.

    A zero direction is representable (the line at infinity produced by
    theta = 0 in the orthonormal form) and flagged by `is_at_infinity`;
    consumers that need a finite line reject it.
    """
    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(3).copy()
        d = np.asarray(self.d, dtype=float).reshape(3).copy()
        n_norm, d_norm = np.linalg.norm(n), np.linalg.norm(d)
        if n_norm == 0.0 and d_norm == 0.0:
            raise ArgumentError("Plücker coordinates are all zero")
        if abs(n @ d) > 1e-9 * (n_norm * d_norm + 1.0):
            raise ArgumentError(f"Plücker constraint violated: n.d = {n @ d:.3e}")
        n.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)

    @classmethod
    def from_points(cls, X1, X2) -> "PluckerLine":
        X1 = np.asarray(X1, dtype=float)
        d = np.asarray(X2, dtype=float) - X1
        return cls(np.cross(X1, d), d)

    @property
    def is_at_infinity(self) -> bool:
        return bool(np.linalg.norm(self.d) <= 1e-12 * np.linalg.norm(self.n))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.n, self.d])

    def normalized(self) -> "PluckerLine":
        scale = np.linalg.norm(self.vector)
        return PluckerLine(self.n / scale, self.d / scale)

    def scaled(self, factor: float) -> "PluckerLine":
        return PluckerLine(self.n * factor, self.d * factor)

    def closest_point(self) -> np.ndarray:
        """Point of the line closest to the frame origin."""
        return np.cross(self.d, self.n) / (self.d @ self.d)


@dataclass(frozen=True)
class OrthonormalLine:
    """Minimal line form (U in SO(3), W in SO(2)).

    W is stored through its angle theta, so it is a planar rotation exactly.
    """
    U: np.ndarray
    theta: float
    W: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        U = _check_rotation(self.U, "U").copy()
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "theta", float(self.theta))
        W = rot2(self.theta)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def from_matrices(cls, U: np.ndarray, W: np.ndarray) -> "OrthonormalLine":
        W = np.asarray(W, dtype=float)
        if not np.allclose(W, rot2(np.arctan2(W[1, 0], W[0, 0])), atol=ROTATION_TOL):
            raise ArgumentError("W is not a planar rotation")
        return cls(U, float(np.arctan2(W[1, 0], W[0, 0])))

    @classmethod
    def from_params(cls, psi, theta: float) -> "OrthonormalLine":
        """Inverse of `params`: U = Exp(psi)."""
        return cls(Rotation.from_rotvec(psi).as_matrix(), theta)

    @property
    def params(self) -> np.ndarray:
        """The 4-vector (psi, theta) with U = Exp([psi]x)."""
        return np.append(Rotation.from_matrix(self.U).as_rotvec(), self.theta)

    @property
    def w1(self) -> float:
        return float(np.cos(self.theta))

    @property
    def w2(self) -> float:
        return float(np.sin(self.theta))


@dataclass(frozen=True)
class Plane:
    """Homogeneous plane (nu, delta): nu . X + delta = 0."""
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(4).copy()
        if np.linalg.norm(coeffs[:3]) == 0.0:
            raise ArgumentError("plane normal is zero")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_normal(cls, normal, offset: float) -> "Plane":
        return cls(np.append(np.asarray(normal, dtype=float), offset))

    @property
    def normal(self) -> np.ndarray:
        return self.coeffs[:3]

    @property
    def offset(self) -> float:
        return float(self.coeffs[3])

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.normal + self.offset

