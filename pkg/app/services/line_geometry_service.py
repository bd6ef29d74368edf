"""Space-line algebra: Plücker/orthonormal forms, triangulation, projection and Jacobians.

Conventions: a camera pose is T_wc = (R, p) mapping camera to world points.
Pose perturbations are ordered translation first, then rotation, with the
translation added in the world frame and the rotation right-multiplied
(R <- R Exp(dphi)). Line perturbations are (dpsi, dtheta) with
U <- U Exp(dpsi) and W <- W Rot2(dtheta).
"""
import logging
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from app.core.errors import (
    DegenerateGeometryError,
    DegenerateLineError,
    DegenerateObservationError,
    LineAtInfinityError,
)
from app.core.lie import hat, so3_exp
from app.models.geometry import CameraModel, OrthonormalLine, Plane, PluckerLine, Pose
from app.models.image import LineSegment2D

logger = logging.getLogger(__name__)

PARALLEL_TOL = 1e-8
E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])


def plane_from_observation(pose_wc: Pose, seg: LineSegment2D, cam: CameraModel) -> Plane:
    """Plane through the camera centre and the back-projected segment, in world coordinates."""
    rays = cam.back_project(np.array([seg.p1, seg.p2]))
    normal_c = np.cross(rays[0], rays[1])
    norm = np.linalg.norm(normal_c)
    if norm <= 1e-12 * np.linalg.norm(rays[0]) * np.linalg.norm(rays[1]):
        raise DegenerateObservationError("segment endpoints back-project to the same ray")
    normal_w = pose_wc.R @ (normal_c / norm)
    return Plane.from_normal(normal_w, -float(normal_w @ pose_wc.t))


def triangulate_dual_plucker(pi1: Plane, pi2: Plane) -> PluckerLine:
    """Intersection line of two planes from the dual Plücker matrix pi1 pi2^T - pi2 pi1^T."""
    nu1, nu2 = pi1.normal, pi2.normal
    if np.linalg.norm(np.cross(nu1, nu2)) <= PARALLEL_TOL * np.linalg.norm(nu1) * np.linalg.norm(nu2):
        raise DegenerateGeometryError("planes are parallel")
    dual = np.outer(pi1.coeffs, pi2.coeffs) - np.outer(pi2.coeffs, pi1.coeffs)
    # upper-left block is [d]x, last column holds n
    d = np.array([dual[2, 1], dual[0, 2], dual[1, 0]])
    n = dual[:3, 3]
    return PluckerLine(n, d)


def to_orthonormal(line: PluckerLine) -> OrthonormalLine:
    n_norm = np.linalg.norm(line.n)
    d_norm = np.linalg.norm(line.d)
    scale = np.hypot(n_norm, d_norm)
    if n_norm <= 1e-12 * scale:
        raise DegenerateLineError("line passes through the frame origin (n = 0)")
    if d_norm <= 1e-12 * scale:
        raise DegenerateLineError("line direction is zero")
    u1 = line.n / n_norm
    # remove the rounding-level component of d along n so that U is orthonormal
    u2 = line.d - (line.d @ u1) * u1
    u2 = u2 / np.linalg.norm(u2)
    u3 = np.cross(u1, u2)
    U = np.column_stack([u1, u2, u3])
    return OrthonormalLine(U, float(np.arctan2(d_norm, n_norm)))


def from_orthonormal(line: OrthonormalLine) -> PluckerLine:
    """Plücker coordinates with ||n||^2 + ||d||^2 = 1."""
    return PluckerLine(line.w1 * line.U[:, 0], line.w2 * line.U[:, 1])


def transform_line(line_w: PluckerLine, T_cw: Pose) -> PluckerLine:
    """Express a world line in the target frame of T_cw (world -> camera)."""
    R, t = T_cw.R, T_cw.t
    d_c = R @ line_w.d
    n_c = R @ line_w.n + np.cross(t, d_c)
    return PluckerLine(n_c, d_c)


def project_line(line_c: PluckerLine, cam: CameraModel) -> np.ndarray:
    """Homogeneous image line l = K_L n_c."""
    l = cam.K_L @ line_c.n
    if np.hypot(l[0], l[1]) <= 1e-12 * max(np.linalg.norm(l), 1e-300):
        raise LineAtInfinityError("line projects through the optical centre")
    return l


def point_line_residual(m, l) -> float:
    """Signed pixel distance of point m from the image line l."""
    l = np.asarray(l, dtype=float)
    norm = np.hypot(l[0], l[1])
    if norm == 0.0:
        raise LineAtInfinityError("image line has l1 = l2 = 0")
    m = np.asarray(m, dtype=float)
    return float((m[0] * l[0] + m[1] * l[1] + l[2]) / norm)


def point_on_line_residual(X, line: PluckerLine) -> float:
    """Distance of a 3D point from a finite Plücker line."""
    if line.is_at_infinity:
        raise LineAtInfinityError("line at infinity has no finite points")
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(np.cross(X, line.d) - line.n) / np.linalg.norm(line.d))


def update_orthonormal(line: OrthonormalLine, delta) -> OrthonormalLine:
    """Manifold update U Exp(dpsi), theta + dtheta."""
    delta = np.asarray(delta, dtype=float)
    U = Rotation.from_matrix(line.U @ so3_exp(delta[:3])).as_matrix()
    return OrthonormalLine(U, line.theta + delta[3])


def line_residual_kernel(
    R_wc: np.ndarray,
    p_wc: np.ndarray,
    U: np.ndarray,
    theta: np.ndarray,
    points: np.ndarray,
    cam: CameraModel,
    jacobians: bool = True,
):
    """Batched point-to-projected-line residuals and Jacobians.

    Shapes: R_wc (N, 3, 3), p_wc (N, 3), U (N, 3, 3), theta (N,), points
    (N, 2). Returns r (N,), J_pose (N, 6), J_line (N, 4) and a boolean mask of
    factors whose projected line is finite; rows outside the mask are zero.
    """
    w1, w2 = np.cos(theta), np.sin(theta)
    u1, u2 = U[:, :, 0], U[:, :, 1]
    n_w = w1[:, None] * u1
    d_w = w2[:, None] * u2
    Rt = np.transpose(R_wc, (0, 2, 1))
    n_c = np.einsum("nij,nj->ni", Rt, n_w - np.cross(p_wc, d_w))
    l = n_c @ cam.K_L.T
    norm = np.hypot(l[:, 0], l[:, 1])
    valid = norm > 1e-12 * np.maximum(np.linalg.norm(l, axis=1), 1e-300)
    safe = np.where(valid, norm, 1.0)
    m_bar = np.column_stack([points, np.ones(len(points))])
    a = np.einsum("ni,ni->n", m_bar, l)
    r = np.where(valid, a / safe, 0.0)
    if not jacobians:
        return r, valid

    # dr/dl = m_bar / N - a (l1, l2, 0) / N^3
    dr_dl = m_bar / safe[:, None]
    dr_dl[:, :2] -= (a / safe ** 3)[:, None] * l[:, :2]
    dr_dl[~valid] = 0.0
    dr_dnc = dr_dl @ cam.K_L                              # (N, 3)

    J_t = np.einsum("ni,nij,njk->nk", dr_dnc, Rt, hat(d_w))
    J_rot = np.einsum("ni,nij->nj", dr_dnc, hat(n_c))
    J_pose = np.concatenate([J_t, J_rot], axis=1)

    # world Plücker derivatives w.r.t. (dpsi, dtheta)
    dn_dpsi = -w1[:, None, None] * (U @ hat(E1))
    dd_dpsi = -w2[:, None, None] * (U @ hat(E2))
    dn_dth = -w2[:, None] * u1
    dd_dth = w1[:, None] * u2
    P = hat(p_wc)
    dnc_dpsi = np.einsum("nij,njk->nik", Rt, dn_dpsi - P @ dd_dpsi)
    dnc_dth = np.einsum("nij,nj->ni", Rt, dn_dth - np.einsum("nij,nj->ni", P, dd_dth))
    J_line = np.concatenate([
        np.einsum("ni,nik->nk", dr_dnc, dnc_dpsi),
        np.einsum("ni,ni->n", dr_dnc, dnc_dth)[:, None],
    ], axis=1)
    return r, J_pose, J_line, valid


def residual_jacobian(
    pose_wc: Pose,
    line: OrthonormalLine,
    m,
    cam: CameraModel,
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobian of the point-to-line residual: (1x6 pose, 1x4 line)."""
    _, J_pose, J_line, valid = line_residual_kernel(
        pose_wc.R[None], pose_wc.t[None], line.U[None], np.array([line.theta]),
        np.asarray(m, dtype=float).reshape(1, 2), cam,
    )
    if not valid[0]:
        raise LineAtInfinityError("line projects through the optical centre")
    return J_pose, J_line


def residual_jacobian_endpoints(
    pose_wc: Pose,
    line: OrthonormalLine,
    seg: LineSegment2D,
    cam: CameraModel,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-row variant evaluated at both segment endpoints: (r (2,), 2x6, 2x4)."""
    pts = np.array([seg.p1, seg.p2])
    r, J_pose, J_line, valid = line_residual_kernel(
        np.repeat(pose_wc.R[None], 2, axis=0), np.repeat(pose_wc.t[None], 2, axis=0),
        np.repeat(line.U[None], 2, axis=0), np.full(2, line.theta), pts, cam,
    )
    if not valid.all():
        raise LineAtInfinityError("line projects through the optical centre")
    return r, J_pose, J_line


def observation_residual(pose_wc: Pose, line: OrthonormalLine, m, cam: CameraModel) -> float:
    """Residual of a world line observed at pixel m by a camera at pose_wc."""
    line_c = transform_line(from_orthonormal(line), pose_wc.inverse())
    return point_line_residual(m, project_line(line_c, cam))
