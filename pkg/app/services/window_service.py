"""Sliding-window back end: point and line factors, Levenberg-Marquardt, window upkeep.

Keyframe perturbations follow the line geometry convention: the position
is updated additively in the world frame and the orientation by
R <- R Exp(dphi). Parameter blocks are laid out as [t, phi] per keyframe,
one inverse depth per point and (dpsi, dtheta) per line.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.transform import Rotation

from app.core.errors import (
    ArgumentError,
    CheiralityError,
    DegenerateGeometryError,
    DegenerateLineError,
    DegenerateObservationError,
    LineAtInfinityError,
    UnderconstrainedError,
)
from app.core.lie import hat, so3_exp
from app.models.geometry import CameraModel, OrthonormalLine, Pose
from app.models.window import LINE, POINT, KeyframeState, Observation, PointLandmark, WindowState
from app.schemas.window import SlidePolicy, SolverConfig, TriangulationReport, WindowReport
from app.services.line_geometry_service import (
    line_residual_kernel,
    observation_residual,
    plane_from_observation,
    to_orthonormal,
    triangulate_dual_plucker,
    update_orthonormal,
)

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-9
MIN_INV_DEPTH = 1e-6
MAX_LAMBDA = 1e12


def huber(s: float) -> float:
    """Huber norm of a squared, normalized residual."""
    if s < 0:
        raise ArgumentError(f"huber expects a nonnegative argument, got {s}")
    return float(s) if s <= 1.0 else 2.0 * np.sqrt(s) - 1.0


def _huber_arrays(s: np.ndarray, enabled: bool) -> Tuple[np.ndarray, np.ndarray]:
    """rho(s) and rho'(s) elementwise."""
    if not enabled:
        return s, np.ones_like(s)
    root = np.sqrt(np.maximum(s, 1.0))
    rho = np.where(s <= 1.0, s, 2.0 * root - 1.0)
    return rho, np.where(s <= 1.0, 1.0, 1.0 / root)


def _camera_frames(R_wb: np.ndarray, p_wb: np.ndarray, T_bc: Pose) -> Tuple[np.ndarray, np.ndarray]:
    R_wc = R_wb @ T_bc.R
    p_wc = np.einsum("nij,j->ni", R_wb, T_bc.t) + p_wb
    return R_wc, p_wc


def point_residual_kernel(
    R_a: np.ndarray,
    p_a: np.ndarray,
    R_h: np.ndarray,
    p_h: np.ndarray,
    bearing: np.ndarray,
    inv_depth: np.ndarray,
    uv: np.ndarray,
    T_bc: Pose,
    cam: CameraModel,
    jacobians: bool = True,
):
    """Batched inverse-depth reprojection residuals (anchor -> world -> host).

    Returns r (N, 2), the host-camera depth, a validity mask and, when asked,
    Jacobians w.r.t. the anchor pose (N, 2, 6), the host pose (N, 2, 6) and
    the inverse depth (N, 2).
    """
    R_bc, t_bc = T_bc.R, T_bc.t
    X_ca = bearing / inv_depth[:, None]
    X_ba = X_ca @ R_bc.T + t_bc
    X_w = np.einsum("nij,nj->ni", R_a, X_ba) + p_a
    R_ht = np.transpose(R_h, (0, 2, 1))
    X_bh = np.einsum("nij,nj->ni", R_ht, X_w - p_h)
    X_ch = (X_bh - t_bc) @ R_bc
    z = X_ch[:, 2]
    valid = z > MIN_DEPTH
    z_safe = np.where(valid, z, 1.0)
    u = cam.fx * X_ch[:, 0] / z_safe + cam.cx
    v = cam.fy * X_ch[:, 1] / z_safe + cam.cy
    r = np.where(valid[:, None], np.column_stack([u, v]) - uv, 0.0)
    if not jacobians:
        return r, z, valid

    J_proj = np.zeros((len(z), 2, 3))
    J_proj[:, 0, 0] = cam.fx / z_safe
    J_proj[:, 0, 2] = -cam.fx * X_ch[:, 0] / z_safe ** 2
    J_proj[:, 1, 1] = cam.fy / z_safe
    J_proj[:, 1, 2] = -cam.fy * X_ch[:, 1] / z_safe ** 2
    J_proj[~valid] = 0.0
    # d pixel / d X_w
    A = J_proj @ R_bc.T @ R_ht

    J_anchor = np.concatenate([A, -A @ R_a @ hat(X_ba)], axis=2)
    J_host = np.concatenate([-A, J_proj @ R_bc.T @ hat(X_bh)], axis=2)
    dXw_dl = np.einsum("nij,nj->ni", R_a, (-bearing / inv_depth[:, None] ** 2) @ R_bc.T)
    J_inv = np.einsum("nij,nj->ni", A, dXw_dl)
    return r, z, valid, J_anchor, J_host, J_inv


def point_residual(
    obs: Observation,
    anchor: KeyframeState,
    host: KeyframeState,
    lm: PointLandmark,
    T_bc: Pose,
    cam: CameraModel,
) -> np.ndarray:
    """Reprojected pixel minus observed pixel for one point observation."""
    if obs.kind != POINT:
        raise ArgumentError("point_residual needs a point observation")
    r, z, valid = point_residual_kernel(
        anchor.R[None], anchor.p[None], host.R[None], host.p[None],
        lm.bearing[None], np.array([lm.inv_depth]), obs.uv[None], T_bc, cam, jacobians=False,
    )
    if not valid[0]:
        raise CheiralityError(f"point {lm.landmark_id} has depth {z[0]:.3g} in keyframe {host.frame_id}")
    return r[0]


def line_factor_cost(
    obs: Observation,
    host: KeyframeState,
    line: OrthonormalLine,
    T_bc: Pose,
    cam: CameraModel,
) -> Tuple[float, float]:
    """(huber(r^2 / sigma^2), r) for the midpoint of a line observation."""
    if obs.kind != LINE:
        raise ArgumentError("line_factor_cost needs a line observation")
    r = observation_residual(host.camera_pose(T_bc), line, obs.midpoint, cam)
    return huber(r * r / obs.sigma ** 2), r


@dataclass
class _Evaluation:
    cost: float
    dropped_points: int
    dropped_lines: int
    point_sq: np.ndarray
    line_sq: np.ndarray
    r: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    J: Optional[np.ndarray] = None

    @property
    def dropped(self) -> int:
        return self.dropped_points + self.dropped_lines


class WindowProblem:
    """Factor layout of one window; evaluates cost and the weighted linear system."""

    def __init__(self, state: WindowState, config: SolverConfig, excluded_lines: Iterable[int] = ()):
        self.config = config
        self.camera = state.camera
        self.T_bc = state.T_bc
        self.n_kf = len(state.keyframes)
        frame_index = {fid: i for i, fid in enumerate(state.frame_ids)}

        in_window = set(frame_index)
        line_obs_count: Dict[int, int] = {}
        for obs in state.observations:
            if obs.kind == LINE and obs.keyframe_id in in_window:
                line_obs_count[obs.feature_id] = line_obs_count.get(obs.feature_id, 0) + 1
        needed = config.line_observations_needed
        candidate_lines = sorted(state.lines) if config.use_lines else []
        self.point_ids = sorted(state.points) if config.use_points else []
        observed = [lid for lid in candidate_lines if line_obs_count.get(lid, 0) >= needed]
        excluded = set(excluded_lines)
        self.line_ids = [lid for lid in observed if lid not in excluded]
        self.inactive_lines = len(candidate_lines) - len(observed)
        self.excluded_lines = len(observed) - len(self.line_ids)
        point_index = {pid: j for j, pid in enumerate(self.point_ids)}
        line_index = {lid: k for k, lid in enumerate(self.line_ids)}

        self.point_offset = 6 * self.n_kf
        self.line_offset = self.point_offset + len(self.point_ids)
        self.n_params = self.line_offset + 4 * len(self.line_ids)

        pt_rows, self_rows, ln_rows = [], [], []
        for obs in state.observations:
            if obs.keyframe_id not in frame_index:
                continue
            host = frame_index[obs.keyframe_id]
            if obs.kind == POINT and obs.feature_id in point_index:
                lm = state.points[obs.feature_id]
                if lm.anchor not in frame_index:
                    raise ArgumentError(f"point {lm.landmark_id} is anchored outside the window")
                anchor = frame_index[lm.anchor]
                entry = (anchor, host, point_index[obs.feature_id], obs.uv, obs.sigma)
                (self_rows if anchor == host else pt_rows).append(entry)
            elif obs.kind == LINE and obs.feature_id in line_index:
                ln_rows.append((host, line_index[obs.feature_id], obs.segment, obs.sigma))

        def column(rows, i, dtype=int):
            return np.array([row[i] for row in rows], dtype=dtype)

        self.pt_anchor, self.pt_host, self.pt_point = (column(pt_rows, i) for i in range(3))
        self.pt_uv = np.array([row[3] for row in pt_rows]).reshape(-1, 2)
        self.pt_sigma = column(pt_rows, 4, float)
        self.self_anchor, self.self_point = column(self_rows, 0), column(self_rows, 2)
        self.self_uv = np.array([row[3] for row in self_rows]).reshape(-1, 2)
        self.self_sigma = column(self_rows, 4, float)

        per_obs = 1 if config.line_residual == "midpoint" else 2
        self.n_line_factors = len(ln_rows)
        self.ln_host = np.repeat(column(ln_rows, 0), per_obs)
        self.ln_line = np.repeat(column(ln_rows, 1), per_obs)
        self.ln_block = np.repeat(np.arange(len(ln_rows)), per_obs)
        self.ln_sigma = column(ln_rows, 3, float)
        if per_obs == 1:
            pts = [row[2].midpoint for row in ln_rows]
        else:
            pts = [p for row in ln_rows for p in (row[2].p1, row[2].p2)]
        self.ln_points = np.array(pts, dtype=float).reshape(-1, 2)

        self.free = np.ones(self.n_params, dtype=bool)
        self.free[0:6] = False
        if self.n_kf > 1:
            self.free[6:9] = False
        self.free_index = np.flatnonzero(self.free)

    @property
    def n_point_factors(self) -> int:
        return len(self.pt_point) + len(self.self_point)

    def evaluate(self, state: WindowState, jacobians: bool = False) -> _Evaluation:
        cfg = self.config
        R_wb = np.array([kf.R for kf in state.keyframes])
        p_wb = np.array([kf.p for kf in state.keyframes])
        bearings = np.array([state.points[pid].bearing for pid in self.point_ids]).reshape(-1, 3)
        inv_depths = np.array([state.points[pid].inv_depth for pid in self.point_ids])

        blocks_r, blocks_w, blocks_J = [], [], []
        cost = 0.0

        # points observed in another keyframe than their anchor
        a, h, j = self.pt_anchor, self.pt_host, self.pt_point
        out = point_residual_kernel(
            R_wb[a], p_wb[a], R_wb[h], p_wb[h], bearings[j], inv_depths[j],
            self.pt_uv, self.T_bc, self.camera, jacobians=jacobians,
        )
        r_pt, valid_pt = out[0], out[2]
        s_pt = (r_pt ** 2).sum(axis=1) / self.pt_sigma ** 2
        rho, drho = _huber_arrays(s_pt, cfg.use_huber)
        cost += float(rho[valid_pt].sum())
        if jacobians and len(j):
            J_anchor, J_host, J_inv = out[3:]
            n = len(j)
            J = np.zeros((2 * n, self.n_params))
            rows = np.arange(2 * n).reshape(n, 2)
            anchor_cols = 6 * a[:, None] + np.arange(6)
            host_cols = 6 * h[:, None] + np.arange(6)
            J[rows[:, :, None], anchor_cols[:, None, :]] = J_anchor
            J[rows[:, :, None], host_cols[:, None, :]] = J_host
            J[rows, (self.point_offset + j)[:, None]] = J_inv
            weight = np.where(valid_pt, drho / self.pt_sigma ** 2, 0.0)
            blocks_r.append(r_pt.ravel())
            blocks_w.append(np.repeat(weight, 2))
            blocks_J.append(J)

        # observations in the anchor keyframe do not depend on any variable
        dropped_points = int((~valid_pt).sum())
        point_sq = (r_pt ** 2).sum(axis=1)[valid_pt]
        if len(self.self_point):
            b = bearings[self.self_point]
            valid_self = b[:, 2] > MIN_DEPTH
            z = np.where(valid_self, b[:, 2], 1.0)
            uv = np.column_stack([self.camera.fx * b[:, 0] / z + self.camera.cx,
                                  self.camera.fy * b[:, 1] / z + self.camera.cy])
            sq = ((uv - self.self_uv) ** 2).sum(axis=1)
            rho_self, _ = _huber_arrays(sq / self.self_sigma ** 2, cfg.use_huber)
            cost += float(rho_self[valid_self].sum())
            dropped_points += int((~valid_self).sum())
            point_sq = np.concatenate([point_sq, sq[valid_self]])

        dropped_lines = 0
        line_sq = np.zeros(0)
        if self.n_line_factors:
            R_wc, p_wc = _camera_frames(R_wb, p_wb, self.T_bc)
            U = np.array([state.lines[lid].U for lid in self.line_ids])
            theta = np.array([state.lines[lid].theta for lid in self.line_ids])
            h, k = self.ln_host, self.ln_line
            out = line_residual_kernel(R_wc[h], p_wc[h], U[k], theta[k], self.ln_points,
                                       self.camera, jacobians=jacobians)
            r_ln, valid_rows = out[0], out[-1]
            n_blocks = self.n_line_factors
            valid_ln = np.bincount(self.ln_block, weights=(~valid_rows).astype(float),
                                   minlength=n_blocks) == 0
            s_ln = np.bincount(self.ln_block, weights=r_ln ** 2, minlength=n_blocks) / self.ln_sigma ** 2
            rho, drho = _huber_arrays(s_ln, cfg.use_huber)
            cost += float(rho[valid_ln].sum())
            dropped_lines = int((~valid_ln).sum())
            line_sq = (r_ln ** 2)[valid_ln[self.ln_block]]
            if jacobians:
                J_cam, J_line = out[1], out[2]
                R_rows = R_wb[h]
                J_t = J_cam[:, :3]
                J_rot = (-np.einsum("ni,nij->nj", J_t, R_rows @ hat(self.T_bc.t))
                         + J_cam[:, 3:] @ self.T_bc.R.T)
                m = len(h)
                J = np.zeros((m, self.n_params))
                rows = np.arange(m)[:, None]
                J[rows, 6 * h[:, None] + np.arange(3)] = J_t
                J[rows, 6 * h[:, None] + 3 + np.arange(3)] = J_rot
                J[rows, self.line_offset + 4 * k[:, None] + np.arange(4)] = J_line
                weight = np.where(valid_ln, drho / self.ln_sigma ** 2, 0.0)[self.ln_block]
                blocks_r.append(r_ln)
                blocks_w.append(weight)
                blocks_J.append(J)

        evaluation = _Evaluation(cost, dropped_points, dropped_lines, point_sq, line_sq)
        if jacobians:
            if blocks_J:
                evaluation.r = np.concatenate(blocks_r)
                evaluation.w = np.concatenate(blocks_w)
                evaluation.J = np.vstack(blocks_J)
            else:
                evaluation.r = np.zeros(0)
                evaluation.w = np.zeros(0)
                evaluation.J = np.zeros((0, self.n_params))
        return evaluation

    def block_names(self) -> List[Tuple[str, np.ndarray]]:
        names = [(f"keyframe {i}", np.arange(6 * i, 6 * i + 6)) for i in range(self.n_kf)]
        names += [(f"point {pid}", np.array([self.point_offset + j])) for j, pid in enumerate(self.point_ids)]
        names += [(f"line {lid}", self.line_offset + 4 * k + np.arange(4)) for k, lid in enumerate(self.line_ids)]
        return names

    def ill_conditioned_lines(self, H: np.ndarray) -> List[int]:
        """Lines whose own 4x4 information block is nearly singular.

        Lines without any information are left to check_constrained.
        """
        if not self.line_ids:
            return []
        cols = self.line_offset + 4 * np.arange(len(self.line_ids))[:, None] + np.arange(4)
        eigs = np.linalg.eigvalsh(H[cols[:, :, None], cols[:, None, :]])
        weak = (eigs[:, -1] > 0.0) & (eigs[:, 0] <= self.config.min_line_conditioning * eigs[:, -1])
        return [lid for lid, flag in zip(self.line_ids, weak.tolist()) if flag]

    def check_constrained(self, H: np.ndarray) -> None:
        """Raise when a free parameter block has no information beyond the gauge."""
        diag = np.diag(H)[self.free]
        scale = float(diag.mean()) if diag.size else 0.0
        for name, cols in self.block_names():
            cols = cols[self.free[cols]]
            if not cols.size:
                continue
            block = H[np.ix_(cols, cols)]
            trace = float(np.trace(block))
            if trace <= 1e-12 * scale or trace == 0.0:
                raise UnderconstrainedError(name, "no observation constrains it")
            min_eig = float(np.linalg.eigvalsh(block)[0])
            if min_eig <= 1e-10 * trace:
                raise UnderconstrainedError(name, f"rank deficient (min eigenvalue {min_eig:.3g})")

    def damping(self, H: np.ndarray) -> np.ndarray:
        """Marquardt scaling with an isotropic value per keyframe translation."""
        D = np.diag(H).copy()
        for i in range(self.n_kf):
            D[6 * i:6 * i + 3] = D[6 * i:6 * i + 3].mean()
        D = D[self.free_index]
        floor = 1e-9 * max(float(D.max()) if D.size else 0.0, 1e-300)
        return np.maximum(D, floor)

    def retract(self, state: WindowState, delta: np.ndarray) -> WindowState:
        """Apply a full-length parameter step on the manifold."""
        new = state.copy()
        for i, kf in enumerate(new.keyframes):
            step = delta[6 * i:6 * i + 6]
            if not step.any():
                continue
            kf.p = kf.p + step[:3]
            q = Rotation.from_matrix(kf.R @ so3_exp(step[3:])).as_quat()
            kf.q = -q if q[3] < 0 else q
        for j, pid in enumerate(self.point_ids):
            step = delta[self.point_offset + j]
            if step:
                lm = new.points[pid]
                new.points[pid] = PointLandmark(lm.landmark_id, lm.anchor, lm.bearing,
                                                max(lm.inv_depth + step, MIN_INV_DEPTH))
        for k, lid in enumerate(self.line_ids):
            step = delta[self.line_offset + 4 * k:self.line_offset + 4 * k + 4]
            if step.any():
                new.lines[lid] = update_orthonormal(new.lines[lid], step)
        return new


def _rmse(sq: np.ndarray) -> float:
    return float(np.sqrt(sq.mean())) if sq.size else 0.0


def _information(evaluation: _Evaluation) -> np.ndarray:
    return (evaluation.J * evaluation.w[:, None]).T @ evaluation.J


def optimize_window(
    state: WindowState,
    observations: Optional[Sequence[Observation]] = None,
    config: Optional[SolverConfig] = None,
) -> Tuple[WindowState, WindowReport]:
    """Levenberg-Marquardt over keyframe poses, inverse depths and lines.

    Keyframe 0 is fixed and keyframe 1 keeps its position. A step is
    accepted only when it lowers the robust cost without dropping more
    factors; on acceptance damping is divided by 10, on rejection
    multiplied by 10.

    Args:
        state: Window to refine; it is not modified.
        observations: Replaces state.observations when given.
        config: Solver settings, defaults from the environment.

    Returns:
        The refined copy of the window and a WindowReport.
    """
    config = config or SolverConfig()
    if not state.keyframes:
        raise ArgumentError("cannot optimize an empty window")
    if observations is not None:
        state = state.copy()
        state.observations = list(observations)

    problem = WindowProblem(state, config)
    current = problem.evaluate(state, jacobians=True)
    termination = "max_iterations"

    if current.cost < config.abs_tol:
        termination = "converged"
    elif problem.free_index.size == 0:
        termination = "nothing_to_optimize"
    else:
        H = _information(current)
        weak = problem.ill_conditioned_lines(H)
        if weak:
            logger.info("leaving out %d ill-conditioned lines: %s", len(weak), weak)
            problem = WindowProblem(state, config, excluded_lines=weak)
            current = problem.evaluate(state, jacobians=True)
            H = _information(current)
        if current.cost < config.abs_tol:
            termination = "converged"
        elif problem.free_index.size == 0:
            termination = "nothing_to_optimize"
        else:
            problem.check_constrained(H)

    initial_cost = current.cost
    cost_trace = [current.cost]
    lam = config.initial_lambda
    iterations = 0
    accepted = 0

    if termination == "max_iterations":
        while iterations < config.max_iterations:
            iterations += 1
            H = _information(current)
            g = current.J.T @ (current.w * current.r)
            free = problem.free_index
            H_ff = H[np.ix_(free, free)] + lam * np.diag(problem.damping(H))
            try:
                step = -cho_solve(cho_factor(H_ff), g[free])
            except LinAlgError:
                step = None

            candidate = None
            if step is not None and np.all(np.isfinite(step)):
                delta = np.zeros(problem.n_params)
                delta[free] = step
                candidate = problem.retract(state, delta)
                trial = problem.evaluate(candidate)

            if candidate is not None and trial.cost < current.cost and trial.dropped <= current.dropped:
                decrease = (current.cost - trial.cost) / current.cost
                state = candidate
                current = problem.evaluate(state, jacobians=True)
                cost_trace.append(current.cost)
                accepted += 1
                lam = max(lam / 10.0, 1e-15)
                logger.debug("iteration %d: cost %.6g (lambda %.1e)", iterations, current.cost, lam)
                if decrease < config.tol or current.cost < config.abs_tol:
                    termination = "converged"
                    break
            else:
                lam *= 10.0
                if lam > MAX_LAMBDA:
                    termination = "damping_limit"
                    break

    if current.dropped:
        logger.warning("dropped %d point and %d line factors (cheirality or degenerate projection)",
                       current.dropped_points, current.dropped_lines)
    report = WindowReport(
        iterations=iterations,
        accepted_steps=accepted,
        cost_trace=cost_trace,
        initial_cost=initial_cost,
        final_cost=current.cost,
        point_rmse=_rmse(current.point_sq),
        line_rmse=_rmse(current.line_sq),
        n_point_factors=problem.n_point_factors,
        n_line_factors=problem.n_line_factors,
        dropped_point_factors=current.dropped_points,
        dropped_line_factors=current.dropped_lines,
        inactive_lines=problem.inactive_lines,
        ill_conditioned_lines=problem.excluded_lines,
        final_lambda=lam,
        termination=termination,
    )
    logger.info("window of %d keyframes: cost %.6g -> %.6g in %d iterations (%s)",
                problem.n_kf, initial_cost, current.cost, iterations, termination)
    return state, report


def _reanchor(state: WindowState, lm: PointLandmark, old_anchor: KeyframeState) -> Optional[PointLandmark]:
    """Move a point to the oldest keyframe still observing it, keeping its world position."""
    observers = {o.keyframe_id for o in state.observations_of(POINT, lm.landmark_id)}
    for kf in state.keyframes:
        if kf.frame_id not in observers:
            continue
        X_w = old_anchor.camera_pose(state.T_bc).apply(lm.point_in_anchor)
        X_c = kf.camera_pose(state.T_bc).inverse().apply(X_w)
        depth = float(np.linalg.norm(X_c))
        if X_c[2] <= MIN_DEPTH:
            return None
        return PointLandmark(lm.landmark_id, kf.frame_id, X_c / depth, 1.0 / depth)
    return None


def slide_window(
    state: WindowState,
    new_keyframe: KeyframeState,
    policy: Optional[SlidePolicy] = None,
    new_observations: Iterable[Observation] = (),
) -> WindowState:
    """Insert a keyframe, dropping the oldest ones until the window fits the policy capacity.

    Each dropped keyframe takes its observations with it; points anchored
    there move to the oldest remaining keyframe that observes them.
    """
    policy = policy or SlidePolicy(capacity=state.capacity)
    if new_keyframe.frame_id in state.frame_ids:
        raise ArgumentError(f"keyframe {new_keyframe.frame_id} is already in the window")

    new = state.copy()
    new.capacity = policy.capacity
    new.keyframes.append(new_keyframe)
    new.observations.extend(new_observations)

    dropped: List[int] = []
    lost_points = lost_lines = 0
    while len(new.keyframes) > policy.capacity:
        oldest = new.keyframes.pop(0)
        dropped.append(oldest.frame_id)
        new.observations = [o for o in new.observations if o.keyframe_id != oldest.frame_id]
        for pid, lm in list(new.points.items()):
            if lm.anchor != oldest.frame_id:
                continue
            moved = _reanchor(new, lm, oldest)
            if moved is None:
                del new.points[pid]
                lost_points += 1
            else:
                new.points[pid] = moved

    counts: Dict[Tuple[str, int], int] = {}
    for o in new.observations:
        counts[(o.kind, o.feature_id)] = counts.get((o.kind, o.feature_id), 0) + 1
    for pid in [p for p in new.points if counts.get((POINT, p), 0) < policy.min_observations]:
        del new.points[pid]
        lost_points += 1
    for lid in [l for l in new.lines if counts.get((LINE, l), 0) < policy.min_observations]:
        del new.lines[lid]
        lost_lines += 1
    removed = {(POINT, p) for p in state.points if p not in new.points}
    removed |= {(LINE, l) for l in state.lines if l not in new.lines}
    if removed:
        new.observations = [o for o in new.observations if (o.kind, o.feature_id) not in removed]

    logger.info("slid window to keyframe %d: dropped keyframes %s, %d points, %d lines",
                new_keyframe.frame_id, dropped, lost_points, lost_lines)
    return new


def _merge_tracks(state: WindowState, tracks: Optional[Mapping[int, Sequence[Observation]]]) -> WindowState:
    new = state.copy()
    if tracks:
        present = set(map(id, new.observations))
        for obs_list in tracks.values():
            new.observations.extend(o for o in obs_list if id(o) not in present)
    return new


def _pending_tracks(state: WindowState, kind: str, known) -> Dict[int, List[Observation]]:
    in_window = set(state.frame_ids)
    tracks: Dict[int, List[Observation]] = {}
    for o in state.observations:
        if o.kind == kind and o.feature_id not in known and o.keyframe_id in in_window:
            tracks.setdefault(o.feature_id, []).append(o)
    return {fid: obs for fid, obs in tracks.items() if len({o.keyframe_id for o in obs}) >= 2}


def _widest_pair(state: WindowState, obs: List[Observation]) -> Tuple[Observation, Observation, float]:
    centres = [state.keyframe(o.keyframe_id).camera_pose(state.T_bc).t for o in obs]
    best = (obs[0], obs[1], -1.0)
    for i in range(len(obs)):
        for k in range(i + 1, len(obs)):
            baseline = float(np.linalg.norm(centres[i] - centres[k]))
            if baseline > best[2]:
                best = (obs[i], obs[k], baseline)
    return best


def triangulate_new_lines(
    state: WindowState,
    tracks: Optional[Mapping[int, Sequence[Observation]]] = None,
    config: Optional[SolverConfig] = None,
) -> Tuple[WindowState, TriangulationReport]:
    """Initialize lines from the two observations with the widest baseline.

    A candidate is kept only when every observing keyframe sees it within
    the residual gate, checked at the segment midpoint and both endpoints.
    """
    config = config or SolverConfig()
    new = _merge_tracks(state, tracks)
    report = TriangulationReport()
    cam = new.camera
    for fid, obs in sorted(_pending_tracks(new, LINE, new.lines).items()):
        report.attempted += 1
        first, second, baseline = _widest_pair(new, obs)
        if baseline < config.min_baseline:
            report.rejected_baseline += 1
            continue
        try:
            planes = [plane_from_observation(new.keyframe(o.keyframe_id).camera_pose(new.T_bc), o.segment, cam)
                      for o in (first, second)]
            plucker = triangulate_dual_plucker(*planes)
        except (DegenerateGeometryError, DegenerateObservationError):
            report.rejected_parallel += 1
            continue
        try:
            line = to_orthonormal(plucker)
        except DegenerateLineError:
            report.rejected_degenerate += 1
            continue

        passed = True
        for o in obs:
            pose = new.keyframe(o.keyframe_id).camera_pose(new.T_bc)
            gate = config.triangulation_gate_sigma * o.sigma
            try:
                worst = max(abs(observation_residual(pose, line, m, cam))
                            for m in (o.midpoint, o.segment.p1, o.segment.p2))
            except LineAtInfinityError:
                passed = False
                break
            if worst > gate:
                passed = False
                break
        if not passed:
            report.rejected_gate += 1
            continue
        new.lines[fid] = line
        report.created += 1

    logger.info("line triangulation: %d of %d tracks initialized", report.created, report.attempted)
    return new, report


def _dlt_point(poses_wc: Sequence[Pose], rays: Sequence[np.ndarray]) -> np.ndarray:
    A = []
    for pose, ray in zip(poses_wc, rays):
        T_cw = pose.inverse()
        P = np.column_stack([T_cw.R, T_cw.t])
        A.append(ray[0] * P[2] - P[0])
        A.append(ray[1] * P[2] - P[1])
    _, _, Vt = np.linalg.svd(np.array(A))
    X = Vt[-1]
    if abs(X[3]) < 1e-12:
        raise DegenerateGeometryError("point triangulates at infinity")
    return X[:3] / X[3]


def triangulate_new_points(
    state: WindowState,
    tracks: Optional[Mapping[int, Sequence[Observation]]] = None,
    config: Optional[SolverConfig] = None,
) -> Tuple[WindowState, TriangulationReport]:
    """Two-view DLT from the widest baseline, anchored at the oldest observing keyframe."""
    config = config or SolverConfig()
    new = _merge_tracks(state, tracks)
    report = TriangulationReport()
    cam = new.camera
    for fid, obs in sorted(_pending_tracks(new, POINT, new.points).items()):
        report.attempted += 1
        first, second, baseline = _widest_pair(new, obs)
        if baseline < config.min_baseline:
            report.rejected_baseline += 1
            continue
        pair = [new.keyframe(o.keyframe_id).camera_pose(new.T_bc) for o in (first, second)]
        try:
            X_w = _dlt_point(pair, [cam.back_project(o.uv) for o in (first, second)])
        except DegenerateGeometryError:
            report.rejected_parallel += 1
            continue

        obs = sorted(obs, key=lambda o: new.index_of(o.keyframe_id))
        anchor = new.keyframe(obs[0].keyframe_id)
        # bearing along the anchor's own measurement, distance from the triangulated point
        X_a = anchor.camera_pose(new.T_bc).inverse().apply(X_w)
        ray = cam.back_project(obs[0].uv)
        bearing = ray / np.linalg.norm(ray)
        distance = float(X_a @ bearing)
        if X_a[2] <= MIN_DEPTH or distance <= MIN_DEPTH:
            report.rejected_cheirality += 1
            continue
        lm = PointLandmark(fid, anchor.frame_id, bearing, 1.0 / distance)
        try:
            errors = [np.linalg.norm(point_residual(o, anchor, new.keyframe(o.keyframe_id), lm, new.T_bc, cam))
                      / o.sigma for o in obs]
        except CheiralityError:
            report.rejected_cheirality += 1
            continue
        if max(errors) > config.triangulation_gate_sigma:
            report.rejected_gate += 1
            continue
        new.points[fid] = lm
        report.created += 1

    logger.info("point triangulation: %d of %d tracks initialized", report.created, report.attempted)
    return new, report


def needs_new_keyframe(
    mean_parallax_px: float,
    tracked_features: int,
    min_parallax_px: float = 10.0,
    min_tracked: int = 20,
) -> bool:
    return mean_parallax_px >= min_parallax_px or tracked_features < min_tracked
