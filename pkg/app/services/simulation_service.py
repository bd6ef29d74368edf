"""Synthetic corridor scenes and their noisy pinhole observations."""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from app.core.errors import SceneGenerationError
from app.models.geometry import CameraModel, Pose
from app.models.image import LineSegment2D
from app.models.scene import SyntheticScene
from app.models.window import Observation
from app.schemas.experiment import CameraConfig, SceneConfig

logger = logging.getLogger(__name__)

# camera z forward = body x, camera x right = body -y, camera y down = body -z
R_BC = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
T_BC = np.array([0.05, 0.0, 0.02])


def default_extrinsics() -> Pose:
    return Pose(R_BC, T_BC, "camera", "body")


def camera_from_config(cfg: CameraConfig) -> CameraModel:
    return CameraModel(cfg.fx, cfg.fy, cfg.cx, cfg.cy, cfg.width, cfg.height)


def corridor_trajectory(config: SceneConfig, rng: np.random.Generator) -> Tuple[List[Pose], np.ndarray]:
    """Forward motion along +x with sinusoidal sway, bob, yaw and pitch."""
    phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
    poses = []
    for k in range(config.n_keyframes):
        s = k * config.keyframe_spacing
        position = np.array([
            s,
            config.lateral_amplitude * np.sin(2.0 * np.pi * s / 2.4 + phases[0]),
            config.vertical_amplitude * np.sin(2.0 * np.pi * s / 1.8 + phases[1]),
        ])
        yaw = np.radians(config.yaw_amplitude_deg) * np.sin(2.0 * np.pi * s / 3.0 + phases[2])
        pitch = np.radians(config.pitch_amplitude_deg) * np.sin(2.0 * np.pi * s / 2.0 + phases[3])
        R = Rotation.from_euler("ZYX", [yaw, pitch, 0.0]).as_matrix()
        poses.append(Pose(R, position, "body", "world"))
    return poses, np.arange(config.n_keyframes) * config.keyframe_dt


def liang_barsky(p1, p2, xmin: float, xmax: float, ymin: float, ymax: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Clip segment p1-p2 to an axis-aligned box; None when it misses the box."""
    p1 = np.asarray(p1, dtype=float)
    d = np.asarray(p2, dtype=float) - p1
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], p1[0] - xmin), (d[0], xmax - p1[0]), (-d[1], p1[1] - ymin), (d[1], ymax - p1[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    return p1 + t0 * d, p1 + t1 * d


def project_segment(
    T_cw: Pose,
    X1,
    X2,
    cam: CameraModel,
    near_plane: float = 0.1,
    min_length_px: float = 0.0,
) -> Optional[LineSegment2D]:
    """Image of a 3D segment after near-plane and image-border clipping."""
    c1, c2 = T_cw.apply(np.asarray(X1, dtype=float)), T_cw.apply(np.asarray(X2, dtype=float))
    if c1[2] < near_plane and c2[2] < near_plane:
        return None
    if c1[2] < near_plane:
        c1 = c1 + (near_plane - c1[2]) / (c2[2] - c1[2]) * (c2 - c1)
    elif c2[2] < near_plane:
        c2 = c2 + (near_plane - c2[2]) / (c1[2] - c2[2]) * (c1 - c2)
    clipped = liang_barsky(cam.project(c1), cam.project(c2), 0.0, cam.width - 1, 0.0, cam.height - 1)
    if clipped is None:
        return None
    a, b = clipped
    if np.hypot(*(b - a)) < max(min_length_px, 1e-9):
        return None
    return LineSegment2D.from_points(a, b)


def _point_visible(T_cw: Pose, X: np.ndarray, cam: CameraModel, near_plane: float) -> bool:
    X_c = T_cw.apply(X)
    return bool(X_c[2] >= near_plane and cam.contains(cam.project(X_c)))


def _sample_on_wall(config: SceneConfig, rng: np.random.Generator, x_range: Tuple[float, float]):
    """Random surface index and a point on it."""
    surface = int(rng.integers(0, 4))
    x = rng.uniform(*x_range)
    if surface < 2:
        y = config.half_width if surface == 0 else -config.half_width
        z = rng.uniform(-config.half_height, config.half_height)
    else:
        z = -config.half_height if surface == 2 else config.half_height
        y = rng.uniform(-config.half_width, config.half_width)
    return surface, np.array([x, y, z])


def _sample_line(config: SceneConfig, rng: np.random.Generator, x_range: Tuple[float, float]) -> Optional[np.ndarray]:
    surface, centre = _sample_on_wall(config, rng, x_range)
    # walls carry x and z lines, floor and ceiling x and y lines
    axis = 0 if rng.random() < 0.5 else (2 if surface < 2 else 1)
    half = 0.5 * rng.uniform(config.line_length_min, config.line_length_max)
    bounds = {0: x_range, 1: (-config.half_width, config.half_width), 2: (-config.half_height, config.half_height)}
    lo, hi = bounds[axis]
    a, b = centre.copy(), centre.copy()
    a[axis] = max(centre[axis] - half, lo)
    b[axis] = min(centre[axis] + half, hi)
    if b[axis] - a[axis] < config.line_length_min:
        return None
    return np.array([a, b])


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Corridor scene whose landmarks are visible from enough keyframes.

    Points must be seen by `min_views` keyframes and lines by
    `min_line_views`, each by rejection sampling with a bounded number of
    attempts.
    """
    rng = np.random.default_rng([seed, 0])
    cam = camera_from_config(config.camera)
    T_bc = default_extrinsics()
    poses, timestamps = corridor_trajectory(config, rng)
    T_cws = [(pose @ T_bc).inverse() for pose in poses]
    x_range = (-0.5, poses[-1].t[0] + config.depth_ahead)

    points = []
    for i in range(config.n_points):
        for _ in range(config.max_attempts_per_landmark):
            _, X = _sample_on_wall(config, rng, x_range)
            views = sum(_point_visible(T_cw, X, cam, config.near_plane) for T_cw in T_cws)
            if views >= config.min_views:
                points.append(X)
                break
        else:
            raise SceneGenerationError(
                f"point {i}: no placement visible from {config.min_views} keyframes "
                f"after {config.max_attempts_per_landmark} attempts"
            )

    lines = []
    for i in range(config.n_lines):
        for _ in range(config.max_attempts_per_landmark):
            candidate = _sample_line(config, rng, x_range)
            if candidate is None:
                continue
            views = sum(
                project_segment(T_cw, candidate[0], candidate[1], cam, config.near_plane, config.min_segment_px)
                is not None
                for T_cw in T_cws
            )
            if views >= config.min_line_views:
                lines.append(candidate)
                break
        else:
            raise SceneGenerationError(
                f"line {i}: no placement visible from {config.min_line_views} keyframes "
                f"after {config.max_attempts_per_landmark} attempts"
            )

    logger.info("generated scene seed=%d: %d keyframes, %d points, %d lines",
                seed, len(poses), len(points), len(lines))
    return SyntheticScene(
        points=np.array(points).reshape(-1, 3),
        lines=np.array(lines).reshape(-1, 2, 3),
        poses=poses,
        timestamps=timestamps,
        camera=cam,
        T_bc=T_bc,
        seed=seed,
        near_plane=config.near_plane,
        min_segment_px=config.min_segment_px,
    )


def project_scene(scene: SyntheticScene, noise_sigma_px: float, seed: int) -> List[List[Observation]]:
    """Observations per keyframe; keyframe ids are the keyframe indices.

    Segment endpoints are perturbed independently after clipping, so the
    midpoint follows the clipped, noisy endpoints.
    """
    rng = np.random.default_rng([seed, 1])
    cam = scene.camera
    sigma = noise_sigma_px if noise_sigma_px > 0 else 1.0
    per_frame = []
    for k in range(scene.n_keyframes):
        T_cw = scene.camera_pose(k).inverse()
        frame: List[Observation] = []
        for j, X in enumerate(scene.points):
            if not _point_visible(T_cw, X, cam, scene.near_plane):
                continue
            uv = cam.project(T_cw.apply(X)) + noise_sigma_px * rng.standard_normal(2)
            frame.append(Observation.point(k, j, uv, sigma=sigma))
        for j, (X1, X2) in enumerate(scene.lines):
            seg = project_segment(T_cw, X1, X2, cam, scene.near_plane, scene.min_segment_px)
            if seg is None:
                continue
            if noise_sigma_px > 0:
                noise = noise_sigma_px * rng.standard_normal(4)
                seg = LineSegment2D(seg.x1 + noise[0], seg.y1 + noise[1], seg.x2 + noise[2], seg.y2 + noise[3])
            frame.append(Observation.line(k, j, seg, sigma=sigma))
        per_frame.append(frame)
    logger.debug("projected %d observations over %d keyframes",
                 sum(len(f) for f in per_frame), len(per_frame))
    return per_frame
