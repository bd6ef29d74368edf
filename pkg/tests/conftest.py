import os
import tempfile

# settings are read at import time; point the run database somewhere disposable first
_DB_DIR = tempfile.mkdtemp(prefix="linewin-tests-")
os.environ["DATABASE_URL"] = f"sqlite:///{os.path.join(_DB_DIR, 'runs.db')}"
os.environ["RECORD_RUNS"] = "true"
os.environ.setdefault("LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from app.models.geometry import PluckerLine  # noqa: E402
from app.models.window import LINE, POINT, KeyframeState, PointLandmark, WindowState  # noqa: E402
from app.schemas.experiment import SceneConfig  # noqa: E402
from app.services.line_geometry_service import to_orthonormal  # noqa: E402
from app.services.simulation_service import generate_scene, project_scene  # noqa: E402

SCENE_SEED = 7


@pytest.fixture(scope="session")
def scene_config():
    return SceneConfig(n_keyframes=6, n_points=60, n_lines=16)


@pytest.fixture(scope="session")
def scene(scene_config):
    return generate_scene(scene_config, SCENE_SEED)


@pytest.fixture(scope="session")
def exact_observations(scene):
    return project_scene(scene, 0.0, SCENE_SEED)


@pytest.fixture(scope="session")
def noisy_observations(scene):
    return project_scene(scene, 1.0, SCENE_SEED)


def build_window(scene, observations, frames, capacity=None, with_lines=True):
    """Window at ground truth: keyframes `frames`, landmarks seen at least twice in them."""
    keyframes = [KeyframeState.from_pose(k, scene.poses[k], float(scene.timestamps[k])) for k in frames]
    obs = [o for k in frames for o in observations[k]]
    state = WindowState(keyframes=keyframes, camera=scene.camera, T_bc=scene.T_bc,
                        observations=obs, capacity=capacity or max(len(frames), 2))

    seen = {}
    for o in obs:
        seen.setdefault((o.kind, o.feature_id), []).append(o.keyframe_id)
    for (kind, fid), kfs in seen.items():
        if len(kfs) < 2:
            continue
        if kind == POINT:
            anchor = min(kfs, key=frames.index)
            X_a = scene.camera_pose(anchor).inverse().apply(scene.points[fid])
            depth = float(np.linalg.norm(X_a))
            state.points[fid] = PointLandmark(fid, anchor, X_a / depth, 1.0 / depth)
        elif kind == LINE and with_lines:
            X1, X2 = scene.lines[fid]
            state.lines[fid] = to_orthonormal(PluckerLine.from_points(X1, X2))
    return state


@pytest.fixture
def gt_window(scene, exact_observations):
    def make(frames=None, capacity=None, observations=None, with_lines=True):
        frames = list(range(scene.n_keyframes)) if frames is None else list(frames)
        return build_window(scene, observations or exact_observations, frames, capacity, with_lines)
    return make
