from datetime import datetime
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from app.schemas.evaluation import EvalReport
from app.schemas.window import SolverConfig

Mode = Literal["lines_on", "lines_off"]


class CameraConfig(BaseModel):
    fx: float = Field(default=458.0, gt=0.0)
    fy: float = Field(default=458.0, gt=0.0)
    cx: float = 367.0
    cy: float = 248.0
    width: int = Field(default=752, gt=0)
    height: int = Field(default=480, gt=0)

    class Config:
        extra = "forbid"


class SceneConfig(BaseModel):
    """Corridor along +x with walls at y = +-half_width and floor/ceiling at z = +-half_height."""
    n_keyframes: int = Field(default=10, ge=2)
    n_points: int = Field(default=100, ge=0)
    n_lines: int = Field(default=30, ge=0)
    keyframe_spacing: float = Field(default=0.3, gt=0.0)
    keyframe_dt: float = Field(default=0.5, gt=0.0)
    half_width: float = Field(default=2.0, gt=0.0)
    half_height: float = Field(default=1.5, gt=0.0)
    depth_ahead: float = Field(default=8.0, gt=0.0)
    lateral_amplitude: float = Field(default=0.25, ge=0.0)
    vertical_amplitude: float = Field(default=0.15, ge=0.0)
    yaw_amplitude_deg: float = Field(default=4.0, ge=0.0)
    pitch_amplitude_deg: float = Field(default=2.0, ge=0.0)
    line_length_min: float = Field(default=0.6, gt=0.0)
    line_length_max: float = Field(default=2.0, gt=0.0)
    min_views: int = Field(default=3, ge=2)
    min_line_views: int = Field(default=4, ge=2)
    min_segment_px: float = Field(default=20.0, ge=0.0)
    near_plane: float = Field(default=0.1, gt=0.0)
    max_attempts_per_landmark: int = Field(default=200, ge=1)
    camera: CameraConfig = Field(default_factory=CameraConfig)

    class Config:
        extra = "forbid"


class NoiseConfig(BaseModel):
    pixel_sigma: float = Field(default=1.0, ge=0.0)
    init_pose_sigma_t: float = Field(default=0.02, ge=0.0)
    init_pose_sigma_r_deg: float = Field(default=0.2, ge=0.0)

    class Config:
        extra = "forbid"


class AblationConfig(BaseModel):
    modes: List[Mode] = Field(default_factory=lambda: ["lines_on", "lines_off"], min_length=1)

    class Config:
        extra = "forbid"


class EvaluationConfig(BaseModel):
    rpe_delta: str = "1"
    align: bool = True

    class Config:
        extra = "forbid"


class Assertions(BaseModel):
    max_ate_rmse: Optional[float] = Field(default=None, ge=0.0)
    # bound on each mode's mean ATE over the seeds
    max_mean_ate_rmse: Optional[float] = Field(default=None, ge=0.0)
    min_line_improvement_pct: Optional[float] = None
    min_line_better_fraction: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    class Config:
        extra = "forbid"


class ExperimentSpec(BaseModel):
    scene: SceneConfig = Field(default_factory=SceneConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    window_capacity: Optional[int] = Field(default=None, ge=2)
    seeds: List[int] = Field(min_length=1)
    assertions: Optional[Assertions] = None

    class Config:
        extra = "forbid"

    @field_validator("seeds")
    @classmethod
    def unique_seeds(cls, seeds: List[int]) -> List[int]:
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be unique")
        return seeds


class RunMetrics(BaseModel):
    """One seed in one ablation mode."""
    report: EvalReport
    iterations: int
    final_cost: float
    lines_in_window: int
    points_in_window: int
    skipped_optimizations: int = 0


class ModeSummary(BaseModel):
    runs: int
    mean_ate_rmse: float
    std_ate_rmse: float
    mean_rpe_trans: float
    mean_rpe_rot_deg: float
    mean_iterations: float


class ExperimentResult(BaseModel):
    config_hash: str
    seeds: List[int]
    runs: List[RunMetrics]
    modes: Dict[str, ModeSummary]
    line_improvement_pct: Optional[float] = None
    line_better_fraction: Optional[float] = None
    assertion_failures: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.assertion_failures


class ExperimentRunResponse(BaseModel):
    id: int
    created_at: Optional[datetime] = None
    config_hash: str
    seed: int
    mode: str
    ate_rmse: float
    rpe_trans: float
    rpe_rot_deg: float
    iterations: int
    final_cost: float
    lines_in_window: int

    class Config:
        from_attributes = True
