from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from app.core.config import settings


class SolverConfig(BaseModel):
    max_iterations: int = Field(default=settings.SOLVER_MAX_ITERATIONS, ge=0)
    tol: float = Field(default=settings.SOLVER_TOL, gt=0.0)
    abs_tol: float = Field(default=1e-16, ge=0.0)
    initial_lambda: float = Field(default=settings.SOLVER_INITIAL_LAMBDA, gt=0.0)
    use_points: bool = True
    use_lines: bool = True
    use_huber: bool = True
    line_residual: Literal["midpoint", "endpoints"] = "midpoint"
    # lines with fewer observations stay out of the problem; None picks 4 (midpoint) or 2 (endpoints)
    min_line_observations: Optional[int] = Field(default=None, ge=2)
    # lines whose own information block has min/max eigenvalue at or below this are left out
    min_line_conditioning: float = Field(default=1e-8, ge=0.0, lt=1.0)
    triangulation_gate_sigma: float = Field(default=3.0, gt=0.0)
    min_baseline: float = Field(default=0.05, ge=0.0)

    class Config:
        extra = "forbid"

    @property
    def line_observations_needed(self) -> int:
        if self.min_line_observations is not None:
            return self.min_line_observations
        return 4 if self.line_residual == "midpoint" else 2


class SlidePolicy(BaseModel):
    capacity: int = Field(default=settings.WINDOW_CAPACITY, ge=2)
    min_observations: int = Field(default=2, ge=1)

    class Config:
        extra = "forbid"


class WindowReport(BaseModel):
    iterations: int
    accepted_steps: int
    cost_trace: List[float]
    initial_cost: float
    final_cost: float
    point_rmse: float
    line_rmse: float
    n_point_factors: int
    n_line_factors: int
    dropped_point_factors: int
    dropped_line_factors: int
    inactive_lines: int
    ill_conditioned_lines: int = 0
    final_lambda: float
    termination: str


class TriangulationReport(BaseModel):
    attempted: int = 0
    created: int = 0
    rejected_baseline: int = 0
    rejected_parallel: int = 0
    rejected_degenerate: int = 0
    rejected_cheirality: int = 0
    rejected_gate: int = 0

    @property
    def rejected(self) -> int:
        return (self.rejected_baseline + self.rejected_parallel + self.rejected_degenerate
                + self.rejected_cheirality + self.rejected_gate)
