from typing import Optional

from pydantic import BaseModel, Field


class EvalReport(BaseModel):
    ate_rmse: float = Field(ge=0.0)
    rpe_trans: float = Field(ge=0.0)
    rpe_rot_deg: float = Field(ge=0.0)
    rpe_delta: str
    rpe_pairs: int
    n_poses: int
    aligned: bool = True
    seed: Optional[int] = None
    mode: Optional[str] = None
    config_hash: Optional[str] = None
