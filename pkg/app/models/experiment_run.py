from sqlalchemy import Column, DateTime, Float, Integer, String
from sqlalchemy.sql import func

from app.core.database import Base


class ExperimentRun(Base):
    """One seed of one ablation mode of a simulated experiment"""
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
    config_hash = Column(String(64), index=True)
    seed = Column(Integer, index=True)
    mode = Column(String(20), index=True)  # lines_on, lines_off

    # Trajectory metrics
    ate_rmse = Column(Float)
    rpe_trans = Column(Float)
    rpe_rot_deg = Column(Float)

    # Solver summary
    iterations = Column(Integer, default=0)
    final_cost = Column(Float)
    lines_in_window = Column(Integer, default=0)
