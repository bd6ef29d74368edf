import logging
from typing import List, Optional

from sqlalchemy.orm import Session

from app.models.experiment_run import ExperimentRun
from app.schemas.experiment import ExperimentResult

logger = logging.getLogger(__name__)


def record_reports(db: Session, result: ExperimentResult) -> List[ExperimentRun]:
    """Store one row per seed and mode of an experiment"""
    rows = []
    for run in result.runs:
        row = ExperimentRun(
            config_hash=result.config_hash,
            seed=run.report.seed,
            mode=run.report.mode,
            ate_rmse=run.report.ate_rmse,
            rpe_trans=run.report.rpe_trans,
            rpe_rot_deg=run.report.rpe_rot_deg,
            iterations=run.iterations,
            final_cost=run.final_cost,
            lines_in_window=run.lines_in_window,
        )
        db.add(row)
        rows.append(row)
    db.commit()
    for row in rows:
        db.refresh(row)
    logger.info("recorded %d runs for config %s", len(rows), result.config_hash[:12])
    return rows


def get_runs(
    db: Session,
    config_hash: Optional[str] = None,
    mode: Optional[str] = None,
    skip: int = 0,
    limit: int = 100,
) -> List[ExperimentRun]:
    query = db.query(ExperimentRun)
    if config_hash:
        query = query.filter(ExperimentRun.config_hash == config_hash)
    if mode:
        query = query.filter(ExperimentRun.mode == mode)
    return query.order_by(ExperimentRun.id.desc()).offset(skip).limit(limit).all()


def get_run(db: Session, run_id: int) -> Optional[ExperimentRun]:
    return db.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()


def delete_run(db: Session, run_id: int) -> bool:
    run = get_run(db, run_id)
    if not run:
        return False
    db.delete(run)
    db.commit()
    return True
