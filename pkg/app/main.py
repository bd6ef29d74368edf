from typing import Any, Dict, List, Optional

from fastapi import Body, Depends, FastAPI, File, HTTPException, Query, UploadFile
from sqlalchemy.orm import Session

from app.core.config import settings
from app.core.database import get_db, init_db
from app.core.errors import LinewinError
from app.core.logging import setup_logging
from app.schemas.detection import (
    DetectorParams,
    DetectResponse,
    LineMatchResponse,
    MatchGates,
    MatchResponse,
    SegmentResponse,
)
from app.schemas.evaluation import EvalReport
from app.schemas.experiment import ExperimentResult, ExperimentRunResponse
from app.services import run_service
from app.services.evaluation_service import evaluate_trajectory, parse_tum
from app.services.experiment_service import load_spec, run_experiment
from app.services.image_service import load_pgm
from app.services.lsd_service import detect_lines, length_threshold
from app.services.matching_service import describe_all, match_lines

setup_logging()

# Create database tables
init_db()

app = FastAPI(title="Line Window Toolkit")


def _params(s: Optional[float], d: Optional[float], eta: Optional[float], layers: Optional[int]) -> DetectorParams:
    values = {"image_scale": s, "density_threshold": d, "length_ratio": eta, "n_layers": layers}
    try:
        return DetectorParams(**{k: v for k, v in values.items() if v is not None})
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))


async def _image(upload: UploadFile):
    try:
        return load_pgm(await upload.read())
    except LinewinError as e:
        raise HTTPException(status_code=400, detail=f"{upload.filename}: {e}")


@app.get("/health")
async def health():
    return {"status": "ok"}


@app.post("/api/detect", response_model=DetectResponse)
async def api_detect(
    image: UploadFile = File(...),
    s: Optional[float] = Query(None),
    d: Optional[float] = Query(None),
    eta: Optional[float] = Query(None),
    layers: Optional[int] = Query(None),
):
    params = _params(s, d, eta, layers)
    img = await _image(image)
    try:
        segments = detect_lines(img, params)
    except LinewinError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return DetectResponse(
        width=img.width,
        height=img.height,
        min_length=length_threshold(img.width, img.height, params.length_ratio),
        segments=[SegmentResponse.model_validate(seg) for seg in segments],
    )


@app.post("/api/match", response_model=MatchResponse)
async def api_match(
    image_a: UploadFile = File(...),
    image_b: UploadFile = File(...),
    hamming_gate: int = Query(settings.MATCH_HAMMING_GATE, ge=0, le=256),
    angle_gate: float = Query(settings.MATCH_ANGLE_GATE, ge=0.0),
):
    params = DetectorParams()
    img_a, img_b = await _image(image_a), await _image(image_b)
    try:
        segs_a, segs_b = detect_lines(img_a, params), detect_lines(img_b, params)
        matches = match_lines(describe_all(img_a, segs_a), describe_all(img_b, segs_b), segs_a, segs_b,
                              MatchGates(hamming_gate=hamming_gate, angle_gate=angle_gate))
    except LinewinError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return MatchResponse(
        segments_a=[SegmentResponse.model_validate(seg) for seg in segs_a],
        segments_b=[SegmentResponse.model_validate(seg) for seg in segs_b],
        matches=[LineMatchResponse.model_validate(m) for m in matches],
    )


@app.post("/api/eval", response_model=EvalReport)
async def api_eval(
    estimate: UploadFile = File(...),
    truth: UploadFile = File(...),
    rpe_delta: str = Query("1"),
    align: bool = Query(True),
):
    try:
        est = parse_tum((await estimate.read()).decode())
        gt = parse_tum((await truth.read()).decode())
        return evaluate_trajectory(est, gt, rpe_delta, align)
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="trajectory files must be text")
    except LinewinError as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.post("/api/simulate", response_model=ExperimentResult)
def api_simulate(
    spec: Dict[str, Any] = Body(...),
    db: Session = Depends(get_db),
):
    """Run an experiment spec; report files are not written, runs are recorded"""
    try:
        experiment = load_spec(spec)
        return run_experiment(experiment, db=db if settings.RECORD_RUNS else None)
    except LinewinError as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.get("/api/runs", response_model=List[ExperimentRunResponse])
async def api_get_runs(
    config_hash: Optional[str] = None,
    mode: Optional[str] = None,
    skip: int = Query(0, ge=0),
    limit: int = Query(100, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    return run_service.get_runs(db, config_hash=config_hash, mode=mode, skip=skip, limit=limit)


@app.get("/api/runs/{run_id}", response_model=ExperimentRunResponse)
async def api_get_run(run_id: int, db: Session = Depends(get_db)):
    run = run_service.get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run


@app.delete("/api/runs/{run_id}")
async def api_delete_run(run_id: int, db: Session = Depends(get_db)):
    ok = run_service.delete_run(db, run_id)
    if not ok:
        raise HTTPException(status_code=404, detail="Run not found")
    return {"status": "success"}
