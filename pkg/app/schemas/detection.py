import math
from typing import List

from pydantic import BaseModel, Field

from app.core.config import settings


class DetectorParams(BaseModel):
    n_layers: int = Field(default=settings.LSD_N_LAYERS, ge=1)
    layer_ratio: float = Field(default=settings.LSD_LAYER_RATIO, gt=0.0, lt=1.0)
    image_scale: float = Field(default=settings.LSD_IMAGE_SCALE, gt=0.0, le=1.0)
    density_threshold: float = Field(default=settings.LSD_DENSITY_THRESHOLD, ge=0.0, le=1.0)
    angle_tolerance: float = Field(default=math.radians(settings.LSD_ANGLE_TOLERANCE_DEG), gt=0.0, lt=math.pi / 2)
    gradient_quant_tolerance: float = Field(default=settings.LSD_QUANT_TOLERANCE, gt=0.0)
    length_ratio: float = Field(default=settings.LSD_LENGTH_RATIO, ge=0.0)
    refine: bool = True

    class Config:
        extra = "forbid"


class SegmentResponse(BaseModel):
    x1: float
    y1: float
    x2: float
    y2: float
    length: float
    angle: float
    layer: int = 0

    class Config:
        from_attributes = True


class DetectResponse(BaseModel):
    width: int
    height: int
    min_length: int
    segments: List[SegmentResponse]


class MatchGates(BaseModel):
    hamming_gate: int = Field(default=settings.MATCH_HAMMING_GATE, ge=0, le=256)
    angle_gate: float = Field(default=settings.MATCH_ANGLE_GATE, ge=0.0, le=math.pi / 2)


class LineMatchResponse(BaseModel):
    index_a: int
    index_b: int
    hamming: int
    angle_diff: float

    class Config:
        from_attributes = True


class MatchResponse(BaseModel):
    segments_a: List[SegmentResponse]
    segments_b: List[SegmentResponse]
    matches: List[LineMatchResponse]


class DetectorTiming(BaseModel):
    """Mean wall-clock time per image for one detector configuration."""
    params: DetectorParams
    pyramid_ms: float
    single_layer_ms: float
    segments_per_image: float
    total_segments: int
    single_layer_segments: int


class BenchmarkReport(BaseModel):
    n_images: int
    repetitions: int
    config_a: DetectorTiming
    config_b: DetectorTiming
    speedup: float
    single_layer_speedup: float
