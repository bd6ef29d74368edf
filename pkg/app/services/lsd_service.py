"""Modified LSD: region growing on level-line angles with density and length rejection.

No a-contrario (NFA) validation is performed; a rectangle survives when its
aligned-point density reaches the threshold, possibly after refinement, and
the final segment is at least the minimum length.
"""
import logging
import math
import time
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import ArgumentError
from app.models.image import GradientField, GrayImage, LineSegment2D, LineSupportRegion, angle_difference
from app.schemas.detection import BenchmarkReport, DetectorParams, DetectorTiming
from app.services.image_service import build_pyramid, compute_gradient, scale_gaussian, scaled_size

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 8
N_BINS = 1024
MERGE_ANGLE = math.radians(3.0)
MERGE_DISTANCE = 3.0
# coarse layers overshoot line ends by about one blur radius per end
MERGE_LENGTH_SLACK = 2.0 * MERGE_DISTANCE

FREE, USED, NOTDEF = 0, 1, 2

TWO_PI = 2.0 * math.pi
THREE_HALVES_PI = 1.5 * math.pi


def length_threshold(width: int, height: int, eta: float) -> int:
    """Minimum accepted segment length, ceil(eta * min(width, height))."""
    if width <= 0 or height <= 0:
        raise ArgumentError("image dimensions must be positive")
    if eta < 0:
        raise ArgumentError("length ratio must be non-negative")
    return int(math.ceil(round(eta * min(width, height), 9)))


def filter_by_length(segments: Sequence[LineSegment2D], min_length: float) -> List[LineSegment2D]:
    return [seg for seg in segments if seg.length >= min_length]


def min_region_size(width: int, height: int, angle_tolerance: float) -> int:
    log_nt = 2.5 * (math.log10(width) + math.log10(height)) + math.log10(11.0)
    p = angle_tolerance / math.pi
    return int(-log_nt / math.log10(p))


def _angle_diff(a: float, b: float) -> float:
    d = a - b
    while d <= -math.pi:
        d += TWO_PI
    while d > math.pi:
        d -= TWO_PI
    return d


def _is_aligned(angle: float, theta: float, prec: float) -> bool:
    d = abs(theta - angle)
    if d > THREE_HALVES_PI:
        d = abs(d - TWO_PI)
    return d <= prec


class RegionGrower:
    """Mutable detection state of one gradient field.

    Angles and pixel states live in flat Python lists; region growing touches
    pixels one at a time and list indexing is much cheaper than ndarray
    indexing there.
    """

    def __init__(self, field: GradientField, params: DetectorParams):
        self.field = field
        self.params = params
        self.width = field.width
        self.height = field.height
        self.prec = params.angle_tolerance
        self.angles = field.angle.ravel().tolist()
        self.cos = np.cos(field.angle).ravel().tolist()
        self.sin = np.sin(field.angle).ravel().tolist()
        self.mags = field.magnitude
        self.state = bytearray(np.where(field.used_mask, NOTDEF, FREE).astype(np.uint8).ravel().tobytes())

    def seed_order(self) -> np.ndarray:
        """Usable pixels in decreasing 1024-bin magnitude order, raster order within a bin."""
        mag = self.field.magnitude.ravel()
        candidates = np.flatnonzero(~self.field.used_mask.ravel())
        if candidates.size == 0:
            return candidates
        max_grad = float(mag[candidates].max())
        bins = np.minimum((mag[candidates] * N_BINS / max_grad).astype(int), N_BINS - 1)
        return candidates[np.argsort(-bins, kind="stable")]

    def grow(self, x0: int, y0: int, prec: float) -> LineSupportRegion:
        w, h = self.width, self.height
        angles, cos, sin, state = self.angles, self.cos, self.sin, self.state
        idx0 = y0 * w + x0
        xs, ys = [x0], [y0]
        state[idx0] = USED
        reg_angle = angles[idx0]
        sum_dx, sum_dy = cos[idx0], sin[idx0]
        i = 0
        while i < len(xs):
            x, y = xs[i], ys[i]
            i += 1
            for yy in (y - 1, y, y + 1):
                if yy < 0 or yy >= h:
                    continue
                base = yy * w
                for xx in (x - 1, x, x + 1):
                    if xx < 0 or xx >= w:
                        continue
                    j = base + xx
                    if state[j] != FREE:
                        continue
                    d = abs(reg_angle - angles[j])
                    if d > THREE_HALVES_PI:
                        d = abs(d - TWO_PI)
                    if d <= prec:
                        state[j] = USED
                        xs.append(xx)
                        ys.append(yy)
                        sum_dx += cos[j]
                        sum_dy += sin[j]
                        reg_angle = math.atan2(sum_dy, sum_dx)
        # rectangle fitting always uses the detector tolerance, even after a tightened regrow
        return LineSupportRegion(xs=xs, ys=ys, region_angle=reg_angle, precision=self.prec)

    def fit_rectangle(self, region: LineSupportRegion) -> LineSupportRegion:
        xs = np.asarray(region.xs, dtype=float)
        ys = np.asarray(region.ys, dtype=float)
        weights = self.mags[region.ys, region.xs]
        total = weights.sum()
        cx = float((weights * xs).sum() / total)
        cy = float((weights * ys).sum() / total)

        # inertia-based principal axis
        ixx = float((weights * (ys - cy) ** 2).sum())
        iyy = float((weights * (xs - cx) ** 2).sum())
        ixy = float(-(weights * (xs - cx) * (ys - cy)).sum())
        lam = 0.5 * (ixx + iyy - math.sqrt((ixx - iyy) ** 2 + 4.0 * ixy * ixy))
        if abs(ixx) > abs(iyy):
            theta = math.atan2(lam - ixx, ixy)
        else:
            theta = math.atan2(ixy, lam - iyy)
        if abs(_angle_diff(theta, region.region_angle)) > region.precision:
            theta += math.pi

        dx, dy = math.cos(theta), math.sin(theta)
        along = (xs - cx) * dx + (ys - cy) * dy
        across = -(xs - cx) * dy + (ys - cy) * dx
        l_min, l_max = float(along.min()), float(along.max())
        region.center = (cx, cy)
        region.angle = theta
        region.x1, region.y1 = cx + l_min * dx, cy + l_min * dy
        region.x2, region.y2 = cx + l_max * dx, cy + l_max * dy
        region.width = max(float(across.max() - across.min()), 1.0)
        region.aligned_count = sum(
            1 for x, y in zip(region.xs, region.ys)
            if _is_aligned(self.angles[y * self.width + x], theta, region.precision)
        )
        return region

    def _release(self, xs: Sequence[int], ys: Sequence[int]) -> None:
        for x, y in zip(xs, ys):
            self.state[y * self.width + x] = FREE

    def refine(self, region: LineSupportRegion) -> Optional[LineSupportRegion]:
        """Tighten the tolerance around the seed, then shrink the region radius."""
        density_th = self.params.density_threshold
        if region.density >= density_th:
            return region
        if not self.params.refine:
            return None

        xc, yc = region.xs[0], region.ys[0]
        ang_c = self.angles[yc * self.width + xc]
        total = sq_total = 0.0
        n = 0
        for x, y in zip(region.xs, region.ys):
            if math.hypot(x - xc, y - yc) < region.width:
                d = _angle_diff(self.angles[y * self.width + x], ang_c)
                total += d
                sq_total += d * d
                n += 1
        self._release(region.xs, region.ys)
        mean = total / n
        tau = 2.0 * math.sqrt(max((sq_total - 2.0 * mean * total) / n + mean * mean, 0.0))

        region = self.grow(xc, yc, tau)
        if region.size < 2:
            return None
        self.fit_rectangle(region)
        if region.density >= density_th:
            return region
        return self._reduce_radius(region)

    def _reduce_radius(self, region: LineSupportRegion) -> Optional[LineSupportRegion]:
        xc, yc = region.xs[0], region.ys[0]
        radius = max(math.hypot(xc - region.x1, yc - region.y1), math.hypot(xc - region.x2, yc - region.y2))
        while region.density < self.params.density_threshold:
            radius *= 0.75
            keep_x, keep_y, drop_x, drop_y = [], [], [], []
            for x, y in zip(region.xs, region.ys):
                if math.hypot(x - xc, y - yc) <= radius:
                    keep_x.append(x)
                    keep_y.append(y)
                else:
                    drop_x.append(x)
                    drop_y.append(y)
            self._release(drop_x, drop_y)
            if len(keep_x) < 2:
                return None
            region = LineSupportRegion(xs=keep_x, ys=keep_y, region_angle=region.region_angle,
                                       precision=region.precision)
            self.fit_rectangle(region)
        return region


def grow_regions(img: GrayImage, params: DetectorParams) -> List[LineSupportRegion]:
    """Accepted line-support regions of one (already scaled) image."""
    field = compute_gradient(img, params.gradient_quant_tolerance, params.angle_tolerance)
    grower = RegionGrower(field, params)
    min_size = min_region_size(img.width, img.height, params.angle_tolerance)
    accepted = []
    n_grown = 0
    for idx in grower.seed_order().tolist():
        if grower.state[idx] != FREE:
            continue
        y, x = divmod(idx, img.width)
        region = grower.grow(x, y, grower.prec)
        n_grown += 1
        if region.size < min_size:
            continue
        grower.fit_rectangle(region)
        region = grower.refine(region)
        if region is not None:
            accepted.append(region)
    logger.debug("layer %dx%d: %d regions grown, %d accepted (min size %d)",
                 img.width, img.height, n_grown, len(accepted), min_size)
    return accepted


def _to_segment(region: LineSupportRegion, factor: float, layer: int) -> LineSegment2D:
    # gradient of pixel (x, y) sits at the centre of its 2x2 block
    return LineSegment2D(
        (region.x1 + 0.5) / factor,
        (region.y1 + 0.5) / factor,
        (region.x2 + 0.5) / factor,
        (region.y2 + 0.5) / factor,
        layer=layer,
    )


def _line_distance(seg: LineSegment2D, point: np.ndarray) -> float:
    direction = (seg.p2 - seg.p1) / seg.length
    rel = point - seg.p1
    return float(abs(rel[0] * direction[1] - rel[1] * direction[0]))


def fuse_thin_lines(segments: List[LineSegment2D], max_width: float) -> List[LineSegment2D]:
    """Replace the two opposite-polarity edge segments of a thin line by their centreline."""
    ordered = sorted(segments, key=lambda s: (-s.length, s.x1, s.y1, s.x2, s.y2))
    taken = [False] * len(ordered)
    fused = []
    for i, seg in enumerate(ordered):
        if taken[i]:
            continue
        taken[i] = True
        if seg.length == 0.0:
            fused.append(seg)
            continue
        direction = (seg.p2 - seg.p1) / seg.length
        partner = None
        for j in range(i + 1, len(ordered)):
            other = ordered[j]
            if taken[j] or other.length == 0.0:
                continue
            other_dir = (other.p2 - other.p1) / other.length
            if direction @ other_dir >= 0.0:
                continue
            if angle_difference(seg.angle, other.angle) >= MERGE_ANGLE:
                continue
            if _line_distance(seg, other.midpoint) >= max_width:
                continue
            # require overlap along the line
            t = [(p - seg.p1) @ direction for p in (other.p1, other.p2)]
            overlap = min(max(t), seg.length) - max(min(t), 0.0)
            if overlap < 0.5 * other.length:
                continue
            partner = j
            break
        if partner is None:
            fused.append(seg)
            continue
        taken[partner] = True
        other = ordered[partner]
        fused.append(LineSegment2D.from_points(
            0.5 * (seg.p1 + other.p2), 0.5 * (seg.p2 + other.p1), layer=seg.layer))
    return fused


def _is_duplicate(seg: LineSegment2D, other: LineSegment2D) -> bool:
    return (angle_difference(seg.angle, other.angle) < MERGE_ANGLE
            and other.distance_to_point(seg.midpoint) < MERGE_DISTANCE)


def merge_duplicates(segments: List[LineSegment2D]) -> List[LineSegment2D]:
    """Greedy longest-first: drop a segment parallel to and within 3 px of a kept one.

    A duplicate from a finer layer replaces a coarser kept segment that is at
    most MERGE_LENGTH_SLACK longer.
    """
    ordered = sorted(segments, key=lambda s: (-s.length, s.layer, s.x1, s.y1, s.x2, s.y2))
    kept: List[LineSegment2D] = []
    for seg in ordered:
        match = next((i for i, other in enumerate(kept) if _is_duplicate(seg, other)), None)
        if match is None:
            kept.append(seg)
        elif seg.layer < kept[match].layer and kept[match].length - seg.length <= MERGE_LENGTH_SLACK:
            kept[match] = seg
    return kept


def detect_lines(img: GrayImage, params: Optional[DetectorParams] = None) -> List[LineSegment2D]:
    """Detect line segments, returned longest first in original-image pixels."""
    params = params or DetectorParams()
    s = params.image_scale
    if scaled_size(img.width, s) < MIN_IMAGE_SIZE or scaled_size(img.height, s) < MIN_IMAGE_SIZE:
        raise ArgumentError(
            f"image {img.width}x{img.height} is smaller than {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE} after scaling by {s}"
        )
    min_length = length_threshold(img.width, img.height, params.length_ratio)

    candidates: List[LineSegment2D] = []
    base = img if s == 1.0 else scale_gaussian(img, s, 0.6 / s)
    for k, scaled in enumerate(build_pyramid(base, params.n_layers, params.layer_ratio)):
        if scaled.width < MIN_IMAGE_SIZE or scaled.height < MIN_IMAGE_SIZE:
            logger.debug("skipping pyramid layer %d (%dx%d)", k, scaled.width, scaled.height)
            continue
        factor = s * params.layer_ratio ** k
        layer_segments = [_to_segment(region, factor, k) for region in grow_regions(scaled, params)]
        # edge separation of a thin line grows with the blur applied to this layer
        fuse_width = MERGE_DISTANCE + 2.0 * 0.6 / factor
        candidates.extend(fuse_thin_lines(layer_segments, fuse_width))

    segments = filter_by_length(merge_duplicates(candidates), min_length)
    segments.sort(key=lambda seg: (-seg.length, seg.x1, seg.y1, seg.x2, seg.y2))
    logger.info("detected %d segments (%d candidates, min length %d px)",
                len(segments), len(candidates), min_length)
    return segments


def _time_config(images: Sequence[GrayImage], params: DetectorParams, repetitions: int):
    elapsed = 0.0
    counts = []
    for _ in range(repetitions):
        counts = []
        for img in images:
            start = time.perf_counter()
            counts.append(len(detect_lines(img, params)))
            elapsed += time.perf_counter() - start
    return 1000.0 * elapsed / (repetitions * len(images)), counts


def benchmark_detector(
    images: Sequence[GrayImage],
    params_a: DetectorParams,
    params_b: DetectorParams,
    repetitions: int = 1,
) -> BenchmarkReport:
    """Mean detection time per image for two configurations on identical inputs."""
    if not images:
        raise ArgumentError("benchmark needs at least one image")
    if repetitions < 1:
        raise ArgumentError("repetitions must be at least 1")

    timings = []
    for params in (params_a, params_b):
        pyramid_ms, counts = _time_config(images, params, repetitions)
        single = params.model_copy(update={"n_layers": 1})
        single_ms, single_counts = _time_config(images, single, repetitions)
        timings.append(DetectorTiming(
            params=params,
            pyramid_ms=pyramid_ms,
            single_layer_ms=single_ms,
            segments_per_image=sum(counts) / len(images),
            total_segments=sum(counts),
            single_layer_segments=sum(single_counts),
        ))
        logger.info("benchmark config %s: %.1f ms pyramid, %.1f ms single layer",
                    params.model_dump(), pyramid_ms, single_ms)

    timing_a, timing_b = timings
    return BenchmarkReport(
        n_images=len(images),
        repetitions=repetitions,
        config_a=timing_a,
        config_b=timing_b,
        speedup=timing_b.pyramid_ms / timing_a.pyramid_ms,
        single_layer_speedup=timing_b.single_layer_ms / timing_a.single_layer_ms,
    )
