"""Band descriptor for line segments and gated mutual-best matching."""
import logging
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from app.core.errors import ArgumentError
from app.models.image import GrayImage, LineSegment2D, angle_difference
from app.models.matching import DESCRIPTOR_BITS, BandDescriptor, LineMatch
from app.schemas.detection import MatchGates

logger = logging.getLogger(__name__)

N_SAMPLES = 32
N_CELLS = 8
N_BANDS = 5
BAND_WIDTH = 3
HALF_WIDTH = N_BANDS * BAND_WIDTH // 2          # perpendicular offsets -7..7
N_STATS = 4
PAIRS_PER_STAT = DESCRIPTOR_BITS // N_STATS
PAIR_SEED = 20240611
SMOOTHING_SIGMA = 1.0
# comparisons within this fraction of the larger statistic count as ties
TIE_RATIO = 0.1
TIE_FLOOR = 1e-6
# a line has a polarity when |sum of perpendicular differences| exceeds this share of their absolute sum
POLARITY_MARGIN = 0.2


def _comparison_pairs() -> np.ndarray:
    rng = np.random.default_rng(PAIR_SEED)
    n_regions = N_CELLS * N_BANDS
    pairs = []
    while len(pairs) < PAIRS_PER_STAT:
        a, b = rng.integers(0, n_regions, size=2)
        if a != b and (a, b) not in pairs:
            pairs.append((int(a), int(b)))
    return np.array(pairs)


PAIRS = _comparison_pairs()


def _smooth(img: GrayImage) -> np.ndarray:
    return ndimage.gaussian_filter(img.data, SMOOTHING_SIGMA, mode="nearest", truncate=3.0)


def _sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(data, np.array([ys, xs]), order=1, mode="nearest")


def _band_statistics(data: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    """Per-region gradient sums, the summed perpendicular difference and its absolute sum."""
    length = np.linalg.norm(p2 - p1)
    u = (p2 - p1) / length
    v = np.array([-u[1], u[0]])
    t = (np.arange(N_SAMPLES) + 0.5) / N_SAMPLES * length
    k = np.arange(-HALF_WIDTH, HALF_WIDTH + 1)
    # sample grid (offsets, along)
    base = p1[None, None, :] + t[None, :, None] * u + k[:, None, None] * v
    bx, by = base[..., 0], base[..., 1]
    d_perp = _sample(data, bx + v[0], by + v[1]) - _sample(data, bx - v[0], by - v[1])
    d_par = _sample(data, bx + u[0], by + u[1]) - _sample(data, bx - u[0], by - u[1])

    stats = []
    for diff in (d_perp, d_par):
        for part in (np.maximum(diff, 0.0), np.maximum(-diff, 0.0)):
            # (bands, band rows, cells, samples per cell) -> (bands, cells)
            cells = part.reshape(N_BANDS, BAND_WIDTH, N_CELLS, N_SAMPLES // N_CELLS).sum(axis=(1, 3))
            stats.append(cells.ravel())
    return np.array(stats), float(d_perp.sum()), float(np.abs(d_perp).sum())


def _check_segment(img: GrayImage, seg: LineSegment2D) -> None:
    for x, y in ((seg.x1, seg.y1), (seg.x2, seg.y2)):
        if not (0.0 <= x <= img.width - 1 and 0.0 <= y <= img.height - 1):
            raise ArgumentError(f"segment endpoint ({x:.2f}, {y:.2f}) outside the image")
    if seg.length == 0.0:
        raise ArgumentError("cannot describe a zero-length segment")


def _descriptor(smoothed: np.ndarray, seg: LineSegment2D) -> BandDescriptor:
    stats, perp_sum, perp_abs = _band_statistics(smoothed, seg.p1, seg.p2)
    if abs(perp_sum) <= POLARITY_MARGIN * perp_abs:
        stats = stats + _band_statistics(smoothed, seg.p2, seg.p1)[0]
    elif perp_sum < 0.0:
        stats = _band_statistics(smoothed, seg.p2, seg.p1)[0]

    a, b = stats[:, PAIRS[:, 0]], stats[:, PAIRS[:, 1]]
    bits = a > b + np.maximum(TIE_RATIO * np.maximum(a, b), TIE_FLOOR)
    return BandDescriptor(bits.ravel())


def describe(img: GrayImage, seg: LineSegment2D) -> BandDescriptor:
    """256-bit descriptor from pairwise comparisons of band gradient statistics.

    The band is sampled bilinearly on a smoothed copy of the image. A line
    with a clear polarity is described in the frame where the summed
    perpendicular difference is positive; a line without one, such as a thin
    line on an even background, sums the statistics of both orientations.
    Either way the result does not depend on endpoint order. Comparisons
    closer than TIE_RATIO give 0, which keeps the bits stable under sub-pixel
    shifts and brightness offsets.
    """
    _check_segment(img, seg)
    return _descriptor(_smooth(img), seg)


def describe_all(img: GrayImage, segments: Sequence[LineSegment2D]) -> List[BandDescriptor]:
    for seg in segments:
        _check_segment(img, seg)
    smoothed = _smooth(img)
    return [_descriptor(smoothed, seg) for seg in segments]


def hamming_matrix(desc_a: Sequence[BandDescriptor], desc_b: Sequence[BandDescriptor]) -> np.ndarray:
    if not desc_a or not desc_b:
        return np.zeros((len(desc_a), len(desc_b)), dtype=int)
    A = np.array([d.bits for d in desc_a], dtype=np.int32)
    B = np.array([d.bits for d in desc_b], dtype=np.int32)
    return A @ (1 - B).T + (1 - A) @ B.T


def match_lines(
    desc_a: Sequence[BandDescriptor],
    desc_b: Sequence[BandDescriptor],
    segs_a: Sequence[LineSegment2D],
    segs_b: Sequence[LineSegment2D],
    gates: Optional[MatchGates] = None,
) -> List[LineMatch]:
    """Mutual nearest neighbours by Hamming distance, kept when both gates pass."""
    if len(desc_a) != len(segs_a) or len(desc_b) != len(segs_b):
        raise ArgumentError("descriptor and segment lists differ in length")
    gates = gates or MatchGates()
    if not desc_a or not desc_b:
        return []

    dist = hamming_matrix(desc_a, desc_b)
    best_b = dist.argmin(axis=1)
    best_a = dist.argmin(axis=0)
    matches = []
    rejected = 0
    for i, j in enumerate(best_b.tolist()):
        if best_a[j] != i:
            continue
        diff = angle_difference(segs_a[i].angle, segs_b[j].angle)
        hamming = int(dist[i, j])
        if hamming <= gates.hamming_gate and diff <= gates.angle_gate:
            matches.append(LineMatch(index_a=i, index_b=j, hamming=hamming, angle_diff=diff))
        else:
            rejected += 1
    logger.debug("matched %d of %d x %d segments, %d mutual pairs failed the gates",
                 len(matches), len(segs_a), len(segs_b), rejected)
    return matches
