import math

import numpy as np
import pytest

from app.core.errors import ArgumentError
from app.models.image import GrayImage, LineSegment2D, LineSupportRegion, angle_difference
from app.schemas.detection import DetectorParams
from app.services.image_service import compute_gradient, render_segments, synthetic_line_image
from app.services.lsd_service import (
    RegionGrower,
    benchmark_detector,
    detect_lines,
    filter_by_length,
    grow_regions,
    length_threshold,
    merge_duplicates,
)


# detections may differ from the render by up to 2 px per end
LENGTH_BAND = 4.0
N_ORACLE_SCENES = 50
N_BENCH_IMAGES = 20


def segment_of_length(length, y=0.0):
    return LineSegment2D(0.0, y, float(length), y)


def endpoint_error(detected: LineSegment2D, truth: LineSegment2D) -> float:
    direct = max(np.linalg.norm(detected.p1 - truth.p1), np.linalg.norm(detected.p2 - truth.p2))
    flipped = max(np.linalg.norm(detected.p1 - truth.p2), np.linalg.norm(detected.p2 - truth.p1))
    return float(min(direct, flipped))


def matches(detected: LineSegment2D, truth: LineSegment2D) -> bool:
    return angle_difference(detected.angle, truth.angle) < math.radians(2.0) and endpoint_error(detected, truth) < 2.0


@pytest.fixture(scope="module")
def clutter():
    img, _ = synthetic_line_image(21, width=240, height=180, count=8, min_length=10, max_length=120)
    return img


def test_length_threshold_examples():
    assert length_threshold(752, 480, 0.125) == 60
    assert length_threshold(480, 752, 0.125) == 60
    assert length_threshold(752, 480, 0.0) == 0


def test_length_threshold_rejects_negative_ratio():
    with pytest.raises(ArgumentError):
        length_threshold(752, 480, -0.1)


def test_filter_by_length_is_inclusive_and_keeps_order():
    segs = [segment_of_length(61), segment_of_length(10), segment_of_length(60)]
    kept = filter_by_length(segs, 60)
    assert [round(s.length) for s in kept] == [61, 60]
    assert filter_by_length(segs, 0) == segs


def test_filter_by_length_is_monotone():
    segs = [segment_of_length(n) for n in (5, 20, 35, 50, 65, 80)]
    for low, high in ((10, 40), (0, 80), (35, 36)):
        assert set(map(id, filter_by_length(segs, high))) <= set(map(id, filter_by_length(segs, low)))


def test_blank_image_has_no_segments():
    assert detect_lines(GrayImage.constant(64, 64, 128.0)) == []


def test_too_small_image_rejected():
    with pytest.raises(ArgumentError):
        detect_lines(GrayImage.constant(12, 12, 0.0), DetectorParams(image_scale=0.5))


def test_single_layer_full_scale_recovers_segment():
    truth = LineSegment2D(50.0, 100.0, 300.0, 100.0)
    img = render_segments(752, 480, [truth])
    params = DetectorParams(image_scale=1.0, n_layers=1, length_ratio=0.125)

    segments = detect_lines(img, params)

    assert len(segments) == 1
    seg = segments[0]
    ends = sorted([seg.p1, seg.p2], key=lambda p: p[0])
    assert np.linalg.norm(ends[0] - truth.p1) < 2.0
    assert np.linalg.norm(ends[1] - truth.p2) < 2.0
    assert angle_difference(seg.angle, truth.angle) < math.radians(2.0)


def test_default_params_find_step_edge():
    data = np.zeros((160, 200))
    data[:, 100:] = 200.0
    segments = detect_lines(GrayImage.from_array(data))

    assert segments
    longest = segments[0]
    assert angle_difference(longest.angle, math.pi / 2) < math.radians(2.0)
    assert abs(longest.midpoint[0] - 99.5) < 2.0
    assert longest.length > 100.0


def test_detection_is_deterministic_and_sorted(clutter):
    params = DetectorParams()
    first = detect_lines(clutter, params)
    second = detect_lines(clutter, params)
    assert first == second
    lengths = [s.length for s in first]
    assert lengths == sorted(lengths, reverse=True)


def test_every_segment_reaches_min_length(clutter):
    params = DetectorParams(length_ratio=0.2)
    min_length = length_threshold(clutter.width, clutter.height, 0.2)
    segments = detect_lines(clutter, params)
    assert all(s.length >= min_length for s in segments)


def test_length_ratio_only_removes_segments(clutter):
    without = detect_lines(clutter, DetectorParams(length_ratio=0.0))
    with_filter = detect_lines(clutter, DetectorParams(length_ratio=0.125))
    assert with_filter == filter_by_length(without, length_threshold(clutter.width, clutter.height, 0.125))


def test_accepted_regions_meet_density(clutter):
    params = DetectorParams(density_threshold=0.7)
    regions = grow_regions(clutter, params)
    assert regions
    for region in regions:
        assert region.density >= 0.7
        assert region.aligned_count <= region.size


def test_sparse_region_without_refinement_is_rejected():
    img = GrayImage.from_array(np.tile(np.arange(16.0) * 10.0, (16, 1)))
    params = DetectorParams(density_threshold=0.6, refine=False)
    grower = RegionGrower(compute_gradient(img), params)
    region = LineSupportRegion(xs=[0, 5, 10], ys=[0, 0, 0], region_angle=0.0, precision=params.angle_tolerance,
                               x1=0.0, y1=0.0, x2=10.0, y2=0.0, width=5.0, aligned_count=3)
    assert region.density < 0.6
    assert grower.refine(region) is None


def test_dense_region_passes_refinement_untouched():
    img = GrayImage.from_array(np.tile(np.arange(16.0) * 10.0, (16, 1)))
    grower = RegionGrower(compute_gradient(img), DetectorParams(density_threshold=0.6))
    region = LineSupportRegion(xs=list(range(10)), ys=[0] * 10, region_angle=0.0, precision=0.4,
                               x1=0.0, y1=0.0, x2=9.0, y2=0.0, width=1.0, aligned_count=10)
    assert grower.refine(region) is region


def test_merge_duplicates_keeps_longer():
    long = LineSegment2D(10.0, 10.0, 110.0, 10.0)
    short = LineSegment2D(30.0, 11.0, 80.0, 11.0, layer=1)
    other = LineSegment2D(10.0, 40.0, 110.0, 40.0)
    assert merge_duplicates([short, long, other]) == [long, other]


def test_merge_prefers_finer_layer_of_similar_length():
    coarse = LineSegment2D(8.0, 20.0, 112.0, 20.0, layer=1)
    fine = LineSegment2D(10.0, 20.5, 110.0, 20.5)
    assert merge_duplicates([coarse, fine]) == [fine]

    much_longer = LineSegment2D(0.0, 20.0, 130.0, 20.0, layer=1)
    assert merge_duplicates([much_longer, fine]) == [much_longer]


def test_default_detector_matches_rendered_ground_truth():
    correct = detected_total = found = required = 0
    for seed in range(N_ORACLE_SCENES):
        img, truth = synthetic_line_image(seed, textured=seed % 4 == 3)
        min_length = length_threshold(img.width, img.height, 0.125)
        segments = detect_lines(img, DetectorParams())
        assert all(seg.length >= min_length for seg in segments)

        candidates = [t for t in truth if t.length >= min_length - LENGTH_BAND]
        correct += sum(any(matches(seg, t) for t in candidates) for seg in segments)
        detected_total += len(segments)
        long_truth = [t for t in truth if t.length >= min_length + LENGTH_BAND]
        found += sum(any(matches(seg, t) for seg in segments) for t in long_truth)
        required += len(long_truth)

    assert required > 10 * N_ORACLE_SCENES
    assert correct / detected_total >= 0.95
    assert found / required >= 0.95


def test_reduced_detector_is_at_least_twice_as_fast():
    images = [synthetic_line_image(seed, textured=seed % 4 == 3)[0] for seed in range(N_BENCH_IMAGES)]
    fast = DetectorParams(image_scale=0.5, density_threshold=0.6, length_ratio=0.125)
    full = DetectorParams(image_scale=0.8, density_threshold=0.7, length_ratio=0.0)
    report = benchmark_detector(images, fast, full, repetitions=1)
    assert report.n_images == N_BENCH_IMAGES
    assert report.speedup >= 2.0
    assert report.config_a.total_segments < report.config_b.total_segments


def test_benchmark_report(clutter):
    a = DetectorParams(length_ratio=0.125)
    b = DetectorParams(length_ratio=0.0)
    report = benchmark_detector([clutter], a, b, repetitions=1)
    assert report.n_images == 1
    assert report.config_a.total_segments <= report.config_b.total_segments
    assert report.speedup > 0.0
    assert report.single_layer_speedup > 0.0


def test_benchmark_needs_images():
    with pytest.raises(ArgumentError):
        benchmark_detector([], DetectorParams(), DetectorParams())
