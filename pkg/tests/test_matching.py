import numpy as np
import pytest

from app.core.errors import ArgumentError
from app.models.image import GrayImage, LineSegment2D
from app.models.matching import DESCRIPTOR_BITS, BandDescriptor
from app.schemas.detection import MatchGates
from app.services.image_service import synthetic_line_image
from app.services.matching_service import describe, describe_all, hamming_matrix, match_lines


JITTER_SEED = 3
N_JITTERED = 20
# 2 px frame motion plus detector noise on each endpoint
FRAME_SHIFT = (1.2, 1.6)
ENDPOINT_JITTER = 0.5


@pytest.fixture(scope="module")
def frame():
    return synthetic_line_image(4, width=320, height=240, count=12, min_length=40, max_length=180, textured=True)


def jittered(seg: LineSegment2D, rng: np.random.Generator) -> LineSegment2D:
    return LineSegment2D.from_points(seg.p1 + rng.uniform(-ENDPOINT_JITTER, ENDPOINT_JITTER, 2),
                                     seg.p2 + rng.uniform(-ENDPOINT_JITTER, ENDPOINT_JITTER, 2))


def rotated(seg: LineSegment2D, angle: float) -> LineSegment2D:
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    mid = seg.midpoint
    return LineSegment2D.from_points(mid + R @ (seg.p1 - mid), mid + R @ (seg.p2 - mid))


def test_descriptor_is_deterministic(frame):
    img, segments = frame
    first, second = describe(img, segments[0]), describe(img, segments[0])
    assert first.bits.size == DESCRIPTOR_BITS
    assert np.array_equal(first.bits, second.bits)


def test_descriptor_ignores_endpoint_order(frame):
    img, segments = frame
    seg = segments[1]
    flipped = LineSegment2D(seg.x2, seg.y2, seg.x1, seg.y1)
    assert describe(img, seg).hamming(describe(img, flipped)) == 0


def test_descriptor_invariant_to_brightness_offset(frame):
    img, segments = frame
    brighter = img.offset(10.0)
    for seg in segments:
        assert describe(img, seg).hamming(describe(brighter, seg)) == 0


def test_edge_and_flat_regions_differ():
    data = np.full((60, 80), 50.0)
    data[30:, :] = 200.0
    img = GrayImage.from_array(data)
    on_edge = describe(img, LineSegment2D(10.0, 29.5, 70.0, 29.5))
    on_flat = describe(img, LineSegment2D(10.0, 8.0, 70.0, 8.0))
    assert not on_flat.bits.any()
    assert on_edge.hamming(on_flat) > 0


def test_describe_rejects_bad_segments(frame):
    img, _ = frame
    with pytest.raises(ArgumentError):
        describe(img, LineSegment2D(-5.0, 10.0, 50.0, 10.0))
    with pytest.raises(ArgumentError):
        describe(img, LineSegment2D(20.0, 20.0, 20.0, 20.0))


def test_hamming_matrix_matches_pairwise(frame):
    img, segments = frame
    descs = describe_all(img, segments[:5])
    dist = hamming_matrix(descs, descs[::-1])
    for i, a in enumerate(descs):
        for j, b in enumerate(descs[::-1]):
            assert dist[i, j] == a.hamming(b)
    assert hamming_matrix([], descs).shape == (0, 5)


def test_identical_frames_match_identically(frame):
    img, segments = frame
    descs = describe_all(img, segments)
    matches = match_lines(descs, descs, segments, segments)
    assert [(m.index_a, m.index_b) for m in matches] == [(i, i) for i in range(len(segments))]
    assert all(m.hamming == 0 and m.angle_diff == 0.0 for m in matches)


def test_jittered_frame_pair_recovers_permutation():
    img_a, segs_a = synthetic_line_image(JITTER_SEED, count=N_JITTERED, min_length=60, max_length=200, textured=True)
    img_b, moved = synthetic_line_image(JITTER_SEED, count=N_JITTERED, min_length=60, max_length=200, textured=True,
                                        shift=FRAME_SHIFT)
    rng = np.random.default_rng(JITTER_SEED)
    perm = rng.permutation(N_JITTERED)
    segs_b = [jittered(moved[k], rng) for k in perm]

    matches = match_lines(describe_all(img_a, segs_a), describe_all(img_b, segs_b), segs_a, segs_b)
    correct = sum(perm[m.index_b] == m.index_a for m in matches)
    assert correct >= 18
    assert correct == len(matches)


def test_angle_gate_excludes_rotated_segment(frame):
    img, segments = frame
    descs = describe_all(img, segments)
    turned = list(segments)
    turned[2] = rotated(segments[2], 0.2)
    matches = match_lines(descs, descs, segments, turned, MatchGates(angle_gate=0.1))
    pairs = {(m.index_a, m.index_b) for m in matches}
    assert (2, 2) not in pairs
    assert len(pairs) == len(segments) - 1


def test_hamming_gate_zero_keeps_only_exact(frame):
    img, segments = frame
    descs = describe_all(img, segments)
    noisy = list(descs)
    bits = noisy[0].bits.copy()
    bits[:3] = ~bits[:3]
    noisy[0] = BandDescriptor(bits)
    matches = match_lines(descs, noisy, segments, segments, MatchGates(hamming_gate=0))
    assert 0 not in {m.index_a for m in matches}


def test_match_rejects_length_mismatch(frame):
    img, segments = frame
    descs = describe_all(img, segments)
    with pytest.raises(ArgumentError):
        match_lines(descs, descs[:-1], segments, segments)


def test_empty_inputs_give_no_matches(frame):
    img, segments = frame
    assert match_lines([], describe_all(img, segments), [], segments) == []
