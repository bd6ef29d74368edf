import numpy as np
import pytest

from app.core.errors import ArgumentError, PGMParseError
from app.models.image import GrayImage, LineSegment2D
from app.services.image_service import (
    build_pyramid,
    compute_gradient,
    load_pgm,
    render_segments,
    save_pgm,
    scale_gaussian,
    synthetic_line_image,
)


def step_image(width=20, height=16, column=10, low=0.0, high=255.0):
    data = np.full((height, width), low)
    data[:, column:] = high
    return GrayImage.from_array(data)


# PGM

def test_load_ascii_pgm():
    img = load_pgm(b"P2 2 1 255\n0 255\n")
    assert (img.width, img.height) == (2, 1)
    assert img.data.tolist() == [[0.0, 255.0]]


def test_load_pgm_header_comments():
    img = load_pgm(b"P2\n# written by hand\n3 1\n# max\n255\n1 2 3")
    assert img.data.tolist() == [[1.0, 2.0, 3.0]]


def test_binary_round_trip_is_byte_identical():
    rng = np.random.default_rng(3)
    img = GrayImage.from_array(rng.integers(0, 256, size=(7, 11)).astype(float))
    encoded = save_pgm(img)
    assert encoded.startswith(b"P5\n11 7\n255\n")
    assert save_pgm(load_pgm(encoded)) == encoded


def test_zero_width_reports_offset():
    with pytest.raises(PGMParseError) as exc:
        load_pgm(b"P5 0 4 255\n")
    assert exc.value.offset == 3
    assert "byte offset 3" in str(exc.value)


@pytest.mark.parametrize("data", [
    b"P5\n2 2\n255\n\x00\x01\x02",
    b"P2 2 2 255\n1 2 3",
])
def test_truncated_payload(data):
    with pytest.raises(PGMParseError, match="truncated"):
        load_pgm(data)


def test_maxval_above_255_rejected():
    with pytest.raises(PGMParseError, match="maxval"):
        load_pgm(b"P5 1 1 65535\n\x00\x00")


def test_unknown_magic_rejected():
    with pytest.raises(PGMParseError) as exc:
        load_pgm(b"P6 1 1 255\n\x00\x00\x00")
    assert exc.value.offset == 0


# GrayImage

def test_image_rejects_out_of_range_intensity():
    with pytest.raises(ArgumentError):
        GrayImage.from_array(np.array([[0.0, 256.0]]))


def test_image_rejects_length_mismatch():
    with pytest.raises(ArgumentError):
        GrayImage(width=3, height=2, data=np.zeros(5))


# scale_gaussian

def test_scale_identity():
    img = step_image()
    assert scale_gaussian(img, 1.0, 0.0) is img


def test_scale_output_size_uses_ceiling():
    img = GrayImage.constant(752, 480, 10.0)
    half = scale_gaussian(img, 0.5)
    assert (half.width, half.height) == (376, 240)
    odd = scale_gaussian(GrayImage.constant(75, 49, 10.0), 0.5)
    assert (odd.width, odd.height) == (38, 25)


@pytest.mark.parametrize("factor", [1.0, 0.8, 0.5, 0.3])
def test_scale_preserves_constant_image(factor):
    out = scale_gaussian(GrayImage.constant(40, 30, 87.0), factor, 1.5)
    np.testing.assert_allclose(out.data, 87.0, atol=1e-9)
    assert out.width * out.height <= 40 * 30


@pytest.mark.parametrize("factor", [0.0, -0.5, 1.5])
def test_scale_rejects_bad_factor(factor):
    with pytest.raises(ArgumentError):
        scale_gaussian(step_image(), factor)


def test_pyramid_layer_sizes():
    layers = build_pyramid(GrayImage.constant(752, 480, 0.0), 3, 0.5)
    assert [(l.width, l.height) for l in layers] == [(752, 480), (376, 240), (188, 120)]


# compute_gradient

def test_vertical_step_edge_angle():
    field = compute_gradient(step_image(column=10))
    edge = field.usable[:, 9]
    assert edge[:-1].all()
    np.testing.assert_allclose(np.abs(field.angle[:-1, 9]), np.pi / 2, atol=1e-6)
    # only the column straddling the step carries gradient
    usable_cols = np.flatnonzero(field.usable.any(axis=0))
    assert usable_cols.tolist() == [9]


def test_constant_image_has_no_usable_pixels():
    field = compute_gradient(GrayImage.constant(12, 9, 140.0))
    assert not field.usable.any()
    assert (field.magnitude == 0.0).all()


def test_ramp_has_uniform_angle():
    yy, xx = np.mgrid[0:10, 0:12].astype(float)
    field = compute_gradient(GrayImage.from_array(10.0 * (xx + yy)))
    angles = field.angle[:-1, :-1]
    np.testing.assert_allclose(angles, angles[0, 0], atol=1e-6)
    np.testing.assert_allclose(field.magnitude[:-1, :-1], 10.0 * np.sqrt(2.0))
    assert field.usable[:-1, :-1].all()


def test_last_row_and_column_unusable():
    yy, xx = np.mgrid[0:10, 0:12].astype(float)
    field = compute_gradient(GrayImage.from_array(10.0 * (xx + yy)))
    assert not field.usable[-1, :].any()
    assert not field.usable[:, -1].any()


def test_gradient_invariant_to_brightness_offset():
    img, _ = synthetic_line_image(5, width=120, height=90, count=4, min_length=20, max_length=60)
    shifted = img.offset(-20.0) if img.data.min() >= 20 else img.offset(20.0)
    a, b = compute_gradient(img), compute_gradient(shifted)
    assert np.array_equal(a.magnitude, b.magnitude)
    assert np.array_equal(a.angle, b.angle)
    assert np.array_equal(a.used_mask, b.used_mask)


def test_gradient_rejects_single_row():
    with pytest.raises(ArgumentError):
        compute_gradient(GrayImage.constant(10, 1, 0.0))


# render_segments

def test_render_nothing_is_uniform_background():
    img = render_segments(30, 20, [], foreground=255.0, background=17.0)
    assert (img.data == 17.0).all()


def test_render_horizontal_segment_pixels():
    seg = LineSegment2D(50.0, 100.0, 300.0, 100.0)
    img = render_segments(752, 480, [seg])
    expected = np.zeros((480, 752), dtype=bool)
    expected[100, 50:301] = True
    assert np.array_equal(img.data == 255.0, expected)


def test_render_crossing_diagonals_is_union():
    a = LineSegment2D(10.0, 10.0, 90.0, 70.0)
    b = LineSegment2D(10.0, 70.0, 90.0, 10.0)
    both = render_segments(100, 80, [a, b]).data == 255.0
    only_a = render_segments(100, 80, [a]).data == 255.0
    only_b = render_segments(100, 80, [b]).data == 255.0
    assert np.array_equal(both, only_a | only_b)


def test_render_is_deterministic_with_anti_aliasing():
    seg = LineSegment2D(3.2, 4.7, 58.9, 33.1)
    first = render_segments(64, 48, [seg], anti_alias=True)
    second = render_segments(64, 48, [seg], anti_alias=True)
    assert np.array_equal(first.data, second.data)
    assert first.data.max() > 0.0


def test_render_rejects_out_of_bounds_endpoint():
    with pytest.raises(ArgumentError):
        render_segments(50, 40, [LineSegment2D(5.0, 5.0, 60.0, 5.0)])


def test_synthetic_scene_segments_respect_lengths():
    img, segments = synthetic_line_image(11, width=200, height=160, count=8, min_length=20, max_length=100)
    assert (img.width, img.height) == (200, 160)
    assert len(segments) == 8
    assert all(20.0 - 1e-9 <= s.length <= 100.0 + 1e-9 for s in segments)
    again, same = synthetic_line_image(11, width=200, height=160, count=8, min_length=20, max_length=100)
    assert np.array_equal(img.data, again.data)
    assert same == segments
