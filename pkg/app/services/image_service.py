import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from app.core.errors import ArgumentError, PGMParseError, SceneGenerationError
from app.models.image import GradientField, GrayImage, LineSegment2D

logger = logging.getLogger(__name__)

WHITESPACE = b" \t\r\n\v\f"
DEFAULT_QUANT_TOLERANCE = 2.0
DEFAULT_ANGLE_TOLERANCE = math.pi / 8.0


def _skip_whitespace_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch in WHITESPACE and ch:
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    return pos


def _next_int(data: bytes, pos: int, name: str) -> Tuple[int, int, int]:
    """Read one decimal token; returns (value, start offset, end offset)."""
    start = _skip_whitespace_and_comments(data, pos)
    if start >= len(data):
        raise PGMParseError(f"unexpected end of data while reading {name}", start)
    end = start
    while end < len(data) and data[end:end + 1] not in WHITESPACE and data[end:end + 1] != b"#":
        end += 1
    token = data[start:end]
    if not token.isdigit():
        raise PGMParseError(f"invalid {name} {token[:16]!r}", start)
    return int(token), start, end


def load_pgm(data: bytes) -> GrayImage:
    """Parse a binary (P5) or ASCII (P2) PGM with maxval <= 255.

    Pixel values are kept as stored; they are not rescaled to maxval.
    """
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMParseError(f"unsupported magic number {magic!r}", 0)
    if len(data) < 3 or data[2:3] not in WHITESPACE:
        raise PGMParseError("magic number must be followed by whitespace", 2)

    width, width_at, pos = _next_int(data, 2, "width")
    if width <= 0:
        raise PGMParseError("width must be positive", width_at)
    height, height_at, pos = _next_int(data, pos, "height")
    if height <= 0:
        raise PGMParseError("height must be positive", height_at)
    maxval, maxval_at, pos = _next_int(data, pos, "maxval")
    if maxval <= 0 or maxval > 255:
        raise PGMParseError(f"maxval {maxval} outside 1..255", maxval_at)

    count = width * height
    if magic == b"P5":
        if pos >= len(data) or data[pos:pos + 1] not in WHITESPACE:
            raise PGMParseError("missing whitespace after maxval", pos)
        start = pos + 1
        payload = data[start:start + count]
        if len(payload) < count:
            raise PGMParseError(f"truncated payload: expected {count} bytes, got {len(payload)}", start + len(payload))
        pixels = np.frombuffer(payload, dtype=np.uint8)
        too_large = np.flatnonzero(pixels > maxval)
        if too_large.size:
            raise PGMParseError(f"pixel value exceeds maxval {maxval}", start + int(too_large[0]))
    else:
        values = []
        for i in range(count):
            try:
                value, value_at, pos = _next_int(data, pos, f"pixel {i}")
            except PGMParseError as exc:
                if exc.offset >= len(data):
                    raise PGMParseError(f"truncated payload: expected {count} values, got {i}", exc.offset) from exc
                raise
            if value > maxval:
                raise PGMParseError(f"pixel value {value} exceeds maxval {maxval}", value_at)
            values.append(value)
        pixels = np.array(values, dtype=np.uint8)

    logger.debug("loaded %s PGM %dx%d", magic.decode(), width, height)
    return GrayImage(width=width, height=height, data=pixels.astype(np.float64))


def save_pgm(img: GrayImage) -> bytes:
    """Encode as canonical binary P5 with maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    pixels = np.clip(np.floor(img.data + 0.5), 0, 255).astype(np.uint8)
    return header + pixels.tobytes()


def scaled_size(size: int, factor: float) -> int:
    # rounding guards products like 480 * 0.8 = 384.00000000000006
    return int(math.ceil(round(size * factor, 9)))


def scale_gaussian(img: GrayImage, factor: float, sigma: Optional[float] = None) -> GrayImage:
    """Blur with a 3-sigma truncated Gaussian, then resample by `factor`.

    Output pixel j samples input coordinate j / factor (bilinear). When sigma
    is omitted the detector convention 0.6 / factor is used for factor < 1.
    """
    if not (0.0 < factor <= 1.0):
        raise ArgumentError(f"scale factor must be in (0, 1], got {factor}")
    if sigma is None:
        sigma = 0.6 / factor if factor < 1.0 else 0.0
    if sigma < 0:
        raise ArgumentError(f"sigma must be non-negative, got {sigma}")
    if factor == 1.0 and sigma == 0.0:
        return img

    data = img.data
    if sigma > 0:
        data = ndimage.gaussian_filter(data, sigma, mode="nearest", truncate=3.0)
    if factor < 1.0:
        out_w, out_h = scaled_size(img.width, factor), scaled_size(img.height, factor)
        rows = np.arange(out_h) / factor
        cols = np.arange(out_w) / factor
        grid = np.meshgrid(rows, cols, indexing="ij")
        data = ndimage.map_coordinates(data, grid, order=1, mode="nearest")
    return GrayImage.from_array(np.clip(data, 0.0, 255.0))


def build_pyramid(img: GrayImage, n_layers: int, ratio: float) -> List[GrayImage]:
    """Layer k is the input resampled by ratio**k, each layer blurred and resampled from the one before."""
    if n_layers < 1:
        raise ArgumentError("pyramid needs at least one layer")
    if not (0.0 < ratio < 1.0):
        raise ArgumentError(f"pyramid ratio must be in (0, 1), got {ratio}")
    layers = [img]
    for _ in range(1, n_layers):
        layers.append(scale_gaussian(layers[-1], ratio, 0.6 / ratio))
    return layers


def compute_gradient(
    img: GrayImage,
    quant: float = DEFAULT_QUANT_TOLERANCE,
    angle_tolerance: float = DEFAULT_ANGLE_TOLERANCE,
) -> GradientField:
    """2x2 finite differences and level-line angles.

    The value stored at (x, y) describes the 2x2 block whose top-left pixel is
    (x, y). Pixels with magnitude at or below quant / sin(angle_tolerance),
    and the last row and column, are marked unusable.
    """
    if img.width < 2 or img.height < 2:
        raise ArgumentError(f"gradient needs at least 2x2 pixels, got {img.width}x{img.height}")
    I = img.data
    com1 = I[1:, 1:] - I[:-1, :-1]
    com2 = I[:-1, 1:] - I[1:, :-1]
    gx = com1 + com2
    gy = com1 - com2

    magnitude = np.zeros((img.height, img.width))
    angle = np.zeros((img.height, img.width))
    magnitude[:-1, :-1] = np.sqrt((gx * gx + gy * gy) / 4.0)
    angle[:-1, :-1] = np.arctan2(gx, -gy)
    angle[angle <= -np.pi] += 2.0 * np.pi
    angle[magnitude == 0.0] = 0.0

    threshold = quant / math.sin(angle_tolerance)
    used_mask = magnitude <= threshold
    used_mask[-1, :] = True
    used_mask[:, -1] = True
    return GradientField(
        width=img.width,
        height=img.height,
        magnitude=magnitude,
        angle=angle,
        used_mask=used_mask,
        threshold=threshold,
    )


def _check_inside(seg: LineSegment2D, width: int, height: int) -> None:
    for x, y in ((seg.x1, seg.y1), (seg.x2, seg.y2)):
        if not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1):
            raise ArgumentError(f"segment endpoint ({x:.2f}, {y:.2f}) outside {width}x{height} image")


def _rasterize(seg: LineSegment2D, thickness: int) -> Tuple[np.ndarray, np.ndarray]:
    dx, dy = seg.x2 - seg.x1, seg.y2 - seg.y1
    n = int(math.ceil(max(abs(dx), abs(dy)))) + 1
    steps = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    xs = np.floor(seg.x1 + dx * steps + 0.5).astype(int)
    ys = np.floor(seg.y1 + dy * steps + 0.5).astype(int)
    if thickness <= 1:
        return xs, ys
    offsets = np.arange(-((thickness - 1) // 2), thickness // 2 + 1)
    if abs(dx) >= abs(dy):
        return np.repeat(xs, len(offsets)), (ys[:, None] + offsets).ravel()
    return (xs[:, None] + offsets).ravel(), np.repeat(ys, len(offsets))


def _coverage(seg: LineSegment2D, thickness: int, width: int, height: int):
    """Anti-aliased coverage of a segment on its bounding box."""
    pad = thickness / 2.0 + 1.0
    x0 = max(int(math.floor(min(seg.x1, seg.x2) - pad)), 0)
    x1 = min(int(math.ceil(max(seg.x1, seg.x2) + pad)), width - 1)
    y0 = max(int(math.floor(min(seg.y1, seg.y2) - pad)), 0)
    y1 = min(int(math.ceil(max(seg.y1, seg.y2) + pad)), height - 1)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(float)
    d = seg.p2 - seg.p1
    denom = float(d @ d)
    if denom == 0.0:
        t = np.zeros_like(xx)
    else:
        t = np.clip(((xx - seg.x1) * d[0] + (yy - seg.y1) * d[1]) / denom, 0.0, 1.0)
    dist = np.hypot(xx - (seg.x1 + t * d[0]), yy - (seg.y1 + t * d[1]))
    alpha = np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), alpha


def render_segments(
    width: int,
    height: int,
    segments: Sequence[LineSegment2D],
    foreground: float = 255.0,
    background: float = 0.0,
    anti_alias: bool = False,
    thickness: int = 1,
    background_image: Optional[GrayImage] = None,
) -> GrayImage:
    """Draw segments deterministically.

    Without anti-aliasing each segment is a DDA run of max(|dx|, |dy|) + 1
    samples rounded to the nearest pixel; with it, pixels are blended by their
    distance to the segment.
    """
    if width <= 0 or height <= 0:
        raise ArgumentError("image dimensions must be positive")
    if thickness < 1:
        raise ArgumentError("thickness must be at least 1 pixel")
    if background_image is not None:
        if (background_image.width, background_image.height) != (width, height):
            raise ArgumentError("background image size does not match")
        canvas = np.array(background_image.data)
    else:
        canvas = np.full((height, width), float(background))

    for seg in segments:
        _check_inside(seg, width, height)
        if anti_alias:
            window, alpha = _coverage(seg, thickness, width, height)
            canvas[window] = canvas[window] * (1.0 - alpha) + foreground * alpha
        else:
            xs, ys = _rasterize(seg, thickness)
            keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            canvas[ys[keep], xs[keep]] = foreground
    return GrayImage.from_array(np.clip(canvas, 0.0, 255.0))


def segment_distance(a: LineSegment2D, b: LineSegment2D) -> float:
    """Minimum distance between two segments, 0 when they cross."""
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a.p1, a.p2, b.p1), orient(a.p1, a.p2, b.p2)
    o3, o4 = orient(b.p1, b.p2, a.p1), orient(b.p1, b.p2, a.p2)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return 0.0
    return min(a.distance_to_point(b.p1), a.distance_to_point(b.p2),
               b.distance_to_point(a.p1), b.distance_to_point(a.p2))


def random_segment_layout(
    width: int,
    height: int,
    count: int,
    min_length: float,
    max_length: float,
    rng: np.random.Generator,
    margin: float = 12.0,
    min_gap: float = 12.0,
    max_attempts: int = 20000,
) -> List[LineSegment2D]:
    """Random non-crossing segments at least `min_gap` pixels apart."""
    if max_length > min(width, height) - 2 * margin:
        raise ArgumentError("max_length does not fit inside the image margins")
    segments: List[LineSegment2D] = []
    attempts = 0
    while len(segments) < count:
        attempts += 1
        if attempts > max_attempts:
            raise SceneGenerationError(f"placed {len(segments)} of {count} segments after {max_attempts} attempts")
        length = rng.uniform(min_length, max_length)
        theta = rng.uniform(0.0, np.pi)
        half = 0.5 * length * np.array([np.cos(theta), np.sin(theta)])
        lo = np.abs(half) + margin
        center = np.array([rng.uniform(lo[0], width - 1 - lo[0]), rng.uniform(lo[1], height - 1 - lo[1])])
        candidate = LineSegment2D.from_points(center - half, center + half)
        if all(segment_distance(candidate, other) >= min_gap for other in segments):
            segments.append(candidate)
    return segments


def textured_background(
    width: int,
    height: int,
    seed: int,
    mean: float = 120.0,
    shift: Tuple[float, float] = (0.0, 0.0),
) -> GrayImage:
    """Smooth integer-valued texture whose slope stays below the gradient threshold.

    `shift` moves the texture by (dx, dy) pixels.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    texture = np.full((height, width), mean)
    for _ in range(3):
        period = rng.uniform(60.0, 140.0)
        direction = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        coord = (xx - shift[0]) * np.cos(direction) + (yy - shift[1]) * np.sin(direction)
        texture += 12.0 * np.sin(2.0 * np.pi * coord / period + phase)
    return GrayImage.from_array(np.clip(np.floor(texture + 0.5), 0, 255))


def synthetic_line_image(
    seed: int,
    width: int = 752,
    height: int = 480,
    count: int = 40,
    min_length: float = 10.0,
    max_length: float = 300.0,
    textured: bool = False,
    shift: Tuple[float, float] = (0.0, 0.0),
) -> Tuple[GrayImage, List[LineSegment2D]]:
    """Render a clutter scene of anti-aliased segments and return its ground truth.

    A non-zero `shift` renders the same scene translated by (dx, dy) pixels.
    """
    rng = np.random.default_rng(seed)
    segments = random_segment_layout(width, height, count, min_length, max_length, rng)
    if shift != (0.0, 0.0):
        offset = np.asarray(shift, dtype=float)
        segments = [LineSegment2D.from_points(seg.p1 + offset, seg.p2 + offset) for seg in segments]
    background = textured_background(width, height, seed, shift=shift) if textured else None
    img = render_segments(width, height, segments, foreground=230.0, background=25.0,
                          anti_alias=True, background_image=background)
    # 8-bit camera quantization
    return GrayImage.from_array(np.floor(img.data + 0.5)), segments
