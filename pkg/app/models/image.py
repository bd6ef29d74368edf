from dataclasses import dataclass, field

import numpy as np

from app.core.errors import ArgumentError


@dataclass(frozen=True)
class GrayImage:
    """Row-major grayscale image with intensities in [0, 255].

    `data` has shape (height, width); it is stored as float64 so that blurred
    and resampled images keep sub-integer precision.
    """
    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ArgumentError(f"image dimensions must be positive, got {self.width}x{self.height}")
        data = np.asarray(self.data, dtype=np.float64)
        if data.size != self.width * self.height:
            raise ArgumentError(
                f"data length {data.size} does not match {self.width}x{self.height}"
            )
        data = data.reshape(self.height, self.width).copy()
        if data.size and (data.min() < 0.0 or data.max() > 255.0):
            raise ArgumentError("intensities must lie within [0, 255]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "GrayImage":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2:
            raise ArgumentError("expected a 2D intensity array")
        return cls(width=array.shape[1], height=array.shape[0], data=array)

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "GrayImage":
        return cls(width=width, height=height, data=np.full((height, width), float(value)))

    def offset(self, delta: float) -> "GrayImage":
        return GrayImage.from_array(self.data + delta)


@dataclass(frozen=True)
class GradientField:
    """Per-pixel gradient magnitude and level-line angle.

    `used_mask` is True where the angle is undefined (magnitude below the
    quantization threshold, or the last row/column where the 2x2 scheme has
    no support). The detector starts its own working copy from it.
    """
    width: int
    height: int
    magnitude: np.ndarray
    angle: np.ndarray
    used_mask: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        for name in ("magnitude", "angle", "used_mask"):
            arr = getattr(self, name)
            if arr.shape != (self.height, self.width):
                raise ArgumentError(f"{name} has shape {arr.shape}, expected {(self.height, self.width)}")
            arr.setflags(write=False)

    @property
    def usable(self) -> np.ndarray:
        return ~self.used_mask


@dataclass(frozen=True)
class LineSegment2D:
    """Detected image segment in original-image pixel coordinates."""
    x1: float
    y1: float
    x2: float
    y2: float
    layer: int = 0
    length: float = field(init=False)
    angle: float = field(init=False)

    def __post_init__(self):
        dx, dy = self.x2 - self.x1, self.y2 - self.y1
        object.__setattr__(self, "length", float(np.hypot(dx, dy)))
        object.__setattr__(self, "angle", fold_angle(float(np.arctan2(dy, dx))))

    @classmethod
    def from_points(cls, p1, p2, layer: int = 0) -> "LineSegment2D":
        return cls(float(p1[0]), float(p1[1]), float(p2[0]), float(p2[1]), layer=layer)

    @property
    def p1(self) -> np.ndarray:
        return np.array([self.x1, self.y1])

    @property
    def p2(self) -> np.ndarray:
        return np.array([self.x2, self.y2])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    def distance_to_point(self, point) -> float:
        """Euclidean distance from a point to this segment (not the infinite line)."""
        p = np.asarray(point, dtype=float)
        d = self.p2 - self.p1
        denom = float(d @ d)
        if denom == 0.0:
            return float(np.linalg.norm(p - self.p1))
        t = np.clip((p - self.p1) @ d / denom, 0.0, 1.0)
        return float(np.linalg.norm(p - (self.p1 + t * d)))


def fold_angle(angle: float) -> float:
    """Fold a direction angle into (-pi/2, pi/2]."""
    folded = np.mod(angle + np.pi / 2.0, np.pi) - np.pi / 2.0
    if folded <= -np.pi / 2.0:
        folded += np.pi
    return float(folded)


def angle_difference(a: float, b: float) -> float:
    """Unsigned difference between two undirected line angles, in [0, pi/2]."""
    d = abs(a - b) % np.pi
    return float(min(d, np.pi - d))


@dataclass
class LineSupportRegion:
    """Grown region of aligned pixels and its rectangle approximation.

    Coordinates are pixel indices of the layer the region was grown on.
    """
    xs: list
    ys: list
    region_angle: float
    precision: float
    center: tuple = (0.0, 0.0)
    angle: float = 0.0
    x1: float = 0.0
    y1: float = 0.0
    x2: float = 0.0
    y2: float = 0.0
    width: float = 1.0
    aligned_count: int = 0

    @property
    def size(self) -> int:
        return len(self.xs)

    @property
    def length(self) -> float:
        return float(np.hypot(self.x2 - self.x1, self.y2 - self.y1))

    @property
    def density(self) -> float:
        return self.aligned_count / (max(self.length, 1.0) * self.width)
