"""Core raster types, region types and the geometric metrics built on them.

Conventions: origin at the top-left, x grows rightward, y grows downward,
boxes are half-open. Arrays are row-major (H, W), indexed [y, x]. Ink
polarity is true = black stroke pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, EmptyInkError, EmptyRegionError, FormatError, ShapeError

# Default canvas sizes: 512 for the service, 32 for toy training.
SERVICE_CANVAS = 512
TOY_CANVAS = 32


def _as_bool_grid(values, width: int, height: int) -> np.ndarray:
    a = np.asarray(values, dtype=bool)
    if a.size != width * height:
        raise ShapeError(f"grid has {a.size} cells, expected {width}x{height}")
    return np.ascontiguousarray(a.reshape(height, width))


@dataclass(eq=False)
class SketchBitmap:
    """Binary ink grid; the artist-facing artifact."""

    width: int
    height: int
    ink: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ShapeError("bitmap dimensions must be positive")
        self.ink = _as_bool_grid(self.ink, self.width, self.height)

    @classmethod
    def blank(cls, width: int, height: int) -> "SketchBitmap":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @classmethod
    def from_array(cls, ink: np.ndarray) -> "SketchBitmap":
        ink = np.asarray(ink, dtype=bool)
        return cls(ink.shape[1], ink.shape[0], ink)

    def ink_count(self) -> int:
        return int(self.ink.sum())

    def is_blank(self) -> bool:
        return not self.ink.any()

    def ink_fraction(self) -> float:
        return self.ink_count() / (self.width * self.height)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SketchBitmap)
            and self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.ink, other.ink))
        )


@dataclass(eq=False)
class GrayBitmap:
    """8-bit grayscale grid, the input to binarization."""

    width: int
    height: int
    values: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        a = np.asarray(self.values)
        if a.size != self.width * self.height:
            raise ShapeError(f"grid has {a.size} cells, expected {self.width}x{self.height}")
        if a.dtype != np.uint8:
            if np.any((a < 0) | (a > 255)):
                raise ShapeError("gray values must lie in [0, 255]")
            a = a.astype(np.uint8)
        self.values = np.ascontiguousarray(a.reshape(self.height, self.width))

    @classmethod
    def from_array(cls, values: np.ndarray) -> "GrayBitmap":
        values = np.asarray(values)
        return cls(values.shape[1], values.shape[0], values)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GrayBitmap)
            and self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.values, other.values))
        )


@dataclass(frozen=True)
class BBox:
    """Half-open axis-aligned pixel box: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise BoundsError(f"degenerate box {self.astuple()}")
        if self.x0 < 0 or self.y0 < 0:
            raise BoundsError(f"box {self.astuple()} has negative origin")

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def validate_for(self, width: int, height: int) -> None:
        if self.x1 > width or self.y1 > height:
            raise BoundsError(f"box {self.astuple()} exceeds {width}x{height} canvas")

    def shifted(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(eq=False)
class InstanceMask:
    """Binary object-region grid used as the generation control signal."""

    width: int
    height: int
    inside: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ShapeError("mask dimensions must be positive")
        self.inside = _as_bool_grid(self.inside, self.width, self.height)

    @classmethod
    def empty(cls, width: int, height: int) -> "InstanceMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "InstanceMask":
        return cls(width, height, np.ones((height, width), dtype=bool))

    @classmethod
    def from_array(cls, inside: np.ndarray) -> "InstanceMask":
        inside = np.asarray(inside, dtype=bool)
        return cls(inside.shape[1], inside.shape[0], inside)

    def area(self) -> int:
        return int(self.inside.sum())

    def is_empty(self) -> bool:
        return not self.inside.any()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, InstanceMask)
            and self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.inside, other.inside))
        )


# Generation stages: 1 = bounding box, 2 = rough contour, 3 = detailed sketch.
STAGE_BOX = 1
STAGE_ROUGH = 2
STAGE_DETAILED = 3
GENERATION_STAGES = (STAGE_ROUGH, STAGE_DETAILED)


@dataclass(frozen=True)
class StageIndicator:
    """Abstraction-level selector; only stages 2 and 3 are generation targets."""

    value: int

    def __post_init__(self):
        if self.value not in (STAGE_BOX, STAGE_ROUGH, STAGE_DETAILED):
            raise ShapeError(f"stage must be 1, 2 or 3, got {self.value}")

    def is_generation_target(self) -> bool:
        return self.value in GENERATION_STAGES


@dataclass
class Polyline:
    """Ordered sub-pixel vertex chain; closed loops do not repeat the first point."""

    points: list = field(default_factory=list)  # [(x, y), ...]
    closed: bool = False

    def __post_init__(self):
        self.points = [(float(x), float(y)) for x, y in self.points]
        if len(self.points) < 2:
            raise ShapeError("polyline needs at least 2 points")
        if self.closed and self.points[0] == self.points[-1]:
            self.points = self.points[:-1]

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def bbox_to_mask(box: BBox, width: int, height: int) -> InstanceMask:
    """Rasterize a box into the rough region mask used for stage-2 conditioning."""
    box.validate_for(width, height)
    inside = np.zeros((height, width), dtype=bool)
    inside[box.y0:box.y1, box.x0:box.x1] = True
    return InstanceMask(width, height, inside)


def mask_bbox(mask: InstanceMask) -> BBox:
    """Tightest box containing every true pixel of the mask."""
    ys, xs = np.nonzero(mask.inside)
    if ys.size == 0:
        raise EmptyRegionError("cannot take the bbox of an empty mask")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def mask_area_fraction(mask: InstanceMask) -> float:
    """True-pixel count over canvas area; the quantity slim records are filtered on."""
    return mask.area() / (mask.width * mask.height)


def ink_containment(sketch: SketchBitmap, mask: InstanceMask) -> float:
    """Fraction of ink pixels that fall inside the mask (positional-control metric)."""
    if (sketch.width, sketch.height) != (mask.width, mask.height):
        raise ShapeError("sketch and mask dimensions differ")
    total = sketch.ink_count()
    if total == 0:
        raise EmptyInkError("containment is undefined for a blank sketch")
    return int((sketch.ink & mask.inside).sum()) / total


def mask_iou(a: InstanceMask, b: InstanceMask) -> float:
    """Intersection over union; 1.0 for two empty masks (vacuous agreement)."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError("mask dimensions differ")
    union = int((a.inside | b.inside).sum())
    if union == 0:
        return 1.0
    return int((a.inside & b.inside).sum()) / union


# ---------------------------------------------------------------------------
# P5 serialization: sketches write ink=0 on background=255, masks write
# inside=255. Header is exactly "P5\n<w> <h>\n255\n".
# ---------------------------------------------------------------------------

def _p5_bytes(values: np.ndarray) -> bytes:
    h, w = values.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + values.astype(np.uint8).tobytes()


def _parse_p5(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise FormatError("not a P5 graymap")
    # Header tokens: magic, width, height, maxval, then a single whitespace byte.
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated P5 header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError("malformed P5 header") from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise FormatError("P5 body shorter than declared size")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def sketch_to_pgm(sketch: SketchBitmap) -> bytes:
    return _p5_bytes(np.where(sketch.ink, 0, 255))


def sketch_from_pgm(data: bytes) -> SketchBitmap:
    return SketchBitmap.from_array(_parse_p5(data) == 0)


def mask_to_pgm(mask: InstanceMask) -> bytes:
    return _p5_bytes(np.where(mask.inside, 255, 0))


def mask_from_pgm(data: bytes) -> InstanceMask:
    return InstanceMask.from_array(_parse_p5(data) == 255)


def gray_to_pgm(img: GrayBitmap) -> bytes:
    return _p5_bytes(img.values)


def gray_from_pgm(data: bytes) -> GrayBitmap:
    return GrayBitmap.from_array(_parse_p5(data))
