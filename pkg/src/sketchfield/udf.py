"""Distance-field codec: encode sketches into transformed unsigned distance
fields and decode fields back to strokes.

The field stores v = 1 - exp(-u/T) per pixel, where u is the exact Euclidean
distance to the nearest ink pixel and T scales with the canvas diagonal.
Decoding offers thresholding (sub-level set) and marching squares.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyInkError, FormatError, ParameterError, ShapeError
from .grids import GrayBitmap, Polyline, SketchBitmap
from .morphology import disk_offsets

# Squared-distance sentinel for columns without ink; above any real value
# on sane canvases yet far from float64 overflow in the envelope sums.
_FAR2 = 1e12


@dataclass(eq=False)
class DistanceGrid:
    """Per-pixel Euclidean distance to the nearest ink pixel."""

    width: int
    height: int
    u: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        a = np.asarray(self.u, dtype=np.float64)
        if a.size != self.width * self.height:
            raise ShapeError("distance grid size mismatch")
        self.u = np.ascontiguousarray(a.reshape(self.height, self.width))


@dataclass(eq=False)
class UdfGrid:
    """Transformed field v = f(u) in [0, 1) plus the time constant used."""

    width: int
    height: int
    v: np.ndarray  # float32, shape (height, width)
    time_constant: float

    def __post_init__(self):
        a = np.asarray(self.v, dtype=np.float32)
        if a.size != self.width * self.height:
            raise ShapeError("field size mismatch")
        self.v = np.ascontiguousarray(a.reshape(self.height, self.width))
        if self.time_constant <= 0:
            raise ParameterError("time constant must be positive")
        # pin to the f32 grid so file round trips preserve equality
        self.time_constant = float(np.float32(self.time_constant))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, UdfGrid)
            and self.width == other.width
            and self.height == other.height
            and self.time_constant == other.time_constant
            and bool(np.array_equal(self.v, other.v))
        )

    @classmethod
    def constant(cls, width: int, height: int, value: float,
                 time_constant: float | None = None) -> "UdfGrid":
        if time_constant is None:
            time_constant = default_time_constant(width, height)
        return cls(width, height,
                   np.full((height, width), value, dtype=np.float32),
                   time_constant)


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform
# ---------------------------------------------------------------------------

def _edt_1d_squared(f: np.ndarray) -> np.ndarray:
    """Lower-envelope pass: d[p] = min_q f[q] + (p - q)^2, exact."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.empty(n, dtype=np.int64)  # sites of envelope parabolas
    z = np.empty(n + 1)              # envelope breakpoints
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        d[p] = (p - v[k]) ** 2 + f[v[k]]
    return d


def exact_edt(sketch: SketchBitmap) -> DistanceGrid:
    """Exact distance to the nearest ink pixel, two-pass separable method.

    The column pass finds the nearest ink row per column with two linear
    sweeps; the row pass minimizes over columns with the parabola lower
    envelope. Exact to floating precision, O(n) per dimension.
    """
    if sketch.is_blank():
        raise EmptyInkError("distance to ink is undefined for a blank sketch")
    ink = sketch.ink
    h, w = ink.shape
    far = float(h + w)
    dv = np.where(ink, 0.0, far)
    for y in range(1, h):
        dv[y] = np.minimum(dv[y], dv[y - 1] + 1.0)
    for y in range(h - 2, -1, -1):
        dv[y] = np.minimum(dv[y], dv[y + 1] + 1.0)
    f = np.where(dv >= far, _FAR2, dv * dv)
    out = np.empty((h, w))
    for y in range(h):
        out[y] = _edt_1d_squared(f[y])
    return DistanceGrid(w, h, np.sqrt(out))


# ---------------------------------------------------------------------------
# The transform f(u) = 1 - exp(-u/T)
# ---------------------------------------------------------------------------

def default_time_constant(width: int, height: int) -> float:
    """Canvas-diagonal scaling of the e-folding distance: 15*sqrt(w^2+h^2)/540."""
    if width < 1 or height < 1:
        raise ParameterError("canvas dimensions must be at least 1")
    return 15.0 * float(np.hypot(width, height)) / 540.0


def udf_transform(d: DistanceGrid, time_constant: float) -> UdfGrid:
    """Map distances into [0, 1): v = 1 - exp(-u/T)."""
    if time_constant <= 0:
        raise ParameterError("time constant must be positive")
    # compute with the f32-pinned constant the grid will carry, so encoding
    # again with a round-tripped constant reproduces v bit-exactly
    time_constant = float(np.float32(time_constant))
    v = -np.expm1(-d.u / time_constant)
    # float32 storage must stay strictly below 1 in the saturated far field
    v = np.minimum(v, 1.0 - 1e-6)
    return UdfGrid(d.width, d.height, v.astype(np.float32), time_constant)


def udf_inverse(v, time_constant: float):
    """Recover distance from a transformed value: u = -T * ln(1 - v)."""
    if time_constant <= 0:
        raise ParameterError("time constant must be positive")
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr >= 1):
        raise ParameterError("transformed values must lie in [0, 1)")
    u = -time_constant * np.log1p(-arr)
    return float(u) if np.isscalar(v) or arr.ndim == 0 else u


def encode_sketch(sketch: SketchBitmap, time_constant: float | None = None) -> UdfGrid:
    """Exact EDT followed by the transform; v = 0 exactly on ink pixels.

    The time constant defaults to the canvas-derived value.
    """
    if time_constant is None:
        time_constant = default_time_constant(sketch.width, sketch.height)
    return udf_transform(exact_edt(sketch), time_constant)


def decode_level(time_constant: float, distance: float = 0.5) -> float:
    """Iso level corresponding to a given pixel distance from a stroke.

    The 0.5 px default recovers ink sets exactly under encode/decode round
    trips: non-ink pixels sit at distance >= 1.
    """
    return float(-np.expm1(-distance / time_constant))


# ---------------------------------------------------------------------------
# Binarization
# ---------------------------------------------------------------------------

class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool  # constant image, no separation exists


def otsu_threshold(img: GrayBitmap) -> OtsuResult:
    """Threshold maximizing between-class variance; ties pick the smallest.

    Classes are {value <= t} and {value > t}. A constant image yields its
    constant value with the degenerate flag set.
    """
    hist = np.bincount(img.values.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * levels)
    w1 = total - w0
    s_all = s0[-1]
    num = s0 * total - s_all * w0
    denom = w0 * w1
    with np.errstate(divide="ignore", invalid="ignore"):
        var_between = np.where(denom > 0, num * num / denom, 0.0)
    best = int(np.argmax(var_between))
    if var_between[best] == 0.0:
        return OtsuResult(int(img.values.flat[0]), True)
    return OtsuResult(best, False)


def binarize(img: GrayBitmap, threshold: int) -> SketchBitmap:
    """Dark-on-light convention: pixels at or below the threshold become ink."""
    if not 0 <= threshold <= 255:
        raise ParameterError("threshold must lie in [0, 255]")
    return SketchBitmap.from_array(img.values <= threshold)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def decode_threshold(field: UdfGrid, level: float) -> SketchBitmap:
    """Sub-level set decode: ink wherever v < level."""
    if not 0.0 < level < 1.0:
        raise ParameterError("decode level must lie in (0, 1)")
    return SketchBitmap.from_array(field.v < level)


# Marching squares case table. Corner bits: 1=top-left, 2=top-right,
# 4=bottom-right, 8=bottom-left ("inside" means v < level). Values are
# (edge, edge) pairs with edges 0=top, 1=right, 2=bottom, 3=left.
_MS_SEGMENTS = {
    0: [],
    1: [(0, 3)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(3, 2)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(0, 3)],
    15: [],
}
# Saddles (5 and 10) are resolved by the cell-centre average at runtime.
_MS_SADDLE = {
    5: {True: [(0, 1), (3, 2)], False: [(0, 3), (1, 2)]},
    10: {True: [(0, 3), (1, 2)], False: [(0, 1), (3, 2)]},
}


def _edge_point(edge: int, x: int, y: int, a: float, b: float, c: float, d: float,
                level: float) -> tuple[float, float]:
    # a=tl, b=tr, c=br, d=bl corner values of the cell at (x, y)
    if edge == 0:
        t = (level - a) / (b - a)
        return (x + t, float(y))
    if edge == 1:
        t = (level - b) / (c - b)
        return (float(x + 1), y + t)
    if edge == 2:
        t = (level - d) / (c - d)
        return (x + t, float(y + 1))
    t = (level - a) / (d - a)
    return (float(x), y + t)


def _chain_segments(segments: list[tuple[tuple, tuple]]) -> list[Polyline]:
    key = lambda p: (round(p[0], 9), round(p[1], 9))
    adjacency: dict = {}
    for idx, (p, q) in enumerate(segments):
        adjacency.setdefault(key(p), []).append((idx, 0))
        adjacency.setdefault(key(q), []).append((idx, 1))
    used = [False] * len(segments)

    def walk(start_idx: int, start_end: int) -> tuple[list, bool]:
        seg = segments[start_idx]
        used[start_idx] = True
        pts = [seg[start_end], seg[1 - start_end]]
        while True:
            k = key(pts[-1])
            nxt = next(((i, e) for i, e in adjacency.get(k, []) if not used[i]), None)
            if nxt is None:
                break
            i, e = nxt
            used[i] = True
            pts.append(segments[i][1 - e])
        closed = key(pts[0]) == key(pts[-1]) and len(pts) > 2
        if closed:
            pts = pts[:-1]
        return pts, closed

    lines = []
    # Open chains start at degree-1 endpoints, then leftover cycles.
    for k, ends in adjacency.items():
        if len(ends) == 1 and not used[ends[0][0]]:
            pts, closed = walk(*ends[0])
            lines.append(Polyline(pts, closed))
    for idx in range(len(segments)):
        if not used[idx]:
            pts, closed = walk(idx, 0)
            lines.append(Polyline(pts, closed))
    return lines


def marching_squares(field: UdfGrid, level: float) -> list[Polyline]:
    """Extract iso-contours of the field at the given level.

    Linear interpolation along cell edges; saddle cells are disambiguated
    by the cell-centre average; segments are chained into polylines and
    loops away from the grid boundary are marked closed.
    """
    if not 0.0 < level < 1.0:
        raise ParameterError("iso level must lie in (0, 1)")
    v = field.v.astype(np.float64)
    h, w = v.shape
    inside = v < level
    segments = []
    for y in range(h - 1):
        for x in range(w - 1):
            a, b = v[y, x], v[y, x + 1]
            c, d = v[y + 1, x + 1], v[y + 1, x]
            case = (
                (1 if inside[y, x] else 0)
                | (2 if inside[y, x + 1] else 0)
                | (4 if inside[y + 1, x + 1] else 0)
                | (8 if inside[y + 1, x] else 0)
            )
            if case in _MS_SADDLE:
                centre_inside = (a + b + c + d) / 4.0 < level
                pairs = _MS_SADDLE[case][centre_inside]
            else:
                pairs = _MS_SEGMENTS[case]
            for e0, e1 in pairs:
                p = _edge_point(e0, x, y, a, b, c, d, level)
                q = _edge_point(e1, x, y, a, b, c, d, level)
                if p != q:
                    segments.append((p, q))
    return _chain_segments(segments)


def rasterize_polylines(lines: list[Polyline], width: int, height: int,
                        stroke_width: int = 1) -> SketchBitmap:
    """Integer rasterization of each segment, dilated to the stroke width."""
    if stroke_width < 1:
        raise ParameterError("stroke width must be at least 1")
    ink = np.zeros((height, width), dtype=bool)
    for line in lines:
        pts = line.points + ([line.points[0]] if line.closed else [])
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            steps = max(1, int(np.ceil(2.0 * max(abs(x1 - x0), abs(y1 - y0)))))
            for i in range(steps + 1):
                t = i / steps
                # round-half-down keeps half-integer endpoints on the near pixel
                px = int(np.ceil(x0 + t * (x1 - x0) - 0.5))
                py = int(np.ceil(y0 + t * (y1 - y0) - 0.5))
                if 0 <= px < width and 0 <= py < height:
                    ink[py, px] = True
    if stroke_width > 1 and ink.any():
        base = np.nonzero(ink)
        for dx, dy in disk_offsets(stroke_width / 2.0):
            ys = np.clip(base[0] + dy, 0, height - 1)
            xs = np.clip(base[1] + dx, 0, width - 1)
            ink[ys, xs] = True
    return SketchBitmap.from_array(ink)


def chamfer_distance(a: SketchBitmap, b: SketchBitmap) -> float:
    """Symmetric mean nearest-ink distance between two sketches."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError("sketch dimensions differ")
    if a.is_blank() or b.is_blank():
        raise EmptyInkError("chamfer distance requires ink in both sketches")
    to_b = exact_edt(b).u
    to_a = exact_edt(a).u
    return 0.5 * float(to_b[a.ink].mean()) + 0.5 * float(to_a[b.ink].mean())


# ---------------------------------------------------------------------------
# UDFG file format: magic "UDFG", u8 version, u32 width, u32 height,
# f32 time constant, then width*height f32 values row-major (little-endian).
# ---------------------------------------------------------------------------

UDFG_MAGIC = b"UDFG"
UDFG_VERSION = 1


def udfg_to_bytes(field: UdfGrid) -> bytes:
    header = UDFG_MAGIC + struct.pack(
        "<BIIf", UDFG_VERSION, field.width, field.height, field.time_constant
    )
    return header + field.v.astype("<f4").tobytes()


def udfg_from_bytes(data: bytes) -> UdfGrid:
    if data[:4] != UDFG_MAGIC:
        raise FormatError("not a UDFG payload")
    version, w, h, t = struct.unpack_from("<BIIf", data, 4)
    if version != UDFG_VERSION:
        raise FormatError(f"unsupported UDFG version {version}")
    offset = 4 + struct.calcsize("<BIIf")
    body = data[offset:offset + 4 * w * h]
    if len(body) != 4 * w * h:
        raise FormatError("UDFG body shorter than declared size")
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).copy()
    return UdfGrid(w, h, values, float(t))
