"""Procedural training data: smoothed star-polygon shapes rendered as aligned
(mask, bbox, rough contour, detailed sketch, field) records, plus ingestion
of external grayscale sketches and the manifest plumbing.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import TrainSample
from .errors import (EmptyInkError, FormatError, GenerationError,
                     ParameterError)
from .grids import (BBox, GrayBitmap, InstanceMask, Polyline, SketchBitmap,
                    StageIndicator, STAGE_DETAILED, STAGE_ROUGH, bbox_to_mask,
                    mask_area_fraction, mask_bbox, mask_from_pgm, mask_to_pgm,
                    sketch_from_pgm, sketch_to_pgm)
from .morphology import boundary_pixels, connected_components_4, dilate, has_holes
from .udf import (UdfGrid, binarize, chamfer_distance, default_time_constant,
                  encode_sketch, otsu_threshold, rasterize_polylines,
                  udfg_from_bytes, udfg_to_bytes)

NUM_CLASSES = 8  # 4 vertex-count buckets x 2 hatch styles


@dataclass(frozen=True)
class ShapeParams:
    vertex_min: int = 5
    vertex_max: int = 12
    radius_jitter: float = 0.3
    smoothing_passes: int = 2

    def __post_init__(self):
        if not 3 <= self.vertex_min <= self.vertex_max:
            raise ParameterError("bad vertex count range")
        if not 0.0 <= self.radius_jitter < 1.0:
            raise ParameterError("radius jitter must lie in [0, 1)")
        if self.smoothing_passes < 0:
            raise ParameterError("smoothing passes must be nonnegative")


@dataclass(frozen=True)
class DetailParams:
    hatch_spacing: int = 3
    arc_count: int = 2
    hatch_style: int = 0  # 0 axis-aligned rows, 1 diagonal

    def __post_init__(self):
        if self.hatch_spacing < 2:
            raise ParameterError("hatch spacing must be at least 2")
        if self.arc_count < 0:
            raise ParameterError("arc count must be nonnegative")
        if self.hatch_style not in (0, 1):
            raise ParameterError("hatch style must be 0 or 1")


def _chaikin(points: list, passes: int) -> list:
    """Corner-cutting smoothing of a closed polygon (quarter-point rule)."""
    pts = points
    for _ in range(passes):
        out = []
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            out.append((0.75 * x0 + 0.25 * x1, 0.75 * y0 + 0.25 * y1))
            out.append((0.25 * x0 + 0.75 * x1, 0.25 * y0 + 0.75 * y1))
        pts = out
    return pts


def _fill_polygon(points: list, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill sampled at integer pixel centres."""
    inside = np.zeros((height, width), dtype=bool)
    n = len(points)
    for y in range(height):
        xs = []
        for i in range(n):
            x0, y0 = points[i]
            x1, y1 = points[(i + 1) % n]
            if (y0 <= y < y1) or (y1 <= y < y0):
                xs.append(x0 + (y - y0) * (x1 - x0) / (y1 - y0))
        xs.sort()
        for a, b in zip(xs[::2], xs[1::2]):
            lo = int(np.ceil(a))
            hi = int(np.ceil(b))
            if hi > lo:
                inside[y, max(lo, 0):min(hi, width)] = True
    return inside


def gen_shape(rng: np.random.Generator, width: int, height: int,
              params: ShapeParams = ShapeParams()) -> tuple:
    """A random smoothed star polygon, filled to a simply connected mask.

    Returns (InstanceMask, closed contour Polyline). The mask includes the
    rasterized contour, so rendered outlines always lie inside it. Shapes
    that fill to a disconnected or holed region are redrawn, at most 10
    attempts.
    """
    if width < 16 or height < 16:
        raise ParameterError("canvas must be at least 16x16")
    for _ in range(10):
        vcount = int(rng.integers(params.vertex_min, params.vertex_max + 1))
        cx = width / 2 + rng.uniform(-width / 8, width / 8)
        cy = height / 2 + rng.uniform(-height / 8, height / 8)
        max_r = min(cx, cy, width - 1 - cx, height - 1 - cy) - 1.0
        base_r = rng.uniform(0.45, 0.95) * max_r
        if base_r < 3.0:
            continue
        angles = (2.0 * np.pi * (np.arange(vcount) + rng.uniform(0.0, 1.0))
                  / vcount)
        angles = angles + rng.uniform(-0.25, 0.25, size=vcount) * 2 * np.pi / vcount
        radii = base_r * (1.0 + rng.uniform(-params.radius_jitter,
                                            params.radius_jitter, size=vcount))
        radii = np.clip(radii, 2.0, max_r)
        pts = [(cx + r * np.cos(a), cy + r * np.sin(a))
               for r, a in zip(radii, angles)]
        pts = _chaikin(pts, params.smoothing_passes)
        contour = Polyline(points=pts, closed=True)
        raster = rasterize_polylines([contour], width, height).ink
        if not raster.any():
            continue
        inside = _fill_polygon(pts, width, height) | raster
        if len(connected_components_4(inside)) != 1:
            continue
        if has_holes(inside):
            continue
        boundary = SketchBitmap.from_array(boundary_pixels(inside))
        if chamfer_distance(SketchBitmap.from_array(raster), boundary) > 1.0:
            continue
        return InstanceMask.from_array(inside), contour
    raise GenerationError("no valid shape after 10 attempts")


def render_rough(contour: Polyline, width: int, height: int) -> SketchBitmap:
    """One-pixel rasterization of the closed outline."""
    if not contour.closed:
        raise ParameterError("rough rendering needs a closed contour")
    return rasterize_polylines([contour], width, height)


def render_detailed(contour: Polyline, mask: InstanceMask,
                    rng: np.random.Generator,
                    params: DetailParams = DetailParams()) -> tuple:
    """Contour plus interior hatching and random arcs, clipped to the mask.

    Returns (SketchBitmap, has_detail). When the mask is too small to fit
    any interior stroke the rough rendering comes back with has_detail
    False.
    """
    if mask.area() == 0:
        raise ParameterError("detailed rendering needs a nonempty mask")
    rough = render_rough(contour, mask.width, mask.height).ink & mask.inside
    yy, xx = np.mgrid[0:mask.height, 0:mask.width]
    phase = int(rng.integers(0, params.hatch_spacing))
    if params.hatch_style == 0:
        pattern = (yy % params.hatch_spacing) == phase
    else:
        pattern = ((xx + yy) % params.hatch_spacing) == phase
    hatch = pattern & mask.inside
    arcs = np.zeros_like(rough)
    box = mask_bbox(mask)
    for _ in range(params.arc_count):
        acx = rng.uniform(box.x0, box.x1)
        acy = rng.uniform(box.y0, box.y1)
        r = rng.uniform(2.0, max(2.5, min(box.width, box.height) / 2))
        t0 = rng.uniform(0.0, 2.0 * np.pi)
        span = rng.uniform(np.pi / 2, 1.5 * np.pi)
        ts = np.linspace(t0, t0 + span, max(8, int(4 * r)))
        pts = [(acx + r * np.cos(t), acy + r * np.sin(t)) for t in ts]
        arc_ink = rasterize_polylines([Polyline(points=pts)],
                                      mask.width, mask.height).ink
        arcs |= arc_ink & mask.inside
    detailed = rough | hatch | arcs
    has_detail = bool((detailed & ~rough).any())
    if not has_detail:
        return SketchBitmap.from_array(rough), False
    return SketchBitmap.from_array(detailed), True


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class SampleRecord:
    record_id: str
    class_tag: int
    bbox: BBox
    mask: InstanceMask
    rough: SketchBitmap
    detailed: SketchBitmap
    rough_udf: UdfGrid
    detailed_udf: UdfGrid
    degenerate_binarization: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 <= self.class_tag < NUM_CLASSES:
            raise ParameterError(f"class tag outside [0, {NUM_CLASSES})")
        shape = self.mask.inside.shape
        for part in (self.rough.ink, self.detailed.ink,
                     self.rough_udf.v, self.detailed_udf.v):
            if part.shape != shape:
                raise FormatError("record artifact dimensions differ")
        ring = dilate(boundary_pixels(self.mask.inside), 1.0)
        if (self.rough.ink & ~ring).any():
            raise FormatError("rough ink strays from the mask contour")
        grown = dilate(self.mask.inside, 1.0)
        if (self.detailed.ink & ~grown).any():
            raise FormatError("detailed ink outside the dilated mask")
        if self.bbox != mask_bbox(self.mask):
            raise FormatError("bbox is not the tight mask bbox")
        t = self.rough_udf.time_constant
        if self.detailed_udf.time_constant != t:
            raise FormatError("record field time constants differ")
        if encode_sketch(self.rough, t) != self.rough_udf:
            raise FormatError("rough field is not the encode of its bitmap")
        if encode_sketch(self.detailed, t) != self.detailed_udf:
            raise FormatError("detailed field is not the encode of its bitmap")


def class_tag_for(vertex_count: int, hatch_style: int) -> int:
    """Vertex-count bucket ({5,6},{7,8},{9,10},{11,12}) crossed with style."""
    if not 5 <= vertex_count <= 12:
        raise ParameterError("vertex count outside [5, 12]")
    if hatch_style not in (0, 1):
        raise ParameterError("hatch style must be 0 or 1")
    return ((vertex_count - 5) // 2) * 2 + hatch_style


def build_record(rng: np.random.Generator, width: int = 32, height: int = 32,
                 time_constant: float | None = None,
                 record_id: str | None = None,
                 shape_params: ShapeParams = ShapeParams(),
                 detail_params: DetailParams = DetailParams()) -> SampleRecord:
    """One full procedural record; retries shapes whose interior is too
    small to carry any detail strokes."""
    if time_constant is None:
        time_constant = default_time_constant(width, height)
    if record_id is None:
        record_id = f"r{int(rng.integers(0, 1 << 32)):08x}"
    for _ in range(10):
        vcount = int(rng.integers(shape_params.vertex_min,
                                  shape_params.vertex_max + 1))
        style = int(rng.integers(0, 2))
        pinned = replace(shape_params, vertex_min=vcount, vertex_max=vcount)
        mask, contour = gen_shape(rng, width, height, pinned)
        rough_full = render_rough(contour, width, height)
        rough = SketchBitmap.from_array(rough_full.ink & mask.inside)
        detailed, has_detail = render_detailed(
            contour, mask, rng, replace(detail_params, hatch_style=style))
        if not has_detail:
            continue
        return SampleRecord(
            record_id=record_id,
            class_tag=class_tag_for(vcount, style),
            bbox=mask_bbox(mask),
            mask=mask,
            rough=rough,
            detailed=detailed,
            rough_udf=encode_sketch(rough, time_constant),
            detailed_udf=encode_sketch(detailed, time_constant),
        )
    raise GenerationError("no record with interior detail after 10 attempts")


def filter_small(records: list, min_area_fraction: float = 0.02) -> list:
    if not 0.0 <= min_area_fraction < 1.0:
        raise ParameterError("min area fraction must lie in [0, 1)")
    return [r for r in records
            if mask_area_fraction(r.mask) >= min_area_fraction]


def ingest_external(gray: GrayBitmap, mask: InstanceMask, class_tag: int,
                    record_id: str = "ingested",
                    time_constant: float | None = None) -> SampleRecord:
    """Binarize a grayscale sketch, clip to the given mask, derive the rest.

    A degenerate (single-level) histogram flags the record instead of
    rejecting it; the constant is read as ink only when dark. Ink-free
    results raise the empty-ink error.
    """
    result = otsu_threshold(gray)
    if result.degenerate:
        ink = gray.values < 128
    else:
        ink = binarize(gray, result.threshold).ink
    ink = ink & mask.inside
    if not ink.any():
        raise EmptyInkError("nothing to ingest after binarization")
    if time_constant is None:
        time_constant = default_time_constant(gray.width, gray.height)
    detailed = SketchBitmap.from_array(ink)
    rough = SketchBitmap.from_array(boundary_pixels(mask.inside))
    return SampleRecord(
        record_id=record_id,
        class_tag=class_tag,
        bbox=mask_bbox(mask),
        mask=mask,
        rough=rough,
        detailed=detailed,
        rough_udf=encode_sketch(rough, time_constant),
        detailed_udf=encode_sketch(detailed, time_constant),
        degenerate_binarization=result.degenerate,
    )


def build_dataset(seed: int, count: int, width: int = 32, height: int = 32,
                  min_area_fraction: float = 0.02,
                  shape_params: ShapeParams = ShapeParams(),
                  detail_params: DetailParams = DetailParams()) -> list:
    """Deterministic record list; slim shapes are filtered and replaced so
    the final count is exact."""
    rng = np.random.default_rng(seed)
    records = []
    guard = 0
    while len(records) < count:
        guard += 1
        if guard > 20 * count + 100:
            raise GenerationError("dataset build failed to converge")
        rec = build_record(rng, width, height,
                           record_id=f"r{len(records):05d}",
                           shape_params=shape_params,
                           detail_params=detail_params)
        if filter_small([rec], min_area_fraction):
            records.append(rec)
    return records


def to_train_samples(records: list, binary_targets: bool = False) -> list:
    """Both stage pairs per record: (box mask, rough field, stage 2) and
    (instance mask, detailed field, stage 3).

    binary_targets swaps the distance fields for two-level fields (0 on ink,
    just under 1 elsewhere), which the signal map sends to +-1: the ablation
    baseline that trains on raw binary sketches instead of distance ramps.
    """
    def _target(udf: UdfGrid, sketch: SketchBitmap) -> UdfGrid:
        if not binary_targets:
            return udf
        v = np.where(sketch.ink, 0.0, 1.0 - 1e-6).astype(np.float32)
        return UdfGrid(udf.width, udf.height, v, udf.time_constant)

    out = []
    for rec in records:
        w, h = rec.mask.width, rec.mask.height
        out.append(TrainSample(bbox_to_mask(rec.bbox, w, h),
                               _target(rec.rough_udf, rec.rough),
                               StageIndicator(STAGE_ROUGH)))
        out.append(TrainSample(rec.mask,
                               _target(rec.detailed_udf, rec.detailed),
                               StageIndicator(STAGE_DETAILED)))
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    canvas: tuple
    time_constant: float
    seed: int
    min_area_fraction: float
    entries: tuple  # of (record_id, class_tag, degenerate_binarization)


_SUFFIXES = ("mask.pgm", "rough.pgm", "detailed.pgm", "rough.udfg",
             "detailed.udfg")


def save_dataset(records: list, root: str, seed: int,
                 min_area_fraction: float = 0.02) -> DatasetManifest:
    if not records:
        raise ParameterError("nothing to save")
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate record ids")
    os.makedirs(root, exist_ok=True)
    first = records[0]
    manifest = DatasetManifest(
        canvas=(first.mask.width, first.mask.height),
        time_constant=first.rough_udf.time_constant,
        seed=seed,
        min_area_fraction=min_area_fraction,
        entries=tuple((r.record_id, r.class_tag, r.degenerate_binarization)
                      for r in records),
    )
    for rec in records:
        base = os.path.join(root, rec.record_id)
        with open(f"{base}.mask.pgm", "wb") as fh:
            fh.write(mask_to_pgm(rec.mask))
        with open(f"{base}.rough.pgm", "wb") as fh:
            fh.write(sketch_to_pgm(rec.rough))
        with open(f"{base}.detailed.pgm", "wb") as fh:
            fh.write(sketch_to_pgm(rec.detailed))
        with open(f"{base}.rough.udfg", "wb") as fh:
            fh.write(udfg_to_bytes(rec.rough_udf))
        with open(f"{base}.detailed.udfg", "wb") as fh:
            fh.write(udfg_to_bytes(rec.detailed_udf))
    doc = {
        "canvas": list(manifest.canvas),
        "time_constant": manifest.time_constant,
        "seed": manifest.seed,
        "min_area_fraction": manifest.min_area_fraction,
        "records": [
            {"id": rid, "class_tag": tag, "degenerate_binarization": deg,
             "files": [f"{rid}.{sfx}" for sfx in _SUFFIXES]}
            for rid, tag, deg in manifest.entries
        ],
    }
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(root: str) -> tuple:
    """Read a dataset directory back; returns (manifest, records). Every
    referenced file must exist and parse, and ids must be unique."""
    path = os.path.join(root, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"missing manifest at {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    ids = [entry["id"] for entry in doc["records"]]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate record ids in manifest")
    records = []
    for entry in doc["records"]:
        rid = entry["id"]
        base = os.path.join(root, rid)
        try:
            with open(f"{base}.mask.pgm", "rb") as fh:
                mask = mask_from_pgm(fh.read())
            with open(f"{base}.rough.pgm", "rb") as fh:
                rough = sketch_from_pgm(fh.read())
            with open(f"{base}.detailed.pgm", "rb") as fh:
                detailed = sketch_from_pgm(fh.read())
            with open(f"{base}.rough.udfg", "rb") as fh:
                rough_udf = udfg_from_bytes(fh.read())
            with open(f"{base}.detailed.udfg", "rb") as fh:
                detailed_udf = udfg_from_bytes(fh.read())
        except FileNotFoundError as exc:
            raise FormatError(f"dataset file missing for {rid}") from exc
        records.append(SampleRecord(
            record_id=rid,
            class_tag=int(entry["class_tag"]),
            bbox=mask_bbox(mask),
            mask=mask,
            rough=rough,
            detailed=detailed,
            rough_udf=rough_udf,
            detailed_udf=detailed_udf,
            degenerate_binarization=bool(entry["degenerate_binarization"]),
        ))
    manifest = DatasetManifest(
        canvas=tuple(doc["canvas"]),
        time_constant=float(doc["time_constant"]),
        seed=int(doc["seed"]),
        min_area_fraction=float(doc["min_area_fraction"]),
        entries=tuple((r.record_id, r.class_tag, r.degenerate_binarization)
                      for r in records),
    )
    return manifest, records
