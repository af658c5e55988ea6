"""Progressive generation sessions: the box → rough → (edit) → mask →
detailed state machine, layer compositing, batch evaluation, and directory
persistence.

Session operations mutate in place but assign only after every artifact is
built, so a raised precondition never leaves a half-updated session.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field

import numpy as np

from .dataset import NUM_CLASSES
from .diffusion import sample
from .errors import (BoundsError, EmptyInkError, FormatError, ParameterError,
                     ShapeError, StateError)
from .grids import (BBox, InstanceMask, SketchBitmap, StageIndicator,
                    STAGE_DETAILED, STAGE_ROUGH, bbox_to_mask, ink_containment,
                    mask_bbox, mask_from_pgm, mask_to_pgm, sketch_from_pgm,
                    sketch_to_pgm)
from .masking import extract_mask_deterministic, extract_mask_learned
from .morphology import dilate
from .udf import (UdfGrid, chamfer_distance, decode_level, decode_threshold,
                  encode_sketch, udfg_from_bytes, udfg_to_bytes)

SESSION_STATES = ("BoxSpecified", "RoughGenerated", "RoughEdited",
                  "MaskExtracted", "DetailedGenerated")


@dataclass
class GenerationSession:
    session_id: str
    width: int
    height: int
    state: str
    bbox: BBox
    class_tag: int
    rough_udf: UdfGrid | None = None
    detailed_udf: UdfGrid | None = None
    rough_sketch: SketchBitmap | None = None
    edited_sketch: SketchBitmap | None = None
    detailed_sketch: SketchBitmap | None = None
    instance_mask: InstanceMask | None = None
    blank_generation: bool = False  # last sample decoded to no ink

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.state not in SESSION_STATES:
            raise StateError(f"unknown state {self.state}")
        if not 0 <= self.class_tag < NUM_CLASSES:
            raise ParameterError("class tag out of range")
        self.bbox.validate_for(self.width, self.height)
        rank = SESSION_STATES.index(self.state)
        expect = {
            "rough_udf": rank >= 1,
            "rough_sketch": rank >= 1,
            "edited_sketch": None,  # optional at any rank >= 2
            "instance_mask": rank >= 3,
            "detailed_udf": rank >= 4,
            "detailed_sketch": rank >= 4,
        }
        for name, wanted in expect.items():
            have = getattr(self, name) is not None
            if wanted is None:
                if have and rank < 2:
                    raise StateError(f"{name} set before its stage")
            elif have != wanted:
                raise StateError(f"{name} inconsistent with state {self.state}")


def create_session(bbox: BBox, class_tag: int, width: int, height: int,
                   session_id: str | None = None) -> GenerationSession:
    if session_id is None:
        session_id = uuid.uuid4().hex[:12]
    return GenerationSession(session_id=session_id, width=width, height=height,
                             state="BoxSpecified", bbox=bbox,
                             class_tag=class_tag)


def _decode_field(field_grid: UdfGrid, decoder_net=None) -> SketchBitmap:
    if decoder_net is not None:
        from .decoder import decode_learned_binary
        return decode_learned_binary(decoder_net, field_grid)
    return decode_threshold(field_grid, decode_level(field_grid.time_constant))


def generate_rough(session: GenerationSession, net, schedule, rng,
                   decoder_net=None) -> GenerationSession:
    """Stage-2 sample conditioned on the box region. A blank decode sets
    blank_generation and leaves the session in BoxSpecified for a retry."""
    if session.state != "BoxSpecified":
        raise StateError(f"generate_rough requires BoxSpecified, in {session.state}")
    cond = bbox_to_mask(session.bbox, session.width, session.height)
    field_grid = sample(net, cond, StageIndicator(STAGE_ROUGH), schedule, rng)
    sketch = _decode_field(field_grid, decoder_net)
    if sketch.is_blank():
        session.blank_generation = True
        return session
    session.rough_udf = field_grid
    session.rough_sketch = sketch
    session.state = "RoughGenerated"
    session.blank_generation = False
    return session


def submit_edit(session: GenerationSession,
                edited: SketchBitmap) -> GenerationSession:
    """Replace the rough sketch with the user's strokes and re-encode.

    Ink outside the bbox is accepted; the editing hand overrides the box.
    """
    if session.state != "RoughGenerated":
        raise StateError(f"submit_edit requires RoughGenerated, in {session.state}")
    if (edited.width, edited.height) != (session.width, session.height):
        raise ShapeError("edited sketch does not match the session canvas")
    if edited.is_blank():
        raise EmptyInkError("an edit must leave some ink")
    encoded = encode_sketch(edited)
    session.edited_sketch = SketchBitmap.from_array(edited.ink.copy())
    session.rough_udf = encoded
    session.rough_sketch = SketchBitmap.from_array(edited.ink.copy())
    session.state = "RoughEdited"
    return session


def extract_mask(session: GenerationSession, mask_net=None) -> GenerationSession:
    """Deterministic extractor by default; learned head when provided."""
    if session.state not in ("RoughGenerated", "RoughEdited"):
        raise StateError(f"extract_mask requires a rough stage, in {session.state}")
    if mask_net is not None:
        mask = extract_mask_learned(mask_net, session.rough_udf, session.bbox)
    else:
        mask = extract_mask_deterministic(session.rough_udf, session.bbox)
    session.instance_mask = mask
    session.state = "MaskExtracted"
    return session


def generate_detailed(session: GenerationSession, net, schedule, rng,
                      decoder_net=None) -> GenerationSession:
    """Stage-3 sample conditioned on the extracted instance mask."""
    if session.state != "MaskExtracted":
        raise StateError(f"generate_detailed requires MaskExtracted, in {session.state}")
    field_grid = sample(net, session.instance_mask,
                        StageIndicator(STAGE_DETAILED), schedule, rng)
    sketch = _decode_field(field_grid, decoder_net)
    if sketch.is_blank():
        session.blank_generation = True
        return session
    session.detailed_udf = field_grid
    session.detailed_sketch = sketch
    session.state = "DetailedGenerated"
    session.blank_generation = False
    return session


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositionLayer:
    sketch: SketchBitmap
    mask: InstanceMask
    offset: tuple = (0, 0)

    def __post_init__(self):
        if (self.sketch.width, self.sketch.height) != (self.mask.width,
                                                       self.mask.height):
            raise ShapeError("layer sketch and mask dimensions differ")


@dataclass
class CompositionCanvas:
    width: int
    height: int
    layers: list = field(default_factory=list)  # back-to-front


def _blit(target: np.ndarray, source: np.ndarray, dx: int, dy: int,
          clear: bool):
    h, w = source.shape
    th, tw = target.shape
    x0, y0 = max(dx, 0), max(dy, 0)
    x1, y1 = min(dx + w, tw), min(dy + h, th)
    if x1 <= x0 or y1 <= y0:
        return
    patch = source[y0 - dy:y1 - dy, x0 - dx:x1 - dx]
    if clear:
        target[y0:y1, x0:x1] &= ~patch
    else:
        target[y0:y1, x0:x1] |= patch


def compose(canvas: CompositionCanvas) -> SketchBitmap:
    """Back-to-front paint with occlusion: each layer first clears the
    pixels under its mask, then paints its ink."""
    if not canvas.layers:
        raise ParameterError("composition needs at least one layer")
    for layer in canvas.layers:
        covered = layer.mask.inside | layer.sketch.ink
        if not covered.any():
            continue
        dx, dy = layer.offset
        box = mask_bbox(InstanceMask.from_array(covered)).shifted(dx, dy)
        if box.x0 < 0 or box.y0 < 0 or box.x1 > canvas.width or box.y1 > canvas.height:
            raise BoundsError(
                f"layer bbox {box.astuple()} leaves the "
                f"{canvas.width}x{canvas.height} canvas")
    out = np.zeros((canvas.height, canvas.width), dtype=bool)
    for layer in canvas.layers:
        dx, dy = layer.offset
        _blit(out, layer.mask.inside, dx, dy, clear=True)
        _blit(out, layer.sketch.ink, dx, dy, clear=False)
    return SketchBitmap.from_array(out)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(sessions: list, references: list | None = None) -> list:
    """Per-session metric rows plus an aggregate mean row.

    Containment is measured against the instance mask grown by one pixel.
    With a reference sketch set, each row also reports the chamfer distance
    to the nearest reference.
    """
    if not sessions:
        raise ParameterError("nothing to evaluate")
    for s in sessions:
        if s.state != "DetailedGenerated":
            raise StateError(f"session {s.session_id} not finished")
    rows = []
    for s in sessions:
        grown = InstanceMask.from_array(dilate(s.instance_mask.inside, 1.0))
        row = {
            "session_id": s.session_id,
            "containment": ink_containment(s.detailed_sketch, grown),
            "ink_fraction": s.detailed_sketch.ink_count() / (s.width * s.height),
        }
        if references:
            usable = [ref for ref in references if not ref.is_blank()]
            if not usable:
                raise ParameterError("all reference sketches are blank")
            row["chamfer_nearest"] = min(
                chamfer_distance(s.detailed_sketch, ref) for ref in usable)
        rows.append(row)
    keys = [k for k in rows[0] if k != "session_id"]
    aggregate = {"session_id": "aggregate"}
    for k in keys:
        aggregate[k] = float(np.mean([r[k] for r in rows]))
    rows.append(aggregate)
    return rows


def evaluation_to_csv(rows: list) -> str:
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        cells = [row["session_id"]]
        cells += [f"{row[k]:.6f}" for k in keys if k != "session_id"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_ARTIFACTS = (
    ("rough_udf", "rough.udfg", udfg_to_bytes, udfg_from_bytes),
    ("detailed_udf", "detailed.udfg", udfg_to_bytes, udfg_from_bytes),
    ("rough_sketch", "rough.pgm", sketch_to_pgm, sketch_from_pgm),
    ("edited_sketch", "edited.pgm", sketch_to_pgm, sketch_from_pgm),
    ("detailed_sketch", "detailed.pgm", sketch_to_pgm, sketch_from_pgm),
    ("instance_mask", "mask.pgm", mask_to_pgm, mask_from_pgm),
)


def _descriptor(session: GenerationSession) -> dict:
    return {
        "id": session.session_id,
        "canvas": [session.width, session.height],
        "state": session.state,
        "bbox": list(session.bbox.astuple()),
        "class_tag": session.class_tag,
        "blank_generation": session.blank_generation,
        "artifacts": [fname for attr, fname, _, _ in _ARTIFACTS
                      if getattr(session, attr) is not None],
    }


def save_session(session: GenerationSession, root: str):
    os.makedirs(root, exist_ok=True)
    for attr, fname, to_bytes, _ in _ARTIFACTS:
        value = getattr(session, attr)
        if value is not None:
            with open(os.path.join(root, fname), "wb") as fh:
                fh.write(to_bytes(value))
    with open(os.path.join(root, "session.json"), "w", encoding="utf-8") as fh:
        json.dump(_descriptor(session), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_session(root: str) -> GenerationSession:
    path = os.path.join(root, "session.json")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"missing session descriptor at {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable session descriptor: {exc}") from exc
    fields = {}
    listed = set(doc["artifacts"])
    for attr, fname, _, from_bytes in _ARTIFACTS:
        if fname not in listed:
            continue
        try:
            with open(os.path.join(root, fname), "rb") as fh:
                fields[attr] = from_bytes(fh.read())
        except FileNotFoundError as exc:
            raise FormatError(f"session artifact missing: {fname}") from exc
    return GenerationSession(
        session_id=doc["id"],
        width=int(doc["canvas"][0]),
        height=int(doc["canvas"][1]),
        state=doc["state"],
        bbox=BBox(*doc["bbox"]),
        class_tag=int(doc["class_tag"]),
        blank_generation=bool(doc.get("blank_generation", False)),
        **fields,
    )


def session_fingerprint(session: GenerationSession) -> bytes:
    """Canonical byte serialization, for exact no-mutation assertions."""
    parts = [json.dumps(_descriptor(session), sort_keys=True).encode()]
    for attr, _, to_bytes, _ in _ARTIFACTS:
        value = getattr(session, attr)
        if value is not None:
            parts.append(to_bytes(value))
    return b"\x00".join(parts)
