"""Learned field-to-sketch decoding plus the comparison harness against the
two geometric decode paths (plain thresholding and contour tracing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .diffusion import udf_to_signal
from .errors import ConfigurationError, ShapeError
from .grids import GrayBitmap, SketchBitmap
from .udf import (UdfGrid, binarize, chamfer_distance, decode_level,
                  decode_threshold, marching_squares, otsu_threshold,
                  rasterize_polylines)

_CLAMP = 1e-7


class DecoderNet:
    """Encoder (2 stride-2 stages), 4 residual blocks, decoder (2 upsamples).

    forward_logits keeps the pre-sigmoid map for the training loss; forward
    applies the sigmoid and is what inference uses.
    """

    def __init__(self, seed: int = 0, base: int = 16, mid: int = 24, deep: int = 32):
        rng = np.random.default_rng(seed)
        self.stem = nn.Conv2d.create("dec.stem", 1, base, rng)
        self.stem_norm = nn.InstanceNorm.create("dec.stem_norm", base)
        self.down1 = nn.Conv2d.create("dec.down1", base, mid, rng, stride=2)
        self.down1_norm = nn.InstanceNorm.create("dec.down1_norm", mid)
        self.down2 = nn.Conv2d.create("dec.down2", mid, deep, rng, stride=2)
        self.down2_norm = nn.InstanceNorm.create("dec.down2_norm", deep)
        self.blocks = []
        for i in range(4):
            self.blocks.append((
                nn.Conv2d.create(f"dec.b{i}.c1", deep, deep, rng),
                nn.InstanceNorm.create(f"dec.b{i}.n1", deep),
                nn.Conv2d.create(f"dec.b{i}.c2", deep, deep, rng),
                nn.InstanceNorm.create(f"dec.b{i}.n2", deep),
            ))
        self.up1 = nn.Conv2d.create("dec.up1", deep, mid, rng)
        self.up1_norm = nn.InstanceNorm.create("dec.up1_norm", mid)
        self.up2 = nn.Conv2d.create("dec.up2", mid, base, rng)
        self.up2_norm = nn.InstanceNorm.create("dec.up2_norm", base)
        self.head = nn.Conv2d.create("dec.head", base, 1, rng)

    def params(self):
        out = (self.stem.params() + self.stem_norm.params()
               + self.down1.params() + self.down1_norm.params()
               + self.down2.params() + self.down2_norm.params())
        for c1, n1, c2, n2 in self.blocks:
            out += c1.params() + n1.params() + c2.params() + n2.params()
        return (out + self.up1.params() + self.up1_norm.params()
                + self.up2.params() + self.up2_norm.params()
                + self.head.params())

    def forward_logits(self, x: nn.Tensor) -> nn.Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 1:
            raise ShapeError("decoder expects (batch, 1, h, w)")
        if x.data.shape[2] % 4 or x.data.shape[3] % 4:
            raise ShapeError("spatial dims must be divisible by 4")
        s0 = nn.silu(self.stem_norm(self.stem(x)))
        s1 = nn.silu(self.down1_norm(self.down1(s0)))
        h = nn.silu(self.down2_norm(self.down2(s1)))
        for c1, n1, c2, n2 in self.blocks:
            r = n2(c2(nn.silu(n1(c1(h)))))
            h = nn.silu(nn.add(r, h))
        u1 = nn.silu(self.up1_norm(self.up1(nn.upsample_nearest2(h))))
        u1 = nn.add(u1, s1)
        u2 = nn.silu(self.up2_norm(self.up2(nn.upsample_nearest2(u1))))
        u2 = nn.add(u2, s0)
        return self.head(u2)

    def forward(self, x: nn.Tensor) -> np.ndarray:
        z = self.forward_logits(x).data
        return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def bce_loss(pred: np.ndarray, target: SketchBitmap) -> float:
    """Mean binary cross-entropy of ink probabilities, clamped at 1e-7."""
    if pred.shape != target.ink.shape:
        raise ShapeError("prediction and target dimensions differ")
    p = np.clip(np.asarray(pred, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    y = target.ink
    return float(-np.mean(np.where(y, np.log(p), np.log(1.0 - p))))


def bce_logits_node(logits: nn.Tensor, targets: np.ndarray) -> nn.Tensor:
    """Numerically stable BCE on logits: mean(max(z,0) - z y + log1p(e^-|z|))."""
    if logits.data.shape != targets.shape:
        raise ShapeError("logits and targets differ in shape")
    z = logits.data.astype(np.float64)
    y = targets.astype(np.float64)
    value = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    t = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    dz = ((sig - y) / z.size).astype(logits.data.dtype)

    def backward(go):
        if logits.requires_grad:
            logits._accumulate(go * dz)

    return nn.Tensor(np.asarray(value, dtype=np.float64), parents=(logits,),
                     backward=backward)


# ---------------------------------------------------------------------------
# Inference and geometric decode paths
# ---------------------------------------------------------------------------

def decode_learned(net: DecoderNet, field: UdfGrid) -> GrayBitmap:
    """Grayscale sketch: ink probability mapped to darkness, (1-p)*255."""
    x = nn.Tensor(udf_to_signal(field)[None, None])
    p = net.forward(x)[0, 0]
    return GrayBitmap.from_array(
        np.round((1.0 - p) * 255.0).astype(np.uint8))


def binarize_gray(gray: GrayBitmap) -> SketchBitmap:
    """Otsu split of a grayscale sketch; a degenerate histogram (flat image,
    so no ink/background separation) decodes as blank."""
    result = otsu_threshold(gray)
    if result.degenerate:
        return SketchBitmap.blank(gray.width, gray.height)
    return binarize(gray, result.threshold)


def decode_learned_binary(net: DecoderNet, field: UdfGrid) -> SketchBitmap:
    return binarize_gray(decode_learned(net, field))


def decode_msquares(field: UdfGrid) -> SketchBitmap:
    """Contour-trace decode: iso lines at the stroke level, rasterized."""
    lines = marching_squares(field, decode_level(field.time_constant))
    return rasterize_polylines(lines, field.width, field.height)


def continuity_score(sketch: SketchBitmap) -> float:
    """Fraction of ink pixels with at least 2 ink neighbors (8-neighborhood).

    Blank sketches score 0: no pixel demonstrates continuity.
    """
    ink = sketch.ink
    total = int(ink.sum())
    if total == 0:
        return 0.0
    padded = np.pad(ink, 1).astype(np.int32)
    neighbors = np.zeros_like(padded)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbors += np.roll(np.roll(padded, dy, axis=0), dx, axis=1)
    counts = neighbors[1:-1, 1:-1]
    return float((ink & (counts >= 2)).sum() / total)


def _guarded_chamfer(decoded: SketchBitmap, truth: SketchBitmap) -> float:
    """Chamfer with a worst-case fallback when either side is blank, so the
    comparison metrics stay finite on degenerate decodes."""
    if decoded.is_blank() or truth.is_blank():
        return float(np.hypot(truth.width, truth.height))
    return chamfer_distance(decoded, truth)


@dataclass(frozen=True)
class DecoderComparison:
    methods: tuple  # of (name, chamfer, ink_fraction, continuity)

    def row(self, name: str):
        for entry in self.methods:
            if entry[0] == name:
                return entry
        raise KeyError(name)


def compare_decoders(field: UdfGrid, ground_truth: SketchBitmap,
                     net: DecoderNet) -> DecoderComparison:
    if ground_truth.is_blank():
        raise ShapeError("comparison needs nonblank ground truth")
    decodes = [
        ("learned", decode_learned_binary(net, field)),
        ("threshold", decode_threshold(field, decode_level(field.time_constant))),
        ("msquares", decode_msquares(field)),
    ]
    area = field.width * field.height
    rows = []
    for name, sk in decodes:
        rows.append((name,
                     _guarded_chamfer(sk, ground_truth),
                     sk.ink_count() / area,
                     continuity_score(sk)))
    return DecoderComparison(tuple(rows))


def comparison_to_csv(comp: DecoderComparison) -> str:
    lines = ["method,chamfer,ink_fraction,continuity"]
    for name, ch, frac, cont in comp.methods:
        lines.append(f"{name},{ch:.6f},{frac:.6f},{cont:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_decoder(pairs, cfg, val_fraction: float = 0.1,
                  input_noise_sigma: float = 0.0):
    """Train on (UdfGrid, SketchBitmap) pairs with pixelwise cross-entropy.

    `input_noise_sigma` > 0 corrupts the input field values with fresh
    additive gaussian noise each step (targets stay clean), which forces
    the net to use neighborhood context instead of acting as a pointwise
    threshold. Validation always runs on clean inputs.

    Returns (checkpoint bytes, loss curve rows, validation rows of
    (step, mean chamfer of the binarized decode on held-out pairs)).
    """
    if not pairs:
        raise ConfigurationError("empty dataset")
    n_val = max(1, int(len(pairs) * val_fraction)) if len(pairs) > 4 else 0
    val = pairs[:n_val]
    trainset = pairs[n_val:] or pairs
    rng = np.random.default_rng(cfg.seed)
    net = DecoderNet(seed=cfg.seed)
    params = net.params()
    state = nn.AdamState()
    curve = []
    val_rows = []

    def val_chamfer(current):
        dists = []
        for field, truth in val:
            dists.append(_guarded_chamfer(decode_learned_binary(current, field),
                                          truth))
        return float(np.mean(dists)) if dists else float("nan")

    for step in range(1, cfg.total_steps + 1):
        idx = rng.integers(0, len(trainset), size=cfg.batch_size)
        columns = []
        for i in idx:
            field = trainset[i][0]
            if input_noise_sigma > 0.0:
                noisy = np.clip(
                    field.v + rng.normal(0.0, input_noise_sigma,
                                         field.v.shape),
                    0.0, 1.0 - 1e-6).astype(np.float32)
                field = UdfGrid(field.width, field.height, noisy,
                                field.time_constant)
            columns.append(udf_to_signal(field)[None])
        xs = np.stack(columns)
        ys = np.stack([trainset[i][1].ink[None] for i in idx])
        nn.zero_grad(params)
        loss = bce_logits_node(net.forward_logits(nn.Tensor(xs)), ys)
        loss.backward()
        lr = nn.cosine_lr(step, cfg.total_steps, cfg.initial_lr)
        nn.adam_step(params, state, lr)
        if step == 1 or step % cfg.log_every == 0 or step == cfg.total_steps:
            curve.append((step, lr, float(loss.data)))
            if val:
                val_rows.append((step, val_chamfer(net)))
    return nn.checkpoint_to_bytes(params), curve, val_rows


def load_decoder(blob: bytes, seed: int = 0) -> DecoderNet:
    net = DecoderNet(seed=seed)
    nn.load_params_from_bytes(blob, net.params())
    return net
