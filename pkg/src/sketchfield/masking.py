"""Instance-mask extraction from a rough distance field plus a bounding box.

Two routes: a deterministic geometric path (threshold, close gaps, flood the
background from the box border, peel the dilation ring back off) and a tiny
learned head trained with the weighted focal + dice objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .diffusion import mask_to_channel, udf_to_signal
from .errors import ConfigurationError, EmptyRegionError, ShapeError
from .grids import BBox, InstanceMask, bbox_to_mask
from .morphology import dilate, erode, flood_fill
from .udf import UdfGrid, decode_level, decode_threshold

CLOSE_RADIUS = 2.0  # gap-closing radius; matches the narrowest renderer gap


def extract_mask_deterministic(field: UdfGrid, box: BBox) -> InstanceMask:
    """Fill whatever the rough strokes enclose, clipped to the box.

    Strokes are the sub-level set at the 0.5 px decode level. Dilation by 2
    closes small contour gaps so the border flood cannot leak inside; the
    final erosion (outside-the-box treated as filled so box-hugging strokes
    survive) peels that dilation back off.
    """
    box.validate_for(field.width, field.height)
    strokes = decode_threshold(field, decode_level(field.time_constant)).ink
    box_region = bbox_to_mask(box, field.width, field.height).inside
    if not (strokes & box_region).any():
        raise EmptyRegionError("no strokes inside the box")
    blocked = dilate(strokes, CLOSE_RADIUS) | ~box_region
    seeds = []
    for x in range(box.x0, box.x1):
        seeds.append((x, box.y0))
        seeds.append((x, box.y1 - 1))
    for y in range(box.y0, box.y1):
        seeds.append((box.x0, y))
        seeds.append((box.x1 - 1, y))
    background = flood_fill(blocked, seeds)
    filled = box_region & ~background
    peeled = erode(filled | ~box_region, CLOSE_RADIUS, border_value=True)
    return InstanceMask.from_array(peeled & box_region)


# ---------------------------------------------------------------------------
# Losses (pure forms, plus a differentiable node for training)
# ---------------------------------------------------------------------------

_CLAMP = 1e-7


@dataclass(frozen=True)
class MaskLossConfig:
    lambda_focal: float = 20.0
    lambda_dice: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.lambda_focal < 0 or self.lambda_dice < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.lambda_focal + self.lambda_dice == 0:
            raise ConfigurationError("at least one loss weight must be positive")
        if not 0 < self.focal_alpha < 1:
            raise ConfigurationError("focal alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ConfigurationError("focal gamma must be nonnegative")


def mask_loss_config_to_text(cfg: MaskLossConfig) -> str:
    return (f"mask.lambda_focal={cfg.lambda_focal}\n"
            f"mask.lambda_dice={cfg.lambda_dice}\n"
            f"mask.focal_alpha={cfg.focal_alpha}\n"
            f"mask.focal_gamma={cfg.focal_gamma}\n")


def mask_loss_config_from_text(text: str) -> MaskLossConfig:
    vals = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        if not key.startswith("mask."):
            raise ConfigurationError(f"unknown mask loss key: {key}")
        vals[key[5:].strip()] = float(val)
    return MaskLossConfig(**{k: vals[k] for k in
                             ("lambda_focal", "lambda_dice", "focal_alpha", "focal_gamma")
                             if k in vals})


def _check_pair(pred: np.ndarray, target: InstanceMask):
    if pred.shape != target.inside.shape:
        raise ShapeError("prediction and target dimensions differ")


def focal_loss(pred: np.ndarray, target: InstanceMask,
               alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean of -alpha_t (1-p_t)^gamma ln(p_t); probabilities clamped away
    from 0 and 1."""
    _check_pair(pred, target)
    p = np.clip(np.asarray(pred, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    y = target.inside
    pt = np.where(y, p, 1.0 - p)
    at = np.where(y, alpha, 1.0 - alpha)
    return float(np.mean(-at * (1.0 - pt) ** gamma * np.log(pt)))


def dice_loss(pred: np.ndarray, target: InstanceMask, smoothing: float = 1.0) -> float:
    _check_pair(pred, target)
    p = np.asarray(pred, dtype=np.float64)
    y = target.inside.astype(np.float64)
    inter = float((p * y).sum())
    return float(1.0 - (2.0 * inter + smoothing) / (p.sum() + y.sum() + smoothing))


def combined_mask_loss(pred: np.ndarray, target: InstanceMask,
                       cfg: MaskLossConfig = MaskLossConfig()) -> float:
    return (cfg.lambda_focal * focal_loss(pred, target, cfg.focal_alpha, cfg.focal_gamma)
            + cfg.lambda_dice * dice_loss(pred, target))


def mask_loss_node(logits: nn.Tensor, targets: np.ndarray,
                   cfg: MaskLossConfig) -> nn.Tensor:
    """Differentiable combined loss on a (batch, 1, h, w) logit tensor.

    Forward matches combined_mask_loss applied to sigmoid(logits) averaged
    over the batch; backward is the analytic gradient (clamped focal pixels
    contribute zero, matching the clamp semantics).
    """
    if logits.data.shape != targets.shape:
        raise ShapeError("logits and targets differ in shape")
    z = logits.data.astype(np.float64)  # forward in f64; grads cast back
    y = targets.astype(z.dtype)
    t = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    n_pixels = z[0].size
    batch = z.shape[0]
    a, g = cfg.focal_alpha, cfg.focal_gamma

    pt = np.where(y > 0.5, pc, 1.0 - pc)
    at = np.where(y > 0.5, a, 1.0 - a)
    focal = float((-at * (1.0 - pt) ** g * np.log(pt)).sum() / (n_pixels * batch))
    # d(focal)/d(pt), sign folded per class below
    if g == 0:
        dfocal_dpt = -at / pt
    else:
        dfocal_dpt = at * (g * (1.0 - pt) ** (g - 1) * np.log(pt)
                           - (1.0 - pt) ** g / pt)
    dfocal_dpc = np.where(y > 0.5, dfocal_dpt, -dfocal_dpt) / (n_pixels * batch)

    axes = (1, 2, 3)
    inter = (pc * y).sum(axis=axes)
    psum = pc.sum(axis=axes)
    ysum = y.sum(axis=axes)
    denom = psum + ysum + 1.0
    dice = float((1.0 - (2.0 * inter + 1.0) / denom).mean())
    ddice_dpc = (-(2.0 * y * denom[:, None, None, None]
                   - (2.0 * inter + 1.0)[:, None, None, None])
                 / (denom ** 2)[:, None, None, None]) / batch

    value = cfg.lambda_focal * focal + cfg.lambda_dice * dice
    dpc = cfg.lambda_focal * dfocal_dpc + cfg.lambda_dice * ddice_dpc
    inside_clamp = (p > _CLAMP) & (p < 1.0 - _CLAMP)
    dz = np.where(inside_clamp, dpc * p * (1.0 - p),
                  0.0).astype(logits.data.dtype)

    def backward(go):
        if logits.requires_grad:
            logits._accumulate(go * dz)

    return nn.Tensor(np.asarray(value, dtype=np.float64), parents=(logits,),
                     backward=backward)


# ---------------------------------------------------------------------------
# Learned head
# ---------------------------------------------------------------------------

class MaskHeadNet:
    """Small encoder-decoder over (field signal, box channel); emits logits."""

    def __init__(self, seed: int = 0, base: int = 16, mid: int = 24):
        rng = np.random.default_rng(seed)
        self.stem = nn.Conv2d.create("mh.stem", 2, base, rng)
        self.stem_norm = nn.InstanceNorm.create("mh.stem_norm", base)
        self.down = nn.Conv2d.create("mh.down", base, mid, rng, stride=2)
        self.down_norm = nn.InstanceNorm.create("mh.down_norm", mid)
        self.mid = nn.Conv2d.create("mh.mid", mid, mid, rng)
        self.mid_norm = nn.InstanceNorm.create("mh.mid_norm", mid)
        self.up = nn.Conv2d.create("mh.up", mid, base, rng)
        self.up_norm = nn.InstanceNorm.create("mh.up_norm", base)
        self.head = nn.Conv2d.create("mh.head", base, 1, rng)

    def forward(self, x: nn.Tensor) -> nn.Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 2:
            raise ShapeError("mask head expects (batch, 2, h, w)")
        if x.data.shape[2] % 2 or x.data.shape[3] % 2:
            raise ShapeError("spatial dims must be even")
        s = nn.silu(self.stem_norm(self.stem(x)))
        d = nn.silu(self.down_norm(self.down(s)))
        d = nn.silu(self.mid_norm(self.mid(d)))
        u = nn.silu(self.up_norm(self.up(nn.upsample_nearest2(d))))
        return self.head(nn.add(u, s))

    def params(self):
        return (self.stem.params() + self.stem_norm.params()
                + self.down.params() + self.down_norm.params()
                + self.mid.params() + self.mid_norm.params()
                + self.up.params() + self.up_norm.params() + self.head.params())


def _head_input(field: UdfGrid, box_mask: InstanceMask) -> np.ndarray:
    return np.stack([udf_to_signal(field), mask_to_channel(box_mask)])


def predict_probabilities(net: MaskHeadNet, field: UdfGrid, box: BBox) -> np.ndarray:
    box.validate_for(field.width, field.height)
    box_mask = bbox_to_mask(box, field.width, field.height)
    logits = net.forward(nn.Tensor(_head_input(field, box_mask)[None])).data[0, 0]
    return 1.0 / (1.0 + np.exp(-logits))


def extract_mask_learned(net: MaskHeadNet, field: UdfGrid, box: BBox,
                         threshold: float = 0.5) -> InstanceMask:
    """Sigmoid output thresholded and clipped to the box; may be empty."""
    probs = predict_probabilities(net, field, box)
    box_mask = bbox_to_mask(box, field.width, field.height)
    return InstanceMask.from_array((probs >= threshold) & box_mask.inside)


def train_mask_head(dataset, loss_cfg: MaskLossConfig, cfg, val_fraction: float = 0.1):
    """Train on (UdfGrid, BBox, InstanceMask) triples.

    Returns (checkpoint bytes, loss curve rows, validation rows of
    (step, mean IoU)). Deterministic given cfg.seed.
    """
    from .grids import mask_iou  # local import keeps module deps one-way

    if not dataset:
        raise ConfigurationError("empty dataset")
    n_val = max(1, int(len(dataset) * val_fraction)) if len(dataset) > 4 else 0
    val = dataset[:n_val]
    trainset = dataset[n_val:] or dataset
    rng = np.random.default_rng(cfg.seed)
    net = MaskHeadNet(seed=cfg.seed)
    params = net.params()
    state = nn.AdamState()
    curve = []
    val_rows = []

    def val_iou(current):
        scores = []
        for field, box, truth in val:
            got = extract_mask_learned(current, field, box)
            scores.append(mask_iou(got, truth))
        return float(np.mean(scores)) if scores else float("nan")

    for step in range(1, cfg.total_steps + 1):
        idx = rng.integers(0, len(trainset), size=cfg.batch_size)
        xs, ys = [], []
        for i in idx:
            field, box, truth = trainset[i]
            box_mask = bbox_to_mask(box, field.width, field.height)
            xs.append(_head_input(field, box_mask))
            ys.append(truth.inside[None])
        inp = nn.Tensor(np.stack(xs))
        targets = np.stack(ys)
        nn.zero_grad(params)
        loss = mask_loss_node(net.forward(inp), targets, loss_cfg)
        loss.backward()
        lr = nn.cosine_lr(step, cfg.total_steps, cfg.initial_lr)
        nn.adam_step(params, state, lr)
        if step == 1 or step % cfg.log_every == 0 or step == cfg.total_steps:
            curve.append((step, lr, float(loss.data)))
            if val:
                val_rows.append((step, val_iou(net)))
    return nn.checkpoint_to_bytes(params), curve, val_rows


def load_mask_head(blob: bytes, seed: int = 0) -> MaskHeadNet:
    net = MaskHeadNet(seed=seed)
    nn.load_params_from_bytes(blob, net.params())
    return net
