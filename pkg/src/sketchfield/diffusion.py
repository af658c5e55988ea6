"""Stage- and mask-conditioned denoising diffusion over distance fields.

The generator is a small encoder-decoder with skip connections operating on
a 2-channel input: the noisy field signal plus the condition mask rendered
as -1/+1. A per-sample embedding (projected sinusoidal timestep summed with
a learned stage vector) is injected into every residual block as a channel
bias. Training uses the standard simple objective: MSE between drawn and
predicted noise at uniform timesteps.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, ParameterError, ShapeError
from .grids import InstanceMask, StageIndicator
from .udf import UdfGrid, default_time_constant

EMBED_DIM = 64


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass
class NoiseSchedule:
    """Linear-beta DDPM schedule. beta/alpha/posterior_variance are indexed
    by t-1; alpha_bar carries the convention entry alpha_bar[0] = 1."""

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_variance: np.ndarray

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[t])

    def posterior_variance_at(self, t: int) -> float:
        return float(self.posterior_variance[t - 1])


def make_linear_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if steps < 1:
        raise ParameterError("schedule needs at least one step")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, steps)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    prev = alpha_bar[:-1]
    cur = alpha_bar[1:]
    posterior = beta * (1.0 - prev) / (1.0 - cur)
    return NoiseSchedule(steps, beta, alpha, alpha_bar, posterior)


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-process closed form: x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps."""
    if x0.shape != eps.shape:
        raise ShapeError("x0 and eps must share a shape")
    if not 1 <= t <= schedule.steps:
        raise ParameterError(f"t={t} outside [1, {schedule.steps}]")
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# Signal range adaptation
# ---------------------------------------------------------------------------

def udf_to_signal(field: UdfGrid) -> np.ndarray:
    """Affine map of v in [0,1) to [-1,1)."""
    return (2.0 * field.v - 1.0).astype(np.float32)


def signal_to_udf(x: np.ndarray, time_constant: float) -> UdfGrid:
    v = np.clip((np.asarray(x, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0 - 1e-6)
    h, w = v.shape
    return UdfGrid(w, h, v, time_constant)


def mask_to_channel(mask: InstanceMask) -> np.ndarray:
    """Condition mask as a symmetric-range channel: inside +1, outside -1."""
    return np.where(mask.inside, 1.0, -1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Generator network
# ---------------------------------------------------------------------------

@dataclass
class _ResBlock:
    conv1: nn.Conv2d
    norm1: nn.InstanceNorm
    conv2: nn.Conv2d
    norm2: nn.InstanceNorm
    emb_proj: nn.Dense

    @classmethod
    def create(cls, name, channels, rng):
        return cls(
            nn.Conv2d.create(f"{name}.conv1", channels, channels, rng),
            nn.InstanceNorm.create(f"{name}.norm1", channels),
            nn.Conv2d.create(f"{name}.conv2", channels, channels, rng),
            nn.InstanceNorm.create(f"{name}.norm2", channels),
            nn.Dense.create(f"{name}.emb", EMBED_DIM, channels, rng),
        )

    def __call__(self, x, emb):
        h = nn.silu(self.norm1(self.conv1(x)))
        h = nn.add(h, self.emb_proj(emb))
        h = nn.silu(self.norm2(self.conv2(h)))
        return nn.add(x, h)

    def params(self):
        return (self.conv1.params() + self.norm1.params() + self.conv2.params()
                + self.norm2.params() + self.emb_proj.params())


class GeneratorNet:
    """Noise predictor: 2-channel input, one channel out, spatial shape kept.

    Two stride-2 downsamples (so spatial dims must be divisible by 4),
    residual blocks at each scale, nearest-neighbor upsampling with additive
    skips, and a 4-row stage embedding table of which only rows 2 and 3 are
    ever addressed.
    """

    def __init__(self, seed: int = 0, base: int = 32, mid: int = 48, deep: int = 64):
        rng = np.random.default_rng(seed)
        self.stem = nn.Conv2d.create("stem", 2, base, rng)
        self.stem_norm = nn.InstanceNorm.create("stem_norm", base)
        self.down1 = nn.Conv2d.create("down1", base, mid, rng, stride=2)
        self.down1_norm = nn.InstanceNorm.create("down1_norm", mid)
        self.res1 = _ResBlock.create("res1", mid, rng)
        self.down2 = nn.Conv2d.create("down2", mid, deep, rng, stride=2)
        self.down2_norm = nn.InstanceNorm.create("down2_norm", deep)
        self.res2 = _ResBlock.create("res2", deep, rng)
        self.res3 = _ResBlock.create("res3", deep, rng)
        self.up1 = nn.Conv2d.create("up1", deep, mid, rng)
        self.up1_norm = nn.InstanceNorm.create("up1_norm", mid)
        self.res4 = _ResBlock.create("res4", mid, rng)
        self.up2 = nn.Conv2d.create("up2", mid, base, rng)
        self.up2_norm = nn.InstanceNorm.create("up2_norm", base)
        # small-but-nonzero head init: near-zero eps prediction at start
        # without collapsing conditioning gradients
        self.head = nn.Conv2d.create("head", base, 1, rng, w_scale=1e-2)
        self.time_dense = nn.Dense.create("time_dense", EMBED_DIM, EMBED_DIM, rng)
        self.stage_table = nn.Parameter(
            "stage_table", rng.normal(0.0, 0.5, size=(4, EMBED_DIM)).astype(np.float32))

    def embedding(self, ts: np.ndarray, stages: np.ndarray | None) -> nn.Tensor:
        """Projected timestep encoding, plus the stage row when given.
        The sum leaves the embedding shape unchanged."""
        e = nn.Tensor(nn.sinusoidal_embedding_array(ts, EMBED_DIM))
        e = nn.silu(self.time_dense(e))
        if stages is not None:
            e = nn.add(e, nn.take_rows(self.stage_table, stages))
        return e

    def forward(self, x: nn.Tensor, ts: np.ndarray, stages: np.ndarray) -> nn.Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 2:
            raise ShapeError("generator expects (batch, 2, h, w)")
        if x.data.shape[2] % 4 or x.data.shape[3] % 4:
            raise ShapeError("spatial dims must be divisible by 4")
        emb = self.embedding(ts, stages)
        s0 = nn.silu(self.stem_norm(self.stem(x)))
        d1 = nn.silu(self.down1_norm(self.down1(s0)))
        r1 = self.res1(d1, emb)
        d2 = nn.silu(self.down2_norm(self.down2(r1)))
        h = self.res3(self.res2(d2, emb), emb)
        u1 = nn.silu(self.up1_norm(self.up1(nn.upsample_nearest2(h))))
        h = self.res4(nn.add(u1, r1), emb)
        u2 = nn.silu(self.up2_norm(self.up2(nn.upsample_nearest2(h))))
        return self.head(nn.add(u2, s0))

    def params(self):
        out = (self.stem.params() + self.stem_norm.params()
               + self.down1.params() + self.down1_norm.params() + self.res1.params()
               + self.down2.params() + self.down2_norm.params()
               + self.res2.params() + self.res3.params()
               + self.up1.params() + self.up1_norm.params() + self.res4.params()
               + self.up2.params() + self.up2_norm.params() + self.head.params()
               + self.time_dense.params())
        out.append(self.stage_table)
        return out


def _require_stage(stage: StageIndicator):
    if not stage.is_generation_target():
        raise ParameterError("stage 1 (bounding box) is never a generation target")


def predict_eps(net: GeneratorNet, x_t: np.ndarray, mask: InstanceMask,
                t: int, stage: StageIndicator) -> np.ndarray:
    """Single-grid noise prediction with the mask concatenated as a channel."""
    _require_stage(stage)
    x_t = np.asarray(x_t, dtype=np.float32)
    if x_t.shape != mask.inside.shape:
        raise ShapeError("field and mask dimensions differ")
    nn.assert_finite(x_t, "noisy field")
    inp = np.stack([x_t, mask_to_channel(mask)])[None]
    out = net.forward(nn.Tensor(inp), np.array([t]), np.array([stage.value]))
    return out.data[0, 0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainSample:
    condition_mask: InstanceMask
    target_udf: UdfGrid
    stage: StageIndicator

    def __post_init__(self):
        if (self.condition_mask.width, self.condition_mask.height) != (
                self.target_udf.width, self.target_udf.height):
            raise ShapeError("condition and target dimensions differ")
        _require_stage(self.stage)


@dataclass
class TrainConfig:
    total_steps: int = 6000
    batch_size: int = 16
    initial_lr: float = 2e-4
    seed: int = 0
    log_every: int = 50
    diffusion_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def make_schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.diffusion_steps, self.beta_start, self.beta_end)


def train_config_to_text(cfg) -> str:
    lines = [f"{k}={v}" for k, v in vars(cfg).items()]
    return "\n".join(lines) + "\n"


def train_config_from_text(text: str, cls=TrainConfig):
    kwargs = {}
    fields = {f: type(v) for f, v in vars(cls()).items()}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"bad config line: {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigurationError(f"unknown config key: {key}")
        kwargs[key] = fields[key](val.strip())
    return cls(**kwargs)


def loss_curve_to_csv(rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "lr", "loss"])
    for step, lr, loss in rows:
        writer.writerow([step, f"{lr:.8g}", f"{loss:.8g}"])
    return buf.getvalue()


def loss_curve_from_csv(text: str):
    reader = csv.reader(_io.StringIO(text))
    header = next(reader)
    if header != ["step", "lr", "loss"]:
        raise ConfigurationError("unexpected loss-curve header")
    return [(int(r[0]), float(r[1]), float(r[2])) for r in reader if r]


def _batch_input(batch, xt: np.ndarray) -> nn.Tensor:
    cond = np.stack([mask_to_channel(s.condition_mask) for s in batch])
    return nn.Tensor(np.stack([xt, cond], axis=1))


def ddpm_loss(net: GeneratorNet, batch, schedule: NoiseSchedule, rng) -> nn.Tensor:
    """Simple DDPM objective on one minibatch; returns the loss node."""
    if not batch:
        raise ParameterError("empty batch")
    ts = rng.integers(1, schedule.steps + 1, size=len(batch))
    x0 = np.stack([udf_to_signal(s.target_udf) for s in batch])
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    ab = schedule.alpha_bar[ts].astype(np.float32)[:, None, None]
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    stages = np.array([s.stage.value for s in batch])
    pred = net.forward(_batch_input(batch, xt), ts, stages)
    return nn.mse(pred, nn.Tensor(eps[:, None]))


def train(net: GeneratorNet, dataset, schedule: NoiseSchedule, cfg: TrainConfig):
    """Seeded loop over random minibatches; returns (checkpoint bytes,
    loss-curve rows). Requires both generation stages in the dataset."""
    if not dataset:
        raise ConfigurationError("empty dataset")
    present = {s.stage.value for s in dataset}
    if not {2, 3} <= present:
        raise ConfigurationError(f"dataset must cover stages 2 and 3, has {sorted(present)}")
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    state = nn.AdamState()
    curve = []
    for step in range(1, cfg.total_steps + 1):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [dataset[i] for i in idx]
        nn.zero_grad(params)
        loss = ddpm_loss(net, batch, schedule, rng)
        loss.backward()
        lr = nn.cosine_lr(step, cfg.total_steps, cfg.initial_lr)
        nn.adam_step(params, state, lr)
        if step == 1 or step % cfg.log_every == 0 or step == cfg.total_steps:
            curve.append((step, lr, float(loss.data)))
    return nn.checkpoint_to_bytes(params), curve


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_batch(net: GeneratorNet, masks, stages, schedule: NoiseSchedule,
                 rng, time_constant: float | None = None):
    """Ancestral sampling for several (mask, stage) pairs in one batch."""
    if not masks:
        return []
    for st in stages:
        _require_stage(st)
    h, w = masks[0].inside.shape
    n = len(masks)
    cond = np.stack([mask_to_channel(m) for m in masks])
    stage_arr = np.array([st.value for st in stages])
    x = rng.standard_normal((n, h, w)).astype(np.float32)
    for t in range(schedule.steps, 0, -1):
        inp = nn.Tensor(np.stack([x, cond], axis=1))
        eps_hat = net.forward(inp, np.full(n, t), stage_arr).data[:, 0]
        beta = schedule.beta_at(t)
        ab = schedule.alpha_bar_at(t)
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha_at(t))
        if t > 1:
            x = x + np.sqrt(schedule.posterior_variance_at(t)) * \
                rng.standard_normal((n, h, w)).astype(np.float32)
    tc = time_constant if time_constant is not None else default_time_constant(w, h)
    return [signal_to_udf(x[i], tc) for i in range(n)]


def sample(net: GeneratorNet, mask: InstanceMask, stage: StageIndicator,
           schedule: NoiseSchedule, rng, time_constant: float | None = None) -> UdfGrid:
    """Generate one field conditioned on a mask and stage."""
    return sample_batch(net, [mask], [stage], schedule, rng, time_constant)[0]
