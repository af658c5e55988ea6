"""Kernel tests: closed-form forward checks plus finite-difference gradient
oracles for every op, optimizer behavior, and checkpoint serialization."""

import numpy as np
import pytest

from sketchfield import nn
from sketchfield.errors import FormatError, ParameterError, ShapeError


def _t(data, grad=True):
    return nn.Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


def _const(data):
    return nn.Tensor(np.asarray(data, dtype=np.float32))


# --- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = _t(rng.normal(size=(2, 3, 6, 7)))
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = nn.conv2d(x, nn.Parameter("w", w), nn.Parameter("b", np.zeros(3, np.float32)))
    assert np.allclose(out.data, x.data, atol=1e-7)


def test_conv_ones_kernel_interior():
    x = _t(np.ones((1, 1, 5, 5)))
    w = nn.Parameter("w", np.ones((1, 1, 3, 3), np.float32))
    b = nn.Parameter("b", np.zeros(1, np.float32))
    out = nn.conv2d(x, w, b).data
    assert np.allclose(out[0, 0, 1:4, 1:4], 9.0)
    assert out[0, 0, 0, 0] == 4.0  # corner sees a 2x2 window


def test_conv_stride2_shape():
    x = _t(np.zeros((1, 4, 8, 8)))
    w = nn.Parameter("w", np.zeros((6, 4, 3, 3), np.float32))
    b = nn.Parameter("b", np.zeros(6, np.float32))
    assert nn.conv2d(x, w, b, stride=2).shape == (1, 6, 4, 4)
    x5 = _t(np.zeros((1, 4, 5, 5)))
    assert nn.conv2d(x5, w, b, stride=2).shape == (1, 6, 3, 3)


def test_conv_shape_errors():
    x = _t(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeError):
        nn.conv2d(x, nn.Parameter("w", np.zeros((3, 5, 3, 3), np.float32)),
                  nn.Parameter("b", np.zeros(3, np.float32)))
    with pytest.raises(ParameterError):
        nn.conv2d(x, nn.Parameter("w", np.zeros((3, 2, 3, 3), np.float32)),
                  nn.Parameter("b", np.zeros(3, np.float32)), stride=3)


def test_conv_gradcheck_spec_shape():
    rng = np.random.default_rng(1)
    x = _t(rng.normal(size=(1, 2, 5, 5)))
    w = nn.Parameter("w", rng.normal(size=(3, 2, 3, 3)).astype(np.float32))
    b = nn.Parameter("b", rng.normal(size=3).astype(np.float32))
    target = _const(rng.normal(size=(1, 3, 5, 5)))
    err = nn.grad_check(lambda: nn.mse(nn.conv2d(x, w, b), target), [x, w, b])
    assert err < 1e-3


def test_conv_gradcheck_stride2_seeds():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        h, wdt = int(rng.integers(4, 7)), int(rng.integers(4, 7))
        x = _t(rng.normal(size=(2, 2, h, wdt)))
        w = nn.Parameter("w", rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
        b = nn.Parameter("b", rng.normal(size=2).astype(np.float32))
        oh = -(-h // 2)
        ow = -(-wdt // 2)
        target = _const(rng.normal(size=(2, 2, oh, ow)))
        err = nn.grad_check(lambda: nn.mse(nn.conv2d(x, w, b, stride=2), target),
                            [x, w, b])
        assert err < 1e-3, f"seed {seed}: {err}"


# --- instance_norm ------------------------------------------------------------

def test_instance_norm_constant_channel_gives_shift():
    x = _t(np.full((2, 3, 4, 4), 5.0))
    scale = nn.Parameter("s", np.ones(3, np.float32))
    shift = nn.Parameter("h", np.array([0.5, -1.0, 2.0], np.float32))
    out = nn.instance_norm(x, scale, shift).data
    for c, val in enumerate([0.5, -1.0, 2.0]):
        assert np.allclose(out[:, c], val, atol=1e-4)


def test_instance_norm_two_point_channel():
    x = _t(np.array([[[[-1.0, 1.0], [-1.0, 1.0]]]]))
    out = nn.instance_norm(x, nn.Parameter("s", np.ones(1, np.float32)),
                           nn.Parameter("h", np.zeros(1, np.float32))).data
    assert np.allclose(out, x.data, atol=1e-4)  # already zero-mean unit-var


def test_instance_norm_1x1_affine_only():
    x = _t(np.array([[[[3.0]], [[4.0]]]]))
    scale = nn.Parameter("s", np.array([2.0, 0.5], np.float32))
    shift = nn.Parameter("h", np.array([1.0, 0.0], np.float32))
    out = nn.instance_norm(x, scale, shift).data
    assert np.allclose(out.ravel(), [7.0, 2.0])


def test_instance_norm_gradcheck_seeds():
    for seed in range(10):
        rng = np.random.default_rng(seed + 20)
        x = _t(rng.normal(size=(2, 3, 4, 3)))
        scale = nn.Parameter("s", rng.normal(1, 0.2, size=3).astype(np.float32))
        shift = nn.Parameter("h", rng.normal(size=3).astype(np.float32))
        target = _const(rng.normal(size=(2, 3, 4, 3)))
        err = nn.grad_check(lambda: nn.mse(nn.instance_norm(x, scale, shift), target),
                            [x, scale, shift])
        assert err < 1e-3, f"seed {seed}: {err}"


# --- pointwise and shape ops --------------------------------------------------

def test_silu_values():
    x = _t(np.array([0.0, 1000.0, -1000.0, 1.0]))
    y = nn.silu(x).data
    assert y[0] == 0.0
    assert np.isfinite(y).all()
    assert abs(y[1] - 1000.0) < 1e-3
    assert abs(y[2]) < 1e-3
    assert abs(y[3] - 1.0 / (1 + np.exp(-1.0))) < 1e-6


def test_simple_op_gradchecks():
    for seed in range(10):
        rng = np.random.default_rng(seed + 40)
        x = _t(rng.normal(size=(2, 2, 4, 4)))
        tgt = _const(rng.normal(size=(2, 2, 4, 4)))
        assert nn.grad_check(lambda: nn.mse(nn.silu(x), tgt), [x]) < 1e-3

        a = _t(rng.normal(size=(2, 2, 4, 4)))
        b = _t(rng.normal(size=(2, 2, 4, 4)))
        assert nn.grad_check(lambda: nn.mse(nn.add(a, b), tgt), [a, b]) < 1e-3

        bias = _t(rng.normal(size=(2, 2)))
        assert nn.grad_check(lambda: nn.mse(nn.add(a, bias), tgt), [a, bias]) < 1e-3

        half = _const(rng.normal(size=(2, 1, 4, 4)))
        c = _t(rng.normal(size=(2, 1, 4, 4)))
        tgt8 = _const(rng.normal(size=(2, 2, 4, 4)))
        assert nn.grad_check(
            lambda: nn.mse(nn.concat_channels(c, nn.silu(c)), tgt8), [c]) < 1e-3
        del half

        p = _t(rng.normal(size=(1, 2, 4, 4)))
        tgt_small = _const(rng.normal(size=(1, 2, 2, 2)))
        assert nn.grad_check(lambda: nn.mse(nn.avgpool2(p), tgt_small), [p]) < 1e-3
        tgt_big = _const(rng.normal(size=(1, 2, 8, 8)))
        assert nn.grad_check(
            lambda: nn.mse(nn.upsample_nearest2(p), tgt_big), [p]) < 1e-3


def test_linear_gradcheck_tight():
    rng = np.random.default_rng(77)
    x = _t(rng.normal(size=(3, 5)))
    w = nn.Parameter("w", rng.normal(size=(5, 4)).astype(np.float32))
    b = nn.Parameter("b", rng.normal(size=4).astype(np.float32))
    tgt = _const(rng.normal(size=(3, 4)))
    assert nn.grad_check(lambda: nn.mse(nn.linear(x, w, b), tgt), [x, w, b]) < 1e-4


def test_take_rows_gradcheck():
    rng = np.random.default_rng(88)
    table = nn.Parameter("emb", rng.normal(size=(4, 6)).astype(np.float32))
    idx = np.array([2, 3, 2])
    tgt = _const(rng.normal(size=(3, 6)))
    assert nn.grad_check(lambda: nn.mse(nn.take_rows(table, idx), tgt), [table]) < 1e-3
    with pytest.raises(ParameterError):
        nn.take_rows(table, np.array([4]))


def test_concat_channel_counts():
    a = _const(np.zeros((1, 4, 3, 3)))
    b = _const(np.zeros((1, 4, 3, 3)))
    assert nn.concat_channels(a, b).shape == (1, 8, 3, 3)
    with pytest.raises(ShapeError):
        nn.concat_channels(a, _const(np.zeros((1, 4, 2, 3))))


def test_upsample_pool_identity_on_constant():
    x = _const(np.full((1, 2, 4, 4), 3.5))
    back = nn.upsample_nearest2(nn.avgpool2(x))
    assert np.array_equal(back.data, x.data)
    with pytest.raises(ShapeError):
        nn.avgpool2(_const(np.zeros((1, 1, 5, 4))))


def test_shape_mismatch_errors():
    a = _const(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        nn.add(a, _const(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        nn.mse(a, _const(np.zeros((2, 4))))


# --- sinusoidal embedding -----------------------------------------------------

def test_sinusoidal_t0():
    e = nn.sinusoidal_embedding(0, 8).data
    assert np.allclose(e[0, :4], 0.0)
    assert np.allclose(e[0, 4:], 1.0)


def test_sinusoidal_injective_1000():
    embs = nn.sinusoidal_embedding_array(np.arange(1000), 64)
    assert len(np.unique(embs, axis=0)) == 1000


def test_sinusoidal_odd_dim_rejected():
    with pytest.raises(ParameterError):
        nn.sinusoidal_embedding(5, 3)


# --- harness sensitivity ------------------------------------------------------

def test_gradcheck_flags_wrong_gradient():
    rng = np.random.default_rng(5)
    x = _t(rng.uniform(0.5, 1.5, size=(3, 3)))

    def bad_square(t):
        y = t.data ** 2

        def backward(go):
            t._accumulate(go * 3.0 * t.data)  # deliberately wrong factor

        return nn.Tensor(y, parents=(t,), backward=backward)

    tgt = _const(np.zeros((3, 3)))
    err = nn.grad_check(lambda: nn.mse(bad_square(x), tgt), [x])
    assert err > 1e-1


# --- determinism and finiteness -----------------------------------------------

def test_forward_determinism():
    rng = np.random.default_rng(9)
    x = np.asarray(rng.normal(size=(2, 3, 8, 8)), dtype=np.float32)
    w = nn.Parameter("w", rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
    b = nn.Parameter("b", rng.normal(size=4).astype(np.float32))
    y1 = nn.conv2d(nn.Tensor(x.copy()), w, b).data
    y2 = nn.conv2d(nn.Tensor(x.copy()), w, b).data
    assert np.array_equal(y1, y2)


def test_assert_finite():
    nn.assert_finite(np.ones(3))
    with pytest.raises(ParameterError):
        nn.assert_finite(np.array([1.0, np.nan]))


def test_ops_finite_at_extremes():
    x = _const(np.array([[[[1e3, -1e3], [0.0, 1.0]]]]))
    assert np.isfinite(nn.silu(x).data).all()
    sc = nn.Parameter("s", np.ones(1, np.float32))
    sh = nn.Parameter("h", np.zeros(1, np.float32))
    assert np.isfinite(nn.instance_norm(x, sc, sh).data).all()


# --- optimizer ----------------------------------------------------------------

def test_cosine_lr_landmarks():
    assert cosine_eq(nn.cosine_lr(0, 100, 4e-5), 4e-5)
    assert cosine_eq(nn.cosine_lr(50, 100, 6e-4), 3e-4)
    assert nn.cosine_lr(100, 100, 6e-4) < 1e-18
    with pytest.raises(ParameterError):
        nn.cosine_lr(101, 100, 1e-3)


def cosine_eq(a, b):
    return abs(a - b) < 1e-12


def test_adam_descends_quadratic():
    w = nn.Parameter("w", np.array([1.0], np.float32))
    state = nn.AdamState()
    tgt = _const(np.zeros(1))
    nn.zero_grad([w])
    nn.mse(w, tgt).backward()
    nn.adam_step([w], state, 0.1)
    assert 0.0 < float(w.data[0]) < 1.0
    # keep stepping: converges near zero
    for _ in range(200):
        nn.zero_grad([w])
        nn.mse(w, tgt).backward()
        nn.adam_step([w], state, 0.1)
    assert abs(float(w.data[0])) < 0.05


def test_adam_determinism():
    def run():
        rng = np.random.default_rng(3)
        w = nn.Parameter("w", rng.normal(size=(4, 4)).astype(np.float32))
        state = nn.AdamState()
        tgt = _const(rng.normal(size=(4, 4)))
        for _ in range(10):
            nn.zero_grad([w])
            nn.mse(w, tgt).backward()
            nn.adam_step([w], state, 0.01)
        return w.data.copy()

    assert np.array_equal(run(), run())


# --- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip():
    rng = np.random.default_rng(15)
    params = [
        nn.Parameter("block.w", rng.normal(size=(2, 3, 3, 3)).astype(np.float32)),
        nn.Parameter("block.b", rng.normal(size=2).astype(np.float32)),
        nn.Parameter("head.scale", rng.normal(size=(5,)).astype(np.float32)),
    ]
    blob = nn.checkpoint_to_bytes(params)
    assert blob[:4] == b"CKPT" and blob[4] == 1
    table = nn.checkpoint_from_bytes(blob)
    assert set(table) == {"block.w", "block.b", "head.scale"}
    for p in params:
        assert np.array_equal(table[p.name], p.data)


def test_checkpoint_rejects_bad_payloads():
    p = nn.Parameter("x", np.zeros(3, np.float32))
    blob = nn.checkpoint_to_bytes([p])
    with pytest.raises(FormatError):
        nn.checkpoint_from_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        nn.checkpoint_from_bytes(blob[:4] + bytes([7]) + blob[5:])
    with pytest.raises(FormatError):
        nn.checkpoint_from_bytes(blob[:-4])


def test_checkpoint_file_round_trip(tmp_path):
    rng = np.random.default_rng(25)
    p = nn.Parameter("w", rng.normal(size=(3, 2)).astype(np.float32))
    path = tmp_path / "net.ckpt"
    nn.save_checkpoint([p], path)
    fresh = nn.Parameter("w", np.zeros((3, 2), np.float32))
    nn.load_checkpoint([fresh], path)
    assert np.array_equal(fresh.data, p.data)
    wrong = nn.Parameter("w", np.zeros((2, 2), np.float32))
    with pytest.raises(ShapeError):
        nn.load_checkpoint([wrong], path)
    missing = nn.Parameter("v", np.zeros((3, 2), np.float32))
    with pytest.raises(FormatError):
        nn.load_checkpoint([missing], path)
