import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehpi_action.ehpi import NO_AUGMENT
from ehpi_action.errors import BadMagic, BatchTooSmall, EmptyClass, EmptyHistory, ShapeMismatch, TruncatedFile
from ehpi_action.micronn import (
    EhpiDataset,
    EhpiNet,
    NetConfig,
    TrainConfig,
    balanced_sampler,
    load_checkpoint,
    lr_at_epoch,
    parameter_count,
    predict_smoothed,
    save_checkpoint,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    train,
    xavier_init,
)
from ehpi_action.micronn import ops
from ehpi_action.micronn.checkpoint import MAGIC, read_tensors

import gradcheck

TINY = NetConfig(3, (4, 4, 6, 6, 8, 8))


# -- gradient checks ------------------------------------------------------------------

@pytest.mark.parametrize("op", sorted(gradcheck.CHECKS))
@pytest.mark.parametrize("seed", range(5))
def test_finite_difference(op, seed):
    assert gradcheck.CHECKS[op](np.random.default_rng(seed)) < 1e-4


def test_whole_network_gradient():
    assert gradcheck.check_network(np.random.default_rng(0)) < 1e-4


# -- layer examples ---------------------------------------------------------------------

def test_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 5, 4))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y, _ = ops.conv2d_forward(x, w, np.zeros(3))
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_conv_preserves_spatial_size(rng):
    y, _ = ops.conv2d_forward(rng.standard_normal((1, 3, 32, 15)), rng.standard_normal((64, 3, 3, 3)), np.zeros(64))
    assert y.shape == (1, 64, 32, 15)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 4, 3))
    w = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal(2)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 2, 4, 3))
    for f in range(2):
        for i in range(4):
            for j in range(3):
                ref[0, f, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[f]) + b[f]
    np.testing.assert_allclose(ops.conv2d_forward(x, w, b)[0], ref, atol=1e-12)


def test_conv_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        ops.conv2d_forward(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 2, 3, 3)), np.zeros(2))


def _bn_state(c):
    return {"running_mean": np.zeros(c), "running_var": np.ones(c)}


def test_batchnorm_train_statistics(rng):
    x = rng.standard_normal((8, 3, 4, 5)) * 3 + 2
    y, _ = ops.batchnorm_forward(x, np.ones(3), np.zeros(3), _bn_state(3), "train")
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-4)  # eps shrinks variance by ~1e-5


def test_batchnorm_standard_input_is_identity(rng):
    x = rng.standard_normal((64, 2, 8, 8))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    y, _ = ops.batchnorm_forward(x, np.ones(2), np.zeros(2), _bn_state(2), "train")
    np.testing.assert_allclose(y, x, atol=1e-4)


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + 5
    state = _bn_state(2)
    ops.batchnorm_forward(x, np.ones(2), np.zeros(2), state, "train")
    m = x.shape[0] * 9
    np.testing.assert_allclose(state["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(state["running_var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))
    y, _ = ops.batchnorm_forward(x, np.ones(2), np.zeros(2), state, "eval")
    expect = (x - state["running_mean"][None, :, None, None]) / np.sqrt(state["running_var"][None, :, None, None] + 1e-5)
    np.testing.assert_allclose(y, expect)


def test_batchnorm_batch_too_small(rng):
    with pytest.raises(BatchTooSmall):
        ops.batchnorm_forward(rng.standard_normal((1, 2, 3, 3)), np.ones(2), np.zeros(2), _bn_state(2), "train")


def test_maxpool_floor_and_ties():
    x = np.ones((1, 1, 5, 3))
    y, cache = ops.maxpool2x2_forward(x)
    assert y.shape == (1, 1, 2, 1) and np.all(y == 1)
    dx = ops.maxpool2x2_backward(np.ones_like(y), cache)
    expected = np.zeros((1, 1, 5, 3))
    expected[0, 0, 0, 0] = expected[0, 0, 2, 0] = 1
    np.testing.assert_array_equal(dx, expected)


def test_network_spatial_trace(rng):
    net = EhpiNet.create(TINY, rng)
    _, (caches, pooled_shape, _) = net.forward(rng.standard_normal((2, 3, 32, 15)).astype(np.float32), train=True)
    assert pooled_shape == (2, 8, 3, 8)
    assert [c[3] is not None for c in caches] == [False, True, False, True, False, False]
    assert caches[2][0][2][1:3] == (16, 7)  # input of third conv


def test_softmax_ce_examples():
    loss, _ = softmax_cross_entropy(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(math.log(5))
    loss, _ = softmax_cross_entropy(np.array([[1000.0, 0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    z = np.random.default_rng(seed).standard_normal((7, 4)) * 50
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-9)


# -- optimizer, init, sampler -----------------------------------------------------------

def test_sgd_plain_step():
    p = {"w.weight": np.array([1.0, 2.0])}
    sgd_step(p, {"w.weight": np.array([0.5, -1.0])}, {}, lr=0.1, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p["w.weight"], [0.95, 2.1])


def test_sgd_zero_grad_no_change():
    p = {"w.weight": np.array([1.0, 2.0])}
    sgd_step(p, {"w.weight": np.zeros(2)}, {}, lr=0.1, momentum=0.9, weight_decay=0.0)
    np.testing.assert_array_equal(p["w.weight"], [1.0, 2.0])


def test_sgd_two_steps_by_hand():
    lr, mu, wd = 0.05, 0.9, 5e-4
    p = {"a.weight": np.array([2.0]), "a.bias": np.array([2.0])}
    v = {}
    mask = {"a.weight": True, "a.bias": False}
    g1, g2 = 0.3, -0.7
    for g in (g1, g2):
        sgd_step(p, {"a.weight": np.array([g]), "a.bias": np.array([g])}, v, lr, mu, wd, mask)
    # weight: v1 = g1 + wd*2 ; p1 = 2 - lr*v1 ; v2 = mu*v1 + g2 + wd*p1 ; p2 = p1 - lr*v2
    v1 = g1 + wd * 2.0
    p1 = 2.0 - lr * v1
    v2 = mu * v1 + g2 + wd * p1
    assert p["a.weight"][0] == p1 - lr * v2
    b1 = 2.0 - lr * g1
    assert p["a.bias"][0] == b1 - lr * (mu * g1 + g2)


def test_decay_mask_only_weights(rng):
    mask = EhpiNet.create(TINY, rng).decay_mask()
    assert mask["conv0.weight"] and mask["fc.weight"]
    assert not mask["conv0.bias"] and not mask["bn0.gamma"] and not mask["bn0.beta"]


def test_xavier_bounds_variance_determinism():
    shape = (64, 32, 3, 3)
    fan_in, fan_out = 32 * 9, 64 * 9
    w = xavier_init(shape, np.random.default_rng(0))
    bound = math.sqrt(6 / (fan_in + fan_out))
    assert w.size >= 10_000 and np.abs(w).max() <= bound
    assert abs(w.var() / (2 / (fan_in + fan_out)) - 1) < 0.1
    np.testing.assert_array_equal(w, xavier_init(shape, np.random.default_rng(0)))


def test_sampler_balances_classes(rng):
    labels = np.array([0] * 10 + [1] * 5 + [2] * 2)
    idx = balanced_sampler(labels, rng)
    assert len(idx) == 30
    assert np.bincount(labels[idx]).tolist() == [10, 10, 10]
    assert sorted(idx[labels[idx] == 0].tolist()) == list(range(10))


def test_sampler_already_balanced(rng):
    labels = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    idx = balanced_sampler(labels, rng)
    assert sorted(idx.tolist()) == list(range(8))


def test_sampler_empty_class(rng):
    with pytest.raises(EmptyClass):
        balanced_sampler(np.array([0, 0, 2]), rng, num_classes=3)


@pytest.mark.parametrize("epoch, lr", [(0, 0.05), (49, 0.05), (50, 0.005), (100, 0.0005)])
def test_lr_schedule(epoch, lr):
    assert lr_at_epoch(epoch, 0.05, 50, 0.1) == pytest.approx(lr, rel=1e-12)
    assert TrainConfig().lr(epoch) == pytest.approx(lr, rel=1e-12)


# -- smoothing --------------------------------------------------------------------------

def test_smoothing_examples():
    assert predict_smoothed([[0.2, 0.7, 0.1]]) == 1
    assert predict_smoothed([[0.6, 0.4]] * 20) == 0
    assert predict_smoothed([[0.9, 0.1], [0.2, 0.8]] * 10) == 0
    assert predict_smoothed([[0.5, 0.5]]) == 0
    with pytest.raises(EmptyHistory):
        predict_smoothed([])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_smoothing_scale_invariant(seed, k):
    hist = np.random.default_rng(seed).dirichlet(np.ones(4), size=20)
    assert predict_smoothed(hist * k) == predict_smoothed(hist)


# -- network ------------------------------------------------------------------------------

def test_parameter_count_closed_form(rng):
    for cfg in (NetConfig(), TINY, NetConfig(5, (8, 16, 16, 32, 32, 64))):
        net = EhpiNet.create(cfg, rng)
        assert sum(p.size for p in net.params.values()) == parameter_count(cfg)
    c = (64, 64, 128, 128, 256, 256)
    conv = sum(ci * co * 9 + co + 2 * co for ci, co in zip((3,) + c[:-1], c))
    assert parameter_count(NetConfig()) == conv + 256 * 3 + 3


def test_eval_forward_is_batch_consistent(rng):
    net = EhpiNet.create(TINY, rng)
    for k in net.buffers:
        net.buffers[k] = net.buffers[k] + rng.uniform(0.1, 0.5, net.buffers[k].shape).astype(np.float32)
    x = rng.random((9, 3, 32, 15)).astype(np.float32)
    batch = net.predict_proba(x)
    for i in range(len(x)):
        np.testing.assert_allclose(net.predict_proba(x[i:i + 1])[0], batch[i], atol=1e-6)


def test_net_config_validation():
    with pytest.raises(ValueError):
        NetConfig(channels=(8, 8))
    with pytest.raises(ValueError):
        NetConfig(num_classes=1)


def _separable(rng, n_per=40):
    """Three classes that differ only in the mean of the red channel."""
    values = np.zeros((3 * n_per, 32, 15, 3))
    labels = np.repeat(np.arange(3), n_per)
    values[..., 0] = (labels[:, None, None] * 0.4 + 0.1) + rng.normal(0, 0.03, (3 * n_per, 32, 15))
    values[..., 1] = rng.random((3 * n_per, 32, 15))
    return EhpiDataset(values, np.ones((3 * n_per, 32, 15), bool), labels, 3)


def test_training_loss_decreases_on_separable_data(rng):
    data = _separable(rng)
    cfg = TrainConfig(epochs=5, batch_size=16, lr0=0.01, augment=NO_AUGMENT)
    result = train(data, TINY, cfg, seed=3)
    losses = [h.train_loss for h in result.history]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_is_deterministic(rng):
    data = _separable(rng, 12)
    cfg = TrainConfig(epochs=2, batch_size=8)
    a = train(data, TINY, cfg, seed=5, val=data)
    b = train(data, TINY, cfg, seed=5, val=data)
    assert [h.train_loss for h in a.history] == [h.train_loss for h in b.history]
    for k in a.net.params:
        assert np.array_equal(a.net.params[k], b.net.params[k])


def test_training_rejects_single_class(rng):
    data = _separable(rng, 4)
    data.labels[:] = 0
    with pytest.raises(ValueError):
        train(data, TINY, TrainConfig(epochs=1), seed=0)


# -- checkpoints ----------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    net = EhpiNet.create(TINY, rng)
    net.buffers["bn2.running_var"][:] = 3.5
    save_checkpoint(net, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(MAGIC)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.cfg == TINY
    for k, v in net.state_dict().items():
        assert np.array_equal(loaded.state_dict()[k], v)
    assert set(read_tensors(tmp_path / "m.ckpt")) >= {"config.num_classes", "config.channels", "bn0.running_mean"}


def test_checkpoint_errors(tmp_path, rng):
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE")
    with pytest.raises(BadMagic):
        load_checkpoint(tmp_path / "bad.ckpt")
    save_checkpoint(EhpiNet.create(TINY, rng), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[:-7])
    with pytest.raises(TruncatedFile):
        load_checkpoint(tmp_path / "cut.ckpt")
