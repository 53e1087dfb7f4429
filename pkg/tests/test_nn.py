import numpy as np
import pytest

from binpick import nn
from binpick.errors import DivergenceError, ParamFileError
from binpick.nn import (NetConfig, Network, TrainConfig, predict, scores,
                        train)


# -- primitive ops ----------------------------------------------------------

def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    y = nn.softmax(rng.normal(size=(7, 5)) * 10)
    assert np.allclose(y.sum(axis=1), 1.0)
    assert (y > 0).all()


def test_softmax_shift_invariance():
    a = np.array([1.0, 2.0, 3.0])
    assert np.allclose(nn.softmax(a), nn.softmax(a + 100.0))


def test_cross_entropy_oracle():
    probs = np.array([[0.25, 0.75], [0.5, 0.5]])
    labels = np.array([1, 0])
    expect = -(np.log(0.75) + np.log(0.5)) / 2
    assert np.isclose(nn.cross_entropy(probs, labels), expect)


def test_im2col_col2im_adjoint():
    # <im2col(x), y> == <x, col2im(y)> for random x, y (adjoint identity)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 9, 7))
    cols = nn.im2col(x, 3, 3, 2)
    y = rng.normal(size=cols.shape)
    lhs = float((cols * y).sum())
    rhs = float((x * nn.col2im(y, x.shape, 3, 3, 2)).sum())
    assert np.isclose(lhs, rhs, rtol=1e-12)


def test_conv_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 5, 5))
    w = np.zeros((1, 1, 1, 1))
    w[0, 0, 0, 0] = 1.0
    out, _ = nn.conv2d_forward(x, w, np.zeros(1), stride=1)
    assert np.allclose(out, x)


def test_conv_known_sum_kernel():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 2, 2))
    out, _ = nn.conv2d_forward(x, w, np.array([1.0]), stride=2)
    # 2x2 block sums plus bias
    assert np.allclose(out[0, 0], [[0 + 1 + 4 + 5 + 1, 2 + 3 + 6 + 7 + 1],
                                   [8 + 9 + 12 + 13 + 1, 10 + 11 + 14 + 15 + 1]])


def test_conv_rejects_small_input():
    with pytest.raises(ValueError):
        nn.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)),
                          np.zeros(1))


def test_maxpool_oracle_and_padding():
    x = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9.0]]).reshape(1, 1, 3, 3)
    out, _ = nn.maxpool2_forward(x)
    # odd dims replication-padded: windows {1,2,4,5},{3,3,6,6},{7,8,7,8},{9,9,9,9}
    assert np.allclose(out[0, 0], [[5, 6], [8, 9]])


def test_maxpool_backward_routes_to_argmax():
    x = np.array([[1, 2], [4, 3.0]]).reshape(1, 1, 2, 2)
    out, cache = nn.maxpool2_forward(x)
    dx = nn.maxpool2_backward(np.ones_like(out), cache)
    assert np.allclose(dx[0, 0], [[0, 0], [1, 0]])


def test_maxpool_tie_break_first_index():
    x = np.full((1, 1, 2, 2), 3.0)
    out, cache = nn.maxpool2_forward(x)
    dx = nn.maxpool2_backward(np.ones_like(out), cache)
    # all four tie; gradient goes to the first window element only
    assert np.allclose(dx[0, 0], [[1, 0], [0, 0]])


def test_dropout_inference_is_identity():
    x = np.ones((4, 8))
    out, mask = nn.dropout_forward(x, 0.5, np.random.default_rng(0), train=False)
    assert mask is None and np.array_equal(out, x)


def test_dropout_expectation_preserved():
    # inverted dropout: E[mask * x] == x; mean relative error over many masks
    rng = np.random.default_rng(3)
    x = np.ones((1, 64))
    total = np.zeros_like(x)
    n = 10000
    for _ in range(n):
        out, _ = nn.dropout_forward(x, 0.5, rng, train=True)
        total += out
    # per-unit estimator std is 1/sqrt(n) = 1%; mean |err| ~ 0.8%
    err = np.abs(total / n - 1.0)
    assert err.mean() < 0.012
    assert err.max() < 0.05


def test_softmax_cross_entropy_gradient_formula():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(5, 2))
    labels = rng.integers(0, 2, size=5)
    loss, dlog, probs = nn.softmax_cross_entropy(logits, labels)
    expect = probs.copy()
    expect[np.arange(5), labels] -= 1.0
    assert np.allclose(dlog, expect / 5)


# -- gradient checking machinery (shared with the acceptance suite) ---------

GRAD_TOL = 1e-4


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


# Frozen non-degenerate instance seeds.  A tiny randomly initialized net can
# come up with an entire stage dead (every ReLU input negative, logits exactly
# zero); finite differences then probe the kink at zero and disagree with the
# subgradient convention.  Those draws are rejected by the degeneracy guard
# below, and the seeds here were verified to produce live networks.
GRAD_SEEDS = (0, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 14, 15)


def check_network_gradients(seed, config=None):
    """Max relative error between backprop and central differences for a
    small float64 network on random inputs."""
    cfg = config or NetConfig(crop_size=20, filters=(5, 3, 3, 3),
                              strides=(1, 1, 1, 1),
                              pools=(True, False, False, False),
                              channels=(2, 3, 3, 3), fc_sizes=(8, 6, 2),
                              dropout=0.0, seed=seed, dtype="float64")
    net = Network(cfg)
    rng = np.random.default_rng(seed + 1000)
    depth = rng.random((2, cfg.crop_size, cfg.crop_size))
    grip = rng.random((2, cfg.crop_size, cfg.crop_size))
    labels = rng.integers(0, 2, size=2)
    probs, cache = net.forward(depth, grip, want_cache=True)
    if np.allclose(cache["logits"], 0.0):
        raise RuntimeError(f"degenerate (dead) network instance for seed {seed}")
    _, grads, _ = net.loss_and_grads(depth, grip, labels, train=False)

    worst = 0.0
    for name in net.param_names:
        p = net.params[name]

        def loss_fn():
            probs = net.forward(depth, grip)
            return nn.cross_entropy(probs, labels)

        num = central_diff(loss_fn, p)
        worst = max(worst, rel_err(grads[name], num))
    return worst


@pytest.mark.parametrize("seed", GRAD_SEEDS[:3])
def test_network_gradients_spot_check(seed):
    assert check_network_gradients(seed) <= GRAD_TOL


def test_layer_gradients_conv_dense():
    # per-op checks through scalar loss sum(out^2)/2 using the op backward
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, cache = nn.conv2d_forward(x, w, b, stride=1)
    dx, dw, db = nn.conv2d_backward(out.copy(), cache)

    def loss_conv():
        o, _ = nn.conv2d_forward(x, w, b, stride=1)
        return 0.5 * float((o * o).sum())

    assert rel_err(dw, central_diff(loss_conv, w)) <= GRAD_TOL
    assert rel_err(db, central_diff(loss_conv, b)) <= GRAD_TOL
    assert rel_err(dx, central_diff(loss_conv, x)) <= GRAD_TOL

    xd = rng.normal(size=(4, 5))
    wd = rng.normal(size=(5, 3))
    bd = rng.normal(size=3)
    out, cache = nn.dense_forward(xd, wd, bd)
    dx, dw, db = nn.dense_backward(out.copy(), cache)

    def loss_dense():
        o, _ = nn.dense_forward(xd, wd, bd)
        return 0.5 * float((o * o).sum())

    assert rel_err(dw, central_diff(loss_dense, wd)) <= GRAD_TOL
    assert rel_err(db, central_diff(loss_dense, bd)) <= GRAD_TOL
    assert rel_err(dx, central_diff(loss_dense, xd)) <= GRAD_TOL


# -- network plumbing -------------------------------------------------------

def test_default_architecture_shapes():
    net = Network(NetConfig())
    probs = net.forward(np.zeros((64, 64)), np.zeros((64, 64)))
    assert probs.shape == (2,)
    assert np.isclose(probs.sum(), 1.0)
    probs = net.forward(np.zeros((3, 64, 64)), np.zeros((3, 64, 64)))
    assert probs.shape == (3, 2)


def test_full_scale_architecture_builds():
    net = Network(NetConfig.full_scale())
    n_params = sum(v.size for v in net.params.values())
    assert n_params > 1_000_000
    probs = net.forward(np.zeros((250, 250)), np.zeros((250, 250)))
    assert probs.shape == (2,)


def test_network_requires_two_outputs():
    with pytest.raises(ValueError):
        Network(NetConfig(fc_sizes=(16, 3)))


def test_collapsed_stage_raises():
    with pytest.raises(ValueError):
        Network(NetConfig(crop_size=8, filters=(8, 4, 3, 3)))


def test_fingerprint_sensitive_to_architecture():
    a = NetConfig().fingerprint()
    b = NetConfig(channels=(8, 16, 16, 32)).fingerprint()
    c = NetConfig(crop_size=48).fingerprint()
    assert a != b and a != c


def test_params_roundtrip_bitwise(tmp_path):
    cfg = NetConfig(crop_size=20, filters=(5, 3, 3, 3), strides=(1, 1, 1, 1),
                    pools=(True, False, False, False), channels=(2, 2, 2, 2),
                    fc_sizes=(8, 8, 2), seed=5)
    net = Network(cfg)
    path = tmp_path / "p.bin"
    net.save_params(path)
    back = Network.load_params(path)
    assert back.param_names == net.param_names
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    # identical outputs
    rng = np.random.default_rng(0)
    d = rng.random((3, 20, 20), dtype=np.float32)
    g = rng.random((3, 20, 20), dtype=np.float32)
    assert np.array_equal(net.forward(d, g), back.forward(d, g))


def test_params_file_corruption_detected(tmp_path):
    net = Network(NetConfig(crop_size=20, filters=(5, 3, 3, 3),
                            strides=(1, 1, 1, 1), pools=(True, False, False, False),
                            channels=(2, 2, 2, 2), fc_sizes=(8, 8, 2)))
    path = tmp_path / "p.bin"
    net.save_params(path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    (tmp_path / "bad_magic.bin").write_bytes(blob)
    with pytest.raises(ParamFileError, match="magic"):
        Network.load_params(tmp_path / "bad_magic.bin")
    (tmp_path / "trunc.bin").write_bytes(path.read_bytes()[:100])
    with pytest.raises(ParamFileError):
        Network.load_params(tmp_path / "trunc.bin")


def test_params_architecture_mismatch(tmp_path):
    net = Network(NetConfig(crop_size=20, filters=(5, 3, 3, 3),
                            strides=(1, 1, 1, 1), pools=(True, False, False, False),
                            channels=(2, 2, 2, 2), fc_sizes=(8, 8, 2)))
    path = tmp_path / "p.bin"
    net.save_params(path)
    other = NetConfig(crop_size=20, filters=(5, 3, 3, 3), strides=(1, 1, 1, 1),
                      pools=(True, False, False, False), channels=(2, 2, 2, 4),
                      fc_sizes=(8, 8, 2))
    with pytest.raises(ParamFileError, match="fingerprint"):
        Network.load_params(path, config=other)


# -- training ---------------------------------------------------------------

def _toy_separable(n=40, side=20, seed=0):
    """Trivially separable set: class 0 has a bright depth blob, class 1 none."""
    rng = np.random.default_rng(seed)
    depth = rng.random((n, side, side), dtype=np.float32) * 0.1
    grip = rng.random((n, side, side), dtype=np.float32) * 0.1
    labels = rng.integers(0, 2, size=n)
    depth[labels == 0, 5:15, 5:15] += 1.0
    return depth, grip, labels


def _small_cfg(seed=0):
    return NetConfig(crop_size=20, filters=(5, 3, 3, 3), strides=(1, 1, 1, 1),
                     pools=(True, False, False, False), channels=(4, 8, 8, 8),
                     fc_sizes=(32, 16, 2), dropout=0.0, seed=seed)


def test_toy_training_reaches_full_accuracy():
    depth, grip, labels = _toy_separable()
    net = Network(_small_cfg())
    train(net, (depth, grip, labels),
          TrainConfig(learning_rate=3e-3, epochs=50, batch_size=8, seed=0))
    acc = (predict(net, depth, grip) == labels).mean()
    assert acc == 1.0


def test_training_deterministic():
    depth, grip, labels = _toy_separable()

    def run():
        net = Network(_small_cfg())
        h = train(net, (depth, grip, labels),
                  TrainConfig(learning_rate=1e-3, epochs=3, batch_size=8, seed=1))
        return h["loss"], {k: v.copy() for k, v in net.params.items()}

    la, pa = run()
    lb, pb = run()
    assert la == lb
    for k in pa:
        assert np.array_equal(pa[k], pb[k])


def test_training_divergence_detected():
    depth, grip, labels = _toy_separable()
    net = Network(_small_cfg())
    with pytest.raises(DivergenceError):
        train(net, (depth, grip, labels),
              TrainConfig(learning_rate=1e6, epochs=5, batch_size=8))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()


def test_scores_are_success_probabilities():
    depth, grip, labels = _toy_separable(n=8)
    net = Network(_small_cfg())
    y0 = scores(net, depth, grip)
    probs = net.forward(depth, grip)
    assert np.allclose(y0, probs[:, 0])
