import numpy as np
import pytest

from conftest import central_diff, rel_err, sample_indices
from noisekws.errors import ConfigInvalid, DegenerateBatch, ShapeMismatch
from noisekws.nn import (
    ArchSpec,
    ConvBlockParams,
    ConvBlockSpec,
    arch_from_channels,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    default_arch,
    fc_backward,
    fc_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    init_params,
    model_features,
    model_forward,
    model_loss_grads,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)


def bn_state(c, dtype=np.float64):
    return ConvBlockParams(None, None, None, None,
                           np.zeros(c, dtype=dtype), np.ones(c, dtype=dtype))


# ---------------------------------------------------------------------------
# conv


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 5))
    kernels = np.zeros((3, 3, 1, 1))
    for c in range(3):
        kernels[c, c, 0, 0] = 1.0
    out = conv2d_forward(x, kernels, np.zeros(3))
    assert np.allclose(out, x)


def test_conv_zero_kernels_give_bias():
    x = np.random.default_rng(1).normal(size=(1, 2, 4, 4))
    bias = np.array([0.5, -1.25])
    out = conv2d_forward(x, np.zeros((2, 2, 3, 3)), bias)
    assert np.allclose(out[0, 0], 0.5)
    assert np.allclose(out[0, 1], -1.25)


def test_conv_same_padding_keeps_shape():
    x = np.zeros((1, 1, 101, 64))
    out = conv2d_forward(x, np.zeros((4, 1, 3, 3)), np.zeros(4))
    assert out.shape == (1, 4, 101, 64)


def test_conv_matches_six_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2, 5, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d_forward(x, k, b)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oracle = np.zeros_like(out)
    for n in range(2):
        for co in range(3):
            for y in range(5):
                for xx in range(4):
                    acc = b[co]
                    for ci in range(2):
                        for dy in range(3):
                            for dx in range(3):
                                acc += xp[n, ci, y + dy, xx + dx] * k[co, ci, dy, dx]
                    oracle[n, co, y, xx] = acc
    assert np.abs(out - oracle).max() < 1e-5


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 4, 4))
    k = rng.normal(size=(2, 2, 3, 3))
    gx, gk, gb = conv2d_backward(x, k, np.zeros((1, 2, 4, 4)))
    assert not gx.any() and not gk.any() and not gb.any()


def test_conv_grad_bias_is_grad_sum():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 2, 4, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    go = rng.normal(size=(2, 3, 4, 4))
    _, _, gb = conv2d_backward(x, k, go)
    assert np.allclose(gb, go.sum(axis=(0, 2, 3)))


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 2, 5, 5))
    k = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=2)
    go = rng.normal(size=(1, 2, 5, 5))
    gx, gk, gb = conv2d_backward(x, k, go)

    def total():
        return float((conv2d_forward(x, k, b) * go).sum())

    for tensor, grad in ((x, gx), (k, gk), (b, gb)):
        for idx in sample_indices(rng, tensor.shape, 6):
            fd = central_diff(total, tensor, idx, 1e-3)
            assert rel_err(grad[idx], fd) < 1e-4


def test_conv_stride_two_shapes_and_gradient():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 1, 7, 6))
    k = rng.normal(size=(2, 1, 3, 3))
    b = np.zeros(2)
    out = conv2d_forward(x, k, b, stride=2)
    assert out.shape == (1, 2, 4, 3)
    go = rng.normal(size=out.shape)
    gx, gk, gb = conv2d_backward(x, k, go, stride=2)

    def total():
        return float((conv2d_forward(x, k, b, stride=2) * go).sum())

    for idx in sample_indices(rng, x.shape, 6):
        assert rel_err(gx[idx], central_diff(total, x, idx, 1e-3)) < 1e-4


def test_conv_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)), np.zeros(2))


# ---------------------------------------------------------------------------
# batchnorm


def test_bn_train_normalizes_batch():
    rng = np.random.default_rng(7)
    x = rng.normal(3.0, 2.0, size=(8, 3, 4, 4))
    out = batchnorm_forward(x, np.ones(3), np.zeros(3), bn_state(3), "train")
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-4
    assert np.abs(out.var(axis=(0, 2, 3)) - 1.0).max() < 1e-4


def test_bn_infer_identity_configuration():
    rng = np.random.default_rng(8)
    x = rng.uniform(-0.1, 0.1, size=(2, 3, 4, 4))
    out = batchnorm_forward(x, np.ones(3), np.zeros(3), bn_state(3), "infer")
    assert np.abs(out - x).max() < 1e-6


def test_bn_running_stats_update_rule():
    rng = np.random.default_rng(9)
    x = rng.normal(1.5, 0.7, size=(4, 2, 3, 3))
    state = bn_state(2)
    batchnorm_forward(x, np.ones(2), np.zeros(2), state, "train", momentum=0.1)
    assert np.allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(state.running_var, 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3)))


def test_bn_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        batchnorm_forward(np.zeros((1, 2, 1, 1)), np.ones(2), np.zeros(2),
                          bn_state(2), "train")


def test_bn_backward_finite_differences():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 2, 3, 4))
    gamma = rng.uniform(0.5, 1.5, 2)
    beta = rng.normal(size=2)
    go = rng.normal(size=x.shape)
    gx, ggamma, gbeta = batchnorm_backward(x, gamma, go)
    assert np.allclose(gbeta, go.sum(axis=(0, 2, 3)))

    def total():
        return float((batchnorm_forward(x, gamma, beta, bn_state(2), "train") * go).sum())

    for tensor, grad in ((x, gx), (gamma, ggamma)):
        for idx in sample_indices(rng, tensor.shape, 6):
            assert rel_err(grad[idx], central_diff(total, tensor, idx, 1e-5)) < 1e-4


def test_bn_backward_constant_direction_is_annihilated():
    # normalization removes the per-channel mean, so the projection of
    # grad_input onto the constant vector is ~0
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3, 2, 2))
    go = rng.normal(size=x.shape)
    gx, _, _ = batchnorm_backward(x, np.ones(3), go)
    assert np.abs(gx.sum(axis=(0, 2, 3))).max() < 1e-10
    # the same holds at a uniform input, where the formula is most fragile
    xu = np.full((2, 2, 2, 2), 0.7)
    gxu, _, _ = batchnorm_backward(xu, np.ones(2), rng.normal(size=xu.shape))
    assert np.abs(gxu.sum(axis=(0, 2, 3))).max() < 1e-8


# ---------------------------------------------------------------------------
# relu / pooling / fc / softmax


def test_relu_basics():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(relu_forward(x), [0.0, 0.0, 3.0])
    g = relu_backward(x, np.ones(3))
    assert np.array_equal(g, [0.0, 0.0, 1.0])  # subgradient 0 at x == 0


def test_relu_finite_differences_away_from_zero():
    rng = np.random.default_rng(12)
    x = rng.normal(size=32)
    x = np.where(np.abs(x) < 0.2, 0.5, x)  # keep clear of the kink
    go = rng.normal(size=32)
    g = relu_backward(x, go)
    for i in range(0, 32, 5):
        fd = central_diff(lambda: float((relu_forward(x) * go).sum()), x, (i,), 1e-3)
        assert rel_err(g[i], fd) < 1e-4


def test_gap_constant_image():
    x = np.full((2, 3, 4, 5), 1.75)
    assert np.allclose(global_avg_pool_forward(x), 1.75)


def test_gap_backward_distributes_uniformly():
    go = np.array([[6.0, 12.0]])
    gx = global_avg_pool_backward((1, 2, 2, 3), go)
    assert np.allclose(gx[0, 0], 1.0)
    assert np.allclose(gx[0, 1], 2.0)


def test_gap_finite_differences():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 2, 3, 3))
    go = rng.normal(size=(2, 2))
    gx = global_avg_pool_backward(x.shape, go)
    for idx in sample_indices(rng, x.shape, 6):
        fd = central_diff(lambda: float((global_avg_pool_forward(x) * go).sum()),
                          x, idx, 1e-3)
        assert rel_err(gx[idx], fd) < 1e-4


def test_fc_identity_weight():
    f = np.random.default_rng(14).normal(size=(3, 12))
    out = fc_forward(f, np.eye(12), np.zeros(12))
    assert np.allclose(out, f)


def test_fc_finite_differences():
    rng = np.random.default_rng(15)
    f = rng.normal(size=(3, 7))
    w = rng.normal(size=(12, 7))
    b = rng.normal(size=12)
    go = rng.normal(size=(3, 12))
    gf, gw, gb = fc_backward(f, w, go)
    assert np.allclose(gb, go.sum(axis=0))

    def total():
        return float((fc_forward(f, w, b) * go).sum())

    for tensor, grad in ((f, gf), (w, gw)):
        for idx in sample_indices(rng, tensor.shape, 6):
            assert rel_err(grad[idx], central_diff(total, tensor, idx, 1e-3)) < 1e-4


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(16)
    p = softmax(rng.normal(size=(5, 12)) * 10)
    assert np.all(p > 0) and np.all(p < 1)
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-6


def test_softmax_ce_uniform_logits():
    loss, grad = softmax_cross_entropy(np.zeros((4, 12)), np.array([0, 3, 7, 11]))
    assert loss == pytest.approx(np.log(12.0), abs=1e-12)


def test_softmax_ce_finite_differences():
    rng = np.random.default_rng(17)
    logits = rng.normal(size=(3, 12))
    labels = np.array([2, 5, 9])
    _, grad = softmax_cross_entropy(logits, labels)
    for idx in sample_indices(rng, logits.shape, 10):
        fd = central_diff(lambda: softmax_cross_entropy(logits, labels)[0],
                          logits, idx, 1e-5)
        assert rel_err(grad[idx], fd) < 1e-4


def test_fc_grad_is_outer_product_for_single_example():
    rng = np.random.default_rng(18)
    f = rng.normal(size=(1, 6))
    w = rng.normal(size=(12, 6))
    b = rng.normal(size=12)
    logits = fc_forward(f, w, b)
    label = np.array([4])
    _, grad_logits = softmax_cross_entropy(logits, label)
    _, gw, _ = fc_backward(f, w, grad_logits)
    p = softmax(logits)[0]
    p[4] -= 1.0
    assert np.abs(gw - np.outer(p, f[0])).max() < 1e-12


# ---------------------------------------------------------------------------
# arch / whole model


def test_arch_requires_five_blocks_and_twelve_classes():
    with pytest.raises(ConfigInvalid):
        ArchSpec(tuple(ConvBlockSpec(4) for _ in range(4)))
    with pytest.raises(ConfigInvalid):
        ArchSpec(tuple(ConvBlockSpec(4) for _ in range(5)), n_classes=10)
    arch = default_arch()
    assert len(arch.conv_blocks) == 5
    assert arch.n_classes == 12
    assert arch.feature_dim == 64


def test_init_params_shapes_and_determinism():
    arch = default_arch()
    a = init_params(arch, seed=3)
    b = init_params(arch, seed=3)
    c = init_params(arch, seed=4)
    for (name, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert np.array_equal(ta, tb), name
    assert any(not np.array_equal(ta, tc)
               for (_, ta), (_, tc) in zip(a.named_tensors(), c.named_tensors()))
    assert a.fc_weight.shape == (12, 64)
    assert a.blocks[0].weight.shape == (16, 1, 3, 3)
    assert all(t.dtype == np.float32 for _, t in a.named_tensors())


def test_model_forward_output_shape_and_determinism():
    arch = arch_from_channels((2, 2, 3, 3, 4))
    params = init_params(arch, 0)
    x = np.random.default_rng(19).normal(size=(3, 1, 12, 10)).astype(np.float32)
    a = model_forward(params, arch, x, mode="infer")
    b = model_forward(params, arch, x, mode="infer")
    assert a.shape == (3, 12)
    assert np.array_equal(a, b)


def test_model_features_match_identity_fc_forward():
    arch = arch_from_channels((2, 2, 3, 3, 4))
    params = init_params(arch, 1)
    x = np.random.default_rng(20).normal(size=(2, 1, 10, 8)).astype(np.float32)
    feats = model_features(params, arch, x)
    assert feats.shape == (2, 4)
    logits = model_forward(params, arch, x, mode="infer")
    assert np.allclose(feats @ params.fc_weight.T + params.fc_bias, logits, atol=1e-6)


def test_model_end_to_end_gradients_float64():
    rng = np.random.default_rng(21)
    arch = arch_from_channels((2, 2, 3, 3, 4), strides=(1, 2, 1, 1, 1))
    params = init_params(arch, 5, dtype=np.float64)
    x = rng.normal(size=(2, 1, 9, 7))
    y = np.array([1, 10])
    _, _, grads = model_loss_grads(params, arch, x, y)
    named = dict(params.named_learnables())
    for name in ("conv0.weight", "conv2.bias", "bn1.gamma", "bn4.beta",
                 "fc.weight", "fc.bias"):
        tensor = named[name]
        for idx in sample_indices(rng, tensor.shape, 3):
            fd = central_diff(lambda: model_loss_grads(params, arch, x, y)[0],
                              tensor, idx, 1e-5)
            assert rel_err(grads[name][idx], fd) < 1e-4, name


def test_model_end_to_end_gradients_float32():
    # float32 loss values only resolve ~1e-7, so probe along a direction
    # built from ~1% of the coordinates for a usable signal
    rng = np.random.default_rng(22)
    arch = arch_from_channels((2, 2, 3, 3, 4))
    params = init_params(arch, 6, dtype=np.float32)
    x = rng.normal(size=(2, 1, 9, 7)).astype(np.float32)
    y = np.array([0, 11])
    _, _, grads = model_loss_grads(params, arch, x, y)
    named = dict(params.named_learnables())
    direction = {name: np.zeros_like(t) for name, t in named.items()}
    for name, t in named.items():
        for idx in sample_indices(rng, t.shape, max(1, t.size // 100)):
            direction[name][idx] = grads[name][idx]
    norm = np.sqrt(sum(float((d**2).sum()) for d in direction.values()))
    h = 1e-3
    for name, t in named.items():
        t += h * direction[name] / norm
    hi = model_loss_grads(params, arch, x, y)[0]
    for name, t in named.items():
        t -= 2 * h * direction[name] / norm
    lo = model_loss_grads(params, arch, x, y)[0]
    for name, t in named.items():
        t += h * direction[name] / norm
    fd = (hi - lo) / (2 * h)
    analytic = sum(float((grads[n] * direction[n]).sum()) for n in direction) / norm
    assert rel_err(analytic, fd) < 1e-3
