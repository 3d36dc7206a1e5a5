"""Dense-tensor CNN: five conv+batchnorm+ReLU blocks, global average
pooling, and a 12-way fully-connected classifier, with hand-written
forward and backward passes.

Tensors are plain numpy arrays. Parameters and activations are float32;
every op preserves the dtype of its inputs, so gradient tests can run the
whole stack in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigInvalid, DegenerateBatch, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------------------
# architecture


@dataclass(frozen=True)
class ConvBlockSpec:
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class ArchSpec:
    conv_blocks: tuple[ConvBlockSpec, ...]
    n_classes: int = 12

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(self.conv_blocks))
        if len(self.conv_blocks) != 5:
            raise ConfigInvalid("architecture must have exactly 5 conv blocks")
        if self.n_classes != 12:
            raise ConfigInvalid("classifier must have 12 outputs")
        for blk in self.conv_blocks:
            if blk.activation != "relu":
                raise ConfigInvalid(f"unsupported activation {blk.activation!r}")
            if blk.out_channels < 1 or blk.kernel_h < 1 or blk.kernel_w < 1 or blk.stride < 1:
                raise ConfigInvalid("conv block sizes must be positive")

    @property
    def feature_dim(self) -> int:
        return self.conv_blocks[-1].out_channels


def default_arch() -> ArchSpec:
    """Configurable default: channels 16/32/32/64/64, 3x3 kernels, ReLU."""
    return ArchSpec(tuple(ConvBlockSpec(c) for c in (16, 32, 32, 64, 64)))


def arch_from_channels(channels, strides=None) -> ArchSpec:
    strides = strides or [1] * len(list(channels))
    return ArchSpec(tuple(
        ConvBlockSpec(int(c), stride=int(s)) for c, s in zip(channels, strides)
    ))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ConvBlockParams:
    weight: np.ndarray  # [out, in, kh, kw]
    bias: np.ndarray  # [out]
    gamma: np.ndarray  # [out]
    beta: np.ndarray  # [out]
    running_mean: np.ndarray  # [out]
    running_var: np.ndarray  # [out]


@dataclass
class ModelParams:
    blocks: list[ConvBlockParams]
    fc_weight: np.ndarray  # [n_classes, feature_dim]
    fc_bias: np.ndarray  # [n_classes]

    def named_learnables(self):
        """Learnable tensors in a fixed order (running stats excluded)."""
        for i, blk in enumerate(self.blocks):
            yield f"conv{i}.weight", blk.weight
            yield f"conv{i}.bias", blk.bias
            yield f"bn{i}.gamma", blk.gamma
            yield f"bn{i}.beta", blk.beta
        yield "fc.weight", self.fc_weight
        yield "fc.bias", self.fc_bias

    def named_tensors(self):
        """Every tensor, learnable or not, for serialization."""
        for i, blk in enumerate(self.blocks):
            yield f"conv{i}.weight", blk.weight
            yield f"conv{i}.bias", blk.bias
            yield f"bn{i}.gamma", blk.gamma
            yield f"bn{i}.beta", blk.beta
            yield f"bn{i}.running_mean", blk.running_mean
            yield f"bn{i}.running_var", blk.running_var
        yield "fc.weight", self.fc_weight
        yield "fc.bias", self.fc_bias

    def copy(self) -> "ModelParams":
        return ModelParams(
            [ConvBlockParams(b.weight.copy(), b.bias.copy(), b.gamma.copy(),
                             b.beta.copy(), b.running_mean.copy(), b.running_var.copy())
             for b in self.blocks],
            self.fc_weight.copy(), self.fc_bias.copy(),
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            [ConvBlockParams(*(getattr(b, f).astype(dtype) for f in (
                "weight", "bias", "gamma", "beta", "running_mean", "running_var")))
             for b in self.blocks],
            self.fc_weight.astype(dtype), self.fc_bias.astype(dtype),
        )


@dataclass
class GradientSet:
    """Gradients shaped like the learnable tensors of ModelParams."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value


def _glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def init_params(arch: ArchSpec, seed: int, in_channels: int = 1,
                dtype=np.float32) -> ModelParams:
    """Seeded init: uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero conv
    bias, batchnorm at identity with (0, 1) running stats."""
    rng = np.random.default_rng([seed, 0x494E4954])
    blocks = []
    cin = in_channels
    for blk in arch.conv_blocks:
        cout, kh, kw = blk.out_channels, blk.kernel_h, blk.kernel_w
        weight = _glorot_uniform(rng, (cout, cin, kh, kw), cin * kh * kw, cout * kh * kw, dtype)
        blocks.append(ConvBlockParams(
            weight,
            np.zeros(cout, dtype=dtype),
            np.ones(cout, dtype=dtype),
            np.zeros(cout, dtype=dtype),
            np.zeros(cout, dtype=dtype),
            np.ones(cout, dtype=dtype),
        ))
        cin = cout
    fc_weight = _glorot_uniform(rng, (arch.n_classes, cin), cin, arch.n_classes, dtype)
    fc_bias = np.zeros(arch.n_classes, dtype=dtype)
    return ModelParams(blocks, fc_weight, fc_bias)


# ---------------------------------------------------------------------------
# layer ops


def _same_padding(kh, kw):
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def _im2col(x_padded, kh, kw, stride):
    win = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d_forward(x, kernels, bias, stride: int = 1):
    """Cross-correlation with "same" zero padding; stride 1 keeps H and W."""
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-D input and kernels")
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = kernels.shape
    if cin != cin_k or bias.shape != (cout,):
        raise ShapeMismatch(
            f"kernels {kernels.shape} / bias {bias.shape} do not fit input {x.shape}"
        )
    pt, pb, pl, pr = _same_padding(kh, kw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ kernels.reshape(cout, -1).T + bias
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)


def conv2d_backward(x, kernels, grad_out, stride: int = 1):
    """Exact gradients of conv2d_forward w.r.t. input, kernels, and bias."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = kernels.shape
    if grad_out.shape[:2] != (n, cout):
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not fit conv output")
    pt, pb, pl, pr = _same_padding(kh, kw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    if grad_out.shape != (n, cout, ho, wo):
        raise ShapeMismatch(f"grad_out {grad_out.shape} != {(n, cout, ho, wo)}")
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
    grad_bias = g2.sum(axis=0)
    grad_kernels = (g2.T @ cols).reshape(cout, cin, kh, kw)
    gcols = (g2 @ kernels.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
    gxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx in range(kw):
            gxp[:, :, dy : dy + ho * stride : stride, dx : dx + wo * stride : stride] += (
                gcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
            )
    grad_x = gxp[:, :, pt : pt + h, pl : pl + w]
    return grad_x, grad_kernels, grad_bias


def batchnorm_forward(x, gamma, beta, state: ConvBlockParams, mode: str = "train",
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel normalization over (N, H, W).

    Train mode normalizes by biased batch statistics and folds them into
    the running stats in place: running <- (1-momentum)*running +
    momentum*batch. Infer mode uses the running stats.
    """
    if mode == "train":
        if x.shape[0] * x.shape[2] * x.shape[3] <= 1:
            raise DegenerateBatch("batch statistics need more than one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        dtype = state.running_mean.dtype
        state.running_mean = ((1.0 - momentum) * state.running_mean
                              + momentum * mean).astype(dtype, copy=False)
        state.running_var = ((1.0 - momentum) * state.running_var
                             + momentum * var).astype(dtype, copy=False)
    elif mode == "infer":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    xhat = (x - mean[None, :, None, None]) / np.sqrt(var + eps)[None, :, None, None]
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None]


def batchnorm_backward(x, gamma, grad_out, eps: float = BN_EPS):
    """Gradients of the train-mode forward (batch statistics recomputed)."""
    if x.shape != grad_out.shape:
        raise ShapeMismatch(f"grad_out {grad_out.shape} != input {x.shape}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    gvar = (gxhat * (x - mean)).sum(axis=(0, 2, 3), keepdims=True) * -0.5 * inv_std**3
    gmean = (-gxhat * inv_std).sum(axis=(0, 2, 3), keepdims=True) \
        + gvar * (-2.0 * (x - mean)).mean(axis=(0, 2, 3), keepdims=True)
    grad_x = gxhat * inv_std + gvar * 2.0 * (x - mean) / m + gmean / m
    return grad_x, grad_gamma, grad_beta


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # subgradient at 0 is 0
    return grad_out * (x > 0)


def global_avg_pool_forward(x):
    if x.ndim != 4:
        raise ShapeMismatch("global average pooling expects [N, C, H, W]")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(x_shape, grad_out):
    n, c, h, w = x_shape
    if grad_out.shape != (n, c):
        raise ShapeMismatch(f"grad_out {grad_out.shape} != {(n, c)}")
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), x_shape).copy()


def fc_forward(features, weight, bias):
    if features.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeMismatch(
            f"features {features.shape} do not fit fc {weight.shape}/{bias.shape}"
        )
    return features @ weight.T + bias


def fc_backward(features, weight, grad_logits):
    grad_features = grad_logits @ weight
    grad_weight = grad_logits.T @ features
    grad_bias = grad_logits.sum(axis=0)
    return grad_features, grad_weight, grad_bias


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient (softmax - onehot)/N."""
    n = logits.shape[0]
    probs = softmax(logits)
    loss = float(-np.log(probs[np.arange(n), labels]).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# whole model


def _check_param_shapes(params: ModelParams, arch: ArchSpec):
    if len(params.blocks) != len(arch.conv_blocks):
        raise ShapeMismatch("parameter blocks do not match the architecture")
    if params.fc_weight.shape[1] != arch.feature_dim:
        raise ShapeMismatch("fc input width does not match the last conv block")


def model_forward(params: ModelParams, arch: ArchSpec, batch, mode: str = "infer"):
    """conv -> batchnorm -> ReLU (x5) -> global average pool -> fc logits."""
    _check_param_shapes(params, arch)
    x = batch
    for spec, blk in zip(arch.conv_blocks, params.blocks):
        x = conv2d_forward(x, blk.weight, blk.bias, spec.stride)
        x = batchnorm_forward(x, blk.gamma, blk.beta, blk, mode)
        x = relu_forward(x)
    return fc_forward(global_avg_pool_forward(x), params.fc_weight, params.fc_bias)


def model_features(params: ModelParams, arch: ArchSpec, batch):
    """Frozen feature extractor: the fc layer's input, computed in infer mode."""
    _check_param_shapes(params, arch)
    x = batch
    for spec, blk in zip(arch.conv_blocks, params.blocks):
        x = conv2d_forward(x, blk.weight, blk.bias, spec.stride)
        x = batchnorm_forward(x, blk.gamma, blk.beta, blk, "infer")
        x = relu_forward(x)
    return global_avg_pool_forward(x)


def model_loss_grads(params: ModelParams, arch: ArchSpec, batch, labels):
    """Train-mode forward plus full backprop; returns (loss, logits, GradientSet)."""
    _check_param_shapes(params, arch)
    x = batch
    conv_inputs, bn_inputs, relu_inputs = [], [], []
    for spec, blk in zip(arch.conv_blocks, params.blocks):
        conv_inputs.append(x)
        x = conv2d_forward(x, blk.weight, blk.bias, spec.stride)
        bn_inputs.append(x)
        x = batchnorm_forward(x, blk.gamma, blk.beta, blk, "train")
        relu_inputs.append(x)
        x = relu_forward(x)
    pooled_input_shape = x.shape
    features = global_avg_pool_forward(x)
    logits = fc_forward(features, params.fc_weight, params.fc_bias)
    loss, grad_logits = softmax_cross_entropy(logits, labels)

    grads = GradientSet()
    grad_features, grads["fc.weight"], grads["fc.bias"] = fc_backward(
        features, params.fc_weight, grad_logits
    )
    g = global_avg_pool_backward(pooled_input_shape, grad_features)
    for i in reversed(range(len(params.blocks))):
        spec, blk = arch.conv_blocks[i], params.blocks[i]
        g = relu_backward(relu_inputs[i], g)
        g, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = batchnorm_backward(
            bn_inputs[i], blk.gamma, g
        )
        g, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = conv2d_backward(
            conv_inputs[i], blk.weight, g, spec.stride
        )
    return loss, logits, grads
