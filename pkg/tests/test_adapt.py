import numpy as np
import pytest

from noisekws import data
from noisekws.adapt import (
    AdaptConfig,
    adapt,
    adaptation_sweep,
    extract_features,
    fc_sgd_step,
)
from noisekws.data import ShotSet
from noisekws.nn import (
    arch_from_channels,
    fc_backward,
    fc_forward,
    init_params,
    model_forward,
    softmax_cross_entropy,
)
from noisekws.noise import NoiseCondition, mix_at_snr
from noisekws.train import evaluate

TINY_ARCH = arch_from_channels((2, 2, 3, 3, 4))
WIDE_ARCH = arch_from_channels((2, 2, 3, 3, 12))  # feature dim == n_classes


def synthetic_shots(k=1, seed=0, h=10, w=8, cond=None):
    rng = np.random.default_rng(seed)
    items = [(rng.normal(size=(h, w)).astype(np.float32), label)
             for label in range(12) for _ in range(k)]
    return ShotSet(k, cond or NoiseCondition("white", 0), items)


def test_adapt_config_ranges():
    AdaptConfig(1, 1)
    AdaptConfig(5, 5)
    with pytest.raises(ValueError):
        AdaptConfig(0, 1)
    with pytest.raises(ValueError):
        AdaptConfig(6, 1)
    with pytest.raises(ValueError):
        AdaptConfig(1, 6)


def test_extract_features_deterministic_and_sized():
    params = init_params(TINY_ARCH, 0)
    batch = np.random.default_rng(1).normal(size=(5, 1, 10, 8)).astype(np.float32)
    a = extract_features(params, TINY_ARCH, batch)
    b = extract_features(params, TINY_ARCH, batch)
    assert a.shape == (5, TINY_ARCH.feature_dim)
    assert np.array_equal(a, b)


def test_extract_features_equals_identity_fc_forward():
    params = init_params(WIDE_ARCH, 2)
    params.fc_weight[:] = np.eye(12, dtype=np.float32)
    params.fc_bias[:] = 0.0
    batch = np.random.default_rng(3).normal(size=(3, 1, 9, 7)).astype(np.float32)
    feats = extract_features(params, WIDE_ARCH, batch)
    logits = model_forward(params, WIDE_ARCH, batch, mode="infer")
    assert np.allclose(feats, logits, atol=1e-6)


def test_fc_sgd_step_zero_lr_is_noop():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(12, 6))
    b = rng.normal(size=12)
    w0, b0 = w.copy(), b.copy()
    fc_sgd_step(w, b, rng.normal(size=6), 3, lr=0.0)
    assert np.array_equal(w, w0) and np.array_equal(b, b0)


def test_fc_sgd_step_zero_gradient_at_saturated_prediction():
    # a label logit 100 above the rest saturates softmax to exactly onehot
    w = np.zeros((12, 4))
    b = np.full(12, -50.0)
    b[7] = 50.0
    w0, b0 = w.copy(), b.copy()
    fc_sgd_step(w, b, np.zeros(4), 7, lr=0.5)
    assert np.array_equal(w, w0) and np.array_equal(b, b0)


def test_fc_sgd_step_matches_generic_backward():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        f = rng.normal(size=6)
        w = rng.normal(size=(12, 6))
        b = rng.normal(size=12)
        label = int(rng.integers(12))
        lr = 10 ** rng.uniform(-4, -1)
        # closed form
        w1, b1 = w.copy(), b.copy()
        fc_sgd_step(w1, b1, f, label, lr)
        # generic path
        logits = fc_forward(f[None, :], w, b)
        _, grad_logits = softmax_cross_entropy(logits, np.array([label]))
        _, gw, gb = fc_backward(f[None, :], w, grad_logits)
        w2 = w - lr * gw
        b2 = b - lr * gb
        worst = max(worst, np.abs(w1 - w2).max(), np.abs(b1 - b2).max())
    assert worst < 1e-6


def test_adapt_step_counts():
    params = init_params(TINY_ARCH, 6)
    one = adapt(params, TINY_ARCH, synthetic_shots(1), AdaptConfig(1, 1), seed=0)
    assert one.provenance.steps == 12
    five = adapt(params, TINY_ARCH, synthetic_shots(5), AdaptConfig(5, 5), seed=0)
    assert five.provenance.steps == 300


def test_adapt_freezes_everything_but_fc():
    params = init_params(TINY_ARCH, 7)
    frozen = {name: t.copy() for name, t in params.named_tensors()}
    model = adapt(params, TINY_ARCH, synthetic_shots(2), AdaptConfig(2, 3, lr=0.05), seed=1)
    for name, t in model.to_params().named_tensors():
        if name.startswith("fc."):
            continue
        assert np.array_equal(t, frozen[name]), name
    # the base model itself was never touched either
    for name, t in params.named_tensors():
        assert np.array_equal(t, frozen[name]), name
    assert not np.array_equal(model.fc_weight, frozen["fc.weight"])


def test_adapt_zero_lr_keeps_fc_bitwise():
    params = init_params(TINY_ARCH, 8)
    model = adapt(params, TINY_ARCH, synthetic_shots(1), AdaptConfig(1, 1, lr=0.0), seed=2)
    assert np.array_equal(model.fc_weight, params.fc_weight)
    assert np.array_equal(model.fc_bias, params.fc_bias)


def test_adapt_empty_shot_set_is_noop():
    params = init_params(TINY_ARCH, 8)
    empty = ShotSet(1, NoiseCondition("white", 0), [])
    model = adapt(params, TINY_ARCH, empty, AdaptConfig(1, 1, lr=0.5), seed=2)
    assert model.provenance.steps == 0
    assert np.array_equal(model.fc_weight, params.fc_weight)
    assert np.array_equal(model.fc_bias, params.fc_bias)


def test_adapt_cached_features_equal_recompute_per_epoch():
    params = init_params(TINY_ARCH, 9)
    shots = synthetic_shots(2, seed=3)
    cfg = AdaptConfig(2, 3, lr=0.02)
    model = adapt(params, TINY_ARCH, shots, cfg, seed=4)
    # reference: re-extract features at every epoch, same shuffles
    batch = np.stack([v for v, _ in shots.items])[:, None, :, :]
    labels = [label for _, label in shots.items]
    w = params.fc_weight.copy()
    b = params.fc_bias.copy()
    rng = np.random.default_rng([4, 0x41445054])
    for _ in range(cfg.epochs):
        feats = extract_features(params, TINY_ARCH, batch)
        for i in rng.permutation(len(labels)):
            fc_sgd_step(w, b, feats[i], labels[i], cfg.lr)
    assert np.array_equal(model.fc_weight, w)
    assert np.array_equal(model.fc_bias, b)


def test_adapt_provenance_records_condition():
    params = init_params(TINY_ARCH, 10)
    cond = NoiseCondition("car_horn", -3)
    model = adapt(params, TINY_ARCH, synthetic_shots(1, cond=cond),
                  AdaptConfig(1, 1), seed=5)
    record = model.provenance.to_json()
    assert record["noise_source"] == "car_horn"
    assert record["snr_db"] == -3
    assert record["shots"] == 1 and record["epochs"] == 1 and record["seed"] == 5


def test_adaptation_sweep_rows_and_accuracy_path(corpus_index, corpus_root,
                                                 noise_bank, desk_baseline):
    params, arch, _ = desk_baseline
    rows = adaptation_sweep({"baseline_adapted": params}, arch, corpus_index,
                            sources=("car_horn",), adapt_snrs=(-3,),
                            shot_counts=(1,), epoch_counts=(1,), seeds=(0,),
                            root=corpus_root, bank=noise_bank,
                            test_snrs=(-3, 24), lr=0.02, test_seed=0)
    assert len(rows) == 2
    assert {r.test_snr_db for r in rows} == {-3, 24}
    matched = next(r for r in rows if r.test_snr_db == -3)

    # the cached-feature scoring must equal a full forward evaluation
    shots = data.sample_shots(corpus_index, NoiseCondition("car_horn", -3), 1, 0,
                              corpus_root, noise_bank)
    model = adapt(params, arch, shots, AdaptConfig(1, 1, lr=0.02), 0)
    clean_test = data.build_clean_set(corpus_index, "test", 0, corpus_root)
    pairs = []
    for i, (clip, label) in enumerate(clean_test):
        mix_seed = data.derive_seed(0, "sweep", "car_horn", -3, i)
        pairs.append((mix_at_snr(clip, noise_bank.clip("car_horn", seed=mix_seed),
                                 -3, mix_seed), label))
    x, y = data.featurize(pairs)
    row = evaluate(model.to_params(), arch, x, y)
    assert row.accuracy == pytest.approx(matched.accuracy, abs=1e-12)
    assert row.n_examples == matched.n_examples
