"""Few-shot, few-epoch adaptation of the final fully-connected layer.

The conv stack and every batchnorm statistic stay frozen; shot clips are
featurized once through the frozen extractor and the fc weights are then
updated by per-sample SGD on the cross-entropy gradient, which for a
softmax classifier is the closed form (p - onehot(y)) x features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CorpusIndex, ShotSet, build_clean_set, derive_seed, featurize, sample_shots
from .errors import ShapeMismatch
from .frontend import FrontendConfig
from .nn import ArchSpec, ModelParams, model_features, softmax
from .noise import SNR_GRID_DB, NoiseBank, NoiseCondition, mix_at_snr


@dataclass(frozen=True)
class AdaptConfig:
    shots_per_class: int = 1
    epochs: int = 1
    lr: float = 1e-4

    def __post_init__(self):
        if not 1 <= self.shots_per_class <= 5:
            raise ValueError("shots_per_class must be between 1 and 5")
        if not 1 <= self.epochs <= 5:
            raise ValueError("epochs must be between 1 and 5")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")


@dataclass
class AdaptProvenance:
    noise_source: str
    snr_db: int
    shots: int
    epochs: int
    seed: int
    steps: int
    base_checksum: str | None = None

    def to_json(self) -> dict:
        out = {
            "noise_source": self.noise_source,
            "snr_db": self.snr_db,
            "shots": self.shots,
            "epochs": self.epochs,
            "seed": self.seed,
            "steps": self.steps,
        }
        if self.base_checksum is not None:
            out["base_checksum"] = self.base_checksum
        return out


@dataclass
class AdaptedModel:
    base: ModelParams
    arch: ArchSpec
    fc_weight: np.ndarray
    fc_bias: np.ndarray
    provenance: AdaptProvenance

    def to_params(self) -> ModelParams:
        """Parameters with the adapted head; non-fc tensors are shared
        with the base model, so they are bitwise identical to it."""
        return ModelParams(self.base.blocks, self.fc_weight, self.fc_bias)


def extract_features(params: ModelParams, arch: ArchSpec, batch) -> np.ndarray:
    """Global-average-pooled activations, the fc input, with frozen stats."""
    return model_features(params, arch, batch)


def fc_sgd_step(fc_weight, fc_bias, features, label: int, lr: float):
    """One per-sample SGD step on softmax cross-entropy, in place.

    W <- W - lr * (p - onehot(y)) x f ; b <- b - lr * (p - onehot(y)).
    """
    if features.ndim != 1 or fc_weight.shape[1] != features.shape[0]:
        raise ShapeMismatch(
            f"features {features.shape} do not fit fc weight {fc_weight.shape}"
        )
    p = softmax((fc_weight @ features + fc_bias)[None, :])[0]
    p[label] -= 1.0
    fc_weight -= lr * np.outer(p, features)
    fc_bias -= lr * p
    return fc_weight, fc_bias


def adapt(base: ModelParams, arch: ArchSpec, shots: ShotSet, cfg: AdaptConfig,
          seed: int) -> AdaptedModel:
    """Fine-tune only the fc layer on the shot set.

    Features are extracted once and reused across epochs (the extractor
    is frozen, so this is exact); each epoch walks the shots in a seeded
    shuffled order applying one SGD step per sample. An empty shot set is
    a no-op that returns the base head unchanged.
    """
    fc_weight = base.fc_weight.copy()
    fc_bias = base.fc_bias.copy()
    steps = 0
    if shots.items:
        batch = np.stack([values for values, _ in shots.items])[:, None, :, :]
        labels = [label for _, label in shots.items]
        features = extract_features(base, arch, batch)
        rng = np.random.default_rng([seed, 0x41445054])
        for _ in range(cfg.epochs):
            for i in rng.permutation(len(labels)):
                fc_sgd_step(fc_weight, fc_bias, features[i], labels[i], cfg.lr)
                steps += 1
    provenance = AdaptProvenance(shots.condition.source, shots.condition.snr_db,
                                 cfg.shots_per_class, cfg.epochs, seed, steps)
    return AdaptedModel(base, arch, fc_weight, fc_bias, provenance)


@dataclass
class SweepRow:
    model_id: str
    noise_source: str
    train_snr_db: int
    test_snr_db: int
    shots: int
    epochs: int
    seed: int
    accuracy: float
    n_examples: int


def _fc_accuracy(features, labels, fc_weight, fc_bias) -> float:
    logits = features @ fc_weight.T + fc_bias
    return float((logits.argmax(axis=1) == labels).mean())


def adaptation_sweep(bases: dict[str, ModelParams], arch: ArchSpec,
                     index: CorpusIndex, sources, adapt_snrs, shot_counts,
                     epoch_counts, seeds, root, bank: NoiseBank,
                     frontend_cfg: FrontendConfig | None = None,
                     test_snrs=SNR_GRID_DB, lr: float = 1e-4,
                     test_seed: int = 0,
                     per_class_cap: int | None = None) -> list[SweepRow]:
    """Adapt each base model over the grid and score it across the test
    SNR range of each source (matched-condition rows are the subset with
    test_snr == train_snr).

    The frozen extractor lets test features be computed once per
    (model, source, test SNR) and reused for every adapted head.
    """
    cfg = frontend_cfg or FrontendConfig()
    clean_test = build_clean_set(index, "test", test_seed, root, per_class_cap=per_class_cap)
    rows: list[SweepRow] = []
    for source in sources:
        noisy_feats: dict[int, tuple] = {}
        for snr in test_snrs:
            mixed = []
            for i, (clip, label) in enumerate(clean_test):
                mix_seed = derive_seed(test_seed, "sweep", source, snr, i)
                noisy = mix_at_snr(clip, bank.clip(source, seed=mix_seed), snr, mix_seed)
                mixed.append((noisy, label))
            noisy_feats[snr] = featurize(mixed, cfg)
        for model_id, base in bases.items():
            feats = {
                snr: (extract_features(base, arch, x), y)
                for snr, (x, y) in noisy_feats.items()
            }
            for adapt_snr in adapt_snrs:
                for k in shot_counts:
                    for n_epochs in epoch_counts:
                        for seed in seeds:
                            shots = sample_shots(index, NoiseCondition(source, adapt_snr),
                                                 k, seed, root, bank, cfg)
                            model = adapt(base, arch, shots,
                                          AdaptConfig(k, n_epochs, lr), seed)
                            for snr in test_snrs:
                                f, y = feats[snr]
                                rows.append(SweepRow(
                                    model_id, source, adapt_snr, snr, k, n_epochs,
                                    seed,
                                    _fc_accuracy(f, y, model.fc_weight, model.fc_bias),
                                    len(y),
                                ))
    return rows
