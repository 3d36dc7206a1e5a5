"""Pretraining: Adam with cross-entropy, plateau learning-rate decay,
and accuracy evaluation.

Two reference models come out of here: a baseline trained on the clean
training split, and a noise-aware variant trained on the clean split plus
an extra fraction of noisy clips spread evenly over a (source, SNR) pool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import CorpusIndex, build_clean_set, build_noisy_set, featurize
from .errors import ShapeMismatch
from .frontend import FrontendConfig
from .nn import ArchSpec, ModelParams, init_params, model_forward, model_loss_grads
from .noise import PRETRAIN_SOURCES, SNR_GRID_DB, NoiseBank, NoiseCondition

NOISE_AWARE_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 50
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    seed: int = 0

    def validate(self):
        if self.lr0 <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr0, batch_size, and max_epochs must be positive")
        if self.plateau_patience < 1 or not 0 < self.plateau_factor < 1:
            raise ValueError("plateau settings out of range")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        m = {name: np.zeros_like(t) for name, t in params.named_learnables()}
        v = {name: np.zeros_like(t) for name, t in params.named_learnables()}
        return cls(0, m, v)


def adam_step(params: ModelParams, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ModelParams:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    for name, tensor in params.named_learnables():
        g = grads[name]
        if g.shape != tensor.shape:
            raise ShapeMismatch(f"gradient {name} has shape {g.shape}, want {tensor.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def plateau_scheduler(history, current_lr: float, patience: int = 10,
                      factor: float = 0.1) -> float:
    """Decay when the best value is a whole patience window old.

    `history` holds the monitored metric (validation accuracy) including
    the current epoch. Improvement means a strict increase, so the best
    epoch is the first one attaining the maximum; the rate is cut each
    time the gap since then reaches another multiple of `patience`.
    """
    if not history:
        raise ValueError("history must be nonempty")
    best_epoch = int(np.argmax(history))
    age = len(history) - 1 - best_epoch
    if age > 0 and age % patience == 0:
        return current_lr * factor
    return current_lr


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float


TRAIN_LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


def write_training_log(path, log: list[EpochLog]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_COLUMNS)
        for row in log:
            writer.writerow([
                row.epoch, f"{row.lr:.10g}", f"{row.train_loss:.6f}",
                f"{row.train_acc:.6f}", f"{row.val_acc:.6f}",
            ])


@dataclass
class EvalRow:
    model_id: str
    noise_source: str
    snr_db: int | None
    accuracy: float
    n_examples: int


def evaluate(params: ModelParams, arch: ArchSpec, x, y, model_id: str = "model",
             noise_source: str = "clean", snr_db: int | None = None,
             batch_size: int = 64) -> EvalRow:
    """Top-1 accuracy with batchnorm in infer mode; argmax ties go to the
    lowest class index."""
    if len(x) == 0:
        raise ValueError("evaluation set is empty")
    correct = 0
    for start in range(0, len(x), batch_size):
        logits = model_forward(params, arch, x[start : start + batch_size], mode="infer")
        correct += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
    return EvalRow(model_id, noise_source, snr_db, correct / len(x), len(x))


def train_model(arch: ArchSpec, train_set, val_set, cfg: TrainConfig) -> tuple[ModelParams, list[EpochLog]]:
    """Shuffled mini-batch Adam for exactly max_epochs epochs.

    train_set and val_set are (inputs [N,1,H,W], labels [N]) pairs of
    featurized clips. The run is fully determined by cfg.seed.
    """
    cfg.validate()
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    params = init_params(arch, cfg.seed)
    state = AdamState.init(params)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5348])
    lr = cfg.lr0
    history: list[float] = []
    log: list[EpochLog] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, logits, grads = model_loss_grads(params, arch, x_train[batch], y_train[batch])
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            loss_sum += loss * len(batch)
            correct += int((logits.argmax(axis=1) == y_train[batch]).sum())
        val_acc = evaluate(params, arch, x_val, y_val).accuracy
        history.append(val_acc)
        log.append(EpochLog(epoch, lr, loss_sum / len(order), correct / len(order), val_acc))
        lr = plateau_scheduler(history, lr, cfg.plateau_patience, cfg.plateau_factor)
    return params, log


@dataclass
class NoiseAwareMix:
    """Extra noisy-data share and the (source, SNR) pool it is spread over."""

    extra_fraction: float
    pool: list[NoiseCondition] = field(default_factory=list)

    def __post_init__(self):
        if not any(np.isclose(self.extra_fraction, f) for f in NOISE_AWARE_FRACTIONS):
            raise ValueError(
                f"extra_fraction must be one of {NOISE_AWARE_FRACTIONS}"
            )
        if not self.pool:
            self.pool = default_noise_pool()


def default_noise_pool() -> list[NoiseCondition]:
    return [NoiseCondition(src, snr) for src in PRETRAIN_SOURCES for snr in SNR_GRID_DB]


def build_baseline(index: CorpusIndex, cfg: TrainConfig, arch: ArchSpec, root,
                   frontend_cfg: FrontendConfig | None = None,
                   per_class_cap: int | None = None) -> tuple[ModelParams, list[EpochLog]]:
    """Train on the clean training split, validating on the clean val split."""
    train_set = featurize(build_clean_set(index, "train", cfg.seed, root,
                                          per_class_cap=per_class_cap), frontend_cfg)
    val_set = featurize(build_clean_set(index, "val", cfg.seed, root,
                                        per_class_cap=per_class_cap), frontend_cfg)
    return train_model(arch, train_set, val_set, cfg)


def build_noise_aware(index: CorpusIndex, mix: NoiseAwareMix, cfg: TrainConfig,
                      arch: ArchSpec, root, bank: NoiseBank,
                      frontend_cfg: FrontendConfig | None = None,
                      per_class_cap: int | None = None) -> tuple[ModelParams, list[EpochLog]]:
    """Train on the clean split plus an extra_fraction-sized noisy add-on,
    shuffled together into one pool."""
    clean = build_clean_set(index, "train", cfg.seed, root, per_class_cap=per_class_cap)
    noisy = build_noisy_set(index, "train", mix.pool, mix.extra_fraction, cfg.seed,
                            root, bank, per_class_cap=per_class_cap)
    x, y = featurize(clean + noisy, frontend_cfg)
    val_set = featurize(build_clean_set(index, "val", cfg.seed, root,
                                        per_class_cap=per_class_cap), frontend_cfg)
    return train_model(arch, (x, y), val_set, cfg)
