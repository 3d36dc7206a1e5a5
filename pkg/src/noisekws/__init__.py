"""Noise-resilient keyword spotting with few-shot last-layer adaptation."""

from .adapt import AdaptConfig, AdaptedModel, adapt, adaptation_sweep, extract_features, fc_sgd_step
from .audio import AudioClip, decode_wav, pad_or_trim, read_wav
from .data import (
    ClassLabel,
    CorpusIndex,
    ShotSet,
    assign_class,
    build_clean_set,
    build_noisy_set,
    extract_silence,
    sample_shots,
    scan_corpus,
)
from .frontend import FrontendConfig, Spectrogram, log_mel, mel_filterbank, stft_power
from .nn import ArchSpec, ConvBlockSpec, ModelParams, default_arch, init_params, model_forward
from .noise import NoiseBank, NoiseCondition, SNR_GRID_DB, mix_at_snr
from .train import (
    EvalRow,
    NoiseAwareMix,
    TrainConfig,
    adam_step,
    build_baseline,
    build_noise_aware,
    evaluate,
    plateau_scheduler,
    train_model,
)
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"
