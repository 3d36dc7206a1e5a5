"""Log-Mel spectrogram frontend.

A one-second 16 kHz clip becomes a 101x64 log-Mel image: 25 ms Hann
windows with a 10 ms hop, 512-point FFT over reflect-padded audio, 64
triangular mel filters between 50 and 7500 Hz, natural log with an
additive floor so values stay finite. 16000 samples map to 101*64 = 6464
values, a compression factor of about 2.48.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import SAMPLE_RATE_HZ, AudioClip
from .errors import ConfigInvalid

N_FRAMES = 101
N_MELS = 64


@dataclass(frozen=True)
class FrontendConfig:
    win_ms: int = 25
    hop_ms: int = 10
    n_mels: int = N_MELS
    f_min_hz: float = 50.0
    f_max_hz: float = 7500.0
    fft_size: int = 512
    log_floor: float = 1e-6
    sample_rate_hz: int = SAMPLE_RATE_HZ

    @property
    def win_samples(self) -> int:
        return self.win_ms * self.sample_rate_hz // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * self.sample_rate_hz // 1000

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def validate(self) -> None:
        if self.win_samples <= 0 or self.hop_samples <= 0:
            raise ConfigInvalid("window and hop must be positive")
        if self.win_samples > self.fft_size:
            raise ConfigInvalid(
                f"window of {self.win_samples} samples exceeds fft_size {self.fft_size}"
            )
        if not 0.0 <= self.f_min_hz < self.f_max_hz <= self.sample_rate_hz / 2:
            raise ConfigInvalid("need 0 <= f_min < f_max <= Nyquist")
        if self.n_mels <= 0:
            raise ConfigInvalid("n_mels must be positive")
        if self.log_floor <= 0.0:
            raise ConfigInvalid("log_floor must be positive")


@dataclass
class Spectrogram:
    values: np.ndarray  # [n_frames, n_mels], float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("spectrogram must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValueError("spectrogram values must be finite")

    @property
    def shape(self):
        return self.values.shape


def hertz_to_mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hertz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def hann_window(length: int) -> np.ndarray:
    # periodic form, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def stft_power(clip: AudioClip, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Magnitude-squared short-time spectrum, one row per frame.

    The clip is reflect-padded by fft_size/2 on each side, framed at the
    hop with windows of win_samples, Hann-windowed, and zero-padded to
    fft_size before the FFT. Output is float64 [n_frames, fft_size/2+1].
    """
    if cfg is None:
        cfg = FrontendConfig()
    cfg.validate()
    x = clip.samples.astype(np.float64)
    pad = cfg.fft_size // 2
    padded = np.pad(x, pad, mode="reflect")
    frames = sliding_window_view(padded, cfg.win_samples)[:: cfg.hop_samples]
    windowed = frames * hann_window(cfg.win_samples)
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).astype(np.float64)


def mel_filterbank(cfg: FrontendConfig | None = None) -> np.ndarray:
    """Triangular mel filters, float64 [n_mels, fft_size/2+1].

    Filter edges are equally spaced in mel between f_min and f_max; rows
    are plain (unnormalized) triangles evaluated at the FFT bin centers.
    """
    if cfg is None:
        cfg = FrontendConfig()
    cfg.validate()
    bin_hz = np.arange(cfg.n_bins) * (cfg.sample_rate_hz / cfg.fft_size)
    edges_mel = np.linspace(
        hertz_to_mel(cfg.f_min_hz), hertz_to_mel(cfg.f_max_hz), cfg.n_mels + 2
    )
    edges_hz = mel_to_hertz(edges_mel)
    fb = np.zeros((cfg.n_mels, cfg.n_bins), dtype=np.float64)
    for i in range(cfg.n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        if not lo < center < hi:
            raise ConfigInvalid("degenerate mel filter (zero bandwidth)")
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    if not (fb.max(axis=1) > 0.0).all():
        raise ConfigInvalid(
            "some mel filters cover no FFT bin; increase fft_size or reduce n_mels"
        )
    return fb


def log_mel(clip: AudioClip, cfg: FrontendConfig | None = None) -> Spectrogram:
    """log-Mel image of a one-second clip: ln(filterbank @ power + floor)."""
    if cfg is None:
        cfg = FrontendConfig()
    power = stft_power(clip, cfg)
    fb = mel_filterbank(cfg)
    values = np.log(power @ fb.T + cfg.log_floor)
    return Spectrogram(values.astype(np.float32))


def write_spectrogram(path, spec: Spectrogram) -> None:
    """Debug dump: two u32 LE dims followed by row-major f32 LE values."""
    n_frames, n_mels = spec.values.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", n_frames, n_mels))
        fh.write(spec.values.astype("<f4").tobytes())


def read_spectrogram(path) -> Spectrogram:
    with open(path, "rb") as fh:
        n_frames, n_mels = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n_frames * n_mels), dtype="<f4")
    return Spectrogram(data.reshape(n_frames, n_mels).copy())
