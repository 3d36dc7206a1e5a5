"""Noise sources and exact-SNR additive mixing.

White and pink noise are generated in memory from a seed; every other
source is a plain 16 kHz mono WAV in a configured directory. Mixing
scales the noise so the realized power ratio hits the requested SNR
exactly; no clipping or renormalization is applied afterwards, so mixed
samples may leave [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, AudioClip, read_wav
from .errors import ConfigInvalid, SourceTooShort, ZeroPowerSignal

SNR_GRID_DB = tuple(range(-3, 25, 3))  # -3 .. 24 dB in 3 dB steps

PRETRAIN_SOURCES = ("white", "pink", "babble", "office", "kitchen", "living_room")
ONSITE_SOURCES = ("car_horn", "dog_bark", "street_music")
GENERATED_SOURCES = ("white", "pink")


@dataclass(frozen=True)
class NoiseCondition:
    source: str
    snr_db: int

    def __post_init__(self):
        if self.snr_db not in SNR_GRID_DB:
            raise ConfigInvalid(
                f"snr_db {self.snr_db} not on the grid {list(SNR_GRID_DB)}"
            )


def white_noise(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x57495445])
    return rng.standard_normal(n).astype(np.float32)


def pink_noise(n: int, seed: int, n_rows: int = 16) -> np.ndarray:
    """Voss-McCartney pink noise: staggered sample-and-hold octave rows.

    Row k refreshes every 2**(k+1) samples, offset by 2**k so at most one
    row changes per sample; a white row sits on top.
    """
    rng = np.random.default_rng([seed, 0x50494E4B])
    idx = np.arange(n)
    total = rng.standard_normal(n)
    for k in range(n_rows):
        period = 1 << (k + 1)
        offset = 1 << k
        holds = np.where(idx < offset, 0, (idx - offset) // period + 1)
        draws = rng.standard_normal(int(holds[-1]) + 1 if n else 1)
        total += draws[holds]
    return (total / np.sqrt(n_rows + 1)).astype(np.float32)


def signal_power(samples) -> float:
    """Mean of squares over the full clip, computed in 64-bit."""
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean(x * x))


def snr_scale(clean, noise, snr_db: float) -> float:
    """Factor a such that clean + a*noise realizes snr_db exactly."""
    p_clean = signal_power(clean)
    p_noise = signal_power(noise)
    if p_clean == 0.0 or p_noise == 0.0:
        raise ZeroPowerSignal("cannot set an SNR against a silent signal")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def noise_window(samples: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous random window of the given length."""
    n = samples.shape[0]
    if n < length:
        raise SourceTooShort(f"noise of {n} samples cannot fill {length}")
    if n == length:
        return samples
    start = int(rng.integers(0, n - length + 1))
    return samples[start : start + length]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, rng_seed: int) -> AudioClip:
    """clean + a*noise with a chosen so the power-ratio SNR equals snr_db.

    If the noise recording is longer than the clip, a seeded random
    segment of it is used.
    """
    rng = np.random.default_rng([rng_seed, 0x4D4958])
    segment = noise_window(noise.samples, len(clean), rng)
    a = snr_scale(clean.samples, segment, snr_db)
    mixed = clean.samples.astype(np.float64) + a * segment.astype(np.float64)
    return AudioClip(mixed.astype(np.float32), clean.sample_rate_hz)


class NoiseBank:
    """Resolves a noise source name to a waveform.

    "white" and "pink" are generated per request from the seed; any other
    name is loaded (and cached) from <noise_dir>/<name>.wav.
    """

    def __init__(self, noise_dir=None):
        self.noise_dir = Path(noise_dir) if noise_dir is not None else None
        self._cache: dict[str, np.ndarray] = {}

    def waveform(self, source: str, seed: int = 0, length: int = CLIP_SAMPLES) -> np.ndarray:
        if source in GENERATED_SOURCES:
            gen = white_noise if source == "white" else pink_noise
            return gen(length, seed)
        if source not in self._cache:
            if self.noise_dir is None:
                raise ConfigInvalid(
                    f"noise source {source!r} needs a noise directory"
                )
            path = self.noise_dir / f"{source}.wav"
            if not path.exists():
                raise ConfigInvalid(f"noise file not found: {path}")
            self._cache[source] = read_wav(path).samples
        return self._cache[source]

    def clip(self, source: str, seed: int = 0) -> AudioClip:
        return AudioClip(self.waveform(source, seed=seed))
