"""Synthetic Speech-Commands-style corpora and noise recordings.

Each vocabulary word gets a fixed three-tone signature; clips vary in
amplitude, phase, vibrato, and onset so a classifier has something real
to learn. The generated directory mirrors the real layout (word folders,
`_background_noise_`, validation/testing list files), which is what the
test suite and the demo in the README run against.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, SAMPLE_RATE_HZ, write_wav
from .data import KEYWORDS, UNKNOWN_WORDS
from .noise import ONSITE_SOURCES, pink_noise, white_noise

_VOCAB = tuple(sorted(KEYWORDS + UNKNOWN_WORDS))


def word_signature(word: str) -> tuple[float, float, float]:
    """Three sine frequencies unique to a vocabulary word."""
    idx = _VOCAB.index(word)
    f0 = 260.0 + 57.0 * idx
    return f0, f0 * 1.9 + 151.0, f0 * 2.7 + 293.0


def synth_word_clip(word: str, rng: np.random.Generator) -> np.ndarray:
    """One-second utterance-like clip: enveloped tones plus a little hiss."""
    t = np.arange(CLIP_SAMPLES) / SAMPLE_RATE_HZ
    sig = np.zeros(CLIP_SAMPLES)
    for i, freq in enumerate(word_signature(word)):
        vibrato = 1.0 + 0.008 * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.0) * t
                                       + rng.uniform(0, 2 * np.pi))
        amp = rng.uniform(0.6, 1.0) / (i + 1)
        sig += amp * np.sin(2.0 * np.pi * freq * vibrato * t + rng.uniform(0, 2 * np.pi))
    start = int(rng.integers(2500, 5500))
    dur = 8000
    env = np.zeros(CLIP_SAMPLES)
    env[start : start + dur] = np.hanning(dur)
    sig = sig * env
    sig *= rng.uniform(0.35, 0.8) / max(np.abs(sig).max(), 1e-9)
    sig += 0.004 * rng.standard_normal(CLIP_SAMPLES)
    return sig.astype(np.float32)


def _tone_bursts(n, rng, freqs, burst_s, period_s, decay=None):
    t = np.arange(n) / SAMPLE_RATE_HZ
    out = np.zeros(n)
    burst = int(burst_s * SAMPLE_RATE_HZ)
    period = int(period_s * SAMPLE_RATE_HZ)
    for start in range(int(rng.integers(0, period)), n - burst, period):
        seg = np.zeros(burst)
        for f in freqs:
            seg += np.sin(2.0 * np.pi * f * t[:burst] + rng.uniform(0, 2 * np.pi))
        if decay is not None:
            seg *= np.exp(-t[:burst] / decay)
        out[start : start + burst] += seg * rng.uniform(0.7, 1.0)
    return out


def synth_noise(source: str, seconds: float, seed: int) -> np.ndarray:
    """A named noise texture; deterministic for a given (source, seed)."""
    rng = np.random.default_rng([seed, hash_of(source)])
    n = int(seconds * SAMPLE_RATE_HZ)
    t = np.arange(n) / SAMPLE_RATE_HZ
    if source == "car_horn":
        sig = _tone_bursts(n, rng, (420.0, 540.0, 840.0), 0.35, 1.0)
    elif source == "dog_bark":
        sig = _tone_bursts(n, rng, (650.0,), 0.12, 0.7, decay=0.04)
        sig *= 0.5
        sig += 0.5 * sig * rng.standard_normal(n)
    elif source == "street_music":
        notes = (220.0, 277.2, 329.6, 415.3)
        sig = np.zeros(n)
        beat = int(0.25 * SAMPLE_RATE_HZ)
        for k, start in enumerate(range(0, n - beat, beat)):
            f = notes[k % len(notes)]
            sig[start : start + beat] += np.hanning(beat) * np.sin(
                2.0 * np.pi * f * t[:beat])
        sig += 0.3 * pink_noise(n, seed)
    elif source == "babble":
        sig = np.zeros(n)
        for _ in range(12):
            f = rng.uniform(150.0, 900.0)
            wander = np.cumsum(rng.standard_normal(n)) / np.sqrt(n)
            sig += np.sin(2.0 * np.pi * f * t + 3.0 * wander) / 12.0
        sig += 0.2 * pink_noise(n, seed)
    elif source == "office":
        sig = pink_noise(n, seed) + 0.4 * np.sin(2.0 * np.pi * 60.0 * t)
        sig += _tone_bursts(n, rng, (2200.0,), 0.02, 0.9, decay=0.01)
    elif source == "kitchen":
        sig = 0.3 * white_noise(n, seed) + _tone_bursts(
            n, rng, (3100.0, 4700.0), 0.04, 0.6, decay=0.015)
    elif source == "living_room":
        # crude lowpass of white noise plus a faint warbling tone
        kernel = np.ones(25) / 25.0
        sig = np.convolve(white_noise(n, seed).astype(np.float64), kernel, mode="same") * 4.0
        sig += 0.1 * np.sin(2.0 * np.pi * (300.0 + 40.0 * np.sin(2 * np.pi * 0.5 * t)) * t)
    else:
        raise ValueError(f"no synthetic texture for noise source {source!r}")
    sig = sig / max(np.abs(sig).max(), 1e-9) * 0.3
    return sig.astype(np.float32)


def hash_of(name: str) -> int:
    return sum(ord(c) * (i + 1) for i, c in enumerate(name)) % (2**16)


BACKGROUND_FILES = ("ambient_hiss", "low_rumble", "vent_hum", "murmur", "drizzle", "fan")


def synth_background(name: str, seconds: float, seed: int) -> np.ndarray:
    """Quiet speechless recording for the `_background_noise_` folder."""
    rng = np.random.default_rng([seed, hash_of(name)])
    n = int(seconds * SAMPLE_RATE_HZ)
    base = white_noise(n, seed + hash_of(name)).astype(np.float64)
    if name in ("low_rumble", "fan"):
        base = np.convolve(base, np.ones(40) / 40.0, mode="same") * 5.0
    if name == "vent_hum":
        t = np.arange(n) / SAMPLE_RATE_HZ
        base += 0.6 * np.sin(2.0 * np.pi * 120.0 * t)
    level = rng.uniform(0.05, 0.12)
    return (base / max(np.abs(base).max(), 1e-9) * level).astype(np.float32)


def generate_corpus(root, clips_per_word: int = 48, seed: int = 0,
                    keywords=KEYWORDS, unknown_words=UNKNOWN_WORDS[:5],
                    background_seconds: float = 12.0,
                    val_fraction: float = 0.1, test_fraction: float = 0.1) -> Path:
    """Write a synthetic corpus in the Speech Commands v2 layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    val_lines, test_lines = [], []
    for word in list(keywords) + list(unknown_words):
        word_dir = root / word
        word_dir.mkdir(exist_ok=True)
        rng = np.random.default_rng([seed, hash_of(word)])
        n_val = max(1, int(round(val_fraction * clips_per_word)))
        n_test = max(1, int(round(test_fraction * clips_per_word)))
        held_out = rng.permutation(clips_per_word)
        val_ids = set(held_out[:n_val].tolist())
        test_ids = set(held_out[n_val : n_val + n_test].tolist())
        for i in range(clips_per_word):
            rel = f"{word}/{word}_{i:04d}.wav"
            write_wav(root / rel, synth_word_clip(word, rng))
            if i in val_ids:
                val_lines.append(rel)
            elif i in test_ids:
                test_lines.append(rel)
    bg_dir = root / "_background_noise_"
    bg_dir.mkdir(exist_ok=True)
    for name in BACKGROUND_FILES:
        write_wav(bg_dir / f"{name}.wav", synth_background(name, background_seconds, seed))
    (root / "validation_list.txt").write_text("\n".join(val_lines) + "\n", encoding="utf-8")
    (root / "testing_list.txt").write_text("\n".join(test_lines) + "\n", encoding="utf-8")
    return root


def generate_noise_dir(path, sources=None, seconds: float = 20.0, seed: int = 0) -> Path:
    """Write WAV files for the file-backed noise sources."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if sources is None:
        sources = ("babble", "office", "kitchen", "living_room") + ONSITE_SOURCES
    for source in sources:
        write_wav(path / f"{source}.wav", synth_noise(source, seconds, seed))
    return path
