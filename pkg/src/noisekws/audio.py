"""WAV decoding and fixed-length clip handling.

All audio on disk is RIFF/WAVE, 16-bit PCM, mono, 16 kHz. In memory a clip
is float32 in [-1, 1). One second (16000 samples) is the unit every other
module works on; shorter or longer recordings are normalized with
pad_or_trim.
"""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import CorruptHeader, UnsupportedFormat

SAMPLE_RATE_HZ = 16000
CLIP_SAMPLES = 16000
_PCM_SCALE = 32768.0


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError("samples must be a 1-D array")
        if not np.isfinite(self.samples).all():
            raise ValueError("samples must all be finite")

    def __len__(self):
        return int(self.samples.shape[0])


def decode_wav(data: bytes) -> AudioClip:
    """Decode a WAV byte stream; only 16-bit PCM mono 16 kHz is accepted."""
    try:
        with wave.open(io.BytesIO(data)) as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comp = wf.getcomptype()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise CorruptHeader(f"not a readable WAV stream: {exc}") from exc
    if comp != "NONE" or width != 2 or channels != 1 or rate != SAMPLE_RATE_HZ:
        raise UnsupportedFormat(
            f"need 16-bit PCM mono {SAMPLE_RATE_HZ} Hz, got {8 * width}-bit "
            f"comp={comp} channels={channels} rate={rate}"
        )
    pcm = np.frombuffer(frames, dtype="<i2")
    return AudioClip(pcm.astype(np.float32) / _PCM_SCALE, rate)


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def encode_wav(samples, sample_rate_hz: int = SAMPLE_RATE_HZ) -> bytes:
    """Encode float samples in [-1, 1] as 16-bit PCM mono WAV bytes."""
    pcm = np.rint(np.asarray(samples, dtype=np.float64) * _PCM_SCALE)
    pcm = np.clip(pcm, -32768, 32767)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(pcm.astype("<i2").tobytes())
    return buf.getvalue()


def write_wav(path, samples, sample_rate_hz: int = SAMPLE_RATE_HZ) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(samples, sample_rate_hz))


def pad_or_trim(clip: AudioClip, target_len: int = CLIP_SAMPLES) -> AudioClip:
    """Zero-pad at the end, or truncate at the end, to exactly target_len."""
    n = len(clip)
    if n == target_len:
        return clip
    if n > target_len:
        return AudioClip(clip.samples[:target_len].copy(), clip.sample_rate_hz)
    out = np.zeros(target_len, dtype=np.float32)
    out[:n] = clip.samples
    return AudioClip(out, clip.sample_rate_hz)
