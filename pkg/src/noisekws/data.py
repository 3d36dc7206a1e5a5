"""Corpus indexing, class assignment, balanced set building, and shot sampling.

The corpus follows the Speech Commands v2 layout: one folder per word,
a `_background_noise_` folder with long speechless recordings, and
validation/testing list files naming the held-out clips. Twelve output
classes: ten command words, "Unknown" for the remaining vocabulary, and
"Silence" synthesized from random windows of the background recordings.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, AudioClip, pad_or_trim, read_wav
from .errors import (
    EmptyCorpus,
    InsufficientSamples,
    MissingListFile,
    SourceTooShort,
    UnknownWord,
)
from .frontend import FrontendConfig, log_mel
from .noise import NoiseBank, NoiseCondition, mix_at_snr

KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN_WORDS = (
    "backward", "bed", "bird", "cat", "dog", "eight", "five", "follow",
    "forward", "four", "happy", "house", "learn", "marvin", "nine", "one",
    "seven", "sheila", "six", "three", "tree", "two", "visual", "wow", "zero",
)
SILENCE_TOKEN = "_silence_"
BACKGROUND_DIR = "_background_noise_"

CLASS_NAMES = (
    "Yes", "No", "Up", "Down", "Left", "Right", "On", "Off", "Stop", "Go",
    "Unknown", "Silence",
)
N_CLASSES = 12
UNKNOWN_INDEX = 10
SILENCE_INDEX = 11
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


def class_label(index: int) -> ClassLabel:
    return ClassLabel(index, CLASS_NAMES[index])


def assign_class(raw_word: str) -> ClassLabel:
    """Map a folder word to its output class; non-vocabulary words are errors."""
    word = raw_word.lower()
    if word == SILENCE_TOKEN:
        return class_label(SILENCE_INDEX)
    if word in KEYWORDS:
        return class_label(KEYWORDS.index(word))
    if word in UNKNOWN_WORDS:
        return class_label(UNKNOWN_INDEX)
    raise UnknownWord(f"{raw_word!r} is not in the vocabulary")


@dataclass(frozen=True)
class ClipRef:
    """One manifest row: a word recording, or a seeded silence window."""

    path: str  # relative to the corpus root, '/'-separated
    word: str
    label: int
    split: str
    window_seed: int | None = None  # silence rows only

    @property
    def is_silence(self) -> bool:
        return self.window_seed is not None


@dataclass
class CorpusIndex:
    refs: list[ClipRef]
    silence_sources: list[str]  # background recordings, relative paths

    def split_refs(self, split: str) -> list[ClipRef]:
        return [r for r in self.refs if r.split == split]


def derive_seed(*parts) -> int:
    """Stable 32-bit stream id from mixed int/str parts."""
    acc = 0
    for part in parts:
        if isinstance(part, str):
            part = zlib.crc32(part.encode("utf-8"))
        acc = zlib.crc32(int(part).to_bytes(8, "little", signed=True), acc)
    return acc


def _read_list_file(path: Path) -> set[str]:
    if not path.exists():
        raise MissingListFile(f"list file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    return {line.strip().replace("\\", "/") for line in lines if line.strip()}


def scan_corpus(root, val_list=None, test_list=None) -> CorpusIndex:
    """Walk a Speech Commands layout into an index.

    Clips named by the list files go to val/test; everything else is
    train. Background recordings populate silence_sources only; silence
    rows are added separately by add_silence_refs.
    """
    root = Path(root)
    val_paths = _read_list_file(Path(val_list) if val_list else root / "validation_list.txt")
    test_paths = _read_list_file(Path(test_list) if test_list else root / "testing_list.txt")
    refs: list[ClipRef] = []
    silence_sources: list[str] = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        if entry.name == BACKGROUND_DIR:
            silence_sources = sorted(
                f"{BACKGROUND_DIR}/{p.name}" for p in entry.glob("*.wav")
            )
            continue
        if entry.name.startswith("_") or entry.name.startswith("."):
            continue
        label = assign_class(entry.name)
        for wav in sorted(entry.glob("*.wav")):
            rel = f"{entry.name}/{wav.name}"
            if rel in test_paths:
                split = "test"
            elif rel in val_paths:
                split = "val"
            else:
                split = "train"
            refs.append(ClipRef(rel, entry.name, label.index, split))
    if not refs:
        raise EmptyCorpus(f"no word recordings under {root}")
    return CorpusIndex(refs, silence_sources)


def _keyword_average(refs: list[ClipRef]) -> int:
    counts = {}
    for r in refs:
        if r.label < UNKNOWN_INDEX:
            counts[r.label] = counts.get(r.label, 0) + 1
    if not counts:
        return 0
    return int(round(sum(counts.values()) / len(counts)))


def add_silence_refs(index: CorpusIndex, seed: int) -> CorpusIndex:
    """Append per-split silence rows sized to the keyword average.

    Each row records its source recording and a window seed, so the same
    one-second window can be re-cut when the clip is loaded.
    """
    if not index.silence_sources:
        raise EmptyCorpus("corpus has no background recordings for the Silence class")
    refs = [r for r in index.refs if not r.is_silence]
    out = list(refs)
    for split in SPLITS:
        rng = np.random.default_rng([derive_seed(seed, "silence", split)])
        count = _keyword_average([r for r in refs if r.split == split])
        for _ in range(count):
            source = index.silence_sources[int(rng.integers(len(index.silence_sources)))]
            out.append(
                ClipRef(source, SILENCE_TOKEN, SILENCE_INDEX, split,
                        window_seed=int(rng.integers(2**31)))
            )
    return CorpusIndex(out, list(index.silence_sources))


def extract_silence(source: AudioClip, rng_seed: int, count: int) -> list[AudioClip]:
    """Cut `count` seeded one-second windows out of a longer recording."""
    n = len(source)
    if n < CLIP_SAMPLES:
        raise SourceTooShort(f"background recording of {n} samples is under 1 s")
    rng = np.random.default_rng([rng_seed, 0x53494C])
    clips = []
    for _ in range(count):
        start = int(rng.integers(0, n - CLIP_SAMPLES + 1))
        clips.append(AudioClip(source.samples[start : start + CLIP_SAMPLES].copy()))
    return clips


def load_clip(ref: ClipRef, root) -> AudioClip:
    clip = read_wav(Path(root) / ref.path)
    if ref.is_silence:
        return extract_silence(clip, ref.window_seed, 1)[0]
    return pad_or_trim(clip)


MANIFEST_COLUMNS = ("path", "word", "class_index", "split", "noise_source", "snr_db", "seed")


def write_manifest(index: CorpusIndex, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in index.refs:
            writer.writerow([
                r.path, r.word, r.label, r.split, "", "",
                "" if r.window_seed is None else r.window_seed,
            ])


def load_manifest(path) -> CorpusIndex:
    refs = []
    silence_sources = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise MissingListFile(f"{path} is not a corpus manifest")
        for row in reader:
            seed = int(row["seed"]) if row["seed"] else None
            refs.append(ClipRef(row["path"], row["word"], int(row["class_index"]),
                                row["split"], window_seed=seed))
            if seed is not None:
                silence_sources.add(row["path"])
    if not refs:
        raise EmptyCorpus(f"manifest {path} is empty")
    return CorpusIndex(refs, sorted(silence_sources))


def split_items(index: CorpusIndex, split: str, seed: int,
                per_class_cap: int | None = None) -> list[ClipRef]:
    """Materialize one split: keywords in full, Unknown downsampled to the
    keyword average, all silence rows; an optional per-class cap on top."""
    refs = index.split_refs(split)
    avg = _keyword_average(refs)
    by_label: dict[int, list[ClipRef]] = {}
    for r in refs:
        by_label.setdefault(r.label, []).append(r)
    items: list[ClipRef] = []
    for label in sorted(by_label):
        group = by_label[label]
        take = len(group)
        if label == UNKNOWN_INDEX:
            take = min(take, avg)
        if per_class_cap is not None:
            take = min(take, per_class_cap)
        if take < len(group):
            rng = np.random.default_rng([derive_seed(seed, "select", split, label)])
            chosen = rng.choice(len(group), size=take, replace=False)
            group = [group[i] for i in sorted(chosen)]
        items.extend(group)
    return items


def balanced_subset(items: list[ClipRef], fraction: float, seed: int) -> list[ClipRef]:
    """Seeded subset of round(fraction * len(items)), classes filled
    round-robin so counts stay within one of each other wherever the
    split has enough clips."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n_target = int(round(fraction * len(items)))
    by_label: dict[int, list[ClipRef]] = {}
    for r in items:
        by_label.setdefault(r.label, []).append(r)
    pools = {}
    for label, group in by_label.items():
        rng = np.random.default_rng([derive_seed(seed, "balance", label)])
        pools[label] = [group[i] for i in rng.permutation(len(group))]
    chosen: list[ClipRef] = []
    while len(chosen) < n_target:
        progressed = False
        for label in sorted(pools):
            if pools[label] and len(chosen) < n_target:
                chosen.append(pools[label].pop())
                progressed = True
        if not progressed:
            break
    return chosen


def _conditions(cond) -> list[NoiseCondition]:
    if isinstance(cond, NoiseCondition):
        return [cond]
    conds = list(cond)
    if not conds:
        raise ValueError("need at least one noise condition")
    return conds


def build_clean_set(index: CorpusIndex, split: str, rng_seed: int, root,
                    fraction: float = 1.0,
                    per_class_cap: int | None = None) -> list[tuple[AudioClip, int]]:
    items = split_items(index, split, rng_seed, per_class_cap)
    if fraction < 1.0:
        items = balanced_subset(items, fraction, derive_seed(rng_seed, "clean"))
    return [(load_clip(r, root), r.label) for r in items]


def assign_conditions(n: int, cond, rng_seed: int) -> list[NoiseCondition]:
    """Condition per item, spread in equal shares (within one) over the pool."""
    conds = _conditions(cond)
    order = np.random.default_rng([derive_seed(rng_seed, "assign")]).permutation(n)
    assigned: list[NoiseCondition | None] = [None] * n
    for slot, item_idx in enumerate(order):
        assigned[item_idx] = conds[slot % len(conds)]
    return assigned


def build_noisy_set(index: CorpusIndex, split: str, cond, fraction: float,
                    rng_seed: int, root, bank: NoiseBank,
                    per_class_cap: int | None = None) -> list[tuple[AudioClip, int]]:
    """Class-balanced seeded subset of a split, each clip mixed with noise.

    With a single condition every selected clip is mixed at it; with a
    list (the noise-aware pool) clips are spread over the conditions in
    equal shares.
    """
    items = split_items(index, split, rng_seed, per_class_cap)
    subset = balanced_subset(items, fraction, derive_seed(rng_seed, "noisy"))
    assigned = assign_conditions(len(subset), cond, rng_seed)
    out: list[tuple[AudioClip, int]] = []
    for ref, c in zip(subset, assigned):
        item_seed = derive_seed(rng_seed, "mix", ref.path, ref.window_seed or 0, c.source, c.snr_db)
        clean = load_clip(ref, root)
        noisy = mix_at_snr(clean, bank.clip(c.source, seed=item_seed), c.snr_db, item_seed)
        out.append((noisy, ref.label))
    return out


@dataclass
class ShotSet:
    """Per-class adaptation examples, featurized at one noise condition."""

    shots_per_class: int
    condition: NoiseCondition
    items: list[tuple[np.ndarray, int]]  # (log-mel values [frames, mels], label)


def sample_shots(index: CorpusIndex, cond: NoiseCondition, k: int, rng_seed: int,
                 root, bank: NoiseBank,
                 frontend_cfg: FrontendConfig | None = None) -> ShotSet:
    """k seeded training clips per class, mixed at cond and featurized.

    Silence shots are windows of the background recordings run through
    the same mixing step as every other class.
    """
    if not 1 <= k <= 5:
        raise ValueError("shots per class must be between 1 and 5")
    cfg = frontend_cfg or FrontendConfig()
    items = split_items(index, "train", derive_seed(rng_seed, "shots"))
    by_label: dict[int, list[ClipRef]] = {}
    for r in items:
        by_label.setdefault(r.label, []).append(r)
    shots: list[tuple[np.ndarray, int]] = []
    for label in range(N_CLASSES):
        group = by_label.get(label, [])
        if len(group) < k:
            raise InsufficientSamples(
                f"class {CLASS_NAMES[label]} has {len(group)} train clips, need {k}"
            )
        rng = np.random.default_rng([derive_seed(rng_seed, "pick", label)])
        for i in rng.choice(len(group), size=k, replace=False):
            ref = group[int(i)]
            item_seed = derive_seed(rng_seed, "shotmix", ref.path, ref.window_seed or 0)
            noisy = mix_at_snr(load_clip(ref, root), bank.clip(cond.source, seed=item_seed),
                               cond.snr_db, item_seed)
            shots.append((log_mel(noisy, cfg).values, label))
    return ShotSet(k, cond, shots)


def featurize(pairs: list[tuple[AudioClip, int]],
              frontend_cfg: FrontendConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack (clip, label) pairs into model inputs [N,1,frames,mels] and labels."""
    cfg = frontend_cfg or FrontendConfig()
    feats = np.stack([log_mel(clip, cfg).values for clip, _ in pairs])
    labels = np.array([label for _, label in pairs], dtype=np.int64)
    return feats[:, None, :, :], labels
