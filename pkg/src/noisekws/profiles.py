"""Named run profiles and key=value config files.

"paper" is the full protocol: the default five-block architecture, 50
epochs, Adam at 1e-4, no per-class cap. "desk" is the reduced protocol
used by the test suite: a thin strided architecture, 10 epochs, a 200
clip per-class cap, and an adaptation rate recalibrated for the smaller
feature scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .nn import ArchSpec, arch_from_channels, default_arch
from .train import TrainConfig


@dataclass(frozen=True)
class Profile:
    name: str
    arch: ArchSpec
    max_epochs: int
    per_class_cap: int | None
    adapt_lr: float
    lr0: float = 1e-4
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.1
    plateau_patience: int = 10

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, beta1=self.beta1, beta2=self.beta2,
                           eps=self.adam_eps, batch_size=self.batch_size,
                           max_epochs=self.max_epochs,
                           plateau_factor=self.plateau_factor,
                           plateau_patience=self.plateau_patience, seed=seed)


def desk_arch() -> ArchSpec:
    return arch_from_channels((8, 8, 16, 16, 32), strides=(2, 2, 1, 1, 1))


PAPER_PROFILE = Profile("paper", default_arch(), max_epochs=50,
                        per_class_cap=None, adapt_lr=1e-4)
DESK_PROFILE = Profile("desk", desk_arch(), max_epochs=10,
                       per_class_cap=200, adapt_lr=2e-2, lr0=1e-2)

PROFILES = {"paper": PAPER_PROFILE, "desk": DESK_PROFILE}


def load_config(path) -> dict[str, str]:
    """Flat `key = value` file; blank lines and # comments are ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def apply_overrides(profile: Profile, overrides: dict[str, str]) -> Profile:
    """Override profile fields from a config mapping.

    Recognized keys: epochs, batch_size, lr0, adapt_lr, beta1, beta2,
    adam_eps, plateau_factor, plateau_patience, per_class_cap,
    arch_channels, arch_strides (comma-separated integer lists).
    """
    updates = {}
    if "epochs" in overrides:
        updates["max_epochs"] = int(overrides["epochs"])
    for key in ("batch_size", "plateau_patience"):
        if key in overrides:
            updates[key] = int(overrides[key])
    for key in ("lr0", "adapt_lr", "beta1", "beta2", "adam_eps", "plateau_factor"):
        if key in overrides:
            updates[key] = float(overrides[key])
    if "per_class_cap" in overrides:
        raw = overrides["per_class_cap"]
        updates["per_class_cap"] = None if raw.lower() == "none" else int(raw)
    if "arch_channels" in overrides:
        channels = [int(c) for c in overrides["arch_channels"].split(",")]
        strides = None
        if "arch_strides" in overrides:
            strides = [int(s) for s in overrides["arch_strides"].split(",")]
        updates["arch"] = arch_from_channels(channels, strides)
    return replace(profile, **updates) if updates else profile
