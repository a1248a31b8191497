"""Enrollment-speech augmentation: noise, reverberation and SpecAugment, each gated by ``beta``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..data import AudioSignal
from .noise import ManifestNoiseSource, make_noise_source, mix_noise, snr_to_alpha
from .rir import (
    ImageSourceRirGenerator,
    RirFilter,
    RirGenerator,
    apply_reverb,
    image_source_rir,
    schroeder_t60,
)
from .specaug import MaskParams, mask_matrix, sample_mask, spec_augment

__all__ = [
    "AugmentConfig", "EnrollmentAugmenter", "gate", "mix_noise", "snr_to_alpha",
    "ManifestNoiseSource", "make_noise_source", "ImageSourceRirGenerator", "RirFilter",
    "RirGenerator", "apply_reverb", "generate_rir", "image_source_rir", "schroeder_t60",
    "MaskParams", "mask_matrix", "sample_mask", "spec_augment",
]


@dataclass(frozen=True)
class AugmentConfig:
    beta: float = 0.6
    snr_range_db: Tuple[float, float] = (-5.0, 15.0)
    t60_range_s: Tuple[float, float] = (0.1, 0.7)
    room_min: Tuple[float, float, float] = (3.0, 3.0, 2.5)
    room_max: Tuple[float, float, float] = (10.0, 10.0, 4.0)
    wall_margin: float = 0.5
    min_distance: float = 1.0
    time_mask_max: int = 11
    freq_mask_max: int = 9

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("snr_range_db", "t60_range_s"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
        if self.t60_range_s[0] <= 0:
            raise ValueError("t60 range must be positive")
        if any(a > b for a, b in zip(self.room_min, self.room_max)):
            raise ValueError("room_min must not exceed room_max componentwise")
        if self.time_mask_max < 1 or self.freq_mask_max < 1:
            raise ValueError("mask bounds must be at least 1")


def gate(beta: float, rng: np.random.Generator) -> bool:
    """True with probability ``beta`` (``U(0,1) < beta``)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return bool(rng.random() < beta)


_DEFAULT_RIR = ImageSourceRirGenerator()


def generate_rir(config: AugmentConfig, rng: np.random.Generator, t60: Optional[float] = None) -> RirFilter:
    return _DEFAULT_RIR(config, rng, t60=t60)


@dataclass
class EnrollmentAugmenter:
    """Waveform-level enrollment augmentation with independent ``beta`` gates.

    ``kinds`` is an ordered subset of ``("noise", "reverb")``; each one is
    applied when its own gate fires. Feature-level SpecAugment is applied
    separately through :meth:`feature_transform`.
    """

    config: AugmentConfig = field(default_factory=AugmentConfig)
    kinds: Tuple[str, ...] = ()
    noise_source: Optional[object] = None
    rir_generator: Optional[RirGenerator] = None

    def __post_init__(self):
        unknown = set(self.kinds) - {"noise", "reverb"}
        if unknown:
            raise ValueError(f"unknown waveform augmentations {sorted(unknown)}")
        if "noise" in self.kinds and self.noise_source is None:
            self.noise_source = make_noise_source()
        if "reverb" in self.kinds and self.rir_generator is None:
            self.rir_generator = _DEFAULT_RIR

    def __call__(self, c: AudioSignal, rng: np.random.Generator, enabled: bool = True) -> Tuple[AudioSignal, List[str]]:
        events: List[str] = []
        if not enabled:
            return c, events
        for kind in self.kinds:
            if not gate(self.config.beta, rng):
                continue
            if kind == "noise":
                snr = float(rng.uniform(*self.config.snr_range_db))
                c = mix_noise(c, self.noise_source(len(c), rng), snr)
            else:
                c = apply_reverb(c, self.rir_generator(self.config, rng))
            events.append(kind)
        return c, events

    def feature_transform(self, feats, rng: np.random.Generator, events: Optional[List[str]] = None):
        if gate(self.config.beta, rng):
            if events is not None:
                events.append("specaugment")
            return spec_augment(feats, self.config, rng)
        return feats


def count_events(events: List[List[str]]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for ev in events:
        for e in ev:
            counts[e] = counts.get(e, 0) + 1
    return counts
