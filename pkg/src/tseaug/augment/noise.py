"""Additive-noise augmentation at a controlled SNR."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from ..data import AudioSignal, UtteranceRecord, read_wav
from ..synth import SyntheticNoiseSource

logger = logging.getLogger(__name__)


def snr_to_alpha(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 20.0)


def fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    """Loop ``noise`` until it covers ``n`` samples, then crop from the start."""
    if noise.shape[0] < n:
        noise = np.tile(noise, int(np.ceil(n / noise.shape[0])))
    return noise[:n]


def mix_noise(c: AudioSignal, noise: AudioSignal, snr_db: float) -> AudioSignal:
    """Return ``c + alpha * n'`` where ``n'`` is ``noise`` rescaled to the RMS of ``c``.

    With ``alpha = 10 ** (-snr_db / 20)`` the power ratio between ``c`` and
    the added noise is exactly ``snr_db``.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    if noise.sample_rate != c.sample_rate:
        raise ValueError(f"sample-rate mismatch: {c.sample_rate} vs {noise.sample_rate}")
    x = c.samples.astype(np.float64)
    n = fit_length(noise.samples.astype(np.float64), x.shape[0])
    p_c = np.mean(x ** 2)
    p_n = np.mean(n ** 2)
    if p_c == 0.0:
        logger.warning("enrollment is digitally silent; SNR undefined, leaving it unchanged")
        return c
    if p_n == 0.0:
        logger.warning("noise segment is digitally silent; leaving enrollment unchanged")
        return c
    added = snr_to_alpha(snr_db) * n * np.sqrt(p_c / p_n)
    return AudioSignal((x + added).astype(c.samples.dtype), c.sample_rate)


class ManifestNoiseSource:
    """Random noise segments from a manifest of noise files (e.g. a MUSAN noise list)."""

    def __init__(self, records: Sequence[UtteranceRecord], load: Callable[[str], AudioSignal] = read_wav):
        if not records:
            raise ValueError("empty noise manifest")
        self.records = list(records)
        self.load = load

    def __call__(self, n: int, rng: np.random.Generator) -> AudioSignal:
        rec = self.records[int(rng.integers(len(self.records)))]
        sig = self.load(rec.path).samples
        if sig.shape[0] > n:
            start = int(rng.integers(0, sig.shape[0] - n + 1))
            sig = sig[start:start + n]
        return AudioSignal(fit_length(sig, n))


def make_noise_source(records: Optional[Sequence[UtteranceRecord]] = None):
    return ManifestNoiseSource(records) if records else SyntheticNoiseSource()
