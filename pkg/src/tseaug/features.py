"""STFT analysis/synthesis and log-mel Fbank features.

Waveforms are torch tensors of shape ``(..., L)``; numpy arrays and
:class:`~tseaug.data.AudioSignal` are accepted and converted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .data import SAMPLE_RATE, AudioSignal


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    win_length: int = 512
    hop_length: int = 128
    sample_rate: int = SAMPLE_RATE

    @property
    def num_bins(self) -> int:
        return self.n_fft // 2 + 1

    def num_frames(self, length: int) -> int:
        # centred framing
        return 1 + length // self.hop_length


@dataclass(frozen=True)
class FbankConfig:
    num_mel_bins: int = 80
    frame_length: int = 400  # 25 ms
    frame_shift: int = 160  # 10 ms
    n_fft: int = 512
    sample_rate: int = SAMPLE_RATE
    low_freq: float = 20.0
    high_freq: float = 0.0  # <= 0 means offset from Nyquist
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    dither: float = 0.0
    cmn: bool = True

    def num_frames(self, length: int) -> int:
        if length < self.frame_length:
            return 0
        return 1 + (length - self.frame_length) // self.frame_shift


DEFAULT_STFT = StftConfig()
DEFAULT_FBANK = FbankConfig()


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, AudioSignal):
        x = x.samples
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if not torch.is_floating_point(x):
        x = x.float()
    return x


@lru_cache(maxsize=8)
def _hann(n: int, dtype: torch.dtype) -> torch.Tensor:
    return torch.hann_window(n, periodic=True, dtype=dtype)


def stft(x, config: StftConfig = DEFAULT_STFT) -> torch.Tensor:
    """Complex spectrogram of shape ``(..., F, T)`` with ``F = n_fft // 2 + 1``.

    Frames are centred with reflect padding, so ``T = 1 + L // hop``.
    """
    x = as_tensor(x)
    if x.shape[-1] < config.win_length:
        raise ValueError(f"signal of {x.shape[-1]} samples is shorter than the {config.win_length}-sample window")
    lead = x.shape[:-1]
    spec = torch.stft(
        x.reshape(-1, x.shape[-1]),
        n_fft=config.n_fft,
        hop_length=config.hop_length,
        win_length=config.win_length,
        window=_hann(config.win_length, x.dtype),
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec.reshape(*lead, *spec.shape[-2:])


def istft(spec: torch.Tensor, length: int, config: StftConfig = DEFAULT_STFT) -> torch.Tensor:
    """Inverse of :func:`stft`, trimmed or padded to ``length`` samples."""
    if not torch.is_complex(spec):
        raise ValueError("istft expects a complex spectrogram")
    if spec.shape[-2] != config.num_bins:
        raise ValueError(f"expected {config.num_bins} frequency bins, got {spec.shape[-2]}")
    lead = spec.shape[:-2]
    real_dtype = spec.real.dtype
    wav = torch.istft(
        spec.reshape(-1, *spec.shape[-2:]),
        n_fft=config.n_fft,
        hop_length=config.hop_length,
        win_length=config.win_length,
        window=_hann(config.win_length, real_dtype),
        center=True,
        length=length,
    )
    return wav.reshape(*lead, length)


def _mel(f):
    return 1127.0 * np.log1p(np.asarray(f) / 700.0)


@lru_cache(maxsize=8)
def mel_filterbank(config: FbankConfig = DEFAULT_FBANK) -> np.ndarray:
    """Triangular filters on the mel scale, shape ``(num_mel_bins, n_fft // 2 + 1)``."""
    nyquist = config.sample_rate / 2
    high = config.high_freq if config.high_freq > 0 else nyquist + config.high_freq
    edges = np.linspace(_mel(config.low_freq), _mel(high), config.num_mel_bins + 2)
    bins_mel = _mel(np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft)
    fb = np.zeros((config.num_mel_bins, bins_mel.shape[0]))
    for m in range(config.num_mel_bins):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        up = (bins_mel - left) / (centre - left)
        down = (right - bins_mel) / (right - centre)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def fbank(x, config: FbankConfig = DEFAULT_FBANK, generator: torch.Generator = None) -> torch.Tensor:
    """Log mel filterbank energies of shape ``(..., T, num_mel_bins)``.

    Per frame: DC removal, pre-emphasis, Hamming window, power spectrum,
    mel integration, ``log(max(e, log_floor))``. With ``cmn`` the
    per-utterance mean over frames is subtracted.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    if n < config.frame_length:
        raise ValueError(f"signal of {n} samples is shorter than one {config.frame_length}-sample frame")
    if config.dither > 0:
        x = x + config.dither * torch.randn(x.shape, generator=generator, dtype=x.dtype)
    frames = x.unfold(-1, config.frame_length, config.frame_shift)
    frames = frames - frames.mean(dim=-1, keepdim=True)
    if config.preemphasis:
        prev = torch.cat([frames[..., :1], frames[..., :-1]], dim=-1)
        frames = frames - config.preemphasis * prev
    window = torch.hamming_window(config.frame_length, periodic=False, dtype=x.dtype)
    power = torch.fft.rfft(frames * window, n=config.n_fft).abs() ** 2
    fb = torch.from_numpy(mel_filterbank(config)).to(x.dtype)
    energies = power @ fb.T
    feats = torch.log(torch.clamp(energies, min=config.log_floor))
    if config.cmn:
        feats = feats - feats.mean(dim=-2, keepdim=True)
    return feats
