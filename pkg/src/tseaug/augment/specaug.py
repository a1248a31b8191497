"""Time and frequency masking of Fbank features."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch


class MaskParams(NamedTuple):
    t_start: int
    t_len: int
    f_start: int
    f_len: int


def sample_mask(num_frames: int, num_bins: int, config, rng: np.random.Generator) -> MaskParams:
    """Draw ``t_s ~ floor(U(0,T))``, ``t_l ~ floor(U(0,time_mask_max))`` and likewise for frequency."""
    if num_frames < 1 or num_bins < 1:
        raise ValueError("features must have at least one frame and one bin")
    return MaskParams(
        int(np.floor(rng.uniform(0, num_frames))),
        int(np.floor(rng.uniform(0, config.time_mask_max))),
        int(np.floor(rng.uniform(0, num_bins))),
        int(np.floor(rng.uniform(0, config.freq_mask_max))),
    )


def mask_matrix(num_frames: int, num_bins: int, params: MaskParams) -> np.ndarray:
    """0/1 matrix zeroing rows ``[t_s, t_s + t_l]`` and columns ``[f_s, f_s + f_l]`` (inclusive, clipped)."""
    m = np.ones((num_frames, num_bins))
    m[params.t_start:params.t_start + params.t_len + 1, :] = 0.0
    m[:, params.f_start:params.f_start + params.f_len + 1] = 0.0
    return m


def spec_augment(feats, config, rng: np.random.Generator, return_params: bool = False):
    """Mask one time span and one frequency span of a ``(T, F)`` feature matrix.

    Accepts numpy arrays or torch tensors and returns the same kind.
    Unmasked entries are returned bit-identical.
    """
    T, F = feats.shape[-2], feats.shape[-1]
    params = sample_mask(T, F, config, rng)
    t0, t1 = params.t_start, params.t_start + params.t_len + 1
    f0, f1 = params.f_start, params.f_start + params.f_len + 1
    out = feats.clone() if isinstance(feats, torch.Tensor) else np.array(feats, copy=True)
    out[..., t0:t1, :] = 0
    out[..., :, f0:f1] = 0
    return (out, params) if return_params else out
