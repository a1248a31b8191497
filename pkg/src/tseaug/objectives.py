"""Training losses and separation metrics.

Losses operate on torch tensors with a leading batch axis and return batch
means. Metrics operate on single numpy signals in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

EPS = 1e-8
METRIC_CAP_DB = 60.0


def si_sdr(s: torch.Tensor, s_hat: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Scale-invariant SDR in dB over the last axis.

    ``eps`` is added to the projected-target and residual energies only; the
    projection itself uses the exact reference energy.
    """
    if s.shape != s_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(s_hat.shape)}")
    energy = torch.sum(s * s, dim=-1, keepdim=True)
    if torch.any(energy == 0):
        raise ValueError("reference signal is identically zero")
    alpha = torch.sum(s_hat * s, dim=-1, keepdim=True) / energy
    proj = alpha * s
    resid = s_hat - proj
    return 10 * torch.log10((torch.sum(proj * proj, dim=-1) + eps) / (torch.sum(resid * resid, dim=-1) + eps))


def si_sdr_loss(s: torch.Tensor, s_hat: torch.Tensor) -> torch.Tensor:
    return -si_sdr(s, s_hat).mean()


def ce_loss(logits: torch.Tensor, label) -> torch.Tensor:
    """Mean ``-log softmax(logits)[label]``."""
    label = torch.as_tensor(label, dtype=torch.long)
    if logits.dim() == 1:
        logits, label = logits[None], label.reshape(1)
    n = logits.shape[-1]
    if n < 2:
        raise ValueError("need at least two classes")
    if torch.any(label < 0) or torch.any(label >= n):
        raise ValueError(f"label out of range for {n} classes")
    return F.cross_entropy(logits, label)


@dataclass
class LossValue:
    total: torch.Tensor
    components: Dict[str, float] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.total.detach())


def combined_loss(s, s_hat, logits, label, gamma: float) -> LossValue:
    """``(1 - gamma) * L_si-sdr + gamma * L_ce``; with ``gamma == 0`` the CE term is not added at all."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    l_sisdr = si_sdr_loss(s, s_hat)
    comps = {"si_sdr": float(l_sisdr.detach())}
    if gamma == 0.0:
        total = l_sisdr
        if logits is not None:
            comps["ce"] = float(ce_loss(logits.detach(), label))
    else:
        l_ce = ce_loss(logits, label)
        comps["ce"] = float(l_ce.detach())
        total = (1 - gamma) * l_sisdr + gamma * l_ce
    return LossValue(total, comps)


# A model maps (mixture (B, L), enrollment list) to (estimate (B, L), logits).
TSEForward = Callable[..., tuple]


def ssa_single(mixture, enrollments: Sequence, target, label, model: TSEForward, gamma: float,
               fired: Sequence[bool], feature_transform=None) -> LossValue:
    """Self-estimated speech augmentation, single optimisation.

    Examples whose gate fired use the model's own first-pass estimate
    (computed without autograd) as enrollment for the second pass; the rest
    keep their original enrollment. Only the second pass is scored.
    """
    fired = list(fired)
    if not any(fired):
        est, logits = model(mixture, enrollments, feature_transform)
        return combined_loss(target, est, logits, label, gamma)
    with torch.no_grad():
        first, _ = model(mixture, enrollments, feature_transform)
    c_aug = [first[i] if f else enrollments[i] for i, f in enumerate(fired)]

    def transform(feats, i):
        return feats if fired[i] or feature_transform is None else feature_transform(feats, i)

    est, logits = model(mixture, c_aug, transform)
    out = combined_loss(target, est, logits, label, gamma)
    out.components["ssa_fired"] = float(sum(fired))
    return out


def ssa_multi(mixture, enrollments: Sequence, target, label, model: TSEForward, gamma: float,
              beta: float, feature_transform=None) -> LossValue:
    """Self-estimated speech augmentation, multi optimisation: ``(1 - beta) L1 + beta L2``.

    ``L1`` scores the pass with the original enrollment; ``L2`` scores a
    second pass whose enrollment is the first-pass estimate, detached.
    The CE term of ``L2`` classifies the estimate's embedding against the
    target speaker label.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    est1, logits1 = model(mixture, enrollments, feature_transform)
    l1 = combined_loss(target, est1, logits1, label, gamma)
    comps = dict(l1.components)
    comps["l1"] = l1.item()
    if beta == 0.0:
        return LossValue(l1.total, comps)
    est2, logits2 = model(mixture, list(est1.detach()))
    l2 = combined_loss(target, est2, logits2, label, gamma)
    comps["l2"] = l2.item()
    comps.update({f"{k}_2": v for k, v in l2.components.items()})
    return LossValue((1 - beta) * l1.total + beta * l2.total, comps)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def si_sdr_db(s, s_hat, eps: float = EPS, cap: float = METRIC_CAP_DB) -> float:
    """SI-SDR of one estimate in dB, capped at ``cap``."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {s_hat.shape}")
    energy = np.dot(s, s)
    if energy == 0:
        raise ValueError("reference signal is identically zero")
    proj = np.dot(s_hat, s) / energy * s
    resid = s_hat - proj
    value = 10 * np.log10((np.dot(proj, proj) + eps) / (np.dot(resid, resid) + eps))
    return float(min(value, cap))


def sdr_metric(s, s_hat, cap: float = METRIC_CAP_DB) -> float:
    """Plain SDR ``10 log10(|s|^2 / |s - s_hat|^2)``, capped at ``cap`` (no BSS-eval filtering)."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {s_hat.shape}")
    num = np.dot(s, s)
    if num == 0:
        raise ValueError("reference signal is identically zero")
    err = s - s_hat
    den = np.dot(err, err)
    if den == 0:
        return cap
    return float(min(10 * np.log10(num / den), cap))
