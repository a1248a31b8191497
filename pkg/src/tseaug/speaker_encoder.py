"""ResNet speaker encoder with temporal statistics pooling, classifier head and EER."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class EncoderConfig:
    feat_dim: int = 80
    embed_dim: int = 256
    m_channels: int = 32
    num_blocks: Tuple[int, ...] = (3, 4, 6, 3)  # ResNet34
    min_frames: int = 16
    length_norm: bool = False


class BasicBlock(nn.Module):
    def __init__(self, in_planes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def statistics_pooling(x: torch.Tensor) -> torch.Tensor:
    """Concatenate mean and standard deviation over the last (time) axis."""
    mean = x.mean(dim=-1)
    std = torch.sqrt(x.var(dim=-1, unbiased=True) + 1e-5)
    return torch.cat([mean, std], dim=-1)


class SpeakerEncoder(nn.Module):
    """2-D ResNet over ``(T, F)`` Fbank features producing a ``embed_dim`` vector.

    Channel widths double per stage from ``m_channels``; stages 2-4 stride by
    two in both axes. Depth per stage comes from ``num_blocks`` so tests can
    use a one-block-per-stage toy.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.config = config
        m = config.m_channels
        self.conv1 = nn.Conv2d(1, m, 3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(m)
        in_planes = m
        strides = (1, 2, 2, 2)
        f = config.feat_dim
        for i, (blocks, stride) in enumerate(zip(config.num_blocks, strides)):
            planes = m * 2 ** i
            layers = []
            for j in range(blocks):
                layers.append(BasicBlock(in_planes, planes, stride if j == 0 else 1))
                in_planes = planes
            setattr(self, f"layer{i + 1}", nn.Sequential(*layers))
            if stride == 2:
                f = (f - 1) // 2 + 1
        self.num_stages = len(config.num_blocks)
        self.stats_dim = in_planes * f
        self.seg_1 = nn.Linear(self.stats_dim * 2, config.embed_dim)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """``feats``: ``(B, T, F)`` -> embeddings ``(B, embed_dim)``."""
        if not torch.isfinite(feats).all():
            raise ValueError("speaker encoder received non-finite features")
        feats = pad_frames(feats, self.config.min_frames)
        x = feats.transpose(1, 2).unsqueeze(1)  # (B, 1, F, T)
        x = F.relu(self.bn1(self.conv1(x)))
        for i in range(self.num_stages):
            x = getattr(self, f"layer{i + 1}")(x)
        x = x.reshape(x.shape[0], -1, x.shape[-1])
        e = self.seg_1(statistics_pooling(x))
        if self.config.length_norm:
            e = F.normalize(e, dim=-1)
        return e

    def freeze(self):
        """Stop gradients and running-statistic updates (pretrained, frozen mode)."""
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return getattr(self, "_frozen", False)

    def train(self, mode: bool = True):
        # a frozen encoder stays in eval mode so BatchNorm statistics never move
        return super().train(mode and not self.frozen)


def pad_frames(feats: torch.Tensor, min_frames: int) -> torch.Tensor:
    """Repeat short feature sequences along time until they reach ``min_frames``."""
    T = feats.shape[-2]
    if T >= min_frames:
        return feats
    reps = -(-min_frames // T)
    return torch.cat([feats] * reps, dim=-2)[..., :min_frames, :]


def encode(
    feats: Union[torch.Tensor, Sequence[torch.Tensor]],
    encoder: SpeakerEncoder,
    mode: str = "trainable",
) -> torch.Tensor:
    """Embed a ``(B, T, F)`` batch or a list of ``(T_i, F)`` features.

    In ``frozen`` mode the encoder runs without autograd, so no gradient can
    reach its parameters.
    """
    if mode not in ("frozen", "trainable"):
        raise ValueError(f"mode must be 'frozen' or 'trainable', got {mode!r}")
    ctx = torch.no_grad() if mode == "frozen" or encoder.frozen else torch.enable_grad()
    with ctx:
        if isinstance(feats, torch.Tensor):
            return encoder(feats)
        lengths = {f.shape[0] for f in feats}
        if len(lengths) == 1:
            return encoder(torch.stack(list(feats)))
        return torch.cat([encoder(f.unsqueeze(0)) for f in feats])


class ClassifierHead(nn.Module):
    """Speaker classification logits ``W e`` (softmax lives in the loss)."""

    def __init__(self, embed_dim: int, num_speakers: int):
        super().__init__()
        if num_speakers < 2:
            raise ValueError("classifier needs at least two speakers")
        self.weight = nn.Parameter(torch.empty(num_speakers, embed_dim))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[-1] != self.weight.shape[1]:
            raise ValueError(f"embedding dim {e.shape[-1]} does not match head dim {self.weight.shape[1]}")
        return e @ self.weight.T


def cosine_scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return np.sum(a * b, axis=-1)


def compute_eer(scores, same_speaker) -> float:
    """Equal error rate of verification scores (higher = more likely same speaker).

    The crossing of false-accept and false-reject rates is linearly
    interpolated between neighbouring ROC operating points.
    """
    from sklearn.metrics import roc_curve

    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(same_speaker, dtype=bool)
    if labels.all() or not labels.any():
        raise ValueError("EER needs both target and non-target trials")
    fpr, tpr, _ = roc_curve(labels, scores)
    fnr = 1.0 - tpr
    diff = fnr - fpr
    i = int(np.argmax(diff <= 0))
    if i == 0:
        return float(fpr[0])
    # diff[i-1] > 0 >= diff[i]
    w = diff[i - 1] / (diff[i - 1] - diff[i])
    return float(fpr[i - 1] + w * (fpr[i] - fpr[i - 1]))
