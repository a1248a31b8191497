"""Band-split RNN extraction module conditioned on a speaker embedding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .features import DEFAULT_STFT, StftConfig, istft, stft

Band = Tuple[int, int]


@dataclass(frozen=True)
class BandSplitScheme:
    """Contiguous inclusive ``(start_bin, end_bin)`` bands covering ``[0, F-1]``."""

    bands: Tuple[Band, ...]

    def __post_init__(self):
        if not self.bands:
            raise ValueError("band scheme is empty")
        expected = 0
        for start, end in self.bands:
            if start != expected or end < start:
                raise ValueError(f"bands must be contiguous and non-empty; got {self.bands}")
            expected = end + 1

    @property
    def num_bins(self) -> int:
        return self.bands[-1][1] + 1

    @property
    def widths(self) -> List[int]:
        return [e - s + 1 for s, e in self.bands]

    def __len__(self):
        return len(self.bands)

    def check(self, num_bins: int):
        if self.num_bins != num_bins:
            raise ValueError(f"band scheme covers {self.num_bins} bins, spectrogram has {num_bins}")


def scheme_from_edges(edges_hz: Sequence[float], config: StftConfig = DEFAULT_STFT) -> BandSplitScheme:
    """Bands between consecutive frequency edges; bins above the last edge form one final band."""
    hz_per_bin = config.sample_rate / config.n_fft
    edges = sorted({int(round(f / hz_per_bin)) for f in edges_hz} | {0})
    edges = [e for e in edges if e < config.num_bins]
    bands = [(a, b - 1) for a, b in zip(edges[:-1], edges[1:])]
    bands.append((edges[-1], config.num_bins - 1))
    return BandSplitScheme(tuple(bands))


def default_band_scheme(config: StftConfig = DEFAULT_STFT) -> BandSplitScheme:
    """100 Hz bands to 1 kHz, 250 Hz bands to 4 kHz, 500 Hz bands to 8 kHz, remainder as one band."""
    edges = (
        list(np.arange(0, 1000, 100))
        + list(np.arange(1000, 4000, 250))
        + list(np.arange(4000, 8001, 500))
    )
    return scheme_from_edges(edges, config)


def uniform_band_scheme(num_bins: int, num_bands: int) -> BandSplitScheme:
    cuts = np.linspace(0, num_bins, num_bands + 1).round().astype(int)
    return BandSplitScheme(tuple((int(a), int(b) - 1) for a, b in zip(cuts[:-1], cuts[1:])))


@dataclass(frozen=True)
class ExtractorConfig:
    num_channels: int = 256
    hidden: Optional[int] = None  # LSTM hidden size, default 2 * num_channels
    depth: int = 6
    embed_dim: int = 256
    scheme: Optional[BandSplitScheme] = None
    stft: StftConfig = field(default_factory=StftConfig)

    @property
    def band_scheme(self) -> BandSplitScheme:
        return self.scheme if self.scheme is not None else default_band_scheme(self.stft)


class BandSplit(nn.Module):
    """Per-band LayerNorm + Linear from the band's real/imag bins to ``N`` channels."""

    def __init__(self, scheme: BandSplitScheme, num_channels: int):
        super().__init__()
        self.scheme = scheme
        self.norm = nn.ModuleList(nn.LayerNorm(2 * w) for w in scheme.widths)
        self.fc = nn.ModuleList(nn.Linear(2 * w, num_channels) for w in scheme.widths)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        """``spec``: complex ``(B, F, T)`` -> real ``(B, N, K, T)``."""
        self.scheme.check(spec.shape[-2])
        x = torch.view_as_real(spec)  # (B, F, T, 2)
        outs = []
        for (start, end), norm, fc in zip(self.scheme.bands, self.norm, self.fc):
            band = x[:, start:end + 1]  # (B, w, T, 2)
            band = band.permute(0, 2, 1, 3).reshape(x.shape[0], x.shape[2], -1)
            outs.append(fc(norm(band)))  # (B, T, N)
        return torch.stack(outs, dim=1).permute(0, 3, 1, 2)


class SpeakerFusion(nn.Module):
    """Affine map of the embedding to ``N`` channels, broadcast over bands and frames, multiplied in."""

    def __init__(self, embed_dim: int, num_channels: int):
        super().__init__()
        self.adapter = nn.Linear(embed_dim, num_channels)

    def forward(self, feature: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        return feature * self.adapter(embedding)[:, :, None, None]


class ResidualRNN(nn.Module):
    """GroupNorm -> BLSTM along one axis -> Linear, added back to the input."""

    def __init__(self, num_channels: int, hidden: int):
        super().__init__()
        self.norm = nn.GroupNorm(1, num_channels)
        self.rnn = nn.LSTM(num_channels, hidden, batch_first=True, bidirectional=True)
        self.fc = nn.Linear(2 * hidden, num_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, N, A, S); the RNN runs over S independently for every A
        B, N, A, S = x.shape
        out = self.norm(x).permute(0, 2, 3, 1).reshape(B * A, S, N)
        out, _ = self.rnn(out)
        out = self.fc(out).reshape(B, A, S, N).permute(0, 3, 1, 2)
        return x + out


class BandSequenceModel(nn.Module):
    """Interleaved sequence-level (over T) and band-level (over K) residual RNNs."""

    def __init__(self, num_channels: int, hidden: int, depth: int):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be at least 1")
        self.seq = nn.ModuleList(ResidualRNN(num_channels, hidden) for _ in range(depth))
        self.band = nn.ModuleList(ResidualRNN(num_channels, hidden) for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for seq, band in zip(self.seq, self.band):
            x = seq(x)  # (B, N, K, T): over time
            x = band(x.transpose(2, 3)).transpose(2, 3)  # over bands
        return x


class MaskEstimator(nn.Module):
    """Per-band MLP producing a complex ratio mask; band masks are concatenated to the full mask."""

    def __init__(self, scheme: BandSplitScheme, num_channels: int):
        super().__init__()
        self.scheme = scheme
        self.mlp = nn.ModuleList(
            nn.Sequential(
                nn.LayerNorm(num_channels),
                nn.Linear(num_channels, 4 * num_channels),
                nn.Tanh(),
                nn.Linear(4 * num_channels, 2 * w),
            )
            for w in scheme.widths
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``(B, N, K, T)`` -> complex mask ``(B, F, T)``."""
        B, _, _, T = x.shape
        masks = []
        for k, (mlp, w) in enumerate(zip(self.mlp, self.scheme.widths)):
            m = mlp(x[:, :, k].transpose(1, 2))  # (B, T, 2w)
            masks.append(m.reshape(B, T, w, 2).transpose(1, 2))
        m = torch.cat(masks, dim=1).contiguous()
        return torch.view_as_complex(m)


def apply_mask(mask: torch.Tensor, spec: torch.Tensor) -> torch.Tensor:
    return mask * spec


class BSRNN(nn.Module):
    """Mixture waveform + speaker embedding -> target estimate waveform.

    The estimated complex mask multiplies the mixture spectrogram itself.
    """

    def __init__(self, config: ExtractorConfig = ExtractorConfig()):
        super().__init__()
        self.config = config
        scheme = config.band_scheme
        scheme.check(config.stft.num_bins)
        N = config.num_channels
        self.band_split = BandSplit(scheme, N)
        self.fusion = SpeakerFusion(config.embed_dim, N)
        self.separator = BandSequenceModel(N, config.hidden or 2 * N, config.depth)
        self.mask = MaskEstimator(scheme, N)

    def forward_spec(self, spec: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        z = self.band_split(spec)
        z = self.fusion(z, embedding)
        z = self.separator(z)
        return apply_mask(self.mask(z), spec)

    def forward(self, mixture: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        """``mixture``: ``(B, L)``, ``embedding``: ``(B, D)`` -> ``(B, L)``."""
        spec = stft(mixture, self.config.stft)
        est = self.forward_spec(spec, embedding)
        return istft(est, mixture.shape[-1], self.config.stft)
