"""Target speaker extraction model: enrollment -> Fbank -> encoder -> embedding -> BSRNN."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .data import AudioSignal
from .extractor import BSRNN, ExtractorConfig
from .features import DEFAULT_FBANK, FbankConfig, as_tensor, fbank
from .speaker_encoder import ClassifierHead, EncoderConfig, SpeakerEncoder, encode

FeatureTransform = Callable[[torch.Tensor, int], torch.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    fbank: FbankConfig = DEFAULT_FBANK
    num_speakers: int = 2

    def __post_init__(self):
        if self.encoder.embed_dim != self.extractor.embed_dim:
            raise ValueError("encoder and extractor embedding sizes differ")
        if self.encoder.feat_dim != self.fbank.num_mel_bins:
            raise ValueError("encoder feat_dim must equal the number of mel bins")


class TSEModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.encoder = SpeakerEncoder(config.encoder)
        self.head = ClassifierHead(config.encoder.embed_dim, config.num_speakers)
        self.extractor = BSRNN(config.extractor)

    def features(self, enrollment: torch.Tensor) -> torch.Tensor:
        wav = enrollment
        n = self.config.fbank.frame_length
        if wav.shape[-1] < n:
            wav = torch.nn.functional.pad(wav, (0, n - wav.shape[-1]))
        dtype = next(self.parameters()).dtype
        return fbank(wav.to(dtype), self.config.fbank)

    def embed(
        self,
        enrollments: Sequence,
        feature_transform: Optional[FeatureTransform] = None,
    ) -> torch.Tensor:
        """Embeddings ``(B, D)`` for a list of 1-D enrollment waveforms.

        ``feature_transform(feats, index)`` is applied to each ``(T, F)``
        Fbank matrix before encoding (SpecAugment hooks in here).
        """
        feats = []
        for i, wav in enumerate(enrollments):
            f = self.features(as_tensor(wav))
            if feature_transform is not None:
                f = feature_transform(f, i)
            feats.append(f)
        return encode(feats, self.encoder, "frozen" if self.encoder.frozen else "trainable")

    def forward(
        self,
        mixture: torch.Tensor,
        enrollments: Sequence,
        feature_transform: Optional[FeatureTransform] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return the target estimate ``(B, L)`` and speaker logits ``(B, num_speakers)``."""
        e = self.embed(enrollments, feature_transform)
        return self.extractor(mixture, e), self.head(e)

    @torch.no_grad()
    def extract(self, mixture, enrollment) -> np.ndarray:
        """Eval-mode extraction for a single mixture/enrollment pair (numpy in, numpy out)."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            x = as_tensor(mixture).to(dtype)[None]
            est, _ = self(x, [as_tensor(enrollment).to(dtype)])
        finally:
            self.train(was_training)
        return est[0].numpy()
