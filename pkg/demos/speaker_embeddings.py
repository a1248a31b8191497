"""
Speaker embeddings and verification scoring
===========================================

Embeds every utterance of a small synthetic corpus with an untrained
encoder and scores all same/different-speaker pairs by cosine similarity.
Even random weights pick up the pitch and formant differences between
the synthetic voices, so the EER sits below chance.

Run: python3 demos/speaker_embeddings.py
"""

# %%
import itertools

import numpy as np
import torch

from tseaug.features import fbank
from tseaug.speaker_encoder import EncoderConfig, SpeakerEncoder, compute_eer, cosine_scores
from tseaug.synth import make_corpus

torch.manual_seed(0)
corpus = make_corpus(num_speakers=6, utts_per_speaker=6, num_mixtures=0, seconds=2.0, seed=1)
encoder = SpeakerEncoder(EncoderConfig(embed_dim=32, m_channels=8, num_blocks=(1, 1, 1, 1))).eval()

# %% one embedding per utterance
with torch.no_grad():
    feats = torch.stack([fbank(corpus.load(u.path).samples) for u in corpus.utterances])
    emb = encoder(feats.float()).numpy()
speakers = [u.speaker_id for u in corpus.utterances]
print(f"{len(emb)} embeddings of size {emb.shape[1]}")

# %% all trials
pairs = list(itertools.combinations(range(len(emb)), 2))
scores = cosine_scores(emb[[i for i, _ in pairs]], emb[[j for _, j in pairs]])
same = np.array([speakers[i] == speakers[j] for i, j in pairs])
print(f"{same.sum()} target / {(~same).sum()} non-target trials")
print(f"mean cosine: same speaker {scores[same].mean():.3f}, different {scores[~same].mean():.3f}")
print(f"EER {compute_eer(scores, same):.1%}")
