"""
Training a tiny extractor with and without self-estimated enrollment
====================================================================

Trains the same small model twice on a synthetic two-speaker corpus, once
with plain enrollments and once adding the second pass that re-enrolls
from the model's own estimate. Both runs are scored on mixtures not seen
in training (same speakers, new pairings). The last few epoch checkpoints
are then averaged and scored again.

At this size the second pass mostly slows convergence; the script shows
the mechanics, not a benefit.

Run: python3 demos/toy_training.py  (about 40 s on one core)
"""

# %%
import dataclasses

import numpy as np
import torch

from tseaug.data import TseDataset
from tseaug.evaluation import evaluate, report
from tseaug.synth import make_corpus
from tseaug.training import TrainConfig, Trainer, average_checkpoints, model_from_checkpoint

torch.set_num_threads(1)
corpus = make_corpus(num_speakers=4, utts_per_speaker=6, num_mixtures=72, seconds=1.0, seed=0)
train_set = TseDataset(corpus.mixtures[:64], corpus.utterances, load=corpus.load)
test_set = TseDataset(corpus.mixtures[64:], corpus.utterances, load=corpus.load)

base = TrainConfig(epochs=8, segment_seconds=1.0, initial_lr=2e-3, final_lr=2e-4, batch_size=4,
                   embed_dim=16, encoder_channels=4, encoder_blocks=(1, 1, 1, 1),
                   extractor_channels=16, extractor_depth=1, num_bands=8)

# %% two runs that differ only in the augmentation list
results, finals = [], {}
for name, augs in (("plain", ()), ("ssa_multi", ("ssa_multi",))):
    trainer = Trainer(dataclasses.replace(base, augmentations=augs), train_set)
    checkpoints = trainer.fit()
    losses = [r.loss.item() for r in trainer.history]
    print(f"{name:10s} loss {np.mean(losses[:2]):7.2f} -> {np.mean(losses[-2:]):7.2f} over {trainer.step} steps")
    results.append(evaluate(trainer.model, test_set, label=name))
    finals[name] = checkpoints

# %% average the last five epochs of the augmented run
avg = average_checkpoints(finals["ssa_multi"][-5:])
results.append(evaluate(model_from_checkpoint(avg), test_set, label="ssa_multi avg5"))

text, _ = report(results)
print(text)
