"""
Enrollment augmentation, one step at a time
===========================================

Builds a synthetic utterance, then corrupts it with additive noise,
simulated room reverberation and SpecAugment masking. Each step prints a
number you can check against the setting that produced it.

Run: python3 demos/enrollment_augmentation.py  (writes demos/out/augmentation.png)
"""

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from tseaug.augment import AugmentConfig, apply_reverb, generate_rir, mix_noise, schroeder_t60, spec_augment
from tseaug.features import fbank
from tseaug.synth import make_speakers, synth_utterance, white_noise

rng = np.random.default_rng(0)
speaker = make_speakers(1, rng)[0]
c = synth_utterance(speaker, 2.0, rng)
print(f"clean enrollment: {len(c)} samples, rms {np.sqrt(np.mean(c.samples ** 2)):.3f}")

# %% Noise: the residual y - c has exactly the requested SNR against c
for snr in (-5, 0, 5, 15):
    y = mix_noise(c, white_noise(len(c), rng), snr)
    resid = y.samples - c.samples
    measured = 10 * np.log10(np.sum(c.samples ** 2) / np.sum(resid ** 2))
    print(f"noise  target {snr:+5.1f} dB  measured {measured:+6.2f} dB")

# %% Reverb: the Schroeder decay of each simulated RIR lands near its target T60
config = AugmentConfig()
for t60 in (0.2, 0.4, 0.7):
    h = generate_rir(config, rng, t60=t60)
    room = " x ".join(f"{v:.1f}" for v in h.room)
    print(f"reverb target {t60:.2f} s  measured {schroeder_t60(h.taps, h.sample_rate):.2f} s  room {room} m")
reverberant = apply_reverb(c, h)

# %% SpecAugment: one time span and one frequency span are zeroed
feats = fbank(reverberant.samples).numpy()
masked, params = spec_augment(feats, config, rng, return_params=True)
print(f"specaugment {params}; zeroed entries {np.mean(masked == 0):.1%}")

# %%
out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
for ax, img, title in zip(axes, (fbank(c.samples).numpy(), feats, masked),
                          ("clean fbank", "reverberant fbank", "after SpecAugment")):
    ax.imshow(img.T, origin="lower", aspect="auto")
    ax.set_title(title)
axes[-1].set_xlabel("frame")
fig.tight_layout()
fig.savefig(out / "augmentation.png", dpi=90)
print(f"figure written to {out / 'augmentation.png'}")
