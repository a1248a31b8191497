"""Seeded synthetic speech and noise for desk-scale runs.

A synthetic speaker is a glottal pulse train with its own pitch range pushed
through its own set of formant resonators, gated by syllable-like envelopes.
Different speakers therefore have clearly different spectral envelopes,
which is all a toy extraction experiment needs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from .data import (
    SAMPLE_RATE,
    AudioSignal,
    MixtureRecord,
    UtteranceRecord,
    scale_to_tir,
    simulate_mixture,
    write_manifest,
    write_mixture_manifest,
    write_wav,
)


@dataclass(frozen=True)
class SyntheticSpeaker:
    speaker_id: str
    f0_range: Tuple[float, float]
    formants: Tuple[Tuple[float, float], ...]  # (centre Hz, bandwidth Hz)
    tilt: float = 0.97


def make_speakers(n: int, rng: np.random.Generator) -> List[SyntheticSpeaker]:
    """Speakers with pitch spread over 90-300 Hz and non-overlapping formant sets."""
    f0s = np.linspace(90, 260, n) if n > 1 else np.array([150.0])
    speakers = []
    for k in range(n):
        lo = float(f0s[k] * rng.uniform(0.95, 1.05))
        base = np.array([450.0, 1300.0, 2500.0, 3600.0]) * (0.8 + 0.5 * k / max(n - 1, 1))
        base = base * rng.uniform(0.95, 1.05, size=base.shape)
        bws = rng.uniform(60, 160, size=base.shape)
        speakers.append(SyntheticSpeaker(
            speaker_id=f"spk{k:02d}",
            f0_range=(lo, lo * 1.3),
            formants=tuple((float(f), float(b)) for f, b in zip(base, bws)),
        ))
    return speakers


def _resonator(x: np.ndarray, freq: float, bw: float, sr: int) -> np.ndarray:
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1 - r], a, x)


def _envelope(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    env = np.zeros(n)
    t = int(rng.uniform(0.0, 0.1) * sr)
    while t < n:
        syl = int(rng.uniform(0.12, 0.3) * sr)
        gap = int(rng.uniform(0.03, 0.15) * sr)
        seg = min(syl, n - t)
        env[t:t + seg] = np.hanning(syl)[:seg] * rng.uniform(0.5, 1.0)
        t += syl + gap
    return env


def synth_utterance(
    speaker: SyntheticSpeaker,
    seconds: float,
    rng: np.random.Generator,
    sr: int = SAMPLE_RATE,
    rms: float = 0.05,
) -> AudioSignal:
    n = int(round(seconds * sr))
    # smooth random pitch contour inside the speaker's range
    knots = rng.uniform(*speaker.f0_range, size=max(int(seconds * 4), 2))
    f0 = np.interp(np.linspace(0, len(knots) - 1, n), np.arange(len(knots)), knots)
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    source = lfilter([1.0], [1.0, -speaker.tilt], pulses) + 0.02 * rng.standard_normal(n)
    voiced = sum(_resonator(source, f, b, sr) for f, b in speaker.formants)
    x = voiced * _envelope(n, sr, rng)
    x = x - x.mean()
    x = x * (rms / (np.sqrt(np.mean(x ** 2)) + 1e-12))
    return AudioSignal(x.astype(np.float32), sr)


def white_noise(n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> AudioSignal:
    return AudioSignal(rng.standard_normal(n).astype(np.float32), sr)


def pink_noise(n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> AudioSignal:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0], dtype=float)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return AudioSignal((x / x.std()).astype(np.float32), sr)


def babble_noise(n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE, talkers: int = 5) -> AudioSignal:
    spk = make_speakers(talkers, rng)
    x = sum(synth_utterance(s, n / sr, rng, sr).samples.astype(float) for s in spk)
    return AudioSignal((x / (x.std() + 1e-12)).astype(np.float32), sr)


NOISE_KINDS = {"white": white_noise, "pink": pink_noise, "babble": babble_noise}


class SyntheticNoiseSource:
    """Draws seeded noise segments of the requested length (white, pink or babble-like)."""

    def __init__(self, kinds: Sequence[str] = ("white", "pink", "babble")):
        unknown = set(kinds) - set(NOISE_KINDS)
        if unknown:
            raise ValueError(f"unknown noise kinds {sorted(unknown)}")
        self.kinds = list(kinds)

    def __call__(self, n: int, rng: np.random.Generator) -> AudioSignal:
        kind = self.kinds[int(rng.integers(len(self.kinds)))]
        return NOISE_KINDS[kind](n, rng)


@dataclass
class SyntheticCorpus:
    """In-memory utterances and mixtures; ``audio`` maps keys to signals."""

    speakers: List[SyntheticSpeaker]
    utterances: List[UtteranceRecord]
    mixtures: List[MixtureRecord]
    audio: Dict[str, AudioSignal]

    def load(self, key: str) -> AudioSignal:
        return self.audio[key]


def make_corpus(
    num_speakers: int = 4,
    utts_per_speaker: int = 3,
    num_mixtures: int = 8,
    seconds: float = 1.0,
    enroll_seconds: Optional[float] = None,
    tir_range_db: Tuple[float, float] = (-5.0, 5.0),
    noise_snr_db: Optional[float] = None,
    seed: int = 0,
) -> SyntheticCorpus:
    """Build a small two-speaker corpus.

    Targets cycle through speakers so each one appears as a target; the
    interferer is a different random speaker. Interference gain follows a
    uniform target-to-interference ratio in ``tir_range_db``.
    """
    rng = np.random.default_rng(seed)
    speakers = make_speakers(num_speakers, rng)
    audio: Dict[str, AudioSignal] = {}
    utts: List[UtteranceRecord] = []
    by_spk: Dict[str, List[str]] = {}
    for spk in speakers:
        for j in range(utts_per_speaker):
            uid = f"{spk.speaker_id}-u{j:03d}"
            dur = enroll_seconds or seconds
            sig = synth_utterance(spk, dur, rng)
            key = f"utt/{uid}"
            audio[key] = sig
            utts.append(UtteranceRecord(uid, spk.speaker_id, key, sig.duration))
            by_spk.setdefault(spk.speaker_id, []).append(uid)

    mixtures = []
    for m in range(num_mixtures):
        t_spk = speakers[m % num_speakers]
        others = [s for s in speakers if s.speaker_id != t_spk.speaker_id]
        i_spk = others[int(rng.integers(len(others)))]
        t_utt = by_spk[t_spk.speaker_id][int(rng.integers(utts_per_speaker))]
        i_utt = by_spk[i_spk.speaker_id][int(rng.integers(utts_per_speaker))]
        target = audio[f"utt/{t_utt}"]
        n = int(round(seconds * SAMPLE_RATE))
        target = AudioSignal(target.samples[:n])
        interference = AudioSignal(audio[f"utt/{i_utt}"].samples[:n])
        interference = scale_to_tir(target, interference, rng.uniform(*tir_range_db))
        noise = None
        if noise_snr_db is not None:
            raw = white_noise(len(target), rng).samples
            p = np.mean(target.samples.astype(float) ** 2)
            noise = AudioSignal((raw * np.sqrt(p) * 10 ** (-noise_snr_db / 20)).astype(np.float32))
        mix = simulate_mixture(target, interference, noise)
        mid = f"mix{m:04d}"
        keys = {k: f"mix/{mid}/{k}" for k in ("mixture", "target", "interference", "noise")}
        audio[keys["mixture"]] = mix
        audio[keys["target"]] = target
        audio[keys["interference"]] = interference
        if noise is not None:
            audio[keys["noise"]] = noise
        mixtures.append(MixtureRecord(
            mid, keys["mixture"], keys["target"], keys["interference"],
            keys["noise"] if noise is not None else None,
            t_spk.speaker_id, t_utt, mix.duration,
        ))
    return SyntheticCorpus(speakers, utts, mixtures, audio)


def write_corpus(corpus: SyntheticCorpus, out_dir) -> Tuple[Path, Path]:
    """Write a corpus as WAV files plus ``utterances.tsv`` and ``mixtures.tsv``."""
    out = Path(out_dir)
    paths = {}
    for key, sig in corpus.audio.items():
        p = out / (key + ".wav")
        write_wav(p, sig)
        paths[key] = str(p)
    utts = [UtteranceRecord(r.utterance_id, r.speaker_id, paths[r.path], r.duration) for r in corpus.utterances]
    mixes = [
        MixtureRecord(
            r.mixture_id, paths[r.mixture_path], paths[r.target_path], paths[r.interference_path],
            paths[r.noise_path] if r.noise_path else None, r.target_speaker_id,
            r.target_utterance_id, r.duration,
        )
        for r in corpus.mixtures
    ]
    write_manifest(out / "utterances.tsv", utts, relative_to=out)
    write_mixture_manifest(out / "mixtures.tsv", mixes, relative_to=out)
    return out / "utterances.tsv", out / "mixtures.tsv"
