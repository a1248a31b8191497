import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tseaug.data import AudioSignal
from tseaug.features import DEFAULT_STFT, FbankConfig, StftConfig, fbank, istft, mel_filterbank, stft


def test_stft_shape_and_zero(rng):
    x = np.zeros(16000)
    spec = stft(x)
    assert spec.shape == (257, 1 + 16000 // 128)
    assert torch.count_nonzero(spec) == 0
    assert torch.count_nonzero(istft(spec, 16000)) == 0


def test_stft_rejects_short_and_bad_inputs():
    with pytest.raises(ValueError):
        stft(np.zeros(100))
    with pytest.raises(ValueError):
        istft(torch.zeros(257, 10), 1000)
    with pytest.raises(ValueError):
        istft(torch.zeros(100, 10, dtype=torch.complex64), 1000)


def test_tone_peaks_at_expected_bin():
    fs = 16000
    x = np.sin(2 * np.pi * 1000 * np.arange(fs) / fs)
    spec = stft(x).abs()
    expect = round(1000 * DEFAULT_STFT.n_fft / fs)
    assert torch.all(spec.argmax(dim=0)[2:-2] == expect)


@settings(max_examples=20, deadline=None)
@given(st.floats(-100, 100, allow_nan=False), st.integers(0, 2 ** 31))
def test_stft_linear(a, seed):
    x = torch.tensor(np.random.default_rng(seed).standard_normal(2048))
    torch.testing.assert_close(stft(a * x), a * stft(x), rtol=1e-9, atol=1e-9)


def test_perfect_reconstruction(rng):
    for n in (512, 16000, 4.7 * 16000, 12345):
        x = torch.tensor(rng.standard_normal(int(n)))
        y = istft(stft(x), x.shape[-1])
        assert float((x - y).norm() / x.norm()) <= 1e-6


def test_batched_stft_matches_single(rng):
    x = torch.tensor(rng.standard_normal((3, 4000)))
    batched = stft(x)
    for i in range(3):
        torch.testing.assert_close(batched[i], stft(x[i]))


def test_parseval_ratio_stable(rng):
    ratios = []
    for _ in range(5):
        x = torch.tensor(rng.standard_normal(16000) * rng.uniform(0.1, 10))
        ratios.append(float((stft(x).abs() ** 2).sum() / (x ** 2).sum()))
    assert max(ratios) / min(ratios) < 1.02


def test_fbank_frames_and_shape():
    feats = fbank(np.random.default_rng(0).standard_normal(16000))
    assert feats.shape == (98, 80)
    assert torch.isfinite(feats).all()
    assert FbankConfig().num_frames(16000) == 98
    with pytest.raises(ValueError):
        fbank(np.zeros(399))


def test_fbank_silence_hits_floor():
    cfg = FbankConfig(cmn=False)
    feats = fbank(np.zeros(16000), cfg)
    assert torch.all(feats == math.log(cfg.log_floor))
    assert torch.allclose(fbank(np.zeros(16000)), torch.zeros(98, 80, dtype=torch.float64), atol=1e-12)


def test_fbank_amplitude_doubling_shifts_log4(rng):
    cfg = FbankConfig(cmn=False)
    x = torch.tensor(rng.standard_normal(16000))
    diff = fbank(2 * x, cfg) - fbank(x, cfg)
    torch.testing.assert_close(diff, torch.full_like(diff, math.log(4)), rtol=0, atol=1e-9)


def test_fbank_shift_equivariance(rng):
    cfg = FbankConfig(cmn=False)
    x = torch.tensor(rng.standard_normal(16000 + 160))
    a = fbank(x[160:], cfg)
    b = fbank(x[:-160], cfg)
    torch.testing.assert_close(a[:-1], b[1:], rtol=0, atol=1e-6)


def test_mel_filterbank_shape_and_coverage():
    fb = mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    centres = fb.argmax(axis=1)
    assert np.all(np.diff(centres) >= 0)


def test_accepts_audio_signal():
    sig = AudioSignal(np.random.default_rng(1).standard_normal(8000).astype(np.float32))
    assert fbank(sig).dtype == torch.float32
    assert stft(sig).shape[0] == 257
