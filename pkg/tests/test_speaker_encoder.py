import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from tseaug.features import fbank
from tseaug.speaker_encoder import (
    ClassifierHead,
    EncoderConfig,
    SpeakerEncoder,
    compute_eer,
    cosine_scores,
    encode,
    pad_frames,
    statistics_pooling,
)

from conftest import TINY_ENCODER


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return SpeakerEncoder(TINY_ENCODER).eval()


def test_default_embedding_dimension():
    torch.manual_seed(0)
    enc = SpeakerEncoder(EncoderConfig(m_channels=4)).eval()
    with torch.no_grad():
        assert enc(torch.randn(1, 100, 80)).shape == (1, 256)


def test_output_shape_and_determinism(encoder, rng):
    feats = torch.randn(3, 120, 80)
    with torch.no_grad():
        a, b = encoder(feats), encoder(feats)
    assert a.shape == (3, 16)
    assert torch.equal(a, b)


def test_one_hop_shift_keeps_embedding(encoder, rng):
    x = torch.tensor(rng.standard_normal(3 * 16000 + 160), dtype=torch.float32)
    a = fbank(x[160:]).unsqueeze(0)
    b = fbank(x[:-160]).unsqueeze(0)
    with torch.no_grad():
        cos = F.cosine_similarity(encoder(a), encoder(b)).item()
    assert cos >= 0.99


def test_rejects_non_finite(encoder):
    feats = torch.zeros(1, 50, 80)
    feats[0, 3, 4] = float("nan")
    with pytest.raises(ValueError):
        encoder(feats)


def test_short_input_padded_by_tiling():
    feats = torch.arange(5.0).reshape(1, 5, 1)
    out = pad_frames(feats, 12)
    assert out.shape == (1, 12, 1)
    assert out[0, :, 0].tolist() == [0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1]
    assert pad_frames(feats, 3) is feats


def test_statistics_pooling():
    x = torch.tensor([[[1.0, 3.0]]])
    out = statistics_pooling(x)
    assert out[0, 0] == 2.0
    assert out[0, 1] == pytest.approx(math.sqrt(2.0 + 1e-5))


def test_frozen_encoder_gets_no_gradient(encoder):
    before = {k: v.clone() for k, v in encoder.state_dict().items()}
    encoder.freeze()
    encoder.train()
    assert not encoder.training
    feats = torch.randn(2, 40, 80)
    e = encode(feats, encoder, mode="frozen")
    assert not e.requires_grad
    assert all(p.grad is None for p in encoder.parameters())
    for k, v in encoder.state_dict().items():
        assert torch.equal(v, before[k])


def test_trainable_mode_backpropagates():
    torch.manual_seed(1)
    enc = SpeakerEncoder(TINY_ENCODER)
    e = encode([torch.randn(40, 80), torch.randn(60, 80)], enc)
    assert e.shape == (2, 16)
    e.sum().backward()
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in enc.parameters())
    with pytest.raises(ValueError):
        encode(torch.randn(1, 40, 80), enc, mode="fixed")


def test_classifier_zero_weight_gives_uniform():
    head = ClassifierHead(16, 5)
    with torch.no_grad():
        head.weight.zero_()
    logits = head(torch.randn(3, 16))
    loss = F.cross_entropy(logits, torch.tensor([0, 2, 4]))
    assert loss.item() == pytest.approx(math.log(5), abs=1e-6)


def test_classifier_matches_matrix_product():
    head = ClassifierHead(4, 3)
    e = torch.randn(2, 4)
    torch.testing.assert_close(head(e), e @ head.weight.T)
    with pytest.raises(ValueError):
        head(torch.randn(2, 5))
    with pytest.raises(ValueError):
        ClassifierHead(4, 1)


def test_cosine_scores():
    a = np.array([[1.0, 0.0], [1.0, 1.0]])
    b = np.array([[2.0, 0.0], [-1.0, -1.0]])
    np.testing.assert_allclose(cosine_scores(a, b), [1.0, -1.0])


def test_eer_separated_and_random(rng):
    labels = np.array([1] * 50 + [0] * 50, dtype=bool)
    scores = np.where(labels, 1.0, 0.0) + rng.uniform(0, 0.1, 100)
    assert compute_eer(scores, labels) == 0.0
    labels = rng.random(200_000) < 0.5
    assert abs(compute_eer(rng.standard_normal(200_000), labels) - 0.5) <= 0.02


def test_eer_invariant_to_monotone_transform(rng):
    labels = rng.random(2000) < 0.3
    scores = rng.standard_normal(2000) + labels
    a = compute_eer(scores, labels)
    b = compute_eer(np.exp(3 * scores) + 7, labels)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 < a < 0.5


def test_eer_needs_both_classes():
    with pytest.raises(ValueError):
        compute_eer([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        compute_eer([0.1, 0.2], [False, False])
