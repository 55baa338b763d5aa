import math

import numpy as np
import pytest
import torch

from oracles import arcface_direct, cosine
from stylesynth.classifier import (ClassifierConfig, LinearHead, arcface_loss, synth_training_set,
                                   train_linear)
from stylesynth.encoders import MockEncoder, PseudoStyleSet, assemble_prompt
from stylesynth.errors import ConfigError, DivergenceError
from stylesynth.metrics import predict_batch


def theta(k, d, seed=0):
    return PseudoStyleSet.initialize(k, d, seed, 0.3).theta


def test_synth_set_shape_labels_and_norm():
    enc = MockEncoder(seed=0, token_dim=8, joint_dim=12)
    th = theta(2, 8)
    feats, labels = synth_training_set(th, ["dog", "cat", "fox"], enc)
    assert feats.shape == (6, 12)
    assert np.bincount(labels.numpy()).tolist() == [2, 2, 2]
    assert torch.allclose(feats.norm(dim=1), torch.ones(6, dtype=torch.float64), atol=1e-12)
    # ordering: style-major, each row the (style i, class c) prompt
    want = enc.encode_text(assemble_prompt("style-content", 1, "cat"), torch.tensor(th[1]))
    assert torch.allclose(feats[4], want, atol=1e-12)
    again, _ = synth_training_set(th, ["dog", "cat", "fox"], enc, chunk=4)
    assert torch.allclose(feats, again, atol=1e-12)  # chunking only reorders BLAS sums


def test_synth_set_needs_two_classes():
    with pytest.raises(ValueError):
        synth_training_set(theta(2, 8), ["dog"], MockEncoder(token_dim=8, joint_dim=8))


def test_lr_zero_returns_init():
    feats = torch.eye(4, dtype=torch.float64)
    cfg = ClassifierConfig(lr=0.0, epochs=3, seed=5)
    head, hist = train_linear(cfg, feats, [0, 1, 2, 3], list("abcd"))
    init = np.random.default_rng([5, 0x4C48]).normal(0.0, cfg.init_std, size=(4, 4))
    assert np.array_equal(head.weight, init)
    assert len(hist) == 3 and set(hist[0]) == {"epoch", "loss", "train_accuracy", "wall_clock"}


def test_k16_n5_separable_and_reproducible():
    enc = MockEncoder(seed=1)
    names = ["dog", "cat", "sports car", "oak tree", "guitar"]
    feats, labels = synth_training_set(theta(16, enc.token_dim, 1), names, enc)
    cfg = ClassifierConfig(seed=2)
    head, hist = train_linear(cfg, feats, labels, names)
    assert hist[-1]["train_accuracy"] >= 0.95
    assert (predict_batch(feats.numpy(), head) == labels.numpy()).mean() >= 0.95
    assert hist[-1]["loss"] < hist[0]["loss"]
    head2, _ = train_linear(cfg, feats, labels, names)
    assert np.array_equal(head.weight, head2.weight)


def test_arcface_wrapper_matches_oracle():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 5))
    f = rng.standard_normal((4, 5))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    y = [0, 2, 1, 1]
    cos = [[cosine(fi, wj) for wj in w] for fi in f]
    want = arcface_direct(cos, y, 5.0, 0.5)
    assert abs(float(arcface_loss(LinearHead(w), f, y)) - want) < 1e-9


def test_head_validation():
    with pytest.raises(ValueError):
        LinearHead(np.ones(3))
    with pytest.raises(ValueError):
        LinearHead(np.ones((2, 3)), ["a"])
    with pytest.raises(ValueError):
        LinearHead(np.array([[math.inf, 0.0]]))
    with pytest.raises(ValueError):
        LinearHead(np.eye(2)).scores(np.ones((1, 3)))


@pytest.mark.parametrize("kw", [dict(scale=0.0), dict(margin=2.0), dict(epochs=0),
                                dict(batch_size=0), dict(lr=-0.1)])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        train_linear(ClassifierConfig(**kw), torch.eye(2, dtype=torch.float64), [0, 1], ["a", "b"])


def test_empty_set_and_divergence():
    with pytest.raises(ConfigError):
        train_linear(ClassifierConfig(), torch.zeros((0, 2), dtype=torch.float64), [], ["a", "b"])
    bad = torch.tensor([[math.nan, 0.0], [0.0, 1.0]], dtype=torch.float64)
    with pytest.raises(DivergenceError):
        train_linear(ClassifierConfig(), bad, [0, 1], ["a", "b"])
