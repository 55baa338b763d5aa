import numpy as np
import pytest
import torch

from stylesynth.encoders import MockEncoder, PseudoStyleSet
from stylesynth.errors import ConfigError, DivergenceError
from stylesynth.etf import build_etf
from stylesynth.losses import style_features
from stylesynth.metrics import metric_sd
from stylesynth.semantics import CsgConfig, build_css, synthetic_categories
from stylesynth.style_trainer import (BaselineLossConfig, StyleTrainConfig,
                                      sequential_steps_per_style, train_styles)

CSS = ["cat", "sports car", "tree"]
NAMES = ["tabby cat", "tiger cat", "sports car", "minivan", "oak tree", "pine tree"]


def enc():
    return MockEncoder(seed=3, token_dim=16, joint_dim=32)


def small(**kw):
    base = dict(k=8, epochs=5, batch_size=4, seed=1)
    base.update(kw)
    return StyleTrainConfig(**base)


def test_lr_zero_keeps_init_bitwise():
    cfg = small(lr=0.0)
    r = train_styles("batstyler", enc(), cfg, css=CSS)
    init = PseudoStyleSet.initialize(8, 16, cfg.seed, cfg.init_std)
    assert np.array_equal(r.styles.theta, init.theta)


@pytest.mark.parametrize("mode", ["batstyler", "baseline-parallel", "baseline-sequential"])
def test_same_seed_is_bitwise_reproducible(mode):
    a = train_styles(mode, enc(), small(), css=CSS, categories=NAMES)
    b = train_styles(mode, enc(), small(), css=CSS, categories=NAMES)
    assert np.array_equal(a.styles.theta, b.styles.theta)
    c = train_styles(mode, enc(), small(seed=2), css=CSS, categories=NAMES)
    assert not np.array_equal(a.styles.theta, c.styles.theta)


def test_k16_converges_on_synthetic_set():
    names, _ = synthetic_categories(20, 4, seed=0)
    e = MockEncoder(seed=0)
    css = build_css(names, e, CsgConfig()).css
    before = e.checksum()
    cfg = StyleTrainConfig(k=16, epochs=50, seed=0)
    r = train_styles("batstyler", e, cfg, css=css)
    assert e.checksum() == before
    losses = [h["loss_div"] for h in r.history]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
    assert r.train_accuracy == 1.0
    init = PseudoStyleSet.initialize(16, e.token_dim, 0, cfg.init_std)
    with torch.no_grad():
        sd0 = metric_sd(style_features(torch.tensor(init.theta), e).numpy())
        sd1 = metric_sd(style_features(torch.tensor(r.styles.theta), e).numpy())
    assert sd1 < sd0


def test_history_rows_and_steps():
    r = train_styles("batstyler", enc(), small(), css=CSS)
    assert len(r.history) == 5 and r.steps == 5 * 2
    assert {"epoch", "loss_div", "loss_sc", "loss_total", "lr", "wall_clock"} <= set(r.history[0])
    assert r.history[0]["lr"] == pytest.approx(0.2)


def test_sequential_budget_matches_parallel():
    cfg = small(epochs=8)
    assert sequential_steps_per_style(cfg) == 2
    r = train_styles("baseline-sequential", enc(), cfg, categories=NAMES)
    assert r.steps == 8 * 2 == 8 * 8 // 4
    assert [h["style"] for h in r.history] == list(range(8))


def test_sequential_freezes_earlier_styles():
    # style i only depends on styles < i, so truncating K leaves the prefix unchanged
    a = train_styles("baseline-sequential", enc(), small(k=8), categories=NAMES)
    b = train_styles("baseline-sequential", enc(), small(k=4), categories=NAMES)
    assert np.array_equal(a.styles.theta[:4], b.styles.theta)


@pytest.mark.parametrize("kw", [dict(k=1), dict(k=6, batch_size=4), dict(epochs=0), dict(lr=-1.0),
                                dict(logit_scale=0.0), dict(diversity="x"), dict(consistency="y")])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        train_styles("batstyler", enc(), small(**kw), css=CSS)


def test_mode_and_input_errors():
    with pytest.raises(ConfigError):
        train_styles("nope", enc(), small(), css=CSS)
    with pytest.raises(ConfigError):
        train_styles("batstyler", enc(), small())
    with pytest.raises(ConfigError):
        train_styles("baseline-parallel", enc(), small(), css=CSS)
    with pytest.raises(ConfigError):
        train_styles("baseline-sequential", enc(), small(), categories=NAMES,
                     baseline=BaselineLossConfig(lam=2.0))
    with pytest.raises(ConfigError):
        train_styles("batstyler", enc(), small(), css=CSS, template=build_etf(4, 32, 0))


class NanEncoder(MockEncoder):
    def encode_prompts(self, prompts, thetas=None):
        return super().encode_prompts(prompts, thetas) * float("nan")


@pytest.mark.parametrize("mode", ["batstyler", "baseline-sequential"])
def test_divergence_guard(mode):
    with pytest.raises(DivergenceError):
        train_styles(mode, NanEncoder(seed=0, token_dim=8, joint_dim=16), small(),
                     css=CSS, categories=NAMES)


@pytest.mark.parametrize("diversity", ["random-fixed", "learnable", "orth"])
def test_ablation_switches_run(diversity):
    r = train_styles("batstyler", enc(), small(diversity=diversity), css=CSS)
    assert np.all(np.isfinite(r.styles.theta))
    if diversity == "orth":
        assert r.template is None and r.train_accuracy is None
    else:
        assert r.template.columns.shape == (32, 8)


def test_learnable_template_moves_fixed_does_not():
    fixed = train_styles("batstyler", enc(), small(), css=CSS)
    assert np.array_equal(fixed.template.columns, build_etf(8, 32, 0).columns)
    learn = train_styles("batstyler", enc(), small(diversity="learnable"), css=CSS)
    assert not np.array_equal(learn.template.columns, build_etf(8, 32, 0).columns)


def test_fine_consistency_uses_categories():
    r = train_styles("batstyler", enc(), small(consistency="fine"), categories=NAMES)
    assert np.all(np.isfinite(r.styles.theta))


def test_overflowing_embeddings_abort():
    with pytest.raises(DivergenceError):
        train_styles("batstyler", enc(), small(lr=1e300), css=CSS)
