"""Stage 1: optimise the K pseudo-style word embeddings.

Three schedules are supported:

``batstyler``
    Styles are trained in parallel mini-batches against a frozen simplex-ETF
    classifier (cross-entropy, label i for style i) plus the consistency loss
    over the coarse semantic set.
``baseline-parallel``
    Same batching, but the orthogonality loss and ``lam`` times the
    consistency loss over every fine-grained category.
``baseline-sequential``
    Styles are learned one at a time against the frozen earlier styles, as in
    one-by-one prompt-style synthesis. Each style gets ``epochs / batch_size``
    steps so the total number of optimizer steps matches a parallel run.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .encoders import Encoder, PseudoStyleSet
from .errors import ConfigError, DivergenceError
from .etf import EtfTemplate, build_etf, random_fixed_template
from .losses import consistency_terms, loss_ce, loss_style_orth_partial, style_features

log = logging.getLogger(__name__)

MODES = ("batstyler", "baseline-parallel", "baseline-sequential")


@dataclass
class StyleTrainConfig:
    k: int = 80
    epochs: int = 300
    lr: float = 0.2
    momentum: float = 0.9
    batch_size: int = 4
    logit_scale: float = 1.0
    seed: int = 0
    init_std: float = 0.02
    # ablation switches (batstyler mode only)
    diversity: str = "etf"          # etf | random-fixed | learnable | orth
    consistency: str = "coarse"     # coarse | fine
    template_seed: int = 0

    def validate(self):
        if self.k < 2:
            raise ConfigError("k must be at least 2", stage="train-styles")
        if self.batch_size <= 0 or self.k % self.batch_size:
            raise ConfigError(f"k={self.k} must be divisible by batch_size={self.batch_size}",
                              stage="train-styles")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive", stage="train-styles")
        if self.lr < 0 or self.momentum < 0 or self.logit_scale <= 0:
            raise ConfigError("lr, momentum must be non-negative and logit_scale positive",
                              stage="train-styles")
        if self.diversity not in ("etf", "random-fixed", "learnable", "orth"):
            raise ConfigError(f"unknown diversity objective {self.diversity!r}", stage="train-styles")
        if self.consistency not in ("coarse", "fine"):
            raise ConfigError(f"unknown consistency set {self.consistency!r}", stage="train-styles")
        return self


@dataclass
class BaselineLossConfig:
    lam: float = 1.0

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}", stage="train-styles")
        return self


@dataclass
class StyleTrainResult:
    styles: PseudoStyleSet
    history: list = field(default_factory=list)
    wall_clock: float = 0.0
    steps: int = 0
    template: EtfTemplate | None = None
    train_accuracy: float | None = None


def _cosine_lr(base: float, epoch: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / total))


def _check_finite(value: torch.Tensor, where: str):
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite loss at {where}", stage="train-styles")


def _check_params(param: torch.Tensor, where: str):
    # a finite theta whose squared norm overflows still breaks the normalised features
    if not torch.isfinite((param.detach() ** 2).sum()):
        raise DivergenceError(f"embeddings overflowed at {where}", stage="train-styles")


def _template_for(config: StyleTrainConfig, p: int) -> EtfTemplate:
    if config.diversity == "etf":
        return build_etf(config.k, p, config.template_seed)
    return random_fixed_template(config.k, p, config.template_seed)


def etf_accuracy(theta, template: EtfTemplate, encoder: Encoder) -> float:
    """Fraction of styles whose nearest template is their own label."""
    with torch.no_grad():
        feats = style_features(torch.as_tensor(theta), encoder)
        logits = feats @ torch.as_tensor(template.columns)
    return float((logits.argmax(1) == torch.arange(len(feats))).double().mean())


def train_styles(mode: str, encoder: Encoder, config: StyleTrainConfig,
                 css: Sequence[str] | None = None,
                 categories: Sequence[str] | None = None,
                 baseline: BaselineLossConfig | None = None,
                 template: EtfTemplate | None = None) -> StyleTrainResult:
    config.validate()
    baseline = (baseline or BaselineLossConfig()).validate()
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}", stage="train-styles")
    if mode == "baseline-sequential":
        return _train_sequential(encoder, config, categories, baseline)
    if mode == "batstyler":
        use_fine = config.consistency == "fine"
        names = categories if use_fine else css
        if not names:
            raise ConfigError("batstyler mode needs a coarse semantic set "
                              "(or categories with consistency='fine')", stage="train-styles")
        weight = 1.0
        diversity = config.diversity
    else:
        if not categories:
            raise ConfigError("baseline modes need the full category list", stage="train-styles")
        names, weight, diversity = categories, baseline.lam, "orth"
    return _train_parallel(encoder, config, list(names), weight, diversity, template)


def _train_parallel(encoder, config, names, weight, diversity, template) -> StyleTrainResult:
    k, bs = config.k, config.batch_size
    init = PseudoStyleSet.initialize(k, encoder.token_dim, config.seed, config.init_std)
    theta = torch.tensor(init.theta, requires_grad=True)
    params = [theta]

    cols = None
    if diversity != "orth":
        if template is None:
            template = _template_for(config, encoder.joint_dim)
        if template.k != k or template.p != encoder.joint_dim:
            raise ConfigError(f"template is {template.p}x{template.k}, expected "
                              f"{encoder.joint_dim}x{k}", stage="train-styles")
        cols = torch.tensor(template.columns)
        if diversity == "learnable":
            cols.requires_grad_(True)
            params.append(cols)

    content = encoder.content_features(names) if weight else None
    optimizer = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum)
    rng = np.random.default_rng([config.seed, 0x5348])
    history = []
    steps = 0
    start = time.perf_counter()
    for epoch in range(config.epochs):
        lr = _cosine_lr(config.lr, epoch, config.epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(k)
        sums = {"div": 0.0, "sc": 0.0, "total": 0.0}
        for start_idx in range(0, k, bs):
            idx = torch.as_tensor(order[start_idx:start_idx + bs])
            batch = theta[idx]
            feats = style_features(batch, encoder, idx.tolist())
            if cols is None:
                with torch.no_grad():
                    mask = torch.ones(k, dtype=torch.bool)
                    mask[idx] = False
                    others = style_features(theta[mask], encoder, torch.nonzero(mask).flatten().tolist())
                div = loss_style_orth_partial(feats, others)
            else:
                head = cols / cols.norm(dim=0, keepdim=True) if diversity == "learnable" else cols
                # summed over the batch, like the consistency term
                div = loss_ce(feats, head, idx, config.logit_scale) * len(idx)
            total = div
            sc = torch.zeros((), dtype=torch.float64)
            if weight:
                sc = -consistency_terms(batch, names, encoder, content, idx.tolist()).sum()
                total = div + weight * sc
            _check_finite(total, f"epoch {epoch}, batch {start_idx // bs}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            _check_params(theta, f"epoch {epoch}, batch {start_idx // bs}")
            steps += 1
            sums["div"] += float(div.detach())
            sums["sc"] += float(sc.detach())
            sums["total"] += float(total.detach())
        n_batches = k // bs
        history.append({
            "epoch": epoch,
            "loss_div": sums["div"] / n_batches,
            "loss_sc": sums["sc"] / n_batches,
            "loss_total": sums["total"] / n_batches,
            "lr": lr,
            "wall_clock": time.perf_counter() - start,
        })
    elapsed = time.perf_counter() - start
    trained = theta.detach().numpy().copy()
    if not np.all(np.isfinite(trained)):
        raise DivergenceError("embeddings became non-finite", stage="train-styles")
    if cols is not None:
        template = EtfTemplate(columns=cols.detach().numpy().copy(), seed=config.template_seed)
    styles = PseudoStyleSet(trained, init_seed=config.seed,
                            history={"mode": "parallel", "steps": steps})
    acc = etf_accuracy(trained, template, encoder) if cols is not None else None
    log.info("stage-1 parallel done: %d steps in %.2fs", steps, elapsed)
    return StyleTrainResult(styles, history, elapsed, steps, template, acc)


def sequential_steps_per_style(config: StyleTrainConfig) -> int:
    # (epochs * K / batch_size) total steps spread evenly over K styles
    return max(1, round(config.epochs / config.batch_size))


def _train_sequential(encoder, config, categories, baseline) -> StyleTrainResult:
    if not categories:
        raise ConfigError("baseline modes need the full category list", stage="train-styles")
    names = list(categories)
    k = config.k
    steps_each = sequential_steps_per_style(config)
    init = PseudoStyleSet.initialize(k, encoder.token_dim, config.seed, config.init_std)
    content = encoder.content_features(names) if baseline.lam else None
    trained = np.empty_like(init.theta)
    frozen = torch.zeros((0, encoder.joint_dim), dtype=torch.float64)
    history = []
    steps = 0
    start = time.perf_counter()
    for i in range(k):
        theta_i = torch.tensor(init.theta[i:i + 1], requires_grad=True)
        optimizer = torch.optim.SGD([theta_i], lr=config.lr, momentum=config.momentum)
        for step in range(steps_each):
            lr = _cosine_lr(config.lr, step, steps_each)
            for group in optimizer.param_groups:
                group["lr"] = lr
            feat = style_features(theta_i, encoder, [i])
            div = loss_style_orth_partial(feat, frozen)
            total = div
            content_loss = torch.zeros((), dtype=torch.float64)
            if baseline.lam:
                content_loss = -consistency_terms(theta_i, names, encoder, content, [i]).sum()
                total = div + baseline.lam * content_loss
            _check_finite(total, f"style {i}, step {step}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            _check_params(theta_i, f"style {i}, step {step}")
            steps += 1
        with torch.no_grad():
            frozen = torch.cat([frozen, style_features(theta_i, encoder, [i])])
        trained[i] = theta_i.detach().numpy()[0]
        history.append({
            "style": i,
            "loss_div": float(div.detach()),
            "loss_sc": float(content_loss.detach()),
            "loss_total": float(total.detach()),
            "wall_clock": time.perf_counter() - start,
        })
    elapsed = time.perf_counter() - start
    if not np.all(np.isfinite(trained)):
        raise DivergenceError("embeddings became non-finite", stage="train-styles")
    styles = PseudoStyleSet(trained, init_seed=config.seed,
                            history={"mode": "sequential", "steps": steps})
    return StyleTrainResult(styles, history, elapsed, steps)


def config_dict(config) -> dict:
    return asdict(config)
