"""Stage-1 and stage-2 objectives.

All losses take and return float64 torch tensors so that gradients can flow
back into pseudo-word embeddings (stage 1) or linear-head weights (stage 2).
"""
from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F

from .encoders import Encoder, assemble_prompt


def _as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


def loss_ce(style_features, template, labels, logit_scale: float = 1.0) -> torch.Tensor:
    """Mean softmax cross-entropy of ``logit_scale * template^T f`` against fixed labels.

    ``template`` is the (P, K) column matrix of the frozen classifier.
    """
    feats = _as_tensor(style_features)
    cols = _as_tensor(template)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if feats.ndim != 2 or feats.shape[1] != cols.shape[0]:
        raise ValueError(f"feature dim {tuple(feats.shape)} does not match template {tuple(cols.shape)}")
    if labels.shape != (feats.shape[0],):
        raise ValueError("one label per feature required")
    k = cols.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logits = logit_scale * feats @ cols
    return F.cross_entropy(logits, labels)


def _style_content_prompts(indices: Sequence[int], names: Sequence[str]):
    return [assemble_prompt("style-content", i, c) for i in indices for c in names]


def consistency_terms(theta, names: Sequence[str], encoder: Encoder,
                      content=None, indices=None) -> torch.Tensor:
    """(K, |names|) matrix of cos(f_content(c), f_style-content(theta_i, c))."""
    theta = _as_tensor(theta)
    k = theta.shape[0]
    if indices is None:
        indices = range(k)
    if content is None:
        content = encoder.content_features(names)
    prompts = _style_content_prompts(indices, names)
    thetas = theta.repeat_interleave(len(names), dim=0)
    feats = encoder.encode_prompts(prompts, thetas).view(k, len(names), -1)
    return (feats * content.unsqueeze(0)).sum(-1)


def loss_sc(theta, css: Sequence[str], encoder: Encoder, content=None, indices=None) -> torch.Tensor:
    """Sum over styles and coarse semantics of -cos(content, style-content)."""
    names = list(getattr(css, "css", css))
    if not names:
        raise ValueError("coarse semantic set is empty")
    return -consistency_terms(theta, names, encoder, content, indices).sum()


def loss_content(theta, categories: Sequence[str], encoder: Encoder, content=None,
                 indices=None) -> torch.Tensor:
    """The same sum taken over every fine-grained category name."""
    names = list(getattr(categories, "names", categories))
    if not names:
        raise ValueError("category list is empty")
    return -consistency_terms(theta, names, encoder, content, indices).sum()


def style_features(theta, encoder: Encoder, indices=None) -> torch.Tensor:
    theta = _as_tensor(theta)
    if indices is None:
        indices = range(theta.shape[0])
    prompts = [assemble_prompt("style", i) for i in indices]
    return encoder.encode_prompts(prompts, theta)


def loss_style_orth(features) -> torch.Tensor:
    """Sum over unordered pairs of |cos| between style features."""
    feats = F.normalize(_as_tensor(features), dim=1)
    gram = feats @ feats.T
    k = feats.shape[0]
    lower = torch.tril_indices(k, k, offset=-1)
    return gram[lower[0], lower[1]].abs().sum()


def loss_style_orth_partial(active, others) -> torch.Tensor:
    """Pairwise |cos| terms that involve at least one ``active`` feature.

    ``others`` are treated as constants; pairs inside ``active`` count once.
    """
    active = F.normalize(_as_tensor(active), dim=1)
    loss = loss_style_orth(active) if active.shape[0] > 1 else active.sum() * 0
    if others is not None and len(others):
        others = F.normalize(_as_tensor(others).detach(), dim=1)
        loss = loss + (active @ others.T).abs().sum()
    return loss


def loss_baseline(theta, categories, encoder: Encoder, lam: float = 1.0) -> torch.Tensor:
    """Orthogonality loss plus ``lam`` times the fine-grained consistency loss."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    orth = loss_style_orth(style_features(theta, encoder))
    if lam == 0.0:
        return orth
    return orth + lam * loss_content(theta, categories, encoder)


def arcface_logits(weight, features, labels, s: float = 5.0, m: float = 0.5) -> torch.Tensor:
    """Scaled cosine logits with an additive angle ``m`` on the true class."""
    if s <= 0:
        raise ValueError("scale must be positive")
    if not 0.0 <= m < math.pi / 2:
        raise ValueError("margin must lie in [0, pi/2)")
    w = F.normalize(_as_tensor(weight), dim=1)
    feats = _as_tensor(features)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if feats.ndim != 2 or feats.shape[1] != w.shape[1]:
        raise ValueError(f"feature dim {tuple(feats.shape)} does not match head {tuple(w.shape)}")
    if labels.shape != (feats.shape[0],):
        raise ValueError("one label per feature required")
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= w.shape[0]):
        raise ValueError(f"labels must lie in [0, {w.shape[0]})")
    cos = feats @ w.T
    if m == 0.0:
        return s * cos
    cos_y = cos.gather(1, labels.unsqueeze(1)).squeeze(1)
    # cos(t + m) via the addition formula; sin^2 floored to keep d/dcos bounded at the poles
    sin_y = torch.sqrt(torch.clamp(1.0 - cos_y * cos_y, min=1e-10))
    shifted = cos_y * math.cos(m) - sin_y * math.sin(m)
    # margin only while t + m < pi
    shifted = torch.where(cos_y > -math.cos(m), shifted, cos_y)
    onehot = F.one_hot(labels, w.shape[0]).to(cos.dtype)
    return s * (cos + onehot * (shifted - cos_y).unsqueeze(1))


def arcface_loss(weight, features, labels, s: float = 5.0, m: float = 0.5) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    return F.cross_entropy(arcface_logits(weight, features, labels, s, m), labels)
