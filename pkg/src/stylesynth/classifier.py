"""Stage 2: train a linear head on synthesised style-content features."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import Encoder, assemble_prompt
from .errors import ConfigError, DivergenceError
from . import losses


@dataclass
class ClassifierConfig:
    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    scale: float = 5.0
    margin: float = 0.5
    init_std: float = 0.01
    seed: int = 0

    def validate(self):
        if self.scale <= 0:
            raise ConfigError("arcface scale must be positive", stage="train-classifier")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ConfigError("arcface margin must lie in [0, pi/2)", stage="train-classifier")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive", stage="train-classifier")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative", stage="train-classifier")
        return self


@dataclass
class LinearHead:
    weight: np.ndarray  # (N, P), rows stored unnormalised
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("weight must be (N, P)")
        if self.class_names and len(self.class_names) != self.weight.shape[0]:
            raise ValueError("one class name per weight row required")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("weight has non-finite entries")

    def normalized(self) -> np.ndarray:
        return self.weight / np.linalg.norm(self.weight, axis=1, keepdims=True)

    def scores(self, features) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if feats.shape[1] != self.weight.shape[1]:
            raise ValueError(f"feature dim {feats.shape[1]} != head dim {self.weight.shape[1]}")
        return feats @ self.normalized().T


def synth_training_set(theta, categories: Sequence[str], encoder: Encoder,
                       chunk: int = 4096) -> tuple[torch.Tensor, torch.Tensor]:
    """One style-content feature per (style, fine-grained class) pair, labelled by class."""
    names = list(getattr(categories, "names", categories))
    theta = torch.as_tensor(np.asarray(theta), dtype=torch.float64)
    if len(names) < 2:
        raise ValueError("need at least two categories")
    pairs = [(i, c) for i in range(theta.shape[0]) for c in range(len(names))]
    feats = []
    with torch.no_grad():
        for start in range(0, len(pairs), chunk):
            part = pairs[start:start + chunk]
            prompts = [assemble_prompt("style-content", i, names[c]) for i, c in part]
            thetas = theta[[i for i, _ in part]]
            feats.append(encoder.encode_prompts(prompts, thetas))
    labels = torch.tensor([c for _, c in pairs], dtype=torch.long)
    return torch.cat(feats), labels


def arcface_loss(head, features, labels, s: float = 5.0, m: float = 0.5) -> torch.Tensor:
    weight = head.weight if isinstance(head, LinearHead) else head
    return losses.arcface_loss(weight, features, labels, s, m)


def train_linear(config: ClassifierConfig, features, labels,
                 class_names: Sequence[str]) -> tuple[LinearHead, list]:
    config.validate()
    feats = torch.as_tensor(features, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if len(feats) == 0:
        raise ConfigError("empty training set", stage="train-classifier")
    n_classes = len(class_names)
    rng = np.random.default_rng([config.seed, 0x4C48])
    init = rng.normal(0.0, config.init_std, size=(n_classes, feats.shape[1]))
    weight = torch.tensor(init, requires_grad=True)
    optimizer = torch.optim.SGD([weight], lr=config.lr, momentum=config.momentum)
    history = []
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = torch.from_numpy(rng.permutation(len(feats)))
        total, seen = 0.0, 0
        for b in range(0, len(feats), config.batch_size):
            idx = order[b:b + config.batch_size]
            loss = losses.arcface_loss(weight, feats[idx], labels[idx], config.scale, config.margin)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", stage="train-classifier")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        with torch.no_grad():
            pred = (feats @ F.normalize(weight, dim=1).T).argmax(1)
            acc = float((pred == labels).double().mean())
        history.append({"epoch": epoch, "loss": total / seen, "train_accuracy": acc,
                        "wall_clock": time.perf_counter() - start})
    head = LinearHead(weight.detach().numpy().copy(), list(class_names))
    return head, history
