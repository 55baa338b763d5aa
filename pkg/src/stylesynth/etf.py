"""Simplex equiangular tight frames used as a frozen style classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EtfTemplate:
    """K unit columns in R^P with pairwise inner product -1/(K-1)."""

    columns: np.ndarray  # (P, K)
    seed: int = 0

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    @property
    def p(self) -> int:
        return self.columns.shape[0]

    def gram(self) -> np.ndarray:
        return self.columns.T @ self.columns


@dataclass(frozen=True)
class EtfReport:
    max_norm_deviation: float
    max_cosine_deviation: float
    column_sum_norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.max_norm_deviation, self.max_cosine_deviation,
                   self.column_sum_norm) <= self.tolerance


def _check_int(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
        if not (isinstance(value, float) and value.is_integer()):
            raise ValueError(f"{name} must be an integer, got {value!r}")
    return int(value)


def build_etf(k: int, p: int, seed: int = 0) -> EtfTemplate:
    """Return sqrt(K/(K-1)) * U (I - 11^T/K) with U a seeded partial orthogonal P x K."""
    k = _check_int("k", k)
    p = _check_int("p", p)
    seed = _check_int("seed", seed)
    if k < 2:
        raise ValueError(f"an ETF needs at least 2 vectors, got k={k}")
    if k > p + 1:
        raise ValueError(f"k={k} exceeds p+1={p + 1}; a K-simplex needs K-1 dimensions")
    rng = np.random.default_rng(seed)
    centering = np.eye(k) - np.full((k, k), 1.0 / k)
    if k == p + 1:
        # no P x K partial orthogonal U exists, but the centred frame spans only
        # K-1 dimensions: express it in a basis of 1^perp, then rotate into R^P
        basis, _ = np.linalg.qr(centering[:, :k - 1])
        coords = math.sqrt(k / (k - 1)) * basis.T @ centering
        q, r = np.linalg.qr(rng.standard_normal((p, p)))
        q = q * np.sign(np.diag(r))
        return EtfTemplate(columns=q @ coords, seed=seed)
    gauss = rng.standard_normal((p, k))
    u, r = np.linalg.qr(gauss)
    # fix column signs so U does not depend on LAPACK sign conventions
    u = u * np.sign(np.diag(r))
    columns = math.sqrt(k / (k - 1)) * u @ centering
    return EtfTemplate(columns=columns, seed=seed)


def verify_etf(template: EtfTemplate, tolerance: float = 1e-6) -> EtfReport:
    cols = np.asarray(template.columns, dtype=np.float64)
    k = cols.shape[1]
    norms = np.linalg.norm(cols, axis=0)
    norm_dev = float(np.max(np.abs(norms - 1.0)))
    gram = cols.T @ cols
    off = ~np.eye(k, dtype=bool)
    cos_dev = float(np.max(np.abs(gram[off] + 1.0 / (k - 1)))) if k > 1 else 0.0
    col_sum = float(np.linalg.norm(cols.sum(axis=1)))
    return EtfReport(norm_dev, cos_dev, col_sum, tolerance)


def random_fixed_template(k: int, p: int, seed: int = 0) -> EtfTemplate:
    """Unit-norm Gaussian templates with no equiangular structure (ablation baseline)."""
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((p, k))
    cols /= np.linalg.norm(cols, axis=0, keepdims=True)
    return EtfTemplate(columns=cols, seed=seed)
