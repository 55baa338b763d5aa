"""Disk cache for frozen (theta-free) text features.

Entries are keyed by ``(backend id, weights checksum, prompt text)`` so a new
seed, new weights or a different prompt never hits a stale vector.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import arrays


class FeatureCache:
    def __init__(self, root=None):
        self.root = Path(root) if root else None
        self._mem: dict[str, np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(backend_id: str, checksum: str, prompt_text: str) -> str:
        raw = "\x1f".join((backend_id, checksum, prompt_text)).encode("utf-8")
        return hashlib.sha256(raw).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.arr"

    def get(self, key: str):
        vec = self._mem.get(key)
        if vec is None and self.root is not None and self._path(key).exists():
            vec, _ = arrays.load(self._path(key))
            self._mem[key] = vec
        if vec is None:
            self.misses += 1
        else:
            self.hits += 1
        return vec

    def put(self, key: str, vec, prompt_text: str = ""):
        vec = np.asarray(vec, dtype=np.float64)
        self._mem[key] = vec
        if self.root is not None:
            path = self._path(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            arrays.save(path, vec, {"prompt": prompt_text})
