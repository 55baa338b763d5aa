"""Inference, accuracy over dataset manifests, and style diagnostics."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .classifier import LinearHead
from .encoders import Encoder, MockEncoder
from .errors import ConfigError, MissingInputError
from .losses import consistency_terms, style_features

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff", ".img"}


@dataclass
class ManifestRecord:
    domain: str
    class_name: str
    path: str | None = None
    sigma: float = 0.0
    seed: int = 0


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.records})

    def to_json(self) -> str:
        return json.dumps({"records": [asdict(r) for r in self.records]}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        data = json.loads(text)
        recs = data["records"] if isinstance(data, dict) else data
        out = []
        for r in recs:
            r = dict(r)
            if "class" in r:
                r["class_name"] = r.pop("class")
            out.append(ManifestRecord(**r))
        return cls(out)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise MissingInputError("manifest not found", stage="evaluate", path=str(path))
        if path.is_dir():
            return cls.from_directory(path)
        return cls.from_json(path.read_text())

    @classmethod
    def from_directory(cls, root) -> "DatasetManifest":
        """Layout ``root/<domain>/<class>/<image files>``."""
        root = Path(root)
        records = []
        for domain in sorted(p for p in root.iterdir() if p.is_dir()):
            for klass in sorted(p for p in domain.iterdir() if p.is_dir()):
                for img in sorted(klass.iterdir()):
                    if img.suffix.lower() in IMAGE_SUFFIXES:
                        records.append(ManifestRecord(domain.name, klass.name.replace("_", " "),
                                                      path=str(img)))
        return cls(records)


def mock_manifest(class_names: Sequence[str], domains: dict | None = None,
                  per_class: int = 5, seed: int = 0) -> DatasetManifest:
    """Synthetic images: each domain is a noise level around the class text feature."""
    domains = domains if domains is not None else {"clean": 0.0, "shifted": 0.2}
    records = []
    for d, (name, sigma) in enumerate(sorted(domains.items())):
        for c, klass in enumerate(class_names):
            for j in range(per_class):
                records.append(ManifestRecord(name, klass, sigma=float(sigma),
                                              seed=seed * 1_000_003 + d * 10_007 + c * 101 + j))
    return DatasetManifest(records)


def predict(feature, head: LinearHead) -> int:
    """Index of the highest cosine score; ties resolve to the lowest index."""
    scores = head.scores(feature)[0]
    return int(np.argmax(scores))


def predict_batch(features, head: LinearHead) -> np.ndarray:
    return np.argmax(head.scores(features), axis=1)


def _encode_record(record: ManifestRecord, encoder: Encoder, classes) -> torch.Tensor:
    if record.path is not None:
        return encoder.encode_image(record.path)
    if not isinstance(encoder, MockEncoder):
        raise ConfigError("records without an image path need the mock backend", stage="evaluate")
    return encoder.encode_image(record.class_name, record.sigma, record.seed, classes=classes)


def evaluate(manifest: DatasetManifest | Iterable[ManifestRecord], head: LinearHead,
             encoder: Encoder, batch_size: int = 256) -> dict:
    """Per-domain top-1 accuracy and the unweighted mean over domains.

    Records are consumed as a stream; only per-domain counters are kept.
    """
    records = manifest.records if isinstance(manifest, DatasetManifest) else manifest
    index = {name: i for i, name in enumerate(head.class_names)}
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    batch_feats, batch_meta = [], []

    def flush():
        if not batch_feats:
            return
        preds = predict_batch(torch.stack(batch_feats).numpy(), head)
        for (domain, label), pred in zip(batch_meta, preds):
            correct[domain] = correct.get(domain, 0) + int(pred == label)
            total[domain] = total.get(domain, 0) + 1
        batch_feats.clear()
        batch_meta.clear()

    for record in records:
        if record.class_name not in index:
            raise ConfigError(f"unknown class {record.class_name!r} in manifest", stage="evaluate")
        batch_feats.append(_encode_record(record, encoder, index))
        batch_meta.append((record.domain, index[record.class_name]))
        if len(batch_feats) >= batch_size:
            flush()
    flush()
    if not total:
        raise ConfigError("manifest is empty", stage="evaluate")
    per_domain = {d: correct[d] / total[d] for d in sorted(total)}
    return {
        "per_domain": per_domain,
        "macro_accuracy": float(np.mean(list(per_domain.values()))),
        "counts": {d: total[d] for d in sorted(total)},
    }


def metric_sd(features) -> float:
    """Mean |cos| over unordered pairs of style features (lower is more diverse)."""
    feats = np.asarray(features, dtype=np.float64)
    if len(feats) < 2:
        raise ValueError("need at least two style features")
    feats = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    gram = feats @ feats.T
    iu = np.triu_indices(len(feats), 1)
    return float(np.abs(gram[iu]).mean())


def style_diversity(theta, encoder: Encoder) -> float:
    with torch.no_grad():
        return metric_sd(style_features(torch.as_tensor(np.asarray(theta)), encoder).numpy())


def metric_sc(theta, names: Sequence[str], encoder: Encoder) -> float:
    """Mean cos(f_content(c), f_style-content(theta_i, c)) over styles and names."""
    names = list(names)
    if not names:
        raise ValueError("need at least one name")
    with torch.no_grad():
        terms = consistency_terms(torch.as_tensor(np.asarray(theta)), names, encoder)
    return float(terms.mean())


@dataclass
class MetricsReport:
    per_domain: dict = field(default_factory=dict)
    macro_accuracy: float | None = None
    sd: float | None = None
    sc: float | None = None
    config_fingerprint: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def timing_compare(runners: dict[str, Callable[[], object]], repeats: int = 3,
                   warmup: int = 1) -> dict:
    """Wall-clock each runner ``repeats`` times; report median and spread.

    ``warmup`` untimed calls per runner come first, so lazy imports and
    allocator growth are not billed to whichever runner happens to go first.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    table = {}
    for name, run in runners.items():
        for _ in range(warmup):
            run()
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            run()
            times.append(time.perf_counter() - t0)
        table[name] = {
            "runs": times,
            "median": statistics.median(times),
            "stdev": statistics.stdev(times) if len(times) > 1 else 0.0,
        }
    return table
