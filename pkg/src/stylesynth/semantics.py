"""Coarse semantic generation.

Category names are embedded with the text encoder, grouped with KMeans++
(number of clusters chosen by the cosine silhouette coefficient) and each
group is summarised by up to C coarse strings. A group whose summary comes
back as "nothing" is split in two and each half is asked again.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .errors import ConfigError, DegenerateInputError, MissingInputError
from .llm import LLMClient

log = logging.getLogger(__name__)

NOTHING = "nothing"

_NUMBER_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven",
                 "eight", "nine", "ten"]

GROUP_WORDS = ["cat", "car", "bird", "fruit", "tool", "boat", "tree", "fish", "shoe", "cup",
               "dog", "chair", "flower", "plane", "hat", "lamp", "snake", "bread", "drum", "rock"]


class CategorySet:
    """Ordered, unique, non-empty category names."""

    def __init__(self, names: Sequence[str]):
        cleaned = [" ".join(str(n).split()) for n in names]
        if not cleaned:
            raise ConfigError("category set is empty")
        if any(not n for n in cleaned):
            raise ConfigError("category names must be non-empty")
        seen = set()
        for n in cleaned:
            if n in seen:
                raise ConfigError(f"duplicate category name {n!r}")
            seen.add(n)
        self.names = cleaned

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i):
        return self.names[i]

    @classmethod
    def from_file(cls, path) -> "CategorySet":
        path = Path(path)
        if not path.exists():
            raise MissingInputError("category file not found", stage="categories", path=str(path))
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            return cls(data["names"] if isinstance(data, dict) else data)
        return cls([ln for ln in path.read_text().splitlines() if ln.strip()])


def synthetic_categories(n: int, n_groups: int = 4, seed: int = 0) -> tuple[list[str], list[int]]:
    """``n`` names "<unique modifier> <group word>" spread round-robin over groups.

    Names sharing a group word share a token, so their text features cluster.
    """
    if n_groups > len(GROUP_WORDS):
        raise ValueError(f"at most {len(GROUP_WORDS)} groups supported")
    n_groups = max(1, min(n_groups, n))
    groups = [i % n_groups for i in range(n)]
    names = [f"v{seed}m{i:04d} {GROUP_WORDS[g]}" for i, g in enumerate(groups)]
    return names, groups


@dataclass
class CsgConfig:
    semantics_per_cluster: int = 3
    k_max: int = 20
    restarts: int = 10
    extractor: str = "stub"  # stub | llm
    llm_cache: str | None = None
    llm_fixture: str | None = None
    llm_endpoint: str | None = None
    llm_model: str = "gpt-4"
    llm_key_env: str = "STYLESYNTH_LLM_KEY"
    fanout: int = 4
    seed: int = 0

    def validate(self):
        if self.semantics_per_cluster < 1:
            raise ConfigError("semantics_per_cluster must be >= 1", stage="extract-semantics")
        if self.k_max < 2:
            raise ConfigError("k_max must be >= 2", stage="extract-semantics")
        if self.extractor not in ("stub", "llm"):
            raise ConfigError(f"unknown extractor {self.extractor!r}", stage="extract-semantics")
        return self


@dataclass
class CoarseEntry:
    terms: list
    cluster_id: str
    members: list


@dataclass
class CoarseSemanticSet:
    entries: list = field(default_factory=list)
    css: list = field(default_factory=list)
    k: int = 1
    silhouettes: dict = field(default_factory=dict)
    queries: int = 0
    splits: int = 0

    def __iter__(self):
        return iter(self.css)

    def __len__(self):
        return len(self.css)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoarseSemanticSet":
        data = json.loads(text)
        data["entries"] = [CoarseEntry(**e) for e in data.get("entries", [])]
        return cls(**data)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "CoarseSemanticSet":
        path = Path(path)
        if not path.exists():
            raise MissingInputError("coarse semantic set not found", stage="train-styles",
                                    path=str(path))
        return cls.from_json(path.read_text())


def _canonical_labels(labels) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(int(lab), len(mapping))
    return out


def cluster(features, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """KMeans++ assignment, best of ``restarts`` by inertia. Labels in first-seen order."""
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    if not 2 <= k <= n - 1:
        raise ValueError(f"k={k} outside [2, {n - 1}]")
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, max_iter=300, tol=1e-6,
                random_state=seed)
    return _canonical_labels(km.fit_predict(feats))


def silhouette_scores(features, config: CsgConfig) -> dict[int, float]:
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    if n < 3:
        raise ValueError("need at least 3 features to choose k")
    if np.allclose(feats, feats[0], atol=1e-12):
        raise DegenerateInputError("all features are identical; silhouette is undefined",
                                   stage="extract-semantics")
    scores = {}
    for k in range(2, min(n - 1, config.k_max) + 1):
        labels = cluster(feats, k, config.seed, config.restarts)
        if len(set(labels.tolist())) < 2:
            continue
        scores[k] = float(silhouette_score(feats, labels, metric="cosine"))
    if not scores:
        raise DegenerateInputError("no k produced two distinct clusters", stage="extract-semantics")
    return scores


def select_k(features, config: CsgConfig | None = None) -> int:
    """k with the highest mean cosine silhouette; ties go to the smaller k."""
    scores = silhouette_scores(features, config or CsgConfig())
    best = None
    for k in sorted(scores):
        if best is None or scores[k] > scores[best]:
            best = k
    return best


def number_word(c: int) -> str:
    return _NUMBER_WORDS[c] if c < len(_NUMBER_WORDS) else str(c)


def build_query(member_names: Sequence[str], c: int = 3) -> str:
    listing = "[" + ", ".join(f'"{m}"' for m in member_names) + "]"
    return (f"Q: Tell me {listing} have in common with {number_word(c)} words. "
            f"If not, it can be nothing.")


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)]|a:)\s*", re.IGNORECASE)


def parse_response(text: str, c: int):
    """Split a completion into at most ``c`` terms, or return ``NOTHING``.

    Raises ValueError when nothing usable is found.
    """
    terms = []
    for chunk in re.split(r"[,\n;]", text or ""):
        term, prev = _BULLET.sub("", chunk), None
        while term != prev:
            prev = term
            term = re.sub(r"^(?:and|or)\s+", "", term.strip(), flags=re.IGNORECASE)
            term = term.strip("\"'`. ")
        if not term:
            continue
        if term.lower() == NOTHING or term.lower().startswith("nothing"):
            return NOTHING
        terms.append(term.lower())
    if not terms:
        raise ValueError(f"unparseable extractor response: {text!r}")
    out = []
    for t in terms:
        if t not in out:
            out.append(t)
    return out[:c]


class StubExtractor:
    """Offline extractor: the C member names nearest the cluster mean."""

    name = "stub"

    def __init__(self, encoder, c: int = 3):
        self.encoder = encoder
        self.c = c
        self.calls = 0

    def __call__(self, member_names: Sequence[str]):
        self.calls += 1
        feats = self.encoder.content_features(list(member_names)).numpy()
        centroid = feats.mean(axis=0)
        dist = np.linalg.norm(feats - centroid, axis=1)
        order = np.argsort(dist, kind="stable")
        return [member_names[i] for i in order[: self.c]]


class LLMExtractor:
    name = "llm"

    def __init__(self, client: LLMClient, c: int = 3):
        self.client = client
        self.c = c

    def __call__(self, member_names: Sequence[str]):
        query = build_query(member_names, self.c)
        text = self.client.complete(query)
        try:
            return parse_response(text, self.c)
        except ValueError as exc:
            from .errors import LLMError

            raise LLMError(str(exc), stage="extract-semantics") from exc


def make_extractor(config: CsgConfig, encoder):
    if config.extractor == "stub":
        return StubExtractor(encoder, config.semantics_per_cluster)
    client = LLMClient.from_config(config)
    return LLMExtractor(client, config.semantics_per_cluster)


def extract_coarse(member_names: Sequence[str], extractor):
    if not member_names:
        raise ValueError("cluster has no members")
    return extractor(list(member_names))


def build_css(categories, encoder, config: CsgConfig | None = None,
              extractor=None) -> CoarseSemanticSet:
    config = (config or CsgConfig()).validate()
    names = list(getattr(categories, "names", categories))
    if not names:
        raise ConfigError("no categories", stage="extract-semantics")
    extractor = extractor or make_extractor(config, encoder)
    result = CoarseSemanticSet()
    if len(names) == 1:
        result.entries = [CoarseEntry([names[0]], "0", names)]
        result.css = [names[0]]
        return result

    feats = encoder.content_features(names).numpy()
    if len(names) < 3:
        labels = np.zeros(len(names), dtype=np.int64)
        result.k = 1
    else:
        result.silhouettes = {str(k): v for k, v in silhouette_scores(feats, config).items()}
        result.k = max(sorted(result.silhouettes, key=int), key=lambda k: result.silhouettes[k])
        result.k = int(result.k)
        labels = cluster(feats, result.k, config.seed, config.restarts)
    groups = [[i for i in range(len(names)) if labels[i] == c] for c in range(labels.max() + 1)]

    counters = {"queries": 0, "splits": 0}

    def resolve(indices, cluster_id):
        members = [names[i] for i in indices]
        if len(members) == 1:
            return [CoarseEntry([members[0]], cluster_id, members)]
        counters["queries"] += 1
        answer = extract_coarse(members, extractor)
        if answer != NOTHING:
            terms = [t for t in answer if t.lower() != NOTHING]
            if terms:
                return [CoarseEntry(terms, cluster_id, members)]
        counters["splits"] += 1
        log.info("cluster %s has no common semantics; splitting in two", cluster_id)
        if len(indices) == 2:
            halves = [[indices[0]], [indices[1]]]
        else:
            sub = cluster(feats[indices], 2, config.seed, config.restarts)
            halves = [[indices[j] for j in range(len(indices)) if sub[j] == h] for h in (0, 1)]
        out = []
        for h, half in enumerate(halves):
            out.extend(resolve(half, f"{cluster_id}.{h}"))
        return out

    with ThreadPoolExecutor(max_workers=max(1, config.fanout)) as pool:
        resolved = list(pool.map(lambda pair: resolve(pair[1], str(pair[0])), enumerate(groups)))
    for entries in resolved:
        result.entries.extend(entries)
    for entry in result.entries:
        for term in entry.terms:
            if term.lower() != NOTHING and term not in result.css:
                result.css.append(term)
    result.queries = counters["queries"]
    result.splits = counters["splits"]
    return result
