"""Prompt assembly and frozen text/image encoders.

Two backends share one interface:

* :class:`MockEncoder` -- a deterministic, dependency-free stand-in for a
  contrastive vision-language model. Tokens are hashed to ids, looked up in a
  seeded Gaussian table, averaged (with the pseudo-word embedding substituted
  at its slot), projected by a fixed P x D matrix and L2-normalised.
* :class:`ExternalVLMEncoder` -- wraps a Hugging Face CLIP model and injects
  the pseudo-word through a hook on the token-embedding layer.

All text features are torch tensors so losses can backpropagate into the
pseudo-word embeddings; encoder parameters are never trained.
"""
from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

SLOT = "<S>"
KINDS = ("style", "content", "style-content")

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class EncoderSpec:
    joint_dim: int = 128
    token_dim: int = 128
    backend_id: str = "mock"
    seed: int = 0
    # mock only: norm of token-table rows, and positional rows relative to them
    token_scale: float = 3.0
    pos_scale: float = 0.15
    image_size: int = 224
    image_mean: tuple = CLIP_MEAN
    image_std: tuple = CLIP_STD

    def __post_init__(self):
        if self.joint_dim <= 0 or self.token_dim <= 0:
            raise ValueError("joint_dim and token_dim must be positive")
        if self.backend_id not in ("mock", "external-vlm"):
            raise ValueError(f"unknown backend {self.backend_id!r}")


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    tokens: tuple
    style_index: int | None = None
    class_name: str | None = None

    @property
    def slot_position(self) -> int | None:
        try:
            return self.tokens.index(SLOT)
        except ValueError:
            return None

    @property
    def has_slot(self) -> bool:
        return SLOT in self.tokens

    @property
    def text(self) -> str:
        """Human-readable form; the slot is rendered as ``<S_i>``."""
        label = f"<S{self.style_index}>" if self.style_index is not None else SLOT
        return " ".join(label if t == SLOT else t for t in self.tokens)

    @property
    def key(self) -> str:
        """Cache key: the token sequence with an anonymous slot."""
        return " ".join(self.tokens)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@functools.lru_cache(maxsize=1 << 16)
def assemble_prompt(kind: str, style_index: int | None = None,
                    class_name: str | None = None) -> PromptTemplate:
    """Build one of the three prompt forms.

    ``style``          -> "a <S_i> style of a"
    ``content``        -> "[class]"
    ``style-content``  -> "a <S_i> style of a [class]"
    """
    if kind not in KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}")
    wants_style = kind in ("style", "style-content")
    wants_class = kind in ("content", "style-content")
    if wants_style and style_index is None:
        raise ValueError(f"{kind} prompt needs a style index")
    if not wants_style and style_index is not None:
        raise ValueError("content prompt takes no style index")
    if wants_class and not (class_name and class_name.strip()):
        raise ValueError(f"{kind} prompt needs a class name")
    if not wants_class and class_name is not None:
        raise ValueError("style prompt takes no class name")

    tokens: list[str] = []
    if wants_style:
        tokens += ["a", SLOT, "style", "of", "a"]
    if wants_class:
        tokens += tokenize(class_name)
    return PromptTemplate(kind, tuple(tokens), style_index,
                          " ".join(tokenize(class_name)) if class_name else None)


def token_id(token: str) -> int:
    """64-bit token id: first 8 bytes of blake2b, big-endian."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


def _id_words(value: int) -> list[int]:
    return [(value >> 32) & 0xFFFFFFFF, value & 0xFFFFFFFF]


@dataclass
class PseudoStyleSet:
    """K learnable pseudo-word embeddings (rows of ``theta``)."""

    theta: np.ndarray  # (K, D) float64
    init_seed: int = 0
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ValueError("theta must be a (K, D) array")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @property
    def k(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def initialize(cls, k: int, d: int, seed: int = 0, std: float = 0.02) -> "PseudoStyleSet":
        rng = np.random.default_rng([seed, 0x7E7A])
        return cls(rng.normal(0.0, std, size=(k, d)), init_seed=seed)


class Encoder:
    """Interface shared by both backends."""

    spec: EncoderSpec
    feature_cache = None  # optional cache.FeatureCache for theta-free prompts

    @property
    def joint_dim(self) -> int:
        return self.spec.joint_dim

    @property
    def token_dim(self) -> int:
        return self.spec.token_dim

    def encode_prompts(self, prompts: Sequence[PromptTemplate],
                       thetas: torch.Tensor | None = None) -> torch.Tensor:
        """Encode a batch; ``thetas[j]`` fills the slot of ``prompts[j]``."""
        raise NotImplementedError

    def encode_text(self, prompt: PromptTemplate, theta_i=None) -> torch.Tensor:
        if prompt.has_slot != (theta_i is not None):
            raise ValueError("theta must be supplied iff the prompt has a pseudo-word slot")
        thetas = None
        if theta_i is not None:
            theta_i = torch.as_tensor(theta_i, dtype=torch.float64)
            if theta_i.shape != (self.token_dim,):
                raise ValueError(f"theta has shape {tuple(theta_i.shape)}, expected ({self.token_dim},)")
            thetas = theta_i.unsqueeze(0)
        return self.encode_prompts([prompt], thetas)[0]

    def content_features(self, names: Sequence[str]) -> torch.Tensor:
        prompts = [assemble_prompt("content", class_name=n) for n in names]
        cache = self.feature_cache
        if cache is None:
            with torch.no_grad():
                return self.encode_prompts(prompts)
        checksum = self.checksum()
        keys = [cache.key(self.spec.backend_id, checksum, p.text) for p in prompts]
        found = [cache.get(k) for k in keys]
        todo = [j for j, v in enumerate(found) if v is None]
        if todo:
            with torch.no_grad():
                fresh = self.encode_prompts([prompts[j] for j in todo]).numpy()
            for j, vec in zip(todo, fresh):
                cache.put(keys[j], vec, prompts[j].text)
                found[j] = vec
        return torch.from_numpy(np.stack(found))

    def checksum(self) -> str:
        raise NotImplementedError

    @property
    def cache_identity(self) -> str:
        return f"{self.spec.backend_id}:{self.checksum()[:16]}"


class MockEncoder(Encoder):
    """hash -> embed (+ position) -> mean -> project -> normalise."""

    def __init__(self, spec: EncoderSpec | None = None, **kwargs):
        self.spec = spec or EncoderSpec(**kwargs)
        if self.spec.backend_id != "mock":
            raise ValueError("MockEncoder needs backend_id='mock'")
        d, p = self.spec.token_dim, self.spec.joint_dim
        rng = np.random.default_rng([self.spec.seed, 0x50524F4A])
        self._proj_np = rng.standard_normal((p, d)) / math.sqrt(d)
        self._proj_np.setflags(write=False)
        self._proj = torch.from_numpy(self._proj_np.copy())
        self._token_cache: dict[str, np.ndarray] = {}
        self._pos_cache: dict[int, np.ndarray] = {}
        self._fixed_cache: dict[tuple, np.ndarray] = {}

    def token_embedding(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            d = self.spec.token_dim
            rng = np.random.default_rng([self.spec.seed, *_id_words(token_id(token))])
            vec = self.spec.token_scale * rng.standard_normal(d) / math.sqrt(d)
            vec.setflags(write=False)
            self._token_cache[token] = vec
        return vec

    def position_embedding(self, position: int) -> np.ndarray:
        vec = self._pos_cache.get(position)
        if vec is None:
            d = self.spec.token_dim
            rng = np.random.default_rng([self.spec.seed, 0x504F53, position])
            vec = self.spec.token_scale * self.spec.pos_scale * rng.standard_normal(d) / math.sqrt(d)
            vec.setflags(write=False)
            self._pos_cache[position] = vec
        return vec

    def _fixed_sum(self, tokens: tuple) -> np.ndarray:
        """Sum over the sequence of everything except the pseudo-word itself."""
        total = self._fixed_cache.get(tokens)
        if total is None:
            total = np.zeros(self.spec.token_dim)
            for j, tok in enumerate(tokens):
                if tok != SLOT:
                    total = total + self.token_embedding(tok)
                total = total + self.position_embedding(j)
            self._fixed_cache[tokens] = total
        return total

    def encode_prompts(self, prompts, thetas=None):
        if not prompts:
            return torch.zeros((0, self.joint_dim), dtype=torch.float64)
        fixed = torch.from_numpy(np.stack([self._fixed_sum(p.tokens) for p in prompts]))
        lengths = torch.tensor([len(p.tokens) for p in prompts], dtype=torch.float64)
        slot_mask = torch.tensor([p.has_slot for p in prompts], dtype=torch.float64)
        if bool(slot_mask.any()):
            if thetas is None:
                raise ValueError("prompts with a pseudo-word slot need theta")
            thetas = torch.as_tensor(thetas, dtype=torch.float64)
            if thetas.shape != (len(prompts), self.token_dim):
                raise ValueError(
                    f"theta batch has shape {tuple(thetas.shape)}, expected "
                    f"({len(prompts)}, {self.token_dim})")
            fixed = fixed + slot_mask.unsqueeze(1) * thetas
        mean = fixed / lengths.unsqueeze(1)
        return F.normalize(mean @ self._proj.T, dim=1, eps=1e-30)

    def encode_image(self, class_name: str, sigma: float = 0.0, seed: int = 0,
                     classes: Sequence[str] | None = None) -> torch.Tensor:
        """Synthetic image: the class's content feature plus seeded Gaussian shift."""
        if classes is not None and class_name not in classes:
            raise KeyError(f"unknown class {class_name!r}")
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        base = self.content_features([class_name])[0]
        if sigma == 0:
            return base
        rng = np.random.default_rng([self.spec.seed, seed, *_id_words(token_id(class_name))])
        noise = torch.from_numpy(rng.standard_normal(self.joint_dim))
        return F.normalize(base + sigma * noise, dim=0)

    def checksum(self) -> str:
        if getattr(self, "_checksum", None):
            return self._checksum
        h = hashlib.sha256()
        h.update(repr((self.spec.seed, self.spec.token_dim, self.spec.joint_dim,
                       self.spec.token_scale, self.spec.pos_scale)).encode())
        h.update(self._proj.numpy().tobytes())
        self._checksum = h.hexdigest()
        return self._checksum


def preprocess_image(image, size: int = 224, mean=CLIP_MEAN, std=CLIP_STD) -> torch.Tensor:
    """Resize to ``size`` x ``size`` (bicubic) and channel-normalise. Returns (3, size, size)."""
    from PIL import Image

    if not isinstance(image, Image.Image):
        image = Image.open(image)
    image = image.convert("RGB").resize((size, size), Image.BICUBIC)
    arr = np.asarray(image, dtype=np.float64) / 255.0
    arr = (arr - np.asarray(mean)) / np.asarray(std)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


class ExternalVLMEncoder(Encoder):
    """Adapter for a pretrained CLIP-style model (optional integration path).

    ``model`` must expose ``get_text_features(input_ids=..., attention_mask=...)``,
    ``get_image_features(pixel_values=...)`` and a token-embedding module at
    ``model.text_model.embeddings.token_embedding``. ``tokenizer`` is any
    callable mapping a list of strings to ``{"input_ids", "attention_mask"}``
    tensors. The slot is filled by a placeholder word whose position is found
    after tokenisation, then overwritten through a forward hook.
    """

    placeholder = "X"

    def __init__(self, model, tokenizer, spec: EncoderSpec | None = None):
        self.model = model.eval().double()
        for param in self.model.parameters():
            param.requires_grad_(False)
        self.tokenizer = tokenizer
        emb = self.model.text_model.embeddings.token_embedding
        proj_dim = getattr(self.model.config, "projection_dim", None)
        self.spec = spec or EncoderSpec(joint_dim=proj_dim, token_dim=emb.embedding_dim,
                                        backend_id="external-vlm")
        if self.spec.token_dim != emb.embedding_dim or (proj_dim and self.spec.joint_dim != proj_dim):
            raise ValueError("EncoderSpec dimensions do not match the loaded weights")
        self._placeholder_id = int(self.tokenizer([self.placeholder])["input_ids"][0][1])
        self._pending = None
        emb.register_forward_hook(self._inject)

    @classmethod
    def from_pretrained(cls, name: str):
        from transformers import CLIPModel, CLIPTokenizer

        model = CLIPModel.from_pretrained(name)
        tok = CLIPTokenizer.from_pretrained(name)
        return cls(model, lambda texts: tok(texts, padding=True, return_tensors="pt"))

    def _inject(self, module, inputs, output):
        if self._pending is None:
            return output
        rows, cols, thetas = self._pending
        output = output.clone()
        output[rows, cols] = thetas.to(output.dtype)
        return output

    def encode_prompts(self, prompts, thetas=None):
        texts = [" ".join(self.placeholder if t == SLOT else t for t in p.tokens) for p in prompts]
        batch = self.tokenizer(texts)
        ids = torch.as_tensor(batch["input_ids"])
        rows, cols, picked = [], [], []
        for j, p in enumerate(prompts):
            if p.has_slot:
                if thetas is None:
                    raise ValueError("prompts with a pseudo-word slot need theta")
                hit = (ids[j] == self._placeholder_id).nonzero().flatten()
                rows.append(j)
                cols.append(int(hit[0]))
                picked.append(thetas[j])
        if rows:
            self._pending = (torch.tensor(rows), torch.tensor(cols), torch.stack(picked))
        try:
            feats = self.model.get_text_features(
                input_ids=ids, attention_mask=torch.as_tensor(batch["attention_mask"]))
        finally:
            self._pending = None
        if not isinstance(feats, torch.Tensor):
            feats = feats.pooler_output
        return F.normalize(feats.double(), dim=1)

    def encode_image(self, image) -> torch.Tensor:
        try:
            pixels = preprocess_image(image, self.spec.image_size, self.spec.image_mean,
                                      self.spec.image_std)
        except Exception as exc:  # PIL raises several unrelated types
            raise ValueError(f"could not decode image {image!r}: {exc}") from exc
        with torch.no_grad():
            feats = self.model.get_image_features(pixel_values=pixels.unsqueeze(0).double())
        if not isinstance(feats, torch.Tensor):
            feats = feats.pooler_output
        return F.normalize(feats.double(), dim=1)[0]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def make_encoder(spec: EncoderSpec, model_name: str | None = None) -> Encoder:
    if spec.backend_id == "mock":
        return MockEncoder(spec)
    if not model_name:
        raise ValueError("external-vlm backend needs a model name or path")
    return ExternalVLMEncoder.from_pretrained(model_name)
