"""Contrastive class prediction from image and prompt embeddings.

A PromptBatch carries P prompt embeddings per candidate class.  Per-class
evidence is the aggregate of the P similarity values; class probabilities
are the temperature softmax of that evidence.  With P = 1 the multi-prompt
path degenerates to the single-prompt one bit for bit, because the single
path is that special case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError, UnknownClassError
from .numeric import (
    AGGREGATES,
    METRICS,
    aggregate,
    aggregate_grad,
    as_f64,
    sim,
    sim_grad,
    softmax_temp,
)
from .errors import ConfigError


@dataclass(frozen=True)
class SimConfig:
    """How similarities are computed, pooled over prompts, and sharpened."""

    metric: str
    aggregate: str
    temperature: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}, expected one of {METRICS}", key="metric")
        if self.aggregate not in AGGREGATES:
            raise ConfigError(
                f"unknown aggregate {self.aggregate!r}, expected one of {AGGREGATES}",
                key="aggregate",
            )
        if not self.temperature > 0.0:
            raise ConfigError(
                f"temperature must be positive, got {self.temperature}", key="temperature"
            )


@dataclass(frozen=True)
class PromptBatch:
    """P prompt embeddings for each of K candidate classes, in a fixed order."""

    class_ids: tuple[int, ...]
    embeddings: np.ndarray  # (K, P, d)

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        emb = as_f64(self.embeddings, "embeddings")
        object.__setattr__(self, "embeddings", emb)
        if emb.ndim != 3:
            raise ShapeError(f"embeddings must be (K, P, d), got shape {emb.shape}")
        if emb.shape[0] != len(self.class_ids):
            raise ShapeError(
                f"{len(self.class_ids)} class ids but {emb.shape[0]} embedding rows"
            )
        if len(self.class_ids) == 0:
            raise DegenerateInputError("prompt batch must cover at least one class")
        if emb.shape[1] < 1:
            raise ShapeError("each class needs at least one prompt embedding")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ShapeError("duplicate class ids in prompt batch")

    @property
    def n_classes(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def n_prompts(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[2])

    def index_of(self, class_id: int) -> int:
        try:
            return self.class_ids.index(int(class_id))
        except ValueError:
            raise UnknownClassError(f"class id {class_id} not in prompt batch") from None

    @staticmethod
    def single(class_ids: Sequence[int], embeddings) -> "PromptBatch":
        """Wrap one embedding per class, (K, d), as a P = 1 batch."""
        emb = as_f64(embeddings, "embeddings")
        if emb.ndim != 2:
            raise ShapeError(f"expected (K, d) embeddings, got shape {emb.shape}")
        return PromptBatch(class_ids=tuple(class_ids), embeddings=emb[:, None, :])

    @staticmethod
    def from_dict(per_class: Mapping[int, np.ndarray]) -> "PromptBatch":
        """Build from {class_id: (P, d)} preserving mapping order."""
        ids = tuple(per_class.keys())
        if not ids:
            raise DegenerateInputError("prompt batch must cover at least one class")
        stacks = [as_f64(per_class[c], f"class {c} prompts") for c in ids]
        shapes = {s.shape for s in stacks}
        if len(shapes) != 1:
            raise ShapeError(f"per-class prompt stacks disagree in shape: {sorted(shapes)}")
        return PromptBatch(class_ids=ids, embeddings=np.stack(stacks, axis=0))

    def restrict(self, class_ids: Sequence[int]) -> "PromptBatch":
        """Sub-batch covering class_ids, in the order given."""
        rows = [self.index_of(c) for c in class_ids]
        return PromptBatch(
            class_ids=tuple(int(c) for c in class_ids),
            embeddings=self.embeddings[rows],
        )

    def with_class_embedding(self, class_id: int, prompts) -> "PromptBatch":
        """Copy with one class's prompt stack replaced."""
        row = self.index_of(class_id)
        stack = as_f64(prompts, "prompts")
        if stack.ndim == 1:
            stack = stack[None, :]
        if stack.shape != self.embeddings.shape[1:]:
            raise ShapeError(
                f"replacement stack shape {stack.shape}, expected {self.embeddings.shape[1:]}"
            )
        emb = np.array(self.embeddings, copy=True)
        emb[row] = stack
        return PromptBatch(class_ids=self.class_ids, embeddings=emb)


def prompt_sims(f, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """Similarity of one image embedding to every prompt, shape (K, P)."""
    f = as_f64(f, "f")
    if f.ndim != 1 or f.shape[0] != batch.dim:
        raise ShapeError(f"image embedding shape {f.shape}, expected ({batch.dim},)")
    out = np.empty((batch.n_classes, batch.n_prompts))
    for k in range(batch.n_classes):
        for p in range(batch.n_prompts):
            out[k, p] = sim(f, batch.embeddings[k, p], cfg.metric)
    return out


def class_scores(f, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """Aggregated per-class evidence, shape (K,), aligned with batch.class_ids."""
    sims = prompt_sims(f, batch, cfg)
    return np.array([aggregate(sims[k], cfg.aggregate) for k in range(batch.n_classes)])


def predict_multi(f, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """Class probabilities from multi-prompt evidence, aligned with batch.class_ids."""
    return softmax_temp(class_scores(f, batch, cfg), cfg.temperature)


def predict_single(f, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """Class probabilities with exactly one prompt per class."""
    if batch.n_prompts != 1:
        raise ShapeError(f"predict_single needs P = 1, got P = {batch.n_prompts}")
    return predict_multi(f, batch, cfg)


def log_predict_multi(f, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """Log class probabilities, computed without exponentiating large logits."""
    z = class_scores(f, batch, cfg) / cfg.temperature
    m = float(np.max(z))
    return z - (m + float(np.log(np.sum(np.exp(z - m)))))


def scores_vjp(
    f, batch: PromptBatch, cfg: SimConfig, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate d loss / d class_scores to the embeddings.

    Returns (df, dH) with df shaped like f and dH shaped like
    batch.embeddings.
    """
    f = as_f64(f, "f")
    upstream = as_f64(upstream, "upstream")
    if upstream.shape != (batch.n_classes,):
        raise ShapeError(f"upstream shape {upstream.shape}, expected ({batch.n_classes},)")
    sims = prompt_sims(f, batch, cfg)
    df = np.zeros_like(f)
    dh = np.zeros_like(batch.embeddings)
    for k in range(batch.n_classes):
        if upstream[k] == 0.0:
            continue
        w = aggregate_grad(sims[k], cfg.aggregate) * upstream[k]
        for p in range(batch.n_prompts):
            if w[p] == 0.0:
                continue
            gf, gh = sim_grad(f, batch.embeddings[k, p], cfg.metric)
            df += w[p] * gf
            dh[k, p] = w[p] * gh
    return df, dh


def cross_entropy(f, batch: PromptBatch, target_class: int, cfg: SimConfig) -> float:
    """Negative log probability of target_class under predict_multi."""
    idx = batch.index_of(target_class)
    return -float(log_predict_multi(f, batch, cfg)[idx])


def cross_entropy_grads(
    f, batch: PromptBatch, target_class: int, cfg: SimConfig
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients at the embeddings: (loss, df, dH)."""
    idx = batch.index_of(target_class)
    scores = class_scores(f, batch, cfg)
    probs = softmax_temp(scores, cfg.temperature)
    logp = log_predict_multi(f, batch, cfg)
    upstream = probs.copy()
    upstream[idx] -= 1.0
    upstream /= cfg.temperature
    df, dh = scores_vjp(f, batch, cfg, upstream)
    return -float(logp[idx]), df, dh


def batch_scores(features: np.ndarray, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """class_scores for a stack of image embeddings, shape (n, K).

    Vectorized convenience for evaluation sweeps; agrees with the per-sample
    path to float64 rounding.
    """
    from .numeric import pairwise_sim

    features = as_f64(features, "features")
    if features.ndim != 2 or features.shape[1] != batch.dim:
        raise ShapeError(f"features shape {features.shape}, expected (n, {batch.dim})")
    flat = batch.embeddings.reshape(-1, batch.dim)
    sims = pairwise_sim(features, flat, cfg.metric).reshape(
        features.shape[0], batch.n_classes, batch.n_prompts
    )
    if cfg.aggregate == "mean":
        return np.mean(sims, axis=2)
    m = np.max(sims, axis=2, keepdims=True)
    return (
        m[:, :, 0]
        + np.log(np.sum(np.exp(sims - m), axis=2))
        - np.log(batch.n_prompts)
    )


def batch_predict(features: np.ndarray, batch: PromptBatch, cfg: SimConfig) -> np.ndarray:
    """predict_multi for a stack of image embeddings, shape (n, K)."""
    z = batch_scores(features, batch, cfg) / cfg.temperature
    z -= np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)
