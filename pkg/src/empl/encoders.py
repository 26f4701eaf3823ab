"""Two-tower toy encoders and their parameter block.

The image tower is an affine map from raw feature space into the shared
embedding space.  The prompt tower mean-pools a stack of learned context
token vectors plus one class word vector, then applies its own affine map.
Pooling sorts each column before summing so the result is exactly invariant
to token order, not just invariant up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UnknownClassError
from .numeric import as_f64, ensure_finite


@dataclass(frozen=True)
class Vocabulary:
    """Closed class universe: dense ids 0..n-1 with names and word vectors."""

    names: tuple[str, ...]
    word_vecs: np.ndarray  # (n_classes, d_tok)

    def __post_init__(self):
        vecs = as_f64(self.word_vecs, "word_vecs")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "word_vecs", vecs)
        if vecs.ndim != 2:
            raise ShapeError(f"word_vecs must be 2-d, got shape {vecs.shape}")
        if len(self.names) != vecs.shape[0]:
            raise ShapeError(f"{len(self.names)} names but {vecs.shape[0]} word vectors")
        if len(self.names) == 0:
            raise ConfigError("vocabulary must hold at least one class")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("vocabulary names must be unique")

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def token_dim(self) -> int:
        return int(self.word_vecs.shape[1])

    def check_class(self, class_id: int) -> int:
        cid = int(class_id)
        if not 0 <= cid < self.size:
            raise UnknownClassError(f"class id {cid} outside vocabulary of size {self.size}")
        return cid

    def word_vec(self, class_id: int) -> np.ndarray:
        return self.word_vecs[self.check_class(class_id)]


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt: context token vectors followed by one class word slot."""

    contexts: np.ndarray  # (m, d_tok)
    class_id: int

    def __post_init__(self):
        ctx = as_f64(self.contexts, "contexts")
        object.__setattr__(self, "contexts", ctx)
        object.__setattr__(self, "class_id", int(self.class_id))
        if ctx.ndim != 2:
            raise ShapeError(f"contexts must be 2-d, got shape {ctx.shape}")


@dataclass(frozen=True)
class ModelParams:
    """Learnable parameters of both towers.

    word_vecs is None when the class word vectors are frozen constants taken
    from the vocabulary; otherwise it is a learnable copy indexed by class id.
    """

    image_w: np.ndarray  # (d_in, d)
    image_b: np.ndarray  # (d,)
    pool_w: np.ndarray  # (d_tok, d)
    pool_b: np.ndarray  # (d,)
    contexts: np.ndarray  # (m, d_tok)
    word_vecs: np.ndarray | None = None  # (n_classes, d_tok)

    def __post_init__(self):
        for field in ("image_w", "image_b", "pool_w", "pool_b", "contexts"):
            object.__setattr__(self, field, as_f64(getattr(self, field), field))
        if self.word_vecs is not None:
            object.__setattr__(self, "word_vecs", as_f64(self.word_vecs, "word_vecs"))
        if self.image_w.ndim != 2 or self.image_b.ndim != 1:
            raise ShapeError("image tower weights must be (d_in, d) and (d,)")
        if self.pool_w.ndim != 2 or self.pool_b.ndim != 1:
            raise ShapeError("prompt tower weights must be (d_tok, d) and (d,)")
        if self.image_w.shape[1] != self.image_b.shape[0]:
            raise ShapeError(
                f"image tower dim mismatch: {self.image_w.shape} vs {self.image_b.shape}"
            )
        if self.pool_w.shape[1] != self.pool_b.shape[0]:
            raise ShapeError(
                f"prompt tower dim mismatch: {self.pool_w.shape} vs {self.pool_b.shape}"
            )
        if self.image_b.shape[0] != self.pool_b.shape[0]:
            raise ShapeError("image and prompt towers must share the embedding dimension")
        if self.contexts.ndim != 2 or self.contexts.shape[1] != self.pool_w.shape[0]:
            raise ShapeError(
                f"contexts shape {self.contexts.shape} incompatible with pool input "
                f"dim {self.pool_w.shape[0]}"
            )
        if self.word_vecs is not None and (
            self.word_vecs.ndim != 2 or self.word_vecs.shape[1] != self.pool_w.shape[0]
        ):
            raise ShapeError(
                f"word_vecs shape {None if self.word_vecs is None else self.word_vecs.shape} "
                f"incompatible with pool input dim {self.pool_w.shape[0]}"
            )

    @property
    def input_dim(self) -> int:
        return int(self.image_w.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.image_w.shape[1])

    @property
    def token_dim(self) -> int:
        return int(self.pool_w.shape[0])

    @property
    def n_contexts(self) -> int:
        return int(self.contexts.shape[0])


_FIELDS = ("image_w", "image_b", "pool_w", "pool_b", "contexts", "word_vecs")


def init_params(
    vocab: Vocabulary,
    input_dim: int,
    embed_dim: int,
    context_tokens: int,
    init_scale: float,
    seed: int,
    learn_word_vecs: bool = True,
) -> ModelParams:
    """Draw fresh parameters from a seeded generator.

    Affine weights are scaled by init_scale / sqrt(fan_in); biases start at
    zero; context tokens are drawn at init_scale.  Learnable word vectors
    start as an exact copy of the vocabulary's.
    """
    if input_dim < 1 or embed_dim < 1:
        raise ConfigError(f"dimensions must be positive, got ({input_dim}, {embed_dim})")
    if context_tokens < 0:
        raise ConfigError(f"context_tokens must be non-negative, got {context_tokens}")
    if not init_scale > 0.0:
        raise ConfigError(f"init_scale must be positive, got {init_scale}", key="init_scale")
    d_tok = vocab.token_dim
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    image_w = rng.normal(0.0, init_scale / np.sqrt(input_dim), size=(input_dim, embed_dim))
    pool_w = rng.normal(0.0, init_scale / np.sqrt(d_tok), size=(d_tok, embed_dim))
    contexts = rng.normal(0.0, init_scale, size=(context_tokens, d_tok))
    return ModelParams(
        image_w=image_w,
        image_b=np.zeros(embed_dim),
        pool_w=pool_w,
        pool_b=np.zeros(embed_dim),
        contexts=contexts,
        word_vecs=np.array(vocab.word_vecs, copy=True) if learn_word_vecs else None,
    )


def encode_image(params: ModelParams, x) -> np.ndarray:
    """Map raw image features (d_in,) or a batch (n, d_in) into embedding space."""
    x = as_f64(x, "x")
    if x.ndim == 1:
        if x.shape[0] != params.input_dim:
            raise ShapeError(f"input dim {x.shape[0]}, expected {params.input_dim}")
        return ensure_finite(x @ params.image_w + params.image_b, "image embedding")
    if x.ndim == 2:
        if x.shape[1] != params.input_dim:
            raise ShapeError(f"input dim {x.shape[1]}, expected {params.input_dim}")
        return ensure_finite(x @ params.image_w + params.image_b, "image embeddings")
    raise ShapeError(f"expected 1-d or 2-d input, got shape {x.shape}")


def _sorted_mean(tokens: np.ndarray) -> np.ndarray:
    # Sorting each column fixes the summation order, making the pooled value
    # bit-identical under any permutation of the token rows.
    return np.sort(tokens, axis=-2).sum(axis=-2) / tokens.shape[-2]


def resolve_word_vec(params: ModelParams, vocab: Vocabulary, class_id: int) -> np.ndarray:
    """The class word vector: the learnable copy when present, else the vocabulary's."""
    cid = vocab.check_class(class_id)
    if params.word_vecs is not None:
        if params.word_vecs.shape[0] != vocab.size:
            raise ShapeError(
                f"params carry {params.word_vecs.shape[0]} word vectors "
                f"but vocabulary has {vocab.size}"
            )
        return params.word_vecs[cid]
    return vocab.word_vecs[cid]


def encode_prompt(params: ModelParams, template: PromptTemplate, vocab: Vocabulary) -> np.ndarray:
    """Embed one prompt: mean-pool its tokens plus the class word, then project."""
    word = resolve_word_vec(params, vocab, template.class_id)
    if template.contexts.shape[1] != params.token_dim:
        raise ShapeError(
            f"template token dim {template.contexts.shape[1]}, expected {params.token_dim}"
        )
    tokens = np.vstack([template.contexts, word[None, :]])
    pooled = _sorted_mean(tokens)
    return ensure_finite(pooled @ params.pool_w + params.pool_b, "prompt embedding")


def class_template(params: ModelParams, class_id: int) -> PromptTemplate:
    """Canonical template for a class: the shared learned contexts plus its word slot."""
    return PromptTemplate(contexts=params.contexts, class_id=class_id)


def encode_class_prompt(params: ModelParams, vocab: Vocabulary, class_id: int) -> np.ndarray:
    return encode_prompt(params, class_template(params, class_id), vocab)


def encode_class_prompts(
    params: ModelParams, vocab: Vocabulary, class_ids: Sequence[int]
) -> np.ndarray:
    """Stack encode_class_prompt over class_ids into a (len, d) matrix.

    Bit-identical to the per-class path; only the batching differs.
    """
    ids = [vocab.check_class(c) for c in class_ids]
    if not ids:
        return np.zeros((0, params.embed_dim))
    words = (
        params.word_vecs[ids]
        if params.word_vecs is not None
        else vocab.word_vecs[ids]
    )
    m = params.n_contexts
    stacks = np.empty((len(ids), m + 1, params.token_dim))
    stacks[:, :m, :] = params.contexts[None, :, :]
    stacks[:, m, :] = words
    pooled = _sorted_mean(stacks)
    return ensure_finite(pooled @ params.pool_w + params.pool_b, "prompt embeddings")


@dataclass
class EmbeddingGrads:
    """Upstream loss gradients arriving at the embedding outputs.

    image holds (raw_input, d_loss/d_image_embedding) pairs; prompt holds
    (class_id, d_loss/d_prompt_embedding) pairs for canonical class prompts.
    """

    image: list[tuple[np.ndarray, np.ndarray]]
    prompt: list[tuple[int, np.ndarray]]

    @staticmethod
    def empty() -> "EmbeddingGrads":
        return EmbeddingGrads(image=[], prompt=[])

    def extend(self, other: "EmbeddingGrads") -> None:
        self.image.extend(other.image)
        self.prompt.extend(other.prompt)

    def scaled(self, factor: float) -> "EmbeddingGrads":
        return EmbeddingGrads(
            image=[(x, factor * g) for x, g in self.image],
            prompt=[(c, factor * g) for c, g in self.prompt],
        )


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        image_w=np.zeros_like(params.image_w),
        image_b=np.zeros_like(params.image_b),
        pool_w=np.zeros_like(params.pool_w),
        pool_b=np.zeros_like(params.pool_b),
        contexts=np.zeros_like(params.contexts),
        word_vecs=None if params.word_vecs is None else np.zeros_like(params.word_vecs),
    )


def param_grads(params: ModelParams, vocab: Vocabulary, grads: EmbeddingGrads) -> ModelParams:
    """Accumulate embedding-level gradients into a parameter-shaped gradient.

    Prompt entries are interpreted against canonical class templates built
    from params.contexts.  When params.word_vecs is None the word vectors are
    constants, so no gradient accumulates for them.
    """
    m = params.n_contexts
    image_w = np.zeros_like(params.image_w)
    image_b = np.zeros_like(params.image_b)
    pool_w = np.zeros_like(params.pool_w)
    pool_b = np.zeros_like(params.pool_b)
    contexts = np.zeros_like(params.contexts)
    word_vecs = None if params.word_vecs is None else np.zeros_like(params.word_vecs)
    for x, df in grads.image:
        x = as_f64(x, "x")
        df = as_f64(df, "image grad")
        if x.shape != (params.input_dim,) or df.shape != (params.embed_dim,):
            raise ShapeError(
                f"image grad pair shapes {x.shape}, {df.shape} do not match the towers"
            )
        image_w += np.outer(x, df)
        image_b += df
    for class_id, dh in grads.prompt:
        cid = vocab.check_class(class_id)
        dh = as_f64(dh, "prompt grad")
        if dh.shape != (params.embed_dim,):
            raise ShapeError(f"prompt grad shape {dh.shape}, expected ({params.embed_dim},)")
        word = resolve_word_vec(params, vocab, cid)
        tokens = np.vstack([params.contexts, word[None, :]])
        pooled = _sorted_mean(tokens)
        pool_w += np.outer(pooled, dh)
        pool_b += dh
        dpooled = (params.pool_w @ dh) / (m + 1)
        contexts += dpooled[None, :]
        if word_vecs is not None:
            word_vecs[cid] += dpooled
    return ModelParams(
        image_w=image_w,
        image_b=image_b,
        pool_w=pool_w,
        pool_b=pool_b,
        contexts=contexts,
        word_vecs=word_vecs,
    )


def add_scaled(params: ModelParams, delta: ModelParams, factor: float) -> ModelParams:
    """params + factor * delta, elementwise over all matching fields."""
    if (params.word_vecs is None) != (delta.word_vecs is None):
        raise ShapeError("cannot combine parameter blocks with and without word vectors")
    values = {}
    for field in _FIELDS:
        a = getattr(params, field)
        b = getattr(delta, field)
        values[field] = None if a is None else a + factor * b
    return ModelParams(**values)


def scale_word_vec_rows(grad: ModelParams, keep_rows: Iterable[int]) -> ModelParams:
    """Zero the word-vector gradient outside keep_rows; other fields pass through."""
    if grad.word_vecs is None:
        return grad
    masked = np.zeros_like(grad.word_vecs)
    rows = sorted({int(r) for r in keep_rows})
    for r in rows:
        if not 0 <= r < masked.shape[0]:
            raise UnknownClassError(f"row {r} outside word vector table")
        masked[r] = grad.word_vecs[r]
    return replace(grad, word_vecs=masked)


def params_to_vector(params: ModelParams) -> np.ndarray:
    parts = [getattr(params, f).ravel() for f in _FIELDS if getattr(params, f) is not None]
    return np.concatenate(parts) if parts else np.zeros(0)


def params_from_vector(template: ModelParams, vec) -> ModelParams:
    vec = as_f64(vec, "vec")
    expect = sum(
        getattr(template, f).size for f in _FIELDS if getattr(template, f) is not None
    )
    if vec.shape != (expect,):
        raise ShapeError(f"vector shape {vec.shape}, expected ({expect},)")
    values = {}
    pos = 0
    for field in _FIELDS:
        ref = getattr(template, field)
        if ref is None:
            values[field] = None
            continue
        n = ref.size
        values[field] = vec[pos : pos + n].reshape(ref.shape).copy()
        pos += n
    return ModelParams(**values)
