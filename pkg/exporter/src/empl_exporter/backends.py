"""Embedding backends: a seeded toy projection and an optional CLIP wrapper.

Both expose the same two-method surface: image_vectors(paths) and
text_vectors(names), each returning unit-length float64 rows.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Sequence

import numpy as np
from PIL import Image

DEFAULT_CLIP = "openai/clip-vit-base-patch32"

_PATCH = 16  # downsample side; _PATCH**2 pixel features feed the projections


class BackendUnavailable(RuntimeError):
    """The requested backend cannot run in this environment."""


def unit_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise ValueError("cannot normalize a zero or non-finite embedding row")
    return mat / norms


class ToyBackend:
    """Seeded random projections over raw pixels and name digests.

    A stand-in for a real encoder wherever only format and scorer agreement
    are under test: every output is a pure function of (seed, inputs), with
    no weights to download.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        rng = np.random.default_rng(seed)
        # Draw order is part of the contract: image matrix first, text matrix
        # second, so text vectors never depend on how many images were embedded.
        scale = math.sqrt(_PATCH * _PATCH)
        self._w_image = rng.normal(size=(_PATCH * _PATCH, dim)) / scale
        self._w_text = rng.normal(size=(_PATCH * _PATCH, dim)) / scale
        self.dim = dim

    def image_vectors(self, paths: Sequence[str]) -> np.ndarray:
        rows = np.stack([self._pixels(p) for p in paths])
        return unit_rows(rows @ self._w_image)

    def text_vectors(self, names: Sequence[str]) -> np.ndarray:
        rows = np.stack([_name_base(n) for n in names])
        return unit_rows(rows @ self._w_text)

    @staticmethod
    def _pixels(path: str) -> np.ndarray:
        with Image.open(path) as im:
            small = im.convert("L").resize((_PATCH, _PATCH), Image.Resampling.BILINEAR)
        return np.asarray(small, dtype=np.float64).ravel() / 255.0


def _name_base(name: str) -> np.ndarray:
    # A digest keys the generator so equal names embed equally in every process.
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    seq = np.random.SeedSequence(entropy=int.from_bytes(digest, "little"))
    return np.random.default_rng(seq).normal(size=_PATCH * _PATCH)


class ClipBackend:
    """CLIP towers behind the same surface.  transformers and torch load
    lazily; a missing install or missing weights raises BackendUnavailable
    at construction instead of ImportError deep in a call chain."""

    def __init__(self, model: str = DEFAULT_CLIP, batch_size: int = 32):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendUnavailable(f"clip backend needs transformers and torch: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model)
            self._proc = CLIPProcessor.from_pretrained(model)
        except Exception as exc:  # weights may be absent in offline environments
            raise BackendUnavailable(f"could not load {model}: {exc}") from exc
        self._model.eval()
        self._batch = max(1, batch_size)
        self.dim = int(self._model.config.projection_dim)

    def image_vectors(self, paths: Sequence[str]) -> np.ndarray:
        import torch

        chunks = []
        with torch.no_grad():
            for start in range(0, len(paths), self._batch):
                images = [Image.open(p).convert("RGB") for p in paths[start : start + self._batch]]
                batch = self._proc(images=images, return_tensors="pt")
                chunks.append(self._model.get_image_features(**batch).numpy())
        return unit_rows(np.concatenate(chunks).astype(np.float64))

    def text_vectors(self, names: Sequence[str]) -> np.ndarray:
        import torch

        prompts = [f"a photo of a {n}" for n in names]
        with torch.no_grad():
            batch = self._proc(text=prompts, padding=True, return_tensors="pt")
            out = self._model.get_text_features(**batch).numpy()
        return unit_rows(out.astype(np.float64))


def get_backend(name: str, dim: int = 32, seed: int = 0, model: str = DEFAULT_CLIP):
    """Construct a backend by name: "toy" (seeded projections) or "hf" (CLIP)."""
    if name == "toy":
        return ToyBackend(dim=dim, seed=seed)
    if name == "hf":
        return ClipBackend(model=model)
    raise ValueError(f"unknown backend {name!r}, expected 'toy' or 'hf'")
