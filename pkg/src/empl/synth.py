"""Synthetic Gaussian-cluster datasets with ground-truth density.

Classes are isotropic Gaussians around well-separated means.  Class word
vectors are the cluster means themselves, so the vocabulary geometry carries
real information about unseen classes and zero-shot transfer is possible in
principle.  The generator emits a training dump restricted to the observed
pool, an evaluation dump over every class, an optional density-annotated
feature grid, a ready-to-edit experiment config, and a manifest tying the
artifacts together.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError
from .gaps import gaussian_mixture_density
from .numeric import stream
from .persistence import (
    DEFAULTS,
    EmbeddingDump,
    MODALITY_IMAGE,
    SCHEMA_VERSION,
    atomic_write_text,
    canonical_json,
    write_dump,
    write_grid,
)


@dataclass(frozen=True)
class SynthSpec:
    """Shape of one synthetic dataset."""

    n_classes: int
    input_dim: int
    observed: tuple[int, ...]
    train_per_class: int
    eval_per_class: int
    cluster_std: float
    mean_scale: float
    seed: int
    grid_side: int = 20

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(int(c) for c in self.observed))
        if self.n_classes < 2:
            raise ConfigError(f"need at least two classes, got {self.n_classes}", key="n_classes")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}", key="input_dim")
        if not self.observed or len(set(self.observed)) != len(self.observed):
            raise ConfigError("observed pool must be non-empty and duplicate-free", key="observed")
        if any(not 0 <= c < self.n_classes for c in self.observed):
            raise ConfigError(
                f"observed pool {self.observed} outside class range", key="observed"
            )
        if self.train_per_class < 1 or self.eval_per_class < 1:
            raise ConfigError("per-class sample counts must be positive", key="train_per_class")
        if not self.cluster_std > 0:
            raise ConfigError(f"cluster_std must be positive, got {self.cluster_std}", key="cluster_std")
        if not self.mean_scale > 0:
            raise ConfigError(f"mean_scale must be positive, got {self.mean_scale}", key="mean_scale")
        if self.grid_side < 2:
            raise ConfigError(f"grid_side must be at least 2, got {self.grid_side}", key="grid_side")


def cluster_means(n_classes: int, input_dim: int, scale: float) -> np.ndarray:
    """Deterministic well-separated means with pairwise distance about scale.

    Up to input_dim + 1 classes sit on a regular simplex with exactly equal
    pairwise distances; beyond that they fall back to an evenly spaced
    circle in the first two coordinates, where scale is the distance between
    neighbors.
    """
    if n_classes <= input_dim + 1:
        eye = np.eye(n_classes)
        centered = eye - np.full((n_classes, n_classes), 1.0 / n_classes)
        u, s, _ = np.linalg.svd(centered, full_matrices=False)
        coords = u[:, : n_classes - 1] * s[: n_classes - 1]
        means = np.zeros((n_classes, input_dim))
        means[:, : n_classes - 1] = coords
        return means * (scale / np.sqrt(2.0))
    if input_dim < 2:
        raise ConfigError(
            f"{n_classes} classes do not fit in {input_dim} dimension(s)", key="input_dim"
        )
    radius = scale / (2.0 * np.sin(np.pi / n_classes))
    theta = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, input_dim))
    means[:, 0] = radius * np.cos(theta)
    means[:, 1] = radius * np.sin(theta)
    return means


def sample_class_points(
    means: np.ndarray, class_ids, per_class: int, std: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw per_class points around each requested mean, in class order."""
    feats = []
    labels = []
    for cid in class_ids:
        feats.append(means[int(cid)] + std * rng.normal(size=(per_class, means.shape[1])))
        labels.append(np.full(per_class, int(cid), dtype=np.int64))
    return np.vstack(feats), np.concatenate(labels)


def _dump(means: np.ndarray, names, feats: np.ndarray, labels: np.ndarray) -> EmbeddingDump:
    return EmbeddingDump(
        class_names=tuple(names),
        word_vecs=means.astype("<f4"),
        vectors=feats.astype("<f4"),
        modality=np.full(feats.shape[0], MODALITY_IMAGE, dtype=np.uint8),
        class_id=labels.astype(np.uint32),
        ref_pred=None,
        normalized=False,
    )


def density_grid(
    means: np.ndarray, observed, std: float, side: int
) -> tuple[np.ndarray, np.ndarray]:
    """Square lattice over the data region with the observed-mixture density.

    Only defined for two-dimensional inputs.
    """
    if means.shape[1] != 2:
        raise ConfigError(
            f"density grid needs input_dim 2, got {means.shape[1]}", key="input_dim"
        )
    span = 1.2 * float(np.max(np.abs(means))) + 2.0 * std
    axis = np.linspace(-span, span, side)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    dens = gaussian_mixture_density(pts, means[sorted(int(c) for c in observed)], width=std)
    return pts, dens


def default_experiment(
    spec: SynthSpec,
    train_dump: str,
    eval_dump: str,
    grid: str | None,
    overrides: dict | None = None,
) -> dict:
    """Experiment config dict wired to the generated artifacts, defaults elsewhere.

    overrides maps section name to fields merged over the defaults, so a
    generated bundle can pin settings that differ from the library defaults.
    """
    config = {
        "schema_version": SCHEMA_VERSION,
        "seed": spec.seed,
        "data": {
            "train_dump": train_dump,
            "eval_dump": eval_dump,
            "grid": grid,
            "observed_classes": sorted(spec.observed),
        },
        "model": dict(DEFAULTS["model"]),
        "sim": dict(DEFAULTS["sim"]),
        "sgld": dict(DEFAULTS["sgld"]),
        "train": dict(DEFAULTS["train"]),
        "eval": dict(DEFAULTS["eval"], class_list=None),
    }
    for section, fields in (overrides or {}).items():
        config[section].update(fields)
    return config


def generate(
    out_dir: str, spec: SynthSpec, config_overrides: dict | None = None
) -> dict[str, Any]:
    """Write all artifacts for one synthetic dataset and return the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    names = tuple(f"class_{i}" for i in range(spec.n_classes))
    means = cluster_means(spec.n_classes, spec.input_dim, spec.mean_scale)

    train_feats, train_labels = sample_class_points(
        means, sorted(spec.observed), spec.train_per_class, spec.cluster_std, stream(spec.seed, 0)
    )
    eval_feats, eval_labels = sample_class_points(
        means, range(spec.n_classes), spec.eval_per_class, spec.cluster_std, stream(spec.seed, 1)
    )

    train_path = os.path.join(out_dir, "train.empd")
    eval_path = os.path.join(out_dir, "eval.empd")
    write_dump(train_path, _dump(means, names, train_feats, train_labels))
    write_dump(eval_path, _dump(means, names, eval_feats, eval_labels))

    grid_path = None
    if spec.input_dim == 2:
        pts, dens = density_grid(means, spec.observed, spec.cluster_std, spec.grid_side)
        grid_path = os.path.join(out_dir, "grid.tsv")
        write_grid(grid_path, pts, dens)

    config_path = os.path.join(out_dir, "experiment.json")
    config = default_experiment(
        spec,
        train_dump=train_path,
        eval_dump=eval_path,
        grid=grid_path,
        overrides=config_overrides,
    )
    atomic_write_text(config_path, canonical_json(config))

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "train_dump": train_path,
        "eval_dump": eval_path,
        "grid": grid_path,
        "config": config_path,
        "names": list(names),
        "observed": sorted(spec.observed),
        "means": [[float(v) for v in row] for row in means],
        "spec": {
            "n_classes": spec.n_classes,
            "input_dim": spec.input_dim,
            "observed": sorted(spec.observed),
            "train_per_class": spec.train_per_class,
            "eval_per_class": spec.eval_per_class,
            "cluster_std": spec.cluster_std,
            "mean_scale": spec.mean_scale,
            "seed": spec.seed,
            "grid_side": spec.grid_side,
        },
    }
    atomic_write_text(os.path.join(out_dir, "manifest.json"), canonical_json(manifest))
    return manifest


def toy_benchmark_spec(seed: int = 0) -> SynthSpec:
    """The calibrated six-class benchmark shape: four observed, two held out."""
    return SynthSpec(
        n_classes=6,
        input_dim=2,
        observed=(0, 1, 2, 3),
        train_per_class=40,
        eval_per_class=25,
        cluster_std=0.05,
        mean_scale=4.0,
        seed=seed,
        grid_side=20,
    )


def toy_benchmark(out_dir: str, seed: int = 0) -> dict[str, Any]:
    """Write the bundled toy benchmark: tight clusters on a ring, easy to
    classify when observed, hard to name when held out.

    The bundle pins ce_prompts="base".  With sampled prompt rows the
    cross-entropy term differentiates only the image tower (the rows are
    constants of the step), leaving the text tower to the energy term alone,
    which cannot hold observed-class margins.  Scoring against the base rows
    keeps both towers supervised, so the energy weight acts as a measured
    correction on top of a trained model.
    """
    return generate(
        out_dir,
        toy_benchmark_spec(seed),
        config_overrides={"train": {"ce_prompts": "base"}},
    )
