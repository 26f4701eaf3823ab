"""Embedding-geometry diagnostics.

Covers three related tools: statistics of the image-to-prompt offset (is the
gap between the two towers essentially one constant vector?), the gauge
construction showing that a constant gap makes representations
non-identifiable under distance scoring, and the density-to-energy rank
correlation over a feature grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .contrastive import PromptBatch, SimConfig, batch_scores
from .encoders import ModelParams, Vocabulary, encode_class_prompts, encode_image
from .errors import DegenerateInputError, ShapeError
from .numeric import as_f64, sim as sim_value
from .tasks import TaskSpec

_NORM_FLOOR = 1e-300


def pair_gaps(features, prompts) -> np.ndarray:
    """Per-pair offset vectors f_i - h_i for aligned (n, d) stacks."""
    f = as_f64(features, "features")
    h = as_f64(prompts, "prompts")
    if f.shape != h.shape or f.ndim != 2:
        raise ShapeError(f"paired stacks must share shape, got {f.shape} and {h.shape}")
    if f.shape[0] == 0:
        raise DegenerateInputError("no pairs")
    return f - h


def mean_gap(features, prompts) -> np.ndarray:
    """Mean image embedding minus mean prompt embedding.

    Works for unpaired stacks of different sizes; this is the class-level
    gap when both stacks belong to one class.
    """
    f = as_f64(features, "features")
    h = as_f64(prompts, "prompts")
    if f.ndim != 2 or h.ndim != 2 or f.shape[1] != h.shape[1]:
        raise ShapeError(f"stacks must be (n, d) and (m, d), got {f.shape} and {h.shape}")
    if f.shape[0] == 0 or h.shape[0] == 0:
        raise DegenerateInputError("empty stack")
    return np.mean(f, axis=0) - np.mean(h, axis=0)


@dataclass(frozen=True)
class GapCertificate:
    """How close a set of pair gaps is to one constant offset vector.

    direction_mean is the average cosine between individual gaps and the
    mean gap; magnitude_cv is the coefficient of variation of gap lengths.
    Both near their ideals (1 and 0) certify an essentially constant gap.
    """

    n_pairs: int
    direction_mean: float
    magnitude_mean: float
    magnitude_std: float

    @property
    def magnitude_cv(self) -> float:
        if self.magnitude_mean < _NORM_FLOOR:
            raise DegenerateInputError("zero mean gap magnitude")
        return self.magnitude_std / self.magnitude_mean

    def is_constant(self, direction_min: float, cv_max: float) -> bool:
        return self.direction_mean >= direction_min and self.magnitude_cv <= cv_max


def gap_certificate(features, prompts) -> GapCertificate:
    """Measure constancy of the pairwise gap between two aligned stacks."""
    gaps = pair_gaps(features, prompts)
    norms = np.linalg.norm(gaps, axis=1)
    if np.any(norms < _NORM_FLOOR):
        raise DegenerateInputError("zero-length gap, direction undefined")
    center = np.mean(gaps, axis=0)
    cnorm = float(np.linalg.norm(center))
    if cnorm < _NORM_FLOOR:
        raise DegenerateInputError("mean gap vanishes, direction undefined")
    cosines = (gaps @ center) / (norms * cnorm)
    return GapCertificate(
        n_pairs=int(gaps.shape[0]),
        direction_mean=float(np.mean(cosines)),
        magnitude_mean=float(np.mean(norms)),
        magnitude_std=float(np.std(norms)),
    )


def translate_representation(
    f, prompts, offset, image_noise=None, prompt_noise=None
) -> tuple[np.ndarray, np.ndarray]:
    """Shift an image embedding and a (K, d) prompt stack by one shared offset.

    Optional noise vectors model an imperfect shift on either side.  Under
    distance scoring a pure shift changes nothing observable, which is why
    representations differing by such a gauge cannot be told apart.
    """
    f = as_f64(f, "f")
    h = as_f64(prompts, "prompts")
    t = as_f64(offset, "offset")
    if f.ndim != 1 or h.ndim != 2 or h.shape[1] != f.shape[0] or t.shape != f.shape:
        raise ShapeError(
            f"expected f (d,), prompts (K, d), offset (d,), got {f.shape}, {h.shape}, {t.shape}"
        )
    f2 = f + t
    h2 = h + t[None, :]
    if image_noise is not None:
        f2 = f2 + as_f64(image_noise, "image_noise")
    if prompt_noise is not None:
        h2 = h2 + as_f64(prompt_noise, "prompt_noise")[None, :]
    return f2, h2


def representation_discriminant(f_a, prompts_a, f_b, prompts_b, metric: str) -> float:
    """Largest per-class similarity difference between two representations.

    Zero means the two parameterizations are observationally identical: no
    score, probability, or prediction can separate them.
    """
    f_a = as_f64(f_a, "f_a")
    f_b = as_f64(f_b, "f_b")
    h_a = as_f64(prompts_a, "prompts_a")
    h_b = as_f64(prompts_b, "prompts_b")
    if h_a.shape != h_b.shape or h_a.ndim != 2:
        raise ShapeError(f"prompt stacks must match, got {h_a.shape} and {h_b.shape}")
    worst = 0.0
    for k in range(h_a.shape[0]):
        s_a = sim_value(f_a, h_a[k], metric)
        s_b = sim_value(f_b, h_b[k], metric)
        worst = max(worst, abs(s_a - s_b))
    return worst


def grid_energy(
    params: ModelParams,
    vocab: Vocabulary,
    task: TaskSpec,
    grid,
    sim: SimConfig,
) -> np.ndarray:
    """Task energy at each grid point, using the deterministic class prompts."""
    task.check_vocab(vocab)
    if not task.unseen:
        raise DegenerateInputError("task has no unseen classes, energy is undefined")
    grid = as_f64(grid, "grid")
    if grid.ndim != 2:
        raise ShapeError(f"grid must be (n, d_in), got {grid.shape}")
    feats = encode_image(params, grid)
    base = encode_class_prompts(params, vocab, task.classes)
    pb = PromptBatch.single(task.classes, base)
    z = batch_scores(feats, pb, sim) / sim.temperature
    mask = np.array([task.is_unseen(c) for c in pb.class_ids], dtype=bool)
    m_all = np.max(z, axis=1, keepdims=True)
    lse_all = m_all[:, 0] + np.log(np.sum(np.exp(z - m_all), axis=1))
    zu = z[:, mask]
    m_u = np.max(zu, axis=1, keepdims=True)
    lse_u = m_u[:, 0] + np.log(np.sum(np.exp(zu - m_u), axis=1))
    return lse_u - lse_all


def density_energy_correlation(densities, energies) -> tuple[float, float]:
    """Spearman rank correlation between data density and task energy.

    Returns (rho, pvalue).  A clearly negative rho says dense regions leave
    little probability room for unseen classes.
    """
    d = as_f64(densities, "densities").reshape(-1)
    e = as_f64(energies, "energies").reshape(-1)
    if d.shape != e.shape or d.size < 3:
        raise ShapeError("need matching density and energy vectors of length >= 3")
    if np.all(d == d[0]) or np.all(e == e[0]):
        raise DegenerateInputError("rank correlation undefined for constant input")
    rho, pvalue = stats.spearmanr(d, e)
    return float(rho), float(pvalue)


def harmonic_mean(a: float, b: float) -> float:
    """Harmonic mean of two non-negative scores; zero if either is zero."""
    if a < 0.0 or b < 0.0:
        raise DegenerateInputError(f"harmonic mean needs non-negative inputs, got {a}, {b}")
    if a == 0.0 or b == 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def gaussian_mixture_density(points, means, weights=None, width: float = 1.0) -> np.ndarray:
    """Isotropic Gaussian mixture density at each point, up to normalization.

    Shared scalar width; weights default to uniform.  Used to attach a
    ground-truth density to synthetic cluster data.
    """
    pts = as_f64(points, "points")
    mus = as_f64(means, "means")
    if pts.ndim != 2 or mus.ndim != 2 or pts.shape[1] != mus.shape[1]:
        raise ShapeError(f"points {pts.shape} and means {mus.shape} do not align")
    if not width > 0.0:
        raise DegenerateInputError(f"width must be positive, got {width}")
    if weights is None:
        w = np.full(mus.shape[0], 1.0 / mus.shape[0])
    else:
        w = as_f64(weights, "weights")
        if w.shape != (mus.shape[0],) or np.any(w < 0) or not np.sum(w) > 0:
            raise ShapeError("weights must be non-negative, one per component")
        w = w / np.sum(w)
    d2 = (
        np.sum(pts * pts, axis=1)[:, None]
        + np.sum(mus * mus, axis=1)[None, :]
        - 2.0 * pts @ mus.T
    )
    comp = np.exp(-np.maximum(d2, 0.0) / (2.0 * width * width))
    return comp @ w
