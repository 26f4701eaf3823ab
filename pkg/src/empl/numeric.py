"""Low-level numeric kernels: similarities, stable softmax, aggregation, gradient checking.

All kernels operate in float64 regardless of input dtype.  Similarity
functions come in paired value/gradient form; the gradient battery in the
test suite checks every analytic gradient against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, NumericalError, ShapeError

METRICS = ("cosine", "neg_euclidean")
AGGREGATES = ("mean", "lse")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one role under a root seed.

    Streams with distinct keys never overlap; the same (seed, key) always
    yields the same draw sequence, independent of call granularity.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))

# Norms below this are treated as zero for cosine purposes.
_NORM_FLOOR = 1e-300


def as_f64(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray and require finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains non-finite values")
    return arr


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} is non-finite")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_f64(a, "a")
    b = as_f64(b, "b")
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"expected 1-d vectors, got shapes {a.shape} and {b.shape}")
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    return a, b


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors; rejects zero-norm inputs."""
    a, b = _pair(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        raise DegenerateInputError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_sim_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of cosine_sim(a, b) with respect to a and b."""
    a, b = _pair(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        raise DegenerateInputError("cosine similarity undefined for zero-norm vector")
    s = float(np.dot(a, b) / (na * nb))
    ga = b / (na * nb) - s * a / (na * na)
    gb = a / (na * nb) - s * b / (nb * nb)
    return ga, gb


def neg_euclidean_sim(a, b) -> float:
    """Negated euclidean distance, so larger means more similar."""
    a, b = _pair(a, b)
    return -float(np.linalg.norm(a - b))


def neg_euclidean_sim_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of neg_euclidean_sim; at a == b the (sub)gradient is zero."""
    a, b = _pair(a, b)
    diff = a - b
    dist = float(np.linalg.norm(diff))
    if dist < _NORM_FLOOR:
        return np.zeros_like(a), np.zeros_like(b)
    ga = -diff / dist
    return ga, -ga


def sim(a, b, metric: str) -> float:
    if metric == "cosine":
        return cosine_sim(a, b)
    if metric == "neg_euclidean":
        return neg_euclidean_sim(a, b)
    raise ConfigError(f"unknown metric {metric!r}, expected one of {METRICS}", key="metric")


def sim_grad(a, b, metric: str) -> tuple[np.ndarray, np.ndarray]:
    if metric == "cosine":
        return cosine_sim_grad(a, b)
    if metric == "neg_euclidean":
        return neg_euclidean_sim_grad(a, b)
    raise ConfigError(f"unknown metric {metric!r}, expected one of {METRICS}", key="metric")


def pairwise_sim(rows: np.ndarray, cols: np.ndarray, metric: str) -> np.ndarray:
    """Similarity matrix between row vectors of two stacks.

    rows is (n, d), cols is (m, d); the result is (n, m).
    """
    rows = as_f64(rows, "rows")
    cols = as_f64(cols, "cols")
    if rows.ndim != 2 or cols.ndim != 2 or rows.shape[1] != cols.shape[1]:
        raise ShapeError(f"incompatible stacks: {rows.shape} vs {cols.shape}")
    if metric == "cosine":
        rn = np.linalg.norm(rows, axis=1)
        cn = np.linalg.norm(cols, axis=1)
        if np.any(rn < _NORM_FLOOR) or np.any(cn < _NORM_FLOOR):
            raise DegenerateInputError("cosine similarity undefined for zero-norm vector")
        return (rows @ cols.T) / np.outer(rn, cn)
    if metric == "neg_euclidean":
        sq = (
            np.sum(rows * rows, axis=1)[:, None]
            + np.sum(cols * cols, axis=1)[None, :]
            - 2.0 * (rows @ cols.T)
        )
        return -np.sqrt(np.maximum(sq, 0.0))
    raise ConfigError(f"unknown metric {metric!r}, expected one of {METRICS}", key="metric")


def log_sum_exp(values) -> float:
    """Numerically stable log(sum(exp(values))) of a non-empty vector."""
    v = as_f64(values, "values")
    if v.ndim != 1:
        v = v.reshape(-1)
    if v.size == 0:
        raise DegenerateInputError("log_sum_exp of an empty set")
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def softmax_temp(logits, temperature: float) -> np.ndarray:
    """Softmax of logits / temperature, computed stably.

    The result sums to 1 exactly up to float64 rounding of the final divide.
    """
    if not temperature > 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}", key="temperature")
    z = as_f64(logits, "logits")
    if z.ndim != 1:
        raise ShapeError(f"expected 1-d logits, got shape {z.shape}")
    if z.size == 0:
        raise DegenerateInputError("softmax of an empty set")
    z = z / temperature
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def softmax_temp_vjp(probs: np.ndarray, temperature: float, upstream: np.ndarray) -> np.ndarray:
    """Backpropagate upstream through softmax_temp, returning d/d logits."""
    inner = upstream - float(np.dot(upstream, probs))
    return probs * inner / temperature


def aggregate(values, mode: str) -> float:
    """Combine per-prompt scores: arithmetic mean or log-mean-exp."""
    v = as_f64(values, "values")
    if v.ndim != 1:
        v = v.reshape(-1)
    if v.size == 0:
        raise DegenerateInputError("aggregate of an empty set")
    if mode == "mean":
        return float(np.mean(v))
    if mode == "lse":
        return log_sum_exp(v) - float(np.log(v.size))
    raise ConfigError(f"unknown aggregate {mode!r}, expected one of {AGGREGATES}", key="aggregate")


def aggregate_grad(values, mode: str) -> np.ndarray:
    """Gradient of aggregate(values, mode) with respect to values."""
    v = as_f64(values, "values")
    if v.ndim != 1:
        v = v.reshape(-1)
    if v.size == 0:
        raise DegenerateInputError("aggregate of an empty set")
    if mode == "mean":
        return np.full(v.shape, 1.0 / v.size)
    if mode == "lse":
        m = np.max(v)
        e = np.exp(v - m)
        return e / np.sum(e)
    raise ConfigError(f"unknown aggregate {mode!r}, expected one of {AGGREGATES}", key="aggregate")


@dataclass(frozen=True)
class GradReport:
    """Outcome of one finite-difference comparison."""

    max_abs_err: float
    max_rel_err: float
    worst_index: tuple[int, ...]
    n_coords: int

    def ok(self, rel_tol: float = 1e-4) -> bool:
        return self.max_rel_err < rel_tol


def grad_check(
    fn: Callable[[np.ndarray], float],
    x0,
    analytic,
    eps: float = 1e-5,
) -> GradReport:
    """Compare an analytic gradient against central differences of fn at x0.

    Relative error uses max(|analytic|, |numeric|, 1) as denominator so
    near-zero coordinates are judged on absolute error.
    """
    x0 = as_f64(x0, "x0")
    g = as_f64(analytic, "analytic")
    if g.shape != x0.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match point shape {x0.shape}")
    max_abs = 0.0
    max_rel = 0.0
    worst: tuple[int, ...] = ()
    it = np.nditer(x0, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        step = np.zeros_like(x0)
        step[idx] = eps
        num = (fn(x0 + step) - fn(x0 - step)) / (2.0 * eps)
        ana = float(g[idx])
        abs_err = abs(ana - num)
        rel_err = abs_err / max(abs(ana), abs(num), 1.0)
        if rel_err > max_rel:
            max_rel = rel_err
            worst = idx
        max_abs = max(max_abs, abs_err)
        it.iternext()
    return GradReport(max_abs_err=max_abs, max_rel_err=max_rel, worst_index=worst, n_coords=x0.size)


def check_grads(
    fn: Callable[[np.ndarray], float],
    points_and_grads: Sequence[tuple[np.ndarray, np.ndarray]],
    eps: float = 1e-5,
) -> GradReport:
    """Run grad_check over several points and fold into one worst-case report."""
    if not points_and_grads:
        raise DegenerateInputError("no points to check")
    reports = [grad_check(fn, x, g, eps) for x, g in points_and_grads]
    worst = max(reports, key=lambda r: r.max_rel_err)
    return GradReport(
        max_abs_err=max(r.max_abs_err for r in reports),
        max_rel_err=worst.max_rel_err,
        worst_index=worst.worst_index,
        n_coords=sum(r.n_coords for r in reports),
    )
