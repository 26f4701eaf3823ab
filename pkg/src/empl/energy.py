"""Task energy over embedding pairs and Langevin samplers for it.

The energy of an (image, prompts) pair under a task is the log of the total
probability mass the classifier puts on the task's unseen classes.  Low
energy means the pair looks like observed data; high energy means the model
would route it to classes it has never been trained on.

Sampling uses stochastic gradient Langevin dynamics.  In joint mode one step
moves the image embedding first, then the prompt embedding against the
refreshed image.  In conditional mode the image embedding is pinned and only
the prompt embedding moves.  Every chain owns a seeded noise stream keyed by
its role, so runs are reproducible at any batching granularity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .contrastive import PromptBatch, SimConfig, class_scores, scores_vjp
from .encoders import ModelParams, Vocabulary, encode_class_prompts
from .errors import ConfigError, DivergenceError, ShapeError, TaskError
from .numeric import as_f64, log_sum_exp, stream
from .tasks import TaskSpec

SGLD_MODES = ("joint", "conditional_on_image")

# (x, h) -> (grad_x, grad_h); stands in for the task energy in tests.
GradOverride = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SgldConfig:
    """Langevin sampler settings.

    alpha is the step size (noise variance alpha per step), steps the chain
    length, init_noise_std the scale of the Gaussian kick applied to the
    prompt start, mode one of SGLD_MODES.  persistent lets a trainer carry
    chains across optimization steps instead of restarting them.
    """

    alpha: float
    steps: int
    init_noise_std: float
    mode: str
    persistent: bool

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}", key="alpha")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}", key="steps")
        if self.init_noise_std < 0.0:
            raise ConfigError(
                f"init_noise_std must be non-negative, got {self.init_noise_std}",
                key="init_noise_std",
            )
        if self.mode not in SGLD_MODES:
            raise ConfigError(
                f"unknown mode {self.mode!r}, expected one of {SGLD_MODES}", key="mode"
            )


def energy(x, prompts: PromptBatch, task: TaskSpec, cfg: SimConfig) -> float:
    """Log unseen-class mass of the pair under the task's class split.

    prompts must cover exactly the task's classes.  When every task class is
    unseen the energy is exactly zero.
    """
    scores = class_scores(x, prompts, cfg)
    z = scores / cfg.temperature
    mask = _unseen_mask(prompts, task)
    return log_sum_exp(z[mask]) - log_sum_exp(z)


def energy_and_grads(
    x, prompts: PromptBatch, task: TaskSpec, cfg: SimConfig
) -> tuple[float, np.ndarray, np.ndarray]:
    """Energy plus gradients with respect to x and every prompt embedding."""
    x = as_f64(x, "x")
    scores = class_scores(x, prompts, cfg)
    z = scores / cfg.temperature
    mask = _unseen_mask(prompts, task)
    value = log_sum_exp(z[mask]) - log_sum_exp(z)
    p_all = _stable_softmax(z)
    p_unseen = np.zeros_like(z)
    p_unseen[mask] = _stable_softmax(z[mask])
    upstream = (p_unseen - p_all) / cfg.temperature
    dx, dh = scores_vjp(x, prompts, cfg, upstream)
    return value, dx, dh


def unseen_mass(x, prompts: PromptBatch, task: TaskSpec, cfg: SimConfig) -> float:
    """exp(energy): the raw probability mass on unseen classes."""
    return float(np.exp(energy(x, prompts, task, cfg)))


def _unseen_mask(prompts: PromptBatch, task: TaskSpec) -> np.ndarray:
    if set(prompts.class_ids) != set(task.classes):
        raise TaskError(
            f"prompt batch classes {sorted(prompts.class_ids)} do not match "
            f"task classes {sorted(task.classes)}"
        )
    if not task.unseen:
        raise TaskError("task has no unseen classes, energy is undefined")
    return np.array([task.is_unseen(c) for c in prompts.class_ids], dtype=bool)


def _stable_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


@dataclass(frozen=True)
class SampleView:
    """Frozen per-class prompt embeddings with one live slot.

    base holds one embedding per task class under the frozen parameters; a
    chain's h value stands in for the row at target_index.
    """

    class_ids: tuple[int, ...]
    base: np.ndarray  # (K, d)
    target_index: int

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        base = as_f64(self.base, "base")
        object.__setattr__(self, "base", base)
        if base.ndim != 2 or base.shape[0] != len(self.class_ids):
            raise ShapeError(f"base shape {base.shape} does not cover {len(self.class_ids)} classes")
        if not 0 <= self.target_index < len(self.class_ids):
            raise ShapeError(f"target_index {self.target_index} out of range")

    @property
    def target_class(self) -> int:
        return self.class_ids[self.target_index]

    def batch(self, h) -> PromptBatch:
        """P = 1 prompt batch with h substituted for the target class."""
        emb = np.array(self.base, copy=True)
        emb[self.target_index] = as_f64(h, "h")
        return PromptBatch.single(self.class_ids, emb)


def task_view(
    params: ModelParams, vocab: Vocabulary, task: TaskSpec, target_index: int = 0
) -> SampleView:
    """SampleView over a task's classes from canonical class prompts."""
    task.check_vocab(vocab)
    base = encode_class_prompts(params, vocab, task.classes)
    return SampleView(class_ids=task.classes, base=base, target_index=target_index)


@dataclass(frozen=True)
class ChainState:
    """One Langevin chain: current pair, step counter, and its noise stream."""

    x: np.ndarray
    h: np.ndarray
    step: int
    rng: np.random.Generator

    def __post_init__(self):
        object.__setattr__(self, "x", as_f64(self.x, "x"))
        object.__setattr__(self, "h", as_f64(self.h, "h"))


def init_chain(
    x0, view: SampleView, sgld: SgldConfig, seed: int, key: Sequence[int]
) -> ChainState:
    """Start a chain at the image embedding and the noisy target prompt.

    The first draw from the chain's stream is the prompt init kick, even
    when init_noise_std is zero.
    """
    rng = stream(seed, *key)
    x0 = as_f64(x0, "x0")
    h0 = view.base[view.target_index] + sgld.init_noise_std * rng.normal(size=view.base.shape[1])
    return ChainState(x=x0, h=h0, step=0, rng=rng)


def _chain_grads(
    state_x: np.ndarray,
    state_h: np.ndarray,
    view: SampleView,
    task: TaskSpec,
    sim: SimConfig,
    override: GradOverride | None,
) -> tuple[np.ndarray, np.ndarray]:
    if override is not None:
        gx, gh = override(state_x, state_h)
        return as_f64(gx, "grad_x"), as_f64(gh, "grad_h")
    _, dx, dh = energy_and_grads(state_x, view.batch(state_h), task, sim)
    return dx, dh[view.target_index, 0]


def sgld_step(
    state: ChainState,
    view: SampleView,
    task: TaskSpec,
    sim: SimConfig,
    sgld: SgldConfig,
    energy_override: GradOverride | None = None,
) -> ChainState:
    """One Langevin update of the chain.

    Joint mode moves x against the current pair, then h against the moved x.
    Conditional mode leaves x untouched and draws no noise for it.  The
    energy_override hook replaces the task energy's gradients, which is how
    the sampler is tested against closed-form targets.
    """
    a = sgld.alpha
    root = np.sqrt(a)
    x, h = state.x, state.h
    if sgld.mode == "joint":
        gx, _ = _chain_grads(x, h, view, task, sim, energy_override)
        x = x - 0.5 * a * gx + root * state.rng.normal(size=x.shape)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("image iterate became non-finite", step=state.step)
        _, gh = _chain_grads(x, h, view, task, sim, energy_override)
        h = h - 0.5 * a * gh + root * state.rng.normal(size=h.shape)
    else:
        _, gh = _chain_grads(x, h, view, task, sim, energy_override)
        h = h - 0.5 * a * gh + root * state.rng.normal(size=h.shape)
    if not np.all(np.isfinite(h)):
        raise DivergenceError("prompt iterate became non-finite", step=state.step)
    return ChainState(x=x, h=h, step=state.step + 1, rng=state.rng)


def run_chain(
    state: ChainState,
    view: SampleView,
    task: TaskSpec,
    sim: SimConfig,
    sgld: SgldConfig,
    energy_override: GradOverride | None = None,
) -> ChainState:
    """Advance a chain sgld.steps times."""
    for _ in range(sgld.steps):
        state = sgld_step(state, view, task, sim, sgld, energy_override)
    return state


@dataclass(frozen=True)
class ChainRun:
    """Final chain states from the batched driver, plus optional history."""

    x: np.ndarray  # (C, d)
    h: np.ndarray  # (C, d)
    steps: int
    history_x: np.ndarray | None = None  # (C, R, d)
    history_h: np.ndarray | None = None  # (C, R, d)


# Batched gradient override: (X, H) stacks -> (GX, GH) stacks.
BatchGradOverride = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def run_chains(
    x0: np.ndarray,
    view_base: np.ndarray,
    target_idx: np.ndarray,
    unseen_mask: np.ndarray,
    sim: SimConfig,
    sgld: SgldConfig,
    seed: int,
    keys: Sequence[tuple[int, ...]],
    record_last: int = 0,
    energy_override: BatchGradOverride | None = None,
    h_start: np.ndarray | None = None,
) -> ChainRun:
    """Run many independent chains in lockstep.

    x0 is (C, d); view_base is the shared (K, d) frozen prompt table;
    target_idx gives each chain's live slot; unseen_mask marks the task's
    unseen classes in view order.  Noise for chain c comes from
    stream(seed, *keys[c]): the init kick first, then per step either
    (eps_x, eps_h) in joint mode or just eps_h in conditional mode.
    h_start overrides where the live slots begin; the frozen table is
    untouched by it.  The result is the same trajectory the serial sampler
    produces chain by chain, up to float reassociation in the gradient
    arithmetic.
    """
    x = as_f64(x0, "x0").copy()
    base = as_f64(view_base, "view_base")
    if x.ndim != 2:
        raise ShapeError(f"x0 must be (C, d), got {x.shape}")
    n_chains, d = x.shape
    target_idx = np.asarray(target_idx, dtype=np.int64)
    if target_idx.shape != (n_chains,):
        raise ShapeError("target_idx must give one slot per chain")
    if len(keys) != n_chains:
        raise ShapeError("keys must give one stream key per chain")
    if energy_override is None:
        if base.ndim != 2 or base.shape[1] != d:
            raise ShapeError(f"view_base shape {base.shape} incompatible with chains of dim {d}")
        if not np.any(unseen_mask):
            raise TaskError("task has no unseen classes, energy is undefined")

    draws_per_step = 2 if sgld.mode == "joint" else 1
    rngs = [stream(seed, *k) for k in keys]
    init_eps = np.stack([r.normal(size=d) for r in rngs])
    if h_start is not None:
        h = as_f64(h_start, "h_start")
        if h.shape != (n_chains, d):
            raise ShapeError(f"h_start shape {h.shape}, expected ({n_chains}, {d})")
    else:
        h = base[target_idx] if energy_override is None else np.zeros_like(x)
    h = h + sgld.init_noise_std * init_eps
    noise = (
        np.stack([r.normal(size=(sgld.steps, draws_per_step, d)) for r in rngs])
        if sgld.steps > 0
        else np.zeros((n_chains, 0, draws_per_step, d))
    )

    # Per-chain effective prompt table: frozen rows plus the live slot.
    if energy_override is None:
        eff = np.broadcast_to(base, (n_chains,) + base.shape).copy()
        eff[np.arange(n_chains), target_idx] = h
        umask = np.asarray(unseen_mask, dtype=bool)
    else:
        eff = None
        umask = None

    root = np.sqrt(sgld.alpha)
    half = 0.5 * sgld.alpha
    hist_x = [] if record_last > 0 else None
    hist_h = [] if record_last > 0 else None

    for t in range(sgld.steps):
        if sgld.mode == "joint":
            if energy_override is not None:
                gx, _ = energy_override(x, h)
            else:
                gx = _batched_grad_x(x, eff, umask, sim)
            x = x - half * gx + root * noise[:, t, 0, :]
            if not np.all(np.isfinite(x)):
                raise DivergenceError("image iterate became non-finite", step=t)
            if energy_override is not None:
                _, gh = energy_override(x, h)
            else:
                gh = _batched_grad_h(x, eff, umask, target_idx, sim)
            h = h - half * gh + root * noise[:, t, 1, :]
        else:
            if energy_override is not None:
                _, gh = energy_override(x, h)
            else:
                gh = _batched_grad_h(x, eff, umask, target_idx, sim)
            h = h - half * gh + root * noise[:, t, 0, :]
        if not np.all(np.isfinite(h)):
            raise DivergenceError("prompt iterate became non-finite", step=t)
        if eff is not None:
            eff[np.arange(n_chains), target_idx] = h
        if hist_h is not None and t >= sgld.steps - record_last:
            hist_x.append(x.copy())
            hist_h.append(h.copy())

    return ChainRun(
        x=x,
        h=h,
        steps=sgld.steps,
        history_x=np.stack(hist_x, axis=1) if hist_x else None,
        history_h=np.stack(hist_h, axis=1) if hist_h else None,
    )


def _batched_sims(x: np.ndarray, eff: np.ndarray, sim: SimConfig) -> np.ndarray:
    """Similarity of each chain's x to each of its effective prompts, (C, K)."""
    if sim.metric == "cosine":
        xn = np.linalg.norm(x, axis=1, keepdims=True)
        en = np.linalg.norm(eff, axis=2)
        return np.einsum("cd,ckd->ck", x, eff) / (xn * en)
    diff = x[:, None, :] - eff
    return -np.linalg.norm(diff, axis=2)


def _upstream(x: np.ndarray, eff: np.ndarray, umask: np.ndarray, sim: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """(sims, d energy / d scores) for every chain, each (C, K)."""
    s = _batched_sims(x, eff, sim)
    z = s / sim.temperature
    zm = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(zm)
    p_all = e / np.sum(e, axis=1, keepdims=True)
    zu = np.where(umask[None, :], z, -np.inf)
    zum = zu - np.max(zu, axis=1, keepdims=True)
    eu = np.exp(zum)
    p_unseen = eu / np.sum(eu, axis=1, keepdims=True)
    return s, (p_unseen - p_all) / sim.temperature


def _batched_grad_h(
    x: np.ndarray,
    eff: np.ndarray,
    umask: np.ndarray,
    target_idx: np.ndarray,
    sim: SimConfig,
) -> np.ndarray:
    s, u = _upstream(x, eff, umask, sim)
    rows = np.arange(x.shape[0])
    coeff = u[rows, target_idx]  # (C,)
    h = eff[rows, target_idx]  # (C, d)
    if sim.metric == "cosine":
        xn = np.linalg.norm(x, axis=1)
        hn = np.linalg.norm(h, axis=1)
        st = s[rows, target_idx]
        dh = x / (xn * hn)[:, None] - (st / (hn * hn))[:, None] * h
    else:
        diff = x - h
        dist = np.linalg.norm(diff, axis=1, keepdims=True)
        dh = np.divide(diff, dist, out=np.zeros_like(diff), where=dist > 0)
    return coeff[:, None] * dh


def _batched_grad_x(
    x: np.ndarray, eff: np.ndarray, umask: np.ndarray, sim: SimConfig
) -> np.ndarray:
    s, u = _upstream(x, eff, umask, sim)
    if sim.metric == "cosine":
        xn = np.linalg.norm(x, axis=1)  # (C,)
        en = np.linalg.norm(eff, axis=2)  # (C, K)
        term_a = np.einsum("ck,ckd->cd", u / en, eff) / xn[:, None]
        term_b = (np.sum(u * s, axis=1) / (xn * xn))[:, None] * x
        return term_a - term_b
    diff = x[:, None, :] - eff  # (C, K, d)
    dist = np.linalg.norm(diff, axis=2)  # (C, K)
    unit = np.divide(diff, dist[:, :, None], out=np.zeros_like(diff), where=dist[:, :, None] > 0)
    return np.einsum("ck,ckd->cd", -u, unit)


def sample_prompt_batch(
    f,
    params: ModelParams,
    vocab: Vocabulary,
    task: TaskSpec,
    n_prompts: int,
    sim: SimConfig,
    sgld: SgldConfig,
    seed: int,
) -> PromptBatch:
    """Sample n_prompts prompt embeddings per task class, conditioned on one image.

    The image embedding stays pinned regardless of sgld.mode; chains only
    move the prompt coordinate.  Chain (k, p) draws from stream(seed, k, p).
    """
    if n_prompts < 1:
        raise ConfigError(f"n_prompts must be positive, got {n_prompts}", key="n_prompts")
    f = as_f64(f, "f")
    base = encode_class_prompts(params, vocab, task.check_vocab(vocab).classes)
    umask = np.array([task.is_unseen(c) for c in task.classes], dtype=bool)
    k_classes = len(task.classes)
    keys = [(k, p) for k in range(k_classes) for p in range(n_prompts)]
    target_idx = np.array([k for k, _ in keys], dtype=np.int64)
    x0 = np.broadcast_to(f, (len(keys), f.shape[0]))
    cond = replace(sgld, mode="conditional_on_image")
    run = run_chains(x0, base, target_idx, umask, sim, cond, seed, keys)
    emb = run.h.reshape(k_classes, n_prompts, base.shape[1])
    return PromptBatch(class_ids=task.classes, embeddings=emb)


@dataclass(frozen=True)
class JointSamples:
    """Model samples for a task: one (x, h) pair per task class."""

    class_ids: tuple[int, ...]
    x: np.ndarray  # (K, d)
    prompts: PromptBatch  # P = 1, aligned with class_ids


def sample_task_chains(
    x0: np.ndarray,
    params: ModelParams,
    vocab: Vocabulary,
    task: TaskSpec,
    sim: SimConfig,
    sgld: SgldConfig,
    seed: int,
    h0: np.ndarray | None = None,
) -> JointSamples:
    """Sample one chain per task class from starting image embeddings.

    x0 is (K, d), one start per task class in task order.  Chain k draws
    from stream(seed, k).  In conditional mode the image coordinates stay at
    x0.  h0 optionally restarts chains from carried-over prompt embeddings
    instead of the frozen table (persistent chains).
    """
    task.check_vocab(vocab)
    base = encode_class_prompts(params, vocab, task.classes)
    k_classes = len(task.classes)
    x0 = as_f64(x0, "x0")
    if x0.shape != (k_classes, base.shape[1]):
        raise ShapeError(f"x0 shape {x0.shape}, expected ({k_classes}, {base.shape[1]})")
    umask = np.array([task.is_unseen(c) for c in task.classes], dtype=bool)
    keys = [(k,) for k in range(k_classes)]
    target_idx = np.arange(k_classes, dtype=np.int64)
    h_start = None
    if h0 is not None:
        h_start = as_f64(h0, "h0")
        if h_start.shape != base.shape:
            raise ShapeError(f"h0 shape {h_start.shape}, expected {base.shape}")
    run = run_chains(
        x0, base, target_idx, umask, sim, sgld, seed, keys, h_start=h_start
    )
    prompts = PromptBatch.single(task.classes, run.h)
    return JointSamples(class_ids=task.classes, x=run.x, prompts=prompts)
