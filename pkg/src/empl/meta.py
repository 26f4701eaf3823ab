"""Episodic training with the energy-regularized objective, and open-set evaluation.

Each optimization step draws a task from the observed pool, computes a
cross-entropy term on labeled data, and subtracts energy_weight times the
mean task energy at pairs sampled from the frozen model.  Sampled pairs are
constants of the step: gradients flow through the live encoders only, never
through the sampler.

Evaluation predicts over a caller-chosen class list.  Prompt embeddings for
every candidate class are sampled conditioned on each test image, with the
training pool as the observed split and everything else as unseen.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .contrastive import PromptBatch, SimConfig, cross_entropy_grads, predict_multi
from .encoders import (
    EmbeddingGrads,
    ModelParams,
    Vocabulary,
    add_scaled,
    encode_class_prompts,
    encode_image,
    param_grads,
    scale_word_vec_rows,
    zeros_like_params,
)
from .energy import (
    JointSamples,
    SgldConfig,
    energy_and_grads,
    sample_prompt_batch,
    sample_task_chains,
)
from .errors import ConfigError, ShapeError, TaskError, UnknownClassError
from .numeric import as_f64, stream
from .tasks import TaskSpec, holdout_task, make_task

CE_PROMPT_MODES = ("sampled", "base")


@dataclass(frozen=True)
class LabeledSet:
    """Raw image features with integer labels and the designated observed pool."""

    inputs: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n,)
    observed: tuple[int, ...]

    def __post_init__(self):
        inputs = as_f64(self.inputs, "inputs")
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observed", tuple(int(c) for c in self.observed))
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"inputs {inputs.shape} and labels {labels.shape} do not form a dataset"
            )
        if inputs.shape[0] == 0:
            raise ShapeError("dataset is empty")
        if len(set(self.observed)) != len(self.observed) or not self.observed:
            raise TaskError("observed pool must be non-empty and duplicate-free")
        pool = set(self.observed)
        bad = sorted(set(int(l) for l in labels) - pool)
        if bad:
            raise UnknownClassError(f"labels {bad} outside the observed pool")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the episodic trainer.  energy_weight of zero disables the energy term."""

    energy_weight: float
    lr: float
    momentum: float
    batch_size: int
    epochs: int
    tasks_per_epoch: int
    task_classes: int
    task_unseen: int
    prompts_per_class: int
    ce_prompts: str
    sim: SimConfig
    sgld: SgldConfig
    seed: int

    def __post_init__(self):
        if self.energy_weight < 0.0:
            raise ConfigError(
                f"must be non-negative, got {self.energy_weight}", key="lambda"
            )
        if not self.lr > 0.0:
            raise ConfigError(f"must be positive, got {self.lr}", key="lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"must be in [0, 1), got {self.momentum}", key="momentum")
        for name in ("batch_size", "epochs", "tasks_per_epoch", "prompts_per_class"):
            v = getattr(self, name)
            if v < (0 if name == "epochs" else 1):
                raise ConfigError(f"must be positive, got {v}", key=name)
        if self.task_classes < 2 or not 1 <= self.task_unseen < self.task_classes:
            raise ConfigError(
                f"episode needs observed and unseen classes, got "
                f"task_classes={self.task_classes}, task_unseen={self.task_unseen}",
                key="task_unseen",
            )
        if self.ce_prompts not in CE_PROMPT_MODES:
            raise ConfigError(
                f"unknown ce_prompts {self.ce_prompts!r}, expected one of {CE_PROMPT_MODES}",
                key="ce_prompts",
            )


@dataclass(frozen=True)
class StepSamples:
    """Everything drawn from the frozen model for one step: constants thereafter.

    ce_prompts is one sampled PromptBatch per batch image (None in base
    mode); joint holds the energy-term pairs (None when the energy term is
    off).
    """

    task: TaskSpec
    indices: np.ndarray
    ce_prompts: tuple[PromptBatch, ...] | None
    joint: JointSamples | None


def draw_step_samples(
    frozen: ModelParams,
    data: LabeledSet,
    vocab: Vocabulary,
    cfg: TrainConfig,
    step: int,
    h0: np.ndarray | None = None,
) -> StepSamples:
    """Draw the step's task, batch indices, and frozen-model samples.

    Streams: (step, 0) task draw, (step, 3) batch draw, (step, 1, i) the
    prompt chains conditioning on batch image i, (step, 2) the joint chains.
    """
    task = make_task(
        vocab, data.observed, cfg.task_classes, cfg.task_unseen, stream(cfg.seed, step, 0)
    )
    support = set(task.observed)
    candidates = np.nonzero(np.isin(data.labels, sorted(support)))[0]
    if candidates.size == 0:
        raise TaskError(f"no examples for task classes {sorted(support)}")
    rng_batch = stream(cfg.seed, step, 3)
    indices = rng_batch.choice(
        candidates, size=cfg.batch_size, replace=candidates.size < cfg.batch_size
    )

    ce_prompts = None
    if cfg.ce_prompts == "sampled":
        batches = []
        for j, idx in enumerate(indices):
            f_frozen = encode_image(frozen, data.inputs[int(idx)])
            batches.append(
                sample_prompt_batch(
                    f_frozen,
                    frozen,
                    vocab,
                    task,
                    cfg.prompts_per_class,
                    cfg.sim,
                    cfg.sgld,
                    seed=_substream_seed(cfg.seed, step, 1, j),
                )
            )
        ce_prompts = tuple(batches)

    joint = None
    if cfg.energy_weight > 0.0:
        feats = encode_image(frozen, data.inputs[indices])
        k = task.n_classes
        x0 = feats[np.arange(k) % feats.shape[0]]
        joint = sample_task_chains(
            x0,
            frozen,
            vocab,
            task,
            cfg.sim,
            cfg.sgld,
            seed=_substream_seed(cfg.seed, step, 2),
            h0=h0,
        )
    return StepSamples(task=task, indices=indices, ce_prompts=ce_prompts, joint=joint)


def _substream_seed(seed: int, *key: int) -> int:
    # Chains inside a sub-draw key their own streams from (class, prompt),
    # so each sub-draw needs a distinct root entropy.
    return int(stream(seed, *key).integers(0, 2**63 - 1))


def objective_at(
    params: ModelParams,
    data: LabeledSet,
    vocab: Vocabulary,
    samples: StepSamples,
    cfg: TrainConfig,
) -> tuple[float, ModelParams, dict]:
    """The step objective and its parameter gradient at fixed samples.

    Deterministic and smooth in params, so the analytic gradient can be
    checked against finite differences of the value.
    """
    task = samples.task
    grads = EmbeddingGrads.empty()
    n = len(samples.indices)

    ce_total = 0.0
    for j, idx in enumerate(samples.indices):
        x_raw = data.inputs[int(idx)]
        y = int(data.labels[int(idx)])
        f = encode_image(params, x_raw)
        if cfg.ce_prompts == "base":
            pb = PromptBatch.single(task.classes, encode_class_prompts(params, vocab, task.classes))
        else:
            pb = samples.ce_prompts[j]
        loss_j, df, dh = cross_entropy_grads(f, pb, y, cfg.sim)
        ce_total += loss_j
        grads.image.append((x_raw, df / n))
        if cfg.ce_prompts == "base":
            for k, cid in enumerate(task.classes):
                grads.prompt.append((cid, dh[k, 0] / n))
    ce_term = ce_total / n

    energy_term = 0.0
    if samples.joint is not None:
        k_classes = task.n_classes
        base_live = encode_class_prompts(params, vocab, task.classes)
        e_grads = EmbeddingGrads.empty()
        for k in range(k_classes):
            emb = np.array(base_live, copy=True)
            emb[k] = samples.joint.prompts.embeddings[k, 0]
            pb = PromptBatch.single(task.classes, emb)
            e_val, _, dh = energy_and_grads(samples.joint.x[k], pb, task, cfg.sim)
            energy_term += e_val / k_classes
            for j, cid in enumerate(task.classes):
                if j == k:
                    continue  # that row is the sampled constant
                e_grads.prompt.append((cid, dh[j, 0] / k_classes))
        grads.extend(e_grads.scaled(-cfg.energy_weight))

    loss = ce_term - cfg.energy_weight * energy_term
    grad = param_grads(params, vocab, grads)
    info = {"ce": ce_term, "energy": energy_term, "loss": loss}
    return loss, grad, info


def empl_step(
    params: ModelParams,
    data: LabeledSet,
    vocab: Vocabulary,
    cfg: TrainConfig,
    step: int,
    h0: np.ndarray | None = None,
) -> tuple[float, ModelParams, dict, StepSamples]:
    """Draw samples from the frozen copy of params, then evaluate objective_at."""
    samples = draw_step_samples(params, data, vocab, cfg, step, h0=h0)
    loss, grad, info = objective_at(params, data, vocab, samples, cfg)
    return loss, grad, info, samples


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)


def train(
    params: ModelParams, data: LabeledSet, vocab: Vocabulary, cfg: TrainConfig
) -> TrainResult:
    """Run epochs * tasks_per_epoch optimization steps from params.

    Word vectors outside the observed pool never receive updates, so unseen
    classes keep their vocabulary geometry.  With sgld.persistent the energy
    chains restart from the previous step's samples when the episode size
    repeats.
    """
    for c in data.observed:
        vocab.check_class(c)
    velocity = zeros_like_params(params)
    history: list[dict] = []
    carried: np.ndarray | None = None
    total_steps = cfg.epochs * cfg.tasks_per_epoch
    for step in range(total_steps):
        h0 = carried if cfg.sgld.persistent else None
        loss, grad, info, samples = empl_step(params, data, vocab, cfg, step, h0=h0)
        if samples.joint is not None and cfg.sgld.persistent:
            nxt = samples.joint.prompts.embeddings[:, 0, :]
            carried = nxt if carried is None or nxt.shape == carried.shape else None
        grad = scale_word_vec_rows(grad, data.observed)
        velocity = add_scaled(grad, velocity, cfg.momentum) if cfg.momentum > 0.0 else grad
        params = add_scaled(params, velocity, -cfg.lr)
        history.append(
            {
                "step": step,
                "observed": list(samples.task.observed),
                "unseen": list(samples.task.unseen),
                "ce": info["ce"],
                "energy": info["energy"],
                "loss": info["loss"],
            }
        )
    return TrainResult(params=params, history=history)


@dataclass(frozen=True)
class EvalResult:
    """Accuracy of open-set prediction over a class list."""

    class_ids: tuple[int, ...]
    predictions: np.ndarray  # (n,)
    labels: np.ndarray  # (n,)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.predictions == self.labels))

    def accuracy_over(self, class_ids: Sequence[int]) -> float:
        """Accuracy restricted to examples whose true label is in class_ids."""
        mask = np.isin(self.labels, np.asarray(sorted(int(c) for c in class_ids)))
        if not np.any(mask):
            raise TaskError("no examples with labels in the requested classes")
        return float(np.mean(self.predictions[mask] == self.labels[mask]))

    def per_class(self) -> dict[int, tuple[int, int]]:
        out: dict[int, tuple[int, int]] = {}
        for c in sorted(set(int(l) for l in self.labels)):
            mask = self.labels == c
            out[c] = (int(np.sum(self.predictions[mask] == c)), int(np.sum(mask)))
        return out


def evaluate(
    params: ModelParams,
    vocab: Vocabulary,
    inputs,
    labels,
    class_list: Sequence[int],
    observed_pool: Sequence[int],
    n_prompts: int,
    sim: SimConfig,
    sgld: SgldConfig,
    seed: int,
) -> EvalResult:
    """Predict every input over class_list and score against labels.

    Prompts are sampled per image with the observed pool as the seen split.
    When the pool covers the whole vocabulary there is nothing to sample
    against, and the deterministic class prompts are used instead.  Ties
    break toward the smallest class id.  Image i draws from stream(seed, i).
    """
    inputs = as_f64(inputs, "inputs")
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
        raise ShapeError(f"inputs {inputs.shape} and labels {labels.shape} do not align")
    ids = sorted({vocab.check_class(c) for c in class_list})
    if not ids:
        raise TaskError("class_list is empty")
    task = holdout_task(vocab, observed_pool)
    sample_ok = bool(task.unseen)
    preds = np.empty(inputs.shape[0], dtype=np.int64)
    id_arr = np.array(ids, dtype=np.int64)
    for i in range(inputs.shape[0]):
        f = encode_image(params, inputs[i])
        if sample_ok:
            batch = sample_prompt_batch(
                f,
                params,
                vocab,
                task,
                n_prompts,
                sim,
                sgld,
                seed=_substream_seed(seed, i),
            )
            batch = batch.restrict(ids)
        else:
            batch = PromptBatch.single(ids, encode_class_prompts(params, vocab, ids))
        probs = predict_multi(f, batch, sim)
        best = np.nonzero(probs == np.max(probs))[0]
        preds[i] = id_arr[int(best[0])]
    return EvalResult(class_ids=tuple(ids), predictions=preds, labels=labels)
