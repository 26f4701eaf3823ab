"""Episode construction: which classes a task treats as observed vs unseen."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoders import Vocabulary
from .errors import TaskError


@dataclass(frozen=True)
class TaskSpec:
    """One task's class split.

    observed classes have labeled data inside the episode; unseen classes are
    candidates the learner must leave probability room for.  The two pools
    are disjoint; at most one of them may be empty.
    """

    observed: tuple[int, ...]
    unseen: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(int(c) for c in self.observed))
        object.__setattr__(self, "unseen", tuple(int(c) for c in self.unseen))
        if not self.observed and not self.unseen:
            raise TaskError("task has no classes")
        both = self.observed + self.unseen
        if len(set(both)) != len(both):
            raise TaskError("observed and unseen pools must be disjoint and duplicate-free")
        if any(c < 0 for c in both):
            raise TaskError("class ids must be non-negative")

    @property
    def classes(self) -> tuple[int, ...]:
        """All task classes, observed first, in stored order."""
        return self.observed + self.unseen

    @property
    def n_classes(self) -> int:
        return len(self.observed) + len(self.unseen)

    def is_unseen(self, class_id: int) -> bool:
        return int(class_id) in self.unseen

    def check_vocab(self, vocab: Vocabulary) -> "TaskSpec":
        for c in self.classes:
            if not 0 <= c < vocab.size:
                raise TaskError(f"class id {c} outside vocabulary of size {vocab.size}")
        return self


def make_task(
    vocab: Vocabulary,
    pool: Sequence[int],
    n_classes: int,
    n_unseen: int,
    rng: np.random.Generator,
) -> TaskSpec:
    """Draw an episode from a class pool.

    Samples n_classes distinct classes from pool, then marks the last
    n_unseen of the draw as the episode's unseen split.  Both splits must be
    non-empty, so 1 <= n_unseen < n_classes <= len(pool).
    """
    pool = sorted({int(c) for c in pool})
    for c in pool:
        if not 0 <= c < vocab.size:
            raise TaskError(f"pool class id {c} outside vocabulary of size {vocab.size}")
    if n_classes > len(pool):
        raise TaskError(f"cannot draw {n_classes} classes from a pool of {len(pool)}")
    if not 1 <= n_unseen < n_classes:
        raise TaskError(
            f"need at least one observed and one unseen class, "
            f"got n_classes={n_classes}, n_unseen={n_unseen}"
        )
    draw = rng.choice(np.array(pool, dtype=np.int64), size=n_classes, replace=False)
    drawn = [int(c) for c in draw]
    return TaskSpec(observed=tuple(drawn[: n_classes - n_unseen]), unseen=tuple(drawn[n_classes - n_unseen :]))


def holdout_task(vocab: Vocabulary, observed_pool: Sequence[int]) -> TaskSpec:
    """Task whose unseen split is everything outside the observed pool."""
    pool = sorted({int(c) for c in observed_pool})
    for c in pool:
        vocab.check_class(c)
    rest = tuple(c for c in range(vocab.size) if c not in set(pool))
    return TaskSpec(observed=tuple(pool), unseen=rest)
