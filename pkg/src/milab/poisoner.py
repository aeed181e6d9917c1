"""Adaptive poisoning: choose per-challenge-point replica counts by training
OUT shadow models until they misclassify the point.

The single-point procedure trains m OUT models per candidate count k and
stops at the first k where the mean confidence on the true label falls to the
poison threshold.  The multi-point procedure amortises this over a fixed pool
of 2m half-splits of the attacker dataset (balanced so every challenge point
has exactly m IN and m OUT models), updating all replica counters in lockstep
per iteration; a full run trains 2(k_max+1)m models regardless of how many
challenge points there are.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .datagen import Dataset, SplitPlan, make_split_plan
from .rng import derive_seed

# Trainer seam: (training set, model seed) -> model exposing predict_proba.
TrainerFn = Callable[[Dataset, int], Any]


@dataclass(frozen=True)
class PoisonConfig:
    """Poison threshold, OUT-ensemble size and iteration cap."""

    t_p: float = 0.15
    m: int = 8
    k_max: int = 6

    def __post_init__(self):
        if not 0 < self.t_p <= 1:
            raise ValueError("t_p must be in (0, 1]")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")


@dataclass
class ChallengeSet:
    """Challenge points (by index into the attacker dataset) plus the flipped
    labels used for their poisoned replicas."""

    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    poisoned_labels: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.poisoned_labels = np.asarray(self.poisoned_labels, dtype=np.int64)
        if np.any(self.poisoned_labels == self.labels):
            raise ValueError("poisoned labels must differ from true labels")

    def __len__(self) -> int:
        return len(self.indices)


def make_challenge_set(dataset: Dataset, indices, label_shift: int = 1) -> ChallengeSet:
    """Challenge set with poisoned labels y' = (y + label_shift) mod C."""
    idx = np.asarray(sorted(int(i) for i in indices), dtype=np.int64)
    labels = dataset.labels[idx]
    if label_shift % dataset.num_classes == 0:
        raise ValueError("label_shift must not be a multiple of num_classes")
    poisoned = (labels + label_shift) % dataset.num_classes
    return ChallengeSet(idx, dataset.features[idx].copy(), labels, poisoned)


@dataclass
class TaggedModel:
    """Shadow model tagged with its adaptive iteration and split-plan row."""

    model: Any
    iteration: int
    subset_row: int


@dataclass
class PoisonPlan:
    """Replica counts chosen by the adaptive loop, plus every shadow model
    trained along the way (iteration 0 models carry no poison)."""

    replica_counts: np.ndarray
    iterations_run: int            # index of the last executed iteration
    models: list[TaggedModel] = field(default_factory=list)
    split: SplitPlan | None = None

    @property
    def models_trained(self) -> int:
        return len(self.models)

    def iteration_models(self, iteration: int) -> list[TaggedModel]:
        return [t for t in self.models if t.iteration == iteration]


def _append_replicas(base: Dataset, counts: np.ndarray,
                     challenges: ChallengeSet) -> Dataset:
    """Base dataset plus counts[i] copies of (x_i, y'_i), ascending index."""
    if len(counts) != len(challenges):
        raise ValueError("replica counts misaligned with challenge set")
    if not np.any(counts):
        return base
    reps = np.repeat(np.arange(len(challenges)), counts)
    feats = np.concatenate([base.features, challenges.features[reps]])
    labels = np.concatenate([base.labels, challenges.poisoned_labels[reps]])
    return Dataset(feats, labels, base.num_classes)


def build_poisoned_training_set(base: Dataset, plan: PoisonPlan,
                                challenges: ChallengeSet) -> Dataset:
    """Append plan.replica_counts[i] poisoned replicas per challenge point."""
    return _append_replicas(base, np.asarray(plan.replica_counts), challenges)


def adapt_poison_single(challenge: tuple[np.ndarray, int], poisoned_label: int,
                        d_adv: Dataset, cfg: PoisonConfig, trainer: TrainerFn,
                        seed: int = 0) -> int:
    """Adaptive replica count for one challenge point (not in d_adv).

    For k = 0..k_max, trains m OUT models on d_adv plus k poisoned replicas
    and returns the first k whose mean OUT confidence on the true label is at
    most t_p, or k_max when no count reaches the threshold.
    """
    x, y = challenge
    x = np.asarray(x, dtype=np.float64)
    if poisoned_label == y:
        raise ValueError("poisoned label must differ from the true label")
    if np.any((d_adv.features == x).all(axis=1) & (d_adv.labels == y)):
        raise ValueError("challenge point must not be in the attacker dataset")

    for k in range(cfg.k_max + 1):
        if k == 0:
            train_set = d_adv
        else:
            feats = np.concatenate([d_adv.features, np.tile(x, (k, 1))])
            labels = np.concatenate([d_adv.labels,
                                     np.full(k, poisoned_label, dtype=np.int64)])
            train_set = Dataset(feats, labels, d_adv.num_classes)
        confs = [trainer(train_set, derive_seed(seed, k, j)).predict_proba(x)[y]
                 for j in range(cfg.m)]
        if float(np.mean(confs)) <= cfg.t_p:
            return k
    return cfg.k_max


def adapt_poison_multi(challenges: ChallengeSet, d_adv: Dataset,
                       cfg: PoisonConfig, trainer: TrainerFn,
                       seed: int = 0, batch_trainer=None) -> PoisonPlan:
    """Adaptive replica counts for a set of challenge points.

    Builds 2m half-splits of d_adv with balanced challenge membership, then
    iterates: train one model per split on its subset plus the current
    poisoned replicas, measure each unfrozen point's mean confidence over its
    m OUT models, freeze it once the mean reaches t_p and otherwise increment
    its counter.  Stops when all points are frozen or after iteration k_max;
    counters are capped at k_max.  All trained models are returned, tagged by
    iteration and split row.
    """
    n_c = len(challenges)
    split = make_split_plan(len(d_adv), challenges.indices, 2 * cfg.m,
                            derive_seed(seed, 0))
    counts = np.zeros(n_c, dtype=np.int64)
    frozen = np.zeros(n_c, dtype=bool)
    tagged: list[TaggedModel] = []
    out_rows = [split.out_rows(int(i)) for i in challenges.indices]
    for rows in out_rows:
        assert len(rows) == cfg.m, "split plan must give m OUT models per point"

    iterations_run = 0
    for iteration in range(cfg.k_max + 1):
        iterations_run = iteration
        poisoned = _append_replicas(d_adv, counts, challenges)
        extra = np.arange(len(d_adv), len(poisoned))
        jobs = []
        for row in range(2 * cfg.m):
            subset_idx = np.flatnonzero(split.inclusion[row])
            train_set = poisoned.subset(np.concatenate([subset_idx, extra]))
            jobs.append((train_set, derive_seed(seed, 1 + iteration, row)))
        # The 2m trainings inside one iteration are independent; a batch
        # trainer may fan them out, iterations stay sequential.
        if batch_trainer is not None:
            models = list(batch_trainer(jobs))
        else:
            models = [trainer(ts, s) for ts, s in jobs]
        for row, model in enumerate(models):
            tagged.append(TaggedModel(model, iteration, row))
        for i in range(n_c):
            if frozen[i]:
                continue
            assert counts[i] == iteration, "unfrozen counters advance in lockstep"
            x, y = challenges.features[i], int(challenges.labels[i])
            mu = float(np.mean([models[r].predict_proba(x)[y] for r in out_rows[i]]))
            if mu <= cfg.t_p:
                frozen[i] = True
            else:
                counts[i] += 1
        if frozen.all():
            break

    np.minimum(counts, cfg.k_max, out=counts)
    return PoisonPlan(replica_counts=counts, iterations_run=iterations_run,
                      models=tagged, split=split)


def static_plan(k: int, num_points: int) -> PoisonPlan:
    """Fixed-k plan for the static-poisoning baseline (no models attached)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return PoisonPlan(replica_counts=np.full(num_points, k, dtype=np.int64),
                      iterations_run=0)


def save_poison_plan(plan: PoisonPlan, challenges: ChallengeSet, path: str,
                     model_refs: list[str] | None = None) -> None:
    """Plan manifest: per-point counts, poisoned labels, split bits, model refs."""
    doc = {
        "replica_counts": [int(k) for k in plan.replica_counts],
        "iterations_run": plan.iterations_run,
        "challenge_indices": [int(i) for i in challenges.indices],
        "poisoned_labels": [int(y) for y in challenges.poisoned_labels],
        "split_inclusion": (
            plan.split.inclusion.astype(int).tolist() if plan.split is not None else None),
        "models": model_refs or [],
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
