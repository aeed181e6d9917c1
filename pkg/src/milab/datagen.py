"""Dataset generation, train-membership split plans and neighbor candidates.

Two synthetic families cover the continuous and binary modalities: a Gaussian
mixture with one class mean per coordinate axis, and a binary-prototype
dataset where samples are Bernoulli bit-flips of a per-class prototype.
Split plans assign training membership across an even number of models with
exact IN/OUT balance for designated challenge points.  All generators are
pure functions of their seeds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass
class Dataset:
    """Feature matrix [n x d], integer labels [n] and the class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with features")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass
class SplitPlan:
    """Training-membership bits: model j trains on point i iff inclusion[j, i].

    Challenge columns carry exactly num_models/2 set bits (balanced IN/OUT);
    every other column is Bernoulli(1/2).
    """

    inclusion: np.ndarray
    challenge_indices: tuple[int, ...] = ()

    @property
    def num_models(self) -> int:
        return self.inclusion.shape[0]

    def in_rows(self, point: int) -> np.ndarray:
        return np.flatnonzero(self.inclusion[:, point])

    def out_rows(self, point: int) -> np.ndarray:
        return np.flatnonzero(~self.inclusion[:, point])


@dataclass
class NeighborCandidate:
    """Perturbed variant of a challenge point, carrying the same label."""

    x_c: np.ndarray
    label: int


def gen_gaussian_mixture(num_classes: int, dim: int, n_per_class: int,
                         class_sep: float, seed: int) -> Dataset:
    """Gaussian classes N(mu_c, I) with mu_c = class_sep * e_c.

    Class means sit on scaled coordinate axes (an orthogonal layout with
    equal pairwise distances), so dim must be >= num_classes.
    """
    if min(num_classes, dim, n_per_class) < 1 or not class_sep > 0:
        raise ValueError("counts must be >= 1 and class_sep > 0")
    if dim < num_classes:
        raise ValueError("dim must be >= num_classes for the axis layout")
    gen = make_rng(seed)
    feats = np.empty((num_classes * n_per_class, dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    for c in range(num_classes):
        mu = np.zeros(dim)
        mu[c] = class_sep
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        feats[block] = mu + gen.standard_normal((n_per_class, dim))
    return Dataset(feats, labels, num_classes)


def gen_binary_tabular(num_classes: int, dim: int, n_per_class: int,
                       flip_noise: float, seed: int) -> Dataset:
    """Binary features: per-class random prototype with Bernoulli bit flips."""
    if min(num_classes, dim, n_per_class) < 1:
        raise ValueError("counts must be >= 1")
    if not 0 <= flip_noise < 0.5:
        raise ValueError("flip_noise must be in [0, 0.5)")
    gen = make_rng(seed)
    prototypes = gen.integers(0, 2, size=(num_classes, dim)).astype(np.float64)
    feats = np.empty((num_classes * n_per_class, dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    for c in range(num_classes):
        flips = gen.random((n_per_class, dim)) < flip_noise
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        feats[block] = np.abs(prototypes[c] - flips.astype(np.float64))
    return Dataset(feats, labels, num_classes)


def make_split_plan(n_points: int, challenge_indices, num_models: int,
                    seed: int) -> SplitPlan:
    """Balanced inclusion for challenge points, Bernoulli(1/2) elsewhere."""
    if num_models % 2 != 0:
        raise ValueError("num_models must be even")
    challenge_indices = sorted(int(i) for i in challenge_indices)
    if challenge_indices and not (
            0 <= challenge_indices[0] and challenge_indices[-1] < n_points):
        raise ValueError("challenge index out of range")
    gen = make_rng(seed)
    inclusion = gen.random((num_models, n_points)) < 0.5
    half = num_models // 2
    for i in challenge_indices:
        col = np.zeros(num_models, dtype=bool)
        col[gen.permutation(num_models)[:half]] = True
        inclusion[:, i] = col
    return SplitPlan(inclusion, tuple(challenge_indices))


def gen_neighbors(x: np.ndarray, y: int, modality: str, count: int,
                  noise_scale: float, seed: int) -> list[NeighborCandidate]:
    """Candidate neighbors of (x, y) for the membership neighborhood.

    Continuous modality adds isotropic Gaussian jitter with std noise_scale;
    binary flips each bit independently with probability noise_scale.  Any
    candidate exactly equal to x is rejected and resampled.
    """
    if count < 1 or not noise_scale > 0:
        raise ValueError("count must be >= 1 and noise_scale > 0")
    if modality not in (CONTINUOUS, BINARY):
        raise ValueError(f"unknown modality {modality!r}")
    x = np.asarray(x, dtype=np.float64)
    gen = make_rng(seed)
    out: list[NeighborCandidate] = []
    while len(out) < count:
        todo = count - len(out)
        if modality == CONTINUOUS:
            cands = x + noise_scale * gen.standard_normal((todo, x.size))
        else:
            flips = gen.random((todo, x.size)) < noise_scale
            cands = np.abs(x - flips.astype(np.float64))
        for row in cands:
            if len(out) < count and not np.array_equal(row, x):
                out.append(NeighborCandidate(row, int(y)))
    return out


DATASET_FORMAT = "milab-dataset-v1"


def save_dataset(ds: Dataset, stem: str) -> None:
    """Write ``stem.json`` plus ``stem.bin``: little-endian float32 features
    (row-major) followed by a uint16 label array."""
    if ds.num_classes > 65535:
        raise ValueError("uint16 labels cannot hold this many classes")
    feats = np.ascontiguousarray(ds.features, dtype="<f4").tobytes()
    labels = np.ascontiguousarray(ds.labels, dtype="<u2").tobytes()
    manifest = {
        "format": DATASET_FORMAT,
        "n": len(ds),
        "dim": ds.dim,
        "num_classes": ds.num_classes,
        "feature_dtype": "<f4",
        "label_dtype": "<u2",
    }
    with open(stem + ".json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(stem + ".bin", "wb") as f:
        f.write(feats)
        f.write(labels)


def load_dataset(stem: str) -> Dataset:
    with open(stem + ".json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"unexpected dataset format in {stem}.json")
    n, dim = manifest["n"], manifest["dim"]
    with open(stem + ".bin", "rb") as f:
        raw = f.read()
    feat_bytes = n * dim * 4
    feats = np.frombuffer(raw[:feat_bytes], dtype="<f4").reshape(n, dim)
    labels = np.frombuffer(raw[feat_bytes:], dtype="<u2")
    if labels.size != n:
        raise ValueError(f"label array size mismatch in {stem}.bin")
    return Dataset(feats.astype(np.float64), labels.astype(np.int64),
                   manifest["num_classes"])


def load_csv_dataset(path: str, num_classes: int | None = None) -> Dataset:
    """Import tabular data: header row, last column is the integer label."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty CSV file")
        rows = [row for row in reader if row]
    feats = np.array([[float(v) for v in row[:-1]] for row in rows])
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(feats, labels, num_classes)
