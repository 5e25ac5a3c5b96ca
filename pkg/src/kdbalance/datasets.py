"""Seeded two-dimensional toy classification sets.

``gaussian_blobs``: class ``k`` is centred at angle ``2*pi*k/K`` on the unit
circle with isotropic Gaussian noise of standard deviation ``noise``.
``concentric_rings``: class ``k`` lies on radius ``1 + k`` at a uniform angle,
with Gaussian radial noise.

Both sets are drawn from one PCG64 stream seeded with ``seed``: the train
split first, then the test split, so the two are independent draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .nn import Batch

KINDS = ("gaussian_blobs", "concentric_rings")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian_blobs"
    n_classes: int = 3
    n_train: int = 600
    n_test: int = 300
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_train < self.n_classes or self.n_test < self.n_classes:
            raise ValueError("n_train and n_test must each be >= n_classes")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _draw(spec: DatasetSpec, n: int, rng: np.random.Generator) -> Batch:
    # balanced within one: labels 0..K-1 repeated, then shuffled
    labels = rng.permutation(np.arange(n) % spec.n_classes)
    if spec.kind == "gaussian_blobs":
        theta = 2.0 * np.pi * labels / spec.n_classes
        x = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        x = x + spec.noise * rng.standard_normal((n, 2))
    else:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = 1.0 + labels + spec.noise * rng.standard_normal(n)
        x = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return Batch(x, labels.astype(np.int64))


def generate(spec: DatasetSpec) -> Tuple[Batch, Batch]:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    train = _draw(spec, spec.n_train, rng)
    test = _draw(spec, spec.n_test, rng)
    return train, test


def to_csv(batch: Batch) -> str:
    d = batch.inputs.shape[1]
    lines = [",".join([f"x{i}" for i in range(d)] + ["label"])]
    for row, label in zip(batch.inputs, batch.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    return "\n".join(lines) + "\n"
