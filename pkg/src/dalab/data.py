"""Synthetic distribution-shift generators and CSV feature ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class DomainDataset:
    features: np.ndarray
    labels: np.ndarray
    domain: str = "source"
    seed: int | None = None
    n_classes: int | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError(f"features must be a non-empty (n, d) matrix, got shape {self.features.shape}")
        if self.labels.shape != (len(self.features),):
            raise ValueError(f"{len(self.labels)} labels for {len(self.features)} rows")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.n_classes is None:
            self.n_classes = max(int(self.labels.max()) + 1, 2)
        elif self.labels.max() >= self.n_classes:
            raise ValueError(f"label {self.labels.max()} out of range for {self.n_classes} classes")
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "DomainDataset":
        return DomainDataset(self.features[idx], self.labels[idx], self.domain, self.seed, self.n_classes)

    def with_labels(self, labels) -> "DomainDataset":
        return DomainDataset(self.features, labels, self.domain, self.seed, self.n_classes)

    def label_marginal(self, k: int = 1) -> float:
        return float(np.mean(self.labels == k))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _binary_labels(n: int, p1: float, rng: np.random.Generator) -> np.ndarray:
    # exact class counts, shuffled
    n1 = int(round(n * p1))
    y = np.zeros(n, dtype=np.int64)
    y[:n1] = 1
    return rng.permutation(y)


def figure1_toy(epsilon: float = 0.1, n_per_domain: int = 2000, cluster_separation: float = 1.0,
                noise_sigma: float = 0.1, seed: int = 0):
    """Four 2-D clusters, one per (domain, label).

    Source clusters sit at ``(-s, +1)`` (label 0) and ``(+s, +1)`` (label 1),
    target clusters at ``(-s, -1)`` and ``(+s, -1)``. The first coordinate
    carries the label in both domains; the second only separates domains.
    Label marginals are ``p_S(y=1) = 0.5 + eps`` and ``p_T(y=1) = 0.5 - eps``.
    """
    if not 0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must be in [0, 0.5), got {epsilon}")
    if n_per_domain < 1:
        raise ValueError("n_per_domain must be >= 1")
    if cluster_separation <= 0 or noise_sigma < 0:
        raise ValueError("cluster_separation must be > 0 and noise_sigma >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for domain, p1, height in (("source", 0.5 + epsilon, 1.0), ("target", 0.5 - epsilon, -1.0)):
        y = _binary_labels(n_per_domain, p1, rng)
        centers = np.stack([np.where(y == 1, cluster_separation, -cluster_separation),
                            np.full(n_per_domain, height)], axis=1)
        X = centers + noise_sigma * rng.standard_normal((n_per_domain, 2))
        out.append(DomainDataset(X, y, domain, seed, 2))
    return tuple(out)


def _moons(n: int, y: np.ndarray, noise: float, rng):
    t = rng.uniform(0.0, np.pi, size=n)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    X = np.where(y[:, None] == 0, upper, lower)
    X = X - np.array([0.5, 0.25])
    return X + noise * rng.standard_normal((n, 2))


def moons_shift(n_per_domain: int = 1000, rotation_deg: float = 30.0, noise: float = 0.1,
                label_shift: float = 0.0, seed: int = 0):
    """Interleaving half-moons; the target is the source rotated about the origin.

    ``label_shift`` moves the label marginals apart as
    ``p_S(y=1) = 0.5 + label_shift`` and ``p_T(y=1) = 0.5 - label_shift``.
    """
    if n_per_domain < 1:
        raise ValueError("n_per_domain must be >= 1")
    if not 0 <= label_shift < 0.5:
        raise ValueError(f"label_shift must be in [0, 0.5), got {label_shift}")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    ys = _binary_labels(n_per_domain, 0.5 + label_shift, rng)
    Xs = _moons(n_per_domain, ys, noise, rng)
    yt = _binary_labels(n_per_domain, 0.5 - label_shift, rng)
    Xt = _moons(n_per_domain, yt, noise, rng)
    a = math.radians(rotation_deg)
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    Xt = Xt @ R.T
    return DomainDataset(Xs, ys, "source", seed, 2), DomainDataset(Xt, yt, "target", seed, 2)


def gaussian_shift(n_per_domain: int = 1000, dim: int = 2, n_classes: int = 2, separation: float = 2.0,
                   shift: float = 1.0, noise: float = 1.0, seed: int = 0):
    """Isotropic class blobs; the target blobs are translated by ``shift`` along a random direction."""
    if n_per_domain < 1 or dim < 1 or n_classes < 2:
        raise ValueError("need n_per_domain >= 1, dim >= 1, n_classes >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((n_classes, dim))
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    out = []
    for domain, offset in (("source", 0.0), ("target", shift)):
        y = rng.integers(0, n_classes, size=n_per_domain)
        X = means[y] + offset * direction + noise * rng.standard_normal((n_per_domain, dim))
        out.append(DomainDataset(X, y, domain, seed, n_classes))
    return tuple(out)


GENERATORS = {
    "figure1_toy": figure1_toy,
    "moons_shift": moons_shift,
    "gaussian_shift": gaussian_shift,
}


def generate(kind: str, params: dict | None = None, seed: int = 0):
    """Return ``(source, target)`` datasets for the named generator."""
    try:
        fn = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown generator {kind!r}; expected one of {sorted(GENERATORS)}") from None
    return fn(**(params or {}), seed=seed)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(path, domain: str = "source") -> DomainDataset:
    """Read ``label,f0,...,f{d-1}`` rows. Errors carry 1-based file line numbers."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty file")
    header = [c.strip() for c in rows[0]]
    d = len(header) - 1
    if d < 1 or header[0] != "label" or header[1:] != [f"f{k}" for k in range(d)]:
        raise ParseError(path, 1, "header must be label,f0,f1,...")
    if len(rows) == 1:
        raise ParseError(path, 2, "no data rows")
    X = np.empty((len(rows) - 1, d))
    y = np.empty(len(rows) - 1, dtype=np.int64)
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != d + 1:
            raise ParseError(path, line, f"expected {d + 1} cells, got {len(row)}")
        try:
            y[r] = int(row[0])
        except ValueError:
            raise ParseError(path, line, f"label {row[0]!r} is not an integer") from None
        if y[r] < 0:
            raise ParseError(path, line, "label must be non-negative")
        try:
            X[r] = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise ParseError(path, line, f"non-numeric feature ({exc})") from None
        if not np.all(np.isfinite(X[r])):
            raise ParseError(path, line, "non-finite feature")
    return DomainDataset(X, y, domain)


def save_csv(dataset: DomainDataset, path) -> None:
    d = dataset.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{k}" for k in range(d)])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([int(y)] + [format(v, ".17g") for v in x])


def train_val_split(dataset: DomainDataset, val_fraction: float, seed: int = 0):
    """Seeded disjoint split; the validation part has ``ceil(n * val_fraction)`` rows."""
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    n_val = math.ceil(round(n * val_fraction, 9))  # 100 * 0.1 must give 10, not 11
    if n_val >= n:
        raise ValueError(f"split of {n} rows at {val_fraction} leaves no training rows")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[n_val:])), dataset.subset(np.sort(perm[:n_val]))
