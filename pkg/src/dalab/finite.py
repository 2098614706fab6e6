"""Extensionally represented finite function classes and labeled finite samples.

A layered class holds per-layer function sets ``Q_1..Q_N`` between finite
spaces ``X = Z_0 -> Z_1 -> ... -> Z_N = {0, 1}``. Encoders at split ``i``
are the compositions ``q_i o ... o q_1`` and predictors the compositions
``q_N o ... o q_{i+1}``; both are enumerated with ``itertools.product`` over
the layer lists (first layer slowest), so order is deterministic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

INSTANCE_FORMAT = "dalab.finite_instance"
INSTANCE_VERSION = 1


@dataclass(frozen=True)
class FiniteFunction:
    table: tuple[int, ...]
    n_out: int

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(int(v) for v in self.table))
        if not self.table:
            raise ValueError("a finite function needs a non-empty input set")
        if min(self.table) < 0 or max(self.table) >= self.n_out:
            raise ValueError(f"table values must lie in [0, {self.n_out}), got {self.table}")

    @property
    def n_in(self) -> int:
        return len(self.table)

    def __call__(self, x: int) -> int:
        return self.table[x]

    def after(self, inner: "FiniteFunction") -> "FiniteFunction":
        """``self o inner``."""
        if inner.n_out > self.n_in:
            raise ValueError(f"cannot compose: inner maps into {inner.n_out} codes, outer accepts {self.n_in}")
        return FiniteFunction(tuple(self.table[v] for v in inner.table), self.n_out)


def identity(n: int) -> FiniteFunction:
    return FiniteFunction(tuple(range(n)), n)


def compose_chain(funcs: Sequence[FiniteFunction]) -> FiniteFunction:
    """``funcs[-1] o ... o funcs[0]``."""
    out = funcs[0]
    for q in funcs[1:]:
        out = q.after(out)
    return out


@dataclass
class SplitClasses:
    """Encoder class ``G`` (X -> Z) and predictor class ``F`` (Z -> labels) at one split."""

    G: list[FiniteFunction]
    F: list[FiniteFunction]

    def hypotheses(self) -> list[FiniteFunction]:
        return [f.after(g) for f in self.F for g in self.G]


class LayeredFiniteClass:
    def __init__(self, layers: Sequence[Sequence[FiniteFunction]], sizes: Sequence[int]):
        layers = [list(l) for l in layers]
        sizes = [int(s) for s in sizes]
        if len(layers) < 1 or len(sizes) != len(layers) + 1:
            raise ValueError("need N >= 1 layers and N + 1 space sizes")
        for k, funcs in enumerate(layers):
            if not funcs:
                raise ValueError(f"layer {k + 1} has no functions")
            for q in funcs:
                if q.n_in != sizes[k] or q.n_out != sizes[k + 1]:
                    raise ValueError(
                        f"layer {k + 1} function maps {q.n_in}->{q.n_out}, expected {sizes[k]}->{sizes[k + 1]}"
                    )
        self.layers = layers
        self.sizes = sizes

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    def encoders(self, i: int) -> list[FiniteFunction]:
        if not 1 <= i <= self.depth:
            raise ValueError(f"encoder depth must be in [1, {self.depth}]")
        return [compose_chain(c) for c in itertools.product(*self.layers[:i])]

    def predictors(self, i: int) -> list[FiniteFunction]:
        if not 0 <= i <= self.depth - 1:
            raise ValueError(f"predictor split must be in [0, {self.depth - 1}]")
        return [compose_chain(c) for c in itertools.product(*self.layers[i:])]

    def at(self, i: int) -> SplitClasses:
        if not 1 <= i <= self.depth - 1:
            raise ValueError(f"split index must be in [1, {self.depth - 1}], got {i}")
        return SplitClasses(self.encoders(i), self.predictors(i))

    def hypotheses(self) -> list[FiniteFunction]:
        return [compose_chain(c) for c in itertools.product(*self.layers)]

    def path(self, choice: Sequence[int]) -> list[FiniteFunction]:
        """Per-layer functions for a forward path given by one index per layer."""
        if len(choice) != self.depth:
            raise ValueError(f"a path needs {self.depth} indices")
        return [self.layers[k][c] for k, c in enumerate(choice)]

    def split_family(self) -> dict[int, SplitClasses]:
        return {i: self.at(i) for i in range(1, self.depth)}

    def bounded_sizes(self, i: int) -> tuple[int, int]:
        """Upper bounds ``(|G_i|, |F_i|)`` from products of layer sizes."""
        g = int(np.prod([len(l) for l in self.layers[:i]]))
        f = int(np.prod([len(l) for l in self.layers[i:]]))
        return g, f


@dataclass
class LabeledSample:
    """A multiset of ``(x, y)`` pairs; the empirical distribution used for every risk."""

    xs: tuple[int, ...]
    ys: tuple[int, ...]

    def __post_init__(self):
        self.xs = tuple(int(v) for v in self.xs)
        self.ys = tuple(int(v) for v in self.ys)
        if not self.xs:
            raise ValueError("sample must be non-empty")
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys differ in length")

    def __len__(self):
        return len(self.xs)

    def counts(self, n_inputs: int) -> np.ndarray:
        return np.bincount(np.asarray(self.xs), minlength=n_inputs).astype(np.int64)


@dataclass
class FiniteInstance:
    classes: LayeredFiniteClass
    source: LabeledSample
    target: LabeledSample
    instance_id: str = "instance"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.classes.n_inputs
        for s in (self.source, self.target):
            if min(s.xs) < 0 or max(s.xs) >= n:
                raise ValueError(f"sample point outside the input set of size {n}")
            if min(s.ys) < 0 or max(s.ys) >= self.classes.sizes[-1]:
                raise ValueError("sample label outside the output set")

    def to_dict(self) -> dict:
        return {
            "format": INSTANCE_FORMAT,
            "version": INSTANCE_VERSION,
            "id": self.instance_id,
            "sizes": self.classes.sizes,
            "layers": [[list(q.table) for q in funcs] for funcs in self.classes.layers],
            "source": [[x, y] for x, y in zip(self.source.xs, self.source.ys)],
            "target": [[x, y] for x, y in zip(self.target.xs, self.target.ys)],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteInstance":
        if d.get("format") != INSTANCE_FORMAT:
            raise ValueError(f"not a finite instance: format={d.get('format')!r}")
        if d.get("version") != INSTANCE_VERSION:
            raise ValueError(f"unsupported instance version {d.get('version')!r}")
        sizes = d["sizes"]
        layers = [[FiniteFunction(t, sizes[k + 1]) for t in funcs] for k, funcs in enumerate(d["layers"])]
        src = LabeledSample(*zip(*d["source"]))
        tgt = LabeledSample(*zip(*d["target"]))
        return cls(LayeredFiniteClass(layers, sizes), src, tgt, d.get("id", "instance"), d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "FiniteInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class InstanceSizes:
    """Ranges (inclusive) for the random instance generator."""

    depth: tuple[int, int] = (2, 4)
    n_inputs: tuple[int, int] = (2, 8)
    code_size: tuple[int, int] = (2, 4)
    funcs_per_layer: tuple[int, int] = (1, 3)
    sample_size: tuple[int, int] = (4, 16)
    label_noise: float = 0.2


def _randint(rng, lo_hi):
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def random_function(rng, n_in: int, n_out: int) -> FiniteFunction:
    return FiniteFunction(tuple(rng.integers(0, n_out, size=n_in)), n_out)


def random_sample(rng, n_inputs: int, size: int, labeler: np.ndarray, noise: float) -> LabeledSample:
    weights = rng.dirichlet(np.full(n_inputs, 0.7))
    xs = rng.choice(n_inputs, size=size, p=weights)
    flip = rng.random(size) < noise
    ys = np.where(flip, 1 - labeler[xs], labeler[xs])
    return LabeledSample(tuple(xs), tuple(ys))


def random_instance(rng: np.random.Generator, sizes: InstanceSizes = InstanceSizes(),
                    instance_id: str = "instance") -> FiniteInstance:
    """Small random layered instance; source and target get independent marginals over ``X``."""
    N = _randint(rng, sizes.depth)
    space = [_randint(rng, sizes.n_inputs)] + [_randint(rng, sizes.code_size) for _ in range(N - 1)] + [2]
    layers = [[random_function(rng, space[k], space[k + 1]) for _ in range(_randint(rng, sizes.funcs_per_layer))]
              for k in range(N)]
    labeler = rng.integers(0, 2, size=space[0])
    # target labels agree with the source labeler except on a random subset of inputs
    shifted = np.where(rng.random(space[0]) < 0.25, 1 - labeler, labeler)
    src = random_sample(rng, space[0], _randint(rng, sizes.sample_size), labeler, sizes.label_noise)
    tgt = random_sample(rng, space[0], _randint(rng, sizes.sample_size), shifted, sizes.label_noise)
    return FiniteInstance(LayeredFiniteClass(layers, space), src, tgt, instance_id)


def random_split_classes(rng: np.random.Generator, n_inputs: int, code_size: int, n_g: int, n_f: int) -> SplitClasses:
    """Independent random encoder and predictor classes of the given sizes."""
    G = [random_function(rng, n_inputs, code_size) for _ in range(n_g)]
    F = [random_function(rng, code_size, 2) for _ in range(n_f)]
    return SplitClasses(G, F)


def corrupt_nesting(classes: LayeredFiniteClass, j: int | None = None) -> dict[int, SplitClasses]:
    """Split family whose encoder class at split ``j`` (default: deepest) is collapsed to a constant map.

    ``G_j`` then no longer contains ``Q o G_i`` for shallower splits, so the
    embedding-complexity ordering can fail whenever a shallower split has a
    positive value.
    """
    family = classes.split_family()
    j = classes.depth - 1 if j is None else j
    if j not in family:
        raise ValueError(f"split {j} not in [1, {classes.depth - 1}]")
    const = FiniteFunction((0,) * classes.n_inputs, classes.sizes[j])
    family[j] = SplitClasses([const], family[j].F)
    return family
