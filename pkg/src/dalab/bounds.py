"""Target-risk bounds on finite instances, checked by exhaustive enumeration.

Every quantity is an empirical risk or a divergence on the instance's
samples, so all of them are integer multiples of ``1 / (n_S n_T)``. Terms
are computed as integer numerators over that common denominator and only
turned into floats for reporting; violation flags compare the floats with
a slack of ``1e-12``.

Bounds for ``h = f o g`` at split ``i``:

    joint      R_S(h) + d_HdH + lambda_H
    latent     R_S(fg) + d_FdF(g) + lambda_F(g)
    embedding  R_S(fg) + d_FdF(g) + d_F_GdG + lambda_FG(g)

with ``lambda_FG(g) = min_{f', g'} 2 R_S(f'g) + R_S(f'g') + R_T(f'g')``.
The layer-agnostic bound is the minimum of the embedding bound over splits.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .divergence import DEFAULT_BUDGET, BudgetExceeded, exact_divergence
from .finite import (
    FiniteFunction, FiniteInstance, LabeledSample, LayeredFiniteClass, SplitClasses,
)

SLACK = 1e-12
LAMBDA_KINDS = ("lambda_h", "lambda_f_of_g", "lambda_fg_of_g", "lambda_fg_joint")


# ---------------------------------------------------------------------------
# risks and lambda terms (integer numerators over n_S * n_T)
# ---------------------------------------------------------------------------


def _errors(tables: np.ndarray, sample: LabeledSample) -> np.ndarray:
    """Misclassification counts of each row of ``tables`` on ``sample``."""
    xs, ys = np.asarray(sample.xs), np.asarray(sample.ys)
    return (tables[:, xs] != ys).sum(axis=1).astype(np.int64)


class _Risks:
    """Risk numerators for every ``f o g`` with ``f in F, g in G``; arrays indexed ``[f, g]``."""

    def __init__(self, classes: SplitClasses, S: LabeledSample, T: LabeledSample):
        self.nS, self.nT = len(S), len(T)
        self.D = self.nS * self.nT
        G = np.array([g.table for g in classes.G], dtype=np.int64)
        comp = np.stack([np.asarray(f.table)[G] for f in classes.F])  # (|F|, |G|, |X|)
        flat = comp.reshape(-1, comp.shape[-1])
        shape = comp.shape[:2]
        self.rs = (_errors(flat, S) * self.nT).reshape(shape)
        self.rt = (_errors(flat, T) * self.nS).reshape(shape)

    def lambda_f_of_g(self, gi: int) -> int:
        return int((self.rs[:, gi] + self.rt[:, gi]).min())

    def lambda_fg_of_g(self, gi: int) -> int:
        inner = (self.rs + self.rt).min(axis=1)
        return int((2 * self.rs[:, gi] + inner).min())

    def lambda_joint(self) -> int:
        return int((self.rs + self.rt).min())


def _budget_check(kind, classes, budget):
    size = len(classes.F) * len(classes.G) if isinstance(classes, SplitClasses) else len(classes)
    if size > budget:
        raise BudgetExceeded(kind, size, budget)


def _index(funcs: Sequence[FiniteFunction], item) -> int:
    if isinstance(item, (int, np.integer)):
        if not 0 <= item < len(funcs):
            raise IndexError(f"index {item} out of range for a class of size {len(funcs)}")
        return int(item)
    for k, q in enumerate(funcs):
        if q.table == item.table:
            return k
    raise ValueError("function is not a member of the class")


def lambda_terms(kind: str, classes, samples, g=None, budget: int = DEFAULT_BUDGET) -> float:
    """Exact infimum of a best-joint-risk term.

    lambda_h          min_h R_S(h) + R_T(h) over H (a list, or F o G)
    lambda_f_of_g     min_f R_S(fg) + R_T(fg) for the fixed encoder g
    lambda_fg_of_g    min_{f', g'} 2 R_S(f'g) + R_S(f'g') + R_T(f'g')
    lambda_fg_joint   min_{f, g} R_S(fg) + R_T(fg)
    """
    if kind not in LAMBDA_KINDS:
        raise ValueError(f"unknown lambda kind {kind!r}; expected one of {LAMBDA_KINDS}")
    needs_g = kind in ("lambda_f_of_g", "lambda_fg_of_g")
    if needs_g != (g is not None):
        raise ValueError(f"{kind} {'requires' if needs_g else 'does not take'} an encoder g")
    S, T = samples
    _budget_check(kind, classes, budget)
    if not isinstance(classes, SplitClasses):
        if kind != "lambda_h":
            raise TypeError(f"{kind} needs SplitClasses")
        classes = SplitClasses([_identity_like(classes[0])], list(classes))
    r = _Risks(classes, S, T)
    if kind in ("lambda_h", "lambda_fg_joint"):
        num = r.lambda_joint()
    else:
        gi = _index(classes.G, g)
        num = r.lambda_f_of_g(gi) if kind == "lambda_f_of_g" else r.lambda_fg_of_g(gi)
    return num / r.D


def _identity_like(h: FiniteFunction) -> FiniteFunction:
    return FiniteFunction(tuple(range(h.n_in)), h.n_in)


# ---------------------------------------------------------------------------
# per-split cache shared by reports, sweeps and certification
# ---------------------------------------------------------------------------


class SplitTerms:
    """All divergence and lambda numerators of one split, computed once."""

    def __init__(self, classes: SplitClasses, S: LabeledSample, T: LabeledSample,
                 budget: int = DEFAULT_BUDGET):
        self.classes = classes
        self.risks = _Risks(classes, S, T)
        self.D = self.risks.D
        pair = (S, T)
        self.hdh = exact_divergence("fg_dfg", classes, pair, budget=budget).extra["numerator"]
        self.f_gdg = exact_divergence("f_gdg", classes, pair, budget=budget).extra["numerator"]
        self.latent = [exact_divergence("f_latent", classes, pair, g=g, budget=budget).extra["numerator"]
                       for g in classes.G]
        self.lam_h = self.risks.lambda_joint()
        self.lam_f = [self.risks.lambda_f_of_g(k) for k in range(len(classes.G))]
        self.lam_fg = [self.risks.lambda_fg_of_g(k) for k in range(len(classes.G))]

    def embedding_bound(self, fi: int, gi: int) -> int:
        return int(self.risks.rs[fi, gi]) + self.latent[gi] + self.f_gdg + self.lam_fg[gi]


@dataclass
class BoundReport:
    instance_id: str
    split: int
    f_index: int
    g_index: int
    r_s: float
    r_t: float
    d_hdh: float
    lambda_h: float
    joint_bound: float
    d_latent: float
    lambda_f_of_g: float
    latent_bound: float
    d_f_gdg: float
    lambda_fg_of_g: float
    embedding_bound: float
    violations: dict = field(default_factory=dict)
    tighter: str = "equal"
    denominator: int = 1

    @property
    def violated(self) -> bool:
        return any(self.violations.values())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _report(terms: SplitTerms, instance_id: str, i: int, fi: int, gi: int) -> BoundReport:
    r, D = terms.risks, terms.D
    rs, rt = int(r.rs[fi, gi]), int(r.rt[fi, gi])
    joint = rs + terms.hdh + terms.lam_h
    latent = rs + terms.latent[gi] + terms.lam_f[gi]
    emb = terms.embedding_bound(fi, gi)
    fl = lambda n: n / D
    viol = {name: fl(rt) > fl(v) + SLACK for name, v in
            (("joint", joint), ("latent", latent), ("embedding", emb))}
    tighter = "equal" if joint == emb else ("embedding" if emb < joint else "joint")
    return BoundReport(
        instance_id, i, fi, gi, fl(rs), fl(rt),
        fl(terms.hdh), fl(terms.lam_h), fl(joint),
        fl(terms.latent[gi]), fl(terms.lam_f[gi]), fl(latent),
        fl(terms.f_gdg), fl(terms.lam_fg[gi]), fl(emb),
        viol, tighter, D,
    )


def bound_report(instance: FiniteInstance, f, g, i: int, budget: int = DEFAULT_BUDGET) -> BoundReport:
    """All three bounds for ``f o g`` at split ``i``; ``f`` and ``g`` are class members or indices."""
    classes = instance.classes.at(i)
    terms = SplitTerms(classes, instance.source, instance.target, budget)
    return _report(terms, instance.instance_id, i, _index(classes.F, f), _index(classes.G, g))


def certify_instance(instance: FiniteInstance, budget: int = DEFAULT_BUDGET) -> list[BoundReport]:
    """Bound reports for every split and every ``(f, g)`` pair of the instance."""
    out = []
    for i in range(1, instance.classes.depth):
        classes = instance.classes.at(i)
        terms = SplitTerms(classes, instance.source, instance.target, budget)
        for fi in range(len(classes.F)):
            for gi in range(len(classes.G)):
                out.append(_report(terms, instance.instance_id, i, fi, gi))
    return out


# ---------------------------------------------------------------------------
# layer sweep
# ---------------------------------------------------------------------------


@dataclass
class LayerSweep:
    path: tuple[int, ...]
    r_s: float
    r_t: float
    values: list[float]
    minimum: float
    argmin: int  # split index (1-based) of the smallest bound; first one on ties

    def to_dict(self) -> dict:
        return asdict(self)


def _path_members(classes: LayeredFiniteClass, path: Sequence[int], i: int) -> tuple[int, int]:
    """Indices of the path's ``g_i`` and ``f_i`` in the enumeration order of split ``i``."""
    sizes = [len(l) for l in classes.layers]
    gi = int(np.ravel_multi_index(path[:i], sizes[:i])) if i else 0
    fi = int(np.ravel_multi_index(path[i:], sizes[i:]))
    return gi, fi


def layer_bound_sweep(instance: FiniteInstance, path: Sequence[int],
                      budget: int = DEFAULT_BUDGET) -> LayerSweep:
    """Embedding bound of ``h`` (one function index per layer) at every split, and their minimum."""
    C = instance.classes
    path = tuple(int(p) for p in path)
    C.path(path)  # validates length
    values, D = [], 1
    rs = rt = 0
    for i in range(1, C.depth):
        terms = SplitTerms(C.at(i), instance.source, instance.target, budget)
        gi, fi = _path_members(C, path, i)
        D = terms.D
        rs, rt = int(terms.risks.rs[fi, gi]), int(terms.risks.rt[fi, gi])
        values.append(terms.embedding_bound(fi, gi) / D)
    m = min(values)
    return LayerSweep(path, rs / D, rt / D, values, m, values.index(m) + 1)


# ---------------------------------------------------------------------------
# monotonicity across splits
# ---------------------------------------------------------------------------


@dataclass
class MonotonicityResult:
    violations: int
    witnesses: list[dict]
    embedding: dict[int, float]
    latent: dict[int, float]
    path_violations: int | None = None
    path_witnesses: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _family_terms(family: dict[int, SplitClasses], S, T, budget):
    emb, lat, latent_by_g = {}, {}, {}
    D = len(S) * len(T)
    for i, c in sorted(family.items()):
        emb[i] = exact_divergence("f_gdg", c, (S, T), budget=budget).extra["numerator"]
        latent_by_g[i] = [exact_divergence("f_latent", c, (S, T), g=g, budget=budget).extra["numerator"]
                          for g in c.G]
        lat[i] = max(latent_by_g[i])
    return D, emb, lat, latent_by_g


def monotonicity_check(instance: FiniteInstance, family: dict[int, SplitClasses] | None = None,
                       budget: int = DEFAULT_BUDGET) -> MonotonicityResult:
    """Check, for all splits ``i < j``, that embedding complexity does not decrease with depth
    and the (class-level) latent divergence does not increase.

    ``family`` overrides the split classes derived from the instance, which is
    how broken nesting is injected. The per-path diagnostic (latent divergence
    along each forward path's own prefixes) runs only for derived families.
    """
    S, T = instance.source, instance.target
    derived = family is None
    family = instance.classes.split_family() if derived else family
    D, emb, lat, latent_by_g = _family_terms(family, S, T, budget)
    splits = sorted(family)
    witnesses = []
    for a, i in enumerate(splits):
        for j in splits[a + 1:]:
            if emb[i] > emb[j]:
                witnesses.append({"i": i, "j": j, "kind": "embedding", "value_i": emb[i] / D, "value_j": emb[j] / D})
            if lat[i] < lat[j]:
                witnesses.append({"i": i, "j": j, "kind": "latent", "value_i": lat[i] / D, "value_j": lat[j] / D})

    res = MonotonicityResult(len(witnesses), witnesses, {i: emb[i] / D for i in splits},
                             {i: lat[i] / D for i in splits})
    if derived:
        C = instance.classes
        pw = []
        for path in np.ndindex(*[len(l) for l in C.layers]):
            along = [latent_by_g[i][_path_members(C, path, i)[0]] for i in splits]
            for a in range(len(splits)):
                for b in range(a + 1, len(splits)):
                    if along[a] < along[b]:
                        pw.append({"path": list(path), "i": splits[a], "j": splits[b],
                                   "value_i": along[a] / D, "value_j": along[b] / D})
        res.path_violations = len(pw)
        res.path_witnesses = pw
    return res


# ---------------------------------------------------------------------------
# summaries and constructed instances
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ["instance_id", "split", "f_index", "g_index", "r_t", "joint_bound", "latent_bound",
                   "embedding_bound", "joint_violated", "latent_violated", "embedding_violated", "tighter"]


def summary_rows(reports: Sequence[BoundReport]) -> list[list]:
    return [[r.instance_id, r.split, r.f_index, r.g_index, repr(r.r_t), repr(r.joint_bound),
             repr(r.latent_bound), repr(r.embedding_bound), int(r.violations["joint"]),
             int(r.violations["latent"]), int(r.violations["embedding"]), r.tighter] for r in reports]


def summary_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(summary_rows(reports))
    return buf.getvalue()


# A depth-4 instance whose layer sweep along INTERIOR_PATH is smallest at split 2
# (values 2.8, 2.4, 3.3). Found by searching small random instances and frozen here.
_INTERIOR = {
    "format": "dalab.finite_instance", "version": 1, "id": "interior_minimum",
    "sizes": [7, 4, 2, 2, 2],
    "layers": [[[3, 2, 0, 3, 2, 0, 0], [1, 2, 1, 3, 0, 1, 2], [3, 0, 3, 0, 1, 2, 2]],
               [[1, 1, 1, 0], [1, 1, 0, 1], [1, 0, 0, 0]],
               [[1, 0], [0, 1], [1, 0]],
               [[1, 0], [1, 1]]],
    "source": [[3, 1], [6, 1], [4, 1], [4, 1], [4, 1], [2, 0], [2, 0], [2, 0], [2, 0], [1, 0]],
    "target": [[2, 0], [2, 1], [0, 0], [3, 1], [3, 1]],
}
INTERIOR_PATH = (0, 2, 0, 0)


def interior_minimum_instance() -> FiniteInstance:
    return FiniteInstance.from_dict(_INTERIOR)
