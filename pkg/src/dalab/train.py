"""Adversarial alignment training: single-split DANN and multilayer MDM.

Both objectives share one loop. The total loss per step is

    source CE + sum_i 0.5 * (disc_i CE on source + disc_i CE on target)

where each discriminator reads layer ``i`` through a gradient-reversal node
with coefficient ``alpha_i(p)``. Discriminators therefore always learn at
full strength, while the encoder receives ``-alpha_i`` times their gradient.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Graph, NonFiniteError, bind_params
from .data import DomainDataset, train_val_split
from .model import Discriminator, LayeredNet, LayerSpec, mlp_specs

SCHEMES = ("uniform", "linear", "exponential")


def alpha_schedule(p: float, alpha_max: float = 1.0) -> float:
    """Progressive weight ``alpha_max * (2 / (1 + exp(-10 p)) - 1)``, equal to ``alpha_max * tanh(5 p)``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"training progress must be in [0, 1], got {p}")
    return alpha_max * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)


def layer_weights(scheme: str, alpha0: float, layers: Sequence[int], p: float = 1.0) -> list[float]:
    """Per-layer weights for the ordered layer set ``layers`` (k = 0..|L|-1).

    uniform      alpha0 / |L|
    linear       alpha0 * (|L| - k) / |L|
    exponential  alpha0 * exp(-2 p k)
    """
    if alpha0 < 0:
        raise ValueError("alpha0 must be >= 0")
    n = len(layers)
    if n == 0:
        raise ValueError("layer set must be non-empty")
    if scheme == "uniform":
        return [alpha0 / n] * n
    if scheme == "linear":
        return [alpha0 * (n - k) / n for k in range(n)]
    if scheme == "exponential":
        c = 2.0 * p
        return [alpha0 * math.exp(-c * k) for k in range(n)]
    raise ValueError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass
class TrainConfig:
    widths: Sequence[int]
    activations: Sequence[str] | None = None
    split_index: int | None = None
    layers: Sequence[int] | None = None
    scheme: str = "uniform"
    alpha0: float = 1.0
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int | None = None
    val_fraction: float = 0.1
    disc_hidden: Sequence[int] = (256, 256)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if self.activations is not None:
            self.activations = list(self.activations)
        self.disc_hidden = tuple(int(w) for w in self.disc_hidden)
        n = len(self.widths) - 1
        if n < 2:
            raise ValueError(f"need at least 2 layers, got {n}")
        if self.split_index is not None and not 1 <= self.split_index <= n - 1:
            raise ValueError(f"split_index must be in [1, {n - 1}], got {self.split_index}")
        if self.layers is not None:
            self.layers = sorted(set(int(i) for i in self.layers))
            if not self.layers:
                raise ValueError("MDM layer set must be non-empty")
            if self.layers[0] < 1 or self.layers[-1] > n - 1:
                raise ValueError(f"MDM layers must lie in [1, {n - 1}], got {self.layers}")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.scheme!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr > 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when given")

    @property
    def specs(self) -> list[LayerSpec]:
        return mlp_specs(self.widths, self.activations)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1


@dataclass
class EpochRecord:
    epoch: int
    src_train_err: float
    src_val_err: float
    tgt_err: float
    alpha: float
    disc_loss: dict[int, float] = field(default_factory=dict)
    proxy_div: dict[int, float] = field(default_factory=dict)


@dataclass
class TrainReport:
    method: str
    aligned_layers: list[int]
    epochs: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int | None = None
    status: str = "ok"
    message: str = ""
    wall_time: float = 0.0

    @property
    def selected(self) -> EpochRecord:
        return self.epochs[self.selected_epoch - 1]

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def columns(self) -> list[str]:
        cols = ["epoch", "src_train_err", "src_val_err", "tgt_err", "alpha"]
        for i in self.aligned_layers:
            cols += [f"disc_loss_{i}", f"proxy_div_{i}"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.epochs:
            row = [r.epoch, repr(r.src_train_err), repr(r.src_val_err), repr(r.tgt_err), repr(r.alpha)]
            for i in self.aligned_layers:
                row += [repr(r.disc_loss[i]), repr(r.proxy_div[i])]
            w.writerow(row)
        return buf.getvalue()


def select_epoch(records: Sequence[EpochRecord]) -> int:
    """Epoch with the lowest source validation error; ties go to the later epoch."""
    best = None
    for r in records:
        if best is None or r.src_val_err <= best.src_val_err:
            best = r
    return best.epoch


def _err(net: LayeredNet, X, y) -> float:
    return float(np.mean(net.predict(X) != y))


def _disc_proxy(net: LayeredNet, disc: Discriminator, Xs, Xt) -> float:
    i = disc.attached_layer
    zs = net.propagate(Xs, 1, i)[-1]
    zt = net.propagate(Xt, 1, i)[-1]
    err = 0.5 * (np.mean(disc.predict(zs) != 0) + np.mean(disc.predict(zt) != 1))
    return max(0.0, 2.0 * (1.0 - 2.0 * float(err)))


def fit(config: TrainConfig, source: DomainDataset, target: DomainDataset, layers: Sequence[int],
        weights: Callable[[float], list[float]], method: str) -> tuple[LayeredNet, TrainReport]:
    """Shared training loop; ``weights(p)`` gives one reversal coefficient per aligned layer."""
    specs = config.specs
    if source.dim != specs[0].width_in or target.dim != specs[0].width_in:
        raise ValueError(f"datasets have widths {source.dim}/{target.dim}, net expects {specs[0].width_in}")
    layers = list(layers)
    t0 = time.perf_counter()

    init_ss, disc_ss, src_ss, tgt_ss, split_ss = np.random.SeedSequence(config.seed).spawn(5)
    split_seed = int(split_ss.generate_state(1)[0])
    src_train, src_val = train_val_split(source, config.val_fraction, seed=split_seed)
    net = LayeredNet(specs, seed=np.random.default_rng(init_ss))
    disc_rng = np.random.default_rng(disc_ss)
    discs = {i: Discriminator(net, i, config.disc_hidden, seed=disc_rng) for i in layers}
    params = dict(net.params)
    for i, d in discs.items():
        params.update({f"D{i}.{k}": v for k, v in d.params.items()})
    opt = Adam(params, lr=config.lr)
    src_rng = np.random.default_rng(src_ss)
    tgt_rng = np.random.default_rng(tgt_ss)

    Xs, ys = src_train.features, src_train.labels
    Xt = target.features
    B = config.batch_size
    steps_per_epoch = math.ceil(len(ys) / B)
    total = config.epochs * steps_per_epoch
    zeros = np.zeros(B, dtype=np.int64)
    ones = np.ones(B, dtype=np.int64)

    report = TrainReport(method, layers)
    best_params = {k: v.copy() for k, v in net.params.items()}
    best_val = math.inf
    since_best = 0
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            perm = src_rng.permutation(len(ys))
            disc_sum = {i: 0.0 for i in layers}
            alpha = 0.0
            for b in range(steps_per_epoch):
                idx = perm[b * B:(b + 1) * B]
                p = step / total
                alphas = weights(p) if layers else []
                alpha = alphas[0] if alphas else 0.0
                g = Graph()
                pn = bind_params(g, params)
                acts_s = net.build_layers(g, pn, g.leaf(Xs[idx]))
                terms = [g.softmax_cross_entropy(acts_s[-1], ys[idx])]
                coefs = [1.0]
                if layers:
                    tidx = tgt_rng.integers(0, len(Xt), size=len(idx))
                    acts_t = net.build_layers(g, pn, g.leaf(Xt[tidx]), stop=layers[-1])
                    for i, a in zip(layers, alphas):
                        dpn = {k: pn[f"D{i}.{k}"] for k in discs[i].params}
                        ls = g.softmax_cross_entropy(
                            discs[i].build(g, dpn, g.grad_reverse(acts_s[i - 1], a)), zeros[: len(idx)])
                        lt = g.softmax_cross_entropy(
                            discs[i].build(g, dpn, g.grad_reverse(acts_t[i - 1], a)), ones[: len(idx)])
                        terms += [ls, lt]
                        coefs += [0.5, 0.5]
                        disc_sum[i] += 0.5 * (float(ls.value) + float(lt.value))
                loss = g.weighted_sum(terms, coefs)
                g.backward(loss)
                opt.step({k: pn[k].grad if pn[k].grad is not None else np.zeros_like(v)
                          for k, v in params.items()})
                step += 1

            rec = EpochRecord(
                epoch,
                _err(net, Xs, ys),
                _err(net, src_val.features, src_val.labels),
                _err(net, target.features, target.labels),
                alpha,
                {i: disc_sum[i] / steps_per_epoch for i in layers},
                {i: _disc_proxy(net, discs[i], Xs, Xt) for i in layers},
            )
            report.epochs.append(rec)
            if rec.src_val_err <= best_val:
                best_val = rec.src_val_err
                best_params = {k: v.copy() for k, v in net.params.items()}
                since_best = 0
            else:
                since_best += 1
                if config.patience is not None and since_best >= config.patience:
                    break
    except NonFiniteError as exc:
        report.status = "diverged"
        report.message = str(exc)

    if report.epochs:
        report.selected_epoch = select_epoch(report.epochs)
    report.wall_time = time.perf_counter() - t0
    final = LayeredNet(specs, best_params)
    return final, report


def dann_train(config: TrainConfig, source: DomainDataset, target: DomainDataset):
    """Source CE plus adversarial alignment at ``config.split_index`` with weight ``alpha0 * schedule(p)``."""
    if config.split_index is None:
        raise ValueError("dann_train needs config.split_index")
    return fit(config, source, target, [config.split_index],
               lambda p: [alpha_schedule(p, config.alpha0)], "dann")


def mdm_train(config: TrainConfig, source: DomainDataset, target: DomainDataset):
    """Alignment at every layer in ``config.layers`` with scheme weights times the progressive schedule."""
    if not config.layers:
        raise ValueError("mdm_train needs a non-empty config.layers")
    L = list(config.layers)

    def weights(p):
        s = alpha_schedule(p)
        return [w * s for w in layer_weights(config.scheme, config.alpha0, L, p)]

    return fit(config, source, target, L, weights, f"mdm_{config.scheme}")


def source_only_train(config: TrainConfig, source: DomainDataset, target: DomainDataset):
    return fit(config, source, target, [], lambda p: [], "source_only")
