"""Trained-discriminator estimate of the divergence between two activation clouds."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Adam, Graph, bind_params
from .model import LayeredNet, mlp_specs


@dataclass
class DivergenceEstimate:
    value: float
    flavor: str
    class_sizes: dict = field(default_factory=dict)
    sample_sizes: tuple = ()
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)


def proxy_a_distance(err: float) -> float:
    """``max(0, 2 (1 - 2 err))`` for a domain classifier's held-out error."""
    return max(0.0, 2.0 * (1.0 - 2.0 * err))


@dataclass
class DiscriminatorConfig:
    hidden: Sequence[int] = (256, 256)
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    train_fraction: float = 0.5
    standardize: bool = True


def proxy_divergence(source_acts, target_acts, config: DiscriminatorConfig | None = None,
                     seed: int = 0) -> DivergenceEstimate:
    """Fit a fresh domain classifier on a train split and score it on the rest.

    Activations are standardized with train-split statistics first so the
    estimate does not depend on the latent scale. Reports the held-out error,
    the proxy-A distance, and the held-out cross-entropy (a JS-style loss:
    ``ln 2 - CE`` estimates the Jensen-Shannon divergence for equal priors).
    """
    cfg = config or DiscriminatorConfig()
    t0 = time.perf_counter()
    Zs = np.asarray(source_acts, dtype=np.float64)
    Zt = np.asarray(target_acts, dtype=np.float64)
    if Zs.ndim == 1:
        Zs = Zs[:, None]
    if Zt.ndim == 1:
        Zt = Zt[:, None]
    if Zs.shape[1] != Zt.shape[1]:
        raise ValueError(f"activation widths differ: {Zs.shape[1]} vs {Zt.shape[1]}")
    if len(Zs) < 10 or len(Zt) < 10:
        raise ValueError(f"need at least 10 samples per domain, got {len(Zs)} and {len(Zt)}")

    rng = np.random.default_rng(seed)
    ps, pt = rng.permutation(len(Zs)), rng.permutation(len(Zt))
    ns, nt = math.ceil(len(Zs) * cfg.train_fraction), math.ceil(len(Zt) * cfg.train_fraction)
    Xtr = np.concatenate([Zs[ps[:ns]], Zt[pt[:nt]]])
    ytr = np.concatenate([np.zeros(ns, np.int64), np.ones(nt, np.int64)])
    Xte_s, Xte_t = Zs[ps[ns:]], Zt[pt[nt:]]
    if cfg.standardize:
        mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0)
        sd[sd < 1e-12] = 1.0
        Xtr, Xte_s, Xte_t = (Xtr - mu) / sd, (Xte_s - mu) / sd, (Xte_t - mu) / sd

    disc = LayeredNet(mlp_specs([Zs.shape[1], *cfg.hidden, 2]), seed=rng, min_layers=1)
    opt = Adam(disc.params, lr=cfg.lr)
    # class-balanced loss so unequal split sizes do not bias the error
    w = np.where(ytr == 0, len(ytr) / (2 * ns), len(ytr) / (2 * nt))
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(ytr))
        for b in range(0, len(perm), cfg.batch_size):
            idx = perm[b:b + cfg.batch_size]
            g = Graph()
            pn = bind_params(g, disc.params)
            # class-balanced weights folded into one CE term per class
            m0, m1 = idx[ytr[idx] == 0], idx[ytr[idx] == 1]
            terms, coefs = [], []
            for sub, lab in ((m0, 0), (m1, 1)):
                if len(sub):
                    sl = disc.build(g, pn, g.leaf(Xtr[sub]))
                    terms.append(g.softmax_cross_entropy(sl, np.full(len(sub), lab)))
                    coefs.append(len(sub) * w[sub[0]] / len(idx))
            loss = g.weighted_sum(terms, coefs)
            g.backward(loss)
            opt.step({k: pn[k].grad for k in disc.params})

    err_s = float(np.mean(disc.predict(Xte_s) != 0)) if len(Xte_s) else 0.0
    err_t = float(np.mean(disc.predict(Xte_t) != 1)) if len(Xte_t) else 0.0
    err = 0.5 * (err_s + err_t)

    def ce(X, lab):
        z = disc.propagate(X)[-1]
        z = z - z.max(axis=1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-lp[:, lab].mean())

    held_ce = 0.5 * (ce(Xte_s, 0) + ce(Xte_t, 1))
    return DivergenceEstimate(
        proxy_a_distance(err), "proxy_a",
        {"discriminator_hidden": list(cfg.hidden)}, (len(Zs), len(Zt)), time.perf_counter() - t0,
        {"heldout_error": err, "heldout_ce": held_ce, "js_estimate": max(0.0, math.log(2) - held_ce)},
    )
