"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is an append-only tape. Every primitive lives in the
:data:`OPS` registry as a pair of pure functions (forward, vjp), so the
backward pass is a single loop over the tape in reverse insertion order and
a local rule can be checked (or corrupted, in tests) in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class AutodiffError(Exception):
    """Base class for graph construction and evaluation errors."""


class ShapeError(AutodiffError):
    def __init__(self, op: str, node_id: int, message: str):
        self.op = op
        self.node_id = node_id
        super().__init__(f"node {node_id} ({op}): {message}")


class NonFiniteError(AutodiffError):
    def __init__(self, op: str, node_id: int, where: str = "forward"):
        self.op = op
        self.node_id = node_id
        self.where = where
        super().__init__(f"node {node_id} ({op}): non-finite value in {where}")


# ---------------------------------------------------------------------------
# primitive rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    vjp: Callable  # (upstream, output, inputs, **attrs) -> tuple of input grads
    check: Callable | None = None  # shape validation, raises ValueError


def _affine_check(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise ValueError(f"expected x (n,d), W (d,k), b (k,), got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(f"incompatible shapes x{x.shape} W{W.shape} b{b.shape}")


def _affine_fwd(x, W, b):
    return x @ W + b


def _affine_vjp(u, out, x, W, b):
    return u @ W.T, x.T @ u, u.sum(axis=0)


def _relu_fwd(x):
    return np.maximum(x, 0.0)


def _relu_vjp(u, out, x):
    return (u * (x > 0),)


def _sigmoid_fwd(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_vjp(u, out, x):
    return (u * out * (1.0 - out),)


def _softmax_fwd(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(u, out, x):
    dot = (u * out).sum(axis=-1, keepdims=True)
    return (out * (u - dot),)


def _log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax_ce_check(logits, labels):
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-d, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {logits.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label out of range")


def _softmax_ce_fwd(logits, labels):
    lp = _log_softmax(logits)
    idx = labels.astype(np.int64)
    return np.asarray(-lp[np.arange(len(idx)), idx].mean())


def _softmax_ce_vjp(u, out, logits, labels):
    n = logits.shape[0]
    g = _softmax_fwd(logits)
    g[np.arange(n), labels.astype(np.int64)] -= 1.0
    return g * (u / n), None


def _bce_check(logits, targets):
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} vs targets {targets.shape}")


def _bce_fwd(logits, targets):
    # mean of softplus(x) - t*x, overflow-safe
    sp = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    return np.asarray((sp - targets * logits).mean())


def _bce_vjp(u, out, logits, targets):
    return (_sigmoid_fwd(logits) - targets) * (u / logits.size), None


def _mean_fwd(x, axis=None):
    return np.asarray(x.mean(axis=axis))


def _mean_vjp(u, out, x, axis=None):
    if axis is None:
        return (np.full(x.shape, u / x.size),)
    return (np.broadcast_to(np.expand_dims(u, axis) / x.shape[axis], x.shape).copy(),)


def _wsum_check(*terms, weights):
    if len(terms) != len(weights):
        raise ValueError(f"{len(terms)} terms but {len(weights)} weights")
    shapes = {t.shape for t in terms}
    if len(shapes) > 1:
        raise ValueError(f"terms have differing shapes {sorted(shapes)}")


def _wsum_fwd(*terms, weights):
    out = weights[0] * terms[0]
    for w, t in zip(weights[1:], terms[1:]):
        out = out + w * t
    return np.asarray(out)


def _wsum_vjp(u, out, *terms, weights):
    return tuple(w * u for w in weights)


def _grl_fwd(x, lam):
    return x.copy()


def _grl_vjp(u, out, x, lam):
    return (-lam * u,)


OPS: dict[str, Op] = {
    "affine": Op("affine", _affine_fwd, _affine_vjp, _affine_check),
    "relu": Op("relu", _relu_fwd, _relu_vjp),
    "sigmoid": Op("sigmoid", _sigmoid_fwd, _sigmoid_vjp),
    "softmax": Op("softmax", _softmax_fwd, _softmax_vjp),
    "softmax_cross_entropy": Op(
        "softmax_cross_entropy", _softmax_ce_fwd, _softmax_ce_vjp, _softmax_ce_check
    ),
    "binary_cross_entropy": Op("binary_cross_entropy", _bce_fwd, _bce_vjp, _bce_check),
    "mean": Op("mean", _mean_fwd, _mean_vjp),
    "weighted_sum": Op("weighted_sum", _wsum_fwd, _wsum_vjp, _wsum_check),
    "grad_reverse": Op("grad_reverse", _grl_fwd, _grl_vjp),
}

LOSSES = ("softmax_cross_entropy", "binary_cross_entropy")


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Node:
    """One tape entry. Leaves have ``op is None``."""

    __slots__ = ("id", "op", "inputs", "attrs", "value", "grad", "requires_grad", "name")

    def __init__(self, id, op, inputs, attrs, value, requires_grad, name=None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op or 'leaf'}, shape={self.value.shape})"


class Graph:
    """Append-only tape of primitive operations.

    >>> g = Graph()
    >>> x = g.leaf(np.ones((2, 3)))
    >>> float(g.mean(g.relu(x)).value)
    1.0
    """

    def __init__(self, ops: Mapping[str, Op] | None = None):
        self.nodes: list[Node] = []
        self.ops = OPS if ops is None else ops

    def leaf(self, value, name: str | None = None, requires_grad: bool = False) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        node = Node(len(self.nodes), None, (), {}, arr, requires_grad, name)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("leaf", node.id)
        self.nodes.append(node)
        return node

    def constant(self, value, dtype=np.float64) -> Node:
        # labels and other non-differentiable inputs; never receive gradients
        node = Node(len(self.nodes), None, (), {}, np.asarray(value, dtype=dtype), False)
        self.nodes.append(node)
        return node

    def apply(self, op_name: str, *inputs: Node, **attrs) -> Node:
        op = self.ops[op_name]
        node_id = len(self.nodes)
        values = [n.value for n in inputs]
        if op.check is not None:
            try:
                op.check(*values, **attrs)
            except ValueError as exc:
                raise ShapeError(op_name, node_id, str(exc)) from None
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as NonFiniteError
            out = np.asarray(op.forward(*values, **attrs), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(op_name, node_id)
        node = Node(node_id, op_name, inputs, attrs, out, any(n.requires_grad for n in inputs))
        self.nodes.append(node)
        return node

    # thin conveniences over apply()
    def affine(self, x, W, b):
        return self.apply("affine", x, W, b)

    def relu(self, x):
        return self.apply("relu", x)

    def sigmoid(self, x):
        return self.apply("sigmoid", x)

    def softmax(self, x):
        return self.apply("softmax", x)

    def softmax_cross_entropy(self, logits, labels):
        if not isinstance(labels, Node):
            labels = self.constant(labels, dtype=np.int64)
        return self.apply("softmax_cross_entropy", logits, labels)

    def binary_cross_entropy(self, logits, targets):
        if not isinstance(targets, Node):
            targets = self.constant(targets)
        return self.apply("binary_cross_entropy", logits, targets)

    def mean(self, x, axis=None):
        return self.apply("mean", x, axis=axis)

    def weighted_sum(self, terms: Sequence[Node], weights: Sequence[float]):
        return self.apply("weighted_sum", *terms, weights=tuple(float(w) for w in weights))

    def grad_reverse(self, x, lam: float):
        if lam < 0:
            raise ValueError("gradient reversal coefficient must be >= 0")
        return self.apply("grad_reverse", x, lam=float(lam))

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(node) into ``node.grad`` for every node that needs it."""
        if loss.value.size != 1:
            raise ShapeError(loss.op or "leaf", loss.id, "backward() needs a scalar loss")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.op is None or node.grad is None or not node.requires_grad:
                continue
            op = self.ops[node.op]
            in_grads = op.vjp(node.grad, node.value, *(n.value for n in node.inputs), **node.attrs)
            for parent, g in zip(node.inputs, in_grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=np.float64)
                if g.shape != parent.value.shape:
                    raise ShapeError(node.op, node.id, f"vjp produced {g.shape}, expected {parent.value.shape}")
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(node.op, node.id, where="backward")
                parent.grad = g if parent.grad is None else parent.grad + g

    def relu_inputs(self) -> list[np.ndarray]:
        return [n.inputs[0].value for n in self.nodes if n.op == "relu"]


# ---------------------------------------------------------------------------
# models: anything exposing ``params`` and ``build(graph, param_nodes, x)``
# ---------------------------------------------------------------------------


def bind_params(graph: Graph, params: Mapping[str, np.ndarray]) -> dict[str, Node]:
    return {k: graph.leaf(v, name=k, requires_grad=True) for k, v in params.items()}


def forward_backward(model, inputs, targets, loss: str = "softmax_cross_entropy", ops=None):
    """Run one forward and backward pass.

    ``model`` must expose a ``params`` mapping of name -> ndarray and a
    ``build(graph, param_nodes, x_node)`` method returning the logits node.
    Returns ``(loss_value, {param_name: gradient})``.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    g = Graph(ops)
    pnodes = bind_params(g, model.params)
    x = g.leaf(inputs)
    logits = model.build(g, pnodes, x)
    if loss == "softmax_cross_entropy":
        out = g.softmax_cross_entropy(logits, np.asarray(targets))
    else:
        out = g.binary_cross_entropy(logits, np.asarray(targets, dtype=np.float64))
    g.backward(out)
    grads = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in pnodes.items()}
    return float(out.value), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.state = AdamState(lr, beta1, beta2, epsilon)
        for k, p in params.items():
            self.state.m[k] = np.zeros_like(p)
            self.state.v[k] = np.zeros_like(p)

    def step(self, grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        missing = set(self.params) - set(grads)
        if missing:
            raise KeyError(f"missing gradients for {sorted(missing)}")
        for k in self.params:
            if not np.all(np.isfinite(grads[k])):
                raise NonFiniteError("adam", -1, where=f"gradient {k!r}")
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1**s.step
        bc2 = 1.0 - s.beta2**s.step
        for k, p in self.params.items():
            g = grads[k]
            s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * g
            s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * g * g
            m_hat = s.m[k] / bc1
            v_hat = s.v[k] / bc2
            p -= s.lr * m_hat / (np.sqrt(v_hat) + s.epsilon)
        return self.params


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    trials: int
    entries_checked: int
    entries_skipped: int  # perturbation crossed a ReLU kink
    resamples: int
    worst_param: str | None = None
    offending_node: int | None = None
    offending_op: str | None = None
    node_errors: dict[int, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def rel_error(a, b, floor: float = 1e-6) -> np.ndarray:
    """Entry-wise |a-b| / max(|a|+|b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def _relu_masks(graph: Graph):
    return [x > 0 for x in graph.relu_inputs()]


def _local_node_errors(graph: Graph, ops: Mapping[str, Op], h: float, floor: float, rng) -> dict[int, float]:
    """Check every node's VJP against finite differences of its own forward."""
    errors = {}
    for node in graph.nodes:
        if node.op is None or not node.requires_grad:
            continue
        op = ops[node.op]
        vals = [n.value for n in node.inputs]
        u = rng.standard_normal(node.value.shape)
        analytic = op.vjp(u, node.value, *vals, **node.attrs)
        worst = 0.0
        for k, parent in enumerate(node.inputs):
            if not parent.requires_grad or analytic[k] is None:
                continue
            idx_all = list(np.ndindex(parent.value.shape))
            if len(idx_all) > 64:
                pick = rng.choice(len(idx_all), size=64, replace=False)
                idx_all = [idx_all[j] for j in sorted(pick)]
            for idx in idx_all:
                plus = [v.copy() for v in vals]
                minus = [v.copy() for v in vals]
                plus[k][idx] += h
                minus[k][idx] -= h
                if node.op == "relu" and (np.sign(plus[k][idx]) != np.sign(minus[k][idx])):
                    continue
                fp = float((u * op.forward(*plus, **node.attrs)).sum())
                fm = float((u * op.forward(*minus, **node.attrs)).sum())
                num = (fp - fm) / (2 * h)
                worst = max(worst, float(rel_error(analytic[k][idx], num, floor)))
        errors[node.id] = worst
    return errors


def _draw_scale(shape) -> float:
    # fan-in scaling keeps activations O(1) at any width, so differences stay well conditioned
    return 1.0 / math.sqrt(shape[0]) if len(shape) >= 2 else 0.5


def grad_check(
    loss_fn: Callable[[Graph, dict[str, Node], Node], Node],
    param_shapes: Mapping[str, tuple],
    input_shape: tuple,
    trials: int = 1,
    tolerance: float = 1e-5,
    seed: int = 0,
    h: float = 1e-4,
    max_entries: int | None = None,
    ops: Mapping[str, Op] | None = None,
    floor: float = 1e-6,
    kink_margin: float = 1e-6,
    max_resamples: int = 50,
) -> GradCheckReport:
    """Compare analytic parameter gradients with central finite differences.

    ``loss_fn(graph, param_nodes, x_node)`` must return a scalar node. Each
    trial draws fresh normal parameters (weights scaled by 1/sqrt(fan-in))
    and standard-normal inputs; draws where a ReLU pre-activation sits within
    ``kink_margin`` of zero are redrawn, and individual perturbations that flip a ReLU pattern are skipped. With
    ``max_entries`` set, at most that many entries per parameter are probed.
    When the worst error exceeds ``tolerance`` the per-node local rules are
    checked to name the offending node.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ops = OPS if ops is None else ops
    rng = np.random.default_rng(seed)
    worst, worst_param = 0.0, None
    checked = skipped = resamples = 0
    worst_graph = None

    def run(params, x):
        g = Graph(ops)
        pn = bind_params(g, params)
        loss = loss_fn(g, pn, g.leaf(x))
        return g, pn, loss

    for _ in range(trials):
        for _attempt in range(max_resamples + 1):
            params = {k: rng.standard_normal(s) * _draw_scale(s) for k, s in param_shapes.items()}
            x = rng.standard_normal(input_shape)
            g, pn, loss = run(params, x)
            pre = g.relu_inputs()
            if all(np.min(np.abs(p)) >= kink_margin for p in pre if p.size):
                break
            resamples += 1
        g.backward(loss)
        base_masks = _relu_masks(g)
        trial_worst = 0.0
        for name, node in pn.items():
            analytic = node.grad if node.grad is not None else np.zeros_like(node.value)
            indices = list(np.ndindex(node.value.shape))
            if max_entries is not None and len(indices) > max_entries:
                pick = rng.choice(len(indices), size=max_entries, replace=False)
                indices = [indices[j] for j in sorted(pick)]
            for idx in indices:
                vals = []
                stable = True
                for sgn in (1.0, -1.0):
                    p2 = {k: v.copy() for k, v in params.items()}
                    p2[name][idx] += sgn * h
                    g2, _, l2 = run(p2, x)
                    if any((m != m2).any() for m, m2 in zip(base_masks, _relu_masks(g2))):
                        stable = False
                        break
                    vals.append(float(l2.value))
                if not stable:
                    skipped += 1
                    continue
                num = (vals[0] - vals[1]) / (2 * h)
                err = float(rel_error(analytic[idx], num, floor))
                checked += 1
                if err > trial_worst:
                    trial_worst = err
                if err > worst:
                    worst, worst_param = err, name
        if trial_worst >= tolerance and worst_graph is None:
            worst_graph = g

    report = GradCheckReport(worst, tolerance, trials, checked, skipped, resamples, worst_param)
    if worst_graph is not None:
        report.node_errors = _local_node_errors(worst_graph, ops, h, floor, rng)
        bad = max(report.node_errors, key=report.node_errors.get)
        report.offending_node = bad
        report.offending_op = worst_graph.nodes[bad].op
    return report
