"""Layered feedforward hypotheses ``h = f_i o g_i`` with a movable split."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node

CHECKPOINT_FORMAT = "dalab.layered_net"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    width_in: int
    width_out: int
    activation: str = "relu"  # "relu" | "none"

    def __post_init__(self):
        if self.width_in < 1 or self.width_out < 1:
            raise ValueError(f"layer widths must be positive, got {self.width_in}->{self.width_out}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_specs(widths: Sequence[int], activations: Sequence[str] | None = None) -> list[LayerSpec]:
    """Specs for ``widths[0] -> ... -> widths[-1]``.

    By default every layer but the last is ReLU and the last is linear
    (its output feeds the softmax head).
    """
    n = len(widths) - 1
    if activations is None:
        activations = ["relu"] * (n - 1) + ["none"]
    if len(activations) != n:
        raise ValueError(f"{n} layers but {len(activations)} activations")
    return [LayerSpec(widths[k], widths[k + 1], activations[k]) for k in range(n)]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class LayeredNet:
    """A stack of affine(+ReLU) layers ending in a softmax head.

    Layer ``k`` (1-based) owns parameters ``W{k}`` and ``b{k}``. The
    activation record of layer ``k`` is its post-nonlinearity output; the
    last layer's activation is the logit vector.
    """

    def __init__(self, specs: Sequence[LayerSpec], params: dict[str, np.ndarray] | None = None,
                 seed: int | np.random.Generator | None = 0, min_layers: int = 2):
        specs = list(specs)
        if len(specs) < min_layers:
            raise ValueError(f"need at least {min_layers} layers, got {len(specs)}")
        for k in range(1, len(specs)):
            if specs[k - 1].width_out != specs[k].width_in:
                raise ValueError(
                    f"layer {k} outputs {specs[k - 1].width_out} but layer {k + 1} expects {specs[k].width_in}"
                )
        self.specs = specs
        if params is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            params = {}
            for k, s in enumerate(specs, start=1):
                params[f"W{k}"] = glorot_uniform(rng, s.width_in, s.width_out)
                params[f"b{k}"] = np.zeros(s.width_out)
        else:
            params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            for k, s in enumerate(specs, start=1):
                if params[f"W{k}"].shape != (s.width_in, s.width_out) or params[f"b{k}"].shape != (s.width_out,):
                    raise ValueError(f"parameter shapes for layer {k} do not match its spec")
        self.params = params

    @property
    def depth(self) -> int:
        return len(self.specs)

    @property
    def input_width(self) -> int:
        return self.specs[0].width_in

    @property
    def n_classes(self) -> int:
        return self.specs[-1].width_out

    def copy(self) -> "LayeredNet":
        return LayeredNet(self.specs, {k: v.copy() for k, v in self.params.items()})

    def layer_width(self, k: int) -> int:
        return self.specs[k - 1].width_out

    # graph path (training)

    def build_layers(self, graph: Graph, pnodes: dict[str, Node], x: Node,
                     start: int = 1, stop: int | None = None) -> list[Node]:
        stop = self.depth if stop is None else stop
        acts = []
        h = x
        for k in range(start, stop + 1):
            h = graph.affine(h, pnodes[f"W{k}"], pnodes[f"b{k}"])
            if self.specs[k - 1].activation == "relu":
                h = graph.relu(h)
            acts.append(h)
        return acts

    def build(self, graph: Graph, pnodes: dict[str, Node], x: Node) -> Node:
        return self.build_layers(graph, pnodes, x)[-1]

    # numpy path (evaluation); same arithmetic as the graph ops

    def _check_width(self, X: np.ndarray, width: int):
        if X.ndim != 2 or X.shape[1] != width:
            raise ValueError(f"expected inputs of width {width}, got shape {X.shape}")

    def propagate(self, H: np.ndarray, start: int = 1, stop: int | None = None) -> list[np.ndarray]:
        """Activations of layers ``start..stop`` given the input to layer ``start``."""
        stop = self.depth if stop is None else stop
        H = np.asarray(H, dtype=np.float64)
        self._check_width(H, self.specs[start - 1].width_in)
        acts = []
        for k in range(start, stop + 1):
            H = H @ self.params[f"W{k}"] + self.params[f"b{k}"]
            if self.specs[k - 1].activation == "relu":
                H = np.maximum(H, 0.0)
            acts.append(H)
        return acts

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.propagate(X)[-1])

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.propagate(X)[-1], axis=1)

    def split(self, i: int) -> "SplitView":
        return SplitView(self, i)

    # checkpoints

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layers": [
                {
                    "width_in": s.width_in,
                    "width_out": s.width_out,
                    "activation": s.activation,
                    "W": self.params[f"W{k}"].tolist(),
                    "b": self.params[f"b{k}"].tolist(),
                }
                for k, s in enumerate(self.specs, start=1)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayeredNet":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a layered-net checkpoint: format={d.get('format')!r}")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        specs, params = [], {}
        for k, layer in enumerate(d["layers"], start=1):
            specs.append(LayerSpec(layer["width_in"], layer["width_out"], layer["activation"]))
            params[f"W{k}"] = np.array(layer["W"], dtype=np.float64).reshape(layer["width_in"], layer["width_out"])
            params[f"b{k}"] = np.array(layer["b"], dtype=np.float64)
        return cls(specs, params, min_layers=1)

    def save(self, path) -> None:
        # json floats use repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "LayeredNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_activations(net: LayeredNet, X) -> tuple[list[np.ndarray], np.ndarray]:
    """All ``N`` layer activations plus the class probabilities."""
    acts = net.propagate(X)
    return acts, softmax(acts[-1])


class SplitView:
    """``net`` viewed as predictor ``f_i`` (layers i+1..N) after encoder ``g_i`` (layers 1..i)."""

    def __init__(self, net: LayeredNet, i: int):
        if not 1 <= i <= net.depth - 1:
            raise ValueError(f"split index must be in [1, {net.depth - 1}], got {i}")
        self.net = net
        self.i = i

    def encode(self, X) -> np.ndarray:
        return self.net.propagate(X, 1, self.i)[-1]

    def predict_from_latent(self, Z) -> np.ndarray:
        return np.argmax(self.net.propagate(Z, self.i + 1)[-1], axis=1)

    def predict(self, X) -> np.ndarray:
        return self.predict_from_latent(self.encode(X))


class Discriminator(LayeredNet):
    """Domain classifier over the activations of one layer of ``net``.

    Label 0 is source, 1 is target.
    """

    def __init__(self, net: LayeredNet, attached_layer: int, hidden: Sequence[int] = (256, 256),
                 seed: int | np.random.Generator | None = 0):
        if not 1 <= attached_layer <= net.depth - 1:
            raise ValueError(f"discriminator layer must be in [1, {net.depth - 1}], got {attached_layer}")
        self.attached_layer = attached_layer
        widths = [net.layer_width(attached_layer), *hidden, 2]
        super().__init__(mlp_specs(widths), seed=seed, min_layers=1)


class LabelFunction:
    """Wraps a fixed labeling (callable or constant) as a hypothesis."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X)
        if callable(self.fn):
            return np.asarray(self.fn(X), dtype=np.int64)
        return np.full(len(X), int(self.fn), dtype=np.int64)


def _predict(h, X) -> np.ndarray:
    if hasattr(h, "predict"):
        return np.asarray(h.predict(X))
    return np.asarray(h(X))


def zero_one_risk(h, dataset) -> float:
    """Fraction of samples whose argmax prediction differs from the label.

    Ties in the logits resolve to the lowest class index.
    """
    X, y = _xy(dataset)
    if len(y) == 0:
        raise ValueError("zero_one_risk of an empty dataset")
    return float(np.mean(_predict(h, X) != y))


def disagreement(a, b, X) -> float:
    X = X.features if hasattr(X, "features") else np.asarray(X)
    if len(X) == 0:
        raise ValueError("disagreement on an empty sample")
    return float(np.mean(_predict(a, X) != _predict(b, X)))


def _xy(dataset):
    if hasattr(dataset, "features"):
        return dataset.features, dataset.labels
    X, y = dataset
    return np.asarray(X), np.asarray(y)
