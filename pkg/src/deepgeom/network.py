"""Differentiable classifiers with exact gradients and Hessian-vector products.

Two model families share one duck-typed interface (``forward``, ``predict``,
``vjp``, ``hvp``, ``input_dim``, ``num_classes``, ``smooth``):

* :class:`Network` -- a dense multilayer perceptron.
* :class:`QuadraticSurrogate` -- a two-class model whose pairwise score is an
  explicit quadratic, used as an analytic fixture.

Derivatives are with respect to the *input*. ``vjp`` seeds reverse mode with a
cotangent on the logits, so ``vjp(x, e_i - e_j)`` is the gradient of the
pairwise score ``f_i - f_j``. ``hvp`` differentiates that reverse pass once
more in forward mode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, InvalidInput, NonSmoothActivation

SMOOTH_ACTIVATIONS = ("softplus", "tanh", "identity")
ACTIVATIONS = SMOOTH_ACTIVATIONS + ("relu",)
CHECKPOINT_SCHEMA = "deepgeom.checkpoint/1"


def softplus(t):
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def _activate(name, t):
    """Return (value, first derivative, second derivative) of an activation."""
    if name == "softplus":
        s = expit(t)
        return softplus(t), s, s * (1.0 - s)
    if name == "tanh":
        h = np.tanh(t)
        d1 = 1.0 - h * h
        return h, d1, -2.0 * h * d1
    if name == "identity":
        return t, np.ones_like(t), np.zeros_like(t)
    if name == "relu":
        # derivative at the kink is taken to be 0
        return np.maximum(t, 0.0), (t > 0).astype(float), np.zeros_like(t)
    raise ValueError(f"unknown activation {name!r}")


def pair_cotangent(num_classes: int, i: int, j: int) -> np.ndarray:
    """Cotangent selecting ``F = f_i - f_j`` from the logits."""
    if i == j:
        raise InvalidInput("class pair must be two distinct classes")
    c = np.zeros(num_classes)
    c[i] = 1.0
    c[j] = -1.0
    return c


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # shape (out, in)
    bias: np.ndarray
    activation: str = "softplus"

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or b.shape[0] != w.shape[0]:
            raise DimensionMismatch(f"weight {w.shape} and bias {b.shape} do not match")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidInput("layer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


class Network:
    """Feed-forward dense classifier ``f: R^d -> R^L``."""

    kind = "mlp"

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise InvalidInput("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise DimensionMismatch(
                    f"layer output {prev.weight.shape[0]} does not feed input {nxt.weight.shape[1]}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def smooth(self) -> bool:
        return all(layer.activation in SMOOTH_ACTIVATIONS for layer in self.layers)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim or x.ndim > 2:
            raise DimensionMismatch(f"expected inputs of dimension {self.input_dim}, got shape {x.shape}")
        return x

    def _trace(self, x):
        pre = []
        a = x
        for layer in self.layers:
            z = a @ layer.weight.T + layer.bias
            pre.append(z)
            a = _activate(layer.activation, z)[0]
        return a, pre

    def forward(self, x) -> np.ndarray:
        """Logits for a point ``(d,)`` or a batch ``(n, d)``."""
        return self._trace(self._check(x))[0]

    def predict(self, x):
        return predict_from_logits(self.forward(x))

    def vjp(self, x, cotangent) -> np.ndarray:
        """Input gradient of ``<cotangent, f(x)>``.

        ``x`` may be a single point with one or several cotangents ``(m, L)``,
        or a batch ``(n, d)`` with one cotangent per row.
        """
        x = self._check(x)
        _, pre = self._trace(x)
        g = np.asarray(cotangent, dtype=float)
        for layer, z in zip(reversed(self.layers), reversed(pre)):
            g = (g * _activate(layer.activation, z)[1]) @ layer.weight
        return g

    def hvp(self, x, cotangent, v) -> np.ndarray:
        """Hessian of ``<cotangent, f(x)>`` applied to ``v`` (shape ``(d,)`` or ``(T, d)``).

        Forward-over-reverse: the reverse sweep of :meth:`vjp` is pushed
        forward along the tangent ``v``.
        """
        if not self.smooth:
            raise NonSmoothActivation("Hessian-vector products need softplus/tanh/identity activations")
        x = self._check(x)
        if x.ndim != 1:
            raise DimensionMismatch("hvp takes a single point")
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"direction has dimension {v.shape[-1]}, expected {self.input_dim}")

        derivs = []
        a, a_dot = x, v
        for layer in self.layers:
            z = a @ layer.weight.T + layer.bias
            z_dot = a_dot @ layer.weight.T
            act, d1, d2 = _activate(layer.activation, z)
            derivs.append((d1, d2, z_dot))
            a, a_dot = act, z_dot * d1

        g = np.asarray(cotangent, dtype=float)
        g_dot = np.zeros(v.shape[:-1] + g.shape)
        for layer, (d1, d2, z_dot) in zip(reversed(self.layers), reversed(derivs)):
            gz = g * d1
            gz_dot = g_dot * d1 + (g * d2) * z_dot
            g = gz @ layer.weight
            g_dot = gz_dot @ layer.weight
        return g_dot

    def scaled(self, c: float) -> "Network":
        """Copy with all logits multiplied by ``c`` (output layer must be identity)."""
        last = self.layers[-1]
        if last.activation != "identity":
            raise InvalidInput("logit rescaling needs an identity output layer")
        return Network(self.layers[:-1] + (Layer(c * last.weight, c * last.bias, "identity"),))

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "layers": [
                {"activation": l.activation, "weight": l.weight.tolist(), "bias": l.bias.tolist()}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data):
        net = cls(Layer(np.array(l["weight"], dtype=float), np.array(l["bias"], dtype=float), l["activation"])
                  for l in data["layers"])
        if net.input_dim != data["input_dim"] or net.num_classes != data["num_classes"]:
            raise DimensionMismatch("declared dimensions disagree with layer shapes")
        return net


class QuadraticSurrogate:
    """Two-class model with logits ``(q(x), 0)``, ``q(x) = x^T A x + b^T x + c``.

    Class 0 is ``{q > 0}``, class 1 is ``{q < 0}``; the pairwise boundary is the
    quadric ``q = 0``. Only the symmetric part of ``A`` matters.
    """

    kind = "quadratic"
    num_classes = 2
    smooth = True

    def __init__(self, A, b=None, c=0.0):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch("A must be square")
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.array(b, dtype=float).reshape(-1)
        self.c = float(c)
        self._S = A + A.T
        for arr in (self.A, self.b, self._S):
            arr.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return self.A.shape[0]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim or x.ndim > 2:
            raise DimensionMismatch(f"expected inputs of dimension {self.input_dim}, got shape {x.shape}")
        return x

    def q(self, x):
        x = self._check(x)
        return np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c

    def forward(self, x):
        q = self.q(x)
        return np.stack([q, np.zeros_like(q)], axis=-1)

    def predict(self, x):
        return predict_from_logits(self.forward(x))

    def vjp(self, x, cotangent):
        x = self._check(x)
        c = np.asarray(cotangent, dtype=float)
        grad_q = x @ self._S + self.b
        return c[..., :1] * grad_q

    def hvp(self, x, cotangent, v):
        self._check(x)
        c = np.asarray(cotangent, dtype=float)
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"direction has dimension {v.shape[-1]}, expected {self.input_dim}")
        return c[0] * (v @ self._S)

    def scaled(self, c: float) -> "QuadraticSurrogate":
        return QuadraticSurrogate(c * self.A, c * self.b, c * self.c)

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": 2,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["A"], data["b"], data["c"])


def sphere_surrogate(d: int, radius: float) -> QuadraticSurrogate:
    """``q(x) = |x|^2 - radius^2``: class 0 outside the sphere, class 1 inside."""
    return QuadraticSurrogate(np.eye(d), np.zeros(d), -radius**2)


def linear_network(weight, bias=None) -> Network:
    weight = np.asarray(weight, dtype=float)
    bias = np.zeros(weight.shape[0]) if bias is None else bias
    return Network([Layer(weight, bias, "identity")])


def predict_from_logits(logits):
    # np.argmax already breaks ties toward the lowest index
    return np.argmax(logits, axis=-1)


def predict(model, x):
    return model.predict(x)


def forward(model, x):
    return model.forward(x)


@dataclass(frozen=True)
class Gradient:
    vector: np.ndarray
    norm: float


def grad_F(model, x, i: int, j: int) -> Gradient:
    """Exact gradient of ``F = f_i - f_j`` at a single point."""
    g = model.vjp(x, pair_cotangent(model.num_classes, i, j))
    return Gradient(g, float(np.linalg.norm(g)))


def hvp_F(model, x, i: int, j: int, v) -> np.ndarray:
    """``H_F(x) v`` for ``F = f_i - f_j``; ``v`` may hold one direction per row."""
    return model.hvp(x, pair_cotangent(model.num_classes, i, j), v)


def model_from_dict(data):
    kinds = {"mlp": Network, "quadratic": QuadraticSurrogate}
    try:
        return kinds[data["kind"]].from_dict(data)
    except KeyError as exc:
        raise InvalidInput(f"unknown model kind {data.get('kind')!r}") from exc


@dataclass
class Checkpoint:
    model: object
    metadata: dict = field(default_factory=dict)

    def dumps(self) -> str:
        doc = {"schema": CHECKPOINT_SCHEMA, "model": self.model.to_dict(), "metadata": self.metadata}
        return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("schema") != CHECKPOINT_SCHEMA:
            raise InvalidInput(f"unsupported checkpoint schema {doc.get('schema')!r}")
        return cls(model_from_dict(doc["model"]), doc.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
