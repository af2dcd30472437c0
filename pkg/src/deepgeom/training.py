"""Cross-entropy training of :class:`~deepgeom.network.Network` with SGD + momentum.

Initialization is Glorot-uniform: weights of a layer with fan-in ``a`` and
fan-out ``b`` are drawn from ``U(-s, s)`` with ``s = sqrt(6 / (a + b))``;
biases start at zero. All draws come from the generator seeded by ``seed``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .errors import InvalidInput, TrainingDiverged
from .network import Checkpoint, Layer, Network, _activate
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Architecture:
    hidden: tuple = (64, 64)
    activation: str = "softplus"


@dataclass(frozen=True)
class HyperParams:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    extra: dict = field(default_factory=dict)


def init_params(sizes, rng):
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        params.append([rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out)])
    return params


def _loss_and_grads(params, activations, X, y):
    pre, acts = [], [X]
    a = X
    for (W, b), act in zip(params, activations):
        z = a @ W.T + b
        pre.append(z)
        a = _activate(act, z)[0]
        acts.append(a)
    lse = logsumexp(a, axis=1)
    n = X.shape[0]
    loss = float(np.mean(lse - a[np.arange(n), y]))

    delta = np.exp(a - lse[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for k in reversed(range(len(params))):
        delta = delta * _activate(activations[k], pre[k])[1]
        W = params[k][0]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        delta = delta @ W
    return loss, grads


def accuracy(model, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(model.predict(dataset.X) == dataset.y))


def train(dataset: Dataset, arch: Architecture = Architecture(), hp: HyperParams = HyperParams(),
          seed: int = 0, validation: Dataset | None = None, dataset_id: str = "") -> Checkpoint:
    """Train a classifier and return it wrapped in a :class:`Checkpoint`.

    Deterministic given ``seed``. Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    if dataset.y.min() < 0 or dataset.y.max() >= dataset.num_classes:
        raise InvalidInput("labels must lie in 0..L-1")
    sizes = [dataset.dim, *arch.hidden, dataset.num_classes]
    activations = [arch.activation] * len(arch.hidden) + ["identity"]
    params = init_params(sizes, rng_for(seed, "init"))
    velocity = [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]
    order_rng = rng_for(seed, "shuffle")

    n = len(dataset)
    loss = float("nan")
    for epoch in range(hp.epochs):
        perm = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            loss, grads = _loss_and_grads(params, activations, dataset.X[idx], dataset.y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch offset {start}; "
                                       f"try a smaller learning rate (now {hp.learning_rate})")
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                for slot in range(2):
                    step = g[slot] + (hp.weight_decay * p[slot] if slot == 0 else 0.0)
                    v[slot] = hp.momentum * v[slot] - hp.learning_rate * step
                    p[slot] = p[slot] + v[slot]
        loss = total / n
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.5f", epoch, loss)

    net = Network(Layer(W, b, act) for (W, b), act in zip(params, activations))
    meta = {
        "dataset": dataset_id,
        "seed": int(seed),
        "epochs": int(hp.epochs),
        "architecture": {"hidden": list(arch.hidden), "activation": arch.activation},
        "hyperparams": {k: v for k, v in asdict(hp).items() if k != "extra"},
        "final_loss": float(loss),
        "train_accuracy": accuracy(net, dataset),
        "validation_accuracy": accuracy(net, validation) if validation is not None else None,
    }
    return Checkpoint(net, meta)
