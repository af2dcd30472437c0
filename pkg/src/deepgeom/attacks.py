"""Minimal L2 perturbations by iterative linearization of the pairwise scores.

At the current iterate ``x_i`` every competing class ``k`` defines a
linearized boundary ``f_k - f_c + w_k . s = 0``; the step goes to the nearest
one. The accumulated step ``r_tot`` is reported as ``r = (1 + overshoot) r_tot``
and the run succeeds once both ``x + r`` and ``x + (1 + overshoot) r`` carry
the goal label.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidQuery
from .reports import write_csv

OVERSHOOT = 0.02
MAX_ITER = 100


@dataclass(frozen=True)
class PerturbationResult:
    r: np.ndarray
    iterations: int
    succeeded: bool
    orig_label: int
    new_label: int
    target_class: int | None = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.r))


def _step_floor(x) -> float:
    # keeps the iteration moving when x sits exactly on a boundary
    return 1e-12 * (1.0 + float(np.linalg.norm(x)))


def _linearized_step(model, point, current, candidates):
    """Shortest step from ``point`` to the linearized boundary ``f_k = f_current``."""
    logits = model.forward(point)
    jac = model.vjp(point, np.eye(model.num_classes))
    best = None
    for k in candidates:
        if k == current:
            continue
        w = jac[k] - jac[current]
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            continue
        dist = abs(float(logits[k] - logits[current])) / wn
        if best is None or dist < best[0]:
            best = (dist, w / wn)
    if best is None:
        return None
    dist, unit = best
    return (dist + _step_floor(point)) * unit


def _iterate(model, x, goal, candidates_for, overshoot, max_iter):
    x = np.asarray(x, dtype=float)
    r_tot = np.zeros_like(x)
    r = r_tot
    for it in range(1, max_iter + 1):
        probes = (x + r_tot, x + r, x + (1.0 + overshoot) * r) if it > 1 else (x,)
        point = next((p for p in probes if not goal(int(model.predict(p)))), None)
        if point is None:
            return r, it - 1, True
        current = int(model.predict(point))
        step = _linearized_step(model, point, current, candidates_for(current))
        if step is None:
            return r, it, False
        r_tot = (point - x) + step
        r = (1.0 + overshoot) * r_tot
    ok = goal(int(model.predict(x + r))) and goal(int(model.predict(x + (1.0 + overshoot) * r)))
    return r, max_iter, ok


def minimal_perturbation(model, x, overshoot: float = OVERSHOOT, max_iter: int = MAX_ITER) -> PerturbationResult:
    """Approximate ``argmin |r|`` such that the predicted label of ``x + r`` changes."""
    x = np.asarray(x, dtype=float)
    orig = int(model.predict(x))
    classes = range(model.num_classes)
    r, iters, ok = _iterate(model, x, lambda k: k != orig, lambda cur: classes,
                            overshoot, max_iter)
    new = int(model.predict(x + r))
    return PerturbationResult(r, iters, bool(ok and new != orig), orig, new)


def targeted_projection(model, x, target: int, overshoot: float = OVERSHOOT,
                        max_iter: int = MAX_ITER) -> PerturbationResult:
    """Approximate ``argmin |r|`` such that ``x + r`` is classified as ``target``."""
    x = np.asarray(x, dtype=float)
    orig = int(model.predict(x))
    if target == orig:
        raise InvalidQuery("target class equals the current prediction")
    if not 0 <= target < model.num_classes:
        raise InvalidInput(f"target {target} outside 0..{model.num_classes - 1}")
    r, iters, ok = _iterate(model, x, lambda k: k == target, lambda cur: [target], overshoot, max_iter)
    new = int(model.predict(x + r))
    return PerturbationResult(r, iters, bool(ok and new == target), orig, new, target_class=int(target))


def tighten(model, x, r, target: int, steps: int = 40) -> np.ndarray:
    """Shrink ``r`` to the smallest multiple (by bisection) still labelled ``target``."""
    x = np.asarray(x, dtype=float)
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if int(model.predict(x + mid * r)) == target:
            hi = mid
        else:
            lo = mid
    return hi * r


def scale_perturbation(x, r, alpha: float) -> np.ndarray:
    if alpha < 1:
        raise InvalidInput("alpha must be >= 1")
    return np.asarray(x, dtype=float) + alpha * np.asarray(r, dtype=float)


def perturb_batch(model, X, overshoot: float = OVERSHOOT, max_iter: int = MAX_ITER):
    return [minimal_perturbation(model, x, overshoot, max_iter) for x in np.asarray(X, dtype=float)]


def export_perturbations(path, results):
    rows = [(k, res.succeeded, res.norm, res.iterations, res.orig_label, res.new_label)
            for k, res in enumerate(results)]
    return write_csv(path, ["sample_id", "success", "norm_r", "iterations", "orig_label", "new_label"], rows)
