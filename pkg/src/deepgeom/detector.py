"""Curvature-asymmetry detector for perturbed inputs.

For a sample ``x`` with predicted class ``k``, every other class ``i`` gives a
score ``s_i = mean_j v_j^T G_i(x) v_j`` with ``F_i = f_i - f_k`` and
``G_i = P H_{F_i} P / |grad F_i|`` evaluated at ``x`` itself. Clean samples sit
where the boundaries bend away from them (negative scores); minimally
perturbed ones sit just past a boundary that bends around them (positive).
``rho`` is the mean of the ``s_i``; a sample is flagged when ``rho >= t`` and
its label is recovered as the class with the largest score.

``E[v^T G v]`` over uniform unit ``v`` is ``tr(G) / d``. The mean principal
curvature divides by ``d - 1`` instead; the sign is the same.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .attacks import scale_perturbation
from .boundary import locate_boundary_point, mean_curvature_exact
from .errors import DegenerateNormal, GeometryError, InvalidInput, InvalidQuery, NonSmoothActivation
from .network import pair_cotangent
from .reports import write_csv
from .seeding import rng_for, unit_vectors

DEFAULT_T = 100
N_THRESHOLDS = 101


def _require_smooth(model):
    if not model.smooth:
        raise NonSmoothActivation("the detector needs second derivatives; relu networks are rejected")


def probes(seed: int, sample_id: int, T: int, d: int) -> np.ndarray:
    """Per-sample probe vectors, uniform on the unit sphere."""
    return unit_vectors(rng_for(seed, "detect", sample_id), T, d)


def quadratic_form_G(model, x, i: int, V, k_hat: int | None = None) -> np.ndarray:
    """``v^T G_{F_i}(x) v`` for each row of ``V`` (or a single vector)."""
    _require_smooth(model)
    x = np.asarray(x, dtype=float)
    if k_hat is None:
        k_hat = int(model.predict(x))
    if i == k_hat:
        raise InvalidQuery("class i must differ from the predicted class")
    c = pair_cotangent(model.num_classes, i, k_hat)
    g = model.vjp(x, c)
    gn = float(np.linalg.norm(g))
    if not gn > 0 or not np.isfinite(gn):
        raise DegenerateNormal(f"zero gradient of f_{i} - f_{k_hat} at x")
    n = g / gn
    V = np.asarray(V, dtype=float)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    PV = V - np.outer(V @ n, n)
    HV = np.atleast_2d(model.hvp(x, c, PV))
    q = np.einsum("ij,ij->i", PV, HV) / gn
    return float(q[0]) if single else q


def hutchinson_mean_curvature(model, x, i: int, T: int, seed: int = 0, sample_id: int = 0,
                              k_hat: int | None = None):
    """Monte-Carlo ``tr(G)/d`` and its standard error from ``T`` unit probes."""
    if T < 2:
        raise InvalidInput("need at least two probes for a standard error")
    x = np.asarray(x, dtype=float)
    q = quadratic_form_G(model, x, i, probes(seed, sample_id, T, x.shape[0]), k_hat)
    return float(q.mean()), float(q.std(ddof=1) / math.sqrt(T))


@dataclass(frozen=True)
class DetectionVerdict:
    rho: float
    perturbed: bool
    recovered_label: int | None
    per_class_scores: dict  # class -> score, None when the gradient vanished
    T: int
    threshold: float
    predicted: int


def detect(model, x, T: int = DEFAULT_T, t: float = 0.0, seed: int = 0, sample_id: int = 0) -> DetectionVerdict:
    """Flag ``x`` as perturbed when the mean score ``rho >= t``.

    Probes are shared across classes. If no class has a usable gradient the
    verdict is ``rho = nan`` and not perturbed.
    """
    if model.num_classes < 2:
        raise InvalidInput("detection needs at least two classes")
    x = np.asarray(x, dtype=float)
    k_hat = int(model.predict(x))
    V = probes(seed, sample_id, T, x.shape[0])
    scores = {}
    for i in range(model.num_classes):
        if i == k_hat:
            continue
        try:
            scores[i] = float(np.mean(quadratic_form_G(model, x, i, V, k_hat)))
        except DegenerateNormal:
            scores[i] = None
    present = {i: s for i, s in scores.items() if s is not None}
    if not present:
        return DetectionVerdict(float("nan"), False, None, scores, T, t, k_hat)
    rho = float(np.mean(list(present.values())))
    perturbed = rho >= t
    recovered = None
    if perturbed:
        best = max(present.values())
        recovered = min(i for i, s in present.items() if s == best)
    return DetectionVerdict(rho, bool(perturbed), recovered, scores, T, t, k_hat)


def detect_batch(model, X, T: int = DEFAULT_T, t: float = 0.0, seed: int = 0, id_offset: int = 0):
    return [detect(model, x, T, t, seed, id_offset + k) for k, x in enumerate(np.atleast_2d(X))]


def scores(model, X, T: int = DEFAULT_T, seed: int = 0, id_offset: int = 0) -> np.ndarray:
    return np.array([v.rho for v in detect_batch(model, X, T, 0.0, seed, id_offset)])


@dataclass
class SignStatistics:
    clean_positive: float
    clean_negative: float
    perturbed_positive: float
    perturbed_negative: float
    clean_count: int
    perturbed_count: int
    clean_skipped: int = 0
    perturbed_skipped: int = 0


def _boundary_mean_curvatures(model, X):
    vals, skipped = [], 0
    for x in np.atleast_2d(np.asarray(X, dtype=float)):
        try:
            vals.append(mean_curvature_exact(model, locate_boundary_point(model, x)))
        except GeometryError:
            skipped += 1
    return np.array(vals), skipped


def sign_statistics(model, clean, perturbed, T: int | None = None, seed: int = 0) -> SignStatistics:
    """Fractions of positive / non-positive mean curvature at boundary points.

    Each sample is moved to the boundary by its own minimal perturbation; the
    mean curvature is that of ``F = f_other - f_k`` with ``k`` the sample's
    predicted class. The exact (dense or trace) mean curvature is used, so
    ``T`` and ``seed`` do not enter.
    """
    if len(clean) == 0 or len(perturbed) == 0:
        raise InvalidInput("both sets must be nonempty")
    kc, sc = _boundary_mean_curvatures(model, clean)
    kp, sp = _boundary_mean_curvatures(model, perturbed)
    pc = float(np.mean(kc > 0)) if kc.size else float("nan")
    pp = float(np.mean(kp > 0)) if kp.size else float("nan")
    return SignStatistics(pc, 1 - pc, pp, 1 - pp, int(kc.size), int(kp.size), sc, sp)


def auc(clean_scores, perturbed_scores) -> float:
    """Probability that a perturbed score exceeds a clean one (ties count half)."""
    c = np.asarray(clean_scores, dtype=float)
    p = np.asarray(perturbed_scores, dtype=float)
    ranks = rankdata(np.concatenate([c, p]))
    return float((ranks[c.size:].sum() - p.size * (p.size + 1) / 2) / (c.size * p.size))


def bootstrap_auc(clean_scores, perturbed_scores, n_boot: int = 1000, seed: int = 0, level: float = 0.95):
    rng = rng_for(seed, "bootstrap")
    c = np.asarray(clean_scores, dtype=float)
    p = np.asarray(perturbed_scores, dtype=float)
    vals = np.array([auc(c[rng.integers(c.size, size=c.size)], p[rng.integers(p.size, size=p.size)])
                     for _ in range(n_boot)])
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def default_thresholds(values, n: int = N_THRESHOLDS) -> np.ndarray:
    """``n`` thresholds over the observed range, plus the two infinite ends."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    inner = np.linspace(v.min(), v.max(), n) if v.size else np.zeros(0)
    return np.concatenate([[-np.inf], inner, [np.inf]])


@dataclass
class ROC:
    thresholds: np.ndarray
    tpr_clean: np.ndarray  # clean samples passed as clean: rho < t
    fpr_perturbed: np.ndarray  # perturbed samples passed as clean: rho < t
    auc: float
    clean_scores: np.ndarray
    perturbed_scores: np.ndarray


def roc_from_scores(clean_scores, perturbed_scores, thresholds=None) -> ROC:
    c = np.asarray(clean_scores, dtype=float)
    p = np.asarray(perturbed_scores, dtype=float)
    if thresholds is None:
        thresholds = default_thresholds(np.concatenate([c, p]))
    thresholds = np.asarray(thresholds, dtype=float)
    tpr = np.array([np.mean(c < t) for t in thresholds])
    fpr = np.array([np.mean(p < t) for t in thresholds])
    return ROC(thresholds, tpr, fpr, auc(c, p), c, p)


def roc_sweep(model, clean, perturbed, thresholds=None, T: int = DEFAULT_T, seed: int = 0) -> ROC:
    """ROC of the detector; clean ids are ``0..n-1``, perturbed ids continue after them."""
    c = scores(model, clean, T, seed, 0)
    p = scores(model, perturbed, T, seed, len(clean))
    return roc_from_scores(c, p, thresholds)


def alpha_sweep(model, clean, originals, perturbations, alphas, T: int = DEFAULT_T, seed: int = 0):
    """ROC per scale factor: the same clean set against ``x + alpha * r``."""
    c = scores(model, clean, T, seed, 0)
    out = {}
    for a in alphas:
        Xa = np.array([scale_perturbation(x, r, a) for x, r in zip(originals, perturbations)])
        out[float(a)] = roc_from_scores(c, scores(model, Xa, T, seed, len(clean)))
    return out


@dataclass
class RecoveryReport:
    accuracy: float | None  # None when nothing was flagged
    flagged: int
    total: int
    verdicts: list


def recover_labels(model, perturbed, original_labels, T: int = DEFAULT_T, t: float = 0.0, seed: int = 0,
                   id_offset: int = 0) -> RecoveryReport:
    """Among flagged samples, the fraction whose recovered label is the original one."""
    verdicts = detect_batch(model, perturbed, T, t, seed, id_offset)
    hits = [v.recovered_label == int(y) for v, y in zip(verdicts, original_labels) if v.perturbed]
    acc = float(np.mean(hits)) if hits else None
    return RecoveryReport(acc, len(hits), len(verdicts), verdicts)


def export_verdicts(path, verdicts, true_labels=None, orig_labels=None, ids=None):
    n = len(verdicts)
    ids = range(n) if ids is None else ids
    true_labels = [None] * n if true_labels is None else true_labels
    orig_labels = [None] * n if orig_labels is None else orig_labels
    rows = [(sid, v.rho, v.perturbed, v.recovered_label, tl, ol)
            for sid, v, tl, ol in zip(ids, verdicts, true_labels, orig_labels)]
    return write_csv(path, ["sample_id", "rho", "perturbed", "recovered_label", "true_label", "orig_label"], rows)


def export_roc(path, roc: ROC):
    return write_csv(path, ["t", "tpr_clean", "fpr_perturbed"], zip(roc.thresholds, roc.tpr_clean, roc.fpr_perturbed))


def export_alpha_sweep(path, sweep):
    rows = [(a, t, tp, fp) for a, roc in sweep.items() for t, tp, fp in zip(roc.thresholds, roc.tpr_clean, roc.fpr_perturbed)]
    return write_csv(path, ["alpha", "t", "tpr_clean", "fpr_perturbed"], rows)
