"""Curved directions shared across data points.

Principal directions from many boundary points are stacked as columns of a
matrix ``M``; its leading left singular vectors are the shared directions.
``rho_statistic`` measures how curved the boundary is along one direction
relative to a random one, and the subspace ``S`` spanned by the leading
directions is probed with noise and with several perturbation sources.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import minimal_perturbation
from .boundary import BoundaryPoint, locate_boundary_point, principal_curvatures, tangent_project
from .errors import DegenerateDenominator, GeometryError, InvalidInput
from .reports import write_csv
from .seeding import rng_for, unit_vectors

DEFAULT_TOP_P = 10
DENOM_SAMPLES = 1000


@dataclass(frozen=True)
class SharedBasis:
    U: np.ndarray  # (d, m), orthonormal columns
    singular_values: np.ndarray
    n_samples: int  # samples that contributed directions
    per_sample: int
    skipped: int = 0

    @property
    def m(self) -> int:
        return self.U.shape[1]


@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray  # (d, s)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    def complement(self) -> np.ndarray | None:
        """Orthonormal basis of the orthogonal complement, ``None`` if empty."""
        d, s = self.basis.shape
        if s >= d:
            return None
        Q, _ = np.linalg.qr(np.hstack([self.basis, np.eye(d)]))
        return Q[:, s:d]


def default_subspace_dim(d: int) -> int:
    return max(1, min(200, d // 4))


def subspace(basis: SharedBasis, dim: int | None = None) -> Subspace:
    d = basis.U.shape[0]
    if dim is None:
        dim = default_subspace_dim(d)
    dim = min(dim, basis.m)
    if dim < 1:
        raise InvalidInput("subspace dimension must be at least 1")
    return Subspace(basis.U[:, :dim])


def top_directions(profile, p: int, mode: str = "abs") -> np.ndarray:
    """``p`` principal directions with the largest |kappa| (or signed kappa)."""
    kappa = profile.principal_curvatures
    if mode == "abs":
        order = np.argsort(-np.abs(kappa), kind="stable")
    elif mode == "signed":
        order = np.argsort(-kappa, kind="stable")
    else:
        raise InvalidInput(f"unknown selection mode {mode!r}")
    return profile.principal_directions[:, order[:p]]


def directions_matrix(model, samples, per_sample_top_p: int = DEFAULT_TOP_P, mode: str = "abs"):
    """Stack top principal directions of each sample's boundary point.

    Returns ``(M, used, skipped)``; samples whose attack or refinement fails are skipped.
    """
    cols, used, skipped = [], 0, 0
    for x in np.atleast_2d(np.asarray(samples, dtype=float)):
        try:
            bp = locate_boundary_point(model, x)
            profile = principal_curvatures(model, bp, k="all")
        except GeometryError:
            skipped += 1
            continue
        cols.append(top_directions(profile, per_sample_top_p, mode))
        used += 1
    if not cols:
        raise InvalidInput("no sample produced a boundary point")
    return np.hstack(cols), used, skipped


def build_shared_basis(model, samples, per_sample_top_p: int = DEFAULT_TOP_P, m: int | None = None,
                       seed: int = 0, mode: str = "abs") -> SharedBasis:
    """Leading left singular vectors of the stacked principal directions.

    ``seed`` is accepted for interface symmetry; the construction itself is
    deterministic (exact attack, dense eigendecomposition, SVD).
    """
    M, used, skipped = directions_matrix(model, samples, per_sample_top_p, mode)
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    # fix the sign of each vector so exports are reproducible
    signs = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    U = U * np.where(signs == 0, 1.0, signs)
    if m is None:
        m = U.shape[1]
    m = min(m, U.shape[1])
    return SharedBasis(U[:, :m], sv[:m], used, min(per_sample_top_p, M.shape[1] // max(used, 1)), skipped)


def _quadratic_forms(model, bp: BoundaryPoint, V) -> np.ndarray:
    """``v^T P H P v / |grad F|`` for every row ``v`` of ``V``."""
    PV = tangent_project(bp, np.atleast_2d(V))
    HV = np.atleast_2d(model.hvp(bp.z, bp.cotangent(model.num_classes), PV))
    return np.einsum("ij,ij->i", PV, HV) / bp.gradient.norm


@dataclass(frozen=True)
class RhoEstimate:
    value: float
    stderr: float
    numerator: float
    denominator: float
    denominator_stderr: float


def rho_denominator(model, bp: BoundaryPoint, denom_samples: int = DENOM_SAMPLES, seed: int = 0,
                    sample_id: int = 0, tangent: bool = False):
    """Monte-Carlo ``E|v^T P H P v| / |grad F|`` with its standard error.

    ``v`` is uniform on the unit sphere of ``R^d``; with ``tangent=True`` it is
    uniform on the unit sphere of the tangent space instead.
    """
    d = bp.z.shape[0]
    V = unit_vectors(rng_for(seed, "rho", sample_id), denom_samples, d)
    if tangent:
        V = tangent_project(bp, V)
        V /= np.linalg.norm(V, axis=1, keepdims=True)
    q = np.abs(_quadratic_forms(model, bp, V))
    mean = float(q.mean())
    se = float(q.std(ddof=1) / math.sqrt(len(q))) if len(q) > 1 else float("nan")
    if mean < 1e-12:
        raise DegenerateDenominator(f"average |v^T G v| = {mean:.3e} is below 1e-12")
    return mean, se


def rho_statistic(model, bp: BoundaryPoint, u, denom_samples: int = DENOM_SAMPLES, seed: int = 0,
                  sample_id: int = 0, tangent: bool = False) -> RhoEstimate:
    """Relative curvature of the boundary along ``u``.

    ``|u^T P H P u| / E_v |v^T P H P v|`` for unit ``u``. The standard error
    propagates the denominator's Monte-Carlo error.
    """
    u = np.asarray(u, dtype=float)
    nu = np.linalg.norm(u)
    if not nu > 0:
        raise InvalidInput("direction must be nonzero")
    den, den_se = rho_denominator(model, bp, denom_samples, seed, sample_id, tangent)
    num = float(abs(_quadratic_forms(model, bp, u / nu)[0]))
    val = num / den
    return RhoEstimate(val, val * den_se / den, num, den, den_se)


def rho_profile(model, points, U, denom_samples: int = DENOM_SAMPLES, seed: int = 0, tangent: bool = False):
    """Per-direction mean rho over boundary points and the standard error across points.

    ``U`` holds directions as columns. Returns ``(mean, stderr, per_point)``.
    """
    U = np.asarray(U, dtype=float)
    U = U / np.linalg.norm(U, axis=0)
    rows = []
    for sid, bp in enumerate(points):
        den, _ = rho_denominator(model, bp, denom_samples, seed, sid, tangent)
        rows.append(np.abs(_quadratic_forms(model, bp, U.T)) / den)
    R = np.array(rows)
    se = R.std(axis=0, ddof=1) / math.sqrt(len(R)) if len(R) > 1 else np.full(R.shape[1], np.nan)
    return R.mean(axis=0), se, R


def boundary_points(model, X):
    """Boundary points of the minimal perturbations of ``X``; failures are counted."""
    pts, skipped = [], 0
    for x in np.atleast_2d(np.asarray(X, dtype=float)):
        try:
            pts.append(locate_boundary_point(model, x))
        except GeometryError:
            skipped += 1
    return pts, skipped


def projection_norm(sub: Subspace, v) -> np.ndarray | float:
    """``|P_S v| / |v|`` for one vector or each row of a stack."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms == 0):
        raise InvalidInput("projection norm of a zero vector is undefined")
    out = np.clip(np.linalg.norm(v @ sub.basis, axis=-1) / norms, 0.0, 1.0)
    return float(out) if v.ndim == 1 else out


def expected_projection_norm(s: int, d: int) -> float:
    """Exact ``E |P_S v| / |v|`` for isotropic ``v`` (ratio of chi means)."""
    return math.exp(math.lgamma((s + 1) / 2) + math.lgamma(d / 2) - math.lgamma(s / 2) - math.lgamma((d + 1) / 2))


@dataclass
class NoiseCurves:
    magnitudes: list
    rate_in_S: list
    stderr_in_S: list
    rate_in_perp: list | None  # None when S is the whole space
    stderr_in_perp: list | None
    samples: int = 0


def _noise_in(basis, rng, n):
    return unit_vectors(rng, n, basis.shape[1]) @ basis.T


def noise_robustness_split(model, X, sub: Subspace, magnitudes, trials: int = 1, seed: int = 0,
                           typical_norm: float | None = None) -> NoiseCurves:
    """Label-change rate under uniform noise restricted to ``S`` and to its complement.

    Magnitudes are fractions of the typical (median) data norm.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if typical_norm is None:
        typical_norm = float(np.median(np.linalg.norm(X, axis=1)))
    base = np.repeat(model.predict(X), trials)
    Xr = np.repeat(X, trials, axis=0)
    perp = sub.complement()
    n = len(Xr)

    def rates(basis, stream):
        out, errs = [], []
        for k, mag in enumerate(magnitudes):
            noise = _noise_in(basis, rng_for(seed, "noise", stream, k), n)
            p = float(np.mean(model.predict(Xr + mag * typical_norm * noise) != base))
            out.append(p)
            errs.append(math.sqrt(p * (1 - p) / n))
        return out, errs

    in_s, se_s = rates(sub.basis, 0)
    if perp is None:
        return NoiseCurves(list(magnitudes), in_s, se_s, None, None, n)
    in_p, se_p = rates(perp, 1)
    return NoiseCurves(list(magnitudes), in_s, se_s, in_p, se_p, n)


@dataclass
class Table1Row:
    source: str
    mean: float | None
    stderr: float | None
    count: int
    reason: str = ""


def _row(name, values):
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else float("nan")
    return Table1Row(name, float(values.mean()), se, len(values))


def image_gradients(X, shape) -> np.ndarray:
    """Finite-difference spatial gradients (both axes) of images stored as rows."""
    imgs = np.asarray(X, dtype=float).reshape((-1,) + tuple(shape))
    gy, gx = np.gradient(imgs, axis=(1, 2))
    return np.vstack([gx.reshape(len(imgs), -1), gy.reshape(len(imgs), -1)])


def table1_analogue(model, sub: Subspace, validation, seed: int = 0, n_random: int = 1000,
                    n_pairs: int = 100, n_adversarial: int = 200, image_shape=None):
    """Mean projection norm onto ``S`` of several perturbation sources."""
    d = sub.ambient_dim
    X, y = validation.X, validation.y
    rows = [_row("Random", projection_norm(sub, unit_vectors(rng_for(seed, "table1", 0), n_random, d)))]

    rng = rng_for(seed, "table1", 1)
    diffs = []
    classes = [c for c in np.unique(y) if np.sum(y == c) >= 2]
    while classes and len(diffs) < n_pairs:
        c = classes[int(rng.integers(len(classes)))]
        i, j = rng.choice(np.flatnonzero(y == c), size=2, replace=False)
        if np.any(X[i] != X[j]):
            diffs.append(X[j] - X[i])
    if diffs:
        rows.append(_row("x2-x1", projection_norm(sub, np.array(diffs))))
    else:
        rows.append(Table1Row("x2-x1", None, None, 0, "no class has two distinct points"))

    if image_shape is None:
        rows.append(Table1Row("grad_x", None, None, 0, "inputs are not image-shaped"))
    else:
        G = image_gradients(X, image_shape)
        G = G[np.linalg.norm(G, axis=1) > 0]
        rows.append(_row("grad_x", projection_norm(sub, G)) if len(G) else
                    Table1Row("grad_x", None, None, 0, "all image gradients vanish"))

    adv = [res.r for res in (minimal_perturbation(model, x) for x in X[:n_adversarial])
           if res.succeeded and np.linalg.norm(res.r) > 0]
    if adv:
        rows.append(_row("Adversarial", projection_norm(sub, np.array(adv))))
    else:
        rows.append(Table1Row("Adversarial", None, None, 0, "no successful perturbation"))
    return rows


def export_basis(path, basis: SharedBasis, sv_path=None):
    """Basis vectors as rows ``index,x_1..x_d`` plus a singular-value list."""
    path = Path(path)
    d = basis.U.shape[0]
    header = ["index"] + [f"x_{k + 1}" for k in range(d)]
    write_csv(path, header, [[k + 1, *col] for k, col in enumerate(basis.U.T)])
    if sv_path is None:
        sv_path = path.with_name(path.stem + "_singular_values.csv")
    write_csv(sv_path, ["index", "singular_value"], [(k + 1, s) for k, s in enumerate(basis.singular_values)])
    return path, Path(sv_path)


def export_basis_images(directory, basis: SharedBasis, shape, count: int | None = None):
    """One headerless CSV grid per basis vector, for image-shaped inputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for k, col in enumerate(basis.U.T[:count]):
        grid = col.reshape(shape)
        p = directory / f"basis_{k + 1:03d}.csv"
        p.write_text("".join(",".join(repr(float(v)) for v in row) + "\n" for row in grid), encoding="utf-8")
        out.append(p)
    return out


def export_rho(path, mean, stderr):
    return write_csv(path, ["direction_index", "mean_rho", "stderr"],
                     [(k + 1, m, s) for k, (m, s) in enumerate(zip(mean, stderr))])


def export_noise(path, curves: NoiseCurves):
    perp = curves.rate_in_perp or [None] * len(curves.magnitudes)
    perp_se = curves.stderr_in_perp or [None] * len(curves.magnitudes)
    rows = zip(curves.magnitudes, curves.rate_in_S, curves.stderr_in_S, perp, perp_se)
    return write_csv(path, ["magnitude", "rate_S", "stderr_S", "rate_S_perp", "stderr_S_perp"], rows)


def export_table1(path, rows):
    return write_csv(path, ["source", "mean_norm", "stderr", "count", "reason"],
                     [(r.source, r.mean, r.stderr, r.count, r.reason) for r in rows])
