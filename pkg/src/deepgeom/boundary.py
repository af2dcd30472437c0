"""Curvature of the pairwise decision boundary ``{z : f_i(z) - f_j(z) = 0}``.

Conventions:

* The normal is the unit vector ``n = grad F / |grad F|`` and the tangent
  projector is ``P = I - n n^T``.
* The normal curvature along a tangent direction ``v`` is
  ``v^T H_F v / (|v|^2 |grad F|)``. With this sign, a sphere with
  ``F = |x|^2 - r^2`` has curvature ``+1/r``: the curvature is positive when
  the boundary bends away from the normal, i.e. when the region ``{F < 0}`` is
  locally convex.
* Principal curvatures are the eigenvalues of ``P H_F P / |grad F|`` restricted
  to the tangent space, sorted in descending order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .attacks import MAX_ITER, OVERSHOOT, minimal_perturbation
from .errors import DegenerateNormal, InvalidInput, LanczosNotConverged, NoBoundaryFound, NonSmoothActivation
from .network import Gradient, pair_cotangent
from .reports import write_csv
from .seeding import rng_for

DENSE_MAX_DIM = 300


def boundary_tolerance(z, grad_norm: float) -> float:
    return 1e-6 * max(1.0, grad_norm * float(np.linalg.norm(z)))


@dataclass(frozen=True)
class BoundaryPoint:
    z: np.ndarray
    class_pair: tuple
    F_value: float
    gradient: Gradient
    unit_normal: np.ndarray

    @property
    def on_boundary(self) -> bool:
        return abs(self.F_value) <= boundary_tolerance(self.z, self.gradient.norm)

    def cotangent(self, num_classes: int) -> np.ndarray:
        return pair_cotangent(num_classes, *self.class_pair)


def _pair_value(model, x, c):
    return float(model.forward(x) @ c)


def make_boundary_point(model, z, i: int, j: int) -> BoundaryPoint:
    """Evaluate ``F``, its gradient and the unit normal at ``z`` (no refinement)."""
    z = np.array(z, dtype=float)
    c = pair_cotangent(model.num_classes, i, j)
    g = model.vjp(z, c)
    norm = float(np.linalg.norm(g))
    if not norm > 0.0 or not np.isfinite(norm):
        raise DegenerateNormal(f"zero gradient of f_{i} - f_{j} at the requested point")
    return BoundaryPoint(z, (int(i), int(j)), _pair_value(model, z, c), Gradient(g, norm), g / norm)


def refine_to_boundary(model, x_start, i: int, j: int, max_steps: int = 200) -> BoundaryPoint:
    """Move ``x_start`` along ``-sign(F) grad F`` until ``|F|`` is within tolerance.

    A bracket is found by doubling the Newton step ``|F| / |grad F|``, then
    bisected. Raises :class:`NoBoundaryFound` if ``F`` never changes sign.
    """
    bp = make_boundary_point(model, x_start, i, j)
    if bp.on_boundary:
        return bp
    x0, F0 = bp.z, bp.F_value
    c = pair_cotangent(model.num_classes, i, j)
    direction = -np.sign(F0) * bp.unit_normal
    sign0 = np.sign(F0)

    lo, hi = 0.0, abs(F0) / bp.gradient.norm
    for _ in range(max_steps):
        F_hi = _pair_value(model, x0 + hi * direction, c)
        if F_hi == 0.0 or np.sign(F_hi) != sign0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NoBoundaryFound(f"F = f_{i} - f_{j} keeps its sign along the normal line from x_start")

    # bisect until the bracket collapses; the tolerance is only the acceptance bar
    best_t, best_F = hi, abs(F_hi)
    for _ in range(max_steps):
        if best_F == 0.0:
            break
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        F_mid = _pair_value(model, x0 + mid * direction, c)
        if abs(F_mid) < best_F:
            best_t, best_F = mid, abs(F_mid)
        if np.sign(F_mid) == sign0:
            lo = mid
        else:
            hi = mid
    candidate = make_boundary_point(model, x0 + best_t * direction, i, j)
    if candidate.on_boundary:
        return candidate
    raise NoBoundaryFound(f"bisection stalled with |F| = {abs(candidate.F_value):.3e}")


def tangent_project(bp: BoundaryPoint, v) -> np.ndarray:
    """``v - (n.v) n`` for one direction or a stack of row directions."""
    v = np.asarray(v, dtype=float)
    n = bp.unit_normal
    return v - np.multiply.outer(v @ n, n)


def _require_smooth(model):
    if not model.smooth:
        raise NonSmoothActivation("curvature is only defined for softplus/tanh/identity networks")


def normal_curvature(model, bp: BoundaryPoint, v) -> float:
    """Curvature of the normal section through ``bp`` along tangent direction ``v``."""
    _require_smooth(model)
    pv = tangent_project(bp, v)
    sq = float(pv @ pv)
    if not sq > 0.0:
        raise InvalidInput("direction has no tangential component")
    hv = model.hvp(bp.z, bp.cotangent(model.num_classes), pv)
    return float(pv @ hv) / (sq * bp.gradient.norm)


def tangent_basis(n) -> np.ndarray:
    """Orthonormal ``(d, d-1)`` basis of the complement of the unit vector ``n``."""
    d = n.shape[0]
    w = n.copy()
    w[0] += 1.0 if n[0] >= 0 else -1.0
    w /= np.linalg.norm(w)
    householder = np.eye(d) - 2.0 * np.outer(w, w)
    return householder[:, 1:]


def shape_operator(model, bp: BoundaryPoint) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``Q^T H_F Q / |grad F|`` in tangent coordinates, and the basis ``Q``."""
    _require_smooth(model)
    Q = tangent_basis(bp.unit_normal)
    HQ = model.hvp(bp.z, bp.cotangent(model.num_classes), Q.T)  # row k is H q_k
    K = Q.T @ HQ.T / bp.gradient.norm
    return 0.5 * (K + K.T), Q


@dataclass(frozen=True)
class CurvatureProfile:
    principal_curvatures: np.ndarray  # descending
    principal_directions: np.ndarray  # columns, matching order
    mean_curvature: float
    complete: bool = True


def _select(vals, vecs, k):
    """Keep the ``k`` largest and ``k`` smallest of descending-sorted eigenpairs."""
    m = vals.shape[0]
    if k == "all" or 2 * k >= m:
        return vals, vecs
    keep = np.r_[np.arange(k), np.arange(m - k, m)]
    return vals[keep], vecs[:, keep]


def principal_curvatures_dense(model, bp: BoundaryPoint, k="all") -> CurvatureProfile:
    K, Q = shape_operator(model, bp)
    vals, W = np.linalg.eigh(K)
    vals, W = vals[::-1], W[:, ::-1]
    mean = float(np.mean(vals)) if vals.size else 0.0
    sel_vals, sel_W = _select(vals, W, k)
    return CurvatureProfile(sel_vals, Q @ sel_W, mean, complete=sel_vals.shape[0] == vals.shape[0])


def _lanczos_operator(model, bp):
    c = bp.cotangent(model.num_classes)
    d = bp.z.shape[0]

    def matvec(v):
        pv = tangent_project(bp, np.ravel(v))
        return tangent_project(bp, model.hvp(bp.z, c, pv)) / bp.gradient.norm

    return LinearOperator((d, d), matvec=matvec, dtype=float)


def principal_curvatures_lanczos(model, bp: BoundaryPoint, k: int, seed: int = 0,
                                 tol: float = 0.0, maxiter: int | None = None) -> CurvatureProfile:
    """Top-``k`` and bottom-``k`` principal curvatures without forming the Hessian.

    Implicitly restarted Lanczos (ARPACK) on ``v -> P H P v / |grad F|``. The
    start vector is tangent, so the Krylov space excludes the normal direction.
    """
    _require_smooth(model)
    d = bp.z.shape[0]
    if k == "all" or 2 * k >= d - 1:
        raise InvalidInput(f"Lanczos path needs 2k < d-1 (k={k}, d={d}); use the dense path")
    op = _lanczos_operator(model, bp)
    v0 = tangent_project(bp, rng_for(seed, "lanczos").standard_normal(d))
    v0 /= np.linalg.norm(v0)
    ncv = min(d - 1, max(2 * k + 1, 20))
    pairs = []
    for which in ("LA", "SA"):
        try:
            vals, vecs = eigsh(op, k=k, which=which, v0=v0, ncv=ncv, tol=tol, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise LanczosNotConverged(
                f"Lanczos ({which}) converged {len(exc.eigenvalues)} of {k} eigenpairs") from exc
        pairs.extend(zip(vals, vecs.T))
    pairs = [(val, vec) for val, vec in pairs if abs(vec @ bp.unit_normal) < 0.5]
    pairs.sort(key=lambda p: -p[0])
    vals = np.array([p[0] for p in pairs])
    vecs = np.column_stack([tangent_project(bp, p[1]) for p in pairs])
    vecs /= np.linalg.norm(vecs, axis=0)
    return CurvatureProfile(vals, vecs, mean_curvature_trace(model, bp), complete=False)


def principal_curvatures(model, bp: BoundaryPoint, k="all", method: str = "auto", seed: int = 0) -> CurvatureProfile:
    """Principal curvatures and directions at a boundary point.

    ``method="auto"`` uses the dense eigendecomposition up to
    ``DENSE_MAX_DIM`` dimensions and Lanczos above.
    """
    d = bp.z.shape[0]
    if k != "all" and not 1 <= k <= d - 1:
        raise InvalidInput(f"k must be in 1..{d - 1} or 'all'")
    if method == "auto":
        method = "dense" if d <= DENSE_MAX_DIM or k == "all" else "lanczos"
    if method == "dense":
        return principal_curvatures_dense(model, bp, k)
    if method == "lanczos":
        return principal_curvatures_lanczos(model, bp, k, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def projected_trace(model, bp: BoundaryPoint) -> float:
    """``tr(P H_F P)`` from ``d`` Hessian-vector products: ``tr(H) - n^T H n``."""
    _require_smooth(model)
    d = bp.z.shape[0]
    c = bp.cotangent(model.num_classes)
    H_diag = np.einsum("ii->i", model.hvp(bp.z, c, np.eye(d)))
    n = bp.unit_normal
    return float(H_diag.sum() - n @ model.hvp(bp.z, c, n))


def mean_curvature_trace(model, bp: BoundaryPoint) -> float:
    d = bp.z.shape[0]
    return projected_trace(model, bp) / ((d - 1) * bp.gradient.norm)


def mean_curvature_exact(model, bp: BoundaryPoint) -> float:
    """Average of all ``d-1`` principal curvatures."""
    if bp.z.shape[0] <= DENSE_MAX_DIM:
        return principal_curvatures_dense(model, bp).mean_curvature
    return mean_curvature_trace(model, bp)


def export_profile(path, profile: CurvatureProfile):
    rows = [(idx + 1, kappa) for idx, kappa in enumerate(profile.principal_curvatures)]
    return write_csv(path, ["index", "kappa"], rows)


def export_mean_profile(path, profiles):
    """Index-wise mean of equally long profiles."""
    stacked = np.vstack([p.principal_curvatures for p in profiles])
    mean = stacked.mean(axis=0)
    return write_csv(path, ["index", "kappa"], [(idx + 1, k) for idx, k in enumerate(mean)])


def locate_boundary_point(model, x, overshoot: float = OVERSHOOT, max_iter: int = MAX_ITER) -> BoundaryPoint:
    """Boundary point reached by the minimal perturbation of ``x``.

    The class pair is ``(new, original)``, i.e. ``F = f_new - f_orig`` as in the
    detector's convention. Raises :class:`NoBoundaryFound` if the attack fails.
    """
    x = np.asarray(x, dtype=float)
    res = minimal_perturbation(model, x, overshoot, max_iter)
    if not res.succeeded:
        raise NoBoundaryFound(f"minimal perturbation did not converge in {max_iter} iterations")
    return refine_to_boundary(model, x + res.r, res.new_label, res.orig_label)
