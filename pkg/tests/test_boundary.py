import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from deepgeom.boundary import (
    CurvatureProfile,
    export_mean_profile,
    export_profile,
    make_boundary_point,
    mean_curvature_exact,
    mean_curvature_trace,
    normal_curvature,
    principal_curvatures,
    projected_trace,
    refine_to_boundary,
    tangent_basis,
    tangent_project,
)
from deepgeom.errors import DegenerateNormal, NoBoundaryFound, NonSmoothActivation
from deepgeom.network import QuadraticSurrogate, linear_network, sphere_surrogate
from deepgeom.reports import read_csv

from conftest import random_net


def random_quadratic_on_boundary(rng, d):
    """Random symmetric quadric and a point placed exactly on its zero set."""
    B = rng.standard_normal((d, d))
    A = 0.5 * (B + B.T)
    b = rng.standard_normal(d)
    z = rng.standard_normal(d)
    c = -(z @ A @ z + b @ z)
    return QuadraticSurrogate(A, b, c), z


def dense_oracle(model, bp):
    """Eigenvalues of P (2A) P / |g| with the normal eigenpair removed."""
    n = bp.unit_normal
    P = np.eye(n.size) - np.outer(n, n)
    M = P @ (model.A + model.A.T) @ P / bp.gradient.norm
    vals, vecs = np.linalg.eigh(M)
    drop = np.argmax(np.abs(vecs.T @ n))
    return np.sort(np.delete(vals, drop))[::-1]


def section_curvature(model, bp, v, h=1e-3):
    """Signed curvature of the planar cross-section along (n, v) by a three-point circle fit."""
    n = bp.unit_normal
    v = tangent_project(bp, v)
    v /= np.linalg.norm(v)

    def height(s):
        F = lambda t: model.q(bp.z + s * v + t * n)
        return brentq(F, -0.5, 0.5, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    pts = np.array([[-h, height(-h)], [0.0, 0.0], [h, height(h)]])
    a = np.linalg.norm(pts[1] - pts[0])
    b = np.linalg.norm(pts[2] - pts[1])
    c = np.linalg.norm(pts[2] - pts[0])
    u, w = pts[1] - pts[0], pts[2] - pts[0]
    area2 = abs(u[0] * w[1] - u[1] * w[0])
    kappa = 2.0 * area2 / (a * b * c)
    # the section bends away from +n when the region {F < 0} is locally convex
    return kappa if pts[0, 1] + pts[2, 1] < 0 else -kappa


def test_refine_sphere_from_outside():
    model = sphere_surrogate(2, 1.0)
    bp = refine_to_boundary(model, np.array([2.0, 0.0]), 0, 1)
    np.testing.assert_allclose(bp.z, [1.0, 0.0], atol=1e-6)
    assert bp.on_boundary


def test_refine_keeps_point_already_on_boundary():
    model = sphere_surrogate(3, 2.0)
    z = np.array([0.0, 2.0, 0.0])
    bp = refine_to_boundary(model, z, 0, 1)
    np.testing.assert_allclose(bp.z, z, atol=1e-12)


def test_refine_linear_is_orthogonal_projection(rng):
    w, b = rng.standard_normal(4), 0.7
    net = linear_network(np.vstack([w, np.zeros(4)]), [b, 0.0])
    x = rng.standard_normal(4) * 3
    bp = refine_to_boundary(net, x, 0, 1)
    expected = x - ((w @ x + b) / (w @ w)) * w
    np.testing.assert_allclose(bp.z, expected, atol=1e-9)


def test_refine_from_inside_sphere():
    model = sphere_surrogate(3, 2.0)
    bp = refine_to_boundary(model, np.array([0.5, 0.2, -0.1]), 0, 1)
    assert np.linalg.norm(bp.z) == pytest.approx(2.0, abs=1e-9)


def test_refine_raises_without_sign_change():
    model = QuadraticSurrogate(np.eye(2), np.zeros(2), 1.0)  # q > 0 everywhere
    with pytest.raises(NoBoundaryFound):
        refine_to_boundary(model, np.array([1.0, 1.0]), 0, 1, max_steps=30)


def test_zero_gradient_is_degenerate():
    model = sphere_surrogate(2, 1.0)
    with pytest.raises(DegenerateNormal):
        make_boundary_point(model, np.zeros(2), 0, 1)


def test_projector_properties(rng):
    model, z = random_quadratic_on_boundary(rng, 6)
    bp = make_boundary_point(model, z, 0, 1)
    n = bp.unit_normal
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(tangent_project(bp, n)) < 1e-14
    t = tangent_project(bp, rng.standard_normal(6))
    np.testing.assert_allclose(tangent_project(bp, t), t, atol=1e-15)
    v = rng.standard_normal((5, 6))
    np.testing.assert_allclose(tangent_project(bp, tangent_project(bp, v)), tangent_project(bp, v), atol=1e-12)


def test_tangent_basis_is_orthonormal_complement(rng):
    n = rng.standard_normal(9)
    n /= np.linalg.norm(n)
    Q = tangent_basis(n)
    np.testing.assert_allclose(Q.T @ Q, np.eye(8), atol=1e-13)
    assert np.abs(Q.T @ n).max() < 1e-13


def test_sphere_normal_curvature_is_inverse_radius(rng):
    model = sphere_surrogate(4, 2.0)
    z = rng.standard_normal(4)
    bp = make_boundary_point(model, 2.0 * z / np.linalg.norm(z), 0, 1)
    for v in rng.standard_normal((5, 4)):
        assert normal_curvature(model, bp, v) == pytest.approx(0.5, abs=1e-12)


def test_linear_normal_curvature_zero(rng):
    net = linear_network(rng.standard_normal((2, 5)))
    bp = make_boundary_point(net, rng.standard_normal(5), 0, 1)
    assert normal_curvature(net, bp, rng.standard_normal(5)) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_normal_curvature_matches_cross_section(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 3.0, size=5)
    model = QuadraticSurrogate(np.diag(a), np.zeros(5), -1.0)
    u = rng.standard_normal(5)
    z = u / np.sqrt(a @ u**2)
    bp = make_boundary_point(model, z, 0, 1)
    v = rng.standard_normal(5)
    kappa = normal_curvature(model, bp, v)
    assert kappa == pytest.approx(section_curvature(model, bp, v), rel=1e-3)


def test_cross_section_oracle_on_saddle():
    # indefinite quadric: curvature sign must match in both directions
    model = QuadraticSurrogate(np.diag([1.0, -1.0, 0.5]), np.zeros(3), -1.0)
    bp = make_boundary_point(model, np.array([1.0, 0.0, 0.0]), 0, 1)
    for v in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])):
        assert normal_curvature(model, bp, v) == pytest.approx(section_curvature(model, bp, v), rel=1e-3)


def test_relu_rejected_for_curvature(rng):
    net = random_net(rng, [3, 4, 2], "relu")
    bp = make_boundary_point(net, rng.standard_normal(3), 0, 1)
    with pytest.raises(NonSmoothActivation):
        principal_curvatures(net, bp)


def test_sphere_profile_d5():
    model = sphere_surrogate(5, 2.0)
    bp = refine_to_boundary(model, np.array([3.0, 1.0, 0.0, -1.0, 0.5]), 0, 1)
    prof = principal_curvatures(model, bp)
    np.testing.assert_allclose(prof.principal_curvatures, [0.5] * 4, atol=1e-6)
    assert mean_curvature_exact(model, bp) == pytest.approx(0.5, abs=1e-6)


def test_linear_profile_all_zero(rng):
    net = linear_network(rng.standard_normal((3, 10)))
    bp = make_boundary_point(net, rng.standard_normal(10), 2, 0)
    prof = principal_curvatures(net, bp)
    assert prof.principal_curvatures.shape == (9,)
    assert np.abs(prof.principal_curvatures).max() < 1e-8
    assert mean_curvature_exact(net, bp) == 0.0


def test_random_quadratic_matches_dense_projector(rng):
    model, z = random_quadratic_on_boundary(rng, 20)
    bp = make_boundary_point(model, z, 0, 1)
    prof = principal_curvatures(model, bp)
    np.testing.assert_allclose(prof.principal_curvatures, dense_oracle(model, bp), atol=1e-8)


def test_profile_directions_orthonormal_and_tangent(rng):
    net = random_net(rng, [7, 16, 3], "softplus")
    bp = make_boundary_point(net, rng.standard_normal(7), 0, 1)
    prof = principal_curvatures(net, bp)
    D = prof.principal_directions
    np.testing.assert_allclose(D.T @ D, np.eye(6), atol=1e-8)
    assert np.abs(D.T @ bp.unit_normal).max() < 1e-8
    assert prof.mean_curvature == pytest.approx(prof.principal_curvatures.mean(), rel=1e-10, abs=1e-15)
    assert np.all(np.diff(prof.principal_curvatures) <= 0)
    for kappa, v in zip(prof.principal_curvatures, D.T):
        assert normal_curvature(net, bp, v) == pytest.approx(kappa, rel=1e-8, abs=1e-12)


def test_trace_consistency(rng):
    net = random_net(rng, [9, 20, 20, 3], "tanh")
    bp = make_boundary_point(net, rng.standard_normal(9), 1, 2)
    prof = principal_curvatures(net, bp)
    total = prof.principal_curvatures.sum()
    assert total == pytest.approx(projected_trace(net, bp) / bp.gradient.norm, rel=1e-8)
    assert mean_curvature_trace(net, bp) == pytest.approx(prof.mean_curvature, rel=1e-8)


def test_pair_flip_negates_and_reverses(rng):
    net = random_net(rng, [6, 12, 3], "softplus")
    x = rng.standard_normal(6)
    a = principal_curvatures(net, make_boundary_point(net, x, 0, 2)).principal_curvatures
    b = principal_curvatures(net, make_boundary_point(net, x, 2, 0)).principal_curvatures
    np.testing.assert_allclose(b, -a[::-1], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_normal_curvature_scale_invariant(seed, alpha):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [5, 10, 2], "softplus")
    bp = make_boundary_point(net, rng.standard_normal(5), 0, 1)
    v = rng.standard_normal(5)
    k1, k2 = normal_curvature(net, bp, v), normal_curvature(net, bp, alpha * v)
    assert abs(k1 - k2) <= 1e-10 * max(1.0, abs(k1))


@settings(max_examples=15, deadline=None)
@given(d=st.integers(2, 50), seed=st.integers(0, 10**6))
def test_sphere_curvature_any_dimension(d, seed):
    r = 2.0
    model = sphere_surrogate(d, r)
    x = np.random.default_rng(seed).standard_normal(d) * 3
    bp = refine_to_boundary(model, x, 0, 1)
    np.testing.assert_allclose(principal_curvatures(model, bp).principal_curvatures, 1 / r, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_lanczos_matches_dense(seed):
    rng = np.random.default_rng(seed)
    model, z = random_quadratic_on_boundary(rng, 50)
    bp = make_boundary_point(model, z, 0, 1)
    dense = principal_curvatures(model, bp, k=5, method="dense")
    lanczos = principal_curvatures(model, bp, k=5, method="lanczos", seed=seed)
    np.testing.assert_allclose(lanczos.principal_curvatures, dense.principal_curvatures, atol=1e-6)
    assert not lanczos.complete
    assert lanczos.mean_curvature == pytest.approx(dense.mean_curvature, rel=1e-8)
    overlap = np.abs(np.sum(lanczos.principal_directions * dense.principal_directions, axis=0))
    assert overlap.min() > 1 - 1e-6


def test_profile_csv_exports(tmp_path):
    prof = CurvatureProfile(np.array([0.3, 0.0, -0.2]), np.eye(3), 1 / 30)
    export_profile(tmp_path / "p.csv", prof)
    rows = read_csv(tmp_path / "p.csv")
    assert [r["index"] for r in rows] == ["1", "2", "3"]
    assert float(rows[2]["kappa"]) == -0.2
    other = CurvatureProfile(np.array([0.1, 0.0, 0.0]), np.eye(3), 0.0)
    export_mean_profile(tmp_path / "m.csv", [prof, other])
    assert float(read_csv(tmp_path / "m.csv")[0]["kappa"]) == pytest.approx(0.2)
