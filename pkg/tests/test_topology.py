import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepgeom.attacks import minimal_perturbation
from deepgeom.data import DatasetSpec, generate_dataset
from deepgeom.errors import InvalidInput, InvalidQuery
from deepgeom.network import linear_network
from deepgeom.reports import read_csv
from deepgeom.topology import (
    SAMPLES_PER_SEGMENT,
    convex_probe,
    export_probe,
    export_scenario,
    find_path,
    run_scenario,
    segment_samples,
    sphere_point,
    validate_path,
)
from deepgeom.training import Architecture, HyperParams, train


def binary_linear(w, b):
    w = np.asarray(w, dtype=float)
    return linear_network(np.vstack([w, np.zeros_like(w)]), [b, 0.0])


def test_identical_endpoints_trivial_path():
    net = binary_linear([1.0, 0.0], 0.0)
    x = np.array([1.0, 2.0])
    p = find_path(net, x, x.copy())
    assert p.valid and p.depth_used == 0 and len(p.anchors) == 2


def test_linear_region_straight_segment(rng):
    net = binary_linear([1.0, -1.0, 0.5], 0.2)
    X = rng.standard_normal((50, 3))
    lab = net.predict(X)
    x1, x2 = X[lab == 0][:2]
    p = find_path(net, x1, x2)
    assert p.valid and p.depth_used == 0
    assert np.array_equal(p.anchors, [x1, x2])


def test_endpoints_in_different_regions_rejected():
    net = binary_linear([1.0, 0.0], 0.0)
    with pytest.raises(InvalidQuery):
        find_path(net, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))


def test_flipped_midpoint_makes_path_invalid():
    net = binary_linear([0.0, 1.0], -1.0)  # class 1 below y=1
    x1, x2 = np.array([-1.0, 0.0]), np.array([1.0, 0.0])
    mid = 0.5 * (x1 + x2)
    res = minimal_perturbation(net, mid)
    flipped = mid + res.r
    assert net.predict(flipped) != net.predict(x1)
    ok, bad = validate_path(net, [x1, flipped, x2], int(net.predict(x1)))
    assert not ok
    assert net.predict(bad) != net.predict(x1)


def test_single_point_path():
    net = binary_linear([1.0, 0.0], 0.0)
    x = np.array([2.0, 0.0])
    assert validate_path(net, [x], int(net.predict(x)))[0]
    assert not validate_path(net, [x], 1 - int(net.predict(x)))[0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s=st.integers(2, 12))
def test_denser_sampling_never_validates_more(seed, s):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(2)
    net = binary_linear(w, 0.3 * rng.standard_normal())
    anchors = rng.standard_normal((3, 2)) * 2
    label = int(net.predict(anchors[0]))
    if not validate_path(net, anchors, label, s)[0]:
        assert not validate_path(net, anchors, label, 2 * s)[0]


def test_grid_is_nested():
    a, b = np.zeros(2), np.array([1.0, 0.0])
    coarse = segment_samples(a, b, 8, 0.05)
    fine = segment_samples(a, b, 16, 0.05)
    assert all(np.any(np.all(np.isclose(fine, c), axis=1)) for c in coarse)


def test_moons_path_invariants(moons_net, moons_data):
    _, val = moons_data
    delta = 0.01 * val.diameter()
    labels = moons_net.predict(val.X)
    rng = np.random.default_rng(7)
    detours = 0
    for _ in range(20):
        i = int(rng.integers(len(val)))
        j = int(rng.choice(np.flatnonzero(labels == labels[i])))
        p = find_path(moons_net, val.X[i], val.X[j], delta=delta)
        assert p.valid
        assert np.array_equal(p.anchors[0], val.X[i]) and np.array_equal(p.anchors[-1], val.X[j])
        assert len(p.anchors) <= 2**p.depth_used + 1
        assert validate_path(moons_net, p.anchors, p.region_label, 2 * SAMPLES_PER_SEGMENT, delta / 2)[0]
        detours += p.depth_used > 0
        again = find_path(moons_net, val.X[i], val.X[j], delta=delta)
        assert np.array_equal(again.anchors, p.anchors)
    assert detours > 0  # the moons are not convex, some pairs must bend


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_scenarios_on_moons(moons_net, moons_data, scenario, tmp_path):
    _, val = moons_data
    out = run_scenario(moons_net, scenario, val, n_pairs=20, seed=0)
    assert all(s.success for s in out)
    export_scenario(tmp_path / "s.csv", out)
    rows = read_csv(tmp_path / "s.csv")
    assert list(rows[0]) == ["pair_id", "scenario", "success", "anchors", "depth", "path_length"]
    assert len(rows) == 20


def test_scenario_three_sphere_radius(moons_net, moons_data):
    _, val = moons_data
    out = run_scenario(moons_net, 3, val, n_pairs=5, seed=4)
    radius = np.median(np.linalg.norm(val.X, axis=1))
    for s in out:
        base = sphere_point(4, s.pair_id, radius, 2)
        assert np.linalg.norm(base) == pytest.approx(radius, rel=1e-12)
        end = s.path.anchors[-1]
        if moons_net.predict(base) == s.path.region_label:
            assert np.array_equal(end, base)
        else:
            assert moons_net.predict(end) == s.path.region_label
    again = run_scenario(moons_net, 3, val, n_pairs=5, seed=4)
    assert all(np.array_equal(a.path.anchors, b.path.anchors) for a, b in zip(out, again))


def test_scenario_two_partner_differs_before_projection(moons_net, moons_data):
    _, val = moons_data
    for s in run_scenario(moons_net, 2, val, n_pairs=10, seed=1):
        x1, x2 = s.path.anchors[0], s.path.anchors[-1]
        assert moons_net.predict(x1) == moons_net.predict(x2)
        # the partner was not in the region, so it had to be moved
        assert s.path.region_label == moons_net.predict(x1)


def test_bad_scenario():
    net = binary_linear([1.0], 0.0)
    from deepgeom.data import Dataset
    ds = Dataset(np.array([[1.0], [2.0]]), np.array([0, 0]), 2)
    with pytest.raises(InvalidInput):
        run_scenario(net, 4, ds, 1, 0)


def test_convex_probe_k1_and_linear(rng, tmp_path):
    net = binary_linear([1.0, 2.0, -1.0], 0.1)
    X = rng.standard_normal((300, 3))
    rep = convex_probe(net, X, [1, 2, 5, 10], trials=200, seed=0)
    assert rep.probabilities == [1.0, 1.0, 1.0, 1.0]
    assert rep.trials == [200] * 4
    export_probe(tmp_path / "p.csv", rep)
    assert list(read_csv(tmp_path / "p.csv")[0]) == ["k", "probability", "trials"]


def test_convex_probe_skips_small_classes():
    net = binary_linear([1.0], 0.0)
    X = np.array([[1.0], [2.0], [-1.0]])
    rep = convex_probe(net, X, [2, 3], trials=10, seed=0)
    assert rep.probabilities[0] == 1.0
    assert np.isnan(rep.probabilities[1]) and rep.trials[1] == 0


def test_convex_probe_min_trials():
    net = binary_linear([1.0], 0.0)
    with pytest.raises(InvalidInput):
        convex_probe(net, np.ones((3, 1)), [1], trials=5, seed=0, min_trials=10)


@pytest.fixture(scope="module")
def circles_net():
    spec = DatasetSpec("circles", d=2, L=2, n_train=1000, n_val=500, noise=0.0, seed=2)
    tr, va = generate_dataset(spec)
    net = train(tr, Architecture((32, 32), "softplus"), HyperParams(epochs=60), seed=0).model
    return net, va


def test_convex_probe_circles_nonincreasing(circles_net):
    net, va = circles_net
    rep = convex_probe(net, va.X, [1, 2, 3, 5, 10], trials=500, seed=0)
    p, se = np.array(rep.probabilities), np.array(rep.stderr)
    assert p[0] == 1.0
    assert np.all(np.diff(p) <= 2 * np.hypot(se[1:], se[:-1]) + 1e-12)
