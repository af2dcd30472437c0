"""Connectivity of classification regions.

``find_path`` builds a piecewise-linear path between two points of the same
region by recursive midpoint projection: if the straight segment leaves the
region, the midpoint is pulled back into it with a targeted minimal
perturbation and both halves are handled recursively.

Segment validation samples ``N + 1`` equispaced points (endpoints included)
with ``N = samples_per_segment * 2**m``, the smallest such value with
``N >= length / delta``. The grids are nested, so raising the sampling density
can only turn a valid verdict into an invalid one, never the reverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import MAX_ITER, OVERSHOOT, targeted_projection, tighten
from .data import Dataset
from .errors import InvalidInput, InvalidQuery
from .reports import write_csv
from .seeding import rng_for, unit_vectors

DEPTH_CAP = 20
SAMPLES_PER_SEGMENT = 16
MAX_SEGMENTS = 20000
ANCHOR_MARGIN = 0.05


@dataclass
class Path:
    anchors: np.ndarray
    region_label: int
    valid: bool
    depth_used: int
    reason: str = ""

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.anchors, axis=0), axis=1)))


def segment_grid_size(length: float, samples_per_segment: int, delta: float | None) -> int:
    n = samples_per_segment
    if delta and length > 0:
        while n < length / delta:
            n *= 2
    return n


def segment_samples(a, b, samples_per_segment: int, delta: float | None = None) -> np.ndarray:
    n = segment_grid_size(float(np.linalg.norm(b - a)), samples_per_segment, delta)
    t = np.arange(n + 1) / n
    return a + t[:, None] * (b - a)


def _first_outside(model, pts, label):
    bad = np.flatnonzero(model.predict(pts) != label)
    return None if bad.size == 0 else pts[bad[0]]


def validate_path(model, anchors, region_label: int, samples_per_segment: int = SAMPLES_PER_SEGMENT,
                  delta: float | None = None):
    """Check every sample of every segment. Returns ``(valid, first_failing_point)``."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if anchors.shape[0] == 1:
        bad = _first_outside(model, anchors, region_label)
        return bad is None, bad
    for a, b in zip(anchors, anchors[1:]):
        bad = _first_outside(model, segment_samples(a, b, samples_per_segment, delta), region_label)
        if bad is not None:
            return False, bad
    return True, None


class _PathBuilder:
    def __init__(self, model, label, depth_cap, samples, delta, overshoot, max_iter, max_segments):
        self.model = model
        self.label = label
        self.depth_cap = depth_cap
        self.samples = samples
        self.delta = delta
        self.overshoot = overshoot
        self.max_iter = max_iter
        self.budget = max_segments
        self.reason = ""

    def _pull_into_region(self, p, span):
        if int(self.model.predict(p)) == self.label:
            return p
        res = targeted_projection(self.model, p, self.label, self.overshoot, self.max_iter)
        if not res.succeeded:
            return None
        tight = tighten(self.model, p, res.r, self.label)
        tn = float(np.linalg.norm(tight))
        if tn == 0.0:
            return p + res.r
        # anchors right on the boundary make the next chords sag out again, so
        # keep a margin that scales with the segment, shrinking it if the region is thin
        margin = max(self.overshoot * tn, ANCHOR_MARGIN * span)
        for _ in range(30):
            anchor = p + tight * (1.0 + margin / tn)
            if int(self.model.predict(anchor)) == self.label:
                return anchor
            margin *= 0.5
        return p + res.r

    def _midpoint(self, a, b):
        span = float(np.linalg.norm(b - a))
        m = self._pull_into_region(0.5 * (a + b), span)
        if m is None:
            # one bisection toward the first endpoint before giving up on the branch
            m = self._pull_into_region(0.5 * (0.5 * (a + b) + a), 0.5 * span)
        return m

    def build(self, a, b, depth):
        self.budget -= 1
        if self.budget < 0:
            self.reason = self.reason or "segment budget exhausted"
            return [a, b], False, depth
        pts = segment_samples(a, b, self.samples, self.delta)
        if _first_outside(self.model, pts, self.label) is None:
            return [a, b], True, depth
        if depth >= self.depth_cap:
            self.reason = self.reason or "depth cap reached: not connected at this resolution"
            return [a, b], False, depth
        m = self._midpoint(a, b)
        if m is None:
            self.reason = self.reason or "midpoint projection failed"
            return [a, b], False, depth
        left, ok_l, d_l = self.build(a, m, depth + 1)
        right, ok_r, d_r = self.build(m, b, depth + 1)
        return left + right[1:], ok_l and ok_r, max(d_l, d_r)


def find_path(model, x1, x2, depth_cap: int = DEPTH_CAP, samples_per_segment: int = SAMPLES_PER_SEGMENT,
              delta: float | None = None, overshoot: float = OVERSHOOT, max_iter: int = MAX_ITER,
              max_segments: int = MAX_SEGMENTS) -> Path:
    """Piecewise-linear in-region path from ``x1`` to ``x2``.

    Raises :class:`InvalidQuery` when the endpoints are classified differently.
    A path that hits ``depth_cap`` is returned with ``valid=False``; that is not
    a proof of disconnection.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    label = int(model.predict(x1))
    if int(model.predict(x2)) != label:
        raise InvalidQuery("endpoints lie in different classification regions")
    builder = _PathBuilder(model, label, depth_cap, samples_per_segment, delta, overshoot, max_iter, max_segments)
    anchors, valid, depth = builder.build(x1, x2, 0)
    anchors = np.array(anchors)
    anchors[0], anchors[-1] = x1, x2
    return Path(anchors, label, bool(valid), int(depth), "" if valid else builder.reason)


@dataclass
class PairSummary:
    pair_id: int
    scenario: int
    success: bool
    anchors: int
    depth: int
    path_length: float
    reason: str = ""
    path: Path | None = None


def _pick_same_label(rng, labels, i):
    same = np.flatnonzero(labels == labels[i])
    same = same[same != i]
    return None if same.size == 0 else int(rng.choice(same))


def sphere_point(seed: int, pair_id: int, radius: float, d: int) -> np.ndarray:
    """Scenario 3 draw: uniform on the sphere of the given radius."""
    return radius * unit_vectors(rng_for(seed, "sphere", pair_id), 1, d)[0]


def run_scenario(model, scenario: int, validation: Dataset, n_pairs: int, seed: int,
                 depth_cap: int = DEPTH_CAP, samples_per_segment: int = SAMPLES_PER_SEGMENT,
                 delta: float | None = None):
    """Path experiments between validation points (1), adversarially relabelled
    validation points (2), or relabelled random points on the typical-norm sphere (3).

    ``delta`` defaults to 1% of the validation-set diameter.
    """
    if scenario not in (1, 2, 3):
        raise InvalidInput("scenario must be 1, 2 or 3")
    X = validation.X
    labels = model.predict(X)
    if delta is None:
        delta = 0.01 * validation.diameter()
    radius = validation.typical_norm()
    rng = rng_for(seed, "pairs", scenario)
    out = []
    for pid in range(n_pairs):
        i = int(rng.integers(len(X)))
        x1, label = X[i], int(labels[i])
        reason = ""
        if scenario == 1:
            j = _pick_same_label(rng, labels, i)
            x2 = None if j is None else X[j]
            reason = "no other point with this label" if j is None else ""
        else:
            if scenario == 2:
                others = np.flatnonzero(labels != label)
                base = X[int(rng.choice(others))] if others.size else None
                reason = "" if others.size else "no differently labelled point"
            else:
                base = sphere_point(seed, pid, radius, X.shape[1])
            x2 = base
            if base is not None and int(model.predict(base)) != label:
                res = targeted_projection(model, base, label)
                if res.succeeded:
                    x2 = base + res.r
                else:
                    x2, reason = None, "targeted projection did not converge"
        if x2 is None:
            out.append(PairSummary(pid, scenario, False, 0, 0, 0.0, reason))
            continue
        path = find_path(model, x1, x2, depth_cap, samples_per_segment, delta)
        out.append(PairSummary(pid, scenario, path.valid, len(path.anchors), path.depth_used, path.length,
                               path.reason, path))
    return out


def export_scenario(path, summaries):
    rows = [(s.pair_id, s.scenario, s.success, s.anchors, s.depth, s.path_length) for s in summaries]
    return write_csv(path, ["pair_id", "scenario", "success", "anchors", "depth", "path_length"], rows)


@dataclass
class ConvexProbeReport:
    k_values: list
    probabilities: list
    trials: list
    stderr: list = field(default_factory=list)


def convex_probe(model, X, k_values, trials: int, seed: int, min_trials: int = 1) -> ConvexProbeReport:
    """Probability that a Dirichlet(1,...,1) combination of ``k`` same-region points stays in the region."""
    if trials < min_trials:
        raise InvalidInput(f"need at least {min_trials} trials per k")
    X = np.asarray(X, dtype=float)
    labels = model.predict(X)
    groups = {int(c): X[labels == c] for c in np.unique(labels)}
    probs, counts, errs = [], [], []
    for k in k_values:
        eligible = sorted(c for c, pts in groups.items() if len(pts) >= k)
        if not eligible:
            probs.append(float("nan"))
            counts.append(0)
            errs.append(float("nan"))
            continue
        rng = rng_for(seed, "convex", k)
        points, classes = [], []
        for _ in range(trials):
            c = eligible[int(rng.integers(len(eligible)))]
            pts = groups[c]
            idx = rng.choice(len(pts), size=k, replace=False)
            w = rng.dirichlet(np.ones(k))
            points.append(w @ pts[idx])
            classes.append(c)
        hits = model.predict(np.array(points)) == np.array(classes)
        p = float(np.mean(hits))
        probs.append(p)
        counts.append(trials)
        errs.append(math.sqrt(p * (1 - p) / trials))
    return ConvexProbeReport(list(k_values), probs, counts, errs)


def export_probe(path, report: ConvexProbeReport):
    rows = zip(report.k_values, report.probabilities, report.trials)
    return write_csv(path, ["k", "probability", "trials"], rows)
