"""Synthetic datasets and the ``d,L,n`` CSV file format.

A dataset file starts with a header line ``d,L,n`` followed by ``n`` rows
``label,x_1,...,x_d``. Floats are written in shortest round-trip form so a
write/read cycle is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DatasetError
from .seeding import rng_for

KINDS = ("blobs", "circles", "moons", "spirals", "grid-image", "csv-file")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DatasetError(f"inconsistent shapes X{X.shape} y{y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def typical_norm(self) -> float:
        """Median Euclidean norm of the points."""
        return float(np.median(np.linalg.norm(self.X, axis=1)))

    def diameter(self) -> float:
        return float(pdist(self.X).max()) if len(self) > 1 else 0.0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "moons"
    d: int = 2
    L: int = 2
    n_train: int = 1000
    n_val: int = 500
    noise: float = 0.1
    seed: int = 0
    train_path: str = ""
    val_path: str = ""

    @property
    def id(self) -> str:
        if self.kind == "csv-file":
            return f"csv-file:{self.train_path}"
        return f"{self.kind}-d{self.d}-L{self.L}-n{self.n_train}+{self.n_val}-noise{self.noise}-seed{self.seed}"


def _format_float(v: float) -> str:
    return repr(float(v))


def dumps_dataset(ds: Dataset) -> str:
    lines = [f"{ds.dim},{ds.num_classes},{len(ds)}"]
    for label, row in zip(ds.y, ds.X):
        lines.append(",".join([str(int(label))] + [_format_float(v) for v in row]))
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8", newline="\n")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    try:
        d, L, n = (int(t) for t in lines[0].split(","))
    except ValueError as exc:
        raise DatasetError(f"{path}: header must be 'd,L,n', got {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != n:
        raise DatasetError(f"{path}: header declares {n} rows but file has {len(rows)}")
    y = np.empty(n, dtype=int)
    X = np.empty((n, d))
    for k, row in enumerate(rows):
        fields = row.split(",")
        if len(fields) != d + 1:
            raise DatasetError(f"{path}: row {k + 1} has {len(fields) - 1} features, expected {d}")
        y[k] = int(fields[0])
        X[k] = [float(f) for f in fields[1:]]
    if n and (y.min() < 0 or y.max() >= L):
        raise DatasetError(f"{path}: labels outside 0..{L - 1}")
    return Dataset(X, y, L)


def embedding_frame(spec: DatasetSpec) -> np.ndarray:
    """Orthonormal ``(d, 2)`` frame carrying planar datasets into ``R^d``."""
    if spec.d == 2:
        return np.eye(2)
    frame, _ = np.linalg.qr(rng_for(spec.seed, "embed").standard_normal((spec.d, 2)))
    return frame


def _embed(points2, frame, noise, rng):
    """Planar points mapped through ``frame`` plus isotropic noise in every coordinate."""
    d = frame.shape[0]
    return points2 @ frame.T + noise * rng.standard_normal((points2.shape[0], d))


def _moons(labels, spec, rng):
    t = rng.uniform(0.0, np.pi, size=labels.shape[0])
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    pts = np.where(labels[:, None] == 0, upper, lower) - np.array([0.5, 0.25])
    return pts


def _spirals(labels, spec, rng):
    t = rng.uniform(0.25, 1.0, size=labels.shape[0])
    angle = 3.0 * np.pi * t + 2.0 * np.pi * labels / spec.L
    return 2.0 * t[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])


def _blobs(labels, spec, rng, centre_rng):
    """Gaussian blobs around centres evenly spaced on a radius-3 circle in a random plane."""
    angle = 2.0 * np.pi * np.arange(spec.L) / spec.L
    planar = 3.0 * np.column_stack([np.cos(angle), np.sin(angle)])
    if spec.d == 1:
        centres = planar[:, :1]
    else:
        frame, _ = np.linalg.qr(centre_rng.standard_normal((spec.d, 2)))
        centres = planar @ frame.T
    return centres[labels] + spec.noise * rng.standard_normal((labels.shape[0], spec.d))


def _circles(labels, spec, rng):
    """Class 0: shell with radius in [1.8, 2.6]; class 1: ball of radius 1."""
    n, d = labels.shape[0], spec.d
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    inner = rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
    outer = rng.uniform(1.8, 2.6, size=n)
    radius = np.where(labels == 0, outer, inner)
    return radius[:, None] * u + spec.noise * rng.standard_normal((n, d))


def _grid_images(labels, spec, rng):
    side = int(round(np.sqrt(spec.d)))
    if side * side != spec.d:
        raise DatasetError(f"grid-image needs a square dimension, got d={spec.d}")
    coords = np.linspace(0.0, 1.0, side)
    gx, gy = np.meshgrid(coords, coords, indexing="xy")
    theta = np.pi * labels / spec.L
    phase = rng.uniform(0.0, 2.0 * np.pi, size=labels.shape[0])
    arg = 2.0 * np.pi * 1.5 * (np.cos(theta)[:, None, None] * gx + np.sin(theta)[:, None, None] * gy)
    imgs = np.cos(arg + phase[:, None, None]).reshape(labels.shape[0], spec.d)
    return imgs + spec.noise * rng.standard_normal(imgs.shape)


def _generate_points(labels, spec, rng, centre_rng):
    if spec.kind == "blobs":
        return _blobs(labels, spec, rng, centre_rng)
    if spec.kind == "circles":
        return _circles(labels, spec, rng)
    if spec.kind == "grid-image":
        return _grid_images(labels, spec, rng)
    return {"moons": _moons, "spirals": _spirals}[spec.kind](labels, spec, rng)


def generate_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Return ``(train, validation)`` for a synthetic spec, or read them for ``csv-file``."""
    if spec.kind not in KINDS:
        raise DatasetError(f"unknown dataset kind {spec.kind!r}; expected one of {KINDS}")
    if spec.kind == "csv-file":
        train = read_dataset(spec.train_path)
        val = read_dataset(spec.val_path) if spec.val_path else Dataset(np.empty((0, train.dim)), [], train.num_classes)
        return train, val
    if spec.kind in ("moons", "circles") and spec.L != 2:
        raise DatasetError(f"{spec.kind} is a two-class dataset")
    if spec.kind in ("moons", "spirals") and spec.d < 2:
        raise DatasetError(f"{spec.kind} needs d >= 2")

    out = []
    for split, n in ((0, spec.n_train), (1, spec.n_val)):
        labels = np.arange(n) % spec.L
        rng = rng_for(spec.seed, "dataset", split)
        labels = labels[rng.permutation(n)]
        pts = _generate_points(labels, spec, rng, rng_for(spec.seed, "dataset", 99))
        if spec.kind in ("moons", "spirals"):
            pts = _embed(pts, embedding_frame(spec), spec.noise, rng)
        out.append(Dataset(pts, labels, spec.L))
    return out[0], out[1]
