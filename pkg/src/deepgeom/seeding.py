"""Root-seed splitting.

Every random draw in the toolkit comes from ``rng_for(root, purpose, *counters)``,
which seeds a PCG64 generator with the entropy tuple
``(root, PURPOSES[purpose], *counters)``. Purposes get fixed integer ids so that
adding a purpose never shifts the streams of existing ones; per-sample streams
append the sample index as a counter, which keeps results independent of
evaluation order.
"""
import numpy as np

PURPOSES = {
    "init": 1,
    "shuffle": 2,
    "dataset": 3,
    "split": 4,
    "pairs": 5,
    "sphere": 6,
    "probe": 7,
    "convex": 8,
    "basis": 9,
    "rho": 10,
    "noise": 11,
    "table1": 12,
    "detect": 13,
    "bootstrap": 14,
    "lanczos": 15,
    "embed": 16,
    "select": 17,
}


def rng_for(root: int, purpose: str, *counters: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unregistered random stream {purpose!r}")
    entropy = [int(root), PURPOSES[purpose], *(int(c) for c in counters)]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and counters must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def unit_vectors(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` draws from the uniform distribution on the unit sphere in ``R^d``."""
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
