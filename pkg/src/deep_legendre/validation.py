"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_points(X, dim: int | None = None, name: str = "X") -> np.ndarray:
    """2-D float64 array of finite points, optionally of a fixed width."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X.reshape(1, -1) if dim is None or X.size == dim else X.reshape(-1, 1)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {dim}")
    return X


def check_in_domain(f, X, name: str = "X") -> np.ndarray:
    X = check_points(X, f.dim, name)
    inside = f.domain.contains(X)
    if not np.all(inside):
        raise ValueError(f"{int((~inside).sum())} of {len(X)} points in {name} lie outside the domain of {f.name}")
    return X


def evaluate(g, Y) -> np.ndarray:
    """Values of a conjugate approximation at dual points, shape ``(n,)``.

    Accepts a plain callable, a NetworkModel or a fitted estimator.
    """
    vals = g.predict(Y) if hasattr(g, "predict") else g(Y)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 2 and vals.shape[1] == 1:
        vals = vals[:, 0]
    return vals.reshape(-1)


class PoolSampler:
    """Draws minibatches with replacement from a fixed point set."""

    def __init__(self, points, seed: int = 0):
        from ._rng import make_rng

        self.points = np.asarray(points, dtype=float)
        self.dim = self.points.shape[1]
        self.seed = seed
        self._rng = make_rng(seed, "pool")

    def draw(self, n: int) -> np.ndarray:
        return self.points[self._rng.integers(0, len(self.points), size=n)]
