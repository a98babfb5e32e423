"""Entropic (softmax) smoothing of the conjugate via quasi-Monte-Carlo integration.

``f*_eps(y) = eps * log( integral over box of exp((<x, y> - f(x)) / eps) dx )``
estimated with the first ``M`` points of a Halton sequence (or pseudo-random
points) mapped into the box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import make_rng
from .functions import ConvexFunction
from .validation import check_points

__all__ = ["EntropicConfig", "low_discrepancy_points", "softmax_conjugate", "EntropicConjugate"]


@dataclass
class EntropicConfig:
    epsilon: float
    n_samples: int = 65536
    sequence: str = "low-discrepancy"
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sequence not in ("low-discrepancy", "pseudo-random"):
            raise ValueError("sequence must be 'low-discrepancy' or 'pseudo-random'")


def low_discrepancy_points(dim: int, n: int) -> np.ndarray:
    """Unscrambled Halton points in ``(0, 1)^dim``, skipping the all-zero first node."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    engine = qmc.Halton(d=dim, scramble=False)
    engine.fast_forward(1)
    return engine.random(n)


def _box_points(lo, hi, cfg: EntropicConfig) -> np.ndarray:
    dim = lo.size
    if cfg.sequence == "low-discrepancy":
        U = low_discrepancy_points(dim, cfg.n_samples)
    else:
        U = make_rng(cfg.seed, "entropic").random((cfg.n_samples, dim))
    return lo + (hi - lo) * U


def _box(f: ConvexFunction, box):
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (f.dim,)).copy()
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (f.dim,)).copy()
    if not np.all(lo < hi):
        raise ValueError("box requires lo < hi")
    return lo, hi


def _smoothed(X, fx, Y, eps, log_vol, chunk=256):
    M = X.shape[0]
    out = np.empty(Y.shape[0])
    for start in range(0, Y.shape[0], chunk):
        E = (Y[start: start + chunk] @ X.T - fx) / eps
        out[start: start + chunk] = eps * (logsumexp(E, axis=1) - np.log(M) + log_vol)
    return out


def softmax_conjugate(f: ConvexFunction, box, y, cfg: EntropicConfig):
    """Entropic conjugate at ``y`` (a point or an ``(n, d)`` batch)."""
    lo, hi = _box(f, box)
    X = _box_points(lo, hi, cfg)
    if not np.all(f.domain.contains(X)):
        raise ValueError("integration box is not inside the function domain")
    fx = f.value(X)
    if not np.all(np.isfinite(fx)):
        raise ValueError("non-finite function value at an integration point")
    Y = np.asarray(y, dtype=float)
    single = Y.ndim == 1
    Y = np.atleast_2d(Y)
    out = _smoothed(X, fx, Y, cfg.epsilon, float(np.sum(np.log(hi - lo))))
    return float(out[0]) if single else out


class EntropicConjugate(RegressorMixin, BaseEstimator):
    """Softmax-smoothed conjugate of ``function`` integrated over ``[lo, hi]``.

    ``fit`` draws and tabulates the integration nodes; ``predict`` evaluates
    ``f*_eps`` at each row of ``X``.
    """

    def __init__(self, function=None, lo=0.0, hi=1.0, epsilon=0.01, n_samples=65536,
                 sequence="low-discrepancy", seed=0):
        self.function = function
        self.lo = lo
        self.hi = hi
        self.epsilon = epsilon
        self.n_samples = n_samples
        self.sequence = sequence
        self.seed = seed

    def fit(self, X=None, y=None):
        f = self.function
        if f is None:
            raise ValueError("EntropicConjugate needs a function")
        cfg = EntropicConfig(self.epsilon, self.n_samples, self.sequence, self.seed)
        lo, hi = _box(f, (self.lo, self.hi))
        nodes = _box_points(lo, hi, cfg)
        if not np.all(f.domain.contains(nodes)):
            raise ValueError("integration box is not inside the function domain")
        self.nodes_ = nodes
        self.node_values_ = f.value(nodes)
        if not np.all(np.isfinite(self.node_values_)):
            raise ValueError("non-finite function value at an integration point")
        self.log_volume_ = float(np.sum(np.log(hi - lo)))
        self.n_features_in_ = f.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "nodes_")
        X = check_points(X, self.n_features_in_)
        return _smoothed(self.nodes_, self.node_values_, X, self.epsilon, self.log_volume_)
