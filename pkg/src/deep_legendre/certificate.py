"""A-posteriori error certificate for conjugate approximations.

For ``x ~ mu`` the squared implicit residual
``(g(grad f(x)) + f(x) - <x, grad f(x)>)^2`` equals ``(g - f*)^2`` at
``grad f(x)``, so its sample mean is an unbiased estimate of
``||g - f*||^2`` in ``L^2`` of the push-forward of ``mu``, and it needs no
access to ``f*``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from statistics import NormalDist
from typing import Callable, Optional

import numpy as np

from .functions import ConvexFunction, Sampler, sample_primal
from .validation import evaluate

__all__ = ["ErrorCertificate", "z_value", "implicit_residuals", "certify", "certify_points", "push_forward_sample"]

_Z = {0.9: 1.6448536269514722, 0.95: 1.959963984540054, 0.99: 2.5758293035489004}


def z_value(level: float) -> float:
    """Two-sided standard normal quantile for a confidence level."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return _Z.get(level) or NormalDist().inv_cdf(0.5 + level / 2)


@dataclass
class ErrorCertificate:
    mean_sq_error: float
    sample_variance: float
    n: int
    ci_lo: float
    ci_hi: float
    level: float = 0.95
    seed: Optional[int] = None

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mean_sq_error)

    @property
    def confidence_interval(self) -> tuple[float, float]:
        return self.ci_lo, self.ci_hi

    @property
    def standard_error(self) -> float:
        return math.sqrt(self.sample_variance / self.n)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["variance"] = out.pop("sample_variance")
        out["rmse"] = self.rmse
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorCertificate":
        return cls(d["mean_sq_error"], d["variance"], d["n"], d["ci_lo"], d["ci_hi"], d["level"], d.get("seed"))


def implicit_residuals(g: Callable, f: ConvexFunction, X) -> np.ndarray:
    """``g(grad f(x)) + f(x) - <x, grad f(x)>`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = f.gradient(X)
    return evaluate(g, G) + f.value(X) - np.einsum("ij,ij->i", X, G)


def certify_points(g: Callable, f: ConvexFunction, X, level: float = 0.95, seed=None) -> ErrorCertificate:
    """Certificate on a fixed set of primal points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for a variance")
    r = implicit_residuals(g, f, X)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residual")
    z = r * r
    mean = math.fsum(z) / n
    var = math.fsum((z - mean) ** 2) / (n - 1)
    half = z_value(level) * math.sqrt(var / n)
    return ErrorCertificate(mean, var, n, mean - half, mean + half, level, seed)


def certify(g: Callable, f: ConvexFunction, sampler: Sampler, n: int, level: float = 0.95) -> ErrorCertificate:
    """Monte-Carlo estimate of ``||g - f*||^2`` with a CLT confidence interval.

    ``g`` is any callable on dual points (a closure, a NetworkModel, or a
    fitted estimator with ``predict``).
    """
    if n < 2:
        raise ValueError("need n >= 2 for a variance")
    X = _draw(f, sampler, n)
    return certify_points(g, f, X, level, seed=getattr(sampler, "seed", None))


def _draw(f, sampler, n):
    if isinstance(sampler, Sampler):
        return sample_primal(f, sampler, n)
    X = sampler.draw(n)
    if not np.all(f.domain.contains(X)):
        raise ValueError("sampler emitted points outside the domain")
    return X


def push_forward_sample(f: ConvexFunction, sampler, n: int) -> np.ndarray:
    """Gradient images ``grad f(x_i)`` of ``n`` sampled primal points."""
    return f.gradient(_draw(f, sampler, n))
