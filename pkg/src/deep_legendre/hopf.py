"""Hamilton-Jacobi equations through the Hopf formula.

For convex ``H`` and convex coercive ``g`` the viscosity solution of
``u_t + H(grad_x u) = 0``, ``u(x, 0) = g(x)`` is

    u(x, t) = sup_p { <x, p> - g*(p) - t H(p) }.

A Time-DLT network ``F(x, t)`` regresses onto ``<x, p> - g*(p) - t H(p)`` at
triplets ``(x, p, t)`` where ``p`` is the maximiser, so the target is exact.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import make_rng
from .dlt import TrainConfig, TrainReport, _standardize, fit_regression
from .functions import ConvexFunction, Domain, Sampler, make_builtin
from .nn import ArchSpec, NetworkModel, init
from .validation import check_points

__all__ = [
    "HopfProblem",
    "quadratic_problem",
    "exponential_problem",
    "analytic_quadratic_solution",
    "HopfResult",
    "hopf_reference",
    "hopf_reference_batch",
    "TimeBatch",
    "sample_time_pairs",
    "train_time_dlt",
    "hj_metrics",
    "TimeDLT",
]


def _rowsum(fn):
    return lambda P: np.sum(fn(np.atleast_2d(P)), axis=1)


@dataclass
class HopfProblem:
    """Initial condition ``g`` with closed-form ``g*`` and a convex Hamiltonian ``H``.

    Closures act on ``(n, d)`` arrays; ``*_grad`` return ``(n, d)``.
    ``dual_domain`` is where ``g*`` is finite.
    """

    name: str
    g: ConvexFunction
    g_star: Callable
    g_star_grad: Callable
    H: Callable
    H_grad: Callable
    dual_domain: Domain
    a: float = 2.0
    T: float = 2.0

    @property
    def dim(self) -> int:
        return self.g.dim

    def phi(self, P, x, t) -> np.ndarray:
        """``g*(p) + t H(p) - <x, p>``; ``+inf`` outside the dual domain."""
        P = np.atleast_2d(P)
        out = np.full(P.shape[0], np.inf)
        ok = self.dual_domain.contains(P)
        Pk = P[ok]
        out[ok] = self.g_star(Pk) + t * self.H(Pk) - Pk @ np.asarray(x, dtype=float)
        return out

    def target(self, X, P, t) -> np.ndarray:
        """Hopf training target ``<x, p> - g*(p) - t H(p)`` row-wise."""
        X, P = np.atleast_2d(X), np.atleast_2d(P)
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        return np.einsum("ij,ij->i", X, P) - self.g_star(P) - t * self.H(P)

    def check_convexity(self, n_segments: int = 1000, seed: int = 0, tol: float = 1e-10) -> bool:
        """Midpoint convexity of ``g`` on the space box and of ``H`` on a dual box."""
        rng = make_rng(seed, "hopf-convexity")
        d = self.dim
        A, B = rng.uniform(-self.a, self.a, (2, n_segments, d))
        ok = np.all(self.g.value(0.5 * (A + B)) <= 0.5 * (self.g.value(A) + self.g.value(B)) + tol)
        P, Q = self.g.gradient(A), self.g.gradient(B)
        mid = 0.5 * (P + Q)
        return bool(ok and np.all(self.H(mid) <= 0.5 * (self.H(P) + self.H(Q)) + tol))

    def initial_p(self, x) -> np.ndarray:
        """Maximiser at ``t = 0``, which is ``grad g(x)``."""
        return self.g.gradient(np.atleast_2d(x))


def quadratic_problem(dim: int, a: float = 2.0, T: float = 2.0) -> HopfProblem:
    """``g = g* = H = |.|^2 / 2``; solution ``|x|^2 / (2 (1 + t))``."""
    half_sq = _rowsum(lambda P: 0.5 * P * P)
    ident = lambda P: np.atleast_2d(P).copy()
    return HopfProblem("quadratic", make_builtin("quadratic", dim), half_sq, ident, half_sq, ident,
                       Domain.full_space(dim), a, T)


def exponential_problem(dim: int, a: float = 2.0, T: float = 2.0) -> HopfProblem:
    """``g = sum exp(x_i)``, ``H = sum exp(p_i)``, ``g*(p) = sum (p log p - p)`` on ``p > 0``."""
    g = ConvexFunction(
        name="exp-sum",
        dim=dim,
        value_fn=lambda X: np.sum(np.exp(X), axis=1),
        gradient_fn=np.exp,
        domain=Domain.full_space(dim),
        conjugate_fn=lambda P: np.sum(P * np.log(P) - P, axis=1),
        hvp_fn=lambda X, V: np.exp(X) * V,
        separable=True,
    )
    return HopfProblem("exponential", g, _rowsum(lambda P: P * np.log(P) - P), lambda P: np.log(P),
                       _rowsum(np.exp), np.exp, Domain.positive_orthant(dim), a, T)


def analytic_quadratic_solution(x, t):
    """``sum x_i^2 / (2 (1 + t))`` for a point or an ``(n, d)`` batch."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    X = np.asarray(x, dtype=float)
    sq = np.sum(X * X, axis=-1)
    out = sq / (2.0 * (1.0 + t_arr))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class HopfResult:
    value: float
    p: np.ndarray
    converged: bool
    grad_norm: float
    n_iter: int
    start_values: list = field(default_factory=list)


def _descend(prob: HopfProblem, x, t, p, max_iter, tol):
    """Gradient descent on ``phi`` with Armijo backtracking.

    The trial step length is the Barzilai-Borwein estimate from the previous
    iterate, which keeps the method first order while avoiding tiny fixed steps.
    """
    def grad(p):
        return prob.g_star_grad(p[None])[0] + t * prob.H_grad(p[None])[0] - x

    fval = prob.phi(p, x, t)[0]
    gr = grad(p)
    step = 1.0
    p_old = g_old = None
    for it in range(max_iter):
        gn = float(np.linalg.norm(gr))
        if gn <= tol:
            return p, fval, gn, it, True
        if p_old is not None:
            s, yv = p - p_old, gr - g_old
            sy = float(s @ yv)
            step = float(s @ s) / sy if sy > 0 else 1.0
        p_old, g_old = p, gr
        while True:
            cand = p - step * gr
            fc = prob.phi(cand, x, t)[0]
            if fc <= fval - 1e-4 * step * gn * gn:
                break
            step *= 0.5
            if step < 1e-20:
                return p, fval, gn, it, False
        p, fval = cand, fc
        gr = grad(p)
    gn = float(np.linalg.norm(gr))
    return p, fval, gn, max_iter, gn <= tol


def hopf_reference(prob: HopfProblem, x, t: float, max_iter: int = 10000, n_starts: int = 4,
                   tol: float = 1e-8, seed: int = 0, full_output: bool = False):
    """``u(x, t) = -min_p phi(p)`` with ``phi(p) = g*(p) + t H(p) - <x, p>``.

    Runs descent from ``grad g(x)`` and ``n_starts - 1`` random starts and
    keeps the best. Without ``full_output`` a non-converged solve raises; with
    it the best value is returned with ``converged=False``.
    """
    if not 0 <= t <= prob.T:
        raise ValueError(f"t={t} outside [0, {prob.T}]")
    x = np.asarray(x, dtype=float).reshape(prob.dim)
    rng = make_rng(seed, "hopf-starts")
    starts = [prob.initial_p(x)[0]]
    for _ in range(n_starts - 1):
        z = rng.standard_normal(prob.dim)
        if prob.dual_domain.kind == "positive-orthant":
            starts.append(np.exp(z))
        else:
            starts.append(z * (1.0 + np.abs(x)))
    best = None
    values, any_conv = [], False
    for p0 in starts:
        p, fval, gn, it, conv = _descend(prob, x, t, p0, max_iter, tol)
        values.append(-fval)
        any_conv |= conv
        if best is None or (conv, -fval) > (best[4], -best[1]):
            best = (p, fval, gn, it, conv)
    p, fval, gn, it, conv = best
    res = HopfResult(-fval, p, conv, gn, it, values)
    if full_output:
        return res
    if not any_conv:
        raise RuntimeError(f"no start converged at x={x.tolist()}, t={t} (best |grad|={gn:.3g})")
    return res.value


def hopf_reference_batch(prob: HopfProblem, X, t, threads: int = 1, **kw) -> tuple[np.ndarray, np.ndarray]:
    """Reference values and convergence flags for every row of ``X``."""
    X = check_points(X, prob.dim)
    ts = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))

    def one(i):
        r = hopf_reference(prob, X[i], float(ts[i]), full_output=True, **kw)
        return r.value, r.converged

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(one, range(X.shape[0])))
    else:
        out = [one(i) for i in range(X.shape[0])]
    vals = np.array([v for v, _ in out])
    return vals, np.array([c for _, c in out])


class TimeBatch(NamedTuple):
    X: np.ndarray
    P: np.ndarray
    t: np.ndarray
    dropped: int


def sample_time_pairs(prob: HopfProblem, n: int, sampler=None, rng=None, t0_fraction: float = 0.2,
                      inverse=None) -> TimeBatch:
    """Triplets ``(x, p, t)`` with ``p`` the Hopf maximiser at ``(x, t)``.

    ``t`` is uniform on ``[0, T]`` except a fixed ``t0_fraction`` of the batch
    at ``t = 0``. The quadratic problem uses ``p = x / (1 + t)``. Otherwise
    ``inverse(Z)`` with ``Z = [x, t]`` supplies ``p``, or, without it, the
    reference solver does; ``p`` outside the dual domain is dropped.
    """
    if sampler is None:
        sampler = Sampler("uniform-box", prob.dim, 0, lo=-prob.a, hi=prob.a)
    rng = rng if rng is not None else make_rng(0, "time-pairs")
    X = sampler.draw(n)
    t = rng.uniform(0.0, prob.T, n)
    t[: int(round(t0_fraction * n))] = 0.0
    if prob.name == "quadratic" and inverse is None:
        P = X / (1.0 + t)[:, None]
    elif inverse is not None:
        P = np.atleast_2d(inverse(np.column_stack([X, t])))
    else:
        P = np.array([hopf_reference(prob, X[i], t[i], full_output=True).p for i in range(n)])
    keep = prob.dual_domain.contains(P)
    return TimeBatch(X[keep], P[keep], t[keep], int((~keep).sum()))


def _time_pairs_draw(prob, sampler, seed, t0_fraction, inverse):
    rng = make_rng(seed, "time-pairs")

    def draw(n):
        b = sample_time_pairs(prob, n, sampler, rng, t0_fraction, inverse)
        return np.column_stack([b.X, b.t]), prob.target(b.X, b.P, b.t)

    return draw


def train_time_dlt(prob: HopfProblem, spec: ArchSpec, cfg: TrainConfig, sampler=None, inverse=None,
                   model: Optional[NetworkModel] = None, standardize: bool = True,
                   t0_fraction: float = 0.2) -> TrainReport:
    """Fit ``F(x, t)`` to the Hopf target over fresh triplet batches."""
    if spec.input_dim != prob.dim + 1 or spec.output_dim != 1:
        raise ValueError("time model must map R^(d+1) to R")
    if sampler is None:
        sampler = Sampler("uniform-box", prob.dim, cfg.seed, lo=-prob.a, hi=prob.a)
    draw = _time_pairs_draw(prob, sampler, cfg.seed, t0_fraction, inverse)
    if model is None:
        model = init(spec, cfg.seed)
        if standardize:
            pilot = _time_pairs_draw(prob, Sampler("uniform-box", prob.dim, cfg.seed + 1, lo=-prob.a, hi=prob.a),
                                     cfg.seed + 1, t0_fraction, inverse)
            _standardize(model, *pilot(4096))
    return fit_regression(model, draw, cfg, cfg.resolved_batch_size(prob.dim))


def _values(model, Z) -> np.ndarray:
    out = model.predict(Z) if hasattr(model, "predict") else model(Z)
    return np.asarray(out, dtype=float).reshape(-1)


def _space_grad(model, Z, d, h=1e-4) -> np.ndarray:
    if hasattr(model, "input_gradient"):
        return np.atleast_2d(model.input_gradient(Z))[:, :d]
    G = np.empty((Z.shape[0], d))
    for i in range(d):
        Zp, Zm = Z.copy(), Z.copy()
        Zp[:, i] += h
        Zm[:, i] -= h
        G[:, i] = (_values(model, Zp) - _values(model, Zm)) / (2 * h)
    return G


def hj_metrics(model, prob: HopfProblem, X, t_slices, fd_step: float = 1e-4, threads: int = 1,
               reference: Optional[Callable] = None) -> dict:
    """``l2_error`` and ``pde_residual`` per time slice, plus ``ic_error``.

    ``model`` is anything callable on ``(n, d + 1)`` inputs; an
    ``input_gradient`` method gives exact space gradients. The reference is
    the analytic solution for the quadratic problem and ``hopf_reference``
    otherwise; more than 5% non-converged reference solves sets ``flagged``.
    """
    X = check_points(X, prob.dim)
    n, d = X.shape
    l2, pde, flagged = {}, {}, False
    for t in t_slices:
        t = float(t)
        Z = np.column_stack([X, np.full(n, t)])
        u = _values(model, Z)
        if reference is not None:
            ref = np.asarray(reference(X, t), dtype=float)
        elif prob.name == "quadratic":
            ref = analytic_quadratic_solution(X, t)
        else:
            ref, conv = hopf_reference_batch(prob, X, t, threads=threads)
            flagged |= bool(np.mean(~conv) > 0.05)
        l2[t] = math.sqrt(float(np.mean((u - ref) ** 2)))
        Zp, Zm = Z.copy(), Z.copy()
        Zp[:, d] += fd_step
        Zm[:, d] -= fd_step
        u_t = (_values(model, Zp) - _values(model, Zm)) / (2.0 * fd_step)
        res = u_t + prob.H(_space_grad(model, Z, d))
        pde[t] = math.sqrt(float(np.mean(res * res)))
    u0 = _values(model, np.column_stack([X, np.zeros(n)]))
    ic = math.sqrt(float(np.mean((u0 - prob.g.value(X)) ** 2)))
    return {"l2_error": l2, "pde_residual": pde, "ic_error": ic, "flagged": flagged}


class TimeDLT(RegressorMixin, BaseEstimator):
    """Time-parameterised DLT: ``predict([x, t]) ≈ u(x, t)``."""

    def __init__(self, problem=None, architecture="resnet", hidden_width=64, batch_size=None,
                 max_steps=20000, tol=1e-12, learning_rate=1e-3, lr_decay_every=None, log_every=100,
                 t0_fraction=0.2, inverse=None, standardize=True, random_state=0):
        self.problem = problem
        self.architecture = architecture
        self.hidden_width = hidden_width
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.tol = tol
        self.learning_rate = learning_rate
        self.lr_decay_every = lr_decay_every
        self.log_every = log_every
        self.t0_fraction = t0_fraction
        self.inverse = inverse
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X=None, y=None):
        """Train on freshly sampled triplets; ``X`` and ``y`` are ignored."""
        prob = self.problem
        if prob is None:
            raise ValueError("TimeDLT needs a HopfProblem")
        cfg = TrainConfig(self.batch_size, self.max_steps, self.tol, self.learning_rate, self.random_state,
                          "implicit", self.log_every, self.lr_decay_every)
        spec = ArchSpec(self.architecture, prob.dim + 1, self.hidden_width, 1)
        start = time.perf_counter()
        self.report_ = train_time_dlt(prob, spec, cfg, inverse=self.inverse, standardize=self.standardize,
                                      t0_fraction=self.t0_fraction)
        self.fit_seconds_ = time.perf_counter() - start
        self.model_ = self.report_.model
        self.n_features_in_ = prob.dim + 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_(check_points(X, self.n_features_in_))

    def metrics(self, X, t_slices, **kw) -> dict:
        check_is_fitted(self, "model_")
        return hj_metrics(self.model_, self.problem, X, t_slices, **kw)
