"""Differentiable convex test functions, their domains and primal samplers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ._rng import make_rng

__all__ = [
    "Domain",
    "ConvexFunction",
    "Sampler",
    "BUILTIN_NAMES",
    "make_builtin",
    "make_spd_quadratic",
    "sample_primal",
    "default_sampler",
    "function_from_spec",
]

BUILTIN_NAMES = (
    "quadratic",
    "neg-log",
    "neg-entropy",
    "quadratic-over-linear",
    "quadratic-spd",
    "exp-minus-linear",
    "coupled-softplus",
    "icnn-target",
)


def _as_batch(X, dim: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X, single


@dataclass
class Domain:
    """Convex set used for membership tests.

    ``box`` is the open box ``lo < x < hi``; ``half-space`` is
    ``<normal, x> > offset``. All tests are strict and carry no tolerance.
    """

    kind: str
    dim: int
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None
    normal: Optional[tuple] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "positive-orthant", "half-space", "full-space"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("domain dimension must be positive")
        if self.kind == "box":
            lo = np.asarray(self.lo, dtype=float).reshape(-1)
            hi = np.asarray(self.hi, dtype=float).reshape(-1)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ValueError("box bounds must match the dimension")
            if not np.all(lo < hi):
                raise ValueError("box requires lo < hi in every coordinate")
            self.lo, self.hi = tuple(lo.tolist()), tuple(hi.tolist())
        if self.kind == "half-space":
            normal = np.asarray(self.normal, dtype=float).reshape(-1)
            if normal.shape != (self.dim,):
                raise ValueError("half-space normal must match the dimension")
            self.normal = tuple(normal.tolist())
            self.offset = float(self.offset)

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def positive_orthant(cls, dim: int) -> "Domain":
        return cls("positive-orthant", dim)

    @classmethod
    def half_space(cls, normal, offset: float = 0.0) -> "Domain":
        normal = np.atleast_1d(np.asarray(normal, dtype=float))
        return cls("half-space", normal.size, normal=normal, offset=offset)

    @classmethod
    def full_space(cls, dim: int) -> "Domain":
        return cls("full-space", dim)

    def contains(self, X) -> np.ndarray | bool:
        X, single = _as_batch(X, self.dim)
        if self.kind == "full-space":
            inside = np.all(np.isfinite(X), axis=1)
        elif self.kind == "positive-orthant":
            inside = np.all(X > 0, axis=1)
        elif self.kind == "box":
            inside = np.all((X > np.asarray(self.lo)) & (X < np.asarray(self.hi)), axis=1)
        else:
            inside = X @ np.asarray(self.normal) > self.offset
        return bool(inside[0]) if single else inside

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "dim": self.dim}
        if self.kind == "box":
            out.update(lo=list(self.lo), hi=list(self.hi))
        if self.kind == "half-space":
            out.update(normal=list(self.normal), offset=self.offset)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(**d)


@dataclass
class ConvexFunction:
    """A convex function given by vectorised value/gradient closures.

    Closures take an ``(n, dim)`` array; the public methods also accept a
    single point and return a scalar / vector in that case.
    """

    name: str
    dim: int
    value_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    conjugate_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dual_region_hint: Optional[Domain] = None
    hvp_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    # d f / d x_i depends on x_i only and is nondecreasing in it
    separable: bool = False
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def __call__(self, X):
        return self.value(X)

    def value(self, X):
        X, single = _as_batch(X, self.dim)
        out = np.asarray(self.value_fn(X), dtype=float)
        return float(out[0]) if single else out

    def gradient(self, X):
        X, single = _as_batch(X, self.dim)
        out = np.asarray(self.gradient_fn(X), dtype=float)
        return out[0] if single else out

    @property
    def has_conjugate(self) -> bool:
        return self.conjugate_fn is not None

    def conjugate(self, Y):
        if self.conjugate_fn is None:
            raise ValueError(f"{self.name} has no closed-form conjugate")
        Y, single = _as_batch(Y, self.dim)
        out = np.asarray(self.conjugate_fn(Y), dtype=float)
        return float(out[0]) if single else out

    def hessian_vector(self, X, V):
        """Hessian-vector products, row by row.

        Falls back to central differences of the gradient (step 1e-6 relative).
        """
        X, single = _as_batch(X, self.dim)
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self.hvp_fn is not None:
            out = self.hvp_fn(X, V)
        else:
            scale = np.maximum(1.0, np.linalg.norm(X, axis=1, keepdims=True))
            vnorm = np.linalg.norm(V, axis=1, keepdims=True)
            h = 1e-6 * scale / np.where(vnorm > 0, vnorm, 1.0)
            out = (self.gradient_fn(X + h * V) - self.gradient_fn(X - h * V)) / (2 * h)
        return out[0] if single else out

    def residual(self, X, conj_values):
        """``conj_values + f(x) - <x, grad f(x)>``: zero iff the conjugate is exact at grad f(x)."""
        X, _ = _as_batch(X, self.dim)
        G = self.gradient_fn(X)
        return np.asarray(conj_values) + self.value_fn(X) - np.einsum("ij,ij->i", X, G)

    def spec(self) -> dict:
        params = {k: v for k, v in self.params.items() if k != "model"}
        return {"name": self.name, "dim": self.dim, "params": params, "seed": self.seed}


def _softplus(z):
    return np.logaddexp(0.0, z)


def make_spd_quadratic(dim: int, condition_number: float = 100.0, seed: int = 0) -> ConvexFunction:
    """``0.5 x^T Q x`` with a random SPD ``Q`` of given condition number and ``||Q||_2 = 1``."""
    if condition_number < 1:
        raise ValueError("condition_number must be >= 1")
    rng = make_rng(seed, "spd-quadratic")
    R, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = np.logspace(0.0, np.log10(condition_number), dim) / condition_number
    Q = R.T @ np.diag(lam) @ R
    Q = 0.5 * (Q + Q.T)
    f = _spd_from_matrix(Q)
    f.params = {"condition_number": float(condition_number)}
    f.seed = seed
    return f


def _spd_from_matrix(Q) -> ConvexFunction:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(Q, Q.T):
        raise ValueError("matrix must be symmetric")
    factor = cho_factor(Q)  # raises LinAlgError when not positive definite
    dim = Q.shape[0]

    def conj(Y):
        return 0.5 * np.einsum("ij,ij->i", Y, cho_solve(factor, Y.T).T)

    return ConvexFunction(
        name="quadratic-spd",
        dim=dim,
        value_fn=lambda X: 0.5 * np.einsum("ij,ij->i", X, X @ Q),
        gradient_fn=lambda X: X @ Q,
        domain=Domain.full_space(dim),
        conjugate_fn=conj,
        dual_region_hint=Domain.full_space(dim),
        hvp_fn=lambda X, V: V @ Q,
        params={"matrix": Q.tolist()},
    )


def make_builtin(name: str, dim: int, params: Optional[dict] = None, seed: int = 0) -> ConvexFunction:
    """Build a catalog function.

    ``neg-log`` and ``neg-entropy`` accept ``params={"box": [lo, hi]}`` to
    restrict the domain to an open box. ``quadratic-spd`` needs either
    ``matrix`` or ``condition_number`` (generated from ``seed``).
    ``icnn-target`` needs ``model`` (a fitted NetworkModel) or ``checkpoint``.
    """
    params = dict(params or {})
    if name not in BUILTIN_NAMES:
        raise ValueError(f"unknown function {name!r}; choose from {BUILTIN_NAMES}")
    if dim < 1:
        raise ValueError("dim must be >= 1")

    if name == "quadratic":
        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: 0.5 * np.sum(X * X, axis=1),
            gradient_fn=lambda X: X.copy(),
            domain=Domain.full_space(dim),
            conjugate_fn=lambda Y: 0.5 * np.sum(Y * Y, axis=1),
            dual_region_hint=Domain.full_space(dim),
            hvp_fn=lambda X, V: V.copy(),
            separable=True,
        )
    elif name == "neg-log":
        domain, hint = Domain.positive_orthant(dim), Domain.box([-10.0] * dim, [-0.1] * dim)
        if "box" in params:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (dim,)) for b in params["box"])
            domain, hint = Domain.box(lo, hi), Domain.box(-1.0 / lo, -1.0 / hi)
            params["box"] = [lo.tolist(), hi.tolist()]
        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: -np.sum(np.log(X), axis=1),
            gradient_fn=lambda X: -1.0 / X,
            domain=domain,
            conjugate_fn=lambda Y: -Y.shape[1] - np.sum(np.log(-Y), axis=1),
            dual_region_hint=hint,
            hvp_fn=lambda X, V: V / (X * X),
            separable=True,
        )
    elif name == "neg-entropy":
        domain, hint = Domain.positive_orthant(dim), Domain.box([-1.3] * dim, [3.3] * dim)
        if "box" in params:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (dim,)) for b in params["box"])
            domain, hint = Domain.box(lo, hi), Domain.box(np.log(lo) + 1, np.log(hi) + 1)
            params["box"] = [lo.tolist(), hi.tolist()]
        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: np.sum(X * np.log(X), axis=1),
            gradient_fn=lambda X: np.log(X) + 1.0,
            domain=domain,
            conjugate_fn=lambda Y: np.sum(np.exp(Y - 1.0), axis=1),
            dual_region_hint=hint,
            hvp_fn=lambda X, V: V / X,
            separable=True,
        )
    elif name == "quadratic-over-linear":

        def qol_grad(X):
            s1 = np.sum(X, axis=1, keepdims=True) + 1.0
            s2 = np.sum(X * X, axis=1, keepdims=True) + 1.0
            return (2.0 * X * s1 - s2) / (s1 * s1)

        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: (np.sum(X * X, axis=1) + 1.0) / (np.sum(X, axis=1) + 1.0),
            gradient_fn=qol_grad,
            domain=Domain.half_space(np.ones(dim), 0.0),
        )
    elif name == "quadratic-spd":
        if "matrix" in params:
            f = _spd_from_matrix(params["matrix"])
        elif "condition_number" in params:
            f = make_spd_quadratic(dim, params["condition_number"], seed)
        else:
            raise ValueError("quadratic-spd needs params 'matrix' or 'condition_number'")
        if f.dim != dim:
            raise ValueError("matrix size does not match dim")
        f.seed = seed
        return f
    elif name == "exp-minus-linear":
        rng = make_rng(seed, "exp-minus-linear")
        a = rng.standard_normal(dim)
        b = rng.standard_normal(dim)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: np.exp(X @ a) - X @ b,
            gradient_fn=lambda X: np.exp(X @ a)[:, None] * a - b,
            domain=Domain.full_space(dim),
            hvp_fn=lambda X, V: (np.exp(X @ a) * (V @ a))[:, None] * a,
        )
        params.update(a=a.tolist(), b=b.tolist())
    elif name == "coupled-softplus":
        if dim < 2:
            raise ValueError("coupled-softplus needs dim >= 2")
        iu, ju = np.triu_indices(dim, k=1)

        def cs_value(X):
            return np.sum(_softplus(X[:, iu] + X[:, ju]), axis=1)

        def cs_grad(X):
            S = expit(X[:, :, None] + X[:, None, :])
            S[:, np.arange(dim), np.arange(dim)] = 0.0
            return S.sum(axis=2)

        def cs_hvp(X, V):
            S = expit(X[:, :, None] + X[:, None, :])
            W = S * (1.0 - S)
            W[:, np.arange(dim), np.arange(dim)] = 0.0
            return W.sum(axis=2) * V + np.einsum("nij,nj->ni", W, V)

        f = ConvexFunction(
            name, dim, value_fn=cs_value, gradient_fn=cs_grad,
            domain=Domain.full_space(dim), hvp_fn=cs_hvp,
        )
        f.n_pairs = len(iu)
    else:  # icnn-target
        from .nn import load_checkpoint

        if "model" in params:
            model = params["model"]
        elif "checkpoint" in params:
            model = load_checkpoint(params["checkpoint"])
        else:
            raise ValueError("icnn-target needs params 'model' or 'checkpoint'")
        if model.spec.family not in ("icnn", "mlp-icnn") or model.spec.output_dim != 1:
            raise ValueError("icnn-target needs a scalar icnn or mlp-icnn model")
        if model.spec.input_dim != dim:
            raise ValueError("model input dimension does not match dim")
        f = ConvexFunction(
            name, dim,
            value_fn=lambda X: model.predict(X)[:, 0],
            gradient_fn=lambda X: model.input_gradient(X),
            domain=Domain.full_space(dim),
        )
    f.params = params
    f.seed = seed
    return f


def function_from_spec(spec: dict) -> ConvexFunction:
    return make_builtin(spec["name"], int(spec["dim"]), spec.get("params"), int(spec.get("seed") or 0))


class Sampler:
    """Reproducible point stream.

    One sampler owns one RNG stream; do not share an instance across threads.

    Parameters by kind: ``uniform-box`` (lo, hi), ``standard-normal``
    (optional ``truncate`` in standard deviations), ``half-normal``,
    ``log-uniform`` (lo_exp, hi_exp), ``gaussian-mixture`` (centers,
    covariance_scale, optional weights).
    """

    KINDS = ("uniform-box", "standard-normal", "half-normal", "log-uniform", "gaussian-mixture")

    def __init__(self, kind: str, dim: int, seed: int = 0, **params):
        if kind not in self.KINDS:
            raise ValueError(f"unknown sampler kind {kind!r}")
        self.kind = kind
        self.dim = int(dim)
        self.seed = int(seed)
        self.params = params
        if kind == "uniform-box":
            self._lo = np.broadcast_to(np.asarray(params["lo"], dtype=float), (self.dim,)).copy()
            self._hi = np.broadcast_to(np.asarray(params["hi"], dtype=float), (self.dim,)).copy()
            if not np.all(self._lo < self._hi):
                raise ValueError("uniform-box requires lo < hi")
        elif kind == "log-uniform":
            if not params["lo_exp"] < params["hi_exp"]:
                raise ValueError("log-uniform requires lo_exp < hi_exp")
        elif kind == "gaussian-mixture":
            centers = np.atleast_2d(np.asarray(params["centers"], dtype=float))
            if centers.shape[1] != self.dim:
                raise ValueError("mixture centers must match the dimension")
            self._centers = centers
            w = np.asarray(params.get("weights", np.ones(len(centers))), dtype=float)
            self._weights = w / w.sum()
        self.reset()

    def reset(self) -> None:
        self._rng = make_rng(self.seed, "sampler", self.kind)

    @property
    def support(self) -> Domain:
        if self.kind == "uniform-box":
            return Domain.box(self._lo, self._hi)
        if self.kind in ("half-normal", "log-uniform"):
            return Domain.positive_orthant(self.dim)
        return Domain.full_space(self.dim)

    def draw(self, n: int) -> np.ndarray:
        rng, d = self._rng, self.dim
        if self.kind == "uniform-box":
            U = rng.random((n, d))
            # keep strictly inside the open box
            U = np.where(U == 0.0, 0.5, U)
            return self._lo + (self._hi - self._lo) * U
        if self.kind == "standard-normal":
            scale = float(self.params.get("scale", 1.0))
            Z = rng.standard_normal((n, d))
            trunc = self.params.get("truncate")
            if trunc is not None:
                bad = np.abs(Z) > trunc
                while bad.any():
                    Z[bad] = rng.standard_normal(int(bad.sum()))
                    bad = np.abs(Z) > trunc
            return scale * Z
        if self.kind == "half-normal":
            Z = np.abs(rng.standard_normal((n, d)))
            return np.where(Z == 0.0, np.finfo(float).tiny, Z)
        if self.kind == "log-uniform":
            return np.exp(rng.uniform(self.params["lo_exp"], self.params["hi_exp"], (n, d)))
        idx = rng.choice(len(self._centers), size=n, p=self._weights)
        sd = np.sqrt(float(self.params.get("covariance_scale", 1e-3)))
        return self._centers[idx] + sd * rng.standard_normal((n, d))

    def to_dict(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed, **params}

    @classmethod
    def from_dict(cls, d: dict) -> "Sampler":
        d = dict(d)
        return cls(d.pop("kind"), d.pop("dim"), d.pop("seed", 0), **d)

    def __repr__(self):
        return f"Sampler({self.kind!r}, dim={self.dim}, seed={self.seed})"


def sample_primal(f: ConvexFunction, sampler: Sampler, n: int) -> np.ndarray:
    """Draw ``n`` points and check they all lie in ``f.domain``."""
    if sampler.dim != f.dim:
        raise ValueError(f"sampler dim {sampler.dim} != function dim {f.dim}")
    X = sampler.draw(n)
    inside = f.domain.contains(X)
    if not np.all(inside):
        raise ValueError(
            f"sampler {sampler.kind!r} emits points outside the domain of {f.name} "
            f"({int((~inside).sum())} of {n})"
        )
    return X


def default_sampler(f: ConvexFunction, seed: int = 0) -> Sampler:
    """Primal sampling distribution used by the benchmarks for each catalog function."""
    d = f.dim
    if f.domain.kind == "box":
        return Sampler("uniform-box", d, seed, lo=list(f.domain.lo), hi=list(f.domain.hi))
    if f.name in ("neg-log", "neg-entropy"):
        return Sampler("log-uniform", d, seed, lo_exp=-2.3, hi_exp=2.3)
    if f.name == "quadratic-over-linear":
        return Sampler("half-normal", d, seed)
    if f.name == "exp-minus-linear":
        return Sampler("standard-normal", d, seed, truncate=3.0)
    if f.name == "coupled-softplus":
        return Sampler("uniform-box", d, seed, lo=-1.5, hi=1.5)
    if f.name == "icnn-target":
        return Sampler("uniform-box", d, seed, lo=-3.0, hi=3.0)
    return Sampler("standard-normal", d, seed)
