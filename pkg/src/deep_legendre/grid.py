"""Exact discrete Legendre-Fenchel transforms on Cartesian grids.

Two routes compute the same numbers: :func:`brute_force_conjugate` evaluates
``max_x <s, x> - f(x)`` over every primal node (``O(N^{2d})``), and
:func:`llt_nested` applies the linear-time 1-D transform along one axis at a
time (``O(d N^{d+1})``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .functions import ConvexFunction
from .validation import check_points

__all__ = [
    "GridMemoryError",
    "CartesianGrid",
    "GridField",
    "brute_force_conjugate",
    "lower_hull",
    "llt_1d",
    "llt_nested",
    "dual_grid_bounds",
    "dual_grid",
    "interp_eval",
    "GridConjugate",
]

DEFAULT_MEMORY_CAP = 2 * 1024**3
MAX_POINTS = 2**53


class GridMemoryError(MemoryError):
    """The requested grid transform would exceed the configured memory cap."""

    def __init__(self, required_bytes: int, cap_bytes: int):
        self.required_bytes = int(required_bytes)
        self.cap_bytes = int(cap_bytes)
        super().__init__(f"grid transform needs {self.required_bytes} bytes, cap is {self.cap_bytes}")

    def to_dict(self) -> dict:
        return {"error": "memory", "required_bytes": self.required_bytes, "cap_bytes": self.cap_bytes}


class CartesianGrid:
    """Product of strictly increasing per-axis node vectors."""

    def __init__(self, axes):
        axes = [np.asarray(a, dtype=float).reshape(-1) for a in axes]
        if not axes:
            raise ValueError("grid needs at least one axis")
        for i, a in enumerate(axes):
            if a.size < 2:
                raise ValueError(f"axis {i} needs at least 2 nodes")
            if not np.all(np.diff(a) > 0):
                raise ValueError(f"axis {i} must be strictly increasing")
        self.axes = axes
        size = 1
        for a in axes:
            size *= a.size
            if size > MAX_POINTS:
                raise OverflowError("grid point count overflows")
        self.size = size

    @classmethod
    def uniform(cls, lo, hi, n) -> "CartesianGrid":
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        n = np.broadcast_to(np.asarray(n), lo.shape)
        return cls([np.linspace(a, b, int(k)) for a, b, k in zip(lo, hi, n)])

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def lo(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    def points(self) -> np.ndarray:
        """All nodes in row-major order, shape ``(size, dim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __repr__(self):
        return f"CartesianGrid(shape={self.shape})"


@dataclass
class GridField:
    grid: CartesianGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.grid.size:
            raise ValueError(f"field has {self.values.size} values for {self.grid.size} grid points")

    @classmethod
    def from_function(cls, f: ConvexFunction, grid: CartesianGrid) -> "GridField":
        if f.dim != grid.dim:
            raise ValueError("function and grid dimensions differ")
        P = grid.points()
        if not np.all(f.domain.contains(P)):
            raise ValueError(f"grid nodes lie outside the domain of {f.name}")
        return cls(grid, f.value(P))

    @property
    def tensor(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def to_csv(self, path) -> None:
        """Axis sizes on the first line, then one row per axis of nodes, then flat values."""
        with open(path, "w") as fh:
            fh.write(",".join(str(n) for n in self.grid.shape) + "\n")
            for a in self.grid.axes:
                fh.write(",".join(repr(float(v)) for v in a) + "\n")
            for v in self.values:
                fh.write(repr(float(v)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GridField":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        shape = [int(s) for s in lines[0].split(",")]
        axes = [np.array([float(v) for v in lines[1 + i].split(",")]) for i in range(len(shape))]
        values = np.array([float(v) for v in lines[1 + len(shape):]])
        return cls(CartesianGrid(axes), values)

    def to_binary(self, path) -> None:
        """JSON header line (shape, axes), then little-endian float64 values."""
        header = {"shape": list(self.grid.shape), "axes": [a.tolist() for a in self.grid.axes]}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            raw = fh.read()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        values = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(float)
        return cls(CartesianGrid(header["axes"]), values)


def _check_dims(field: GridField, dual: CartesianGrid) -> None:
    if field.grid.dim != dual.dim:
        raise ValueError(f"primal grid has dim {field.grid.dim}, dual grid has dim {dual.dim}")


def brute_force_conjugate(field: GridField, dual: CartesianGrid, chunk: int = 4096) -> GridField:
    """Definition-based discrete conjugate: maximum over every primal node."""
    _check_dims(field, dual)
    P = field.grid.points()
    fv = field.values
    out = np.empty(dual.size)
    S = dual.points()
    for start in range(0, dual.size, chunk):
        block = S[start: start + chunk]
        out[start: start + chunk] = np.max(block @ P.T - fv, axis=1)
    return GridField(dual, out)


def lower_hull(x, f) -> list[int]:
    """Indices of the lower convex hull of ``(x_i, f_i)`` (monotone chain, ``x`` sorted)."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # drop k when it lies on or above the chord j -> i
            if (f[k] - f[j]) * (x[i] - x[j]) >= (f[i] - f[j]) * (x[k] - x[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def llt_1d(x_nodes, f_values, slopes) -> np.ndarray:
    """Linear-time 1-D discrete conjugate ``max_i s_j x_i - f_i`` for every slope.

    Lower hull, hull edge slopes, then one merge pass over the sorted slopes.
    A slope equal to an edge slope is assigned to the edge's left vertex.
    """
    x = np.asarray(x_nodes, dtype=float)
    f = np.asarray(f_values, dtype=float)
    s = np.asarray(slopes, dtype=float)
    if x.ndim != 1 or f.shape != x.shape:
        raise ValueError("x_nodes and f_values must be 1-D of equal length")
    if x.size < 1 or s.ndim != 1:
        raise ValueError("need at least one node and a 1-D slope vector")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x_nodes must be strictly increasing")
    if np.any(np.diff(s) < 0):
        raise ValueError("slopes must be nondecreasing")
    xl, fl = x.tolist(), f.tolist()
    hull = lower_hull(xl, fl)
    hx = [xl[i] for i in hull]
    hf = [fl[i] for i in hull]
    edges = [(hf[k + 1] - hf[k]) / (hx[k + 1] - hx[k]) for k in range(len(hull) - 1)]
    out = np.empty(s.size)
    k, last = 0, len(edges)
    for j, sj in enumerate(s.tolist()):
        while k < last and edges[k] < sj:
            k += 1
        out[j] = sj * hx[k] - hf[k]
    return out


def _stage_bytes(shape, axis: int, m: int) -> int:
    out_shape = list(shape)
    out_shape[axis] = m
    return 8 * (math.prod(shape) + math.prod(out_shape))


def llt_nested(field: GridField, dual: CartesianGrid, memory_cap: int = DEFAULT_MEMORY_CAP) -> GridField:
    """Nested linear-time transform, sweeping axes 0, 1, ..., d-1."""
    _check_dims(field, dual)
    shape = list(field.grid.shape)
    need = 0
    for axis in range(field.grid.dim):
        need = max(need, _stage_bytes(shape, axis, dual.shape[axis]))
        shape[axis] = dual.shape[axis]
    if need > memory_cap:
        raise GridMemoryError(need, memory_cap)

    # V holds -(partial conjugate) so each stage is a plain 1-D conjugate of V along one axis
    V = field.tensor.copy()
    for axis in range(field.grid.dim):
        x, s = field.grid.axes[axis], dual.axes[axis]
        moved = np.moveaxis(V, axis, -1)
        lines = moved.reshape(-1, moved.shape[-1])
        res = np.empty((lines.shape[0], s.size))
        for r in range(lines.shape[0]):
            res[r] = llt_1d(x, lines[r], s)
        res = res.reshape(moved.shape[:-1] + (s.size,))
        V = -np.moveaxis(res, -1, axis)
    return GridField(dual, -V.ravel())


def dual_grid_bounds(f: ConvexFunction, primal: CartesianGrid, max_enumerate: int = 10**7) -> list[tuple[float, float]]:
    """Coordinate-wise min/max of ``df/dx_i`` over all primal nodes.

    Separable catalog functions (monotone per-axis partials) use the two
    corner nodes; anything else enumerates the grid.
    """
    if f.dim != primal.dim:
        raise ValueError("function and grid dimensions differ")
    lo, hi = primal.lo, primal.hi
    if f.separable:
        corners = np.stack([lo, hi])
        if not np.all(f.domain.contains(corners)):
            raise ValueError("primal grid has nodes outside the function domain")
        g = f.gradient(corners)
        return [(float(min(g[0, i], g[1, i])), float(max(g[0, i], g[1, i]))) for i in range(f.dim)]
    if primal.size > max_enumerate:
        raise ValueError(f"grid of {primal.size} points too large to enumerate gradient bounds")
    P = primal.points()
    if not np.all(f.domain.contains(P)):
        raise ValueError("primal grid has nodes outside the function domain")
    G = f.gradient(P)
    return [(float(G[:, i].min()), float(G[:, i].max())) for i in range(f.dim)]


def dual_grid(bounds, m) -> CartesianGrid:
    """Uniform dual grid ``lo_i + k h_i``, ``k = 0..m-1`` inside the given slope bounds."""
    m = np.broadcast_to(np.asarray(m), (len(bounds),))
    axes = []
    for (lo, hi), k in zip(bounds, m):
        k = int(k)
        if hi <= lo:
            hi = lo + 1.0
        h = (hi - lo) / (k - 1)
        axes.append(lo + h * np.arange(k))
    return CartesianGrid(axes)


def interp_eval(field: GridField, y):
    """Multilinear interpolation; raises ``ValueError`` outside the grid's bounding box."""
    grid = field.grid
    Y = np.asarray(y, dtype=float)
    single = Y.ndim == 1
    Y = np.atleast_2d(Y)
    if Y.shape[1] != grid.dim:
        raise ValueError("point dimension does not match the grid")
    interp = RegularGridInterpolator(grid.axes, field.tensor, method="linear", bounds_error=True)
    out = interp(Y)
    return float(out[0]) if single else out


class GridConjugate(RegressorMixin, BaseEstimator):
    """Grid baseline for the conjugate of ``function`` on the box ``[lo, hi]``.

    ``fit`` tabulates ``f`` on an ``n_points``-per-axis grid, picks a dual grid
    from the gradient bounds and runs the exact discrete transform;
    ``predict`` interpolates the dual table multilinearly.

    Parameters
    ----------
    function : ConvexFunction
    lo, hi : float or array-like
        Primal box.
    n_points : int
        Primal nodes per axis.
    n_dual : int or None
        Dual nodes per axis (defaults to ``n_points``).
    method : {"llt", "brute"}
    memory_cap : int
        Byte limit for intermediate tensors of the nested transform.
    """

    def __init__(self, function=None, lo=0.0, hi=1.0, n_points=10, n_dual=None, method="llt",
                 memory_cap=DEFAULT_MEMORY_CAP):
        self.function = function
        self.lo = lo
        self.hi = hi
        self.n_points = n_points
        self.n_dual = n_dual
        self.method = method
        self.memory_cap = memory_cap

    def fit(self, X=None, y=None):
        """Compute the dual table. ``X`` and ``y`` are ignored."""
        f = self.function
        if f is None:
            raise ValueError("GridConjugate needs a function")
        if self.method not in ("llt", "brute"):
            raise ValueError("method must be 'llt' or 'brute'")
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (f.dim,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (f.dim,))
        self.primal_grid_ = CartesianGrid.uniform(lo, hi, self.n_points)
        # node coordinates plus values must fit before anything is tabulated
        need = 8 * self.primal_grid_.size * (f.dim + 1)
        if need > self.memory_cap:
            raise GridMemoryError(need, self.memory_cap)
        primal = GridField.from_function(f, self.primal_grid_)
        self.dual_bounds_ = dual_grid_bounds(f, self.primal_grid_)
        self.dual_grid_ = dual_grid(self.dual_bounds_, self.n_dual or self.n_points)
        if self.method == "llt":
            self.field_ = llt_nested(primal, self.dual_grid_, self.memory_cap)
        else:
            self.field_ = brute_force_conjugate(primal, self.dual_grid_)
        self.n_features_in_ = f.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "field_")
        X = check_points(X, self.n_features_in_)
        return interp_eval(self.field_, X)
