"""Desk-scale benchmark tables comparing grid, entropic and network conjugates.

Each builder returns ``(header, rows)``. Timing columns are named
``t_solve`` or end in ``seconds`` so that content hashes can skip them.
"""
from __future__ import annotations

import math
import time

import numpy as np

from ._rng import child_seed, make_rng
from .dlt import TrainConfig, evaluate_rmse, train
from .entropic import EntropicConfig, softmax_conjugate
from .functions import ConvexFunction, Sampler, default_sampler, make_builtin
from .grid import (CartesianGrid, GridConjugate, GridField, brute_force_conjugate, dual_grid,
                   dual_grid_bounds, llt_nested)
from .hopf import hj_metrics, quadratic_problem, train_time_dlt
from .inverse import InverseGradientSampler, inverse_quality
from .nn import ArchSpec

__all__ = [
    "TABLES",
    "default_box",
    "PushForwardSampler",
    "is_timing_column",
    "table_b3",
    "table2",
    "table3",
    "table4",
    "table5",
    "entropic_table",
    "build_table",
]


def is_timing_column(name: str) -> bool:
    return name == "t_solve" or name.endswith("seconds")


def default_box(f: ConvexFunction) -> tuple[float, float]:
    """Primal box used by the grid and entropic baselines."""
    if f.domain.kind == "box":
        return float(np.min(f.domain.lo)), float(np.max(f.domain.hi))
    if f.name in ("neg-log", "neg-entropy"):
        return 0.1, 5.0
    if f.name == "quadratic-over-linear":
        return 0.1, 3.0
    return -5.0 if f.name == "quadratic" else -3.0, 5.0 if f.name == "quadratic" else 3.0


class PushForwardSampler:
    """Dual points ``grad f(x)`` for ``x`` from a primal sampler."""

    def __init__(self, f: ConvexFunction, sampler):
        self.f = f
        self.sampler = sampler
        self.dim = f.dim
        self.seed = getattr(sampler, "seed", None)

    def draw(self, n: int) -> np.ndarray:
        return self.f.gradient(self.sampler.draw(n))


def _box_dual_points(f, lo, hi, n, seed):
    """Uniform points in ``grad f([lo, hi]^d)`` for separable ``f``."""
    bounds = dual_grid_bounds(f, CartesianGrid.uniform(np.full(f.dim, lo), np.full(f.dim, hi), 2))
    blo, bhi = np.array(bounds).T
    return blo + (bhi - blo) * make_rng(seed, "dual-eval").random((n, f.dim)), bounds


def table_b3(functions=("quadratic", "neg-log"), dims=(1, 2, 3), grid_n=5, seed=0):
    """Nested linear-time transform against the brute-force definition."""
    rows = []
    for name in functions:
        for d in dims:
            f = make_builtin(name, d, seed=seed)
            lo, hi = default_box(f)
            grid = CartesianGrid.uniform(np.full(d, lo), np.full(d, hi), grid_n)
            field = GridField.from_function(f, grid)
            dual = dual_grid(dual_grid_bounds(f, grid), grid_n)
            t0 = time.perf_counter()
            a = llt_nested(field, dual)
            t1 = time.perf_counter()
            b = brute_force_conjugate(field, dual)
            t2 = time.perf_counter()
            rows.append([name, d, grid_n, float(np.max(np.abs(a.values - b.values))), t1 - t0, t2 - t1])
    return ["function", "d", "n", "max_abs_diff", "llt_seconds", "brute_seconds"], rows


def _dlt_config(steps, seed, batch=None, lr=1e-3):
    return TrainConfig(batch_size=batch, max_steps=steps, lr=lr, seed=seed, early_stop_threshold=1e-12)


def table3(functions=("quadratic", "neg-log", "neg-entropy"), dims=(2,), grid_n=10, steps=2000, width=128,
           eval_n=1000, seed=0):
    """Grid baseline versus DLT, both scored against the closed form on uniform dual points."""
    rows = []
    for name in functions:
        for d in dims:
            f = make_builtin(name, d, seed=seed)
            lo, hi = default_box(f)
            Y, _ = _box_dual_points(f, lo, hi, eval_n, child_seed(seed, "table3", name, d))
            truth = f.conjugate(Y)
            t0 = time.perf_counter()
            gc = GridConjugate(f, lo, hi, grid_n).fit()
            t_grid = time.perf_counter() - t0
            rmse_grid = math.sqrt(float(np.mean((gc.predict(Y) - truth) ** 2)))
            rows.append([name, d, "lucet", t_grid, rmse_grid])
            sampler = Sampler("uniform-box", d, seed, lo=lo, hi=hi)
            rep = train(f, sampler, ArchSpec("resnet", d, width), _dlt_config(steps, seed))
            rmse_dlt = math.sqrt(float(np.mean((rep.model(Y) - truth) ** 2)))
            rows.append([name, d, "dlt", rep.seconds, rmse_dlt])
    return ["function", "d", "method", "t_solve", "rmse"], rows


def table2(functions=("quadratic", "neg-log", "neg-entropy"), dims=(2,), archs=("mlp", "resnet", "mlp-icnn", "icnn"),
           steps=2000, width=128, test_n=4096, seed=0):
    """Implicit (DLT) versus direct training with matched primal samples."""
    rows = []
    for name in functions:
        for d in dims:
            f = make_builtin(name, d, seed=seed)
            X_test = default_sampler(f, child_seed(seed, "table2-test")).draw(test_n)
            for arch in archs:
                spec = ArchSpec(arch, d, width)
                cfg = _dlt_config(steps, seed)
                imp = train(f, default_sampler(f, seed), spec, cfg)
                cfg_d = _dlt_config(steps, seed)
                cfg_d.loss_kind = "direct"
                dirr = train(f, None, spec, cfg_d, dual_sampler=PushForwardSampler(f, default_sampler(f, seed)))
                r_i, r_d = evaluate_rmse(imp.model, f, X_test), evaluate_rmse(dirr.model, f, X_test)
                rows.append([name, d, arch, r_i, r_d, r_i / r_d if r_d > 0 else math.nan, imp.seconds, dirr.seconds])
    return ["function", "d", "arch", "rmse_dlt", "rmse_direct", "ratio", "dlt_seconds", "direct_seconds"], rows


def table4(dims=(2,), pretrain_steps=2000, refine_steps=4000, steps=2000, width=128, test_n=4096, seed=0):
    """Direct versus inverse-gradient sampling for the negative logarithm on ``(1e-3, 1e-1)^d``."""
    rows = []
    lo, hi, dlo, dhi = 1e-3, 1e-1, -1000.0, -10.0
    for d in dims:
        f = make_builtin("neg-log", d, {"box": [lo, hi]})
        Y_test = Sampler("uniform-box", d, child_seed(seed, "table4-test"), lo=dlo, hi=dhi).draw(test_n)
        X_eval = -1.0 / Y_test
        spec = ArchSpec("resnet", d, width)
        direct = train(f, Sampler("uniform-box", d, seed, lo=lo, hi=hi), spec, _dlt_config(steps, seed))
        primal = Sampler("log-uniform", d, seed, lo_exp=math.log(lo), hi_exp=math.log(hi))
        dual = Sampler("uniform-box", d, child_seed(seed, "table4-dual"), lo=dlo, hi=dhi)
        t0 = time.perf_counter()
        inv = InverseGradientSampler(f, dual, primal, hidden_width=width, pretrain_steps=pretrain_steps,
                                     refine_steps=refine_steps, random_state=seed).fit()
        t_map = time.perf_counter() - t0
        q = inverse_quality(inv.model_, f, Y_test, dhi - dlo)
        viainv = train(f, inv.sampler(), spec, _dlt_config(steps, seed))
        rows.append([d, evaluate_rmse(direct.model, f, X_eval), direct.seconds, q,
                     evaluate_rmse(viainv.model, f, X_eval), t_map, viainv.seconds, t_map + viainv.seconds])
    header = ["d", "direct_rmse", "direct_seconds", "inverse_quality", "inverse_rmse",
              "inverse_map_seconds", "inverse_dlt_seconds", "total_seconds"]
    return header, rows


def table5(dims=(2,), t_slices=(0.5, 1.0, 1.5, 2.0), steps=2000, width=64, eval_n=1000, seed=0):
    """Time-DLT on the quadratic Hamilton-Jacobi problem."""
    rows = []
    for d in dims:
        prob = quadratic_problem(d)
        rep = train_time_dlt(prob, ArchSpec("resnet", d + 1, width), _dlt_config(steps, seed))
        X = make_rng(seed, "table5-eval", d).uniform(-prob.a, prob.a, (eval_n, d))
        m = hj_metrics(rep.model, prob, X, t_slices)
        for t in t_slices:
            rows.append([d, float(t), m["l2_error"][float(t)], m["pde_residual"][float(t)], m["ic_error"], rep.seconds])
    return ["d", "t", "l2_error", "pde_residual", "ic_error", "seconds"], rows


def entropic_table(functions=("quadratic",), dims=(1,), epsilons=(0.5, 0.1, 0.01), n_samples=65536, eval_n=50,
                   seed=0):
    """Mean absolute error of the softmax conjugate at interior dual points."""
    rows = []
    for name in functions:
        for d in dims:
            f = make_builtin(name, d, seed=seed)
            lo, hi = default_box(f)
            mid, half = 0.5 * (lo + hi), 0.25 * (hi - lo)
            X = make_rng(seed, "entropic-eval").uniform(mid - half, mid + half, (eval_n, d))
            Y = f.gradient(X)
            truth = f.conjugate(Y)
            for eps in epsilons:
                t0 = time.perf_counter()
                approx = softmax_conjugate(f, (lo, hi), Y, EntropicConfig(float(eps), n_samples))
                rows.append([name, d, float(eps), float(np.mean(np.abs(approx - truth))), time.perf_counter() - t0])
    return ["function", "d", "epsilon", "mean_abs_error", "seconds"], rows


TABLES = {
    "tableB3": table_b3,
    "table2": table2,
    "table3": table3,
    "table4": table4,
    "table5": table5,
    "entropic": entropic_table,
}


def build_table(name: str, **kw):
    if name not in TABLES:
        raise ValueError(f"unknown table {name!r}; choose from {sorted(TABLES)}")
    return TABLES[name](**kw)
