"""Acceptance suite. Each test carries an ``acceptance`` marker; conftest prints one line per criterion."""
import math
import time

import numpy as np
import pytest

from deep_legendre.bench import PushForwardSampler
from deep_legendre.certificate import certify
from deep_legendre.dlt import TrainConfig, evaluate_rmse, proxy_loss, train
from deep_legendre.entropic import EntropicConfig, softmax_conjugate
from deep_legendre.functions import Sampler, default_sampler, make_builtin
from deep_legendre.grid import (CartesianGrid, GridConjugate, GridField, brute_force_conjugate, dual_grid,
                                dual_grid_bounds, llt_nested)
from deep_legendre.hopf import TimeDLT, analytic_quadratic_solution, hopf_reference, quadratic_problem
from deep_legendre.inverse import InverseGradientSampler, inverse_quality
from deep_legendre.nn import (FAMILIES, AdamState, ArchSpec, adam_step, forward, grad_input, init, mse_loss,
                              value_and_grad)

acceptance = pytest.mark.acceptance


class _Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.seconds < self.limit, f"took {self.seconds:.1f}s, limit {self.limit}s"


def _richardson(fn, h=1e-3):
    # two central differences combined to cancel the h^2 term, so roundoff stays far below 1e-5
    d1 = (fn(h) - fn(-h)) / (2 * h)
    d2 = (fn(h / 2) - fn(-h / 2)) / h
    return (4 * d2 - d1) / 3


def _nudged(model, i, e):
    out = model.copy()
    out.params[i] += e
    return out


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


@acceptance(1, "nested LLT equals brute force")
def test_llt_oracle_equivalence():
    with _Clock(30):
        for name, (lo, hi) in (("quadratic", (-3.0, 3.0)), ("neg-log", (0.1, 5.0))):
            for d in (1, 2, 3):
                f = make_builtin(name, d)
                grid = CartesianGrid.uniform(np.full(d, lo), np.full(d, hi), 5)
                field = GridField.from_function(f, grid)
                dual = dual_grid(dual_grid_bounds(f, grid), 5)
                diff = np.max(np.abs(llt_nested(field, dual).values - brute_force_conjugate(field, dual).values))
                assert diff <= 1e-12, (name, d, diff)


@acceptance(2, "grid conjugate accuracy on neg-log")
def test_grid_accuracy_neg_log():
    with _Clock(10):
        f = make_builtin("neg-log", 2)
        gc = GridConjugate(f, 0.1, 5.0, 10).fit()
        grid = CartesianGrid.uniform([0.1, 0.1], [5.0, 5.0], 10)
        lo, hi = np.array(dual_grid_bounds(f, grid)).T
        Y = lo + (hi - lo) * np.random.default_rng(0).random((1000, 2))
        rmse = math.sqrt(float(np.mean((gc.predict(Y) - f.conjugate(Y)) ** 2)))
    assert 0.15 <= rmse <= 0.6, rmse


@acceptance(3, "exact conjugate at sampled slopes")
def test_exact_at_sampled_slopes():
    with _Clock(5):
        f = make_builtin("quadratic", 2)
        grid = CartesianGrid.uniform([-3.0, -3.0], [3.0, 3.0], 11)
        field = GridField.from_function(f, grid)
        # the quadratic is separable, so the gradient at the diagonal nodes gives each axis of slopes
        diag = f.gradient(np.column_stack(grid.axes))
        slopes = CartesianGrid([diag[:, k] for k in range(2)])
        out = llt_nested(field, slopes)
        err = np.max(np.abs(out.values.ravel() - f.conjugate(slopes.points())))
    assert err <= 1e-12


@acceptance(4, "entropic conjugate converges as epsilon shrinks")
def test_entropic_trend():
    with _Clock(20):
        f = make_builtin("quadratic", 1)
        Y = np.linspace(-2.0, 2.0, 50)[:, None]
        truth = f.conjugate(Y)
        errs = [float(np.mean(np.abs(softmax_conjugate(f, (-3.0, 3.0), Y, EntropicConfig(e, 65536)) - truth)))
                for e in (0.5, 0.1, 0.01)]
    assert errs[0] > errs[1] > errs[2], errs
    assert errs[2] < errs[0] / 5, errs


@acceptance(5, "autodiff matches finite differences")
def test_autodiff_finite_differences():
    with _Clock(10):
        for family in FAMILIES:
            model = init(ArchSpec(family, 3, 16), seed=0)
            rng = np.random.default_rng(1)
            model.params += 0.1 * rng.standard_normal(model.n_params)
            model.project()
            X = rng.normal(size=(8, 3))
            loss_fn = mse_loss(rng.normal(size=(8, 1)))
            _, G = value_and_grad(model, loss_fn, X)
            idx = rng.choice(model.n_params, 50, replace=False)
            fd = np.array([_richardson(lambda e: loss_fn(forward(_nudged(model, i, e), X))[0]) for i in idx])
            assert np.max(_rel_err(G[idx], fd)) <= 1e-5, family

            Xi = rng.normal(size=(50, 3))
            Gi = grad_input(model, Xi)
            for j in range(3):
                E = np.zeros_like(Xi)
                E[:, j] = 1.0
                fd_in = _richardson(lambda e: model(Xi + e * E))
                assert np.max(_rel_err(Gi[:, j], fd_in)) <= 1e-5, family


def _midpoint_gap(model, seed, n=1000):
    rng = np.random.default_rng(seed)
    A = 3 * rng.normal(size=(n, 3))
    B = 3 * rng.normal(size=(n, 3))
    return model(0.5 * (A + B)) - 0.5 * (model(A) + model(B))


@acceptance(6, "ICNN models are convex")
@pytest.mark.parametrize("family", ["icnn", "mlp-icnn"])
def test_icnn_convexity(family):
    with _Clock(10):
        model = init(ArchSpec(family, 3, 16), seed=0)
        assert np.max(_midpoint_gap(model, 1)) <= 1e-9
        rng = np.random.default_rng(0)
        state = AdamState.for_model(model, lr=1e-2)
        for _ in range(300):
            X = rng.normal(size=(64, 3))
            _, g = value_and_grad(model, mse_loss(np.sin(3 * X[:, :1])), X)
            adam_step(model, state, g)
        assert np.max(_midpoint_gap(model, 2)) <= 1e-9

        f = make_builtin("neg-entropy", 3)
        rep = train(f, default_sampler(f, 0), ArchSpec(family, 3, 16), TrainConfig(batch_size=128, max_steps=300))
        assert np.max(_midpoint_gap(rep.model, 3)) <= 1e-9


@acceptance(7, "implicit and direct training agree")
@pytest.mark.slow
def test_implicit_matches_direct():
    with _Clock(15 * 60):
        f = make_builtin("quadratic", 5)
        spec = ArchSpec("mlp", 5, 64)
        X_test = default_sampler(f, 99).draw(4096)
        cfg = dict(batch_size=256, max_steps=20000, lr=1e-3, seed=0, early_stop_threshold=1e-12)
        imp = train(f, default_sampler(f, 0), spec, TrainConfig(**cfg))
        dirr = train(f, None, spec, TrainConfig(loss_kind="direct", **cfg),
                     dual_sampler=PushForwardSampler(f, default_sampler(f, 0)))
        r_i, r_d = evaluate_rmse(imp.model, f, X_test), evaluate_rmse(dirr.model, f, X_test)
    assert r_i < 5e-2 and r_d < 5e-2, (r_i, r_d)
    assert 1 / 3 <= r_i / r_d <= 3


@acceptance(8, "certificate exactness and calibration")
def test_certificate_exact_and_calibrated():
    with _Clock(120):
        f = make_builtin("quadratic", 2)
        off = certify(lambda Y: f.conjugate(Y) + 0.1, f, Sampler("standard-normal", 2, seed=0), 4096)
        assert off.mean_sq_error == pytest.approx(0.01, rel=1e-12)
        assert off.sample_variance == pytest.approx(0.0, abs=1e-24)

        c = np.array([0.3, -0.4])
        truth = float(c @ c)
        covered = 0
        for s in range(100):
            cert = certify(lambda Y: f.conjugate(Y) + Y @ c, f, Sampler("standard-normal", 2, seed=s), 1000)
            covered += cert.ci_lo <= truth <= cert.ci_hi
    assert 93 <= covered <= 97, covered


@pytest.fixture(scope="module")
def neg_log_inverse():
    f = make_builtin("neg-log", 2, {"box": [1e-3, 1e-1]})
    prim = Sampler("log-uniform", 2, seed=1, lo_exp=math.log(1e-3), hi_exp=math.log(1e-1))
    dual = Sampler("uniform-box", 2, seed=2, lo=-1000.0, hi=-10.0)
    t0 = time.perf_counter()
    est = InverseGradientSampler(f, dual, prim, hidden_width=128, pretrain_steps=20000, refine_steps=40000,
                                 random_state=0).fit()
    return f, est, time.perf_counter() - t0


@acceptance(9, "inverse gradient sampling")
@pytest.mark.slow
def test_inverse_sampler_quality(neg_log_inverse):
    f, est, _ = neg_log_inverse
    Yt = Sampler("uniform-box", 2, seed=77, lo=-1000.0, hi=-10.0).draw(4096)
    q = inverse_quality(est.model_, f, Yt, 990.0)
    assert q < 5e-2, q


@acceptance(9, "inverse gradient sampling")
@pytest.mark.slow
def test_inverse_sampling_beats_direct(neg_log_inverse):
    f, est, fit_seconds = neg_log_inverse
    t0 = time.perf_counter()
    Yt = Sampler("uniform-box", 2, seed=77, lo=-1000.0, hi=-10.0).draw(4096)
    X_eval = -1.0 / Yt
    spec = ArchSpec("resnet", 2, 128)
    cfg = TrainConfig(batch_size=256, max_steps=20000, seed=5, early_stop_threshold=1e-12)
    via_inverse = train(f, est.sampler(), spec, cfg)
    direct = train(f, Sampler("uniform-box", 2, seed=3, lo=1e-3, hi=1e-1), spec, cfg)
    r_inv, r_dir = evaluate_rmse(via_inverse.model, f, X_eval), evaluate_rmse(direct.model, f, X_eval)
    assert fit_seconds + time.perf_counter() - t0 < 45 * 60
    assert r_inv < r_dir, (r_inv, r_dir)


@acceptance(10, "time-dependent DLT on Hamilton-Jacobi")
@pytest.mark.slow
def test_time_dlt():
    with _Clock(20 * 60):
        prob = quadratic_problem(2)
        worst = 0.0
        for x1 in np.linspace(-2, 2, 5):
            for x2 in np.linspace(-2, 2, 5):
                for t in (0.0, 1.0, 2.0):
                    worst = max(worst, abs(hopf_reference(prob, [x1, x2], t)
                                           - analytic_quadratic_solution([x1, x2], t)))
        assert worst <= 1e-6

        est = TimeDLT(prob, architecture="resnet", hidden_width=64, max_steps=20000, batch_size=256).fit()
        X = np.random.default_rng(0).uniform(-2, 2, (2000, 2))
        m = est.metrics(X, (0.5, 1.0))
    for t in (0.5, 1.0):
        assert m["l2_error"][t] < 2e-2, m
        assert math.isfinite(m["pde_residual"][t]) and m["pde_residual"][t] < 5, m
    assert m["ic_error"] < 5e-2, m


@acceptance(11, "proxy training with a biased inverse")
@pytest.mark.slow
def test_proxy_bias():
    with _Clock(5 * 60):
        f = make_builtin("quadratic", 1)
        spec = ArchSpec("mlp", 1, 64)
        cfg = dict(batch_size=256, max_steps=50000, lr=1e-3, seed=0, early_stop_threshold=1e-12, lr_decay_every=5000)
        dual = lambda: Sampler("uniform-box", 1, seed=1, lo=-3.0, hi=3.0)
        X_test = Sampler("uniform-box", 1, seed=99, lo=-3.0, hi=3.0).draw(4096)
        shifted = lambda Y: Y + 0.5
        biased = train(f, None, spec, TrainConfig(loss_kind="proxy", **cfg), dual_sampler=dual(), inverse=shifted)
        exact = train(f, None, spec, TrainConfig(loss_kind="proxy", **cfg), dual_sampler=dual(), inverse=lambda Y: Y)
        implicit = train(f, dual(), spec, TrainConfig(**cfg))
        held_out = proxy_loss(biased.model, shifted, f, X_test)
        cert = certify(biased.model, f, Sampler("uniform-box", 1, seed=7, lo=-3.0, hi=3.0), 4096)
        r_exact, r_imp = evaluate_rmse(exact.model, f, X_test), evaluate_rmse(implicit.model, f, X_test)
    assert biased.final_loss < 1e-6 and held_out < 1e-6, (biased.final_loss, held_out)
    assert cert.mean_sq_error >= 0.015, cert.mean_sq_error
    assert 1 / 3 <= r_exact / r_imp <= 3, (r_exact, r_imp)
