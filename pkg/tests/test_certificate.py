import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_legendre.certificate import (ErrorCertificate, certify, certify_points, implicit_residuals,
                                       push_forward_sample, z_value)
from deep_legendre.dlt import evaluate_rmse
from deep_legendre.functions import Sampler, default_sampler, make_builtin


def test_exact_conjugate_gives_zero():
    f = make_builtin("quadratic", 3)
    cert = certify(f.conjugate, f, Sampler("standard-normal", 3, seed=0), 500)
    assert cert.mean_sq_error < 1e-28 and cert.sample_variance < 1e-56
    np.testing.assert_allclose(cert.confidence_interval, (0.0, 0.0), atol=1e-28)


@pytest.mark.parametrize("name", ["quadratic", "neg-log", "neg-entropy"])
def test_constant_offset(name):
    f = make_builtin(name, 2)
    cert = certify(lambda Y: f.conjugate(Y) + 0.1, f, default_sampler(f, 1), 2000)
    assert cert.mean_sq_error == pytest.approx(0.01, rel=1e-12)
    assert cert.sample_variance == pytest.approx(0.0, abs=1e-24)
    assert cert.rmse == pytest.approx(0.1, rel=1e-12)


def test_offset_quadratic_exact_in_floats():
    # quadratic residuals carry no rounding from log/exp, so the offset case is exact up to the addition
    f = make_builtin("quadratic", 1)
    X = np.array([[0.0], [1.0], [2.0], [-1.0]])
    cert = certify_points(lambda Y: f.conjugate(Y) + 0.1, f, X)
    assert cert.mean_sq_error == pytest.approx(0.01, abs=1e-17)


def _tilt_certs(n, reps=100):
    f = make_builtin("quadratic", 2)
    c = np.array([0.3, -0.4])
    g = lambda Y: f.conjugate(Y) + Y @ c
    return [certify(g, f, Sampler("standard-normal", 2, seed=s), n) for s in range(reps)], float(c @ c)


def test_linear_tilt_coverage():
    certs, truth = _tilt_certs(1000)
    covered = sum(c.ci_lo <= truth <= c.ci_hi for c in certs)
    assert 93 <= covered <= 97
    sigma = math.sqrt(2 * truth**2 / 1000)
    assert sum(abs(c.mean_sq_error - truth) <= 3 * sigma for c in certs) >= 99


def test_interval_width_shrinks_like_inverse_sqrt_n():
    widths = []
    for n in (500, 2000, 8000):
        certs, _ = _tilt_certs(n, reps=20)
        widths.append(np.mean([c.ci_hi - c.ci_lo for c in certs]))
    assert widths[0] / widths[1] == pytest.approx(2.0, rel=0.15)
    assert widths[1] / widths[2] == pytest.approx(2.0, rel=0.15)


def test_interval_and_fields():
    f = make_builtin("quadratic", 2)
    cert = certify(lambda Y: 0.0 * Y[:, 0], f, Sampler("standard-normal", 2, seed=0), 300, level=0.9)
    assert cert.ci_lo <= cert.mean_sq_error <= cert.ci_hi
    half = z_value(0.9) * cert.standard_error
    assert cert.ci_hi - cert.mean_sq_error == pytest.approx(half, rel=1e-12)
    back = ErrorCertificate.from_dict(cert.to_dict())
    assert back == cert
    assert '"variance"' in cert.to_json()


def test_z_values():
    assert z_value(0.95) == pytest.approx(1.959963984540054, rel=1e-15)
    assert z_value(0.8) == pytest.approx(1.2815515655446004, rel=1e-12)
    with pytest.raises(ValueError):
        z_value(1.0)


def test_errors():
    f = make_builtin("neg-log", 1)
    with pytest.raises(ValueError):
        certify(f.conjugate, f, default_sampler(f, 0), 1)
    with pytest.raises(ValueError):
        certify_points(lambda Y: np.full(len(Y), np.inf), f, [[1.0], [2.0]])

    class Bad:
        seed = 0

        def draw(self, n):
            return -np.ones((n, 1))

    with pytest.raises(ValueError):
        certify(f.conjugate, f, Bad(), 10)


def test_push_forward_and_residual_identity():
    f = make_builtin("neg-entropy", 2)
    sampler = default_sampler(f, 3)
    Y = push_forward_sample(f, sampler, 50)
    np.testing.assert_allclose(Y, f.gradient(default_sampler(f, 3).draw(50)))
    X = default_sampler(f, 4).draw(200)
    g = lambda Y: np.sin(Y[:, 0]) + Y[:, 1] ** 2
    r = implicit_residuals(g, f, X)
    G = f.gradient(X)
    np.testing.assert_allclose(r, g(G) - f.conjugate(G), atol=1e-12)


def test_agrees_with_evaluate_rmse():
    f = make_builtin("neg-log", 2)
    X = default_sampler(f, 0).draw(400)
    g = lambda Y: f.conjugate(Y) + 0.05 * Y[:, 0]
    assert certify_points(g, f, X).rmse == pytest.approx(evaluate_rmse(g, f, X), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.integers(2, 300), st.integers(0, 10_000))
def test_constant_offset_property(c, n, seed):
    f = make_builtin("quadratic", 2)
    cert = certify(lambda Y: f.conjugate(Y) + c, f, Sampler("standard-normal", 2, seed=seed), n)
    assert cert.mean_sq_error == pytest.approx(c * c, rel=1e-9, abs=1e-15)
    assert cert.ci_lo <= cert.mean_sq_error <= cert.ci_hi
    assert cert.sample_variance >= 0
