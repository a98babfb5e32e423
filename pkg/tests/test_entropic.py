import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_legendre.entropic import EntropicConfig, EntropicConjugate, low_discrepancy_points, softmax_conjugate
from deep_legendre.functions import make_builtin


def test_van_der_corput_prefix():
    np.testing.assert_array_equal(low_discrepancy_points(1, 4)[:, 0], [0.5, 0.25, 0.75, 0.125])


def test_halton_range_and_determinism():
    P = low_discrepancy_points(4, 1000)
    assert np.all((P > 0) & (P < 1))
    np.testing.assert_array_equal(P, low_discrepancy_points(4, 1000))
    np.testing.assert_allclose(P[0], [0.5, 1 / 3, 0.2, 1 / 7])
    with pytest.raises(ValueError):
        low_discrepancy_points(0, 3)


def test_halton_more_uniform_than_random():
    from scipy.stats import qmc

    P = low_discrepancy_points(2, 1024)
    R = np.random.default_rng(0).random((1024, 2))
    assert qmc.discrepancy(P, method="L2-star") < qmc.discrepancy(R, method="L2-star")


def test_config_validation():
    with pytest.raises(ValueError):
        EntropicConfig(0.0)
    with pytest.raises(ValueError):
        EntropicConfig(0.1, 0)
    with pytest.raises(ValueError):
        EntropicConfig(0.1, sequence="sobol")


def test_quadratic_at_zero():
    f = make_builtin("quadratic", 1)
    val = softmax_conjugate(f, (-3.0, 3.0), [0.0], EntropicConfig(0.01, 4096))
    assert abs(val) < 0.05
    # eps * log sqrt(2 pi eps) for the Gaussian integral
    assert val == pytest.approx(0.01 * math.log(math.sqrt(2 * math.pi * 0.01)), abs=1e-4)


def test_monotone_in_epsilon_for_spread_integrand():
    f = make_builtin("quadratic", 1)
    vals = [softmax_conjugate(f, (-3.0, 3.0), [0.7], EntropicConfig(e, 4096)) for e in (0.1, 0.5, 2.0, 8.0)]
    assert np.all(np.diff(vals) > 0)


def test_epsilon_derivative_is_gibbs_entropy():
    # d/d eps of eps*log(integral) is the differential entropy of the Gibbs density, negative when it is narrow
    f = make_builtin("quadratic", 1)
    cfg = lambda e: EntropicConfig(e, 65536)
    e, h = 0.01, 1e-5
    slope = (softmax_conjugate(f, (-3.0, 3.0), [0.7], cfg(e + h))
             - softmax_conjugate(f, (-3.0, 3.0), [0.7], cfg(e - h))) / (2 * h)
    assert slope == pytest.approx(0.5 * math.log(2 * math.pi * math.e * e), abs=1e-3)
    assert slope < 0


def test_neg_entropy_convergence():
    f = make_builtin("neg-entropy", 1)
    errs = [abs(softmax_conjugate(f, (0.1, 5.0), [1.0], EntropicConfig(e, 65536)) - f.conjugate([1.0]))
            for e in (0.5, 0.1, 0.01)]
    assert errs[0] > errs[1] > errs[2]


def test_quadratic_convergence_trend():
    f = make_builtin("quadratic", 1)
    X = np.random.default_rng(0).uniform(-1.5, 1.5, (50, 1))
    Y = f.gradient(X)
    errs = [np.mean(np.abs(softmax_conjugate(f, (-3.0, 3.0), Y, EntropicConfig(e, 65536)) - f.conjugate(Y)))
            for e in (0.5, 0.1, 0.01)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < errs[0] / 5


def test_upper_bound_over_discrete_max():
    f = make_builtin("neg-log", 2)
    cfg = EntropicConfig(0.05, 2048)
    lo, hi = np.array([0.1, 0.1]), np.array([5.0, 5.0])
    X = lo + (hi - lo) * low_discrepancy_points(2, 2048)
    Y = np.array([[-1.0, -2.0], [-0.5, -0.3]])
    val = softmax_conjugate(f, (0.1, 5.0), Y, cfg)
    dmax = np.max(Y @ X.T - f.value(X), axis=1)
    bound = dmax - cfg.epsilon * math.log(2048) + cfg.epsilon * np.sum(np.log(hi - lo))
    assert np.all(val >= bound - 1e-12)


def test_no_overflow_small_epsilon():
    f = make_builtin("quadratic", 1)
    val = softmax_conjugate(f, (-3.0, 3.0), [100.0], EntropicConfig(1e-4, 1024))
    assert math.isfinite(val)


def test_box_errors():
    f = make_builtin("neg-log", 1)
    with pytest.raises(ValueError):
        softmax_conjugate(f, (-1.0, 1.0), [-1.0], EntropicConfig(0.1, 64))
    with pytest.raises(ValueError):
        softmax_conjugate(f, (2.0, 1.0), [-1.0], EntropicConfig(0.1, 64))


def test_pseudo_random_sequence_is_seeded():
    f = make_builtin("quadratic", 2)
    a = softmax_conjugate(f, (-3.0, 3.0), [0.2, 0.1], EntropicConfig(0.1, 512, "pseudo-random", seed=3))
    b = softmax_conjugate(f, (-3.0, 3.0), [0.2, 0.1], EntropicConfig(0.1, 512, "pseudo-random", seed=3))
    assert a == b


def test_estimator_matches_function():
    f = make_builtin("quadratic", 2)
    est = EntropicConjugate(f, -3.0, 3.0, epsilon=0.1, n_samples=1024).fit()
    Y = np.array([[0.1, 0.2], [1.0, -1.0]])
    np.testing.assert_allclose(est.predict(Y), softmax_conjugate(f, (-3.0, 3.0), Y, EntropicConfig(0.1, 1024)),
                               rtol=1e-14)
    assert est.get_params()["epsilon"] == 0.1
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.01, 1.0))
def test_entropic_upper_bounds_conjugate_minus_volume_term(y, eps):
    # the smoothed value never exceeds the true conjugate plus eps * log(volume)
    f = make_builtin("quadratic", 1)
    val = softmax_conjugate(f, (-3.0, 3.0), [y], EntropicConfig(eps, 512))
    assert val <= f.conjugate([y]) + eps * math.log(6.0) + 1e-12
