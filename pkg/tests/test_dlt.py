import numpy as np
import pytest

from deep_legendre.bench import PushForwardSampler
from deep_legendre.dlt import (DeepLegendreTransform, TrainConfig, TrainingError, direct_loss, evaluate_rmse,
                               implicit_loss, proxy_loss, train)
from deep_legendre.functions import Sampler, default_sampler, make_builtin
from deep_legendre.nn import ArchSpec, init


def _zero_model(d):
    model = init(ArchSpec("mlp", d, 4))
    model.params[:] = 0.0
    return model


def test_implicit_loss_examples():
    f = make_builtin("quadratic", 2)
    X = Sampler("standard-normal", 2, seed=0).draw(100)
    assert implicit_loss(f.conjugate, f, X) <= 1e-18
    assert implicit_loss(lambda Y: f.conjugate(Y) + 0.1, f, X) == pytest.approx(0.01, rel=1e-12)
    assert implicit_loss(_zero_model(2), f, [[1.0, 0.0]]) == pytest.approx(0.25, rel=1e-15)


def test_implicit_loss_errors():
    f = make_builtin("neg-log", 1)
    with pytest.raises(ValueError):
        implicit_loss(f.conjugate, f, [[-1.0]])


def test_direct_loss_examples():
    f = make_builtin("neg-log", 1)
    assert direct_loss(_zero_model(1), [[-1.0]], f) == 1.0
    Y = f.gradient(default_sampler(f, 0).draw(20))
    assert direct_loss(f.conjugate, Y, f.conjugate) == 0.0
    with pytest.raises(ValueError):
        direct_loss(f.conjugate, Y, None)


def test_direct_equals_implicit_on_mapped_points():
    f = make_builtin("neg-entropy", 2)
    X = default_sampler(f, 1).draw(300)
    g = lambda Y: Y[:, 0] ** 2 - Y[:, 1]
    assert direct_loss(g, f.gradient(X), f) == pytest.approx(implicit_loss(g, f, X), rel=1e-10)


def test_proxy_loss_unbiased_and_biased():
    f = make_builtin("quadratic", 1)
    Y = np.linspace(-2, 2, 41)[:, None]
    assert proxy_loss(f.conjugate, lambda Y: Y, f, Y) == pytest.approx(0.0, abs=1e-28)
    delta = 0.5
    shifted = lambda Y: Y + delta
    # target is f* - delta^2/2, so the exact conjugate sees a constant residual delta^2/2
    assert proxy_loss(f.conjugate, shifted, f, Y) == pytest.approx((delta**2 / 2) ** 2, rel=1e-12)


def test_proxy_drops_out_of_domain():
    f = make_builtin("neg-log", 1)
    Y = np.array([[-1.0], [-2.0], [-4.0]])
    h = lambda Y: np.where(Y < -1.5, -1.0 / Y, -1.0)
    assert proxy_loss(f.conjugate, h, f, Y) == pytest.approx(0.0, abs=1e-28)
    with pytest.raises(TrainingError):
        proxy_loss(f.conjugate, lambda Y: -np.ones_like(Y), f, Y)


def test_evaluate_rmse_examples():
    f = make_builtin("neg-log", 2)
    X = default_sampler(f, 0).draw(500)
    assert evaluate_rmse(f.conjugate, f, X) < 1e-12
    assert evaluate_rmse(lambda Y: f.conjugate(Y) - 0.3, f, X) == pytest.approx(0.3, rel=1e-10)
    g = lambda Y: np.cos(Y[:, 0])
    G = f.gradient(X)
    direct = np.sqrt(np.mean((g(G) - f.conjugate(G)) ** 2))
    assert evaluate_rmse(g, f, X) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError):
        evaluate_rmse(g, f, np.zeros((0, 2)))


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(early_stop_threshold=0.0)
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="hinge")
    cfg = TrainConfig(batch_size=32, max_steps=10, seed=3)
    assert TrainConfig.from_json('{"batch_size": 32, "max_steps": 10, "seed": 3}') == cfg
    assert TrainConfig().resolved_batch_size(2) == 256
    assert TrainConfig().resolved_batch_size(100) == 4096


def test_threshold_stop_at_first_step():
    f = make_builtin("quadratic", 2)
    rep = train(f, default_sampler(f, 0), ArchSpec("mlp", 2, 8), TrainConfig(max_steps=100, early_stop_threshold=1e30))
    assert rep.steps == 1 and rep.stop_reason == "threshold"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    f = make_builtin("quadratic", 1)

    class Exploding:
        seed = 0

        def draw(self, n):
            return np.full((n, 1), 1e200)

    rep = train(f, Exploding(), ArchSpec("mlp", 1, 4), TrainConfig(max_steps=50), standardize=False)
    assert rep.stop_reason == "divergence"


def test_determinism(tmp_path):
    f = make_builtin("neg-log", 2)
    cfg = TrainConfig(batch_size=64, max_steps=300, seed=7, log_every=50)
    a = train(f, default_sampler(f, 7), ArchSpec("resnet", 2, 16), cfg)
    b = train(f, default_sampler(f, 7), ArchSpec("resnet", 2, 16), cfg)
    assert a.history == b.history
    np.testing.assert_array_equal(a.model.params, b.model.params)
    a.write_history_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "step,loss"
    assert len(a.history) == 6 and a.to_dict()["stop_reason"] == "max-steps"


def test_training_requirements():
    f = make_builtin("quadratic-over-linear", 2)
    spec = ArchSpec("mlp", 2, 8)
    with pytest.raises(ValueError):
        train(f, None, spec, TrainConfig(max_steps=5))
    with pytest.raises(ValueError):
        train(f, None, spec, TrainConfig(max_steps=5, loss_kind="direct"),
              dual_sampler=Sampler("standard-normal", 2, seed=0))
    with pytest.raises(ValueError):
        train(f, None, spec, TrainConfig(max_steps=5, loss_kind="proxy"))
    with pytest.raises(ValueError):
        train(f, default_sampler(f, 0), ArchSpec("mlp", 3, 8), TrainConfig(max_steps=5))


def test_quadratic_reaches_small_loss():
    f = make_builtin("quadratic", 2)
    rep = train(f, default_sampler(f, 0), ArchSpec("mlp", 2, 64),
                TrainConfig(batch_size=256, max_steps=20000, lr=1e-3, seed=0, early_stop_threshold=1e-12))
    assert rep.final_loss < 1e-4


def test_implicit_and_direct_match():
    f = make_builtin("quadratic", 2)
    spec = ArchSpec("mlp", 2, 32)
    X_test = default_sampler(f, 99).draw(4096)
    imp = train(f, default_sampler(f, 1), spec, TrainConfig(batch_size=256, max_steps=3000, seed=1))
    dirr = train(f, None, spec, TrainConfig(batch_size=256, max_steps=3000, seed=1, loss_kind="direct"),
                 dual_sampler=PushForwardSampler(f, default_sampler(f, 1)))
    ratio = evaluate_rmse(imp.model, f, X_test) / evaluate_rmse(dirr.model, f, X_test)
    assert 1 / 3 <= ratio <= 3


def test_estimator_api():
    f = make_builtin("neg-entropy", 2)
    est = DeepLegendreTransform(f, architecture="icnn", hidden_width=16, max_steps=300, batch_size=64)
    assert est.get_params()["architecture"] == "icnn"
    est.set_params(random_state=2)
    est.fit()
    X = default_sampler(f, 5).draw(200)
    Y = f.gradient(X)
    assert est.predict(Y).shape == (200,)
    assert est.score(X) == pytest.approx(-est.certify(X).rmse, rel=1e-12)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 3)))


def test_estimator_fit_on_points():
    f = make_builtin("quadratic", 1)
    X = np.linspace(-2, 2, 50)[:, None]
    est = DeepLegendreTransform(f, architecture="mlp", hidden_width=16, max_steps=200, batch_size=32).fit(X)
    assert np.isfinite(est.score(X))
    with pytest.raises(ValueError):
        DeepLegendreTransform(make_builtin("neg-log", 1), max_steps=5).fit(np.array([[-1.0]]))
    d = DeepLegendreTransform(f, loss="direct", hidden_width=8, max_steps=50, batch_size=16).fit(X)
    assert d.report_.steps == 50
