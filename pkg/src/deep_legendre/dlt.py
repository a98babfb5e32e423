"""Deep Legendre Transform: learn ``f*`` on ``D = grad f(C)`` from the implicit identity.

Every training step draws a fresh batch of primal points ``x`` and regresses
the network ``g`` at ``y = grad f(x)`` onto ``<x, y> - f(x)``, which equals
``f*(y)`` exactly. Two baselines share the same loop: ``direct`` (supervised on
closed-form ``f*``) and ``proxy`` (targets built from a learned inverse
gradient ``h``).
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .certificate import certify_points
from .functions import ConvexFunction, Sampler, default_sampler
from .nn import AdamState, ArchSpec, NetworkModel, adam_step, init, mse_loss, value_and_grad
from .validation import PoolSampler, check_in_domain, check_points, evaluate

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "implicit_loss",
    "direct_loss",
    "proxy_loss",
    "implicit_pairs",
    "direct_pairs",
    "proxy_pairs",
    "fit_regression",
    "train",
    "evaluate_rmse",
    "DeepLegendreTransform",
]

LOSS_KINDS = ("implicit", "direct", "proxy")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: Optional[int] = None
    max_steps: int = 50000
    early_stop_threshold: float = 1e-6
    lr: float = 1e-3
    seed: int = 0
    loss_kind: str = "implicit"
    log_every: int = 100
    lr_decay_every: Optional[int] = None

    def __post_init__(self):
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1 or self.log_every < 1:
            raise ValueError("max_steps and log_every must be >= 1")
        if not self.early_stop_threshold > 0 or not self.lr > 0:
            raise ValueError("thresholds and learning rate must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")

    def resolved_batch_size(self, dim: int) -> int:
        return self.batch_size or min(128 * dim, 4096)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainReport:
    model: NetworkModel
    history: list = field(default_factory=list)  # (step, mean batch loss over the interval)
    steps: int = 0
    seconds: float = 0.0
    stop_reason: str = "max-steps"
    extra: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.history[-1][1] if self.history else math.nan

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "seconds": self.seconds,
            "stop_reason": self.stop_reason,
            "final_loss": self.final_loss,
            "history": [list(h) for h in self.history],
            **self.extra,
        }

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for step, loss in self.history:
                w.writerow([step, repr(float(loss))])


# -- losses on explicit batches ---------------------------------------------

def implicit_loss(g, f: ConvexFunction, xs) -> float:
    """Mean of ``(g(grad f(x)) + f(x) - <x, grad f(x)>)^2``."""
    xs = check_in_domain(f, xs, "xs")
    G = f.gradient(xs)
    if not np.all(np.isfinite(G)):
        raise ValueError("non-finite gradient of f")
    r = evaluate(g, G) + f.value(xs) - np.einsum("ij,ij->i", xs, G)
    return float(np.mean(r * r))


def direct_loss(g, ys, conjugate) -> float:
    """Mean squared error of ``g`` against a closed-form conjugate on dual points."""
    if conjugate is None:
        raise ValueError("direct loss needs a closed-form conjugate")
    if isinstance(conjugate, ConvexFunction):
        conjugate = conjugate.conjugate
    ys = check_points(ys)
    r = evaluate(g, ys) - np.asarray(conjugate(ys), dtype=float)
    return float(np.mean(r * r))


def _proxy_targets(h, f: ConvexFunction, ys):
    Xh = h.predict(ys) if hasattr(h, "predict") else np.asarray(h(ys), dtype=float)
    Xh = np.atleast_2d(Xh)
    keep = f.domain.contains(Xh)
    if not np.any(keep):
        raise TrainingError("every sample in the batch was dropped (h(y) outside the domain)")
    Xk, Yk = Xh[keep], ys[keep]
    return Yk, np.einsum("ij,ij->i", Xk, Yk) - f.value(Xk), keep


def proxy_loss(g, h, f: ConvexFunction, ys) -> float:
    """Mean of ``(g(y) - [<h(y), y> - f(h(y))])^2`` over ``y`` with ``h(y)`` in the domain."""
    ys = check_points(ys, f.dim)
    Yk, target, _ = _proxy_targets(h, f, ys)
    r = evaluate(g, Yk) - target
    return float(np.mean(r * r))


# -- (dual point, target) streams --------------------------------------------

def implicit_pairs(f: ConvexFunction, sampler):
    def draw(n):
        X = sampler.draw(n)
        if not np.all(f.domain.contains(X)):
            raise ValueError("primal sampler emitted points outside the domain")
        G = f.gradient(X)
        return G, np.einsum("ij,ij->i", X, G) - f.value(X)

    return draw


def direct_pairs(f: ConvexFunction, dual_sampler):
    if not f.has_conjugate:
        raise ValueError("direct training needs a closed-form conjugate")

    def draw(n):
        Y = dual_sampler.draw(n)
        return Y, f.conjugate(Y)

    return draw


def proxy_pairs(f: ConvexFunction, inverse, dual_sampler):
    def draw(n):
        Y, target, _ = _proxy_targets(inverse, f, dual_sampler.draw(n))
        return Y, target

    return draw


def _standardize(model: NetworkModel, Y, t) -> None:
    sd = Y.std(axis=0)
    model.input_shift = Y.mean(axis=0)
    model.input_scale = np.where(sd > 1e-12, sd, 1.0)
    tsd = float(np.std(t))
    model.output_shift = np.array([float(np.mean(t))])
    model.output_scale = np.array([tsd if tsd > 1e-12 else 1.0])


def fit_regression(model: NetworkModel, draw, cfg: TrainConfig, batch_size: int) -> TrainReport:
    """Adam on fresh ``(y, target)`` batches until threshold, step budget or divergence."""
    state = AdamState.for_model(model, lr=cfg.lr)
    history, acc, count = [], 0.0, 0
    reason, step = "max-steps", 0
    start = time.perf_counter()
    for step in range(1, cfg.max_steps + 1):
        if cfg.lr_decay_every:
            state.lr = cfg.lr * 0.5 ** ((step - 1) // cfg.lr_decay_every)
        Y, t = draw(batch_size)
        loss, grad = value_and_grad(model, mse_loss(t[:, None]), Y)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            reason = "divergence"
            step -= 1
            break
        adam_step(model, state, grad)
        if not np.all(np.isfinite(model.params)):
            reason = "divergence"
            break
        acc += loss
        count += 1
        if step % cfg.log_every == 0:
            history.append((step, acc / count))
            acc, count = 0.0, 0
        if loss < cfg.early_stop_threshold:
            reason = "threshold"
            break
    if count:
        history.append((step, acc / count))
    return TrainReport(model, history, step, time.perf_counter() - start, reason)


def train(f: ConvexFunction, sampler, spec: ArchSpec, cfg: TrainConfig, *, dual_sampler=None,
          inverse=None, model: Optional[NetworkModel] = None, standardize: bool = True,
          pilot_size: int = 4096) -> TrainReport:
    """Train ``g`` to approximate ``f*``.

    ``implicit`` uses the primal ``sampler``; ``direct`` uses ``dual_sampler``
    and ``f.conjugate``; ``proxy`` uses ``dual_sampler`` and the inverse
    model ``inverse``.
    """
    if spec.input_dim != f.dim or spec.output_dim != 1:
        raise ValueError("architecture must map R^d to R")
    if cfg.loss_kind == "implicit":
        if sampler is None:
            raise ValueError("implicit training needs a primal sampler")
        draw = implicit_pairs(f, sampler)
    elif cfg.loss_kind == "direct":
        if dual_sampler is None:
            raise ValueError("direct training needs a dual sampler")
        draw = direct_pairs(f, dual_sampler)
    else:
        if dual_sampler is None or inverse is None:
            raise ValueError("proxy training needs a dual sampler and an inverse model")
        draw = proxy_pairs(f, inverse, dual_sampler)
    if model is None:
        model = init(spec, cfg.seed)
        if standardize:
            _standardize(model, *draw(pilot_size))
    return fit_regression(model, draw, cfg, cfg.resolved_batch_size(f.dim))


def evaluate_rmse(g, f: ConvexFunction, xs) -> float:
    """Root mean squared implicit residual on primal test points.

    Equals the RMSE of ``g`` against ``f*`` at ``grad f(xs)``.
    """
    xs = check_points(xs, f.dim)
    if xs.shape[0] == 0:
        raise ValueError("empty test set")
    return math.sqrt(implicit_loss(g, f, xs))


class DeepLegendreTransform(RegressorMixin, BaseEstimator):
    """Neural approximation of the convex conjugate of ``function``.

    Parameters
    ----------
    function : ConvexFunction
    architecture : {"mlp", "mlp-icnn", "resnet", "icnn"}
    hidden_width : int
    loss : {"implicit", "direct", "proxy"}
        ``direct`` needs a closed-form conjugate and ``dual_sampler``;
        ``proxy`` needs ``inverse`` (a map from dual to primal points) and
        ``dual_sampler``.
    sampler : Sampler or None
        Primal training distribution; defaults to the catalog choice.
    dual_sampler, inverse : optional
    batch_size : int or None
        Defaults to ``min(128 * d, 4096)``.
    max_steps, tol, learning_rate, lr_decay_every, log_every :
        Optimisation settings; training stops once a batch loss drops below ``tol``.
    standardize : bool
        Whiten network inputs and outputs using a pilot batch.
    random_state : int

    Attributes
    ----------
    model_ : NetworkModel
    report_ : TrainReport
    """

    def __init__(self, function=None, architecture="resnet", hidden_width=128, loss="implicit",
                 sampler=None, dual_sampler=None, inverse=None, batch_size=None, max_steps=50000,
                 tol=1e-6, learning_rate=1e-3, lr_decay_every=None, log_every=100,
                 standardize=True, random_state=0):
        self.function = function
        self.architecture = architecture
        self.hidden_width = hidden_width
        self.loss = loss
        self.sampler = sampler
        self.dual_sampler = dual_sampler
        self.inverse = inverse
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.tol = tol
        self.learning_rate = learning_rate
        self.lr_decay_every = lr_decay_every
        self.log_every = log_every
        self.standardize = standardize
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.max_steps, self.tol, self.learning_rate,
                           self.random_state, self.loss, self.log_every, self.lr_decay_every)

    def fit(self, X=None, y=None):
        """Train the network.

        With ``X`` given, minibatches are drawn from it instead of a sampler:
        primal points for ``implicit``, dual points for ``direct``/``proxy``.
        ``y`` is ignored.
        """
        f = self.function
        if f is None:
            raise ValueError("DeepLegendreTransform needs a function")
        cfg = self._config()
        sampler, dual = self.sampler, self.dual_sampler
        if X is not None:
            X = check_in_domain(f, X) if cfg.loss_kind == "implicit" else check_points(X, f.dim)
            pool = PoolSampler(X, self.random_state)
            sampler, dual = (pool, dual) if cfg.loss_kind == "implicit" else (sampler, pool)
        elif cfg.loss_kind == "implicit" and sampler is None:
            sampler = default_sampler(f, self.random_state)
        spec = ArchSpec(self.architecture, f.dim, self.hidden_width, 1)
        self.report_ = train(f, sampler, spec, cfg, dual_sampler=dual, inverse=self.inverse,
                             standardize=self.standardize)
        self.model_ = self.report_.model
        self.n_features_in_ = f.dim
        return self

    def predict(self, X):
        """Approximate ``f*`` at dual points."""
        check_is_fitted(self, "model_")
        return self.model_(check_points(X, self.n_features_in_))

    def certify(self, X, level: float = 0.95):
        """Error certificate on primal test points ``X``."""
        check_is_fitted(self, "model_")
        return certify_points(self.model_, self.function, check_in_domain(self.function, X), level)

    def score(self, X, y=None):
        """Negative certificate RMSE on primal points ``X`` (higher is better)."""
        check_is_fitted(self, "model_")
        return -evaluate_rmse(self.model_, self.function, X)
