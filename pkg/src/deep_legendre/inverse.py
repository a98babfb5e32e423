"""Learned generalized inverse of ``grad f`` for sampling on the dual side.

A network ``h`` is pretrained on ``||h(grad f(x)) - x||^2`` over primal
samples, then refined on a convex combination of that loss and
``||grad f(h(y)) - y||^2`` over dual samples ``y ~ nu``. Dual samples whose
image ``h(y)`` leaves the domain are dropped from the step. Pushing ``nu``
through the fitted ``h`` gives primal training sets whose gradient images
follow ``nu``.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import child_seed
from .dlt import TrainingError, TrainReport
from .functions import ConvexFunction, Sampler, default_sampler
from .nn import AdamState, ArchSpec, NetworkModel, adam_step, init, mse_loss, value_and_grad, vjp
from .validation import check_points

__all__ = [
    "InverseTrainConfig",
    "pretrain_inverse",
    "refine_inverse",
    "inverse_quality",
    "generate_matched_sets",
    "InverseSampler",
    "InverseGradientSampler",
]


@dataclass
class InverseTrainConfig:
    pretrain_steps: int = 20000
    refine_steps: int = 40000
    mix_lambda: float = 0.5
    lr: float = 1e-3
    # halve the refine-phase learning rate every this many steps
    decay_every: Optional[int] = 20000
    pretrain_batch: int = 256
    refine_batch: int = 256
    seed: int = 0
    log_every: int = 100
    max_empty_steps: int = 10

    def __post_init__(self):
        if not 0.0 <= self.mix_lambda <= 1.0:
            raise ValueError("mix_lambda must lie in [0, 1]")
        if self.pretrain_steps < 0 or self.refine_steps < 0:
            raise ValueError("step budgets must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _apply(h, Y) -> np.ndarray:
    return h.predict(Y) if hasattr(h, "predict") else np.atleast_2d(np.asarray(h(Y), dtype=float))


def _check_inverse(h: NetworkModel, f: ConvexFunction):
    if h.spec.input_dim != f.dim or h.spec.output_dim != f.dim:
        raise ValueError("inverse network must map R^d to R^d")


def _log(history, step, acc, count):
    history.append((step, acc / count))


def pretrain_inverse(h: NetworkModel, f: ConvexFunction, primal_sampler, cfg: InverseTrainConfig) -> TrainReport:
    """Minimise ``mean ||h(grad f(x)) - x||^2`` over fresh primal batches."""
    _check_inverse(h, f)
    state = AdamState.for_model(h, lr=cfg.lr)
    history, acc, count, step, reason = [], 0.0, 0, 0, "max-steps"
    start = time.perf_counter()
    for step in range(1, cfg.pretrain_steps + 1):
        X = primal_sampler.draw(cfg.pretrain_batch)
        loss, grad = value_and_grad(h, mse_loss(X), f.gradient(X))
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            reason, step = "divergence", step - 1
            break
        adam_step(h, state, grad)
        acc, count = acc + loss, count + 1
        if step % cfg.log_every == 0:
            _log(history, step, acc, count)
            acc, count = 0.0, 0
    if count:
        _log(history, step, acc, count)
    return TrainReport(h, history, step, time.perf_counter() - start, reason)


def refine_losses(h: NetworkModel, f: ConvexFunction, Y, mix_lambda: float):
    """Mixed refine loss and its parameter gradient on one dual batch.

    Returns ``(loss, grad, omitted_fraction, min1, min2)``; ``grad`` is None
    when every sample was omitted. The first term treats the mapped points
    ``h(y)`` as fixed data.
    """
    Xh = h.predict(Y)
    keep = f.domain.contains(Xh)
    omitted = 1.0 - keep.mean()
    if not np.any(keep):
        return math.nan, None, omitted, math.nan, math.nan
    Xk, Yk = Xh[keep], Y[keep]
    n = Xk.shape[0]
    Gk = f.gradient(Xk)
    r2 = Gk - Yk
    min2 = float(np.sum(r2 * r2) / n)
    dout = np.zeros_like(Xh)
    dout[keep] = 2.0 * f.hessian_vector(Xk, r2) / n
    g2, _ = vjp(h, Y, dout)
    min1, g1 = value_and_grad(h, mse_loss(Xk), Gk)
    lam = mix_lambda
    return lam * min1 + (1 - lam) * min2, lam * g1 + (1 - lam) * g2, omitted, min1, min2


def refine_inverse(h: NetworkModel, f: ConvexFunction, dual_sampler, cfg: InverseTrainConfig) -> TrainReport:
    """Minimise ``lambda * min1 + (1 - lambda) * mean ||grad f(h(y)) - y||^2`` over retained ``y``."""
    _check_inverse(h, f)
    state = AdamState.for_model(h, lr=cfg.lr)
    history, omitted_hist = [], []
    acc = om_acc = min2_acc = 0.0
    count = om_count = 0
    empty, step, reason = 0, 0, "max-steps"
    start = time.perf_counter()
    for step in range(1, cfg.refine_steps + 1):
        if cfg.decay_every:
            state.lr = cfg.lr * 0.5 ** ((step - 1) // cfg.decay_every)
        Y = dual_sampler.draw(cfg.refine_batch)
        loss, grad, omitted, _, min2 = refine_losses(h, f, Y, cfg.mix_lambda)
        om_acc, om_count = om_acc + omitted, om_count + 1
        if grad is None:
            empty += 1
            if empty >= cfg.max_empty_steps:
                raise TrainingError(f"all dual samples omitted for {empty} consecutive steps")
            continue
        empty = 0
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            reason, step = "divergence", step - 1
            break
        adam_step(h, state, grad)
        acc, min2_acc, count = acc + loss, min2_acc + min2, count + 1
        if step % cfg.log_every == 0:
            history.append((step, acc / count))
            omitted_hist.append((step, om_acc / om_count, min2_acc / count))
            acc = om_acc = min2_acc = 0.0
            count = om_count = 0
    if count:
        history.append((step, acc / count))
        omitted_hist.append((step, om_acc / max(om_count, 1), min2_acc / count))
    report = TrainReport(h, history, step, time.perf_counter() - start, reason)
    report.extra["omitted"] = [list(r) for r in omitted_hist]
    return report


def inverse_quality(h, f: ConvexFunction, dual_test, side_length: float, return_excluded: bool = False):
    """``2 / (s sqrt(d))`` times the mean Euclidean deviation ``||grad f(h(y)) - y||``.

    Test points mapped outside the domain are excluded; more than half
    excluded is an error.
    """
    Y = check_points(dual_test, f.dim, "dual_test")
    if Y.shape[0] == 0:
        raise ValueError("empty test set")
    Xh = _apply(h, Y)
    keep = f.domain.contains(Xh)
    excluded = int((~keep).sum())
    if excluded > 0.5 * Y.shape[0]:
        raise ValueError(f"{excluded} of {Y.shape[0]} test points map outside the domain")
    dev = np.linalg.norm(f.gradient(Xh[keep]) - Y[keep], axis=1)
    q = 2.0 / (side_length * math.sqrt(f.dim)) * float(np.mean(dev))
    return (q, excluded) if return_excluded else q


def generate_matched_sets(h, f: ConvexFunction, dual_sampler, n_train: int, n_test: int):
    """Primal train/test sets ``C ∩ h(Y_train)`` and ``C ∩ h(Y_test)`` from independent dual draws."""
    out = []
    for n in (n_train, n_test):
        X = _apply(h, dual_sampler.draw(n))
        X = X[f.domain.contains(X)]
        if X.shape[0] < n / 2:
            raise ValueError(f"only {X.shape[0]} of {n} mapped points lie in the domain")
        out.append(X)
    return out[0], out[1]


class InverseSampler:
    """Primal sampler ``x = h(y)``, ``y ~ dual_sampler``, keeping only ``x`` in the domain."""

    def __init__(self, h, f: ConvexFunction, dual_sampler, max_rounds: int = 100):
        self.h = h
        self.f = f
        self.dual_sampler = dual_sampler
        self.dim = f.dim
        self.max_rounds = max_rounds
        self.seed = getattr(dual_sampler, "seed", None)

    def draw(self, n: int) -> np.ndarray:
        chunks, have = [], 0
        for _ in range(self.max_rounds):
            X = _apply(self.h, self.dual_sampler.draw(max(n - have, 1)))
            X = X[self.f.domain.contains(X)]
            chunks.append(X)
            have += X.shape[0]
            if have >= n:
                return np.concatenate(chunks)[:n]
        raise ValueError("inverse map keeps too few points inside the domain")


def _pilot(sampler, seed, n=4096):
    """``n`` draws from an independent copy of a catalog sampler; other samplers are drawn directly."""
    if isinstance(sampler, Sampler):
        return Sampler.from_dict({**sampler.to_dict(), "seed": seed}).draw(n)
    return None


class InverseGradientSampler(TransformerMixin, BaseEstimator):
    """Fit ``h`` with ``grad f(h(y)) ≈ y`` on the support of ``dual_sampler``.

    ``transform`` maps dual points to primal points; ``sample`` draws primal
    points whose gradient images follow the dual distribution.
    """

    def __init__(self, function=None, dual_sampler=None, primal_sampler=None, architecture="resnet",
                 hidden_width=128, pretrain_steps=20000, refine_steps=40000, mix_lambda=0.5,
                 learning_rate=1e-3, lr_decay_every=20000, batch_size=256, standardize=True,
                 log_every=100, random_state=0):
        self.function = function
        self.dual_sampler = dual_sampler
        self.primal_sampler = primal_sampler
        self.architecture = architecture
        self.hidden_width = hidden_width
        self.pretrain_steps = pretrain_steps
        self.refine_steps = refine_steps
        self.mix_lambda = mix_lambda
        self.learning_rate = learning_rate
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.standardize = standardize
        self.log_every = log_every
        self.random_state = random_state

    def _config(self) -> InverseTrainConfig:
        return InverseTrainConfig(self.pretrain_steps, self.refine_steps, self.mix_lambda,
                                  self.learning_rate, self.lr_decay_every, self.batch_size,
                                  self.batch_size, self.random_state, self.log_every)

    def fit(self, X=None, y=None):
        """Pretrain then refine. ``X`` and ``y`` are ignored."""
        f = self.function
        if f is None or self.dual_sampler is None:
            raise ValueError("InverseGradientSampler needs a function and a dual sampler")
        cfg = self._config()
        primal = self.primal_sampler or default_sampler(f, self.random_state)
        h = init(ArchSpec(self.architecture, f.dim, self.hidden_width, f.dim), self.random_state)
        if self.standardize:
            # whitening statistics come from independent pilot draws
            Xp = _pilot(primal, child_seed(self.random_state, "pilot"))
            if Xp is None:
                Xp = primal.draw(4096)
            Yp = _pilot(self.dual_sampler, child_seed(self.random_state, "pilot-dual"))
            if Yp is None:
                Yp = f.gradient(Xp)
            h.input_shift, h.input_scale = Yp.mean(axis=0), np.maximum(Yp.std(axis=0), 1e-12)
            h.output_shift, h.output_scale = Xp.mean(axis=0), np.maximum(Xp.std(axis=0), 1e-12)
        self.pretrain_report_ = pretrain_inverse(h, f, primal, cfg)
        self.refine_report_ = refine_inverse(h, f, self.dual_sampler, cfg)
        self.model_ = h
        self.n_features_in_ = f.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_points(X, self.n_features_in_))

    def sampler(self) -> InverseSampler:
        check_is_fitted(self, "model_")
        return InverseSampler(self.model_, self.function, self.dual_sampler)

    def sample(self, n: int) -> np.ndarray:
        return self.sampler().draw(n)

    def quality(self, Y, side_length: float) -> float:
        check_is_fitted(self, "model_")
        return inverse_quality(self.model_, self.function, Y, side_length)
