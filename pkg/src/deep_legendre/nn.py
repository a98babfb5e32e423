"""Small dense networks with exact reverse-mode gradients.

Four fixed architectures, all float64:

* ``mlp``      two GELU hidden layers, linear head
* ``resnet``   linear stem, two residual blocks ``h + dense(gelu(dense(h)))``, linear head
* ``mlp-icnn`` ``mlp`` layout with softplus and nonnegative hidden/head weights
* ``icnn``     softplus layers ``z' = sp(Wz z + Wx x + b)`` with ``Wz >= 0`` and an x-skip per layer

Parameters live in one flat vector; named tensors are reshaped views into it,
so the optimizer can update the vector in place.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ._rng import make_rng

__all__ = [
    "FAMILIES",
    "ArchSpec",
    "NetworkModel",
    "AdamState",
    "init",
    "forward",
    "grad_params",
    "value_and_grad",
    "grad_input",
    "vjp",
    "vjp_input",
    "adam_step",
    "mse_loss",
    "save_checkpoint",
    "load_checkpoint",
    "gelu",
    "softplus",
]

FAMILIES = ("mlp", "mlp-icnn", "resnet", "icnn")
_ACTIVATION = {"mlp": "gelu", "resnet": "gelu", "mlp-icnn": "softplus", "icnn": "softplus"}

_C = np.sqrt(2.0 / np.pi)
_K = 0.044715


def gelu(x):
    return _gelu_and_grad(x)[0]


def _gelu_and_grad(x):
    x2 = x * x
    th = np.tanh(_C * x * (1.0 + _K * x2))
    a = 0.5 * x * (1.0 + th)
    da = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _C * (1.0 + 3.0 * _K * x2)
    return a, da


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _softplus_and_grad(x):
    return softplus(x), 0.5 * (1.0 + np.tanh(0.5 * x))


_ACT = {"gelu": _gelu_and_grad, "softplus": _softplus_and_grad}


@dataclass(frozen=True)
class ArchSpec:
    family: str
    input_dim: int
    hidden_width: int = 128
    output_dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.input_dim < 1 or self.hidden_width < 1 or self.output_dim < 1:
            raise ValueError("dimensions and width must be >= 1")

    @property
    def activation(self) -> str:
        return _ACTIVATION[self.family]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**{k: d[k] for k in ("family", "input_dim", "hidden_width", "output_dim") if k in d})


def _layout(spec: ArchSpec) -> tuple[list[tuple[str, tuple]], tuple[str, ...]]:
    n, w, o = spec.input_dim, spec.hidden_width, spec.output_dim
    if spec.family in ("mlp", "mlp-icnn"):
        shapes = [("W0", (n, w)), ("b0", (w,)), ("W1", (w, w)), ("b1", (w,)), ("W2", (w, o)), ("b2", (o,))]
        nonneg = ("W1", "W2") if spec.family == "mlp-icnn" else ()
    elif spec.family == "resnet":
        shapes = [("Ws", (n, w)), ("bs", (w,))]
        for k in (1, 2):
            shapes += [(f"A{k}", (w, w)), (f"a{k}", (w,)), (f"B{k}", (w, w)), (f"c{k}", (w,))]
        shapes += [("Wh", (w, o)), ("bh", (o,))]
        nonneg = ()
    else:
        shapes = [
            ("Wx0", (n, w)), ("b0", (w,)),
            ("Wz1", (w, w)), ("Wx1", (n, w)), ("b1", (w,)),
            ("Wz2", (w, o)), ("Wx2", (n, o)), ("b2", (o,)),
        ]
        nonneg = ("Wz1", "Wz2")
    return shapes, nonneg


class NetworkModel:
    """Architecture + flat parameter vector.

    ``input_shift/input_scale`` and ``output_shift/output_scale`` are a fixed
    affine whitening around the network, ``y = out_scale * net((x - in_shift) / in_scale) + out_shift``.
    They are not trained. Positive scales keep input-convex families convex.
    """

    def __init__(self, spec: ArchSpec, params: np.ndarray, seed: Optional[int] = None,
                 input_shift=None, input_scale=None, output_shift=None, output_scale=None):
        self.spec = spec
        shapes, self.nonneg = _layout(spec)
        self.layout: dict[str, tuple[int, tuple]] = {}
        offset = 0
        for name, shape in shapes:
            self.layout[name] = (offset, shape)
            offset += int(np.prod(shape))
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {params.shape}")
        self.params = params
        self.seed = seed
        self.input_shift = np.zeros(spec.input_dim) if input_shift is None else np.asarray(input_shift, float)
        self.input_scale = np.ones(spec.input_dim) if input_scale is None else np.asarray(input_scale, float)
        self.output_shift = np.zeros(spec.output_dim) if output_shift is None else np.asarray(output_shift, float)
        self.output_scale = np.ones(spec.output_dim) if output_scale is None else np.asarray(output_scale, float)
        if np.any(self.input_scale <= 0) or np.any(self.output_scale <= 0):
            raise ValueError("scales must be positive")

    @property
    def n_params(self) -> int:
        return self.params.size

    def tensor(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return self.params[offset: offset + int(np.prod(shape))].reshape(shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: self.tensor(name) for name in self.layout}

    def project(self) -> None:
        """Clamp the z-path weights of input-convex families to >= 0 (in place)."""
        for name in self.nonneg:
            np.maximum(self.tensor(name), 0.0, out=self.tensor(name))

    def copy(self) -> "NetworkModel":
        return NetworkModel(self.spec, self.params.copy(), self.seed, self.input_shift.copy(),
                            self.input_scale.copy(), self.output_shift.copy(), self.output_scale.copy())

    def scaling(self) -> dict:
        return {
            "input_shift": self.input_shift.tolist(), "input_scale": self.input_scale.tolist(),
            "output_shift": self.output_shift.tolist(), "output_scale": self.output_scale.tolist(),
        }

    def predict(self, X) -> np.ndarray:
        return forward(self, X)

    def __call__(self, X):
        out = forward(self, X)
        return out[:, 0] if self.spec.output_dim == 1 else out

    def input_gradient(self, X) -> np.ndarray:
        return grad_input(self, X)

    def __repr__(self):
        return f"NetworkModel({self.spec.family}, in={self.spec.input_dim}, width={self.spec.hidden_width}, params={self.n_params})"


def init(spec: ArchSpec, seed: int = 0) -> NetworkModel:
    """Gaussian init ``N(0, 1/fan_in)`` with zero biases; z-path weights squared."""
    shapes, nonneg = _layout(spec)
    rng = make_rng(seed, "init", spec.family)
    chunks = []
    for name, shape in shapes:
        if len(shape) == 1:
            chunks.append(np.zeros(shape[0]))
            continue
        W = rng.standard_normal(shape) / np.sqrt(shape[0])
        if name in nonneg:
            W = W * W
        chunks.append(W.ravel())
    return NetworkModel(spec, np.concatenate(chunks), seed)


def _check_input(model: NetworkModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected input of width {model.spec.input_dim}, got shape {X.shape}")
    return X


def _forward(model: NetworkModel, X: np.ndarray):
    T = model.tensors()
    act = _ACT[model.spec.activation]
    Xs = (X - model.input_shift) / model.input_scale
    fam = model.spec.family
    if fam in ("mlp", "mlp-icnn"):
        a0, d0 = act(Xs @ T["W0"] + T["b0"])
        a1, d1 = act(a0 @ T["W1"] + T["b1"])
        y = a1 @ T["W2"] + T["b2"]
        cache = (Xs, d0, a0, d1, a1)
    elif fam == "resnet":
        h0 = Xs @ T["Ws"] + T["bs"]
        v1, d1 = act(h0 @ T["A1"] + T["a1"])
        h1 = h0 + v1 @ T["B1"] + T["c1"]
        v2, d2 = act(h1 @ T["A2"] + T["a2"])
        h2 = h1 + v2 @ T["B2"] + T["c2"]
        y = h2 @ T["Wh"] + T["bh"]
        cache = (Xs, h0, d1, v1, h1, d2, v2, h2)
    else:
        z1, d1 = act(Xs @ T["Wx0"] + T["b0"])
        z2, d2 = act(z1 @ T["Wz1"] + Xs @ T["Wx1"] + T["b1"])
        y = z2 @ T["Wz2"] + Xs @ T["Wx2"] + T["b2"]
        cache = (Xs, d1, z1, d2, z2)
    return y * model.output_scale + model.output_shift, cache


def _backward(model: NetworkModel, cache, dout: np.ndarray, need_params: bool = True):
    """Vector-Jacobian product: returns (dL/dparams flat or None, dL/dX)."""
    T = model.tensors()
    G = np.zeros_like(model.params) if need_params else None

    def put(name, value):
        if need_params:
            offset, shape = model.layout[name]
            G[offset: offset + value.size] = value.ravel()

    dy = dout * model.output_scale
    fam = model.spec.family
    if fam in ("mlp", "mlp-icnn"):
        Xs, d0, a0, d1, a1 = cache
        put("W2", a1.T @ dy)
        put("b2", dy.sum(axis=0))
        dz1 = (dy @ T["W2"].T) * d1
        put("W1", a0.T @ dz1)
        put("b1", dz1.sum(axis=0))
        dz0 = (dz1 @ T["W1"].T) * d0
        put("W0", Xs.T @ dz0)
        put("b0", dz0.sum(axis=0))
        dXs = dz0 @ T["W0"].T
    elif fam == "resnet":
        Xs, h0, d1, v1, h1, d2, v2, h2 = cache
        put("Wh", h2.T @ dy)
        put("bh", dy.sum(axis=0))
        dh2 = dy @ T["Wh"].T
        put("B2", v2.T @ dh2)
        put("c2", dh2.sum(axis=0))
        du2 = (dh2 @ T["B2"].T) * d2
        put("A2", h1.T @ du2)
        put("a2", du2.sum(axis=0))
        dh1 = dh2 + du2 @ T["A2"].T
        put("B1", v1.T @ dh1)
        put("c1", dh1.sum(axis=0))
        du1 = (dh1 @ T["B1"].T) * d1
        put("A1", h0.T @ du1)
        put("a1", du1.sum(axis=0))
        dh0 = dh1 + du1 @ T["A1"].T
        put("Ws", Xs.T @ dh0)
        put("bs", dh0.sum(axis=0))
        dXs = dh0 @ T["Ws"].T
    else:
        Xs, d1, z1, d2, z2 = cache
        put("Wz2", z2.T @ dy)
        put("Wx2", Xs.T @ dy)
        put("b2", dy.sum(axis=0))
        du2 = (dy @ T["Wz2"].T) * d2
        put("Wz1", z1.T @ du2)
        put("Wx1", Xs.T @ du2)
        put("b1", du2.sum(axis=0))
        du1 = (du2 @ T["Wz1"].T) * d1
        put("Wx0", Xs.T @ du1)
        put("b0", du1.sum(axis=0))
        dXs = du1 @ T["Wx0"].T + du2 @ T["Wx1"].T + dy @ T["Wx2"].T
    return G, dXs / model.input_scale


def forward(model: NetworkModel, X) -> np.ndarray:
    """Network outputs, shape ``(n, output_dim)``."""
    return _forward(model, _check_input(model, X))[0]


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def value_and_grad(model: NetworkModel, loss_fn: LossFn, X) -> tuple[float, np.ndarray]:
    """Loss and its exact parameter gradient.

    ``loss_fn`` maps the ``(n, output_dim)`` output block to ``(loss, dloss/doutput)``.
    """
    X = _check_input(model, X)
    out, cache = _forward(model, X)
    loss, dout = loss_fn(out)
    dout = np.asarray(dout, dtype=float)
    if dout.shape != out.shape:
        raise ValueError(f"loss gradient has shape {dout.shape}, expected {out.shape}")
    G, _ = _backward(model, cache, dout)
    return float(loss), G


def grad_params(model: NetworkModel, loss_fn: LossFn, X) -> np.ndarray:
    return value_and_grad(model, loss_fn, X)[1]


def vjp(model: NetworkModel, X, dout) -> tuple[np.ndarray, np.ndarray]:
    """Reverse pass for an arbitrary upstream gradient: ``(dL/dparams, dL/dX)``."""
    X = _check_input(model, X)
    _, cache = _forward(model, X)
    return _backward(model, cache, np.asarray(dout, dtype=float))


def vjp_input(model: NetworkModel, X, dout) -> np.ndarray:
    """``dout^T J_x`` per row: gradient of ``sum(dout * model(X))`` w.r.t. ``X``."""
    X = _check_input(model, X)
    _, cache = _forward(model, X)
    return _backward(model, cache, np.asarray(dout, dtype=float), need_params=False)[1]


def grad_input(model: NetworkModel, X) -> np.ndarray:
    """Input gradient of a scalar-output network, shape ``(n, input_dim)``."""
    if model.spec.output_dim != 1:
        raise ValueError("grad_input needs a scalar-output model; use vjp_input")
    X = _check_input(model, X)
    return vjp_input(model, X, np.ones((X.shape[0], 1)))


def mse_loss(target) -> LossFn:
    """Mean over rows of the squared Euclidean error against ``target``."""
    target = np.asarray(target, dtype=float)

    def loss(out):
        t = target.reshape(out.shape)
        r = out - t
        n = out.shape[0]
        return float(np.sum(r * r) / n), 2.0 * r / n

    return loss


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: NetworkModel, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(model.n_params), np.zeros(model.n_params), lr=lr, **kw)


def adam_step(model: NetworkModel, state: AdamState, grad: np.ndarray):
    """Bias-corrected Adam update in place, then the ICNN projection."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != model.params.shape or state.m.shape != model.params.shape:
        raise ValueError("gradient / optimizer state length does not match the parameters")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    model.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    model.project()
    return model, state


def _header(model: NetworkModel) -> dict:
    return {
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "param_count": model.n_params,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "scaling": model.scaling(),
    }


def save_checkpoint(model: NetworkModel, path) -> None:
    """One JSON header line, then the raw little-endian float64 parameter block."""
    with open(path, "wb") as fh:
        fh.write(json.dumps(_header(model), sort_keys=True).encode("utf-8") + b"\n")
        fh.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkModel:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    params = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(np.float64)
    if params.size != header["param_count"]:
        raise ValueError(f"checkpoint holds {params.size} parameters, header says {header['param_count']}")
    spec = ArchSpec.from_dict(header["spec"])
    return NetworkModel(spec, params, header.get("seed"), **header.get("scaling", {}))
