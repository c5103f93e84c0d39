"""Feed-forward functional models trained by mini-batch SGD with hand-written backpropagation.

Each layer computes ``x -> S(W x + b)`` with a fixed connectivity mask on
``W``. The cost over a batch is ``sum_b sum_o w_b (pred - y)**2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .statevector import RandomStream

ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "softsign": (lambda z: z / (1.0 + np.abs(z)), lambda z, a: 1.0 / (1.0 + np.abs(z)) ** 2),
    "sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda z, a: a * (1.0 - a)),
}

SIGNATURES = {
    "E[v]": (("v",), "E"),
    "n[v]": (("v",), "n"),
    "vs[v]": (("v",), "vs"),
    # E[n] is the universal part F[n]; both learn E - n.v
    "F[n]": (("n",), "E"),
    "E[n]": (("n",), "E"),
    "E[n,v]": (("n", "v"), "E"),
}


@dataclass
class TrainingSample:
    """One labeled system; ``source`` is ``"oracle"``, ``"qae"`` or ``"qpe"``."""

    v: np.ndarray | None = None
    n: np.ndarray | None = None
    E: float | None = None
    v_s: np.ndarray | None = None
    source: str = "oracle"
    weight: float = 1.0

    def __post_init__(self):
        if self.source not in ("oracle", "qae", "qpe"):
            raise ValueError(f"unknown sample source {self.source!r}")
        if self.weight < 0:
            raise ValueError("sample weight must be non-negative")

    def has(self, signature: str) -> bool:
        inputs, out = SIGNATURES[signature]
        need = {"v": self.v, "n": self.n, "E": self.E, "vs": self.v_s}
        extra = ("v",) if inputs == ("n",) else ()
        return all(need[k] is not None for k in (*inputs, out, *extra))

    def features(self, signature: str) -> tuple[np.ndarray, np.ndarray]:
        if not self.has(signature):
            raise ValueError(f"sample lacks fields for {signature}")
        inputs, out = SIGNATURES[signature]
        get = {"v": self.v, "n": self.n, "E": self.E, "vs": self.v_s}
        x = np.concatenate([np.atleast_1d(np.asarray(get[k], dtype=float)) for k in inputs])
        if inputs == ("n",):
            # density-only models learn F[n] = E - n.v
            if self.v is None:
                raise ValueError(f"sample lacks v needed for {signature}")
            return x, np.array([float(self.E) - float(np.dot(self.n, self.v))])
        return x, np.atleast_1d(np.asarray(get[out], dtype=float))


def samples_to_arrays(samples: Sequence[TrainingSample], signature: str):
    """Stack samples into ``(X, Y, weights)``; refuses samples missing a needed field."""
    if not samples:
        raise ValueError("no training samples")
    pairs = [s.features(signature) for s in samples]
    return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]),
            np.array([s.weight for s in samples]))


def banded_mask(n_out: int, n_in: int, bandwidth: int) -> np.ndarray:
    """Local connectivity: output ``i`` sees inputs within ``bandwidth`` of its matching position."""
    ratio = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * ratio - 0.5
    reach = bandwidth * max(1.0, ratio) + 1e-9
    return (np.abs(np.arange(n_in)[None, :] - centers[:, None]) <= reach).astype(float)


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    mask: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.W.shape != self.mask.shape or self.b.shape != (self.W.shape[0],):
            raise ValueError("inconsistent layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.W = self.W * self.mask

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.mask.copy(), self.activation)


@dataclass
class MLModel:
    """Stack of masked affine layers plus nonlinearities.

    ``signature`` names what the model maps, e.g. ``"E[v]"``. ``metadata``
    carries the training manifold (input ranges, electron number).
    """

    layers: list[Layer]
    signature: str = "E[v]"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.signature not in SIGNATURES:
            raise ValueError(f"unknown signature {self.signature!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise ValueError("layer widths do not chain")

    @classmethod
    def build(cls, n_in: int, n_out: int, hidden: Sequence[int] = (), activation: str = "tanh",
              bandwidth: int | None = None, signature: str = "E[v]", rng: np.random.Generator | None = None,
              output_activation: str = "identity", init_scale: float = 1.0) -> "MLModel":
        """Random initialization (scaled normal) with optional banded hidden masks."""
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [n_in, *hidden, n_out]
        layers = []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            mask = np.ones((b, a)) if (bandwidth is None or (last and b == 1)) else banded_mask(b, a, bandwidth)
            fan_in = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
            W = rng.normal(size=(b, a)) * init_scale / np.sqrt(fan_in)
            layers.append(Layer(W, np.zeros(b), mask, output_activation if last else activation))
        return cls(layers, signature)

    @property
    def n_in(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def n_parameters(self) -> int:
        return int(sum(l.mask.sum() + l.b.size for l in self.layers))

    def copy(self) -> "MLModel":
        return MLModel([l.copy() for l in self.layers], self.signature, json.loads(json.dumps(self.metadata)))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def set_flat(self, theta: np.ndarray) -> "MLModel":
        out = self.copy()
        k = 0
        for l in out.layers:
            nW = l.W.size
            l.W = theta[k:k + nW].reshape(l.W.shape) * l.mask
            k += nW
            l.b = theta[k:k + l.b.size].copy()
            k += l.b.size
        return out


def _check_input(model: MLModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.n_in:
        raise ValueError(f"model expects {model.n_in} inputs, got {X.shape[1]}")
    return X, single


def forward(model: MLModel, X, return_cache: bool = False):
    """Evaluate the model on one input vector or a batch of rows."""
    X, single = _check_input(model, X)
    a = X
    cache = [(None, a)]
    for l in model.layers:
        z = a @ l.W.T + l.b
        a = ACTIVATIONS[l.activation][0](z)
        cache.append((z, a))
    out = a[0] if single else a
    return (out, cache) if return_cache else out


@dataclass
class CostReport:
    """Batch cost ``value == sum(residuals**2)``."""

    value: float
    residuals: np.ndarray
    indices: np.ndarray
    eta: float = 0.0
    halvings: int = 0


def cost(model: MLModel, X, Y, weights=None, indices=None) -> CostReport:
    X, _ = _check_input(model, X)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    r = np.sqrt(w)[:, None] * (forward(model, X) - Y)
    idx = np.arange(len(X)) if indices is None else np.asarray(indices)
    return CostReport(float(np.sum(r * r)), r, idx)


def backward(model: MLModel, X, Y, weights=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of the batch cost with respect to every ``(W, b)``; masked entries get zero."""
    X, _ = _check_input(model, X)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    out, cache = forward(model, X, return_cache=True)
    delta = 2.0 * w[:, None] * (out - Y)
    grads = []
    for k in range(len(model.layers) - 1, -1, -1):
        l = model.layers[k]
        z, a = cache[k + 1]
        delta = delta * ACTIVATIONS[l.activation][1](z, a)
        a_prev = cache[k][1]
        grads.append(((delta.T @ a_prev) * l.mask, delta.sum(axis=0)))
        delta = delta @ l.W
    return grads[::-1]


def input_gradient(model: MLModel, X) -> np.ndarray:
    """``d output / d input`` by backpropagation; shape ``(batch, n_out, n_in)`` or ``(n_out, n_in)``."""
    X, single = _check_input(model, X)
    _, cache = forward(model, X, return_cache=True)
    J = np.broadcast_to(np.eye(model.n_out), (len(X), model.n_out, model.n_out)).copy()
    for k in range(len(model.layers) - 1, -1, -1):
        l = model.layers[k]
        z, a = cache[k + 1]
        J = J * ACTIVATIONS[l.activation][1](z, a)[:, None, :]
        J = J @ l.W
    return J[0] if single else J


def _flat_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def sgd_step(model: MLModel, X, Y, eta: float, weights=None, line_check: bool = True, max_halvings: int = 40,
             velocity: np.ndarray | None = None,
             momentum: float = 0.0) -> tuple[MLModel, CostReport, np.ndarray | None]:
    """One update ``w <- w - eta * grad`` on a mini-batch.

    With ``line_check`` the step is halved until the cost over the same batch
    strictly decreases; if no step decreases it, the model is returned
    unchanged. Returns ``(model, report, velocity)``.
    """
    if eta < 0:
        raise ValueError("learning rate must be non-negative")
    before = cost(model, X, Y, weights)
    if eta == 0:
        before.eta = 0.0
        return model, before, velocity
    g = _flat_grads(backward(model, X, Y, weights))
    if not np.all(np.isfinite(g)):
        bad = int(np.sum(~np.isfinite(g)))
        raise FloatingPointError(f"non-finite gradient ({bad} entries); batch cost {before.value!r}, eta {eta!r}")
    theta = model.flat()
    direction = g if velocity is None else momentum * velocity + g
    step = eta
    for h in range(max_halvings + 1):
        trial = model.set_flat(theta - step * direction)
        after = cost(trial, X, Y, weights)
        if not line_check or after.value < before.value:
            after.eta = step
            after.halvings = h
            return trial, after, (direction if velocity is not None else None)
        step *= 0.5
        if velocity is not None and h == 0:
            direction = g
    before.eta = 0.0
    before.halvings = max_halvings
    return model, before, (np.zeros_like(g) if velocity is not None else None)


@dataclass
class LearningCurve:
    epochs: list[int] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    eta: list[float] = field(default_factory=list)


def train(model: MLModel, X, Y, epochs: int = 1000, batch_size: int | None = None,
          eta: float | Callable[[int], float] = 0.05, rng: RandomStream | None = None, weights=None,
          momentum: float = 0.0, patience: int = 200, min_improvement: float = 1e-12,
          adapt: float = 1.0) -> tuple[MLModel, LearningCurve]:
    """Mini-batch SGD over ``epochs`` passes with early stopping on a plateau.

    ``eta`` may be a float or a function of the epoch. With ``adapt > 1`` the
    step found by the line check is multiplied by ``adapt`` for the next
    batch (and the schedule only caps it).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty dataset")
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    rng = RandomStream(0) if rng is None else rng
    bs = len(X) if batch_size is None else int(batch_size)
    schedule = eta if callable(eta) else (lambda e, c=eta: c)
    curve = LearningCurve()
    best = cost(model, X, Y, w).value
    stale = 0
    velocity = np.zeros(model.flat().size) if momentum > 0 else None
    current = None
    for ep in range(epochs):
        cap = schedule(ep)
        order = np.argsort(rng.uniform(len(X)), kind="stable") if bs < len(X) else np.arange(len(X))
        for start in range(0, len(X), bs):
            idx = order[start:start + bs]
            step = cap if current is None else min(cap, current * adapt)
            model, rep, velocity = sgd_step(model, X[idx], Y[idx], step, w[idx], velocity=velocity,
                                            momentum=momentum)
            current = rep.eta if rep.eta > 0 else step * 0.5
        full = cost(model, X, Y, w).value
        curve.epochs.append(ep)
        curve.cost.append(full)
        curve.eta.append(current)
        if full < best * (1 - min_improvement) - 1e-300:
            best = full
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return model, curve


def functional_derivative_backprop(model: MLModel, point, wrt: str | None = None) -> np.ndarray:
    """Derivative of a scalar model output with respect to one input block.

    For ``E[n,v]`` pass ``wrt="n"`` or ``"v"``; single-input signatures use
    their only input.
    """
    inputs, out = SIGNATURES[model.signature]
    if model.n_out != 1:
        raise ValueError("functional derivatives need a scalar output")
    wrt = inputs[0] if wrt is None else wrt
    if wrt not in inputs:
        raise ValueError(f"model {model.signature} has no input {wrt!r}")
    J = input_gradient(model, np.asarray(point, dtype=float))[0]
    if len(inputs) == 1:
        return J
    half = model.n_in // 2
    return J[:half] if wrt == inputs[0] else J[half:]


def save_model(model: MLModel, path) -> None:
    """Write a model as JSON; floats use ``repr`` so the file round-trips exactly."""
    doc = {
        "signature": model.signature,
        "metadata": model.metadata,
        "layers": [{
            "shape": list(l.W.shape),
            "activation": l.activation,
            "mask": l.mask.astype(int).tolist(),
            "W": [repr(float(x)) for x in l.W.ravel()],
            "b": [repr(float(x)) for x in l.b],
        } for l in model.layers],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path) -> MLModel:
    doc = json.loads(Path(path).read_text())
    layers = []
    for d in doc["layers"]:
        shape = tuple(d["shape"])
        W = np.array([float(x) for x in d["W"]]).reshape(shape)
        layers.append(Layer(W, np.array([float(x) for x in d["b"]]), np.array(d["mask"], dtype=float),
                            d["activation"]))
    return MLModel(layers, doc["signature"], doc.get("metadata", {}))


class FunctionalRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn wrapper around :class:`MLModel` with standardized inputs and targets.

    Parameters
    ----------
    signature : str
        One of ``E[v]``, ``n[v]``, ``vs[v]``, ``F[n]``, ``E[n]``, ``E[n,v]``.
    hidden_layers : int
    width : int, optional
        Hidden width; ``4 * n_features`` by default.
    bandwidth : int, optional
        Banded hidden masks when set.
    """

    def __init__(self, signature: str = "E[v]", hidden_layers: int = 2, width: int | None = None,
                 activation: str = "tanh", bandwidth: int | None = None, epochs: int = 20000,
                 batch_size: int | None = None, eta: float = 0.05, momentum: float = 0.9, adapt: float = 1.1,
                 patience: int = 2000, seed: int = 0):
        self.signature = signature
        self.hidden_layers = hidden_layers
        self.width = width
        self.activation = activation
        self.bandwidth = bandwidth
        self.epochs = epochs
        self.batch_size = batch_size
        self.eta = eta
        self.momentum = momentum
        self.adapt = adapt
        self.patience = patience
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y2 = y.reshape(len(y), -1)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y2.shape[1]
        self.x_scaler_ = StandardScaler().fit(X)
        self.y_scaler_ = StandardScaler().fit(y2)
        width = 4 * self.n_features_in_ if self.width is None else self.width
        model = MLModel.build(self.n_features_in_, self.n_outputs_, [width] * self.hidden_layers,
                              self.activation, self.bandwidth, self.signature,
                              np.random.default_rng(self.seed))
        model.metadata = {
            "input_min": X.min(axis=0).tolist(),
            "input_max": X.max(axis=0).tolist(),
            "n_samples": int(len(X)),
        }
        Xs = self.x_scaler_.transform(X)
        ys = self.y_scaler_.transform(y2)
        self.model_, self.curve_ = train(model, Xs, ys, self.epochs, self.batch_size, self.eta,
                                         RandomStream(self.seed), sample_weight, self.momentum, self.patience,
                                         adapt=self.adapt)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = self.y_scaler_.inverse_transform(forward(self.model_, self.x_scaler_.transform(X)))
        return out[:, 0] if self.n_outputs_ == 1 else out

    def derivative(self, X) -> np.ndarray:
        """``d prediction / d input`` in original units, shape ``(n_samples, n_features)`` for scalar outputs."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        J = input_gradient(self.model_, self.x_scaler_.transform(X))
        J = J * self.y_scaler_.scale_[None, :, None] / self.x_scaler_.scale_[None, None, :]
        return J[:, 0, :] if self.n_outputs_ == 1 else J

    def in_manifold(self, X, slack: float = 0.0) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo = np.asarray(self.model_.metadata["input_min"])
        hi = np.asarray(self.model_.metadata["input_max"])
        span = (hi - lo) * slack
        return np.all((X >= lo - span - 1e-12) & (X <= hi + span + 1e-12), axis=1)

    def to_model(self) -> MLModel:
        """Fold the scalers into the first and last layers, giving a self-contained model."""
        check_is_fitted(self, "model_")
        m = self.model_.copy()
        first, last = m.layers[0], m.layers[-1]
        mu, sd = self.x_scaler_.mean_, self.x_scaler_.scale_
        first.b = first.b - first.W @ (mu / sd)
        first.W = first.W / sd[None, :]
        if last.activation != "identity":
            raise ValueError("folding needs a linear output layer")
        ym, ys = self.y_scaler_.mean_, self.y_scaler_.scale_
        last.W = last.W * ys[:, None]
        last.b = last.b * ys + ym
        return m


class KohnShamInverter(TransformerMixin, BaseEstimator):
    """Maps interacting densities to gauge-fixed Kohn-Sham potentials."""

    def __init__(self, n_electrons: int = 2, t: float = 1.0, tol: float = 1e-6, eta: float = 0.5,
                 max_iters: int = 20000):
        self.n_electrons = n_electrons
        self.t = t
        self.tol = tol
        self.eta = eta
        self.max_iters = max_iters

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        from .dft import invert_to_ks
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = []
        self.converged_ = []
        for n in X:
            res = invert_to_ks(n, self.n_electrons, eta=self.eta, tol=self.tol, max_iters=self.max_iters, t=self.t)
            out.append(res.v_s)
            self.converged_.append(res.converged)
        return np.array(out)


class ModelFunctional:
    """Adapter exposing an ``F[n]`` model to :func:`rwmp_lab.dft.euler_lagrange_solve`."""

    def __init__(self, model: MLModel):
        if SIGNATURES[model.signature][0] != ("n",):
            raise ValueError("Euler-Lagrange solves need an F[n] or E[n] model")
        self.model = model

    def value(self, n):
        return float(forward(self.model, n)[0])

    def gradient(self, n):
        return functional_derivative_backprop(self.model, n)

    def in_manifold(self, n) -> bool:
        md = self.model.metadata
        if "input_min" not in md:
            return True
        n = np.asarray(n)
        lo, hi = np.asarray(md["input_min"]), np.asarray(md["input_max"])
        return bool(np.all(n >= lo - 1e-12) and np.all(n <= hi + 1e-12))


__all__ = [
    "MLModel", "Layer", "TrainingSample", "samples_to_arrays", "banded_mask", "forward", "backward", "cost",
    "CostReport", "sgd_step", "train",
    "LearningCurve", "input_gradient", "functional_derivative_backprop", "save_model", "load_model",
    "FunctionalRegressor", "KohnShamInverter", "ModelFunctional", "ACTIVATIONS", "SIGNATURES",
]
