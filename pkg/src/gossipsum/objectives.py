"""Loss/gradient oracles over flat parameter vectors.

Three hand-differentiated models, each exposing the same surface:
``value_and_grad(params, batch, ds)`` returns the mean per-sample loss over
the batch and its gradient at ``params``. Parameters are always a single
flat float64 vector; models with structure document their block layout.

* ``SyntheticNonConvex`` -- separable d-dimensional test objective
  ``sum_k (x_k**2 + a_k * sin(x_k)**2)`` scaled per sample by
  ``1 + label / num_classes``. Its global minimum sits at the origin for
  every data distribution, gradients are cheap and analytic, and label
  skew shows up as multiplicative heterogeneity between shards.
* ``LogisticRegression`` -- multinomial softmax regression.
  Layout: ``[W (C*d, row-major), b (C)]``.
* ``MlpOneHidden`` -- one tanh hidden layer into softmax cross-entropy,
  manual backprop. Layout: ``[W1 (h*d), b1 (h), W2 (C*h), b2 (C)]``.

``finite_difference_grad`` provides the independent central-difference
check used by the test suite against all of the above.
"""

from __future__ import annotations

import abc

import numpy as np

from .data import Dataset, Shard
from .errors import StateError


class GradientOracle(abc.ABC):
    """Stateless evaluator of a worker-local empirical loss."""

    param_dim: int
    has_classifier: bool = False

    @abc.abstractmethod
    def value_and_grad(self, params: np.ndarray, batch: np.ndarray,
                       ds: Dataset) -> tuple[float, np.ndarray]:
        """Mean per-sample loss over ``batch`` and its gradient at ``params``."""

    @abc.abstractmethod
    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Initial flat parameter vector; shared across workers by the caller."""

    def predict(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        raise StateError(f"{type(self).__name__} is not a classifier")

    def _check_inputs(self, params: np.ndarray, batch: np.ndarray) -> None:
        if params.shape != (self.param_dim,):
            raise ValueError(
                f"expected params of shape ({self.param_dim},), got {params.shape}")
        if batch.size == 0:
            raise ValueError("batch must be nonempty")


class SyntheticNonConvex(GradientOracle):
    """Separable nonconvex objective with a known minimum at the origin."""

    def __init__(self, dim: int, amplitude: float = 1.0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.param_dim = dim
        self.amplitude = float(amplitude)
        # Ramped bump heights keep coordinates non-symmetric.
        self.a = amplitude * (np.arange(1, dim + 1, dtype=np.float64) / dim)

    def value_and_grad(self, params, batch, ds):
        self._check_inputs(params, batch)
        scale = float(np.mean(1.0 + ds.labels[batch] / ds.num_classes))
        s = np.sin(params)
        base = float(np.sum(params * params + self.a * s * s))
        grad = scale * (2.0 * params + self.a * np.sin(2.0 * params))
        return scale * base, grad

    def init_params(self, rng):
        return rng.uniform(-2.0, 2.0, size=self.param_dim)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


class LogisticRegression(GradientOracle):
    """Multinomial softmax regression; ``[W (C*d), b (C)]`` layout."""

    has_classifier = True

    def __init__(self, n_features: int, n_classes: int):
        if n_features < 1 or n_classes < 2:
            raise ValueError("need n_features >= 1 and n_classes >= 2")
        self.d = n_features
        self.c = n_classes
        self.param_dim = n_classes * n_features + n_classes

    def _unpack(self, params):
        w = params[: self.c * self.d].reshape(self.c, self.d)
        b = params[self.c * self.d:]
        return w, b

    def value_and_grad(self, params, batch, ds):
        self._check_inputs(params, batch)
        w, b = self._unpack(params)
        feats = ds.features[batch]
        labels = ds.labels[batch]
        probs = _softmax_rows(feats @ w.T + b)
        loss = _cross_entropy(probs, labels)
        dz = probs
        dz[np.arange(labels.size), labels] -= 1.0
        dz /= labels.size
        grad = np.concatenate([(dz.T @ feats).ravel(), dz.sum(axis=0)])
        return loss, grad

    def init_params(self, rng):
        return np.zeros(self.param_dim)

    def predict(self, params, features):
        w, b = self._unpack(params)
        return np.argmax(features @ w.T + b, axis=1)


class MlpOneHidden(GradientOracle):
    """One-hidden-layer tanh MLP with softmax cross-entropy output.

    Layout: ``[W1 (h*d), b1 (h), W2 (C*h), b2 (C)]``, all row-major.
    """

    has_classifier = True

    def __init__(self, n_features: int, hidden: int, n_classes: int):
        if n_features < 1 or hidden < 1 or n_classes < 2:
            raise ValueError("need n_features >= 1, hidden >= 1, n_classes >= 2")
        self.d = n_features
        self.h = hidden
        self.c = n_classes
        self.param_dim = hidden * n_features + hidden + n_classes * hidden + n_classes

    def _unpack(self, params):
        h, d, c = self.h, self.d, self.c
        o1 = h * d
        o2 = o1 + h
        o3 = o2 + c * h
        return (params[:o1].reshape(h, d), params[o1:o2],
                params[o2:o3].reshape(c, h), params[o3:])

    def value_and_grad(self, params, batch, ds):
        self._check_inputs(params, batch)
        w1, b1, w2, b2 = self._unpack(params)
        feats = ds.features[batch]
        labels = ds.labels[batch]

        a1 = np.tanh(feats @ w1.T + b1)
        probs = _softmax_rows(a1 @ w2.T + b2)
        loss = _cross_entropy(probs, labels)

        dz2 = probs
        dz2[np.arange(labels.size), labels] -= 1.0
        dz2 /= labels.size
        gw2 = dz2.T @ a1
        gb2 = dz2.sum(axis=0)
        dz1 = (dz2 @ w2) * (1.0 - a1 * a1)
        gw1 = dz1.T @ feats
        gb1 = dz1.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
        return loss, grad

    def init_params(self, rng):
        w1 = _glorot_uniform(rng, self.h, self.d)
        w2 = _glorot_uniform(rng, self.c, self.h)
        return np.concatenate([w1.ravel(), np.zeros(self.h), w2.ravel(), np.zeros(self.c)])

    def predict(self, params, features):
        w1, b1, w2, b2 = self._unpack(params)
        a1 = np.tanh(features @ w1.T + b1)
        return np.argmax(a1 @ w2.T + b2, axis=1)


def _glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def full_gradient(oracle: GradientOracle, params: np.ndarray, shard: Shard,
                  ds: Dataset) -> np.ndarray:
    """Exact local gradient: ``value_and_grad`` over the whole shard."""
    if len(shard) == 0:
        raise StateError(f"worker {shard.owner} has an empty shard")
    return oracle.value_and_grad(params, shard.indices, ds)[1]


def finite_difference_grad(oracle: GradientOracle, params: np.ndarray,
                           batch: np.ndarray, ds: Dataset, h: float) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    grad = np.zeros_like(params)
    probe = params.astype(np.float64).copy()
    for k in range(params.size):
        orig = probe[k]
        probe[k] = orig + h
        up, _ = oracle.value_and_grad(probe, batch, ds)
        probe[k] = orig - h
        down, _ = oracle.value_and_grad(probe, batch, ds)
        probe[k] = orig
        grad[k] = (up - down) / (2.0 * h)
    return grad
