"""Small fully connected classifiers on a flat weight vector.

Every network is described by a :class:`NetworkSpec` and evaluated on a single
flat ``float64`` array holding all weights and biases, layer by layer
(weight matrix of shape ``(fan_in, fan_out)`` in row-major order, then the bias).

Binary labels are stored as ``{0, 1}``.  The binary ramp loss is taken on the
margin ``t = (2y - 1)(2p - 1)`` of the output probability; the multiclass margin
is ``t = p_y - max_{k != y} p_k``.  A zero-one error is counted whenever
``t <= 0``, so ties (``p == 0.5`` or tied softmax maxima) are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

SIGMOID_BINARY = "sigmoid_binary"
SOFTMAX_MULTICLASS = "softmax_multiclass"


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...]
    output_kind: str = SIGMOID_BINARY
    hidden_activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(n) for n in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(n < 1 for n in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_kind == SIGMOID_BINARY:
            if widths[-1] != 1:
                raise ValueError("sigmoid_binary networks have a single output unit")
        elif self.output_kind == SOFTMAX_MULTICLASS:
            if widths[-1] < 2:
                raise ValueError("softmax_multiclass networks need at least 2 outputs")
        else:
            raise ValueError(f"unknown output kind {self.output_kind!r}")

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return 2 if self.output_kind == SIGMOID_BINARY else self.layer_widths[-1]


def unpack(spec: NetworkSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat weight vector into per-layer ``(W, b)`` views."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.n_params:
        raise ValueError(
            f"weight vector has shape {w.shape}, expected ({spec.n_params},) for {spec.layer_widths}"
        )
    layers = []
    offset = 0
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        size = fan_in * fan_out
        W = w[offset:offset + size].reshape(fan_in, fan_out)
        offset += size
        b = w[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """He-style Gaussian initialisation (std ``sqrt(2 / fan_in)``), zero biases."""
    parts = []
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        parts.append(rng.standard_normal(fan_in * fan_out) * math.sqrt(2.0 / fan_in))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _as_batch(spec: NetworkSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(f"input has shape {X.shape}, expected (*, {spec.n_inputs})")
    return X


def _forward_cache(spec, w, X):
    layers = unpack(spec, w)
    acts = [X]
    pre = []
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
    return layers, acts, pre


def _output_probs(spec, z):
    if spec.output_kind == SIGMOID_BINARY:
        return expit(z[:, 0])
    return softmax(z, axis=1)


def predict_proba(spec: NetworkSpec, w: np.ndarray, X) -> np.ndarray:
    """Output probabilities for a batch: shape ``(n,)`` (binary) or ``(n, K)``."""
    X = _as_batch(spec, X)
    _, _, pre = _forward_cache(spec, w, X)
    return _output_probs(spec, pre[-1])


def forward(spec: NetworkSpec, w: np.ndarray, x) -> np.ndarray:
    """Probability vector for a single input (length 1 for binary nets)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector; use predict_proba for batches")
    p = predict_proba(spec, w, x)
    return np.atleast_1d(p[0])


def psi_clamp(p, l_max: float):
    """Affine squeeze of ``[0, 1]`` onto ``[e^-l_max, 1 - e^-l_max]``."""
    if l_max <= 0:
        raise ValueError("l_max must be positive")
    a = math.exp(-l_max)
    out = a + (1.0 - 2.0 * a) * np.asarray(p, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


# --- losses -------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroOne:
    differentiable = False


@dataclass(frozen=True)
class BoundedCrossEntropy:
    l_max: float = 4.0
    differentiable = True

    def __post_init__(self):
        # below ln 2 the squeeze flips orientation and the loss can exceed l_max
        if not self.l_max > math.log(2.0):
            raise ValueError(f"l_max must exceed ln 2, got {self.l_max}")


@dataclass(frozen=True)
class Ramp:
    slope: float = 1e6
    differentiable = False

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("ramp slope must be positive")


LossKind = ZeroOne | BoundedCrossEntropy | Ramp


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 2
    label_mode: str = "true"
    label_seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an (m, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"{self.labels.shape[0] if self.labels.ndim else 0} labels for {self.features.shape[0]} examples"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return len(self)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes,
                              self.label_mode, self.label_seed, dict(self.meta))


def margins(spec: NetworkSpec, probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed classification margin used by the zero-one and ramp losses."""
    if spec.output_kind == SIGMOID_BINARY:
        return (2.0 * y - 1.0) * (2.0 * probs - 1.0)
    n = probs.shape[0]
    p_y = probs[np.arange(n), y]
    others = probs.copy()
    others[np.arange(n), y] = -np.inf
    return p_y - others.max(axis=1)


def losses_from_probs(kind, spec: NetworkSpec, probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if isinstance(kind, ZeroOne):
        return (margins(spec, probs, y) <= 0.0).astype(np.float64)
    if isinstance(kind, Ramp):
        return np.clip(1.0 - kind.slope * margins(spec, probs, y), 0.0, 1.0)
    if isinstance(kind, BoundedCrossEntropy):
        if spec.output_kind == SIGMOID_BINARY:
            q = psi_clamp(probs, kind.l_max)
            return -(y * np.log(q) + (1 - y) * np.log1p(-q))
        p_y = probs[np.arange(probs.shape[0]), y]
        return -np.log(psi_clamp(p_y, kind.l_max))
    raise TypeError(f"unknown loss kind {kind!r}")


def per_example_loss(kind, spec: NetworkSpec, w: np.ndarray, X, y) -> np.ndarray:
    return losses_from_probs(kind, spec, predict_proba(spec, w, X), np.asarray(y))


def loss(kind, spec: NetworkSpec, w: np.ndarray, x, y: int) -> float:
    """Loss of the network at ``w`` on a single labelled example."""
    return float(per_example_loss(kind, spec, w, np.asarray(x)[None, :], np.array([y]))[0])


def empirical_risk(kind, spec: NetworkSpec, w: np.ndarray, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise ValueError("empirical risk of an empty dataset")
    return float(per_example_loss(kind, spec, w, data.features, data.labels).mean())


def _output_delta(kind: BoundedCrossEntropy, spec, z_out, y):
    """d(loss)/d(pre-activation of the output layer), per example."""
    a = math.exp(-kind.l_max)
    b = 1.0 - 2.0 * a
    if spec.output_kind == SIGMOID_BINARY:
        p = expit(z_out[:, 0])
        q = a + b * p
        dz = b * p * (1.0 - p) * ((1 - y) / (1.0 - q) - y / q)
        return dz[:, None]
    p = softmax(z_out, axis=1)
    n = p.shape[0]
    p_y = p[np.arange(n), y]
    coef = -b * p_y / (a + b * p_y)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), y] = 1.0
    return coef[:, None] * (onehot - p)


def grad_empirical_risk(kind, spec: NetworkSpec, w: np.ndarray, X, y) -> np.ndarray:
    """Exact gradient of the batch-mean loss with respect to the flat weights."""
    if not getattr(kind, "differentiable", False):
        raise ValueError(f"loss kind {type(kind).__name__} has no gradient")
    X = _as_batch(spec, X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("gradient of an empty batch")
    layers, acts, pre = _forward_cache(spec, w, X)
    delta = _output_delta(kind, spec, pre[-1], y) / X.shape[0]
    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((acts[i].T @ delta).ravel())
        if i > 0:
            delta = (delta @ W.T) * (pre[i - 1] > 0.0)
    return np.concatenate(grads[::-1])


def dataset_grad(kind, spec: NetworkSpec, w: np.ndarray, data: LabeledDataset, idx=None) -> np.ndarray:
    if idx is None:
        return grad_empirical_risk(kind, spec, w, data.features, data.labels)
    return grad_empirical_risk(kind, spec, w, data.features[idx], data.labels[idx])

