"""Trainable layers, cross-entropy loss, reverse-mode gradients, and SGD.

Layers follow a minimal contract: ``forward(x, train=..., rng=...)``
computes the output and, only when ``train`` is true, caches whatever the
matching ``backward(grad)`` call needs. Eval-mode forwards never mutate
the layer, so a trained model is safe to share for inference. A model
being trained is single-owner: forward, backward and update must not
overlap on the same instance.

Parameters are created zeroed and filled in by ``initialize`` with
He-uniform weights (bound sqrt(6 / fan_in)) and zero biases, drawn from a
seeded generator so identical seeds give bitwise-identical models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .tensor import Conv2DSpec


@dataclass(frozen=True)
class SGDConfig:
    """Plain stochastic gradient descent settings (no momentum, no decay)."""

    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


def dense_forward(x, weights, bias) -> np.ndarray:
    """Affine map: x @ weights + bias, rows are samples."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense shapes disagree: input {x.shape}, weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"dense bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def relu(x) -> np.ndarray:
    """Elementwise max(x, 0); rejects non-finite input."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("relu input contains non-finite values")
    return np.maximum(x, 0.0)


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns (output, mask); mask is None in eval mode.

    In train mode each element is zeroed independently with probability
    ``rate`` and survivors are scaled by 1/(1-rate), so eval mode is the
    exact identity.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout requires an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def cross_entropy(probs, labels) -> float:
    """Mean negative log-probability of the true class.

    Probabilities are clamped below at 1e-12 before the log. Rows must
    already be distributions (sum to 1 within 1e-6).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise ValueError(f"probs must be [N,K], got shape {probs.shape}")
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValueError("probs rows must sum to 1 within 1e-6")
    picked = np.maximum(probs[np.arange(n), labels], 1e-12)
    return float(-np.log(picked).mean())


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base layer; subclasses set ``kind`` and the forward/backward pair."""

    kind = "?"

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def initialize(self, rng: np.random.Generator) -> None:
        pass

    def hyperparams(self) -> tuple[float, ...]:
        return ()


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"dense dims must be positive, got {in_dim}, {out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weights = np.zeros((in_dim, out_dim))
        self.bias = np.zeros(out_dim)
        self._x = None
        self._dw = None
        self._db = None

    def forward(self, x, train=False, rng=None):
        out = dense_forward(x, self.weights, self.bias)
        if train:
            self._x = x
        return out

    def backward(self, grad):
        self._dw = self._x.T @ grad
        self._db = grad.sum(axis=0)
        return grad @ self.weights.T

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return {"weights": self._dw, "bias": self._db}

    def initialize(self, rng):
        self.weights = he_uniform(rng, (self.in_dim, self.out_dim), fan_in=self.in_dim)
        self.bias = np.zeros(self.out_dim)

    def hyperparams(self):
        return (float(self.in_dim), float(self.out_dim))


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, spec: Conv2DSpec):
        self.spec = spec
        self.weights = np.zeros(spec.weight_shape)
        self.bias = np.zeros(spec.out_channels)
        self._cols = None
        self._x_shape = None
        self._dw = None
        self._db = None

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        out = tensor.conv2d(x, self.weights, self.bias, self.spec)
        if train:
            self._cols = tensor.im2col(
                x, self.spec.kernel_h, self.spec.kernel_w, self.spec.stride, self.spec.padding
            )
            self._x_shape = x.shape
        return out

    def backward(self, grad):
        spec = self.spec
        o = spec.out_channels
        g = grad.transpose(1, 0, 2, 3).reshape(o, -1)
        self._dw = (g @ self._cols.T).reshape(spec.weight_shape)
        self._db = g.sum(axis=1)
        dcols = self.weights.reshape(o, -1).T @ g
        return tensor.col2im(dcols, self._x_shape, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return {"weights": self._dw, "bias": self._db}

    def initialize(self, rng):
        fan_in = self.spec.in_channels * self.spec.kernel_h * self.spec.kernel_w
        self.weights = he_uniform(rng, self.spec.weight_shape, fan_in=fan_in)
        self.bias = np.zeros(self.spec.out_channels)

    def hyperparams(self):
        s = self.spec
        return tuple(float(v) for v in (s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride, s.padding))


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int, stride: int | None = None):
        self.window = window
        self.stride = window if stride is None else stride
        self._argmax = None
        self._x_shape = None

    def forward(self, x, train=False, rng=None):
        out, argmax = tensor.maxpool2d(x, self.window, self.stride)
        if train:
            self._argmax = argmax
            self._x_shape = np.asarray(x).shape
        return out

    def backward(self, grad):
        return tensor.maxpool2d_backward(grad, self._argmax, self._x_shape)

    def hyperparams(self):
        return (float(self.window), float(self.stride))


class AvgPool2D(Layer):
    kind = "avgpool2d"

    def __init__(self, window: int, stride: int | None = None):
        self.window = window
        self.stride = window if stride is None else stride
        self._x_shape = None

    def forward(self, x, train=False, rng=None):
        out = tensor.avgpool2d(x, self.window, self.stride)
        if train:
            self._x_shape = np.asarray(x).shape
        return out

    def backward(self, grad):
        return tensor.avgpool2d_backward(grad, self.window, self.stride, self._x_shape)

    def hyperparams(self):
        return (float(self.window), float(self.stride))


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        out = relu(x)
        if train:
            self._mask = np.asarray(x) > 0
        return out

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        out, mask = dropout(x, self.rate, train, rng)
        if train:
            self._mask = mask
        return out

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask

    def hyperparams(self):
        return (float(self.rate),)


class Flatten(Layer):
    """Reshape [N,C,H,W] to [N, C*H*W]; the expected shape is fixed at build."""

    kind = "flatten"

    def __init__(self, input_shape: tuple[int, int, int]):
        self.input_shape = tuple(int(v) for v in input_shape)

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"flatten expected trailing shape {self.input_shape}, got {x.shape}")
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape((grad.shape[0],) + self.input_shape)

    def hyperparams(self):
        return tuple(float(v) for v in self.input_shape)


class Concat(Layer):
    """Joins the image and texture branch outputs along the feature axis."""

    kind = "concat"

    def __init__(self, left_width: int, right_width: int):
        self.left_width = left_width
        self.right_width = right_width

    def forward(self, parts, train=False, rng=None):
        left, right = parts
        if left.shape[1] != self.left_width or right.shape[1] != self.right_width:
            raise ValueError(
                f"concat widths {left.shape[1]}+{right.shape[1]} != "
                f"{self.left_width}+{self.right_width}"
            )
        return np.hstack([left, right])

    def backward(self, grad):
        return grad[:, : self.left_width], grad[:, self.left_width :]

    def hyperparams(self):
        return (float(self.left_width), float(self.right_width))


def backward(model, batch, rng: np.random.Generator | None = None):
    """One train-mode forward/backward pass over a batch.

    ``batch`` is (images, textures, labels); textures is None for
    image-only models. Returns (mean cross-entropy loss, gradient set),
    where the gradient set maps parameter paths to arrays shaped exactly
    like the parameters. The softmax/cross-entropy pair is fused into the
    (p - onehot)/N logit gradient.
    """
    images, textures, labels = batch
    labels = np.asarray(labels)
    probs = model.forward(images, textures, train=True, rng=rng)
    loss = cross_entropy(probs, labels)
    n, k = probs.shape
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = model.backprop(dlogits)
    return loss, grads


def sgd_step(model, grads: dict[str, np.ndarray], config: SGDConfig):
    """In-place update: parameter <- parameter - learning_rate * gradient."""
    for path, param in model.parameter_items():
        if path not in grads:
            raise ValueError(f"gradient set is missing {path!r}")
        g = grads[path]
        if g.shape != param.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {param.shape} for {path!r}")
        param -= config.learning_rate * g
    return model
