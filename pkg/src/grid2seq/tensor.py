"""Dense float64 kernel shared by every layer.

numpy arrays are the tensor type; this module adds the few primitives the
model composes, each with its vector-Jacobian product, plus seeded
initialisation and a named parameter container.
"""

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class SeededRng:
    """PCG64 stream keyed by a 64-bit seed.

    Spawned children are keyed by (seed, *key) so independent consumers
    (shuffling, dropout, init) never share a stream.
    """

    def __init__(self, seed, *key):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(np.random.PCG64([self.seed, *self.key]))

    def child(self, *key):
        return SeededRng(self.seed, *self.key, *key)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        """Integers in the closed range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, size):
        """Standard normal draws via Box-Muller on the uniform stream."""
        size = tuple(np.atleast_1d(size)) if size is not None else (1,)
        count = int(np.prod(size))
        pairs = (count + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
        return z[:count].reshape(size)

    def permutation(self, n):
        return self._gen.permutation(n)


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    for p in params:
        p.zero_grad()


def affine(x, W, b):
    """Return ``W @ x + b``."""
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"affine: W{W.shape} incompatible with x{x.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"affine: b{b.shape} incompatible with W{W.shape}")
    return W @ x + b


def affine_backward(dy, x, W):
    """Gradients (dx, dW, db) of ``W @ x + b`` given upstream ``dy``."""
    return W.T @ dy, np.outer(dy, x), dy.copy()


def sigmoid(x):
    # tanh form: overflow-free for any finite input, one ufunc call
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=DTYPE))


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def log_softmax(x):
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def log_softmax_backward(dy, y):
    """VJP of log_softmax given its output ``y``."""
    return dy - np.exp(y) * np.sum(dy, axis=-1, keepdims=True)


def glorot_init(rng, shape):
    """Glorot-uniform matrix; vectors use fan_in = fan_out = extent."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise DimensionError(f"glorot_init: non-positive extent in {shape}")
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(DTYPE)


def max_over_axis(x, axis=0):
    """Maximum along ``axis`` and the winning indices (first index on ties)."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[axis] == 0:
        raise EmptyInputError("max_over_axis: empty axis")
    idx = np.argmax(x, axis=axis)
    return np.take_along_axis(x, np.expand_dims(idx, axis), axis).squeeze(axis), idx


def max_over_axis_backward(dy, idx, length):
    """Route ``dy`` (shape [d]) back to a [length x d] input through ``idx``."""
    dx = np.zeros((length,) + dy.shape, dtype=DTYPE)
    dx[idx, np.arange(dy.shape[0])] = dy
    return dx
