"""Deep bidirectional LSTM encoder with per-layer time max-pooling."""

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, DimensionError, EmptyInputError, Parameter, glorot_init, sigmoid


@dataclass
class LSTMCellParams:
    """Gate blocks stacked in the order input, forget, output, candidate."""

    W: Parameter  # [4d x m]
    U: Parameter  # [4d x d]
    b: Parameter  # [4d]

    @property
    def hidden(self):
        return self.U.shape[1]

    @property
    def input_dim(self):
        return self.W.shape[1]

    def parameters(self):
        return [self.W, self.U, self.b]

    @classmethod
    def init(cls, rng, name, input_dim, hidden):
        W = np.concatenate([glorot_init(rng, (hidden, input_dim)) for _ in range(4)])
        U = np.concatenate([glorot_init(rng, (hidden, hidden)) for _ in range(4)])
        return cls(Parameter(f"{name}.W", W), Parameter(f"{name}.U", U),
                   Parameter(f"{name}.b", np.zeros(4 * hidden)))


@dataclass
class EncoderConfig:
    input_dim: int
    num_layers: int = 2
    hidden_per_direction: int = 32
    pool_factors: list = field(default_factory=lambda: [2, 4])

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("encoder needs at least one layer")
        factors = [int(f) for f in self.pool_factors]
        if len(factors) > self.num_layers or any(f < 1 for f in factors):
            raise ValueError(f"bad pool factors {self.pool_factors} for {self.num_layers} layers")
        # a short list means "no pooling" on the remaining top layers
        self.pool_factors = factors + [1] * (self.num_layers - len(factors))

    @property
    def reduction(self):
        return math.prod(self.pool_factors)

    def reduced_length(self, T):
        for r in self.pool_factors:
            T = -(-T // r)
        return T


@dataclass
class EncoderStates:
    h: np.ndarray  # [T' x 2d]

    @property
    def reduced_length(self):
        return self.h.shape[0]


def init_encoder(rng, cfg, prefix="enc"):
    layers = []
    in_dim = cfg.input_dim
    for k in range(cfg.num_layers):
        layers.append(init_encoder_layer(rng, f"{prefix}.{k}", in_dim, cfg.hidden_per_direction))
        in_dim = 2 * cfg.hidden_per_direction
    return layers


def init_encoder_layer(rng, name, input_dim, hidden):
    return (LSTMCellParams.init(rng.child(0), f"{name}.fwd", input_dim, hidden),
            LSTMCellParams.init(rng.child(1), f"{name}.bwd", input_dim, hidden))


def lstm_step(x, h_prev, c_prev, p):
    """One standard LSTM step; returns (h, c)."""
    d = p.hidden
    if x.shape != (p.input_dim,) or h_prev.shape != (d,) or c_prev.shape != (d,):
        raise DimensionError(
            f"lstm_step: x{x.shape} h{h_prev.shape} c{c_prev.shape} vs W{p.W.shape}")
    z = p.W.value @ x + p.b.value + p.U.value @ h_prev
    i, f, o = sigmoid(z[:d]), sigmoid(z[d:2 * d]), sigmoid(z[2 * d:3 * d])
    g = np.tanh(z[3 * d:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _half_scale(d):
    # tanh(z/2) yields the sigmoid gates, the candidate block takes tanh(z)
    scale = np.ones(4 * d)
    scale[: 3 * d] = 0.5
    return scale


class _Scan:
    """Cached activations of one LSTM direction over a sequence."""

    __slots__ = ("x", "gates", "c", "h", "h_prev", "c_prev", "order")


def _lstm_scan(x, p, reverse):
    T = x.shape[0]
    d = p.hidden
    W, U, b = p.W.value, p.U.value, p.b.value
    xp = x @ W.T + b
    scale = _half_scale(d)
    gates = np.empty((T, 4 * d), dtype=DTYPE)
    cs = np.empty((T, d), dtype=DTYPE)
    hs = np.empty((T, d), dtype=DTYPE)
    h_prev = np.zeros((T, d), dtype=DTYPE)
    c_prev = np.zeros((T, d), dtype=DTYPE)
    h = np.zeros(d, dtype=DTYPE)
    c = np.zeros(d, dtype=DTYPE)
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h_prev[t] = h
        c_prev[t] = c
        act = np.tanh((xp[t] + U @ h) * scale)
        act[: 3 * d] = 0.5 + 0.5 * act[: 3 * d]
        c = act[d:2 * d] * c + act[:d] * act[3 * d:]
        h = act[2 * d:3 * d] * np.tanh(c)
        gates[t] = act
        cs[t] = c
        hs[t] = h
    scan = _Scan()
    scan.x, scan.gates, scan.c, scan.h = x, gates, cs, hs
    scan.h_prev, scan.c_prev, scan.order = h_prev, c_prev, order
    return scan


def _lstm_scan_backward(dh_seq, scan, p):
    """Accumulate parameter grads; return the gradient w.r.t. the scan input."""
    T, d = scan.h.shape
    U = p.U.value
    dz = np.empty((T, 4 * d), dtype=DTYPE)
    dh_next = np.zeros(d, dtype=DTYPE)
    dc_next = np.zeros(d, dtype=DTYPE)
    for t in reversed(scan.order):
        a = scan.gates[t]
        i, f, o, g = a[:d], a[d:2 * d], a[2 * d:3 * d], a[3 * d:]
        tc = np.tanh(scan.c[t])
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        z = dz[t]
        z[:d] = dc * g * i * (1.0 - i)
        z[d:2 * d] = dc * scan.c_prev[t] * f * (1.0 - f)
        z[2 * d:3 * d] = dh * tc * o * (1.0 - o)
        z[3 * d:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = U.T @ z
    p.W.grad += dz.T @ scan.x
    p.U.grad += dz.T @ scan.h_prev
    p.b.grad += dz.sum(axis=0)
    return dz @ p.W.value


def bilstm_layer(seq, layer):
    """Run both directions over ``seq`` and concatenate per frame -> [T x 2d]."""
    return np.concatenate([s.h for s in _bilstm_scans(seq, layer)], axis=1)


def _bilstm_scans(seq, layer):
    seq = np.asarray(seq, dtype=DTYPE)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptyInputError("bilstm_layer: empty sequence")
    fwd, bwd = layer
    if seq.shape[1] != fwd.input_dim:
        raise DimensionError(f"bilstm_layer: frame dim {seq.shape[1]} != {fwd.input_dim}")
    return _lstm_scan(seq, fwd, False), _lstm_scan(seq, bwd, True)


def max_pool_time(seq, factor):
    """Non-overlapping max over windows of ``factor`` frames; partial tail kept."""
    pooled, _ = _pool_with_index(np.asarray(seq, dtype=DTYPE), factor)
    return pooled


def _pool_with_index(seq, factor):
    T, k = seq.shape
    if factor == 1:
        return seq, None
    n_out = -(-T // factor)
    pad = n_out * factor - T
    if pad:
        seq = np.concatenate([seq, np.full((pad, k), -np.inf)])
    windows = seq.reshape(n_out, factor, k)
    idx = np.argmax(windows, axis=1)  # first index wins ties
    pooled = np.take_along_axis(windows, idx[:, None, :], axis=1)[:, 0, :]
    return pooled, idx


def _pool_backward(dpooled, idx, factor, T):
    if factor == 1:
        return dpooled
    n_out, k = dpooled.shape
    d = np.zeros((n_out, factor, k), dtype=DTYPE)
    np.put_along_axis(d, idx[:, None, :], dpooled[:, None, :], axis=1)
    return d.reshape(n_out * factor, k)[:T]


class EncoderCache:
    def __init__(self):
        self.layers = []  # (scans, pool index, pre-pool length, dropout mask)


def encode(x, cfg, layers, dropout_rate=0.0, rng=None, cache=None):
    """Encoder states h_1^{T'} for frames ``x`` [T x F].

    When ``cache`` is an EncoderCache it is filled for ``encode_backward``.
    Dropout masks (inverted scaling) are drawn from ``rng`` when the rate is
    positive.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("encode: empty input")
    if len(layers) != cfg.num_layers:
        raise DimensionError(f"encode: {len(layers)} layers for config with {cfg.num_layers}")
    seq = x
    for layer, factor in zip(layers, cfg.pool_factors):
        scans = _bilstm_scans(seq, layer)
        out = np.concatenate([s.h for s in scans], axis=1)
        T = out.shape[0]
        out, idx = _pool_with_index(out, factor)
        mask = None
        if dropout_rate > 0.0:
            keep = 1.0 - dropout_rate
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        if cache is not None:
            cache.layers.append((scans, idx, T, mask))
        seq = out
    return EncoderStates(seq)


def encode_backward(dh, cfg, layers, cache):
    """Accumulate gradients for all encoder parameters; return d(loss)/dx."""
    grad = np.asarray(dh, dtype=DTYPE)
    for layer, factor, (scans, idx, T, mask) in reversed(
            list(zip(layers, cfg.pool_factors, cache.layers))):
        if mask is not None:
            grad = grad * mask
        grad = _pool_backward(grad, idx, factor, T)
        d = layer[0].hidden
        grad = (_lstm_scan_backward(grad[:, :d], scans[0], layer[0])
                + _lstm_scan_backward(grad[:, d:], scans[1], layer[1]))
    return grad
