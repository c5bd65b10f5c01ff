"""2DLSTM cell and its evaluation over a (time x label) grid.

Gate blocks are stacked in the order input, forget, output, candidate,
lambda. Cell (t, n) reads its left neighbour (t-1, n) through ``U`` and the
neighbour above (t, n-1) through ``V``; out-of-grid neighbours are zero.
Internally the recurrent weights are used as one [5d x 2d] matrix acting on
``[s_left; s_above]`` so that every evaluation order performs the same
floating-point operations per cell.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, DimensionError, EmptyInputError, Parameter, glorot_init

GATES = ("input", "forget", "output", "candidate", "lambda")


class CellCounter:
    """Counts 2DLSTM cell evaluations; decoding cost is asserted with it."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


CELL_STEPS = CellCounter()


@dataclass
class TwoDLSTMParams:
    W: Parameter  # [5d x m]
    U: Parameter  # [5d x d], horizontal recurrence
    V: Parameter  # [5d x d], vertical recurrence
    b: Parameter  # [5d]

    @property
    def hidden(self):
        return self.U.shape[1]

    @property
    def input_dim(self):
        return self.W.shape[1]

    def parameters(self):
        return [self.W, self.U, self.V, self.b]

    def block(self, k):
        """(W_k, U_k, V_k, b_k) for gate k in 1..5 as views."""
        d = self.hidden
        s = slice((k - 1) * d, k * d)
        return self.W.value[s], self.U.value[s], self.V.value[s], self.b.value[s]

    def recurrent(self):
        return np.concatenate([self.U.value, self.V.value], axis=1)

    @classmethod
    def init(cls, rng, input_dim, hidden, name="grid"):
        def stack(cols):
            return np.concatenate([glorot_init(rng, (hidden, cols)) for _ in GATES])
        return cls(Parameter(f"{name}.W", stack(input_dim)),
                   Parameter(f"{name}.U", stack(hidden)),
                   Parameter(f"{name}.V", stack(hidden)),
                   Parameter(f"{name}.b", np.zeros(5 * hidden)))


@dataclass
class CellIO:
    x: np.ndarray
    s_left: np.ndarray
    c_left: np.ndarray
    s_above: np.ndarray
    c_above: np.ndarray
    i: np.ndarray = None
    f: np.ndarray = None
    o: np.ndarray = None
    lam: np.ndarray = None
    cand: np.ndarray = None
    s: np.ndarray = None
    c: np.ndarray = None


@dataclass
class GridState:
    """States on a (T'+1) x (rows+1) lattice; index 0 on each axis is the zero boundary."""

    s: np.ndarray
    c: np.ndarray
    gates: np.ndarray = None  # [T' x rows x 5d] activations
    mix: np.ndarray = None  # [T' x rows x d] lambda-weighted neighbour cells
    inputs: np.ndarray = None

    @property
    def shape(self):
        return self.s.shape[0] - 1, self.s.shape[1] - 1

    def row(self, n):
        """(s, c) of grid row n (1-based), each [T' x d]."""
        return self.s[1:, n], self.c[1:, n]


def _cell(xp, s_left, c_left, s_above, c_above, UV, d):
    z = xp + UV @ np.concatenate((s_left, s_above))
    act = np.tanh(z * _scale(d))
    act[:3 * d] = 0.5 + 0.5 * act[:3 * d]
    act[4 * d:] = 0.5 + 0.5 * act[4 * d:]
    lam = act[4 * d:]
    mix = lam * c_left + (1.0 - lam) * c_above
    c = act[d:2 * d] * mix + act[3 * d:4 * d] * act[:d]
    s = np.tanh(c) * act[2 * d:3 * d]
    return act, mix, c, s


_SCALES = {}


def _scale(d):
    # sigmoid(z) = 0.5 + 0.5 tanh(z / 2); the candidate block is plain tanh
    sc = _SCALES.get(d)
    if sc is None:
        sc = np.full(5 * d, 0.5)
        sc[3 * d:4 * d] = 1.0
        _SCALES[d] = sc
    return sc


def _check_cell(io, p):
    d, m = p.hidden, p.input_dim
    if io.x.shape != (m,):
        raise DimensionError(f"cell_step: x{io.x.shape} vs W{p.W.shape}")
    for name in ("s_left", "c_left", "s_above", "c_above"):
        if getattr(io, name).shape != (d,):
            raise DimensionError(f"cell_step: {name}{getattr(io, name).shape} vs hidden {d}")


def cell_step(io, p):
    """Evaluate one cell; fills the gate fields of ``io`` and returns (s, c)."""
    _check_cell(io, p)
    d = p.hidden
    xp = p.W.value @ io.x + p.b.value
    act, _, c, s = _cell(xp, io.s_left, io.c_left, io.s_above, io.c_above, p.recurrent(), d)
    CELL_STEPS.count += 1
    io.i, io.f, io.o = act[:d], act[d:2 * d], act[2 * d:3 * d]
    io.cand, io.lam = act[3 * d:4 * d], act[4 * d:]
    io.s, io.c = s, c
    return s, c


def _project_rows(inputs, p):
    """Input projections W x + b, one matrix product per grid row."""
    W, b = p.W.value, p.b.value
    return [np.ascontiguousarray(inputs[:, n, :]) @ W.T + b for n in range(inputs.shape[1])]


def forward_grid(inputs, p, order="row"):
    """Evaluate the whole grid; ``inputs`` is [T' x rows x m].

    ``order`` is "row", "column" or "diagonal"; all give identical results.
    """
    inputs = np.asarray(inputs, dtype=DTYPE)
    if inputs.ndim != 3 or inputs.shape[0] == 0 or inputs.shape[1] == 0:
        raise EmptyInputError(f"forward_grid: empty grid {inputs.shape}")
    if inputs.shape[2] != p.input_dim:
        raise DimensionError(f"forward_grid: input dim {inputs.shape[2]} vs {p.input_dim}")
    Tp, R, _ = inputs.shape
    d = p.hidden
    UV = p.recurrent()
    xp = _project_rows(inputs, p)
    S = np.zeros((Tp + 1, R + 1, d), dtype=DTYPE)
    C = np.zeros((Tp + 1, R + 1, d), dtype=DTYPE)
    gates = np.empty((Tp, R, 5 * d), dtype=DTYPE)
    mix = np.empty((Tp, R, d), dtype=DTYPE)
    for t, n in _schedule(Tp, R, order):
        act, m, c, s = _cell(xp[n][t], S[t, n + 1], C[t, n + 1], S[t + 1, n], C[t + 1, n], UV, d)
        gates[t, n], mix[t, n], C[t + 1, n + 1], S[t + 1, n + 1] = act, m, c, s
    CELL_STEPS.count += Tp * R
    return GridState(S, C, gates, mix, inputs)


def _schedule(Tp, R, order):
    if order == "row":
        return [(t, n) for n in range(R) for t in range(Tp)]
    if order == "column":
        return [(t, n) for t in range(Tp) for n in range(R)]
    if order == "diagonal":
        return [(t, k - t) for k in range(Tp + R - 1)
                for t in range(max(0, k - R + 1), min(Tp, k + 1))]
    raise ValueError(f"unknown evaluation order {order!r}")


def forward_row(row_inputs, prev_row, p):
    """Compute one new grid row from the row above.

    ``row_inputs`` is [T' x m]; ``prev_row`` is the (s, c) pair of the row
    above, each [T' x d] (zeros for the first row). Returns the new (s, c).
    """
    row_inputs = np.ascontiguousarray(row_inputs, dtype=DTYPE)
    s_above, c_above = prev_row
    Tp = row_inputs.shape[0]
    if s_above.shape[0] != Tp or c_above.shape[0] != Tp:
        raise DimensionError(
            f"forward_row: previous row length {s_above.shape[0]} vs {Tp} inputs")
    d = p.hidden
    UV = p.recurrent()
    xp = row_inputs @ p.W.value.T + p.b.value
    S = np.zeros((Tp + 1, d), dtype=DTYPE)
    C = np.zeros((Tp + 1, d), dtype=DTYPE)
    for t in range(Tp):
        _, _, C[t + 1], S[t + 1] = _cell(xp[t], S[t], C[t], s_above[t], c_above[t], UV, d)
    CELL_STEPS.count += Tp
    return S[1:], C[1:]


def backward_grid(grid, inputs, ds, p):
    """Back-propagate through the grid from (T', rows) to (1, 1).

    ``ds`` [T' x rows x d] holds the loss gradient w.r.t. each state s.
    Accumulates into the parameter grads and returns d(loss)/d(inputs).
    """
    if grid.gates is None or grid.mix is None:
        raise ValueError("backward_grid: forward activations were not cached")
    inputs = np.asarray(inputs, dtype=DTYPE)
    Tp, R = grid.shape
    d = p.hidden
    UVT = p.recurrent().T
    S, C = grid.s, grid.c
    dS = np.zeros((Tp + 1, R + 1, d), dtype=DTYPE)
    dS[1:, 1:] = ds
    dC = np.zeros((Tp + 1, R + 1, d), dtype=DTYPE)
    DZ = np.empty((Tp, R, 5 * d), dtype=DTYPE)
    for n in range(R - 1, -1, -1):
        for t in range(Tp - 1, -1, -1):
            a = grid.gates[t, n]
            i, f, o = a[:d], a[d:2 * d], a[2 * d:3 * d]
            g, lam = a[3 * d:4 * d], a[4 * d:]
            tc = np.tanh(C[t + 1, n + 1])
            dsv = dS[t + 1, n + 1]
            dc = dC[t + 1, n + 1] + dsv * o * (1.0 - tc * tc)
            dmix = dc * f
            dz = DZ[t, n]
            dz[:d] = dc * g * i * (1.0 - i)
            dz[d:2 * d] = dc * grid.mix[t, n] * f * (1.0 - f)
            dz[2 * d:3 * d] = dsv * tc * o * (1.0 - o)
            dz[3 * d:4 * d] = dc * i * (1.0 - g * g)
            dz[4 * d:] = dmix * (C[t, n + 1] - C[t + 1, n]) * lam * (1.0 - lam)
            dh = UVT @ dz
            dS[t, n + 1] += dh[:d]
            dS[t + 1, n] += dh[d:]
            dC[t, n + 1] += dmix * lam
            dC[t + 1, n] += dmix * (1.0 - lam)
    flat = DZ.reshape(-1, 5 * d)
    left = S[:-1, 1:].reshape(-1, d)
    above = S[1:, :-1].reshape(-1, d)
    p.W.grad += flat.T @ inputs.reshape(-1, inputs.shape[2])
    p.U.grad += flat.T @ left
    p.V.grad += flat.T @ above
    p.b.grad += flat.sum(axis=0)
    return (flat @ p.W.value).reshape(inputs.shape)
