import math

import numpy as np
import pytest

from grid2seq.tensor import DimensionError, EmptyInputError, Parameter, SeededRng
from grid2seq.twodlstm import (CELL_STEPS, CellIO, TwoDLSTMParams, backward_grid, cell_step,
                               forward_grid, forward_row)

from conftest import central_diff, rel_err
from scalar_oracle import scalar_grid

# fixed small weights of the 2x2 scalar fixture, per gate k = 1..5
FIX_W = [0.3, -0.2, 0.5, 0.7, 0.1]
FIX_U = [-0.4, 0.6, 0.2, -0.3, 0.8]
FIX_V = [0.25, 0.15, -0.35, 0.45, -0.6]
FIX_B = [0.05, 0.5, -0.1, 0.0, 0.2]
FIX_X = [[0.9, -0.4], [0.3, 1.2]]  # [t][n]


def scalar_params(W=FIX_W, U=FIX_U, V=FIX_V, b=FIX_B):
    col = lambda v: np.array(v, dtype=float).reshape(5, 1)  # noqa: E731
    return TwoDLSTMParams(Parameter("grid.W", col(W)), Parameter("grid.U", col(U)),
                          Parameter("grid.V", col(V)), Parameter("grid.b", np.array(b, float)))


def random_params(m, d, seed=0):
    p = TwoDLSTMParams.init(SeededRng(seed), m, d)
    for k, q in enumerate(p.parameters()):
        q.value += 0.2 * SeededRng(seed, 7, k).normal(q.shape)
    return p


def _zero_io(d=1, m=1):
    z = np.zeros(d)
    return CellIO(np.zeros(m), z, z, z, z)


def test_cell_zero_fixed_point():
    p = scalar_params([0] * 5, [0] * 5, [0] * 5, [0] * 5)
    s, c = cell_step(_zero_io(), p)
    assert s[0] == 0.0 and c[0] == 0.0


def test_cell_hand_case_lambda_half():
    p = scalar_params([0] * 5, [0] * 5, [0] * 5, [0] * 5)
    io = CellIO(np.zeros(1), np.zeros(1), np.array([2.0]), np.zeros(1), np.array([4.0]))
    s, c = cell_step(io, p)
    assert io.lam[0] == 0.5 and io.f[0] == 0.5 and io.i[0] == 0.5 and io.cand[0] == 0.0
    assert c[0] == 1.5
    assert s[0] == pytest.approx(math.tanh(1.5) * 0.5, abs=1e-15)


@pytest.mark.parametrize("b5, expected", [(20.0, "left"), (-20.0, "above")])
def test_lambda_gate_limits(b5, expected):
    p = scalar_params([0] * 5, [0] * 5, [0] * 5, [0, 0, 0, 0, b5])
    io = CellIO(np.zeros(1), np.zeros(1), np.array([2.0]), np.zeros(1), np.array([4.0]))
    _, c = cell_step(io, p)
    branch = 2.0 if expected == "left" else 4.0
    assert c[0] == pytest.approx(0.5 * branch, abs=1e-8)


def test_cell_dimension_error():
    p = random_params(3, 2)
    with pytest.raises(DimensionError):
        cell_step(CellIO(np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(3), np.zeros(2)), p)


def test_block_views_follow_gate_order():
    p = scalar_params()
    W3, U3, V3, b3 = p.block(3)
    assert (W3[0, 0], U3[0, 0], V3[0, 0], b3[0]) == (FIX_W[2], FIX_U[2], FIX_V[2], FIX_B[2])


def test_forward_grid_matches_scalar_oracle():
    grid = forward_grid(np.array(FIX_X)[:, :, None], scalar_params())
    s_ref, c_ref = scalar_grid(FIX_X, FIX_W, FIX_U, FIX_V, FIX_B)
    assert np.max(np.abs(grid.s[1:, 1:, 0] - np.array(s_ref))) < 1e-12
    assert np.max(np.abs(grid.c[1:, 1:, 0] - np.array(c_ref))) < 1e-12


def test_forward_grid_boundaries_and_single_cell():
    p = random_params(3, 2)
    x = np.random.default_rng(0).standard_normal((1, 1, 3))
    g = forward_grid(x, p)
    io = CellIO(x[0, 0], np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    s, c = cell_step(io, p)
    assert np.allclose(g.s[1, 1], s, atol=1e-15) and np.allclose(g.c[1, 1], c, atol=1e-15)
    g = forward_grid(np.random.default_rng(1).standard_normal((4, 3, 3)), p)
    assert np.all(g.s[0] == 0) and np.all(g.s[:, 0] == 0) and np.all(g.c[0] == 0)
    with pytest.raises(EmptyInputError):
        forward_grid(np.zeros((0, 2, 3)), p)


def test_interior_cells_satisfy_cell_equations():
    p = random_params(3, 4)
    x = np.random.default_rng(2).standard_normal((3, 4, 3))
    g = forward_grid(x, p)
    for t in range(1, 4):
        for n in range(1, 5):
            io = CellIO(x[t - 1, n - 1], g.s[t - 1, n], g.c[t - 1, n], g.s[t, n - 1], g.c[t, n - 1])
            s, c = cell_step(io, p)
            assert np.allclose(s, g.s[t, n], atol=1e-14) and np.allclose(c, g.c[t, n], atol=1e-14)


def test_evaluation_order_independence():
    p = random_params(5, 3)
    x = np.random.default_rng(3).standard_normal((5, 4, 5))
    ref = forward_grid(x, p, "row")
    for order in ("column", "diagonal"):
        g = forward_grid(x, p, order)
        assert np.array_equal(g.s, ref.s) and np.array_equal(g.c, ref.c)


def test_lambda_mixture_is_convex():
    p = random_params(3, 4, seed=5)
    x = 2.0 * np.random.default_rng(4).standard_normal((5, 5, 3))
    g = forward_grid(x, p)
    left, above = g.c[:-1, 1:], g.c[1:, :-1]
    lo, hi = np.minimum(left, above), np.maximum(left, above)
    assert np.all(g.mix >= lo - 1e-15) and np.all(g.mix <= hi + 1e-15)
    assert np.all((g.gates > 0) & (g.gates < 1) | (np.abs(g.gates) < 1))


def test_row_composition_is_bit_identical():
    p = random_params(4, 3)
    x = np.random.default_rng(5).standard_normal((6, 4, 4))
    g = forward_grid(x, p)
    row = (np.zeros((6, 3)), np.zeros((6, 3)))
    for n in range(4):
        row = forward_row(x[:, n, :], row, p)
        assert np.array_equal(row[0], g.s[1:, n + 1]) and np.array_equal(row[1], g.c[1:, n + 1])
    first = forward_grid(x[:, :1], p)
    assert np.array_equal(forward_row(x[:, 0], (np.zeros((6, 3)),) * 2, p)[0], first.s[1:, 1])
    with pytest.raises(DimensionError):
        forward_row(x[:, 0], (np.zeros((5, 3)), np.zeros((5, 3))), p)


def test_cell_counter_closed_forms():
    p = random_params(4, 3)
    Tp, N = 6, 5
    x = np.random.default_rng(6).standard_normal((Tp, N, 4))
    CELL_STEPS.reset()
    row = (np.zeros((Tp, 3)), np.zeros((Tp, 3)))
    for n in range(N):
        row = forward_row(x[:, n], row, p)
    assert CELL_STEPS.count == N * Tp
    CELL_STEPS.reset()
    for n in range(1, N + 1):
        forward_grid(x[:, :n], p)
    assert CELL_STEPS.count == N * (N + 1) // 2 * Tp


def _grid_loss(x, p, w):
    return float(np.sum(w * forward_grid(x, p).s[1:, 1:]))


def _check_grid_grads(Tp, R, m, d, tol, seed):
    p = random_params(m, d, seed)
    x = np.random.default_rng(seed).standard_normal((Tp, R, m))
    w = np.random.default_rng(seed + 1).standard_normal((Tp, R, d))
    g = forward_grid(x, p)
    dx = backward_grid(g, x, w, p)
    f = lambda: _grid_loss(x, p, w)  # noqa: E731
    for q in p.parameters():
        assert rel_err(q.grad, central_diff(f, q.value)) < tol, q.name
    assert rel_err(dx, central_diff(f, x)) < tol


def test_backward_scalar_2x2():
    _check_grid_grads(2, 2, 1, 1, 1e-6, seed=0)


def test_backward_4x3():
    _check_grid_grads(4, 3, 6, 4, 1e-5, seed=1)


def test_backward_zero_upstream():
    p = random_params(3, 2)
    x = np.random.default_rng(0).standard_normal((3, 3, 3))
    dx = backward_grid(forward_grid(x, p), x, np.zeros((3, 3, 2)), p)
    assert all(np.all(q.grad == 0) for q in p.parameters()) and np.all(dx == 0)


def test_backward_requires_cached_activations():
    p = random_params(3, 2)
    x = np.zeros((2, 2, 3))
    g = forward_grid(x, p)
    g.gates = None
    with pytest.raises(ValueError):
        backward_grid(g, x, np.zeros((2, 2, 2)), p)
