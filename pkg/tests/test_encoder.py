import math

import numpy as np
import pytest

from grid2seq.encoder import (EncoderCache, EncoderConfig, LSTMCellParams, bilstm_layer, encode,
                              encode_backward, init_encoder, lstm_step, max_pool_time)
from grid2seq.tensor import DimensionError, EmptyInputError, Parameter, SeededRng

from conftest import central_diff, rel_err


def _cell(m, d, seed=0, scale=1.0):
    p = LSTMCellParams.init(SeededRng(seed), "c", m, d)
    for k, q in enumerate(p.parameters()):
        q.value += scale * 0.1 * SeededRng(seed, 9, k).normal(q.shape)
    return p


def _zero_layer(m, d):
    def z():
        return LSTMCellParams(Parameter("W", np.zeros((4 * d, m))), Parameter("U", np.zeros((4 * d, d))),
                              Parameter("b", np.zeros(4 * d)))
    return (z(), z())


def test_lstm_step_zero_fixed_point():
    p = _zero_layer(3, 2)[0]
    h, c = lstm_step(np.ones(3), np.zeros(2), np.zeros(2), p)
    assert np.array_equal(h, np.zeros(2)) and np.array_equal(c, np.zeros(2))


def test_lstm_step_saturated_scalar():
    # biases force i = 1, f = 0, o = 1; candidate weight 50 on input 1
    W = np.array([[0.0], [0.0], [0.0], [50.0]])
    b = np.array([40.0, -40.0, 40.0, 0.0])
    p = LSTMCellParams(Parameter("W", W), Parameter("U", np.zeros((4, 1))), Parameter("b", b))
    h, c = lstm_step(np.array([1.0]), np.zeros(1), np.array([7.0]), p)
    assert c[0] == pytest.approx(math.tanh(50.0), abs=1e-12)
    assert h[0] == pytest.approx(math.tanh(math.tanh(50.0)), abs=1e-12)


def test_lstm_step_gradients():
    p = _cell(3, 4)
    rng = np.random.default_rng(0)
    x, h0, c0 = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(4)
    # a length-1 scan with the given initial state is lstm_step; reuse the layer backward
    from grid2seq.encoder import _lstm_scan, _lstm_scan_backward
    for q in p.parameters():
        q.zero_grad()
    f = lambda: float(np.sum(lstm_step(x, np.zeros(4), np.zeros(4), p)[0]))  # noqa: E731
    scan = _lstm_scan(x[None, :], p, False)
    _lstm_scan_backward(np.ones((1, 4)), scan, p)
    for q in p.parameters():
        assert rel_err(q.grad, central_diff(f, q.value)) < 1e-6
    with pytest.raises(DimensionError):
        lstm_step(x, h0[:2], c0, p)


def test_scan_matches_repeated_lstm_step():
    p = _cell(3, 4, seed=2)
    x = np.random.default_rng(5).standard_normal((6, 3))
    from grid2seq.encoder import _lstm_scan
    scan = _lstm_scan(x, p, False)
    h, c = np.zeros(4), np.zeros(4)
    for t in range(6):
        h, c = lstm_step(x[t], h, c, p)
        assert np.allclose(scan.h[t], h, atol=1e-14)


def test_bilstm_singleton_and_zero():
    layer = (_cell(3, 2, 1), _cell(3, 2, 2))
    x = np.random.default_rng(0).standard_normal((1, 3))
    out = bilstm_layer(x, layer)
    assert out.shape == (1, 4)
    assert np.allclose(out[0, :2], lstm_step(x[0], np.zeros(2), np.zeros(2), layer[0])[0])
    assert np.allclose(out[0, 2:], lstm_step(x[0], np.zeros(2), np.zeros(2), layer[1])[0])
    assert np.array_equal(bilstm_layer(np.ones((5, 3)), _zero_layer(3, 2)), np.zeros((5, 4)))
    with pytest.raises(EmptyInputError):
        bilstm_layer(np.empty((0, 3)), layer)


def test_bilstm_direction_symmetry():
    fwd, bwd = _cell(3, 2, 1), _cell(3, 2, 2)
    x = np.random.default_rng(1).standard_normal((7, 3))
    a = bilstm_layer(x, (fwd, bwd))
    b = bilstm_layer(x[::-1], (bwd, fwd))
    swapped = np.concatenate([a[:, 2:], a[:, :2]], axis=1)
    assert np.allclose(b, swapped[::-1], atol=1e-14)


def test_max_pool_time():
    x = np.random.default_rng(0).standard_normal((5, 2))
    assert np.array_equal(max_pool_time(x, 1), x)
    assert np.array_equal(max_pool_time(np.array([[1.0], [3], [2], [0], [7]]), 2)[:, 0], [3, 2, 7])
    seq = np.zeros((16, 1))
    for r in (2, 2, 2):
        seq = max_pool_time(seq, r)
    assert seq.shape == (2, 1)


def test_encode_lengths_and_zero_weights():
    cfg = EncoderConfig(4, 2, 3, [2, 2])
    layers = [_zero_layer(4, 3), _zero_layer(6, 3)]
    st = encode(np.ones((8, 4)), cfg, layers)
    assert st.reduced_length == 2 and np.array_equal(st.h, np.zeros((2, 6)))
    for T in (1, 5, 8, 9, 17):
        assert cfg.reduced_length(T) == math.ceil(math.ceil(T / 2) / 2)
    with pytest.raises(EmptyInputError):
        encode(np.empty((0, 4)), cfg, layers)


def test_encoder_config_factors():
    cfg = EncoderConfig(4, 2, 8, [8])
    assert cfg.pool_factors == [8, 1] and cfg.reduction == 8
    with pytest.raises(ValueError):
        EncoderConfig(4, 1, 8, [2, 4])


def test_encoder_gradient_vs_finite_differences():
    cfg = EncoderConfig(3, 2, 4, [2, 2])
    layers = init_encoder(SeededRng(3), cfg)
    for k, layer in enumerate(layers):
        for c in layer:
            for q in c.parameters():
                q.value += 0.1 * SeededRng(4, k, q.value.size).normal(q.shape)
    x = np.random.default_rng(2).standard_normal((8, 3))
    w = np.random.default_rng(3).standard_normal((2, 8))
    cache = EncoderCache()
    encode(x, cfg, layers, cache=cache)
    dx = encode_backward(w, cfg, layers, cache)
    f = lambda: float(np.sum(w * encode(x, cfg, layers).h))  # noqa: E731
    for c in layers[0]:
        for q in c.parameters():
            assert rel_err(q.grad, central_diff(f, q.value)) < 1e-5, q.name
    assert rel_err(dx, central_diff(f, x)) < 1e-5


def test_encode_is_deterministic():
    cfg = EncoderConfig(3, 2, 4, [2, 4])
    x = np.random.default_rng(0).standard_normal((20, 3))
    a = encode(x, cfg, init_encoder(SeededRng(1), cfg)).h
    b = encode(x, cfg, init_encoder(SeededRng(1), cfg)).h
    assert np.array_equal(a, b) and a.shape == (3, 8)
