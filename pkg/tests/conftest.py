import numpy as np
import pytest

from grid2seq.model import ModelConfig, ModelParams
from grid2seq.tensor import SeededRng


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def perturbed(params, seed=1, scale=0.1):
    for k, p in enumerate(params.parameters()):
        p.value += scale * SeededRng(seed, k).normal(p.shape)
    return params


@pytest.fixture
def small_cfg():
    return ModelConfig(vocab_size=5, feature_dim=4, encoder_layers=2, encoder_hidden=8,
                       pool_factors=[2, 4], grid_hidden=8, embed_dim=8)


@pytest.fixture
def small_params(small_cfg):
    return perturbed(ModelParams.init(small_cfg, SeededRng(0)))
