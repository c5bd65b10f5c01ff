"""Full conditional model p(w_1^N | x_1^T): encoder, 2DLSTM grid, max-pool readout.

Grid row n (1-based) consumes the embedding of w_{n-1} (w_0 = BOS) and
predicts w_n; row N+1 predicts EOS.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .tensor import DTYPE, Parameter, glorot_init, log_softmax, max_over_axis
from .twodlstm import GridState, TwoDLSTMParams, backward_grid, forward_grid

BOS = "<bos>"
EOS = "<eos>"


class Vocabulary:
    """Symbol <-> id bijection with ``<bos>`` = 0 and ``<eos>`` = 1."""

    def __init__(self, symbols):
        symbols = list(symbols)
        if symbols[:2] != [BOS, EOS]:
            symbols = [BOS, EOS] + [s for s in symbols if s not in (BOS, EOS)]
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate vocabulary symbols")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}

    bos = 0
    eos = 1

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def encode(self, symbols):
        try:
            return [self.index[s] for s in symbols]
        except KeyError as err:
            raise ValueError(f"symbol {err.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return [self.symbols[i] for i in ids]

    def save(self, path):
        Path(path).write_text("".join(s + "\n" for s in self.symbols))

    @classmethod
    def load(cls, path):
        symbols = Path(path).read_text().splitlines()
        if symbols[:2] != [BOS, EOS]:
            raise ValueError(f"{path}: first two lines must be {BOS} and {EOS}")
        return cls(symbols)


@dataclass
class ModelConfig:
    vocab_size: int
    feature_dim: int
    encoder_layers: int = 2
    encoder_hidden: int = 32
    pool_factors: list = field(default_factory=lambda: [2, 4])
    grid_hidden: int = 32
    embed_dim: int = 16

    def encoder_config(self):
        return enc.EncoderConfig(self.feature_dim, self.encoder_layers,
                                 self.encoder_hidden, list(self.pool_factors))


class ModelParams:
    """Every trainable tensor of the model, addressable by name."""

    def __init__(self, cfg, enc_layers, grid, emb, readout_W, readout_b, out_W, out_b):
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        self.cfg.pool_factors = list(self.enc_cfg.pool_factors)
        self.encoder = enc_layers
        self.grid = grid
        self.emb = emb
        self.readout_W, self.readout_b = readout_W, readout_b
        self.out_W, self.out_b = out_W, out_b

    @classmethod
    def init(cls, cfg, rng):
        enc_cfg = cfg.encoder_config()
        layers = enc.init_encoder(rng.child(1), enc_cfg)
        grid_in = 2 * cfg.encoder_hidden + cfg.embed_dim
        grid = TwoDLSTMParams.init(rng.child(2), grid_in, cfg.grid_hidden)
        d, V = cfg.grid_hidden, cfg.vocab_size
        emb = Parameter("emb", glorot_init(rng.child(3), (V, cfg.embed_dim)))
        readout_W = Parameter("readout.W", glorot_init(rng.child(4), (d, d)))
        out_W = Parameter("out.W", glorot_init(rng.child(5), (V, d)))
        return cls(cfg, layers, grid, emb, readout_W, Parameter("readout.b", np.zeros(d)),
                   out_W, Parameter("out.b", np.zeros(V)))

    def parameters(self):
        ps = []
        for fwd, bwd in self.encoder:
            ps += fwd.parameters() + bwd.parameters()
        ps += self.grid.parameters()
        ps += [self.emb, self.readout_W, self.readout_b, self.out_W, self.out_b]
        return ps

    def named(self):
        return {p.name: p for p in self.parameters()}

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.value.size for p in self.parameters())

    def copy(self):
        clone = ModelParams.__new__(ModelParams)
        clone.__dict__.update(self.__dict__)
        clone.cfg = ModelConfig(**{**self.cfg.__dict__, "pool_factors": list(self.cfg.pool_factors)})
        clone.enc_cfg = clone.cfg.encoder_config()

        def cp(p):
            return Parameter(p.name, p.value.copy(), p.grad.copy())

        clone.encoder = [tuple(enc.LSTMCellParams(cp(c.W), cp(c.U), cp(c.b)) for c in layer)
                         for layer in self.encoder]
        g = self.grid
        clone.grid = TwoDLSTMParams(cp(g.W), cp(g.U), cp(g.V), cp(g.b))
        for name in ("emb", "readout_W", "readout_b", "out_W", "out_b"):
            setattr(clone, name, cp(getattr(self, name)))
        return clone


def build_grid_inputs(h, labels, E, bos=Vocabulary.bos):
    """Grid inputs [T' x (N+1) x (2d_enc + e)]: cell (t', n) gets [h_t'; E[w_{n-1}]]."""
    h = h.h if isinstance(h, enc.EncoderStates) else h
    V = E.shape[0]
    prev = [bos] + [int(w) for w in labels]
    if any(not 0 <= w < V for w in prev):
        raise ValueError(f"label id out of range [0, {V})")
    Tp, R = h.shape[0], len(prev)
    X = np.empty((Tp, R, h.shape[1] + E.shape[1]), dtype=DTYPE)
    X[:, :, :h.shape[1]] = h[:, None, :]
    X[:, :, h.shape[1]:] = E[prev][None, :, :]
    return X


def row_inputs(h, label, E):
    """Inputs [T' x m] of a single grid row consuming ``label``'s embedding."""
    X = np.empty((h.shape[0], h.shape[1] + E.shape[1]), dtype=DTYPE)
    X[:, :h.shape[1]] = h
    X[:, h.shape[1]:] = E[label]
    return X


def readout_row(s_row, params, mask=None):
    """Logits of one grid row: W_out tanh(W_r maxpool_t'(s) + b_r) + b_out."""
    pooled, idx = max_over_axis(s_row, axis=0)
    if mask is not None:
        pooled = pooled * mask
    r = np.tanh(params.readout_W.value @ pooled + params.readout_b.value)
    logits = params.out_W.value @ r + params.out_b.value
    return logits, (pooled, idx, r)


@dataclass
class TeacherForcedOutput:
    logits: np.ndarray  # [N+1 x V]
    grid: GridState
    argmax: np.ndarray  # [N+1 x d] winning t' per feature
    encoder_states: enc.EncoderStates = None
    cache: dict = None


def forward_teacher_forced(x, labels, params, dropout_rate=0.0, rng=None, keep_cache=False):
    """Score ``labels`` (ids, no BOS/EOS) against frames ``x`` with teacher forcing."""
    enc_cache = enc.EncoderCache() if keep_cache else None
    drop_rng = rng.child(0) if dropout_rate > 0.0 else None
    states = enc.encode(x, params.enc_cfg, params.encoder, dropout_rate, drop_rng, enc_cache)
    X = build_grid_inputs(states, labels, params.emb.value)
    grid = forward_grid(X, params.grid)
    R = X.shape[1]
    masks = None
    if dropout_rate > 0.0:
        keep = 1.0 - dropout_rate
        masks = (rng.child(1).random((R, params.grid.hidden)) < keep) / keep
    logits = np.empty((R, params.cfg.vocab_size), dtype=DTYPE)
    argmax = np.empty((R, params.grid.hidden), dtype=np.int64)
    readouts = []
    for n in range(R):
        logits[n], aux = readout_row(grid.s[1:, n + 1], params, None if masks is None else masks[n])
        argmax[n] = aux[1]
        readouts.append(aux)
    cache = None
    if keep_cache:
        cache = {"encoder": enc_cache, "inputs": X, "readouts": readouts, "masks": masks,
                 "prev": [Vocabulary.bos] + [int(w) for w in labels]}
    return TeacherForcedOutput(logits, grid, argmax, states, cache)


def backward_teacher_forced(out, dlogits, params):
    """Accumulate every parameter gradient from d(loss)/d(logits); returns d/dx."""
    cache = out.cache
    d = params.grid.hidden
    Tp, R = out.grid.shape
    ds = np.zeros((Tp, R, d), dtype=DTYPE)
    for n in range(R):
        pooled, idx, r = cache["readouts"][n]
        dl = dlogits[n]
        params.out_W.grad += np.outer(dl, r)
        params.out_b.grad += dl
        du = (params.out_W.value.T @ dl) * (1.0 - r * r)
        params.readout_W.grad += np.outer(du, pooled)
        params.readout_b.grad += du
        dm = params.readout_W.value.T @ du
        if cache["masks"] is not None:
            dm = dm * cache["masks"][n]
        ds[idx, n, np.arange(d)] += dm
    dX = backward_grid(out.grid, cache["inputs"], ds, params.grid)
    h_dim = out.encoder_states.h.shape[1]
    np.add.at(params.emb.grad, cache["prev"], dX[:, :, h_dim:].sum(axis=0))
    dh = dX[:, :, :h_dim].sum(axis=1)
    return enc.encode_backward(dh, params.enc_cfg, params.encoder, cache["encoder"])


def _smoothed_targets(refs, V, eps):
    refs = np.asarray(refs, dtype=np.int64)
    if refs.size and (refs.min() < 0 or refs.max() >= V):
        raise ValueError(f"reference id out of range [0, {V})")
    off = eps / (V - 1) if V > 1 else 0.0
    target = np.full((len(refs), V), off, dtype=DTYPE)
    target[np.arange(len(refs)), refs] = 1.0 - eps
    return target


def loss_label_smoothed(logits, refs, eps=0.1):
    """Mean over rows of cross-entropy against the label-smoothed target."""
    target = _smoothed_targets(refs, logits.shape[1], eps)
    return float(-np.mean(np.sum(target * log_softmax(logits), axis=1)))


def loss_label_smoothed_grad(logits, refs, eps=0.1):
    """(loss, d loss / d logits)."""
    target = _smoothed_targets(refs, logits.shape[1], eps)
    logp = log_softmax(logits)
    R = logits.shape[0]
    loss = float(-np.mean(np.sum(target * logp, axis=1)))
    return loss, (np.exp(logp) - target) / R


def references(labels, eos=Vocabulary.eos):
    """Row targets: w_1 .. w_N followed by EOS."""
    return [int(w) for w in labels] + [eos]


def frame_error_rate(logits, refs):
    refs = np.asarray(refs)
    if len(refs) == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=1) != refs))


def nll_sum(logits, refs):
    logp = log_softmax(logits)
    return float(-np.sum(logp[np.arange(len(refs)), refs]))


def perplexity(logits, refs):
    """exp of the mean unsmoothed negative log-probability of the references."""
    return float(np.exp(nll_sum(logits, refs) / len(refs)))
