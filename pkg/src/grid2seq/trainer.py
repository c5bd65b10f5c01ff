"""Training loop: Adam with warmup, Newbob decay, layer-wise encoder growth."""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .encoder import EncoderConfig, LSTMCellParams, init_encoder_layer
from .model import (ModelConfig, ModelParams, backward_teacher_forced, forward_teacher_forced,
                    log_softmax, loss_label_smoothed_grad, references)
from .tensor import Parameter, SeededRng
from .twodlstm import TwoDLSTMParams

log = logging.getLogger(__name__)

PATH_KEYS = ("train_data", "dev_data", "vocab", "out_dir")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainStage:
    epoch: int
    layers: int
    pool_factors: tuple


def parse_pretrain_schedule(text):
    """``epoch:layers:f1,f2;...`` -> list of stages."""
    stages = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        try:
            epoch, layers, factors = chunk.split(":")
            stages.append(PretrainStage(int(epoch), int(layers),
                                        tuple(int(f) for f in factors.split(","))))
        except ValueError:
            raise ConfigError(f"bad pretrain stage {chunk!r}, expected epoch:layers:f1,f2") from None
    return stages


@dataclass
class TrainConfig:
    train_data: str = ""
    dev_data: str = ""
    vocab: str = ""
    out_dir: str = "run"
    feature_dim: int = 8
    encoder_layers: int = 2
    encoder_hidden: int = 32
    pool_factors: str = "2,4"
    grid_hidden: int = 32
    embed_dim: int = 16
    base_lr: float = 0.002
    warmup_steps: int = 500
    newbob_factor: float = 0.7
    newbob_patience: int = 1
    dropout_rate: float = 0.3
    label_smoothing: float = 0.1
    batch_size: int = 8
    max_epochs: int = 30
    checkpoints_per_epoch: int = 2
    clip_norm: float = 5.0
    seed: int = 1
    pretrain_schedule: str = ""
    keep_checkpoints: int = 3

    def __post_init__(self):
        if not 0.0 < self.newbob_factor < 1.0:
            raise ConfigError("newbob_factor must lie in (0, 1)")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.batch_size < 1 or self.checkpoints_per_epoch < 1:
            raise ConfigError("batch_size and checkpoints_per_epoch must be >= 1")
        stages = self.stages()
        if stages:
            if stages[0].epoch != 0:
                raise ConfigError("pretrain schedule must start at epoch 0")
            totals = {math.prod(s.pool_factors) for s in stages}
            if len(totals) != 1:
                raise ConfigError("pretrain stages must keep the total reduction factor")
            for a, b in zip(stages, stages[1:]):
                if b.layers < a.layers or b.epoch <= a.epoch:
                    raise ConfigError("pretrain schedule must grow with increasing epochs")

    def factors(self):
        return [int(f) for f in str(self.pool_factors).split(",") if f.strip()]

    def stages(self):
        return parse_pretrain_schedule(self.pretrain_schedule)

    def model_config(self, vocab_size):
        layers, factors = self.encoder_layers, self.factors()
        stages = self.stages()
        if stages:
            layers, factors = stages[0].layers, list(stages[0].pool_factors)
        return ModelConfig(vocab_size, self.feature_dim, layers, self.encoder_hidden,
                           factors, self.grid_hidden, self.embed_dim)

    def canonical(self):
        """Key=value text of every non-path setting; hashed into checkpoints."""
        return "\n".join(f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)
                         if f.name not in PATH_KEYS)

    def hash(self):
        return ckpt.config_hash(self.canonical())


def parse_config(text):
    """Flat ``key=value`` lines with ``#`` comments; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        typ = fields[key].type
        try:
            values[key] = (typ if typ in (int, float) else str)(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects {typ}, got {value!r}") from None
    return TrainConfig(**values)


def load_config(path):
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def clip_gradients(params, max_norm):
    """Scale all grads so their global L2 norm is at most ``max_norm``; return the norm."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def adam_step(params, state, lr, clip_norm=5.0):
    """Clip by global norm, then apply one bias-corrected Adam update in place."""
    norm = clip_gradients(params, clip_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        m = state.m.setdefault(p.name, np.zeros_like(p.value))
        v = state.v.setdefault(p.name, np.zeros_like(p.value))
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


def newbob_decays(dev_ppls, patience):
    """Number of decays triggered by a dev-perplexity history."""
    best, bad, decays = math.inf, 0, 0
    for ppl in dev_ppls:
        if ppl < best:
            best, bad = ppl, 0
        else:
            bad += 1
            if bad >= patience:
                decays += 1
                bad = 0
    return decays


def lr_schedule(step, dev_ppls, cfg):
    """Linear warmup to base_lr, then Newbob decay on stalled dev perplexity."""
    warm = 1.0 if cfg.warmup_steps == 0 else min(1.0, step / cfg.warmup_steps)
    return cfg.base_lr * warm * cfg.newbob_factor ** newbob_decays(dev_ppls, cfg.newbob_patience)


# ------------------------------------------------------------- pretraining


def apply_pretrain_stage(params, stage, rng):
    """Grow the encoder to ``stage.layers``; existing Parameter objects are kept."""
    current = params.cfg.encoder_layers
    if stage.layers < current:
        raise ConfigError(f"pretrain stage shrinks encoder from {current} to {stage.layers}")
    enc_cfg = EncoderConfig(params.cfg.feature_dim, stage.layers, params.cfg.encoder_hidden,
                            list(stage.pool_factors))
    if enc_cfg.reduction != params.enc_cfg.reduction:
        raise ConfigError(f"pretrain stage changes total reduction "
                          f"{params.enc_cfg.reduction} -> {enc_cfg.reduction}")
    layers = list(params.encoder)
    d = params.cfg.encoder_hidden
    for k in range(current, stage.layers):
        layers.append(init_encoder_layer(rng.child(k), f"enc.{k}", 2 * d, d))
    cfg = dataclasses.replace(params.cfg, encoder_layers=stage.layers,
                              pool_factors=list(enc_cfg.pool_factors))
    return ModelParams(cfg, layers, params.grid, params.emb, params.readout_W, params.readout_b,
                       params.out_W, params.out_b)


def stage_for_epoch(stages, epoch):
    active = None
    for s in stages:
        if s.epoch <= epoch:
            active = s
    return active


# -------------------------------------------------------------- checkpoint


def _model_records(params):
    c = params.cfg
    recs = {p.name: p.value for p in params.parameters()}
    recs["model.dims"] = np.array([c.vocab_size, c.feature_dim, c.encoder_layers,
                                   c.encoder_hidden, c.grid_hidden, c.embed_dim], dtype=float)
    recs["model.pool_factors"] = np.array(c.pool_factors, dtype=float)
    return recs


def save_checkpoint(path, params, state=None, cfg_hash=0, step=0, extra=None):
    recs = _model_records(params)
    if state is not None:
        recs["adam.step"] = np.array(state.step, dtype=float)
        for name in state.m:
            recs[f"adam.m.{name}"] = state.m[name]
            recs[f"adam.v.{name}"] = state.v[name]
    for name, value in (extra or {}).items():
        recs[name] = np.asarray(value, dtype=float)
    ckpt.write_records(path, recs, cfg_hash, step)


def params_from_records(recs):
    dims = [int(v) for v in recs["model.dims"]]
    cfg = ModelConfig(dims[0], dims[1], dims[2], dims[3],
                      [int(f) for f in recs["model.pool_factors"]], dims[4], dims[5])

    def par(name):
        if name not in recs:
            raise ckpt.CheckpointError(f"checkpoint lacks parameter {name}")
        return Parameter(name, recs[name].copy())

    layers = []
    for k in range(cfg.encoder_layers):
        layers.append(tuple(LSTMCellParams(par(f"enc.{k}.{d}.W"), par(f"enc.{k}.{d}.U"),
                                           par(f"enc.{k}.{d}.b")) for d in ("fwd", "bwd")))
    grid = TwoDLSTMParams(par("grid.W"), par("grid.U"), par("grid.V"), par("grid.b"))
    return ModelParams(cfg, layers, grid, par("emb"), par("readout.W"), par("readout.b"),
                       par("out.W"), par("out.b"))


def load_checkpoint(path):
    """Return (params, AdamState, records, config hash, step)."""
    recs, cfg_hash, step = ckpt.read_records(path)
    params = params_from_records(recs)
    state = AdamState()
    if "adam.step" in recs:
        state.step = int(recs["adam.step"])
        for name in recs:
            if name.startswith("adam.m."):
                key = name[len("adam.m."):]
                state.m[key] = recs[name].copy()
                state.v[key] = recs[f"adam.v.{key}"].copy()
    return params, state, recs, cfg_hash, step


# ---------------------------------------------------------------- training


def encode_samples(samples, vocab):
    return [(s.frames, vocab.encode(s.labels)) for s in samples]


def evaluate_teacher_forced(params, data):
    """Corpus (perplexity, FER, mean loss-free NLL) over encoded samples."""
    nll, errors, rows = 0.0, 0, 0
    for frames, ids in data:
        out = forward_teacher_forced(frames, ids, params)
        refs = references(ids)
        logp = log_softmax(out.logits)
        nll -= float(np.sum(logp[np.arange(len(refs)), refs]))
        errors += int(np.sum(np.argmax(out.logits, axis=1) != np.asarray(refs)))
        rows += len(refs)
    return math.exp(nll / rows), errors / rows


def batch_gradient(params, batch, cfg, step):
    """Mean label-smoothed loss over ``batch`` with grads accumulated in sample order."""
    params.zero_grads()
    total = 0.0
    for idx, (frames, ids) in batch:
        rng = SeededRng(cfg.seed, 2, step, idx)
        out = forward_teacher_forced(frames, ids, params, cfg.dropout_rate, rng, keep_cache=True)
        loss, dlogits = loss_label_smoothed_grad(out.logits, references(ids), cfg.label_smoothing)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        backward_teacher_forced(out, dlogits / len(batch), params)
        total += loss
    return total / len(batch)


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    history: list
    checkpoints: list


def _checkpoint_positions(n_batches, per_epoch):
    return sorted({max(1, round(k * n_batches / per_epoch)) for k in range(1, per_epoch + 1)})


def train(train_set, dev_set, vocab, cfg, out_dir=None, resume=None, stop_at_step=None):
    """Train from scratch (or from ``resume``) and return a TrainResult.

    ``train_set``/``dev_set`` are SyntheticSample lists. Checkpoints, the
    metric log ``metrics.tsv`` and ``last.g2s``/``best.g2s`` go to
    ``out_dir`` when given. ``stop_at_step`` halts after the first
    checkpoint at or beyond that step.
    """
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    train_data = encode_samples(train_set, vocab)
    dev_data = encode_samples(dev_set, vocab)
    stages = cfg.stages()
    cfg_hash = cfg.hash()
    rng = SeededRng(cfg.seed)
    history, written = [], []
    epoch, batch_pos, step = 0, 0, 0
    dev_ppls = []
    if resume is not None:
        params, state, recs, saved_hash, step = load_checkpoint(resume)
        if saved_hash != cfg_hash:
            raise ConfigError(f"{resume} was written under a different configuration")
        epoch, batch_pos = int(recs["train.epoch"]), int(recs["train.batch"])
        dev_ppls = [float(v) for v in np.atleast_1d(recs.get("dev.ppl_history", []))]
    else:
        params = ModelParams.init(cfg.model_config(len(vocab)), rng.child(0))
        state = AdamState()
    if params.cfg.vocab_size != len(vocab):
        raise ConfigError("vocabulary size does not match the model")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is None:
            (out / "metrics.tsv").write_text("")
    best_ppl = min(dev_ppls) if dev_ppls else math.inf
    n = len(train_data)
    batches_per_epoch = -(-n // cfg.batch_size)
    marks = _checkpoint_positions(batches_per_epoch, cfg.checkpoints_per_epoch)
    losses = []
    while epoch < cfg.max_epochs:
        stage = stage_for_epoch(stages, epoch)
        if stage is not None:
            params = apply_pretrain_stage(params, stage, rng.child(3, stage.epoch))
        order = SeededRng(cfg.seed, 1, epoch).permutation(n)
        while batch_pos < batches_per_epoch:
            idxs = order[batch_pos * cfg.batch_size:(batch_pos + 1) * cfg.batch_size]
            batch = [(int(i), train_data[i]) for i in idxs]
            losses.append(batch_gradient(params, batch, cfg, step))
            step += 1
            adam_step(params.parameters(), state, lr_schedule(step, dev_ppls, cfg), cfg.clip_norm)
            batch_pos += 1
            if batch_pos in marks:
                ppl, fer = evaluate_teacher_forced(params, dev_data)
                dev_ppls.append(ppl)
                lr = lr_schedule(step, dev_ppls, cfg)
                next_epoch, next_pos = (epoch + 1, 0) if batch_pos == batches_per_epoch else (epoch, batch_pos)
                row = {"step": step, "train_loss": float(np.mean(losses)), "dev_ppl": ppl,
                       "dev_fer": fer, "lr": lr, "epoch": epoch}
                losses = []
                history.append(row)
                log.info("step %d epoch %d loss %.4f dev ppl %.4f fer %.4f lr %.2e",
                         step, epoch, row["train_loss"], ppl, fer, lr)
                if out is not None:
                    extra = {"train.epoch": next_epoch, "train.batch": next_pos,
                             "dev.ppl_history": dev_ppls, "dev.fer": fer}
                    path = out / f"ckpt-{step:07d}.g2s"
                    save_checkpoint(path, params, state, cfg_hash, step, extra)
                    written.append(path)
                    for old in written[:-cfg.keep_checkpoints]:
                        old.unlink(missing_ok=True)
                    written = written[-cfg.keep_checkpoints:]
                    save_checkpoint(out / "last.g2s", params, state, cfg_hash, step, extra)
                    if ppl < best_ppl:
                        save_checkpoint(out / "best.g2s", params, state, cfg_hash, step, extra)
                    with open(out / "metrics.tsv", "a") as fh:
                        fh.write(f"{step}\t{row['train_loss']:.6f}\t{ppl:.6f}\t{fer:.6f}\t{lr:.6e}\n")
                best_ppl = min(best_ppl, ppl)
                if stop_at_step is not None and step >= stop_at_step:
                    return TrainResult(params, state, history, written)
        epoch, batch_pos = epoch + 1, 0
    return TrainResult(params, state, history, written)


# -------------------------------------------------------------- grad check


GRAD_CHECK_DEFAULTS = dict(vocab_size=5, feature_dim=4, encoder_layers=2, encoder_hidden=8,
                           pool_factors=[2, 4], grid_hidden=8, embed_dim=8)


def grad_check(model_cfg=None, T=12, N=3, seed=0, h=1e-5, tol=1e-5, label_smoothing=0.1):
    """Compare analytic gradients with central differences for every tensor.

    Dropout is off. Returns {name: relative error} where the error is
    ||analytic - numeric|| / (||analytic|| + ||numeric||).
    """
    model_cfg = model_cfg or ModelConfig(**GRAD_CHECK_DEFAULTS)
    rng = SeededRng(seed)
    params = ModelParams.init(model_cfg, rng.child(0))
    if params.num_parameters() >= 20000:
        raise ConfigError("grad_check needs a small model (< 20k parameters)")
    # nonzero biases exercise every path
    for k, p in enumerate(params.parameters()):
        p.value += 0.1 * rng.child(1, k).normal(p.shape)
    data = rng.child(2)
    frames = data.normal((T, model_cfg.feature_dim))
    ids = [int(v) for v in data.integers(2, model_cfg.vocab_size - 1, N)]
    refs = references(ids)

    def loss_only():
        out = forward_teacher_forced(frames, ids, params)
        return loss_label_smoothed_grad(out.logits, refs, label_smoothing)[0]

    params.zero_grads()
    out = forward_teacher_forced(frames, ids, params, keep_cache=True)
    _, dlogits = loss_label_smoothed_grad(out.logits, refs, label_smoothing)
    backward_teacher_forced(out, dlogits, params)
    report = {}
    for p in params.parameters():
        numeric = np.zeros_like(p.value)
        flat, nflat = p.value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_only()
            flat[i] = orig - h
            down = loss_only()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        denom = np.linalg.norm(p.grad) + np.linalg.norm(numeric)
        report[p.name] = float(np.linalg.norm(p.grad - numeric) / denom) if denom > 0 else 0.0
    return report
