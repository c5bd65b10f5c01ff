"""Beam search with row-wise incremental 2DLSTM evaluation.

Every hypothesis caches the (s, c) states of the last grid row it computed;
extending it by one label costs exactly T' cell evaluations. The
``full_recompute`` mode rebuilds the whole grid for each prefix and exists
only as the oracle the incremental path is checked against.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import encode
from .model import Vocabulary, build_grid_inputs, readout_row, row_inputs
from .tensor import DTYPE, DimensionError, log_softmax
from .twodlstm import CELL_STEPS, forward_grid, forward_row


@dataclass
class Hypothesis:
    prefix: tuple
    log_prob: float
    row_cache: tuple  # (s, c), each [T' x d]
    finished: bool = False


@dataclass
class BeamConfig:
    beam_size: int = 12
    max_rows: int = None  # default 2 T' + 5
    length_norm: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_rows is not None and self.max_rows < 1:
            raise ValueError("max_rows must be >= 1")


@dataclass
class Candidate:
    parent: Hypothesis
    label: int
    log_prob: float
    row: tuple

    def key(self):
        return (-self.log_prob, self.parent.prefix + (self.label,))


def initial_hypothesis(h, params):
    zeros = np.zeros((h.shape[0], params.grid.hidden), dtype=DTYPE)
    return Hypothesis((), 0.0, (zeros, zeros.copy()))


def score_row(h, hyp, params, full_recompute=False):
    """Log-probabilities of the next label after ``hyp.prefix`` and the new row states."""
    if full_recompute:
        grid = forward_grid(build_grid_inputs(h, hyp.prefix, params.emb.value), params.grid)
        row = grid.row(grid.shape[1])
        row = (row[0].copy(), row[1].copy())
    else:
        s_prev, c_prev = hyp.row_cache
        if s_prev.shape[0] != h.shape[0]:
            raise DimensionError(
                f"row cache covers {s_prev.shape[0]} frames, encoder has {h.shape[0]}")
        last = hyp.prefix[-1] if hyp.prefix else Vocabulary.bos
        row = forward_row(row_inputs(h, last, params.emb.value), hyp.row_cache, params.grid)
    logits, _ = readout_row(row[0], params)
    return log_softmax(logits), row


def decode_step(hyps, h, params, full_recompute=False):
    """Expand every unfinished hypothesis by each label; finished ones pass through."""
    out = []
    for hyp in hyps:
        if hyp.finished:
            out.append(hyp)
            continue
        logp, row = score_row(h, hyp, params, full_recompute)
        out.extend(Candidate(hyp, v, hyp.log_prob + float(logp[v]), row)
                   for v in range(len(logp)))
    return out


@dataclass
class BeamResult:
    labels: list
    log_prob: float
    truncated: bool
    rows: int
    cell_steps: int = 0


def _rank(h, length_norm):
    if not length_norm:
        return h.log_prob
    return h.log_prob / max(1, len(h.prefix))


def beam_search(x, params, cfg=None, full_recompute=False, eos=Vocabulary.eos):
    """Best label sequence for frames ``x`` and its log-probability (EOS included).

    Candidates are ranked by accumulated log-probability with ties broken by
    the lexicographically smaller prefix. EOS extensions that make the top
    ``beam_size`` retire to the finished pool and the beam is refilled from
    the best unfinished candidates. Search stops when no unfinished
    hypothesis can beat the best finished one, when the beam is empty, or
    after ``max_rows`` rows.
    """
    cfg = cfg or BeamConfig()
    start = CELL_STEPS.count
    h = encode(x, params.enc_cfg, params.encoder).h
    max_rows = cfg.max_rows or 2 * h.shape[0] + 5
    beam = [initial_hypothesis(h, params)]
    finished = []
    rows = 0
    truncated = False
    while beam:
        if rows >= max_rows:
            truncated = True
            break
        cands = sorted(decode_step(beam, h, params, full_recompute), key=Candidate.key)
        rows += 1
        beam = []
        for rank, cand in enumerate(cands):
            prefix = cand.parent.prefix + (cand.label,)
            if cand.label == eos:
                if rank < cfg.beam_size:
                    finished.append(Hypothesis(prefix, cand.log_prob, cand.row, True))
                continue
            if len(beam) == cfg.beam_size:
                break
            beam.append(Hypothesis(prefix, cand.log_prob, cand.row))
        if finished and beam:
            best_done = max(_rank(f, cfg.length_norm) for f in finished)
            if not cfg.length_norm and beam[0].log_prob <= best_done:
                break
    pool = finished or beam
    best = min(pool, key=lambda hyp: (-_rank(hyp, cfg.length_norm), hyp.prefix))
    labels = list(best.prefix[:-1] if best.finished else best.prefix)
    return BeamResult(labels, best.log_prob, truncated and not finished, rows,
                      CELL_STEPS.count - start)


def greedy_decode(x, params, max_rows=None, eos=Vocabulary.eos):
    """Argmax chain recomputed from scratch with the full grid at every step."""
    h = encode(x, params.enc_cfg, params.encoder).h
    max_rows = max_rows or 2 * h.shape[0] + 5
    prefix, total = [], 0.0
    for _ in range(max_rows):
        grid = forward_grid(build_grid_inputs(h, prefix, params.emb.value), params.grid)
        logits, _ = readout_row(grid.s[1:, len(prefix) + 1], params)
        logp = log_softmax(logits)
        v = int(np.argmax(logp))
        total += float(logp[v])
        if v == eos:
            return prefix, total
        prefix.append(v)
    return prefix, total


@dataclass
class DecodeReport:
    transcripts: list = field(default_factory=list)  # (id, symbols, log_prob)
    wall_seconds: float = 0.0
    cell_steps: int = 0
    truncated: int = 0
    per_sample: list = field(default_factory=list)  # (id, rows, T', cell_steps)


def decode_corpus(samples, params, vocab, cfg=None, full_recompute=False):
    """Decode every sample in input order; reports wall-clock time and cell count."""
    report = DecodeReport()
    t0 = time.perf_counter()
    for s in samples:
        res = beam_search(s.frames, params, cfg, full_recompute)
        report.transcripts.append((s.id, vocab.decode(res.labels), res.log_prob))
        report.cell_steps += res.cell_steps
        report.truncated += res.truncated
        Tp = params.enc_cfg.reduced_length(s.frames.shape[0])
        report.per_sample.append((s.id, res.rows, Tp, res.cell_steps))
    report.wall_seconds = time.perf_counter() - t0 if samples else 0.0
    return report


def write_transcripts(transcripts, path):
    with open(path, "w") as fh:
        for sid, symbols, lp in transcripts:
            fh.write(f"{sid}\t{' '.join(symbols)}\t{lp!r}\n")


def read_transcripts(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected id<TAB>symbols<TAB>log_prob")
            out[parts[0]] = parts[1].split()
    return out
