"""Synthetic monotonic transduction task and the plain-text corpus format.

Each label is emitted as a run of noisy copies of its prototype frame, so
T > N and the alignment is monotonic, like speech frames against words.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import BOS, EOS, Vocabulary
from .tensor import DTYPE, SeededRng

SPECIALS = [BOS, EOS, "<pad>", "<unk>"]


@dataclass
class SyntheticTaskConfig:
    content_vocab_size: int = 20
    feature_dim: int = 8
    repeats_min: int = 6
    repeats_max: int = 10
    noise_sigma: float = 0.3
    label_len_min: int = 2
    label_len_max: int = 12
    seed: int = 42

    def __post_init__(self):
        if self.repeats_min < 1 or self.repeats_max < self.repeats_min:
            raise ValueError("need 1 <= repeats_min <= repeats_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.content_vocab_size < 2:
            raise ValueError("content vocabulary needs at least two symbols")
        if self.label_len_min < 0 or self.label_len_max < self.label_len_min:
            raise ValueError("need 0 <= label_len_min <= label_len_max")


@dataclass
class SyntheticSample:
    id: str
    frames: np.ndarray  # [T x F]
    labels: list  # symbols


def task_vocabulary(cfg):
    return Vocabulary(SPECIALS + [f"w{k:02d}" for k in range(cfg.content_vocab_size)])


def prototypes(cfg):
    """Fixed per-label codebook [content_vocab_size x F]."""
    return SeededRng(cfg.seed, 0).normal((cfg.content_vocab_size, cfg.feature_dim))


def generate_dataset(cfg, n_samples, stream=0, prefix=None):
    """``n_samples`` samples; ``stream`` separates train/dev draws under one seed."""
    vocab = task_vocabulary(cfg)
    content = vocab.symbols[len(SPECIALS):]
    codebook = prototypes(cfg)
    prefix = prefix if prefix is not None else f"s{stream}-"
    samples = []
    for k in range(n_samples):
        rng = SeededRng(cfg.seed, 1, stream, k)
        N = int(rng.integers(cfg.label_len_min, cfg.label_len_max))
        ids = rng.integers(0, cfg.content_vocab_size - 1, N)
        reps = rng.integers(cfg.repeats_min, cfg.repeats_max, N)
        T = int(reps.sum())
        frames = np.repeat(codebook[ids], reps, axis=0) if N else np.empty((0, cfg.feature_dim))
        if cfg.noise_sigma > 0 and T:
            frames = frames + cfg.noise_sigma * rng.normal((T, cfg.feature_dim))
        samples.append(SyntheticSample(f"{prefix}{k:05d}", frames.astype(DTYPE),
                                       [content[i] for i in ids]))
    return samples


def write_dataset(samples, path):
    with open(path, "w") as fh:
        for s in samples:
            T, F = s.frames.shape
            fh.write(f"{T} {len(s.labels)} {F} {s.id}\n")
            for row in s.frames:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write(" ".join(s.labels) + "\n")


def read_dataset(path):
    lines = Path(path).read_text().split("\n")
    samples = []
    pos = 0
    while pos < len(lines) and lines[pos].strip():
        head = lines[pos].split()
        if len(head) != 4:
            raise ValueError(f"{path}:{pos + 1}: expected header 'T N F id'")
        T, N, F = (int(v) for v in head[:3])
        frames = np.array([[float(v) for v in lines[pos + 1 + t].split()] for t in range(T)],
                          dtype=DTYPE).reshape(T, F)
        labels = lines[pos + 1 + T].split()
        if len(labels) != N:
            raise ValueError(f"{path}: sample {head[3]} declares {N} labels, found {len(labels)}")
        samples.append(SyntheticSample(head[3], frames, labels))
        pos += T + 2
    return samples
