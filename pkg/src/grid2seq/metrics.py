"""Levenshtein alignment scoring and corpus WER reports."""

from dataclasses import dataclass, field

import numpy as np


def edit_distance(hyp, ref):
    """Unit-cost edit distance of ``hyp`` against ``ref``.

    Returns (distance, substitutions, insertions, deletions). Among
    equal-cost alignments the backtrace prefers substitution (or match),
    then insertion, then deletion.
    """
    H, R = len(hyp), len(ref)
    D = np.zeros((H + 1, R + 1), dtype=np.int64)
    D[:, 0] = np.arange(H + 1)
    D[0, :] = np.arange(R + 1)
    for i in range(1, H + 1):
        for j in range(1, R + 1):
            D[i, j] = min(D[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]),
                          D[i - 1, j] + 1, D[i, j - 1] + 1)
    S = I = De = 0
    i, j = H, R
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            S += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            I += 1
            i -= 1
        else:
            De += 1
            j -= 1
    return int(D[H, R]), int(S), I, De


@dataclass
class MetricsReport:
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_length: int
    samples: int
    perplexity: float = None
    fer: float = None
    run_wers: list = field(default_factory=list)

    def lines(self):
        out = [f"wer\t{self.wer:.6f}", f"substitutions\t{self.substitutions}",
               f"insertions\t{self.insertions}", f"deletions\t{self.deletions}",
               f"ref_length\t{self.ref_length}", f"samples\t{self.samples}"]
        if self.perplexity is not None:
            out.append(f"perplexity\t{self.perplexity:.6f}")
        if self.fer is not None:
            out.append(f"fer\t{self.fer:.6f}")
        for k, w in enumerate(self.run_wers):
            out.append(f"run{k}_wer\t{w:.6f}")
        return out


def evaluate(transcripts, references):
    """Corpus WER of ``transcripts`` ({id: symbols}) against ``references``."""
    S = I = D = total = 0
    for sid, hyp in transcripts.items():
        if sid not in references:
            raise KeyError(f"no reference for sample {sid!r}")
        ref = references[sid]
        _, s, i, d = edit_distance(list(hyp), list(ref))
        S, I, D, total = S + s, I + i, D + d, total + len(ref)
    wer = (S + I + D) / total if total else 0.0
    return MetricsReport(wer, S, I, D, total, len(transcripts))


def evaluate_runs(runs, references):
    """Evaluate several runs; the report's WER is the mean over runs."""
    reports = [evaluate(t, references) for t in runs]
    if not reports:
        raise ValueError("no runs to evaluate")
    wers = [r.wer for r in reports]
    k = len(reports)
    return MetricsReport(float(np.mean(wers)),
                         sum(r.substitutions for r in reports) / k,
                         sum(r.insertions for r in reports) / k,
                         sum(r.deletions for r in reports) / k,
                         reports[0].ref_length, reports[0].samples, run_wers=wers)
