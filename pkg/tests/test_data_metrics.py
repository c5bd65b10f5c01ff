import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grid2seq.data import (SyntheticTaskConfig, generate_dataset, prototypes, read_dataset,
                           task_vocabulary, write_dataset)
from grid2seq.metrics import edit_distance, evaluate, evaluate_runs


def alignments(hyp, ref):
    """Every alignment of hyp against ref as (S, I, D) counts, by exhaustive recursion."""
    if not hyp and not ref:
        yield (0, 0, 0)
        return
    if hyp and ref:
        for s, i, d in alignments(hyp[1:], ref[1:]):
            yield (s + (hyp[0] != ref[0]), i, d)
    if hyp:
        for s, i, d in alignments(hyp[1:], ref):
            yield (s, i + 1, d)
    if ref:
        for s, i, d in alignments(hyp, ref[1:]):
            yield (s, i, d + 1)


def brute_force(hyp, ref):
    best = min(sum(a) for a in alignments(hyp, ref))
    optimal = {a for a in alignments(hyp, ref) if sum(a) == best}
    return best, optimal


def test_edit_distance_examples():
    assert edit_distance("abc", "abc") == (0, 0, 0, 0)
    assert edit_distance("a b c".split(), "a x c".split()) == (1, 1, 0, 0)
    assert edit_distance(["a", "b"], ["a", "b", "c"]) == (1, 0, 0, 1)
    assert brute_force(("a", "b"), ("a", "b", "c"))[0] == 1


def test_edit_distance_matches_enumerator_exhaustively():
    seqs = [s for n in range(5) for s in itertools.product("xyz", repeat=n)]
    for hyp in seqs:
        for ref in seqs:
            dist, S, I, D = edit_distance(hyp, ref)
            best, optimal = brute_force(hyp, ref)
            assert dist == best, (hyp, ref)
            assert (S, I, D) in optimal, (hyp, ref)


def test_tie_preference_substitution_first():
    # "ab" vs "ba": two substitutions or one insertion + one deletion
    assert edit_distance("ab", "ba") == (2, 2, 0, 0)


seq = st.lists(st.sampled_from("abcd"), max_size=6)


@settings(max_examples=200, deadline=None)
@given(seq, seq, seq)
def test_edit_distance_is_a_metric(a, b, c):
    dab = edit_distance(a, b)[0]
    assert dab == edit_distance(b, a)[0]
    assert (dab == 0) == (a == b)
    assert edit_distance(a, c)[0] <= dab + edit_distance(b, c)[0]
    _, S, I, D = edit_distance(a, b)
    assert S + I + D == dab and I - D == len(a) - len(b)


def test_evaluate():
    refs = {"u1": list("abcde"), "u2": list("fghij")}
    assert evaluate(refs, refs).wer == 0.0
    hyp = {"u1": list("abcde"), "u2": list("fgXij")}
    rep = evaluate(hyp, refs)
    assert rep.wer == pytest.approx(0.1) and rep.substitutions == 1 and rep.ref_length == 10
    with pytest.raises(KeyError):
        evaluate({"zz": []}, refs)


def test_evaluate_runs_mean():
    refs = {f"u{k}": ["a"] * 10 for k in range(5)}  # 50 reference labels

    def run(errors):
        hyp = {k: list(v) for k, v in refs.items()}
        for e in range(errors):
            hyp[f"u{e % 5}"][e // 5] = "b"
        return hyp

    rep = evaluate_runs([run(5), run(6), run(7)], refs)
    assert rep.run_wers == pytest.approx([0.10, 0.12, 0.14])
    assert rep.wer == pytest.approx(0.12)


def test_wer_against_itself_is_zero():
    samples = generate_dataset(SyntheticTaskConfig(), 30)
    refs = {s.id: s.labels for s in samples}
    assert evaluate(refs, refs).wer == 0.0


def test_degenerate_generation_reproduces_prototypes():
    cfg = SyntheticTaskConfig(noise_sigma=0.0, repeats_min=1, repeats_max=1)
    vocab = task_vocabulary(cfg)
    protos = prototypes(cfg)
    for s in generate_dataset(cfg, 20):
        assert s.frames.shape[0] == len(s.labels)
        ids = [vocab.index[w] - 4 for w in s.labels]
        assert np.array_equal(s.frames, protos[ids])


def test_default_generation_statistics():
    cfg = SyntheticTaskConfig(seed=42)
    samples = generate_dataset(cfg, 1000)
    ratio = np.mean([s.frames.shape[0] / len(s.labels) for s in samples])
    assert 7.5 <= ratio <= 8.5
    assert all(cfg.label_len_min <= len(s.labels) <= cfg.label_len_max for s in samples)
    assert len(task_vocabulary(cfg)) == 24


def test_generation_is_deterministic():
    a = generate_dataset(SyntheticTaskConfig(seed=3), 10)
    b = generate_dataset(SyntheticTaskConfig(seed=3), 10)
    assert all(np.array_equal(x.frames, y.frames) and x.labels == y.labels for x, y in zip(a, b))
    c = generate_dataset(SyntheticTaskConfig(seed=3), 10, stream=1)
    assert not np.array_equal(a[0].frames, c[0].frames)


def test_dataset_roundtrip_is_bit_exact(tmp_path):
    cfg = SyntheticTaskConfig(label_len_min=0, label_len_max=3)
    samples = generate_dataset(cfg, 25)
    write_dataset(samples, tmp_path / "d.txt")
    back = read_dataset(tmp_path / "d.txt")
    assert len(back) == 25
    for a, b in zip(samples, back):
        assert a.id == b.id and a.labels == b.labels
        assert a.frames.shape == b.frames.shape and np.array_equal(a.frames, b.frames)


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticTaskConfig(repeats_min=0)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(noise_sigma=-1)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(content_vocab_size=1)
