"""Command-line entry point: gen-data, train, decode, grad-check, eval."""

import argparse
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .decoder import BeamConfig, decode_corpus, read_transcripts, write_transcripts
from .metrics import evaluate, evaluate_runs
from .model import Vocabulary
from .report import plot_cell_counts, plot_learning_curves
from .trainer import grad_check, load_checkpoint, load_config, train

log = logging.getLogger("grid2seq")


def cmd_gen_data(args):
    cfg = data_mod.SyntheticTaskConfig(args.vocab_size, args.feature_dim, args.repeats_min,
                                       args.repeats_max, args.noise_sigma, args.len_min,
                                       args.len_max, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_dev = args.n_dev if args.n_dev is not None else max(1, args.n // 10)
    data_mod.write_dataset(data_mod.generate_dataset(cfg, args.n, 0), out / "train.txt")
    data_mod.write_dataset(data_mod.generate_dataset(cfg, n_dev, 1), out / "dev.txt")
    data_mod.task_vocabulary(cfg).save(out / "vocab.txt")
    print(f"wrote {args.n} train / {n_dev} dev samples to {out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    for key in ("train_data", "dev_data", "vocab", "out_dir"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    vocab = Vocabulary.load(cfg.vocab)
    result = train(data_mod.read_dataset(cfg.train_data), data_mod.read_dataset(cfg.dev_data),
                   vocab, cfg, out_dir=cfg.out_dir, resume=args.resume)
    out = Path(cfg.out_dir)
    plot_learning_curves(out / "metrics.tsv", out / "learning_curves.png")
    last = result.history[-1] if result.history else None
    if last:
        print(f"step {last['step']} dev_ppl {last['dev_ppl']:.4f} dev_fer {last['dev_fer']:.4f}")
    return 0


def cmd_decode(args):
    params = load_checkpoint(args.checkpoint)[0]
    vocab = Vocabulary.load(args.vocab)
    samples = data_mod.read_dataset(args.data)
    cfg = BeamConfig(args.beam, args.max_rows, args.length_norm)
    rep = decode_corpus(samples, params, vocab, cfg, full_recompute=args.full_recompute)
    write_transcripts(rep.transcripts, args.out)
    lines = [f"samples\t{len(samples)}", f"wall_seconds\t{rep.wall_seconds:.3f}",
             f"truncated\t{rep.truncated}"]
    if args.count_cells:
        lines.append(f"cell_steps\t{rep.cell_steps}")
        stem = Path(args.out).with_suffix("")
        with open(f"{stem}.cells.tsv", "w") as fh:
            for sid, rows, tp, cells in rep.per_sample:
                fh.write(f"{sid}\t{rows}\t{tp}\t{cells}\n")
        plot_cell_counts(rep.per_sample, args.beam, f"{stem}.cells.png")
    print("\n".join(lines))
    return 0


def cmd_grad_check(args):
    report = grad_check(seed=args.seed)
    worst = max(report.values())
    for name, err in report.items():
        flag = "ok" if err < args.tol else "FAIL"
        print(f"{name}\t{err:.3e}\t{flag}")
    print(f"max_rel_error\t{worst:.3e}")
    return 0 if worst < args.tol else 1


def cmd_eval(args):
    refs = {s.id: s.labels for s in data_mod.read_dataset(args.refs)}
    if args.runs:
        runs = [read_transcripts(Path(d) / args.transcript_name) for d in args.runs]
        report = evaluate_runs(runs, refs)
    elif args.hyp:
        report = evaluate(read_transcripts(args.hyp), refs)
    else:
        raise ValueError("eval needs --hyp or --runs")
    print("\n".join(report.lines()))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="grid2seq", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic train/dev corpus and vocabulary")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--n-dev", type=int, default=None)
    g.add_argument("--vocab-size", type=int, default=20)
    g.add_argument("--feature-dim", type=int, default=8)
    g.add_argument("--repeats-min", type=int, default=6)
    g.add_argument("--repeats-max", type=int, default=10)
    g.add_argument("--noise-sigma", type=float, default=0.3)
    g.add_argument("--len-min", type=int, default=2)
    g.add_argument("--len-max", type=int, default=12)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--train-data", dest="train_data")
    t.add_argument("--dev-data", dest="dev_data")
    t.add_argument("--vocab")
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="beam-search decode a corpus")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--vocab", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--beam", type=int, default=12)
    d.add_argument("--max-rows", type=int, default=None)
    d.add_argument("--length-norm", action="store_true")
    d.add_argument("--full-recompute", action="store_true",
                   help="recompute the whole grid per prefix (oracle mode)")
    d.add_argument("--count-cells", action="store_true")
    d.set_defaults(func=cmd_decode)

    c = sub.add_parser("grad-check", help="finite-difference gradient report")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-5)
    c.set_defaults(func=cmd_grad_check)

    e = sub.add_parser("eval", help="WER of transcripts against a reference corpus")
    e.add_argument("--refs", required=True)
    e.add_argument("--hyp")
    e.add_argument("--runs", nargs="+")
    e.add_argument("--transcript-name", default="transcripts.txt")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as err:
        print(f"grid2seq {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
