"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files, checkpoint mismatch), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_assignments
from .data import ParallelCorpus, Vocabulary, build_vocab, encode_corpus, gen_synthetic
from .decoding import coverage_dump, greedy_parallel_decode, lpd_decode, measure_latency
from .errors import ConfigurationError, ContractError, DataError, NumericError
from .io_utils import atomic_write_text, read_lines, write_lines
from .metrics import EvalReport, bleu, length_bucket_report, repeated_token_ratio
from .model import NATModel
from .teacher import distill, teacher_train
from .training import two_phase_train

log = logging.getLogger("covnat")

META_HEADER = "raw_length\tremoved\tsrc_length\tlatency_ms"


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = parse_assignments(getattr(args, "set", None) or [], "--set")
    cfg = cfg.with_overrides(overrides)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "disable_tcir", False):
        cfg = replace(cfg, disable_tcir=True)
    if getattr(args, "disable_sca", False):
        cfg = replace(cfg, disable_sca=True)
    return cfg


def _prefix_arg(cfg_value: str, flag_value: str | None, name: str) -> str:
    value = flag_value or cfg_value
    if not value:
        raise ConfigurationError(f"no {name} corpus given (flag or config)")
    return value


def _vocab(cfg: RunConfig, prefix: str) -> Vocabulary:
    if cfg.vocab_path:
        _check_exists(cfg.vocab_path)
        return Vocabulary.load(cfg.vocab_path)
    return build_vocab([f"{prefix}.src", f"{prefix}.tgt"])


def _check_exists(*paths) -> None:
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"{p} not found")


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    cfg = _load_config(args)
    params = cfg.data
    if args.max_len is not None:
        params = replace(params, max_len=args.max_len)
    corpus = gen_synthetic(args.task, args.size, args.seed, params)
    corpus.save(args.out)
    log.info("wrote %d pairs to %s.{src,tgt}", len(corpus), args.out)


def cmd_train_teacher(args) -> None:
    cfg = _load_config(args)
    prefix = _prefix_arg(cfg.train_prefix, args.train, "training")
    cfg = replace(cfg, train_prefix=prefix, vocab_path=args.vocab or cfg.vocab_path)
    vocab = _vocab(cfg, prefix)
    pairs = encode_corpus(ParallelCorpus.load(prefix), vocab, cfg.teacher.max_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    losses = []
    model = teacher_train(pairs, cfg.teacher_config(len(vocab)), cfg.teacher_train_config(),
                          on_step=lambda s, v: losses.append(f"{s}\t{v!r}"))
    atomic_write_text(out / "teacher_log.tsv", "step\tloss\n" + "".join(l + "\n" for l in losses))
    save_checkpoint(model, vocab, out / "checkpoint")
    log.info("teacher trained for %d steps", len(losses))


def cmd_distill(args) -> None:
    teacher, vocab, _ = _open_checkpoint(args.teacher, "teacher")
    corpus = ParallelCorpus.load(args.corpus)
    out = distill(teacher, corpus, vocab, args.beam)
    out.save(args.out)
    log.info("distilled %d pairs into %s.{src,tgt}", len(out), args.out)


def cmd_train(args) -> None:
    cfg = _load_config(args)
    cfg = replace(cfg, train_prefix=_prefix_arg(cfg.train_prefix, args.train, "training"),
                  dev_prefix=args.dev or cfg.dev_prefix, vocab_path=args.vocab or cfg.vocab_path)
    vocab = _vocab(cfg, cfg.train_prefix)
    max_len = cfg.model.max_len
    pairs = encode_corpus(ParallelCorpus.load(cfg.train_prefix), vocab, max_len)
    dev = encode_corpus(ParallelCorpus.load(cfg.dev_prefix), vocab, max_len) if cfg.dev_prefix else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    model = NATModel(cfg.model_config(len(vocab)), seed=cfg.seed)
    res = two_phase_train(model, pairs, dev, cfg.train_config(), out / "metrics.tsv")
    save_checkpoint(model, vocab, out / "checkpoint",
                    {"best_step": str(res.best_step), "best_phase": res.best_phase,
                     "best_dev_bleu": repr(res.best_bleu)})
    if res.stats:
        log.info("data stats: %s", dict(res.stats))
    log.info("best dev BLEU %.2f at step %d (%s)", res.best_bleu, res.best_step, res.best_phase)


def _open_checkpoint(path, kind: str):
    """Accepts a checkpoint directory or the run directory holding one."""
    path = Path(path)
    if (path / "checkpoint").exists():
        path = path / "checkpoint"
    return load_checkpoint(path, expect=kind)


def _nat_checkpoint(path):
    return _open_checkpoint(path, "nat")


def _encode_lines(lines, vocab, max_len):
    out = []
    for no, line in enumerate(lines, 1):
        toks = line.split()
        if not toks:
            raise DataError(f"line {no} of the input is empty")
        if len(toks) > max_len:
            raise DataError(f"line {no} has {len(toks)} tokens, model max_len is {max_len}")
        out.append(vocab.encode(toks))
    return out


def cmd_translate(args) -> None:
    model, vocab, _ = _nat_checkpoint(args.ckpt)
    if args.lpd_radius and not args.teacher:
        raise ConfigurationError("--lpd-radius > 0 needs --teacher")
    teacher = None
    if args.teacher:
        teacher, tvocab, _ = _open_checkpoint(args.teacher, "teacher")
        if tvocab != vocab:
            raise DataError("teacher and student vocabularies differ")
    _check_exists(args.input)
    sources = _encode_lines(read_lines(args.input), vocab, model.config.max_len)
    k = args.kdec or None

    def decode(batch):
        if args.lpd_radius:
            return lpd_decode(model, batch, teacher, args.lpd_radius, k)
        return greedy_parallel_decode(model, batch, k)

    results = decode(sources)
    write_lines(args.output, (" ".join(vocab.decode(r.tokens)) for r in results))
    if args.meta:
        latencies = []
        if args.latency:
            for s in sources:
                latencies.append(measure_latency(decode, [s]))
        rows = [META_HEADER]
        for i, (r, s) in enumerate(zip(results, sources)):
            lat = repr(latencies[i]) if latencies else ""
            rows.append(f"{r.length}\t{r.removed}\t{len(s)}\t{lat}")
        write_lines(args.meta, rows)
    log.info("translated %d sentences", len(results))


def _read_meta(path):
    lines = read_lines(path)
    if not lines or lines[0] != META_HEADER:
        raise DataError(f"{path}: expected header {META_HEADER!r}")
    rows = [l.split("\t") for l in lines[1:]]
    raw = [int(r[0]) for r in rows]
    removed = [int(r[1]) for r in rows]
    src = [int(r[2]) for r in rows]
    lat = [float(r[3]) for r in rows if len(r) > 3 and r[3]]
    return raw, removed, src, lat


def cmd_evaluate(args) -> None:
    _check_exists(args.hyp, args.ref)
    hyps = [l.split() for l in read_lines(args.hyp)]
    refs = [l.split() for l in read_lines(args.ref)]
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if args.meta:
        raw, removed, src, lat = _read_meta(args.meta)
        if len(raw) != len(hyps):
            raise DataError(f"meta file has {len(raw)} rows for {len(hyps)} hypotheses")
    else:
        raw, removed, src, lat = [len(h) for h in hyps], [0] * len(hyps), [len(h) for h in hyps], []
    if args.src:
        src = [len(l.split()) for l in read_lines(args.src)]
    report = EvalReport(
        bleu=bleu(hyps, refs),
        repeat=repeated_token_ratio(removed, raw, src),
        buckets=length_bucket_report(hyps, refs, src),
        latency_ms=float(np.mean(lat)) if lat else None,
        n_sentences=len(hyps),
    )
    text = report.to_text()
    if args.out:
        atomic_write_text(args.out, text)
        atomic_write_text(Path(args.out).with_suffix(".csv"), report.to_csv())
    sys.stdout.write(text)


def cmd_sweep_kdec(args) -> None:
    from .experiments import kdec_sweep

    model, vocab, _ = _nat_checkpoint(args.ckpt)
    if not model.config.use_tcir:
        raise ConfigurationError("K_dec sweep needs a model with the coverage layer")
    dev = encode_corpus(ParallelCorpus.load(args.dev), vocab, model.config.max_len)
    if args.limit:
        dev = dev[: args.limit]
    rows = kdec_sweep(model, dev, range(args.kmin, args.kmax + 1), args.passes)
    text = "k_dec\tbleu\tlatency_ms\n" + "".join(f"{r.k}\t{r.bleu:.4f}\t{r.latency_ms:.4f}\n" for r in rows)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)


def cmd_analyze_coverage(args) -> None:
    model, vocab, _ = _nat_checkpoint(args.ckpt)
    src = _encode_lines([args.sentence], vocab, model.config.max_len)[0]
    text = coverage_dump(model, src, args.kdec or None, args.length)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


# -- parser -------------------------------------------------------------------------


def _add_config(p, seed_required=True):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    if seed_required:
        p.add_argument("--seed", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covnat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    _add_config(p)
    p.add_argument("--task", required=True, choices=["copy", "reverse", "lexical-swap", "multi-synonym"])
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.src and PREFIX.tgt")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the autoregressive teacher")
    _add_config(p)
    p.add_argument("--train", help="training corpus prefix")
    p.add_argument("--vocab", help="vocabulary file (default: built from the training corpus)")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="replace targets with teacher beam output")
    p.add_argument("--teacher", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train", help="two-phase non-autoregressive training")
    _add_config(p)
    p.add_argument("--train", help="training corpus prefix")
    p.add_argument("--dev", help="dev corpus prefix for checkpoint selection")
    p.add_argument("--vocab", help="vocabulary file, e.g. the teacher's (default: built from --train)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--disable-tcir", action="store_true", help="plain top decoder layer")
    p.add_argument("--disable-sca", action="store_true", help="fine-tune with beta = 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a source file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kdec", type=int, default=0, help="coverage iterations (default: training K)")
    p.add_argument("--lpd-radius", type=int, default=0)
    p.add_argument("--teacher")
    p.add_argument("--meta", help="write per-sentence decode metadata for evaluate")
    p.add_argument("--latency", action="store_true", help="time single-sentence decoding into --meta")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="BLEU, repeated tokens and length buckets")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--meta", help="decode metadata written by translate --meta")
    p.add_argument("--src", help="source file, for length buckets")
    p.add_argument("--out", help="write the report here (plus a .csv next to it)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-kdec", help="BLEU and latency across decoding iterations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--limit", type=int, default=0, help="use only the first N dev pairs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_kdec)

    p = sub.add_parser("analyze-coverage", help="dump attention and coverage per iteration")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--kdec", type=int, default=0)
    p.add_argument("--length", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_coverage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"covnat: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, IsADirectoryError, IndexError) as exc:
        print(f"covnat: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"covnat: numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
