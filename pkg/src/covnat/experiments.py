"""Desk-scale directional experiments shared by ``scripts/`` and the
acceptance tests.

Every system is trained on the same synthetic multi-synonym corpus. The
full model and the baseline (coverage layer and agreement loss both
switched off) run the same two-phase schedule, and the beta = 0 and
beta = 0.5 fine-tunes start from one shared pre-training checkpoint.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import (RESERVED, LexiconParams, SentencePair, Vocabulary, encode_corpus, gen_synthetic)
from .decoding import DecodeResult, greedy_parallel_decode, lpd_decode
from .metrics import RepeatStats, bleu, repeated_token_ratio
from .model import ModelConfig, NATModel
from .teacher import ATModel, TeacherConfig, TeacherTrainConfig, teacher_train
from .training import TrainConfig, restore, snapshot, two_phase_train

log = logging.getLogger(__name__)


@dataclass
class DirectionalSetup:
    task: str = "multi-synonym"
    train_size: int = 20000
    dev_size: int = 500
    train_seed: int = 1
    dev_seed: int = 2
    lexicon: LexiconParams = field(default_factory=lambda: LexiconParams(max_len=20))
    model: ModelConfig = field(default_factory=lambda: ModelConfig(d_hidden=128, dropout=0.0))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_tokens=1000, peak_lr=1e-3, warmup=200, pretrain_steps=2000, finetune_steps=200,
        eval_interval=250, patience=4))
    teacher: TeacherConfig = field(default_factory=lambda: TeacherConfig(d_hidden=128, dropout=0.0))
    teacher_train: TeacherTrainConfig = field(default_factory=lambda: TeacherTrainConfig(
        steps=1500, max_tokens=1000, peak_lr=1e-3, warmup=200))


@dataclass
class Dataset:
    vocab: Vocabulary
    train: list[SentencePair]
    dev: list[SentencePair]


def prepare_data(setup: DirectionalSetup) -> Dataset:
    train = gen_synthetic(setup.task, setup.train_size, setup.train_seed, setup.lexicon)
    dev = gen_synthetic(setup.task, setup.dev_size, setup.dev_seed, setup.lexicon)
    tokens = sorted({t for sent in train.sources + train.targets + dev.sources + dev.targets for t in sent})
    vocab = Vocabulary(list(RESERVED) + tokens)
    return Dataset(vocab, encode_corpus(train, vocab), encode_corpus(dev, vocab))


@dataclass
class SystemEval:
    name: str
    seed: int
    bleu: float
    repeat: RepeatStats
    train_seconds: float
    best_step: int
    best_phase: str


def evaluate_greedy(name: str, seed: int, model: NATModel, dev: Sequence[SentencePair],
                    seconds: float, best_step: int, best_phase: str,
                    k_dec: int | None = None) -> tuple[SystemEval, list[DecodeResult]]:
    out = greedy_parallel_decode(model, [p.src for p in dev], k_dec)
    score = bleu([r.tokens for r in out], [list(p.tgt) for p in dev])
    rep = repeated_token_ratio([r.removed for r in out], [r.length for r in out], [len(p.src) for p in dev])
    return SystemEval(name, seed, score, rep, seconds, best_step, best_phase), out


@dataclass
class SeedRun:
    seed: int
    coverage: SystemEval        # beta = 0.5 fine-tune (the full model)
    coverage_beta0: SystemEval  # same pre-training, beta = 0 fine-tune
    baseline: SystemEval
    coverage_model: NATModel


def _pretrain_then_finetune(model, data: Dataset, cfg: TrainConfig, betas: Sequence[float]):
    """One pre-training run, then a fine-tune per beta from its best checkpoint."""
    t0 = time.perf_counter()
    pre = two_phase_train(model, data.train, data.dev, replace(cfg, finetune_steps=0))
    pre_seconds = time.perf_counter() - t0
    results = {}
    for beta in betas:
        restore(model, pre.best_state)
        t1 = time.perf_counter()
        res = two_phase_train(model, data.train, data.dev, replace(cfg, beta=beta), resume=pre)
        results[beta] = (res, snapshot(model), pre_seconds + time.perf_counter() - t1)
    return results


def run_seed(setup: DirectionalSetup, data: Dataset, seed: int) -> SeedRun:
    cfg = replace(setup.train, seed=seed)
    mcfg = replace(setup.model, vocab_size=len(data.vocab))

    cov = NATModel(replace(mcfg, use_tcir=True), seed=seed)
    runs = _pretrain_then_finetune(cov, data, cfg, (0.0, cfg.beta))
    evals = {}
    for beta, (res, state, seconds) in runs.items():
        restore(cov, state)
        evals[beta], _ = evaluate_greedy(f"coverage-beta{beta:g}", seed, cov, data.dev, seconds,
                                         res.best_step, res.best_phase)
    restore(cov, runs[cfg.beta][1])

    base = NATModel(replace(mcfg, use_tcir=False), seed=seed)
    base_runs = _pretrain_then_finetune(base, data, cfg, (0.0,))
    res, state, seconds = base_runs[0.0]
    restore(base, state)
    base_eval, _ = evaluate_greedy("baseline", seed, base, data.dev, seconds, res.best_step, res.best_phase)
    for e in (evals[cfg.beta], evals[0.0], base_eval):
        log.info("seed %d %s: bleu %.2f repeat %.2f%% (short %.2f, long %.2f) in %.0fs", seed, e.name,
                 e.bleu, e.repeat.overall, e.repeat.short, e.repeat.long, e.train_seconds)
    return SeedRun(seed, evals[cfg.beta], evals[0.0], base_eval, cov)


# -- K_dec sweep and LPD ------------------------------------------------------------


@dataclass
class SweepRow:
    k: int
    bleu: float
    latency_ms: float


def kdec_sweep(model: NATModel, dev: Sequence[SentencePair], ks: Sequence[int] = range(1, 9),
               latency_passes: int = 3) -> list[SweepRow]:
    """Dev BLEU and single-sentence latency per number of decoding
    iterations.

    Latency is the mean over dev sentences of the fastest of
    ``latency_passes`` timings. Every sentence is timed at all K values
    back to back, so slow drifts of the machine hit each K alike.
    """
    ks = [int(k) for k in ks]
    sources = [p.src for p in dev]
    refs = [list(p.tgt) for p in dev]
    scores = {k: bleu([r.tokens for r in greedy_parallel_decode(model, sources, k)], refs) for k in ks}
    best = {k: np.full(len(sources), np.inf) for k in ks}
    for _ in range(latency_passes):
        for j, src in enumerate(sources):
            for k in ks:
                t0 = time.perf_counter()
                greedy_parallel_decode(model, [src], k)
                best[k][j] = min(best[k][j], time.perf_counter() - t0)
    return [SweepRow(k, scores[k], 1000.0 * float(best[k].mean())) for k in ks]


def train_teacher(setup: DirectionalSetup, data: Dataset, seed: int = 0) -> ATModel:
    cfg = replace(setup.teacher, vocab_size=len(data.vocab), max_len=setup.model.max_len)
    return teacher_train(data.train, cfg, replace(setup.teacher_train, seed=seed))


@dataclass
class LPDComparison:
    greedy_bleu: float
    lpd_bleu: float
    radius: int


def lpd_comparison(model: NATModel, teacher: ATModel, dev: Sequence[SentencePair],
                   radius: int = 4) -> LPDComparison:
    sources = [p.src for p in dev]
    refs = [list(p.tgt) for p in dev]
    greedy = greedy_parallel_decode(model, sources)
    lpd = lpd_decode(model, sources, teacher, radius)
    return LPDComparison(bleu([r.tokens for r in greedy], refs), bleu([r.tokens for r in lpd], refs), radius)


def majority(flags: Sequence[bool]) -> bool:
    return 2 * sum(bool(f) for f in flags) > len(flags)


def summary_table(runs: Sequence[SeedRun]) -> str:
    lines = ["seed\tsystem\tbleu\trepeat_all\trepeat_short\trepeat_long\tseconds"]
    for run in runs:
        for e in (run.baseline, run.coverage_beta0, run.coverage):
            lines.append(f"{run.seed}\t{e.name}\t{e.bleu:.2f}\t{e.repeat.overall:.2f}\t{e.repeat.short:.2f}"
                         f"\t{e.repeat.long:.2f}\t{e.train_seconds:.0f}")
    return "\n".join(lines) + "\n"


__all__ = ["DirectionalSetup", "Dataset", "prepare_data", "run_seed", "kdec_sweep", "train_teacher",
           "lpd_comparison", "majority", "summary_table", "SeedRun", "SystemEval", "SweepRow",
           "LPDComparison"]
