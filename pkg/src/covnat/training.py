"""Adam, the warmup / inverse-sqrt schedule and the two-phase training driver."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import SentencePair, batch_by_tokens
from .decoding import greedy_parallel_decode
from .errors import ContractError, NumericError, TrainingError
from .losses import finetune_objective, pretrain_objective
from .metrics import bleu

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from ``p.grad`` (missing grads count as 0)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise ContractError(f"optimizer state shape {m.shape} vs parameter {p.name} {p.data.shape}")
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(step: int, warmup: int, peak_lr: float) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup``, then peak * sqrt(warmup / step)."""
    if step < 1:
        raise ContractError("schedule steps start at 1")
    if step <= warmup:
        return peak_lr * step / warmup
    return peak_lr * math.sqrt(warmup / step)


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.5
    max_tokens: int = 2000
    peak_lr: float = 5e-4
    warmup: int = 500
    pretrain_steps: int = 4000
    finetune_steps: int = 200
    finetune_lr: float = 1e-5
    eval_interval: int = 200
    patience: int = 10
    joint_from_scratch: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


METRICS_HEADER = "step\tphase\tloss_mle\tloss_len\tloss_sca\tlr\tdev_bleu"


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


class MetricsLog:
    """Append-only tab-separated training log."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[str] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(METRICS_HEADER + "\n")

    def append(self, step, phase, mle, length, sca, lr, dev_bleu=None) -> None:
        line = "\t".join([str(step), phase, _fmt(mle), _fmt(length), _fmt(sca), _fmt(lr), _fmt(dev_bleu)])
        self.rows.append(line)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def dev_bleu(model, dev_pairs: Sequence[SentencePair], k_dec: int | None = None) -> float:
    results = greedy_parallel_decode(model, [p.src for p in dev_pairs], k_dec)
    return bleu([r.tokens for r in results], [list(p.tgt) for p in dev_pairs])


def snapshot(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


def restore(model, state: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters().items():
        p.data[...] = state[name]


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_bleu: float
    best_step: int
    best_phase: str
    log: MetricsLog
    stats: Counter
    last_step: int = 0


def _run_phase(model, pairs, dev_pairs, cfg: TrainConfig, phase: str, steps: int,
               lr_fn: Callable[[int], float], beta: float | None, start_step: int,
               metrics: MetricsLog, best: dict, stats: Counter, evaluate) -> int:
    params = model.parameters()
    opt = AdamState()
    step = 0
    global_step = start_step
    epoch = 0
    evals_without_gain = 0
    model.train()
    while step < steps:
        batches = batch_by_tokens(pairs, cfg.max_tokens, cfg.seed * 1000003 + start_step + epoch, stats)
        epoch += 1
        for batch in batches:
            if step >= steps:
                break
            step += 1
            global_step += 1
            lr = lr_fn(step)
            try:
                if beta is None:
                    obj = pretrain_objective(model, batch, cfg.alpha, stats=stats)
                else:
                    obj = finetune_objective(model, batch, cfg.alpha, beta, stats=stats)
            except NumericError as exc:
                raise TrainingError(f"numeric failure at step {global_step} ({phase}): {exc}, lr={lr}",
                                    step=global_step, lr=lr) from exc
            comps = obj.components()
            if not math.isfinite(comps["total"]):
                raise TrainingError(f"non-finite loss at step {global_step} ({phase}): {comps}, lr={lr}",
                                    step=global_step, lr=lr, **comps)
            ad.zero_grads(params)
            ad.backward(obj.total)
            adam_step(params, opt, lr)
            score = None
            if evaluate and (step % cfg.eval_interval == 0 or step == steps):
                score = evaluate()
                model.train()
                if score >= best["bleu"]:
                    improved = score > best["bleu"]
                    best.update(bleu=score, state=snapshot(model), step=global_step, phase=phase)
                    evals_without_gain = 0 if improved else evals_without_gain + 1
                else:
                    evals_without_gain += 1
            metrics.append(global_step, phase, comps["mle"], comps["length"],
                           comps["coverage"] if beta is not None else None, lr, score)
            if score is not None and phase == "pretrain" and evals_without_gain >= cfg.patience:
                log.info("early stop in %s at step %d", phase, global_step)
                return global_step
    return global_step


def two_phase_train(model, pairs: Sequence[SentencePair], dev_pairs: Sequence[SentencePair],
                    cfg: TrainConfig, log_path=None, resume: TrainResult | None = None) -> TrainResult:
    """Pre-train with MLE + length loss, then fine-tune from the best
    pre-training checkpoint with the coverage agreement term added at a
    fixed small learning rate.

    Checkpoints are compared by dev BLEU; on ties the later one wins. With
    ``cfg.joint_from_scratch`` a single phase optimises all terms from step 0
    on the warmup schedule. Passing the result of an earlier run as
    ``resume`` skips pre-training: the fine-tune phase starts from the
    model's current parameters and competes against that run's best
    checkpoint. The returned model holds the best parameters.
    """
    if not pairs:
        raise ContractError("empty training corpus")
    metrics = MetricsLog(log_path)
    stats: Counter = Counter()
    evaluate = (lambda: dev_bleu(model, dev_pairs)) if dev_pairs else None
    schedule = lambda s: lr_schedule(s, cfg.warmup, cfg.peak_lr)  # noqa: E731
    finetune = lambda start: _run_phase(  # noqa: E731
        model, pairs, dev_pairs, cfg, "finetune", cfg.finetune_steps, lambda s: cfg.finetune_lr, cfg.beta,
        start, metrics, best, stats, evaluate)
    if resume is not None:
        best = {"bleu": resume.best_bleu, "state": resume.best_state, "step": resume.best_step,
                "phase": resume.best_phase}
        step = finetune(resume.last_step) if cfg.finetune_steps > 0 else resume.last_step
    else:
        best = {"bleu": -1.0, "state": snapshot(model), "step": 0, "phase": "init"}
        if cfg.joint_from_scratch:
            step = _run_phase(model, pairs, dev_pairs, cfg, "joint", cfg.pretrain_steps, schedule, cfg.beta, 0,
                              metrics, best, stats, evaluate)
        else:
            step = _run_phase(model, pairs, dev_pairs, cfg, "pretrain", cfg.pretrain_steps, schedule, None, 0,
                              metrics, best, stats, evaluate)
            if cfg.finetune_steps > 0:
                restore(model, best["state"])
                step = finetune(step)
    if evaluate is None:
        best.update(state=snapshot(model), step=step, phase="last")
    restore(model, best["state"])
    model.eval()
    return TrainResult(best["state"], best["bleu"], best["step"], best["phase"], metrics, stats, step)
