"""Parallel argmax decoding, length-parallel decoding with teacher rescoring,
latency measurement and coverage dumps."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .data import pad_ids
from .errors import ConfigurationError, ContractError
from .metrics import postprocess_dedup
from .model import CoverageIterationState, EncoderOutput, NATModel


@dataclass
class DecodeResult:
    raw: list[int]
    tokens: list[int]
    length: int
    probs: np.ndarray
    removed: int
    score: float | None = None
    states: list[CoverageIterationState] | None = None

    def same_output(self, other: "DecodeResult") -> bool:
        return (self.raw == other.raw and self.tokens == other.tokens and self.length == other.length
                and np.array_equal(self.probs, other.probs) and self.score == other.score)


def argmax_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax (ties -> lowest id) and the winning probability."""
    ids = np.argmax(logits, axis=-1)
    z = logits - logits.max(axis=-1, keepdims=True)
    probs = 1.0 / np.exp(z).sum(axis=-1)
    return ids, probs


def _result(raw_ids, probs, states=None) -> DecodeResult:
    raw = [int(t) for t in raw_ids]
    tokens, removed = postprocess_dedup(raw)
    return DecodeResult(raw, tokens, len(raw), np.asarray(probs, dtype=np.float64), removed,
                        None, states)


def _slice_states(states, b, T, n):
    return [CoverageIterationState(s.k, s.H[b, :T].copy(), s.A[b, :T, :n].copy(), s.C[b, :T, :n].copy())
            for s in states]


def _decode_lengths(model: NATModel, enc: EncoderOutput, lengths, k_dec, record):
    logits, _, states = model.decode(enc, lengths, k_dec, record)
    ids, probs = argmax_rows(logits.data)
    return ids, probs, states


def greedy_parallel_decode(model: NATModel, sources: Sequence[Sequence[int]], k_dec: int | None = None,
                           batch_size: int = 64, lengths: Sequence[int] | None = None,
                           record: bool = False) -> list[DecodeResult]:
    """Predict each target length, then take the argmax token at every
    position simultaneously."""
    if k_dec is not None and k_dec < 1:
        raise ContractError("k_dec must be >= 1")
    results: list[DecodeResult] = []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for start in range(0, len(sources), batch_size):
                chunk = sources[start:start + batch_size]
                src, mask = pad_ids(chunk)
                enc = model.encode(src, mask)
                if lengths is None:
                    T = model.predict_length(enc.length_logits, enc.lengths)
                else:
                    T = np.asarray(lengths[start:start + batch_size], dtype=np.int64)
                ids, probs, states = _decode_lengths(model, enc, T, k_dec, record)
                for b, t in enumerate(T):
                    st = _slice_states(states, b, int(t), len(chunk[b])) if record else None
                    results.append(_result(ids[b, :t], probs[b, :t], st))
    finally:
        model.train(was_training)
    return results


def lpd_candidate_lengths(t_hat: int, radius: int, max_len: int) -> list[int]:
    if radius < 0:
        raise ContractError("LPD radius must be >= 0")
    return list(range(max(1, t_hat - radius), min(max_len, t_hat + radius) + 1))


def _repeat_encoder(enc: EncoderOutput, idx: np.ndarray) -> EncoderOutput:
    return EncoderOutput(Tensor(enc.states.data[idx]), Tensor(enc.length_logits.data[idx]), enc.mask[idx])


def lpd_decode(model: NATModel, sources: Sequence[Sequence[int]], teacher=None, radius: int = 4,
               k_dec: int | None = None, batch_size: int = 16) -> list[DecodeResult]:
    """Decode every candidate length in [T-radius, T+radius] in parallel and
    keep the one the teacher scores highest.

    Ties go to the length closest to the predicted one, then the shorter.
    With radius 0 this is exactly ``greedy_parallel_decode``.
    """
    if radius < 0:
        raise ContractError("LPD radius must be >= 0")
    if radius == 0:
        return greedy_parallel_decode(model, sources, k_dec, batch_size)
    if teacher is None:
        raise ConfigurationError("length-parallel decoding with radius > 0 needs a teacher")
    results: list[DecodeResult] = []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for start in range(0, len(sources), batch_size):
                chunk = sources[start:start + batch_size]
                src, mask = pad_ids(chunk)
                enc = model.encode(src, mask)
                t_hat = model.predict_length(enc.length_logits, enc.lengths)
                rows, cand_lengths = [], []
                for b, t in enumerate(t_hat):
                    for L in lpd_candidate_lengths(int(t), radius, model.config.max_len):
                        rows.append(b)
                        cand_lengths.append(L)
                rows = np.asarray(rows)
                ids, probs, _ = _decode_lengths(model, _repeat_encoder(enc, rows),
                                                np.asarray(cand_lengths), k_dec, False)
                cands = [[int(x) for x in ids[r, :L]] for r, L in enumerate(cand_lengths)]
                scores = teacher.score([chunk[b] for b in rows], cands)
                for b, t in enumerate(t_hat):
                    sel = np.flatnonzero(rows == b)
                    best = min(sel, key=lambda r: (-scores[r], abs(cand_lengths[r] - int(t)), cand_lengths[r]))
                    res = _result(cands[best], probs[best, :cand_lengths[best]])
                    res.score = float(scores[best])
                    results.append(res)
    finally:
        model.train(was_training)
    return results


def measure_latency(decode_fn: Callable[[list], list], sources: Sequence[Sequence[int]]) -> float:
    """Mean wall-clock milliseconds per sentence, decoding one sentence per call."""
    if not sources:
        raise ContractError("latency over an empty set")
    total = 0.0
    for s in sources:
        t0 = time.perf_counter()
        decode_fn([s])
        total += time.perf_counter() - t0
    return 1000.0 * total / len(sources)


def coverage_dump(model: NATModel, source: Sequence[int], k_dec: int | None = None,
                  length: int | None = None) -> str:
    """CSV ``iter,t,i,A,C`` of every iteration's attention and coverage
    matrices for one sentence, 6 decimal places."""
    if not model.config.use_tcir:
        raise ConfigurationError("coverage dump needs a model with the coverage layer")
    res = greedy_parallel_decode(model, [source], k_dec, lengths=None if length is None else [length],
                                 record=True)[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "t", "i", "A", "C"])
    for st in res.states:
        T, n = st.A.shape
        for t in range(T):
            for i in range(n):
                w.writerow([st.k, t, i, f"{st.A[t, i]:.6f}", f"{st.C[t, i]:.6f}"])
    return buf.getvalue()


def parse_coverage_dump(text: str) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    by_iter: dict[int, list] = {}
    for r in rows:
        by_iter.setdefault(int(r["iter"]), []).append(r)
    for k, rs in by_iter.items():
        T = max(int(r["t"]) for r in rs) + 1
        n = max(int(r["i"]) for r in rs) + 1
        A, C = np.zeros((T, n)), np.zeros((T, n))
        for r in rs:
            A[int(r["t"]), int(r["i"])] = float(r["A"])
            C[int(r["t"]), int(r["i"])] = float(r["C"])
        out[k] = (A, C)
    return out
