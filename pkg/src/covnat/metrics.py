"""Corpus BLEU, repeated-token statistics and evaluation reports."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError

SMOOTHING = "add-one on n-gram precisions for n>=2"
DEFAULT_BUCKET_EDGES = (0, 10, 20, 30, math.inf)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence], max_n: int = 4,
         smooth: bool = True) -> float:
    """Corpus-level BLEU-4 in [0, 100] with a brevity penalty.

    Clipped n-gram matches and totals are pooled over the corpus; with
    ``smooth`` the pooled precisions for n >= 2 get +1 on numerator and
    denominator.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def postprocess_dedup(tokens: Sequence) -> tuple[list, int]:
    """Collapse runs of identical consecutive tokens; return (tokens, removed)."""
    out: list = []
    for tok in tokens:
        if not out or out[-1] != tok:
            out.append(tok)
    return out, len(tokens) - len(out)


@dataclass
class RepeatStats:
    overall: float
    short: float
    long: float


def _ratio(removed, raw) -> float:
    total = int(np.sum(raw))
    return 100.0 * float(np.sum(removed)) / total if total else 0.0


def repeated_token_ratio(removed_counts: Sequence[int], raw_lengths: Sequence[int],
                         src_lengths: Sequence[int] | None = None) -> RepeatStats:
    """100 * removed / raw decoded tokens, overall and on the short/long
    halves of the corpus split at the source-length median (the long half
    takes the extra sentence when the count is odd)."""
    removed = np.asarray(removed_counts, dtype=np.int64)
    raw = np.asarray(raw_lengths, dtype=np.int64)
    if removed.size == 0:
        raise ContractError("repeated_token_ratio of an empty corpus")
    if src_lengths is None:
        src_lengths = raw
    order = np.argsort(np.asarray(src_lengths), kind="stable")
    half = len(order) // 2
    short, long_ = order[:half], order[half:]
    return RepeatStats(_ratio(removed, raw), _ratio(removed[short], raw[short]),
                       _ratio(removed[long_], raw[long_]))


def bucket_label(lo, hi) -> str:
    return f"[{lo},{'inf' if math.isinf(hi) else int(hi)})"


def length_bucket_report(hypotheses, references, src_lengths,
                         edges: Sequence[float] = DEFAULT_BUCKET_EDGES) -> dict[str, tuple[int, float]]:
    """BLEU per source-length bucket ``[lo, hi)``; empty buckets are omitted."""
    src_lengths = np.asarray(src_lengths)
    if src_lengths.size and (src_lengths.min() < edges[0] or src_lengths.max() >= edges[-1]):
        raise ContractError("bucket edges do not cover all source lengths")
    report = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        idx = [i for i, n in enumerate(src_lengths) if lo <= n < hi]
        if idx:
            report[bucket_label(lo, hi)] = (
                len(idx), bleu([hypotheses[i] for i in idx], [references[i] for i in idx]))
    return report


@dataclass
class EvalReport:
    bleu: float
    repeat: RepeatStats
    buckets: dict[str, tuple[int, float]]
    k_dec: int | None = None
    latency_ms: float | None = None
    n_sentences: int = 0
    smoothing: str = SMOOTHING
    extra: dict[str, str] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        rows = [
            ("sentences", str(self.n_sentences)),
            ("bleu", f"{self.bleu:.4f}"),
            ("bleu_smoothing", self.smoothing),
            ("repeat_ratio_all", f"{self.repeat.overall:.4f}"),
            ("repeat_ratio_short", f"{self.repeat.short:.4f}"),
            ("repeat_ratio_long", f"{self.repeat.long:.4f}"),
            ("k_dec", "" if self.k_dec is None else str(self.k_dec)),
            ("latency_ms_mean", "" if self.latency_ms is None else f"{self.latency_ms:.4f}"),
        ]
        for label, (count, score) in self.buckets.items():
            rows.append((f"bucket{label}.count", str(count)))
            rows.append((f"bucket{label}.bleu", f"{score:.4f}"))
        rows.extend(sorted(self.extra.items()))
        return rows

    def to_text(self) -> str:
        # unset fields stay in the CSV (stable columns) but not in the text form
        return "".join(f"{k} = {v}\n" for k, v in self.rows() if v != "")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(self.rows())
        return buf.getvalue()
