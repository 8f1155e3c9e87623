"""Training objectives: token MLE, length prediction, sentence-level coverage
agreement, and their weighted combinations for the two training phases."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch
from .errors import ContractError


def mle_loss(logits: Tensor, targets, mask) -> Tensor:
    """Mean -log p(y_t) over unmasked target positions."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("mle_loss over an empty target mask")
    return ad.cross_entropy_from_logits(logits, targets, mask)


def length_buckets(src_lengths, tgt_lengths, radius: int, stats: Counter | None = None) -> np.ndarray:
    offset = np.asarray(tgt_lengths) - np.asarray(src_lengths)
    clamped = np.clip(offset, -radius, radius)
    n_clamped = int((clamped != offset).sum())
    if n_clamped and stats is not None:
        stats["length_clamped"] += n_clamped
    return clamped + radius


def length_loss(length_logits: Tensor, src_lengths, tgt_lengths, radius: int,
                stats: Counter | None = None) -> Tensor:
    """Cross-entropy of the length-offset classifier against the gold bucket.

    Offsets beyond +-radius go to the edge bucket and are counted under
    ``stats["length_clamped"]``.
    """
    gold = length_buckets(src_lengths, tgt_lengths, radius, stats)
    return ad.cross_entropy_from_logits(length_logits, gold)


def _masked_position_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    m = np.asarray(mask, dtype=np.float64)
    total = ad.sum_order_free(ad.mul(x, Tensor(m[:, :, None])), axis=1)
    return ad.mul(total, Tensor(1.0 / m.sum(axis=1, keepdims=True)))


def sca_loss(src, src_mask, logits: Tensor, tgt_mask, embed: Tensor, w_s: Tensor) -> Tensor:
    """Sentence-level coverage agreement, averaged over the batch.

    Source side: mean over positions of ReLU(E_src W_s), E_src being the raw
    word embeddings. Translation side: mean over positions of the expected
    embedding p_t W_e. The loss is the Euclidean distance between the two
    means divided by sqrt(d_model). Position means are order-free, so the
    value is exactly invariant to permuting positions.
    """
    src = np.asarray(src)
    d = embed.shape[1]
    e_src = ad.embedding_lookup(embed, src)
    src_bar = _masked_position_mean(ad.relu(ad.matmul(e_src, w_s)), src_mask)
    probs = ad.softmax_lastdim(logits)
    hyp_bar = _masked_position_mean(ad.matmul(probs, embed), tgt_mask)
    dist = ad.l2_distance(src_bar, hyp_bar)
    return ad.scale(ad.sum_(dist), 1.0 / (math.sqrt(d) * src.shape[0]))


@dataclass
class Objective:
    total: Tensor
    mle: Tensor
    length: Tensor
    coverage: Tensor | None = None

    def components(self) -> dict[str, float]:
        return {
            "mle": float(self.mle.data),
            "length": float(self.length.data),
            "coverage": float("nan") if self.coverage is None else float(self.coverage.data),
            "total": float(self.total.data),
        }


def _basic_terms(model, batch: Batch, k, stats):
    out = model.forward(batch.src, batch.src_mask, batch.tgt_lengths, k=k)
    mle = mle_loss(out.logits, batch.tgt, batch.tgt_mask)
    length = length_loss(out.length_logits, batch.src_lengths, batch.tgt_lengths,
                         model.config.length_radius, stats)
    return out, mle, length


def pretrain_objective(model, batch: Batch, alpha: float = 0.1, k: int | None = None,
                       stats: Counter | None = None) -> Objective:
    """L_mle + alpha * L_length."""
    if alpha < 0:
        raise ContractError("alpha must be >= 0")
    _, mle, length = _basic_terms(model, batch, k, stats)
    return Objective(ad.add(mle, ad.scale(length, alpha)), mle, length)


def finetune_objective(model, batch: Batch, alpha: float = 0.1, beta: float = 0.5,
                       k: int | None = None, stats: Counter | None = None) -> Objective:
    """L_mle + alpha * L_length + beta * L_coverage."""
    if alpha < 0 or beta < 0:
        raise ContractError("alpha and beta must be >= 0")
    out, mle, length = _basic_terms(model, batch, k, stats)
    cov = sca_loss(batch.src, batch.src_mask, out.logits, out.tgt_mask, model.embed, model.sca_proj)
    base = ad.add(mle, ad.scale(length, alpha))
    return Objective(ad.add(base, ad.scale(cov, beta)), mle, length, cov)
