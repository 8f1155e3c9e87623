"""Autoregressive Transformer teacher: training, beam search, distillation
and candidate rescoring."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, no_grad
from .data import BOS, EOS, PAD, UNK, ParallelCorpus, SentencePair, Vocabulary, batch_by_tokens, pad_ids
from .errors import ConfigurationError, ContractError, TrainingError
from .nn import DecoderLayer, EncoderLayer, Module, sinusoidal_positions, uniform

_DISALLOWED = (PAD, UNK, BOS)


@dataclass
class TeacherConfig:
    vocab_size: int = 0
    d_model: int = 64
    d_hidden: int = 256
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    dropout: float = 0.1
    beam: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.beam < 1:
            raise ContractError("beam must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class ATModel(Module):
    def __init__(self, config: TeacherConfig, seed: int = 0):
        if config.vocab_size < 5:
            raise ContractError(f"vocab_size={config.vocab_size} must exceed the 4 reserved ids")
        self.config = c = config
        rng = np.random.default_rng(seed)
        self.rng = rng
        self.embed = Parameter("embed.weight", uniform(rng, (c.vocab_size, c.d_model)))
        self.encoder = [EncoderLayer(f"encoder.layer{i}", c.d_model, c.d_hidden, c.n_heads, rng, c.dropout)
                        for i in range(c.n_layers)]
        self.decoder = [DecoderLayer(f"decoder.layer{i}", c.d_model, c.d_hidden, c.n_heads, rng,
                                     c.dropout, causal=True)
                        for i in range(c.n_layers)]
        self._pe = sinusoidal_positions(c.max_len + 2, c.d_model)

    def _embed(self, ids: np.ndarray) -> Tensor:
        x = ad.scale(ad.embedding_lookup(self.embed, ids), math.sqrt(self.config.d_model))
        return x + Tensor(self._pe[: ids.shape[1]])

    def encode(self, src: np.ndarray, src_mask: np.ndarray) -> Tensor:
        if not np.asarray(src_mask).any(axis=1).all():
            raise ContractError("source sentence with no unmasked tokens")
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, src_mask)
        return x

    def decoder_logits(self, enc: Tensor, src_mask: np.ndarray, prefix: np.ndarray,
                       prefix_mask: np.ndarray) -> Tensor:
        """Next-token logits (B, t, V) for every position of ``prefix``."""
        x = self._embed(prefix)
        for layer in self.decoder:
            x, _ = layer(x, prefix_mask, enc, src_mask)
        return ad.matmul(x, ad.transpose_last_two(self.embed))

    # -- training ------------------------------------------------------------

    def loss(self, src, src_mask, tgt, tgt_mask) -> Tensor:
        """Per-token cross-entropy of ``tgt + <eos>`` given ``<bos> + tgt``."""
        lengths = tgt_mask.sum(axis=1)
        B = tgt.shape[0]
        inp = np.concatenate([np.full((B, 1), BOS), tgt], axis=1)
        out = np.concatenate([tgt, np.full((B, 1), PAD)], axis=1)
        out[np.arange(B), lengths] = EOS
        mask = np.arange(inp.shape[1])[None, :] <= lengths[:, None]
        logits = self.decoder_logits(self.encode(src, src_mask), src_mask, inp, mask)
        return ad.cross_entropy_from_logits(logits, out, mask)

    # -- scoring -------------------------------------------------------------

    def score(self, sources: Sequence[Sequence[int]], candidates: Sequence[Sequence[int]]) -> np.ndarray:
        """Log-probability of ``candidate + <eos>`` given the source, divided
        by the number of scored tokens (len(candidate) + 1)."""
        if any(len(c) == 0 for c in candidates):
            raise ContractError("cannot rescore an empty candidate")
        with no_grad():
            src, src_mask = pad_ids(sources)
            tgt, tgt_mask = pad_ids(candidates)
            lengths = tgt_mask.sum(axis=1)
            B = len(candidates)
            inp = np.concatenate([np.full((B, 1), BOS), tgt], axis=1)
            out = np.concatenate([tgt, np.full((B, 1), PAD)], axis=1)
            out[np.arange(B), lengths] = EOS
            mask = np.arange(inp.shape[1])[None, :] <= lengths[:, None]
            was = self.training
            self.eval()
            logits = self.decoder_logits(self.encode(src, src_mask), src_mask, inp, mask).data
            self.train(was)
        logp = log_softmax(logits)
        picked = np.take_along_axis(logp, out[..., None], axis=-1)[..., 0]
        return (picked * mask).sum(axis=1) / (lengths + 1)

    def step_function(self, sources: Sequence[Sequence[int]]):
        """Closure mapping (sentence index, prefix) rows to next-token log-probs."""
        src, src_mask = pad_ids(sources)
        was = self.training
        self.eval()
        with no_grad():
            enc = self.encode(src, src_mask).data
        self.train(was)

        def step(rows: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
            with no_grad():
                B, t = prefixes.shape
                inp = np.concatenate([np.full((B, 1), BOS), prefixes], axis=1)
                mask = np.ones(inp.shape, dtype=bool)
                logits = self.decoder_logits(Tensor(enc[rows]), src_mask[rows], inp, mask).data[:, -1]
            return log_softmax(logits)

        return step


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


StepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def beam_search(step: StepFn, n_sentences: int, beam: int, max_len: int | Sequence[int],
                vocab_size: int) -> list[tuple[list[int], float]]:
    """Length-normalised beam search.

    ``step(rows, prefixes)`` returns log-probs (N, V) of the next token for
    each prefix row (no <bos>), ``rows`` giving the sentence index. A
    finished hypothesis scores (sum of token log-probs incl. <eos>) /
    (len + 1). Pad/unk/bos are never emitted, <eos> not as first token, and
    hypotheses reaching ``max_len`` are closed with <eos>. Ties are broken
    towards lower beam slot and lower token id, so ``beam=1`` is greedy.
    """
    if beam < 1:
        raise ContractError("beam must be >= 1")
    limits = np.broadcast_to(np.asarray(max_len), (n_sentences,))
    alive = [[((), 0.0)] for _ in range(n_sentences)]
    finished: list[list[tuple[tuple, float]]] = [[] for _ in range(n_sentences)]
    done = [False] * n_sentences
    t = 0
    while not all(done):
        rows, prefixes, owners = [], [], []
        for s in range(n_sentences):
            if done[s]:
                continue
            for slot, (pre, sc) in enumerate(alive[s]):
                rows.append(s)
                prefixes.append(pre)
                owners.append((s, slot))
        logp = step(np.asarray(rows), np.asarray(prefixes, dtype=np.int64).reshape(len(rows), t))
        logp = logp.copy()
        logp[:, list(_DISALLOWED)] = -np.inf
        if t == 0:
            logp[:, EOS] = -np.inf
        by_sentence: dict[int, list[int]] = {}
        for r, (s, _) in enumerate(owners):
            by_sentence.setdefault(s, []).append(r)
        for s, rs in by_sentence.items():
            if t >= limits[s]:
                for r in rs:
                    pre, sc = alive[s][owners[r][1]]
                    finished[s].append((pre, (sc + logp[r, EOS]) / (t + 1)))
                done[s] = True
                continue
            cand = np.stack([alive[s][owners[r][1]][1] + logp[r] for r in rs])  # (slots, V)
            flat = cand.reshape(-1)
            order = np.argsort(-flat, kind="stable")[: 2 * beam]
            new_alive = []
            for rank, f in enumerate(order):
                sc = flat[f]
                if not np.isfinite(sc):
                    break
                slot, tok = divmod(int(f), vocab_size)
                pre = alive[s][slot][0]
                if tok == EOS:
                    if rank < beam:
                        finished[s].append((pre, sc / (t + 1)))
                elif len(new_alive) < beam:
                    new_alive.append((pre + (tok,), sc))
            alive[s] = new_alive
            if len(finished[s]) >= beam or not new_alive:
                done[s] = True
        t += 1
    out = []
    for s in range(n_sentences):
        # best normalised score; ties to the earliest finished
        best = max(range(len(finished[s])), key=lambda i: (finished[s][i][1], -i))
        pre, sc = finished[s][best]
        out.append((list(pre), float(sc)))
    return out


def greedy_decode(step: StepFn, n_sentences: int, max_len: int | Sequence[int]) -> list[list[int]]:
    """Stepwise argmax (ties -> lowest id) until <eos> or ``max_len``."""
    limits = np.broadcast_to(np.asarray(max_len), (n_sentences,))
    seqs: list[list[int]] = [[] for _ in range(n_sentences)]
    active = list(range(n_sentences))
    t = 0
    while active:
        still = [s for s in active if t < limits[s]]
        if not still:
            break
        logp = step(np.asarray(still), np.asarray([seqs[s] for s in still], dtype=np.int64).reshape(len(still), t))
        logp = logp.copy()
        logp[:, list(_DISALLOWED)] = -np.inf
        if t == 0:
            logp[:, EOS] = -np.inf
        nxt = []
        for r, s in enumerate(still):
            tok = int(np.argmax(logp[r]))
            if tok != EOS:
                seqs[s].append(tok)
                nxt.append(s)
        active = nxt
        t += 1
    return seqs


def _max_lengths(model: ATModel, sources, max_len) -> np.ndarray:
    cap = model.config.max_len
    if max_len is None:
        return np.asarray([min(cap, 2 * len(s) + 10) for s in sources])
    return np.minimum(np.broadcast_to(np.asarray(max_len), (len(sources),)), cap)


def beam_decode(model: ATModel, sources: Sequence[Sequence[int]], beam: int | None = None,
                max_len=None, batch_size: int = 32) -> list[tuple[list[int], float]]:
    beam = beam or model.config.beam
    out = []
    for start in range(0, len(sources), batch_size):
        chunk = sources[start:start + batch_size]
        out.extend(beam_search(model.step_function(chunk), len(chunk), beam,
                               _max_lengths(model, chunk, max_len), model.config.vocab_size))
    return out


def teacher_greedy(model: ATModel, sources, max_len=None, batch_size: int = 64) -> list[list[int]]:
    out = []
    for start in range(0, len(sources), batch_size):
        chunk = sources[start:start + batch_size]
        out.extend(greedy_decode(model.step_function(chunk), len(chunk), _max_lengths(model, chunk, max_len)))
    return out


# ---------------------------------------------------------------------------
# training and distillation
# ---------------------------------------------------------------------------


@dataclass
class TeacherTrainConfig:
    steps: int = 3000
    max_tokens: int = 2000
    peak_lr: float = 5e-4
    warmup: int = 500
    seed: int = 0


def teacher_train(pairs: Sequence[SentencePair], config: TeacherConfig,
                  train_cfg: TeacherTrainConfig | None = None,
                  on_step: Callable[[int, float], None] | None = None) -> ATModel:
    """Train the teacher with teacher-forced cross-entropy."""
    from .training import AdamState, adam_step, lr_schedule

    if not pairs:
        raise ConfigurationError("teacher needs a non-empty corpus")
    tc = train_cfg or TeacherTrainConfig()
    model = ATModel(config, seed=tc.seed).train()
    params = model.parameters()
    opt = AdamState()
    step = epoch = 0
    stats: Counter = Counter()
    while step < tc.steps:
        for batch in batch_by_tokens(pairs, tc.max_tokens, tc.seed * 7919 + epoch, stats):
            if step >= tc.steps:
                break
            step += 1
            loss = model.loss(batch.src, batch.src_mask, batch.tgt, batch.tgt_mask)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"teacher loss diverged at step {step}", step=step)
            ad.zero_grads(params)
            ad.backward(loss)
            adam_step(params, opt, lr_schedule(step, tc.warmup, tc.peak_lr))
            if on_step:
                on_step(step, value)
        epoch += 1
    return model.eval()


def distill(model: ATModel, corpus: ParallelCorpus, vocab: Vocabulary, beam: int | None = None,
            batch_size: int = 32) -> ParallelCorpus:
    """Replace every target with the teacher's beam output; sources unchanged."""
    sources = [vocab.encode(s) for s in corpus.sources]
    decoded = beam_decode(model, sources, beam, batch_size=batch_size)
    return ParallelCorpus([list(s) for s in corpus.sources], [vocab.decode(seq) for seq, _ in decoded])


def rescore(model: ATModel, source: Sequence[int], candidate: Sequence[int]) -> float:
    return float(model.score([source], [candidate])[0])
