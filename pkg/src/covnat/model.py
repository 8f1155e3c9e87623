"""Non-autoregressive encoder-decoder with an iterative coverage top layer."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import UNK
from .errors import ContractError
from .nn import (DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Module,
                 MultiHeadAttention, Sublayers, sinusoidal_positions, uniform)


@dataclass
class ModelConfig:
    vocab_size: int = 0     # 0: taken from the vocabulary when the model is built
    d_model: int = 64
    d_hidden: int = 256
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    k_train: int = 5
    length_radius: int = 20
    dropout: float = 0.1
    lambda_init: float = 1.0
    use_tcir: bool = True
    # residual stream around the coverage FFN: "stream" adds H_hat, "attended" adds A E
    coverage_residual: str = "stream"

    def __post_init__(self):
        if self.coverage_residual not in ("stream", "attended"):
            raise ContractError(f"coverage_residual must be 'stream' or 'attended', got {self.coverage_residual!r}")
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.k_train < 1:
            raise ContractError("k_train must be >= 1")
        if self.n_layers < 2:
            raise ContractError("n_layers must be >= 2 (the coverage layer replaces the top one)")
        if self.vocab_size and self.vocab_size < 5:
            raise ContractError("vocab_size must exceed the 4 reserved ids")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    states: Tensor          # (B, n, d)
    length_logits: Tensor   # (B, 2 * radius + 1)
    mask: np.ndarray        # (B, n) bool

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class CoverageIterationState:
    k: int
    H: np.ndarray   # (B, T, d)
    A: np.ndarray   # (B, T, n)
    C: np.ndarray   # (B, T, n)


@dataclass
class NATOutput:
    logits: Tensor
    length_logits: Tensor
    tgt_mask: np.ndarray
    enc: EncoderOutput
    states: list[CoverageIterationState] = field(default_factory=list)


def coverage_vector(attn: Tensor) -> Tensor:
    """C[t, i] = min(sum_{t' < t} A[t', i], 1) along the target axis (-2)."""
    return ad.min_clamp1(ad.exclusive_cumsum(attn, axis=-2))


def coverage_attention(h_hat: Tensor, enc: Tensor, coverage: Tensor, lam: Tensor,
                       src_mask: np.ndarray) -> Tensor:
    """softmax(H_hat E^T / sqrt(d) + lam * (1 - C)) over unmasked source keys."""
    d = enc.shape[-1]
    scores = ad.scale(ad.matmul(h_hat, ad.transpose_last_two(enc)), 1.0 / math.sqrt(d))
    bias = ad.mul(lam, ad.sub(1.0, coverage))
    return ad.softmax_lastdim(ad.add(scores, bias), src_mask[:, None, :])


def check_coverage_state(A: np.ndarray, C: np.ndarray, src_mask: np.ndarray, tol: float = 1e-9) -> None:
    """Raise ContractError if an iteration state breaks its invariants."""
    sums = (A * src_mask[:, None, :]).sum(axis=-1)
    if np.abs(sums - 1.0).max() > tol:
        raise ContractError(f"attention rows do not sum to 1 (max dev {np.abs(sums - 1).max():.3g})")
    if C.min() < 0.0 or C.max() > 1.0:
        raise ContractError("coverage outside [0, 1]")
    if np.any(C[:, 0, :] != 0.0):
        raise ContractError("first coverage row is not zero")
    if np.any(np.diff(C, axis=1) < 0.0):
        raise ContractError("coverage decreases along the target axis")


class CoverageLayer(Sublayers):
    """Top decoder layer iterated K times with coverage-biased attention.

    The inter-attention here is one score matrix between the self-attended
    states and the encoder states, without head split or projections.
    """

    def __init__(self, name, d_model, d_hidden, n_heads, rng, dropout=0.0, lambda_init=1.0,
                 residual="stream"):
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", d_model, n_heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", d_model)
        self.ffn = FeedForward(f"{name}.ffn", d_model, d_hidden, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", d_model)
        self.lam = Parameter(f"{name}.lambda", np.array([lambda_init]))
        self.dropout, self.rng = dropout, rng
        self.residual = residual

    def __call__(self, h: Tensor, coverage: Tensor, enc: Tensor, src_mask: np.ndarray,
                 tgt_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        a, _ = self.self_attn(h, h, tgt_mask)
        h_hat = self.ln1(h + self._drop(a))
        attn = coverage_attention(h_hat, enc, coverage, self.lam, src_mask)
        z = ad.matmul(attn, enc)
        skip = h_hat if self.residual == "stream" else z
        return self.ln2(skip + self._drop(self.ffn(z))), attn


class NATModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.vocab_size < 5:
            raise ContractError(f"vocab_size={config.vocab_size} must exceed the 4 reserved ids")
        self.config = c = config
        rng = np.random.default_rng(seed)
        self.rng = rng
        self.embed = Parameter("embed.weight", uniform(rng, (c.vocab_size, c.d_model)))
        self.encoder = [EncoderLayer(f"encoder.layer{i}", c.d_model, c.d_hidden, c.n_heads, rng, c.dropout)
                        for i in range(c.n_layers)]
        self.decoder = [DecoderLayer(f"decoder.layer{i}", c.d_model, c.d_hidden, c.n_heads, rng, c.dropout)
                        for i in range(c.n_layers - 1)]
        if c.use_tcir:
            self.top = CoverageLayer("decoder.coverage", c.d_model, c.d_hidden, c.n_heads, rng,
                                     c.dropout, c.lambda_init, c.coverage_residual)
        else:
            self.top = DecoderLayer(f"decoder.layer{c.n_layers - 1}", c.d_model, c.d_hidden,
                                    c.n_heads, rng, c.dropout)
        self.length_proj = Linear("length.proj", c.d_model, 2 * c.length_radius + 1, rng)
        self.sca_proj = Parameter("sca.Ws", uniform(rng, (c.d_model, c.d_model)))
        self._pe = sinusoidal_positions(c.max_len + 2, c.d_model)
        self.debug = False

    # -- encoder -------------------------------------------------------------

    def _embed(self, ids: np.ndarray) -> Tensor:
        x = ad.scale(ad.embedding_lookup(self.embed, ids), math.sqrt(self.config.d_model))
        return x + Tensor(self._pe[: ids.shape[1]])

    def encode(self, src: np.ndarray, src_mask: np.ndarray) -> EncoderOutput:
        src = np.asarray(src)
        src_mask = np.asarray(src_mask, dtype=bool)
        if src.ndim != 2 or src.shape != src_mask.shape:
            raise ContractError(f"source ids {src.shape} and mask {src_mask.shape} must be (B, n)")
        if not src_mask.any(axis=1).all():
            raise ContractError("source sentence with no unmasked tokens")
        if src.shape[1] > self.config.max_len:
            raise ContractError(f"source length {src.shape[1]} exceeds max_len={self.config.max_len}")
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, src_mask)
        w = src_mask / src_mask.sum(axis=1, keepdims=True)
        pooled = ad.sum_(ad.mul(x, Tensor(w[:, :, None])), axis=1)
        return EncoderOutput(x, self.length_proj(pooled), src_mask)

    def predict_length(self, length_logits: np.ndarray, src_lengths) -> np.ndarray:
        """T = n + (argmax bucket - radius), clamped to [1, max_len]."""
        logits = np.asarray(getattr(length_logits, "data", length_logits))
        offset = np.argmax(logits, axis=-1) - self.config.length_radius
        return np.clip(np.asarray(src_lengths) + offset, 1, self.config.max_len)

    # -- decoder -------------------------------------------------------------

    def target_mask(self, tgt_lengths) -> np.ndarray:
        tgt_lengths = np.asarray(tgt_lengths, dtype=np.int64)
        if tgt_lengths.min() < 1:
            raise ContractError("target length must be >= 1")
        if tgt_lengths.max() > self.config.max_len:
            raise ContractError(f"target length {tgt_lengths.max()} exceeds max_len={self.config.max_len}")
        return np.arange(tgt_lengths.max())[None, :] < tgt_lengths[:, None]

    def decode_hidden(self, tgt_lengths, enc: EncoderOutput) -> tuple[Tensor, Tensor, np.ndarray]:
        """Bottom L-1 decoder layers over <unk> inputs.

        Returns the top hidden states H0 (B, T, d), that layer's
        head-averaged inter-attention A0 (B, T, n) and the target mask.
        """
        tgt_mask = self.target_mask(tgt_lengths)
        ids = np.full(tgt_mask.shape, UNK, dtype=np.int64)
        x = self._embed(ids)
        attn = None
        for layer in self.decoder:
            x, attn = layer(x, tgt_mask, enc.states, enc.mask)
        return x, attn, tgt_mask

    def run_tcir(self, h0: Tensor, a0: Tensor, enc: EncoderOutput, tgt_mask: np.ndarray, k: int,
                 record: bool = False) -> tuple[Tensor, list[CoverageIterationState]]:
        if k < 1:
            raise ContractError(f"number of coverage iterations must be >= 1, got {k}")
        if not isinstance(self.top, CoverageLayer):
            raise ContractError("model was built without the coverage layer")
        h, attn = h0, a0
        states = []
        for it in range(1, k + 1):
            cov = coverage_vector(attn)
            h, attn = self.top(h, cov, enc.states, enc.mask, tgt_mask)
            if self.debug:
                check_coverage_state(attn.data, cov.data, enc.mask)
            if record:
                states.append(CoverageIterationState(it, h.data, attn.data, cov.data))
        return h, states

    def decode(self, enc: EncoderOutput, tgt_lengths, k: int | None = None,
               record: bool = False) -> tuple[Tensor, np.ndarray, list[CoverageIterationState]]:
        """Decoder logits (B, T, V) given encoder output and target lengths."""
        h0, a0, tgt_mask = self.decode_hidden(tgt_lengths, enc)
        states: list[CoverageIterationState] = []
        if isinstance(self.top, CoverageLayer):
            h, states = self.run_tcir(h0, a0, enc, tgt_mask, k or self.config.k_train, record)
        else:
            h, _ = self.top(h0, tgt_mask, enc.states, enc.mask)
        # output projection tied to the embedding table
        logits = ad.matmul(h, ad.transpose_last_two(self.embed))
        return logits, tgt_mask, states

    def forward(self, src: np.ndarray, src_mask: np.ndarray, tgt_lengths, k: int | None = None,
                record: bool = False) -> NATOutput:
        enc = self.encode(src, src_mask)
        logits, tgt_mask, states = self.decode(enc, tgt_lengths, k, record)
        return NATOutput(logits, enc.length_logits, tgt_mask, enc, states)
