"""Vocabulary, corpus files, synthetic translation tasks and token batching."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DataError
from .io_utils import read_lines, write_lines

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

TASKS = ("copy", "reverse", "lexical-swap", "multi-synonym")


class Vocabulary:
    """Token <-> id mapping shared by source and target sides.

    Ids 0..3 are reserved for pad, unk, bos and eos.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        write_lines(path, self.tokens)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(read_lines(path))


def build_vocab(paths: Sequence, min_count: int = 1) -> Vocabulary:
    """Count whitespace tokens over UTF-8 line files.

    Order: reserved ids first, then descending count, ties lexicographic.
    """
    counts: Counter = Counter()
    for path in paths:
        for line in read_lines(path):
            counts.update(line.split())
    for tok in RESERVED:
        counts.pop(tok, None)
    if not counts:
        raise ConfigurationError(f"no tokens found in {list(map(str, paths))}")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + kept)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


@dataclass
class ParallelCorpus:
    sources: list[list[str]]
    targets: list[list[str]]
    lexicon: dict[str, list[tuple[str, ...]]] | None = None

    def __post_init__(self):
        if len(self.sources) != len(self.targets):
            raise DataError(f"{len(self.sources)} source lines vs {len(self.targets)} target lines")

    def __len__(self) -> int:
        return len(self.sources)

    def save(self, prefix) -> None:
        write_lines(f"{prefix}.src", (" ".join(s) for s in self.sources))
        write_lines(f"{prefix}.tgt", (" ".join(t) for t in self.targets))

    @classmethod
    def load(cls, prefix) -> "ParallelCorpus":
        src, tgt = Path(f"{prefix}.src"), Path(f"{prefix}.tgt")
        for p in (src, tgt):
            if not p.exists():
                raise DataError(f"missing corpus file {p}")
        return cls([l.split() for l in read_lines(src)], [l.split() for l in read_lines(tgt)])


@dataclass(frozen=True)
class SentencePair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]


def encode_corpus(corpus: ParallelCorpus, vocab: Vocabulary, max_len: int | None = None) -> list[SentencePair]:
    pairs = []
    for s, t in zip(corpus.sources, corpus.targets):
        if not s or not t:
            raise DataError("empty sentence in parallel corpus")
        if max_len is not None and (len(s) > max_len or len(t) > max_len):
            raise DataError(f"sentence longer than max_len={max_len}")
        pairs.append(SentencePair(tuple(vocab.encode(s)), tuple(vocab.encode(t))))
    return pairs


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------


@dataclass
class LexiconParams:
    n_source_words: int = 40
    n_synonyms: int = 2
    two_token_prob: float = 0.25
    n_markers: int = 4
    min_len: int = 3
    max_len: int = 30
    lexicon_seed: int = 0


def _source_words(params: LexiconParams) -> list[str]:
    return [f"s{i}" for i in range(params.n_source_words)]


def make_lexicon(task: str, params: LexiconParams) -> dict[str, list[tuple[str, ...]]] | None:
    """Source word -> list of admissible target phrases (None for copy/reverse)."""
    words = _source_words(params)
    if task in ("copy", "reverse"):
        return None
    rng = np.random.default_rng(params.lexicon_seed)
    if task == "lexical-swap":
        perm = rng.permutation(len(words))
        return {w: [(f"t{perm[i]}",)] for i, w in enumerate(words)}
    if task == "multi-synonym":
        s = params.n_synonyms
        if s < 1:
            raise ConfigurationError("multi-synonym needs n_synonyms >= 1")
        base = rng.permutation(len(words) * s)
        lex = {}
        for i, w in enumerate(words):
            phrases = []
            for k in range(s):
                head = f"t{base[i * s + k]}"
                if params.n_markers > 0 and rng.random() < params.two_token_prob:
                    phrases.append((head, f"m{rng.integers(params.n_markers)}"))
                else:
                    phrases.append((head,))
            lex[w] = phrases
        return lex
    raise ConfigurationError(f"unknown task {task!r}; expected one of {TASKS}")


def gen_synthetic(task: str, size: int, seed: int, params: LexiconParams | None = None) -> ParallelCorpus:
    """Generate ``size`` sentence pairs for ``task``.

    The lexicon depends only on ``params.lexicon_seed``, so splits generated
    with different ``seed`` values share one translation lexicon. For
    ``multi-synonym`` every source token independently picks one of its
    synonym phrases, which makes the target distribution multimodal.
    """
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; expected one of {TASKS}")
    params = params or LexiconParams()
    if not 1 <= params.min_len <= params.max_len:
        raise ConfigurationError(f"bad length range [{params.min_len}, {params.max_len}]")
    lexicon = make_lexicon(task, params)
    words = _source_words(params)
    rng = np.random.default_rng(seed)
    sources, targets = [], []
    for _ in range(size):
        n = int(rng.integers(params.min_len, params.max_len + 1))
        ids = [int(rng.integers(len(words)))]
        while len(ids) < n:
            # no immediate repeats, so references contain no consecutive duplicates
            j = int(rng.integers(len(words) - 1))
            ids.append(j if j < ids[-1] else j + 1)
        src = [words[j] for j in ids]
        if task == "copy":
            tgt = list(src)
        elif task == "reverse":
            tgt = src[::-1]
        else:
            tgt = []
            for w in src:
                options = lexicon[w]
                tgt.extend(options[int(rng.integers(len(options)))])
        sources.append(src)
        targets.append(tgt)
    return ParallelCorpus(sources, targets, lexicon)


def lexicon_reachable(src: Sequence[str], tgt: Sequence[str], lexicon) -> bool:
    """True iff ``tgt`` is a concatenation of one admissible phrase per
    source token, in source order."""
    reach = {0}
    for w in src:
        nxt = set()
        for pos in reach:
            for phrase in lexicon.get(w, ()):
                if tuple(tgt[pos:pos + len(phrase)]) == tuple(phrase):
                    nxt.add(pos + len(phrase))
        reach = nxt
        if not reach:
            return False
    return len(tgt) in reach


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray
    tgt_lengths: np.ndarray
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def src_lengths(self) -> np.ndarray:
        return self.src_mask.sum(axis=1)

    @property
    def padded_tokens(self) -> int:
        return self.size * max(self.src.shape[1], self.tgt.shape[1])


def pad_ids(seqs: Sequence[Sequence[int]], width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    width = width or max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def make_batch(pairs: Sequence[SentencePair], indices=None) -> Batch:
    if not pairs:
        raise ContractError("cannot batch zero pairs")
    src, src_mask = pad_ids([p.src for p in pairs])
    tgt, tgt_mask = pad_ids([p.tgt for p in pairs])
    idx = np.arange(len(pairs)) if indices is None else np.asarray(indices)
    return Batch(src, src_mask, tgt, tgt_mask, tgt_mask.sum(axis=1), idx)


def batch_by_tokens(pairs: Sequence[SentencePair], max_tokens: int, seed: int,
                    stats: Counter | None = None) -> list[Batch]:
    """Pack pairs into batches whose padded size (rows x longest side) stays
    within ``max_tokens``.

    Pairs are shuffled with ``seed``, grouped by length to limit padding and
    the batch order is shuffled again. Pairs longer than ``max_tokens`` are
    skipped and counted under ``stats["skipped_too_long"]``.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    lengths = np.array([max(len(pairs[i].src), len(pairs[i].tgt)) for i in order], dtype=np.int64)
    order = order[np.argsort(lengths, kind="stable")]
    groups: list[list[int]] = []
    current: list[int] = []
    longest = 0
    skipped = 0
    for i in order:
        ln = max(len(pairs[i].src), len(pairs[i].tgt))
        if ln > max_tokens:
            skipped += 1
            continue
        if current and (len(current) + 1) * max(longest, ln) > max_tokens:
            groups.append(current)
            current, longest = [], 0
        current.append(int(i))
        longest = max(longest, ln)
    if current:
        groups.append(current)
    if skipped:
        log.warning("skipped %d pairs longer than max_tokens=%d", skipped, max_tokens)
        if stats is not None:
            stats["skipped_too_long"] += skipped
    groups = [groups[j] for j in rng.permutation(len(groups))]
    return [make_batch([pairs[i] for i in g], g) for g in groups]
