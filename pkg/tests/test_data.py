from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covnat.data import (BOS, EOS, PAD, UNK, LexiconParams, ParallelCorpus, SentencePair, Vocabulary,
                         batch_by_tokens, build_vocab, encode_corpus, gen_synthetic, lexicon_reachable,
                         make_batch, pad_ids)
from covnat.errors import ConfigurationError, DataError


@pytest.fixture
def ab_corpus(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("a b\na\n", encoding="utf-8")
    return path


def test_build_vocab_order(ab_corpus):
    vocab = build_vocab([ab_corpus], 1)
    assert vocab.tokens == ["<pad>", "<unk>", "<bos>", "<eos>", "a", "b"]
    assert tuple(vocab.index[t] for t in ("<pad>", "<unk>", "<bos>", "<eos>")) == (PAD, UNK, BOS, EOS)


def test_build_vocab_min_count(ab_corpus):
    assert "b" not in build_vocab([ab_corpus], 2)


def test_build_vocab_empty_file(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    with pytest.raises(ConfigurationError):
        build_vocab([empty], 1)


def test_vocab_unknown_maps_to_unk_and_roundtrips(ab_corpus, tmp_path):
    vocab = build_vocab([ab_corpus], 1)
    assert vocab.encode(["a", "zzz"]) == [4, UNK]
    vocab.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt") == vocab


def test_copy_task():
    corpus = gen_synthetic("copy", 2, 7)
    assert len(corpus) == 2
    assert all(s == t for s, t in zip(corpus.sources, corpus.targets))


def test_reverse_task():
    corpus = gen_synthetic("reverse", 20, 1)
    assert all(t == s[::-1] for s, t in zip(corpus.sources, corpus.targets))


def test_unknown_task():
    with pytest.raises(ConfigurationError):
        gen_synthetic("transliterate", 3, 0)


def test_multi_synonym_targets_follow_lexicon():
    params = LexiconParams(n_synonyms=2)
    corpus = gen_synthetic("multi-synonym", 200, 3, params)
    assert all(len(options) == 2 for options in corpus.lexicon.values())
    for s, t in zip(corpus.sources, corpus.targets):
        assert lexicon_reachable(s, t, corpus.lexicon)


def test_lexicon_oracle_rejects_foreign_tokens():
    corpus = gen_synthetic("multi-synonym", 5, 3)
    s, t = corpus.sources[0], list(corpus.targets[0])
    t[0] = "not-a-word"
    assert not lexicon_reachable(s, t, corpus.lexicon)


def test_splits_share_the_lexicon():
    assert gen_synthetic("multi-synonym", 3, 1).lexicon == gen_synthetic("multi-synonym", 3, 2).lexicon


def test_generation_is_seeded():
    a, b = gen_synthetic("multi-synonym", 50, 9), gen_synthetic("multi-synonym", 50, 9)
    assert a.sources == b.sources and a.targets == b.targets


def test_sources_have_no_adjacent_repeats():
    for s in gen_synthetic("copy", 300, 4).sources:
        assert all(x != y for x, y in zip(s, s[1:]))


def test_corpus_save_load(tmp_path):
    corpus = gen_synthetic("reverse", 10, 0)
    corpus.save(tmp_path / "train")
    back = ParallelCorpus.load(tmp_path / "train")
    assert back.sources == corpus.sources and back.targets == corpus.targets


def test_corpus_line_mismatch():
    with pytest.raises(DataError):
        ParallelCorpus([["a"]], [])


def test_encode_corpus_rejects_empty_line(ab_corpus):
    vocab = build_vocab([ab_corpus])
    with pytest.raises(DataError):
        encode_corpus(ParallelCorpus([["a"]], [[]]), vocab)


def _pairs(lengths):
    return [SentencePair(tuple(range(4, 4 + n)), tuple(range(4, 4 + n))) for n in lengths]


def test_batch_packing_by_hand():
    batches = batch_by_tokens(_pairs([4, 4, 4]), 8, seed=0)
    assert sorted(b.size for b in batches) == [1, 2]


def test_huge_budget_gives_one_batch():
    assert len(batch_by_tokens(_pairs([3, 5, 7, 2]), 10**6, seed=0)) == 1


def test_batch_order_is_seeded():
    pairs = _pairs(np.random.default_rng(0).integers(1, 12, size=60).tolist())
    a = batch_by_tokens(pairs, 40, seed=5)
    b = batch_by_tokens(pairs, 40, seed=5)
    assert [x.indices.tolist() for x in a] == [x.indices.tolist() for x in b]


def test_overlong_pairs_are_counted():
    stats = Counter()
    batches = batch_by_tokens(_pairs([3, 20]), 10, seed=0, stats=stats)
    assert stats["skipped_too_long"] == 1
    assert sum(b.size for b in batches) == 1


@given(st.lists(st.integers(1, 15), min_size=1, max_size=40), st.integers(15, 120), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_batches_partition_and_respect_budget(lengths, budget, seed):
    pairs = _pairs(lengths)
    batches = batch_by_tokens(pairs, budget, seed)
    seen = sorted(i for b in batches for i in b.indices.tolist())
    assert seen == list(range(len(pairs)))
    assert all(b.padded_tokens <= budget for b in batches)


def test_make_batch_masks():
    batch = make_batch([SentencePair((5, 6, 7), (8,)), SentencePair((5,), (8, 9))])
    assert batch.src.tolist() == [[5, 6, 7], [5, PAD, PAD]]
    assert batch.src_lengths.tolist() == [3, 1]
    assert batch.tgt_lengths.tolist() == [1, 2]


def test_pad_ids_width():
    ids, mask = pad_ids([[4], [5, 6]], width=4)
    assert ids.shape == (2, 4) and mask.sum() == 3
