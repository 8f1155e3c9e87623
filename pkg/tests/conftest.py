import numpy as np
import pytest

from covnat.data import SentencePair, make_batch
from covnat.model import ModelConfig, NATModel


def tiny_model(seed=0, vocab=12, d=8, k=3, radius=5, **kw):
    cfg = ModelConfig(vocab_size=vocab, d_model=d, d_hidden=16, n_layers=2, n_heads=2, max_len=16,
                      k_train=k, length_radius=radius, dropout=0.0, **kw)
    return NATModel(cfg, seed=seed)


def random_pairs(rng, n, vocab=12, lo=1, hi=7):
    pairs = []
    for _ in range(n):
        s = rng.integers(4, vocab, size=int(rng.integers(lo, hi + 1)))
        t = rng.integers(4, vocab, size=int(rng.integers(lo, hi + 1)))
        pairs.append(SentencePair(tuple(int(x) for x in s), tuple(int(x) for x in t)))
    return pairs


def random_batch(seed, n=2, vocab=12, lo=1, hi=7):
    return make_batch(random_pairs(np.random.default_rng(seed), n, vocab, lo, hi))


@pytest.fixture
def toy_batch():
    return make_batch([SentencePair((4, 5, 6, 7), (8, 9, 10)), SentencePair((11, 5), (6, 7, 4, 9, 10))])


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
