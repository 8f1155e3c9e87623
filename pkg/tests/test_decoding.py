import numpy as np
import pytest
from conftest import random_pairs, tiny_model

from covnat.decoding import (argmax_rows, coverage_dump, greedy_parallel_decode, lpd_candidate_lengths,
                             lpd_decode, measure_latency, parse_coverage_dump)
from covnat.errors import ConfigurationError


def sources(seed=0, n=6):
    return [p.src for p in random_pairs(np.random.default_rng(seed), n)]


class ScriptedTeacher:
    """Prefers, per source sentence, one given candidate length."""

    def __init__(self, prefer):
        self.prefer = prefer

    def score(self, srcs, cands):
        return np.array([-abs(len(c) - self.prefer[tuple(s)]) for s, c in zip(srcs, cands)], dtype=float)


def test_argmax_rows_known_logits():
    logits = np.array([[[0.1, 3.0, 0.2], [5.0, 5.0, 1.0], [0.0, 0.0, 9.0]]])
    ids, probs = argmax_rows(logits)
    assert ids.tolist() == [[1, 0, 2]]
    assert probs[0, 1] == pytest.approx(np.exp(5) / (2 * np.exp(5) + np.exp(1)))


def test_greedy_is_deterministic():
    model = tiny_model()
    a = greedy_parallel_decode(model, sources())
    b = greedy_parallel_decode(model, sources())
    assert all(x.same_output(y) for x, y in zip(a, b))


def test_greedy_respects_given_lengths():
    out = greedy_parallel_decode(tiny_model(), sources(n=3), lengths=[2, 5, 1])
    assert [r.length for r in out] == [2, 5, 1]
    assert all(len(r.raw) == r.length and r.removed == r.length - len(r.tokens) for r in out)


def test_batching_does_not_change_output():
    model = tiny_model()
    whole = greedy_parallel_decode(model, sources(n=7), batch_size=64)
    split = greedy_parallel_decode(model, sources(n=7), batch_size=2)
    assert [r.raw for r in whole] == [r.raw for r in split]


def test_lpd_candidates():
    assert lpd_candidate_lengths(6, 4, 64) == list(range(2, 11))
    assert lpd_candidate_lengths(2, 4, 64) == [1, 2, 3, 4, 5, 6]


def test_lpd_radius_zero_is_greedy():
    model = tiny_model()
    lpd = lpd_decode(model, sources(), teacher=None, radius=0)
    greedy = greedy_parallel_decode(model, sources())
    assert all(a.same_output(b) for a, b in zip(lpd, greedy))


def test_lpd_needs_teacher():
    with pytest.raises(ConfigurationError):
        lpd_decode(tiny_model(), sources(), teacher=None, radius=4)


def test_lpd_picks_best_scored_length():
    model = tiny_model()
    src = sources(n=4)
    predicted = [r.length for r in greedy_parallel_decode(model, src)]
    wanted = [max(1, t + off) for t, off in zip(predicted, (-3, 2, 4, -1))]
    out = lpd_decode(model, src, teacher=ScriptedTeacher(dict(zip(map(tuple, src), wanted))), radius=4)
    assert [r.length for r in out] == wanted
    fixed = greedy_parallel_decode(model, src, lengths=wanted)
    assert [r.raw for r in out] == [r.raw for r in fixed]


def test_lpd_ties_go_to_predicted_length():
    model = tiny_model()
    src = sources(n=3)
    flat = type("Flat", (), {"score": lambda self, s, c: np.zeros(len(c))})()
    out = lpd_decode(model, src, teacher=flat, radius=2)
    predicted = greedy_parallel_decode(model, src)
    assert [r.length for r in out] == [r.length for r in predicted]


def test_latency_is_mean_over_sentences():
    calls = []
    ms = measure_latency(lambda batch: calls.append(len(batch)), sources(n=5))
    assert calls == [1] * 5 and ms >= 0.0


def test_coverage_dump_contract():
    model = tiny_model()
    src = sources(n=1)[0]
    text = coverage_dump(model, src, k_dec=3, length=4)
    assert text.splitlines()[0] == "iter,t,i,A,C"
    parsed = parse_coverage_dump(text)
    assert sorted(parsed) == [1, 2, 3]
    res = greedy_parallel_decode(model, [src], 3, lengths=[4], record=True)[0]
    for st in res.states:
        A, C = parsed[st.k]
        assert np.all(C[0] == 0.0)
        assert np.abs(A.sum(-1) - 1.0).max() <= 1e-6 * A.shape[1]
        assert np.abs(A - st.A).max() <= 5e-7 and np.abs(C - st.C).max() <= 5e-7


def test_coverage_dump_needs_coverage_layer():
    with pytest.raises(ConfigurationError):
        coverage_dump(tiny_model(use_tcir=False), sources(n=1)[0])
