import numpy as np
import pytest
from conftest import random_batch, tiny_model
from hypothesis import given, settings
from hypothesis import strategies as st

from covnat import autodiff as ad
from covnat.autodiff import Tensor, no_grad
from covnat.errors import ContractError
from covnat.losses import mle_loss
from covnat.model import check_coverage_state, coverage_attention, coverage_vector


def prefix_sum_loop(A):
    """Independent reference: explicit running sums, clamped at one."""
    T, n = A.shape
    C = np.zeros((T, n))
    for i in range(n):
        running = 0.0
        for t in range(T):
            C[t, i] = min(running, 1.0)
            running = running + A[t, i]
    return C


def test_coverage_vector_hand_case():
    A = np.array([[0.5, 0.5], [0.6, 0.4], [0.7, 0.3]])
    C = coverage_vector(Tensor(A)).data
    np.testing.assert_array_equal(C, prefix_sum_loop(A))
    np.testing.assert_allclose(C, [[0, 0], [0.5, 0.5], [1.0, 0.9]], atol=1e-15)


def test_coverage_uniform_saturates():
    A = np.full((12, 2), 0.5)
    C = coverage_vector(Tensor(A)).data
    assert np.all(C[2:] == 1.0) and np.all(C[0] == 0.0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_coverage_vector_matches_loop_bitwise(seed):
    rng = np.random.default_rng(seed)
    A = rng.dirichlet(np.ones(int(rng.integers(1, 8))), size=int(rng.integers(1, 12)))
    C = coverage_vector(Tensor(A)).data
    assert np.array_equal(C, prefix_sum_loop(A))


def test_coverage_attention_lambda_zero_is_plain_softmax():
    rng = np.random.default_rng(0)
    h, e = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 5, 4))
    mask = np.ones((1, 5), dtype=bool)
    C = Tensor(rng.random((1, 3, 5)))
    got = coverage_attention(Tensor(h), Tensor(e), C, Tensor([0.0]), mask).data
    want = ad.softmax_lastdim(Tensor(h @ e.transpose(0, 2, 1) / 2.0)).data
    np.testing.assert_array_equal(got, want)


def test_full_coverage_equals_lambda_zero():
    rng = np.random.default_rng(1)
    h, e = Tensor(rng.normal(size=(1, 3, 4))), Tensor(rng.normal(size=(1, 5, 4)))
    mask = np.ones((1, 5), dtype=bool)
    ones = coverage_attention(h, e, Tensor(np.ones((1, 3, 5))), Tensor([2.5]), mask).data
    zero = coverage_attention(h, e, Tensor(np.zeros((1, 3, 5))), Tensor([0.0]), mask).data
    np.testing.assert_array_equal(ones, zero)


def _enc(model, batch):
    with no_grad():
        return model.encode(batch.src, batch.src_mask)


def test_encoder_shape_and_row_purity():
    model = tiny_model()
    src = np.array([[4, 5, 6, 7, 8, 9, 10], [4, 5, 6, 7, 8, 9, 10]])
    enc = model.encode(src, np.ones_like(src, dtype=bool))
    assert enc.states.shape == (2, 7, 8)
    assert np.array_equal(enc.states.data[0], enc.states.data[1])


def test_encoder_rejects_all_pad():
    model = tiny_model()
    with pytest.raises(ContractError):
        model.encode(np.array([[0, 0]]), np.array([[False, False]]))


@pytest.mark.parametrize("offset,n,expected", [(0, 5, 5), (3, 5, 8), (-10, 4, 1)])
def test_predict_length(offset, n, expected):
    model = tiny_model(radius=10)
    logits = np.zeros((1, 21))
    logits[0, 10 + offset] = 1.0
    assert model.predict_length(logits, [n]).tolist() == [expected]


def test_decode_hidden_shapes():
    model = tiny_model()
    src = np.arange(4, 11)[None, :]
    enc = model.encode(src, np.ones_like(src, dtype=bool))
    h0, a0, mask = model.decode_hidden([6], enc)
    assert h0.shape == (1, 6, 8) and a0.shape == (1, 6, 7)
    np.testing.assert_allclose(a0.data.sum(-1), 1.0, atol=1e-12)
    again = model.decode_hidden([6], enc)
    assert np.array_equal(h0.data, again[0].data) and np.array_equal(a0.data, again[1].data)


def test_single_source_token_attention():
    model = tiny_model()
    enc = model.encode(np.array([[5]]), np.array([[True]]))
    _, a0, _ = model.decode_hidden([4], enc)
    assert np.all(a0.data == 1.0)


def test_decode_length_above_max():
    model = tiny_model()
    enc = model.encode(np.array([[5]]), np.array([[True]]))
    with pytest.raises(ContractError):
        model.decode_hidden([17], enc)


def test_run_tcir_rejects_zero_iterations():
    model = tiny_model()
    batch = random_batch(0)
    enc = model.encode(batch.src, batch.src_mask)
    h0, a0, mask = model.decode_hidden(batch.tgt_lengths, enc)
    with pytest.raises(ContractError):
        model.run_tcir(h0, a0, enc, mask, 0)


def test_tcir_prefix_consistency():
    model = tiny_model()
    batch = random_batch(1, n=3)
    enc = _enc(model, batch)
    h0, a0, mask = model.decode_hidden(batch.tgt_lengths, enc)
    _, three = model.run_tcir(h0, a0, enc, mask, 3, record=True)
    _, five = model.run_tcir(h0, a0, enc, mask, 5, record=True)
    assert [s.k for s in five] == [1, 2, 3, 4, 5]
    for a, b in zip(three, five):
        assert np.array_equal(a.H, b.H) and np.array_equal(a.A, b.A) and np.array_equal(a.C, b.C)


def test_k1_is_seeded_by_a0():
    model = tiny_model()
    batch = random_batch(2)
    enc = _enc(model, batch)
    h0, a0, mask = model.decode_hidden(batch.tgt_lengths, enc)
    _, states = model.run_tcir(h0, a0, enc, mask, 1, record=True)
    assert np.array_equal(states[0].C, coverage_vector(a0).data)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_recorded_states_satisfy_invariants(seed):
    model = tiny_model(seed=seed % 7)
    model.top.lam.data[:] = np.random.default_rng(seed).normal(scale=3.0)
    batch = random_batch(seed, n=3)
    out = model.forward(batch.src, batch.src_mask, batch.tgt_lengths, k=4, record=True)
    for st_ in out.states:
        check_coverage_state(st_.A, st_.C, batch.src_mask)


def test_debug_mode_checks_every_iteration(monkeypatch):
    model = tiny_model()
    model.debug = True
    calls = []
    import covnat.model as m
    original = m.check_coverage_state
    monkeypatch.setattr(m, "check_coverage_state", lambda *a: calls.append(1) or original(*a))
    batch = random_batch(0)
    model.forward(batch.src, batch.src_mask, batch.tgt_lengths, k=3)
    assert len(calls) == 3


def test_lambda_zero_makes_attention_independent_of_coverage():
    model = tiny_model()
    model.top.lam.data[:] = 0.0
    batch = random_batch(3, n=2)
    enc = _enc(model, batch)
    h0, a0, mask = model.decode_hidden(batch.tgt_lengths, enc)
    base = model.top(h0, coverage_vector(a0), enc.states, enc.mask, mask)
    rng = np.random.default_rng(0)
    perturbed = model.top(h0, Tensor(rng.random(a0.shape)), enc.states, enc.mask, mask)
    assert np.array_equal(base[1].data, perturbed[1].data)
    assert np.array_equal(base[0].data, perturbed[0].data)


def test_logits_shape_and_distribution(toy_batch):
    model = tiny_model()
    out = model.forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths)
    assert out.logits.shape == (2, 5, 12)
    probs = ad.softmax_lastdim(out.logits).data
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-12)


def test_output_projection_is_tied(toy_batch):
    model = tiny_model()
    names = model.named_parameters()
    assert not any("out" in n or "proj.weight" in n and "length" not in n for n in names)
    out = model.forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths)
    ad.backward(mle_loss(out.logits, toy_batch.tgt, toy_batch.tgt_mask))
    assert model.embed.grad is not None and np.abs(model.embed.grad).sum() > 0


def test_forward_mle_gradients(toy_batch):
    model = tiny_model()
    params = model.parameters()

    def f():
        out = model.forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths)
        return mle_loss(out.logits, toy_batch.tgt, toy_batch.tgt_mask)

    names = [p.name for p in params]
    assert "decoder.coverage.lambda" in names and "sca.Ws" in names
    assert ad.finite_diff_check(f, params) <= 1e-4


def test_pad_positions_get_zero_gradient(toy_batch):
    model = tiny_model()
    enc = model.encode(toy_batch.src, toy_batch.src_mask)
    logits, mask, _ = model.decode(enc, toy_batch.tgt_lengths)
    ad.backward(mle_loss(logits, toy_batch.tgt, toy_batch.tgt_mask))
    pad = ~toy_batch.src_mask
    assert pad.any()
    assert np.all(enc.states.grad[pad] == 0.0)


def test_forward_is_deterministic(toy_batch):
    a = tiny_model(seed=4).forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths)
    b = tiny_model(seed=4).forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths)
    assert np.array_equal(a.logits.data, b.logits.data)


def test_lambda_receives_gradient():
    zero = 0
    for seed in range(20):
        model = tiny_model(seed=seed)
        batch = random_batch(seed, n=2)
        out = model.forward(batch.src, batch.src_mask, batch.tgt_lengths)
        ad.backward(mle_loss(out.logits, batch.tgt, batch.tgt_mask))
        zero += int(model.top.lam.grad[0] == 0.0)
    assert zero <= 1


def test_baseline_switch_replaces_top_layer(toy_batch):
    model = tiny_model(use_tcir=False)
    names = model.named_parameters()
    assert "decoder.coverage.lambda" not in names
    out = model.forward(toy_batch.src, toy_batch.src_mask, toy_batch.tgt_lengths, record=True)
    assert out.states == [] and out.logits.shape == (2, 5, 12)


@pytest.mark.parametrize("residual", ["stream", "attended"])
def test_coverage_layer_residual_placement(residual):
    model = tiny_model(seed=4, coverage_residual=residual)
    top = model.top
    batch = random_batch(8, n=2)
    with no_grad():
        enc = _enc(model, batch)
        h0, a0, mask = model.decode_hidden(batch.tgt_lengths, enc)
        cov = coverage_vector(a0)
        h, attn = top(h0, cov, enc.states, enc.mask, mask)
        a, _ = top.self_attn(h0, h0, mask)
        h_hat = top.ln1(h0 + a)
        z = ad.matmul(attn, enc.states)
        skip = h_hat if residual == "stream" else z
        expected = top.ln2(skip + top.ffn(z))
    np.testing.assert_array_equal(h.data, expected.data)


def test_unknown_residual_rejected():
    with pytest.raises(ContractError):
        tiny_model(coverage_residual="both")
