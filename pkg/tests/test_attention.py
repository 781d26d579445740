import numpy as np
import pytest
from hypothesis import given, strategies as st

from momentum_arch import attention as att
from momentum_arch import oracles
from momentum_arch.autodiff import DomainError, ShapeError, Tensor
from momentum_arch.harness.verify import (
    attention_gradient_error, brute_force_error, outer_product_excess, positivity_violations, reduction_chain_error,
    rnn_unrolled_error,
)

PHI = "elu_plus_one"


def qkv(seed, n, d=3, dv=2):
    r = np.random.default_rng(seed)
    return r.normal(size=(n, d)), r.normal(size=(n, d)), r.normal(size=(n, dv))


def steps(Q, K, V, hyper=None, momentum=True):
    state = att.AttnState.initial(Q.shape[1], V.shape[1])
    out = []
    for q, k, v in zip(Q, K, V):
        if momentum:
            y, state = att.causal_momentum_step(state, q, k, v, PHI, hyper)
        else:
            y, state = att.causal_linear_step(state, q, k, v, PHI)
        out.append(y)
    return np.array(out)


# --- softmax --------------------------------------------------------------------------


def test_softmax_single_token_and_identical_keys(rng):
    Q, K, V = qkv(0, 1)
    assert np.array_equal(att.softmax_attention(Q, K, V), V)
    Q, _, V = qkv(1, 5)
    K = np.tile(rng.normal(size=(1, 3)), (5, 1))
    assert np.allclose(att.softmax_attention(Q, K, V), V.mean(axis=0), atol=1e-14)


def test_softmax_rows_sum_to_one():
    Q, K, _ = qkv(2, 5)
    for causal in (False, True):
        w = att.attention_weights(Q, K, causal)
        assert np.max(np.abs(w.sum(axis=1) - 1)) <= 1e-12
    assert np.all(np.triu(att.attention_weights(Q, K, True), 1) == 0)


def test_softmax_brute_force():
    Q, K, V = qkv(3, 7)
    for causal in (False, True):
        assert np.allclose(att.softmax_attention(Q, K, V, causal), oracles.brute_softmax_attention(Q, K, V, causal),
                           atol=1e-12)


# --- linear ---------------------------------------------------------------------------


def test_linear_single_token():
    Q, K, V = qkv(4, 1)
    assert np.allclose(att.linear_attention(Q, K, V), V, rtol=0, atol=1e-15)


def test_linear_brute_force():
    Q, K, V = qkv(5, 6)
    fq, fk = att.feature_map(PHI, Q), att.feature_map(PHI, K)
    assert np.max(np.abs(att.linear_attention(Q, K, V) - oracles.brute_linear_attention(fq, fk, V))) <= 1e-12


def test_linear_equal_keys_ignore_query(rng):
    Q, _, V = qkv(6, 5)
    K = np.tile(rng.normal(size=(1, 3)), (5, 1))
    out = att.linear_attention(Q, K, V)
    assert np.allclose(out, V.mean(axis=0), atol=1e-14)


def test_causal_linear_steps(rng):
    Q, K, V = qkv(7, 9)
    out = steps(Q, K, V, momentum=False)
    assert np.allclose(out[0], V[0], atol=1e-15)
    fq, fk = att.feature_map(PHI, Q), att.feature_map(PHI, K)
    assert np.max(np.abs(out - oracles.brute_linear_attention(fq, fk, V, causal=True))) <= 1e-12
    assert np.max(np.abs(out - att.causal_linear_attention(Q, K, V))) <= 1e-13
    c = rng.normal(size=2)
    const = steps(Q, K, np.tile(c, (9, 1)), momentum=False)
    assert np.allclose(const, c, atol=1e-14)


# --- momentum -------------------------------------------------------------------------


def test_momentum_weights_formula():
    w = att.momentum_weights(3, 0.5)
    assert np.allclose(w[2], [1.75, 1.5, 1.0], atol=1e-15)
    assert np.all(np.triu(w, 1) == 0)
    assert np.array_equal(att.momentum_weights(4, 0.0), np.tril(np.ones((4, 4))))
    assert np.allclose(att.momentum_weights(3, 0.5, 2.0), 2.0 * w)


@pytest.mark.parametrize("beta,gamma", [(0.0, 1.0), (0.4, 1.0), (0.9, 0.5)])
def test_momentum_first_output_is_scaled_value(beta, gamma):
    Q, K, V = qkv(8, 4)
    out = steps(Q, K, V, att.AttnHyper(gamma, beta))
    assert np.allclose(out[0], gamma * V[0], atol=1e-14)


def test_momentum_beta_zero_gamma_one_is_linear():
    Q, K, V = qkv(9, 12)
    assert np.max(np.abs(steps(Q, K, V, att.AttnHyper(1.0, 0.0)) - steps(Q, K, V, momentum=False))) <= 1e-14


def test_unrolled_beta_zero_scales_linear():
    Q, K, V = qkv(10, 10)
    out = att.causal_momentum_unrolled(Q, K, V, PHI, att.AttnHyper(0.5, 0.0))
    assert np.max(np.abs(out - 0.5 * att.causal_linear_attention(Q, K, V))) <= 1e-14


def test_unrolled_matches_steps_and_brute_force():
    Q, K, V = qkv(11, 8)
    hyper = att.AttnHyper(0.8, 0.6)
    unrolled = att.causal_momentum_unrolled(Q, K, V, PHI, hyper)
    assert np.max(np.abs(unrolled - steps(Q, K, V, hyper))) <= 1e-10
    assert np.max(np.abs(unrolled - att.causal_momentum_attention(Q, K, V, PHI, hyper))) <= 1e-10
    fq, fk = att.feature_map(PHI, Q), att.feature_map(PHI, K)
    assert np.max(np.abs(unrolled - oracles.brute_momentum_attention(fq, fk, V, 0.6, 0.8))) <= 1e-12


def test_noncausal_momentum():
    Q, K, V = qkv(12, 6)
    hyper = att.AttnHyper(0.7, 0.5)
    fq, fk = att.feature_map(PHI, Q), att.feature_map(PHI, K)
    out = att.momentum_attention_noncausal(Q, K, V, PHI, hyper)
    assert np.max(np.abs(out - oracles.brute_momentum_attention(fq, fk, V, 0.5, 0.7, causal=False))) <= 1e-12
    zero = att.momentum_attention_noncausal(Q, K, V, PHI, att.AttnHyper(0.7, 0.0))
    assert np.max(np.abs(zero - 0.7 * att.linear_attention(Q, K, V))) <= 1e-14
    q1, k1, v1 = qkv(13, 1)
    assert np.allclose(att.momentum_attention_noncausal(q1, k1, v1, PHI, hyper), 0.7 * v1, atol=1e-15)


def test_long_sequence_stays_finite():
    Q, K, V = qkv(14, 2000)
    out = att.causal_momentum_unrolled(Q, K, V, PHI, att.AttnHyper(1.0, 0.999))
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(out - att.causal_momentum_attention(Q, K, V, PHI, att.AttnHyper(1.0, 0.999)))) <= 1e-8


# --- properties -----------------------------------------------------------------------


def test_rnn_unrolled_equivalence_20_seeds():
    assert max(rnn_unrolled_error(s) for s in range(20)) <= 1e-10


def test_reduction_chain_and_brute_force():
    assert max(reduction_chain_error(s) for s in range(20)) <= 1e-12
    assert max(brute_force_error(s) for s in range(20)) <= 1e-12


def test_single_token_softmax_equals_linear():
    for seed in range(10):
        Q, K, V = qkv(seed, 1)
        assert np.max(np.abs(att.softmax_attention(Q, K, V) - att.linear_attention(Q, K, V))) <= 1e-14


def test_outer_product_count_is_linear():
    assert max(outer_product_excess(s) for s in range(10)) == 0
    Q, K, V = qkv(15, 17)
    for fn in (att.causal_linear_attention, att.causal_momentum_unrolled):
        c = att.OuterProductCounter()
        fn(Q, K, V, PHI, counter=c)
        assert c.count == 17
    c = att.OuterProductCounter()
    state = att.AttnState.initial(3, 2)
    for q, k, v in zip(Q, K, V):
        _, state = att.causal_momentum_step(state, q, k, v, PHI, counter=c)
    assert c.count == 17


def test_normaliser_positive():
    assert max(positivity_violations(s) for s in range(10)) == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.sampled_from([0.0, 0.3, 0.9]),
       st.sampled_from([0.5, 1.0]))
def test_equivalence_hypothesis(seed, n, beta, gamma):
    Q, K, V = qkv(seed, n)
    hyper = att.AttnHyper(gamma, beta)
    assert np.max(np.abs(att.causal_momentum_unrolled(Q, K, V, PHI, hyper) - steps(Q, K, V, hyper))) <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_tape_form_matches_scan(seed, n):
    Q, K, V = qkv(seed, n)
    hyper = att.AttnHyper(0.9, 0.4)
    tape = att.attention_tape(Tensor(Q), Tensor(K), Tensor(V), "momentum", hyper).data
    assert np.max(np.abs(tape - att.causal_momentum_attention(Q, K, V, PHI, hyper))) <= 1e-12
    lin = att.attention_tape(Tensor(Q), Tensor(K), Tensor(V), "linear").data
    assert np.max(np.abs(lin - att.causal_linear_attention(Q, K, V))) <= 1e-12


@pytest.mark.parametrize("kind", att.ATTENTION_KINDS)
@pytest.mark.parametrize("causal", [True, False])
def test_attention_gradients(kind, causal):
    assert max(attention_gradient_error(kind, s, causal) for s in range(10)) <= 1e-5


# --- connection and adaptive momentum ---------------------------------------------------


def test_momentum_connection(rng):
    X, Vh, P = (rng.normal(size=(3, 4)) for _ in range(3))
    assert np.array_equal(att.momentum_connection(X, Vh, P, 0.0, np.tanh), np.tanh(Vh + X))
    assert np.array_equal(att.momentum_connection(X, Vh, X, 0.7), Vh + X)
    out = att.momentum_connection(X, np.zeros_like(X), P, 0.3)
    assert np.allclose(out, X + 0.3 * (X - P), atol=1e-15)
    with pytest.raises(ShapeError):
        att.momentum_connection(X, Vh[:2], P, 0.3)


def test_adaptive_momentum_examples(rng):
    g = rng.normal(size=10)
    assert att.adaptive_momentum(g, g) == pytest.approx(1 - 1e-3)
    assert att.adaptive_momentum(2 * g, g) == pytest.approx(0.0, abs=1e-15)
    assert att.adaptive_momentum(g, np.zeros(10), previous=0.25) == 0.25


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 0.5))
def test_adaptive_momentum_clamped(seed, delta):
    r = np.random.default_rng(seed)
    beta = att.adaptive_momentum(r.normal(size=6), r.normal(size=6), delta)
    assert 0.0 <= beta <= 1.0 - delta


# --- errors ---------------------------------------------------------------------------


def test_errors():
    Q, K, V = qkv(16, 4)
    with pytest.raises(ShapeError):
        att.linear_attention(Q, K[:3], V)
    with pytest.raises(DomainError):
        att.momentum_weights(4, 1.0)
    with pytest.raises(ValueError):
        att.AttnHyper(beta=1.5)
    with pytest.raises(ValueError):
        att.AttnHyper(gamma=0.0)
    with pytest.raises(ValueError):
        att.feature_map("relu6", Q)
    with pytest.raises(DomainError):
        att.causal_linear_attention(Q, -np.abs(K) - 1, V, "clip_positive")
