import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from momentum_arch import autodiff as ad
from momentum_arch import oracles
from momentum_arch.autodiff import DomainError, NonFiniteError, ShapeError, Tape, Tensor
from momentum_arch.harness.verify import op_gradient_error
from momentum_arch.linalg import eigenpairs, eigenvalues
from momentum_arch.optim import OptimizerState, clip_grad_norm, global_norm, optimizer_step

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


# --- ops -------------------------------------------------------------------


def test_matmul_identity(rng):
    X = rng.normal(size=(2, 3))
    assert np.array_equal(ad.matmul(np.eye(2), X).data, X)


def test_sigmoid_zero():
    assert ad.sigmoid(0.0).item() == 0.5


def test_hadamard_by_hand():
    assert np.array_equal(ad.hadamard([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).data, [4.0, 10.0, 18.0])


def test_elu_plus_one_definition():
    x = np.array([-2.0, -0.5, 0.0, 1.5])
    assert np.allclose(ad.elu_plus_one(x).data, [np.exp(-2.0), np.exp(-0.5), 1.0, 2.5])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.add(np.ones((2, 3)), np.ones((4,)))


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.div(np.ones(2), np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.sqrt(np.array([-1.0]))
    with pytest.raises(DomainError):
        ad.log(np.array([0.0]))


def test_exp_overflow_signals():
    with pytest.raises(NonFiniteError):
        ad.exp(np.array([1000.0]))


def test_unknown_op():
    with pytest.raises(ValueError, match="unknown op"):
        ad.record_op("frobnicate", [np.ones(2)])


@pytest.mark.parametrize("kind", ad.op_kinds())
def test_every_op_matches_finite_differences(kind):
    assert max(op_gradient_error(kind, seed) for seed in range(20)) <= 1e-6


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_tanh_vjp_property(x):
    tape = Tape()
    p = tape.param("x", x)
    g = ad.backward(tape, ad.sum_(ad.tanh(p)))
    assert np.allclose(g["x"], 1.0 - np.tanh(x) ** 2, atol=1e-14)


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=finite),
       hnp.arrays(np.float64, st.integers(1, 8), elements=finite))
def test_outer_matmul_shapes(a, b):
    out = ad.matmul(a.reshape(-1, 1), b.reshape(1, -1))
    assert out.shape == (a.size, b.size)
    assert np.allclose(out.data, np.outer(a, b))


# --- tape ------------------------------------------------------------------


def test_backward_square_sum():
    tape = Tape()
    x = tape.param("x", [1.0, 2.0])
    g = ad.backward(tape, ad.sum_(ad.hadamard(x, x)))
    assert np.array_equal(g["x"], [2.0, 4.0])
    assert not g.disconnected


def test_backward_constant_root_is_disconnected():
    tape = Tape()
    tape.param("w", np.ones((2, 2)))
    g = ad.backward(tape, Tensor(3.0))
    assert g.disconnected
    assert np.array_equal(g["w"], np.zeros((2, 2)))


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.param("x", np.ones(3))
    with pytest.raises(ShapeError):
        ad.backward(tape, ad.tanh(x))


def test_one_gradient_per_parameter_with_shape(rng):
    tape = Tape()
    W1 = tape.param("W1", rng.normal(size=(4, 3)))
    W2 = tape.param("W2", rng.normal(size=(1, 4)))
    unused = tape.param("unused", rng.normal(size=(2,)))
    x = rng.normal(size=(5, 3))
    L = ad.mean(ad.square(ad.matmul(ad.tanh(ad.matmul(x, W1.T)), W2.T)))
    g = ad.backward(tape, L)
    assert set(g) == {"W1", "W2", "unused"}
    assert g["W1"].shape == (4, 3) and g["W2"].shape == (1, 4)
    assert np.array_equal(g["unused"], np.zeros(2)) and unused.shape == (2,)


def test_tape_topological_order(rng):
    tape = Tape()
    x = tape.param("x", rng.normal(size=3))
    ad.sum_(ad.exp(ad.tanh(x)))
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs)


def test_two_layer_tanh_net_fd(rng):
    params = {"W1": rng.normal(size=(5, 3)), "b1": rng.normal(size=5), "W2": rng.normal(size=(2, 5))}
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 2))

    def loss(p):
        hid = ad.tanh(ad.add(ad.matmul(x, ad.transpose(p["W1"])), p["b1"]))
        return ad.mse_loss(ad.matmul(hid, ad.transpose(p["W2"])), y)

    tape = Tape()
    g = ad.backward(tape, loss({k: tape.param(k, v) for k, v in params.items()}))
    fd = ad.finite_difference_gradient(lambda q: loss({k: Tensor(v) for k, v in q.items()}).item(), params)
    for k in params:
        assert ad.relative_error(g[k], fd[k]) <= 1e-6


def test_hidden_state_gradient_readable(rng):
    tape = Tape()
    x = tape.leaf(rng.normal(size=3))
    w = tape.param("w", rng.normal(size=3))
    y = ad.tanh(x)
    g = ad.backward(tape, ad.sum_(ad.hadamard(y, w)))
    assert np.allclose(g.of(y), w.data)


# --- finite differences ----------------------------------------------------


def test_fd_square():
    g = ad.finite_difference_gradient(lambda p: float(p["x"] ** 2), {"x": np.array(3.0)})
    assert abs(g["x"] - 6.0) <= 1e-9


def test_fd_sin():
    g = ad.finite_difference_gradient(lambda p: float(np.sin(p["x"])), {"x": np.array(0.0)})
    assert abs(g["x"] - 1.0) <= 1e-9


def test_fd_constant_and_errors():
    g = ad.finite_difference_gradient(lambda p: 4.0, {"x": np.ones(3)})
    assert np.array_equal(g["x"], np.zeros(3))
    with pytest.raises(ValueError):
        ad.finite_difference_gradient(lambda p: 0.0, {"x": np.ones(1)}, h=0.0)
    with pytest.raises(NonFiniteError):
        ad.finite_difference_gradient(lambda p: np.inf, {"x": np.ones(1)})


def test_fd_does_not_mutate_input():
    x = np.array([1.0, 2.0])
    ad.finite_difference_gradient(lambda p: float(np.sum(p["x"] ** 3)), {"x": x})
    assert np.array_equal(x, [1.0, 2.0])


# --- optimizers ------------------------------------------------------------


def test_heavy_ball_beta_zero_example():
    out = optimizer_step(OptimizerState("heavy-ball", lr=0.1, beta=0.0), {"x": np.array(1.0)},
                         {"x": np.array(2.0)})
    assert out["x"] == pytest.approx(0.8, abs=1e-15)


def test_heavy_ball_unroll():
    st_ = OptimizerState("heavy-ball", lr=1.0, beta=0.9)
    p = {"x": np.array(0.0)}
    p1 = optimizer_step(st_, p, {"x": np.array(1.0)})
    p2 = optimizer_step(st_, p1, {"x": np.array(1.0)})
    assert p1["x"] == -1.0
    assert p2["x"] - p1["x"] == pytest.approx(-1.9, abs=1e-15)


def test_adam_converges_on_square():
    st_ = OptimizerState("adam", lr=0.1)
    p = {"x": np.array(1.0)}
    for _ in range(100):
        p = optimizer_step(st_, p, {"x": 2.0 * p["x"]})
    assert abs(p["x"]) < 0.05


def test_optimizer_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        optimizer_step(OptimizerState("sgd", lr=0.1), {"x": np.ones(2)}, {"x": np.ones(3)})


def test_optimizer_rejects_bad_settings():
    with pytest.raises(ValueError):
        OptimizerState("lbfgs")
    with pytest.raises(ValueError):
        OptimizerState("sgd", lr=0.0)
    with pytest.raises(ValueError):
        OptimizerState("heavy-ball", beta=1.0)


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.0))
def test_heavy_ball_zero_is_sgd_bitwise(seed, lr):
    r = np.random.default_rng(seed)
    params = {"a": r.normal(size=(3, 2))}
    hb, sgd = OptimizerState("heavy-ball", lr=lr, beta=0.0), OptimizerState("sgd", lr=lr)
    pa = pb = params
    for _ in range(3):
        g = {"a": r.normal(size=(3, 2))}
        pa, pb = optimizer_step(hb, pa, g), optimizer_step(sgd, pb, g)
        assert np.array_equal(pa["a"], pb["a"])


def test_clip_examples(rng):
    g = {"a": np.array([6.0, 8.0])}
    out = clip_grad_norm(g, 1.0)
    assert global_norm(out) == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(out["a"] / np.linalg.norm(out["a"]), [0.6, 0.8])
    small = {"a": np.array([0.3, 0.4])}
    assert clip_grad_norm(small, 1.0)["a"] is small["a"]
    zeros = {"a": np.zeros(3)}
    assert np.array_equal(clip_grad_norm(zeros, 1.0)["a"], zeros["a"])
    with pytest.raises(ValueError):
        clip_grad_norm(g, 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-2, 1e2))
def test_clip_idempotent(seed, scale, max_norm):
    r = np.random.default_rng(seed)
    g = {"a": r.normal(size=(4,)) * scale, "b": r.normal(size=(2, 2)) * scale}
    once = clip_grad_norm(g, max_norm)
    twice = clip_grad_norm(once, max_norm)
    for k in g:
        assert np.array_equal(once[k], twice[k])
    assert global_norm(once) <= max_norm * (1 + 1e-12)


# --- eigenvalues -----------------------------------------------------------


def test_eigen_diag():
    assert oracles.multiset_distance(eigenvalues(np.diag([1.0, 2.0, 3.0])), [1, 2, 3]) == 0.0


def test_eigen_rotation():
    assert oracles.multiset_distance(eigenvalues([[0.0, 1.0], [-1.0, 0.0]]), [1j, -1j]) <= 1e-15


def test_eigen_non_square():
    with pytest.raises(ValueError):
        eigenvalues(np.ones((2, 3)))
    with pytest.raises(ValueError):
        eigenvalues(np.array([[np.nan]]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_symmetric_spectrum_matches_charpoly_oracle(seed, n):
    A = np.random.default_rng(seed).normal(size=(n, n))
    S = A + A.T
    ev = eigenvalues(S)
    assert np.max(np.abs(ev.imag)) <= 1e-12
    assert oracles.multiset_distance(ev, oracles.eigenvalues_charpoly(S)) <= 1e-6


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_eigenpair_residual(seed, n):
    M = np.random.default_rng(seed).normal(size=(n, n))
    w, V = eigenpairs(M)
    for k in range(n):
        assert np.linalg.norm(M @ V[:, k] - w[k] * V[:, k]) <= 1e-8 * np.linalg.norm(M, 2)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_similarity_invariance(seed, n):
    r = np.random.default_rng(seed)
    M = r.normal(size=(n, n))
    P = np.eye(n) + 0.3 * r.normal(size=(n, n)) / np.sqrt(n)
    assert oracles.multiset_distance(eigenvalues(M), eigenvalues(P @ M @ np.linalg.inv(P))) <= 1e-6


def test_charpoly_oracle_on_known_polynomial():
    # companion matrix of (x-1)(x-2)(x-3)
    C = np.array([[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.allclose(oracles.characteristic_polynomial(C), [1, -6, 11, -6])
    assert oracles.multiset_distance(oracles.eigenvalues_charpoly(C), [1, 2, 3]) <= 1e-10
