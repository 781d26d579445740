import numpy as np
import pytest
from hypothesis import given, strategies as st

from momentum_arch.harness.verify import (
    adjoint_gradient_error, decay_error, ghbnode_reduction_error, nfe_accounting_error, nfe_monotonicity_violations,
    scalar_adjoint_error,
)
from momentum_arch.ode import (
    DampingParams, OdeModel, OdeSolverError, OdeState, SolveOptions, adjoint_backward_ghbnode,
    adjoint_backward_hbnode, adjoint_backward_node, adjoint_norm_trace, eigen_pairing_check, ghbnode_rhs,
    hbnode_rhs, integrate, linear_field, mlp_field, node_rhs, zero_field,
)
from momentum_arch.ode.classifier import PointCloudClassifier
from momentum_arch.optim import OptimizerState
from momentum_arch.tasks import gen_point_cloud

TIGHT = SolveOptions("dopri45", 1e-10, 1e-10)


# --- solver --------------------------------------------------------------------


def test_exponential_decay():
    y, st_ = integrate(lambda t, y: -y, np.ones(1), 0.0, 1.0, rtol=1e-9, atol=1e-9)
    assert abs(y[0] - np.exp(-1.0)) <= 1e-7
    assert st_.forward_nfe >= 6 * st_.accepted_steps


def test_zero_field_is_exact():
    y0 = np.array([0.3, -1.2])
    y, st_ = integrate(lambda t, y: np.zeros_like(y), y0, 0.0, 5.0)
    assert np.array_equal(y, y0)
    assert st_.accepted_steps <= 2


def test_cosine_quadrature():
    y, _ = integrate(lambda t, y: np.array([np.cos(t)]), np.zeros(1), 0.0, np.pi)
    assert abs(y[0]) <= 1e-6


def test_backward_in_time():
    y, _ = integrate(lambda t, y: -y, np.array([np.exp(-1.0)]), 1.0, 0.0, rtol=1e-10, atol=1e-10)
    assert abs(y[0] - 1.0) <= 1e-8


@pytest.mark.parametrize("method,n,tol", [("rk4", 50, 1e-8), ("euler", 2000, 1e-3)])
def test_fixed_step_methods(method, n, tol):
    y, st_ = integrate(lambda t, y: -y, np.ones(1), 0.0, 1.0, method=method, n_steps=n)
    assert abs(y[0] - np.exp(-1.0)) <= tol
    assert st_.forward_nfe == n * (4 if method == "rk4" else 1)


def test_solver_errors():
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, np.ones(1), 0.0, 0.0)
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, np.ones(1), 0.0, 1.0, rtol=0.0)
    with pytest.raises(OdeSolverError) as info:
        integrate(lambda t, y: y * y, np.ones(1), 0.0, 2.0)  # blows up at t = 1
    assert 0.9 < info.value.t < 1.01


def test_tolerance_properties():
    assert decay_error() <= 1.0
    assert nfe_monotonicity_violations() == 0


# --- right-hand sides ------------------------------------------------------------


def test_node_rhs_linear_and_counter(rng):
    A = rng.normal(size=(3, 3))
    f = linear_field(A)
    h = rng.normal(size=3)
    for k in range(1, 4):
        assert np.allclose(node_rhs(f, h, 0.0), A @ h, atol=1e-15)
        assert f.nfe == k
    assert np.array_equal(node_rhs(zero_field(3), h, 0.0), np.zeros(3))


def test_free_particle():
    model = OdeModel("hbnode", zero_field(2), gamma_fixed=0.0)
    m0 = np.array([0.5, -1.0])
    final, _ = model.forward(OdeState(np.zeros(2), m0), 0.0, 2.0)
    assert np.allclose(final.h, 2.0 * m0, atol=1e-12)
    assert np.allclose(final.m, m0, atol=1e-15)


def test_damped_momentum_decays():
    model = OdeModel("hbnode", zero_field(1), gamma_fixed=0.7)
    final, _ = model.forward(OdeState(np.zeros(1), np.ones(1)), 0.0, 1.5, TIGHT)
    assert abs(final.m[0] - np.exp(-0.7 * 1.5)) <= 1e-8


def test_harmonic_oscillator_hbnode():
    model = OdeModel("hbnode", linear_field(-np.eye(1)), gamma_fixed=0.0)
    for T in (0.5, 1.0, 3.0):
        final, _ = model.forward(OdeState(np.ones(1), np.zeros(1)), 0.0, T)
        assert abs(final.h[0] - np.cos(T)) <= 1e-6


def test_ghbnode_restoring_force_oscillates():
    model = OdeModel("ghbnode", zero_field(1), act="identity", gamma_fixed=0.0, xi_fixed=1.0)
    final, _ = model.forward(OdeState(np.ones(1), np.zeros(1)), 0.0, 2.0, TIGHT)
    assert abs(final.h[0] - np.cos(2.0)) <= 1e-8
    assert abs(final.m[0] + np.sin(2.0)) <= 1e-8


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_ghbnode_identity_matches_hbnode_rhs(seed, gamma):
    r = np.random.default_rng(seed)
    f = mlp_field([3, 4, 3], r)
    s = OdeState(r.normal(size=3), r.normal(size=3))
    a = hbnode_rhs(f, s, 0.3, gamma)
    b = ghbnode_rhs(f, s, 0.3, gamma, 0.0, "identity")
    assert np.array_equal(a.h, b.h) and np.array_equal(a.m, b.m)


@given(st.integers(0, 2**32 - 1))
def test_ghbnode_tanh_velocity_bound(seed):
    r = np.random.default_rng(seed)
    s = OdeState(r.normal(size=4), r.normal(size=4) * 100)
    d = ghbnode_rhs(mlp_field([4, 4], r), s, 0.0, 0.5, 0.3, "tanh")
    assert np.max(np.abs(d.h)) <= 1.0


@given(st.floats(-30, 30), st.floats(0.1, 5.0), st.floats(-30, 30))
def test_damping_constraints(omega, cap, chi):
    d = DampingParams(omega, cap, chi)
    assert 0.0 <= d.gamma <= cap
    assert d.xi >= 0.0
    if abs(omega) < 30 and abs(chi) < 30:
        assert 0.0 < d.gamma < cap and d.xi > 0.0


def test_default_damping_init():
    assert DampingParams().gamma == pytest.approx(1.0 / (1.0 + np.exp(3.0)), abs=1e-15)


# --- adjoints ------------------------------------------------------------------------


@pytest.mark.parametrize("family,act", [("node", "identity"), ("hbnode", "identity"), ("ghbnode", "tanh"),
                                        ("ghbnode", "hardtanh")])
def test_adjoint_matches_finite_differences(family, act):
    assert max(adjoint_gradient_error(family, s, act) for s in range(10)) <= 1e-4


def test_ghbnode_reduces_to_hbnode():
    assert max(ghbnode_reduction_error(s) for s in range(5)) <= 1e-9


def test_scalar_analytic_adjoint():
    assert max(scalar_adjoint_error(s) for s in range(5)) <= 1e-5


def test_nfe_accounting():
    assert nfe_accounting_error(0) == 0


def test_linear_adjoint_fd(rng):
    A = rng.normal(size=(2, 2)) * 0.5
    h0 = rng.normal(size=(1, 2))
    target = rng.normal(size=(1, 2))

    def loss(A_):
        y, _ = integrate(lambda t, h: h @ A_.T, h0, 0.0, 1.0, rtol=1e-11, atol=1e-11)
        return 0.5 * float(np.sum((y - target) ** 2))

    f = linear_field(A)
    hT, _ = integrate(lambda t, h: f(h, t), h0, 0.0, 1.0, rtol=1e-11, atol=1e-11)
    res = adjoint_backward_node(f, hT, hT - target, 0.0, 1.0, TIGHT)
    eps = 1e-6
    fd = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        Ap, Am = A.copy(), A.copy()
        Ap[idx] += eps
        Am[idx] -= eps
        fd[idx] = (loss(Ap) - loss(Am)) / (2 * eps)
    assert np.linalg.norm(res.grads["A"] - fd) <= 1e-4 * np.linalg.norm(fd)


def test_loss_independent_of_state_gives_zero(rng):
    f = mlp_field([2, 3, 2], rng)
    res = adjoint_backward_node(f, rng.normal(size=(1, 2)), np.zeros((1, 2)), 0.0, 1.0)
    assert all(np.all(g == 0) for g in res.grads.values())


def test_hbnode_zero_field_adjoint(rng):
    g = rng.normal(size=(1, 3))
    res = adjoint_backward_hbnode(zero_field(3), OdeState(np.zeros((1, 3)), np.zeros((1, 3))), g, 0.0, 0.0, 1.0)
    assert np.all(res.grads["c"] == 0)
    assert np.allclose(res.dL_dh0, g, atol=1e-15)


def test_hbnode_adjoint_second_order_residual(rng):
    """With gamma = 0 and linear f, a_h(t) = dL/dh(t) solves a'' = a A."""
    A = rng.normal(size=(2, 2)) * 0.8
    f = linear_field(A)
    opts = SolveOptions("dopri45", 1e-13, 1e-13)
    model = OdeModel("hbnode", f, gamma_fixed=0.0)
    final, _ = model.forward(OdeState(rng.normal(size=(1, 2)), np.zeros((1, 2))), 0.0, 1.0, opts)
    g = rng.normal(size=(1, 2))

    def a_h(t0):
        return model.adjoint(final, g, t0, 1.0, opts).dL_dh0

    tau, d = 0.4, 0.02
    vals = [a_h(tau + k * d) for k in (-2, -1, 0, 1, 2)]
    second = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * d * d)
    assert np.max(np.abs(second - vals[2] @ A)) <= 1e-6


def test_ghbnode_saturated_momentum_fd(rng):
    """Large m makes tanh' tiny; the adjoint still matches differences."""
    f = mlp_field([2, 3, 2], rng)
    model = OdeModel("ghbnode", f, act="tanh", gamma_fixed=0.1, xi_fixed=0.2)
    h0 = rng.normal(size=(1, 2))
    m0 = np.full((1, 2), 6.0)
    opts = SolveOptions("dopri45", 1e-10, 1e-10)

    def loss(h):
        fin, _ = model.forward(OdeState(h, m0), 0.0, 1.0, opts)
        return 0.5 * float(np.sum(fin.h ** 2)), fin

    _, fin = loss(h0)
    res = adjoint_backward_ghbnode(f, fin, fin.h, 0.1, 0.2, "tanh", 0.0, 1.0, opts)
    fd = np.zeros_like(h0)
    for idx in np.ndindex(h0.shape):
        hp, hm = h0.copy(), h0.copy()
        hp[idx] += 1e-6
        hm[idx] -= 1e-6
        fd[idx] = (loss(hp)[0] - loss(hm)[0]) / 2e-6
    assert np.linalg.norm(res.dL_dh0 - fd) <= 1e-4 * np.linalg.norm(fd)


def test_adjoint_trace_terminal_value(rng):
    f = mlp_field([2, 3, 2], rng)
    model = OdeModel("hbnode", f)
    final, _ = model.forward(OdeState(rng.normal(size=(1, 2))), 0.0, 1.0)
    g = rng.normal(size=(1, 2))
    res = model.adjoint(final, g, 0.0, 1.0, checkpoints=[0.25, 0.5, 0.75])
    trace = adjoint_norm_trace(res)
    assert [t for t, _ in trace] == [1.0, 0.75, 0.5, 0.25, 0.0]
    assert trace[0][1] == pytest.approx(np.linalg.norm(g), rel=1e-15)


def test_contractive_node_adjoint_decays_and_hbnode_keeps_more():
    f = linear_field(-3.0 * np.eye(2))
    g = np.array([[1.0, -0.5]])
    cps = [0.2, 0.4, 0.6, 0.8]
    node = OdeModel("node", f)
    fin, _ = node.forward(OdeState(np.ones((1, 2))), 0.0, 1.0)
    tn = adjoint_norm_trace(node.adjoint(fin, g, 0.0, 1.0, checkpoints=cps))
    assert all(b[1] < a[1] for a, b in zip(tn[:-1], tn[1:]))
    hb = OdeModel("hbnode", f, gamma_fixed=0.1)
    fin2, _ = hb.forward(OdeState(np.ones((1, 2))), 0.0, 1.0)
    th = adjoint_norm_trace(hb.adjoint(fin2, g, 0.0, 1.0, checkpoints=cps))
    assert th[-1][1] > tn[-1][1]


def test_adjoint_clip_applies_at_terminal(rng):
    f = mlp_field([2, 3, 2], rng)
    model = OdeModel("hbnode", f)
    final, _ = model.forward(OdeState(rng.normal(size=(1, 2))), 0.0, 1.0)
    res = model.adjoint(final, np.full((1, 2), 1e3), 0.0, 1.0, adjoint_clip=1.0)
    assert res.trace[0][1] == pytest.approx(1.0, rel=1e-12)


# --- eigenvalue pairing -----------------------------------------------------------------


def test_pairing_rotation_block():
    rep = eigen_pairing_check(-np.eye(3), np.eye(3), 0.0)
    assert np.allclose(np.sort(np.abs(rep.eigenvalues.imag)), 1.0, atol=1e-12)
    assert rep.max_pair_residual <= 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2), st.floats(0.1, 2.0))
def test_pairing_scalar_vieta(j, f, gamma, dt):
    rep = eigen_pairing_check(np.array([[f]]), np.array([[j]]), gamma, dt)
    assert abs(sum(rep.eigenvalues) + dt * gamma) <= 1e-12
    assert rep.max_pair_residual <= 1e-10


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 4]), st.sampled_from([0.0, 0.5, 1.0]))
def test_pairing_random_blocks(seed, n, gamma):
    r = np.random.default_rng(seed)
    rep = eigen_pairing_check(r.normal(size=(n, n)), r.normal(size=(n, n)), gamma, float(r.uniform(0.1, 2)))
    assert len(rep.pairs) == n
    assert rep.max_pair_residual <= 1e-8


def test_pairing_rejects_bad_shapes():
    with pytest.raises(ValueError):
        eigen_pairing_check(np.ones((2, 3)), np.ones((2, 3)), 0.1)


# --- classifier ---------------------------------------------------------------------------


def test_classifier_gradients_fd():
    cloud = gen_point_cloud(0)
    x, y = cloud.points[:6], cloud.labels[:6]
    clf = PointCloudClassifier("hbnode", seed=0, opts=SolveOptions("dopri45", 1e-9, 1e-9), adjoint_clip=None)
    grads, _ = clf.gradients(x, y)
    base = {k: v.copy() for k, v in clf.params.items()}

    def loss(q):
        clf.set_params(q)
        try:
            return clf.loss(x, y)
        finally:
            clf.set_params(base)

    for name in ("Wh", "omega", "W2", "b0"):
        fd = np.zeros_like(base[name])
        for idx in np.ndindex(base[name].shape):
            p, m = dict(base), dict(base)
            p[name] = base[name].copy()
            m[name] = base[name].copy()
            p[name][idx] += 1e-5
            m[name][idx] -= 1e-5
            fd[idx] = (loss(p) - loss(m)) / 2e-5
        assert np.linalg.norm(grads[name] - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8), name


def test_classifier_trains_and_counts_nfe():
    cloud = gen_point_cloud(0)
    clf = PointCloudClassifier("node", seed=0)
    opt = OptimizerState("adam", lr=0.01)
    first = clf.train_step(cloud.points[:50], cloud.labels[:50], opt)
    for _ in range(5):
        last = clf.train_step(cloud.points[:50], cloud.labels[:50], opt)
    assert last.loss < first.loss
    assert first.forward_nfe > 0 and first.backward_nfe > 0
    assert clf.n_params() == 522 + 6
