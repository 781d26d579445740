import numpy as np
import pytest

from momentum_arch.attention import AttnHyper
from momentum_arch.autodiff import Tensor
from momentum_arch.harness.verify import transformer_gradient_error
from momentum_arch.optim import OptimizerState, optimizer_step
from momentum_arch.tasks import copy_transformer_batch
from momentum_arch.transformer import VARIANTS, CopyTransformer, sinusoidal_encoding


def small(variant, **hyper):
    return CopyTransformer(variant, vocab=5, d_model=8, n_heads=2, n_layers=2, d_ff=8, max_len=10,
                           hyper=AttnHyper(**hyper) if hyper else AttnHyper())


def tensors(params):
    return {k: Tensor(v) for k, v in params.items()}


def test_positional_encoding():
    pe = sinusoidal_encoding(6, 4)
    assert pe.shape == (6, 4)
    assert np.array_equal(pe[0], [0.0, 1.0, 0.0, 1.0])
    assert np.allclose(pe[:, 0] ** 2 + pe[:, 1] ** 2, 1.0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_match_finite_differences(variant):
    assert max(transformer_gradient_error(variant, s) for s in range(10)) <= 1e-5


@pytest.mark.parametrize("variant", VARIANTS)
def test_causality(variant):
    model = small(variant, beta=0.5, beta_conn=0.3)
    p = tensors(model.init_params(np.random.default_rng(0)))
    rng = np.random.default_rng(1)
    a = rng.integers(0, 5, size=(1, 8))
    b = a.copy()
    b[0, 5:] = (b[0, 5:] + 1) % 5
    la, lb = model.logits(p, a).data, model.logits(p, b).data
    assert np.allclose(la[0, :5], lb[0, :5], atol=1e-13)
    assert not np.allclose(la[0, 5:], lb[0, 5:])


def test_momentum_reduces_to_linear():
    params = small("linear").init_params(np.random.default_rng(2))
    tokens = np.random.default_rng(3).integers(0, 5, size=(2, 7))
    lin = small("linear").logits(tensors(params), tokens).data
    mom = small("momentum", beta=0.0, gamma=1.0, beta_conn=0.0).logits(tensors(params), tokens).data
    assert np.max(np.abs(lin - mom)) <= 1e-12


def test_single_layer_connection_is_inert():
    """With one layer the previous input is X itself, so β̃ has no effect."""
    kw = dict(vocab=5, d_model=8, n_heads=2, n_layers=1, d_ff=8, max_len=10)
    a = CopyTransformer("momentum", hyper=AttnHyper(beta=0.4, beta_conn=0.0), **kw)
    b = CopyTransformer("momentum", hyper=AttnHyper(beta=0.4, beta_conn=0.9), **kw)
    params = a.init_params(np.random.default_rng(4))
    tokens = np.random.default_rng(5).integers(0, 5, size=(2, 6))
    assert np.array_equal(a.logits(tensors(params), tokens).data, b.logits(tensors(params), tokens).data)


def test_baselines_ignore_momentum_hyper():
    m = CopyTransformer("linear", hyper=AttnHyper(beta=0.7, beta_conn=0.5))
    assert m.hyper.beta == 0.0 and m.beta_conn == 0.0


def test_adaptive_beta_updates():
    model = small("adaptive", beta=0.3, beta_conn=0.5)
    params = model.init_params(np.random.default_rng(6))
    tokens, targets, mask = copy_transformer_batch(np.random.default_rng(7), 4, 10, 4)
    _, g, _ = model.gradients(params, tokens, targets, mask)
    assert model.update_adaptive(g) == 0.5  # no previous gradient yet
    assert model.update_adaptive(g) == pytest.approx(1 - 1e-3)
    assert model.update_adaptive({k: 2 * v for k, v in g.items()}) == pytest.approx(0.0, abs=1e-15)
    assert small("momentum").update_adaptive(g) == 0.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_a_few_steps_reduce_loss(variant):
    model = small(variant, beta=0.5, beta_conn=0.3)
    params = model.init_params(np.random.default_rng(8))
    batch = copy_transformer_batch(np.random.default_rng(9), 8, 10, 4)
    opt = OptimizerState("adam", lr=0.01)
    first, g, acc = model.gradients(params, *batch)
    assert 0.0 <= acc <= 1.0
    for _ in range(20):
        params = optimizer_step(opt, params, g)
        loss, g, _ = model.gradients(params, *batch)
    assert loss < first


def test_errors():
    with pytest.raises(ValueError):
        CopyTransformer("performer")
    with pytest.raises(ValueError):
        CopyTransformer("linear", d_model=10, n_heads=3)
    model = small("linear")
    p = tensors(model.init_params(np.random.default_rng(0)))
    with pytest.raises(ValueError):
        model.logits(p, np.zeros((1, 11), dtype=int))
