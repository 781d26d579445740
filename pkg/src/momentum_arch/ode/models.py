"""NODE, HBNODE and GHBNODE dynamics with adjoint-method gradients.

Forward passes integrate the first-order systems

    NODE    h' = f(h, t)
    HBNODE  h' = m,        m' = -gamma m + f(h, t)
    GHBNODE h' = act(m),   m' = -gamma m + f(h, t) - xi h

Backward passes integrate the state jointly with its adjoint from T down to
t0, so the forward trajectory is never stored. Parameter gradients
accumulate as integrals of vector-Jacobian products of ``f`` supplied by
the tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, Tensor
from .solvers import SolverStats, integrate

FAMILIES = ("node", "hbnode", "ghbnode")
MOMENTUM_ACTIVATIONS = ("identity", "tanh", "hardtanh")
HARDTANH_BOUND = 5.0


class OdeFunc:
    """Tape-differentiable vector field ``fn(h, t, params) -> dh/dt``.

    ``nfe`` increments once per evaluation of ``fn``, whether plain or
    inside a vector-Jacobian product.
    """

    def __init__(self, fn: Callable[[Tensor, float, Mapping[str, Tensor]], Tensor],
                 params: Mapping[str, np.ndarray]):
        self.fn = fn
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.nfe = 0

    def __call__(self, h: np.ndarray, t: float) -> np.ndarray:
        self.nfe += 1
        p = {k: Tensor(v) for k, v in self.params.items()}
        return self.fn(Tensor(h), t, p).data

    def vjp(self, h: np.ndarray, t: float, cotangent: np.ndarray):
        """Return (f, a·df/dh, {name: a·df/dtheta}) at (h, t) for cotangent a."""
        self.nfe += 1
        tape = Tape()
        p = {k: tape.param(k, v) for k, v in self.params.items()}
        hl = tape.leaf(h)
        out = self.fn(hl, t, p)
        g = tape.grad(out, cotangent)
        return out.data, g.of(hl), dict(g)


def mlp_field(sizes: Sequence[int], rng: np.random.Generator, activation: str = "tanh",
              init_scale: float = 1.0) -> OdeFunc:
    """Dense network h -> dh/dt with ``len(sizes) - 1`` layers."""
    act = ad.ACTIVATIONS[activation]
    n_layers = len(sizes) - 1
    params = {}
    for i in range(n_layers):
        bound = init_scale / np.sqrt(sizes[i])
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i]))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=(sizes[i + 1],))

    def fn(h, t, p):
        z = h
        for i in range(n_layers):
            z = ad.add(ad.matmul(z, ad.transpose(p[f"W{i}"])), p[f"b{i}"])
            if i < n_layers - 1:
                z = act(z)
        return z

    return OdeFunc(fn, params)


def linear_field(A: np.ndarray) -> OdeFunc:
    """f(h) = A h, with A the single trainable parameter."""
    def fn(h, t, p):
        return ad.matmul(h, ad.transpose(p["A"]))

    return OdeFunc(fn, {"A": np.asarray(A, dtype=np.float64)})


def zero_field(n: int) -> OdeFunc:
    """f = 0 with a dummy parameter that never reaches the output."""
    def fn(h, t, p):
        return ad.scale(ad.add(ad.scale(h, 0.0), ad.scale(ad.sum_(p["c"]), 0.0)), 0.0)

    return OdeFunc(fn, {"c": np.zeros(n)})


@dataclass
class OdeState:
    h: np.ndarray
    m: np.ndarray | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.m is not None:
            self.m = np.asarray(self.m, dtype=np.float64)
            if self.m.shape != self.h.shape:
                raise ValueError(f"h {self.h.shape} and m {self.m.shape} differ in shape")


@dataclass
class DampingParams:
    omega: float = -3.0
    eps_cap: float = 1.0
    chi: float = 0.0

    @property
    def gamma(self) -> float:
        return self.eps_cap * float(ad.sigmoid_np(np.asarray(self.omega)))

    @property
    def xi(self) -> float:
        return float(ad.softplus_np(np.asarray(self.chi)))

    def dgamma_domega(self) -> float:
        s = float(ad.sigmoid_np(np.asarray(self.omega)))
        return self.eps_cap * s * (1.0 - s)

    def dxi_dchi(self) -> float:
        return float(ad.sigmoid_np(np.asarray(self.chi)))


def momentum_act(name: str, m: np.ndarray) -> np.ndarray:
    if name == "identity":
        return m
    if name == "tanh":
        return np.tanh(m)
    if name == "hardtanh":
        return np.clip(m, -HARDTANH_BOUND, HARDTANH_BOUND)
    raise ValueError(f"momentum activation must be one of {MOMENTUM_ACTIVATIONS}")


def momentum_act_grad(name: str, m: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(m)
    if name == "tanh":
        return 1.0 - np.tanh(m) ** 2
    if name == "hardtanh":
        return (np.abs(m) < HARDTANH_BOUND).astype(np.float64)
    raise ValueError(f"momentum activation must be one of {MOMENTUM_ACTIVATIONS}")


def node_rhs(f: OdeFunc, h: np.ndarray, t: float) -> np.ndarray:
    return f(h, t)


def hbnode_rhs(f: OdeFunc, state: OdeState, t: float, gamma: float) -> OdeState:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return OdeState(state.m, -gamma * state.m + f(state.h, t))


def ghbnode_rhs(f: OdeFunc, state: OdeState, t: float, gamma: float, xi: float,
                act: str = "tanh") -> OdeState:
    if gamma < 0 or xi < 0:
        raise ValueError("gamma and xi must be nonnegative")
    return OdeState(momentum_act(act, state.m), -gamma * state.m + f(state.h, t) - xi * state.h)


# --------------------------------------------------------------------------
# flat packing


class _Layout:
    def __init__(self, shapes: Sequence[tuple[int, ...]]):
        self.shapes = list(shapes)
        self.sizes = [int(np.prod(s)) for s in shapes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def pack(self, parts) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1) for p in parts])

    def unpack(self, y: np.ndarray) -> list[np.ndarray]:
        return [y[a:b].reshape(s) for a, b, s in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]


@dataclass
class SolveOptions:
    method: str = "dopri45"
    rtol: float = 1e-7
    atol: float = 1e-7
    n_steps: int = 100


@dataclass
class OdeModel:
    """One of the three ODE families around a vector field ``f``."""

    family: str
    f: OdeFunc
    damping: DampingParams = field(default_factory=DampingParams)
    act: str = "identity"
    gamma_fixed: float | None = None
    xi_fixed: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.act not in MOMENTUM_ACTIVATIONS:
            raise ValueError(f"momentum activation must be one of {MOMENTUM_ACTIVATIONS}")

    @property
    def gamma(self) -> float:
        return self.damping.gamma if self.gamma_fixed is None else self.gamma_fixed

    @property
    def xi(self) -> float:
        if self.family != "ghbnode":
            return 0.0
        return self.damping.xi if self.xi_fixed is None else self.xi_fixed

    def rhs(self, t: float, state: OdeState) -> OdeState:
        if self.family == "node":
            return OdeState(node_rhs(self.f, state.h, t))
        if self.family == "hbnode":
            return hbnode_rhs(self.f, state, t, self.gamma)
        return ghbnode_rhs(self.f, state, t, self.gamma, self.xi, self.act)

    def forward(self, state0: OdeState, t0: float, t1: float,
                opts: SolveOptions | None = None) -> tuple[OdeState, SolverStats]:
        opts = opts or SolveOptions()
        if self.family == "node":
            y, st = integrate(lambda t, h: self.f(h, t), state0.h, t0, t1,
                              opts.method, opts.rtol, opts.atol, opts.n_steps)
            return OdeState(y), st
        m0 = np.zeros_like(state0.h) if state0.m is None else state0.m
        lay = _Layout([state0.h.shape, state0.h.shape])

        def F(t, y):
            h, m = lay.unpack(y)
            d = self.rhs(t, OdeState(h, m))
            return lay.pack([d.h, d.m])

        y, st = integrate(F, lay.pack([state0.h, m0]), t0, t1, opts.method, opts.rtol, opts.atol, opts.n_steps)
        h, m = lay.unpack(y)
        return OdeState(h, m), st

    def adjoint(
        self,
        final: OdeState,
        dL_dhT: np.ndarray,
        t0: float,
        t1: float,
        opts: SolveOptions | None = None,
        dL_dmT: np.ndarray | None = None,
        checkpoints: Sequence[float] = (),
        adjoint_clip: float | None = None,
    ) -> "AdjointResult":
        return _adjoint(self, final, dL_dhT, dL_dmT, t0, t1, opts or SolveOptions(),
                        checkpoints, adjoint_clip)


@dataclass
class AdjointResult:
    grads: dict[str, np.ndarray]
    dL_dh0: np.ndarray
    dL_dm0: np.ndarray | None
    stats: SolverStats
    trace: list[tuple[float, float]]
    initial: OdeState


def _adjoint(model: OdeModel, final: OdeState, dL_dhT, dL_dmT, t0, t1, opts, checkpoints, clip):
    f = model.f
    hT = final.h
    shape = hT.shape
    names = list(f.params)
    pshapes = [f.params[k].shape for k in names]
    second = model.family != "node"
    gamma, xi, act = model.gamma, model.xi, model.act

    if second:
        mT = np.zeros(shape) if final.m is None else final.m
        aT_m = np.zeros(shape) if dL_dmT is None else np.asarray(dL_dmT, dtype=np.float64)
        lay = _Layout([shape] * 4 + pshapes + [(), ()])
        y = lay.pack([hT, mT, dL_dhT, aT_m] + [np.zeros(s) for s in pshapes] + [0.0, 0.0])
    else:
        lay = _Layout([shape] * 2 + pshapes)
        y = lay.pack([hT, dL_dhT] + [np.zeros(s) for s in pshapes])
    n_state = 4 if second else 2

    def F_node(t, y):
        parts = lay.unpack(y)
        h, a = parts[0], parts[1]
        fval, a_dfdh, a_dfdp = f.vjp(h, t, a)
        return lay.pack([fval, -a_dfdh] + [-a_dfdp[k] for k in names])

    def F_mom(t, y):
        parts = lay.unpack(y)
        h, m, ah, am = parts[:4]
        fval, am_dfdh, am_dfdp = f.vjp(h, t, am)
        if model.family == "hbnode":
            dh = m
            dm = -gamma * m + fval
            dah = -am_dfdh
            dam = -ah + gamma * am
        else:
            dh = momentum_act(act, m)
            dm = -gamma * m + fval - xi * h
            dah = -am_dfdh + xi * am
            dam = -ah * momentum_act_grad(act, m) + gamma * am
        return lay.pack([dh, dm, dah, dam] + [-am_dfdp[k] for k in names]
                        + [np.sum(am * m), np.sum(am * h)])

    F = F_mom if second else F_node
    stops = sorted({float(c) for c in checkpoints if t0 < c < t1}, reverse=True) + [float(t0)]

    def adjoint_norm(y):
        parts = lay.unpack(y)
        return float(np.sqrt(sum(np.sum(p * p) for p in parts[n_state // 2:n_state])))

    def clip_adjoint(y):
        if clip is None:
            return y
        nrm = adjoint_norm(y)
        if nrm <= clip:
            return y
        y = y.copy()
        a, b = lay.offsets[n_state // 2], lay.offsets[n_state]
        y[a:b] *= clip / nrm
        return y

    y = clip_adjoint(y)
    trace = [(float(t1), adjoint_norm(y))]
    stats = SolverStats(rtol=opts.rtol, atol=opts.atol)
    t = float(t1)
    for stop in stops:
        y, st = integrate(F, y, t, stop, opts.method, opts.rtol, opts.atol, opts.n_steps)
        stats = stats.merge(st)
        trace.append((stop, adjoint_norm(y)))
        if stop != stops[-1]:
            y = clip_adjoint(y)
        t = stop
    stats.backward_nfe, stats.forward_nfe = stats.forward_nfe, 0

    parts = lay.unpack(y)
    grads = {k: parts[n_state + i] for i, k in enumerate(names)}
    if second:
        g_gamma, g_xi = float(parts[-2]), float(parts[-1])
        grads["gamma"] = np.asarray(g_gamma)
        grads["omega"] = np.asarray(g_gamma * model.damping.dgamma_domega())
        if model.family == "ghbnode":
            grads["xi"] = np.asarray(g_xi)
            grads["chi"] = np.asarray(g_xi * model.damping.dxi_dchi())
        return AdjointResult(grads, parts[2], parts[3], stats, trace, OdeState(parts[0], parts[1]))
    return AdjointResult(grads, parts[1], None, stats, trace, OdeState(parts[0]))


# --------------------------------------------------------------------------
# named entry points


def adjoint_backward_node(f: OdeFunc, hT: np.ndarray, dL_dhT: np.ndarray, t0: float, t1: float,
                          opts: SolveOptions | None = None, **kw) -> AdjointResult:
    return OdeModel("node", f).adjoint(OdeState(hT), dL_dhT, t0, t1, opts, **kw)


def adjoint_backward_hbnode(f: OdeFunc, final: OdeState, dL_dhT: np.ndarray, gamma: float,
                            t0: float, t1: float, opts: SolveOptions | None = None, **kw) -> AdjointResult:
    return OdeModel("hbnode", f, gamma_fixed=gamma).adjoint(final, dL_dhT, t0, t1, opts, **kw)


def adjoint_backward_ghbnode(f: OdeFunc, final: OdeState, dL_dhT: np.ndarray, gamma: float, xi: float,
                             act: str, t0: float, t1: float, opts: SolveOptions | None = None,
                             **kw) -> AdjointResult:
    model = OdeModel("ghbnode", f, act=act, gamma_fixed=gamma, xi_fixed=xi)
    return model.adjoint(final, dL_dhT, t0, t1, opts, **kw)
