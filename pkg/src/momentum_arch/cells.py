"""Recurrent, LSTM and momentum-augmented cells.

All cells use the absorbed-bias convention: an input ``x`` of width ``d`` is
extended to ``[x, 1]`` and every input matrix has ``d + 1`` columns. Hidden
states may be vectors ``(h,)`` or batches ``(B, h)``; matrices act on the
last axis (``h @ U.T``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tape, Tensor

SCHEDULES = ("constant", "nag", "restart")
PARAMETERIZATIONS = ("v-form", "u-form")


@dataclass
class RnnParams:
    U: Tensor | np.ndarray
    W: Tensor | np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        U, W = ad.as_tensor(self.U), ad.as_tensor(self.W)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ShapeError(f"U must be square, got {U.shape}")
        if W.ndim != 2 or W.shape[0] != U.shape[0]:
            raise ShapeError(f"W must have {U.shape[0]} rows, got {W.shape}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"activation must be tanh or sigmoid, got {self.activation!r}")
        self.U, self.W = U, W

    @property
    def hidden(self) -> int:
        return self.U.shape[0]


@dataclass
class MomentumHyper:
    mu: float = 0.6
    s: float = 1.0
    schedule: str = "constant"
    restart: int | None = None
    parameterization: str = "v-form"
    beta: float = 0.9  # second-moment decay of the Adam/RMSProp cells
    eps: float = 1e-8

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.schedule == "constant" and not 0.0 <= self.mu < 1.0:
            raise ValueError("constant momentum needs 0 <= mu < 1")
        if self.schedule == "restart" and (self.restart is None or self.restart < 1):
            raise ValueError("scheduled restart needs a positive restart period")
        if not self.s > 0:
            raise ValueError("step size s must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")

    def mu_at(self, t: int) -> float:
        if t < 1:
            raise ValueError(f"timestep must be >= 1, got {t}")
        if self.schedule == "constant":
            return self.mu
        if self.schedule == "nag":
            return (t - 1) / (t + 2)
        k = t % self.restart
        return k / (k + 3)


@dataclass
class CellState:
    h: Tensor
    v: Tensor | None = None
    m: Tensor | None = None
    c: Tensor | None = None
    gates_v: dict = field(default_factory=dict)


@dataclass
class LstmParams:
    U: dict
    W: dict
    forget_gate: bool = False

    def __post_init__(self):
        gates = self.gates
        self.U = {g: ad.as_tensor(self.U[g]) for g in gates}
        self.W = {g: ad.as_tensor(self.W[g]) for g in gates}
        n = self.U["i"].shape[0]
        for g in gates:
            if self.U[g].shape != (n, n):
                raise ShapeError(f"U[{g}] must be {n}x{n}, got {self.U[g].shape}")
            if self.W[g].shape[0] != n:
                raise ShapeError(f"W[{g}] must have {n} rows")

    @property
    def gates(self) -> tuple[str, ...]:
        return ("i", "c", "o", "f") if self.forget_gate else ("i", "c", "o")

    @property
    def hidden(self) -> int:
        return self.U["i"].shape[0]


def augment(x) -> Tensor:
    """Append the constant-1 bias coordinate to the last axis."""
    if isinstance(x, Tensor) and x.tape is not None:
        ones = np.ones(x.shape[:-1] + (1,))
        return ad.concat([x, ones], axis=-1)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return Tensor(np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1))


def _lin(x: Tensor, M: Tensor) -> Tensor:
    return ad.matmul(x, ad.transpose(M))


def _check_input(W: Tensor, xt: Tensor):
    if xt.shape[-1] != W.shape[1]:
        raise ShapeError(f"input width {xt.shape[-1] - 1} does not match W with {W.shape[1]} columns")


def recurrent_step(params: RnnParams, h_prev, x_t) -> Tensor:
    """h_t = act(U h_{t-1} + W [x_t, 1])."""
    xt = augment(x_t)
    _check_input(params.W, xt)
    act = ad.ACTIVATIONS[params.activation]
    return act(_lin(ad.as_tensor(h_prev), params.U) + _lin(xt, params.W))


def momentum_step(params: RnnParams, hyper: MomentumHyper, state: CellState, x_t, t: int) -> CellState:
    """One step of the momentum cell.

    v-form: v_t = mu v_{t-1} + s W x_t,  h_t = act(U h_{t-1} + v_t)
    u-form: v_t = mu v_{t-1} + s W x_t,  h_t = act(U h_{t-1} + U v_t)
    (in u-form ``W`` plays the free matrix standing in for U^{-1} W).
    """
    mu = hyper.mu_at(t)
    xt = augment(x_t)
    _check_input(params.W, xt)
    drive = _lin(xt, params.W)
    if hyper.s != 1.0:
        drive = ad.scale(drive, hyper.s)
    v = drive if state.v is None or mu == 0.0 else ad.scale(state.v, mu) + drive
    act = ad.ACTIVATIONS[params.activation]
    push = v if hyper.parameterization == "v-form" else _lin(v, params.U)
    h = act(_lin(state.h, params.U) + push)
    return replace(state, h=h, v=v)


def inverse_activation(name: str, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if name == "tanh":
        if np.any(np.abs(h) >= 1.0):
            raise DomainError("inverse tanh needs |h| < 1")
        return np.arctanh(h)
    if np.any((h <= 0.0) | (h >= 1.0)):
        raise DomainError("inverse sigmoid needs 0 < h < 1")
    return np.log(h) - np.log1p(-h)


def momentum_step_single_eq(params: RnnParams, hyper: MomentumHyper, h_prev, h_prev2, x_t, t: int) -> np.ndarray:
    """h_t = act(U (h_{t-1} - mu h_{t-2}) + mu act^{-1}(h_{t-1}) + s W x_t).

    Second-order form of the v-form momentum cell with the momentum state
    eliminated. Plain numpy; it serves as an independent check.
    """
    mu = hyper.mu_at(t)
    U = params.U.data
    W = params.W.data
    h1 = np.asarray(h_prev.data if isinstance(h_prev, Tensor) else h_prev, dtype=np.float64)
    h2 = np.asarray(h_prev2.data if isinstance(h_prev2, Tensor) else h_prev2, dtype=np.float64)
    xt = augment(x_t).data
    if xt.shape[-1] != W.shape[1]:
        raise ShapeError("input width does not match W")
    pre = (h1 - mu * h2) @ U.T + hyper.s * (xt @ W.T)
    if mu != 0.0:
        pre = pre + mu * inverse_activation(params.activation, h1)
    if params.activation == "tanh":
        return np.tanh(pre)
    return ad.sigmoid_np(pre)


def lstm_step(params: LstmParams, h_prev, c_prev, x_t) -> tuple[Tensor, Tensor]:
    xt = augment(x_t)
    return _lstm_gates(params, ad.as_tensor(h_prev), ad.as_tensor(c_prev),
                       {g: _lin(xt, params.W[g]) for g in params.gates})


def _lstm_gates(params: LstmParams, h_prev: Tensor, c_prev: Tensor, drives: Mapping[str, Tensor]):
    pre = {g: _lin(h_prev, params.U[g]) + drives[g] for g in params.gates}
    i = ad.sigmoid(pre["i"])
    c_tilde = ad.tanh(pre["c"])
    o = ad.sigmoid(pre["o"])
    keep = ad.hadamard(ad.sigmoid(pre["f"]), c_prev) if params.forget_gate else c_prev
    c = keep + ad.hadamard(i, c_tilde)
    h = ad.hadamard(o, ad.tanh(c))
    return h, c


def momentum_lstm_step(params: LstmParams, hyper: MomentumHyper, state: CellState, x_t, t: int) -> CellState:
    """LSTM whose per-gate input transforms are replaced by momentum streams
    v^g_t = mu v^g_{t-1} + s W_g x_t."""
    mu = hyper.mu_at(t)
    xt = augment(x_t)
    streams = {}
    for g in params.gates:
        drive = _lin(xt, params.W[g])
        if hyper.s != 1.0:
            drive = ad.scale(drive, hyper.s)
        prev = state.gates_v.get(g)
        streams[g] = drive if prev is None or mu == 0.0 else ad.scale(prev, mu) + drive
    h, c = _lstm_gates(params, state.h, state.c, streams)
    return CellState(h=h, c=c, gates_v=streams)


def adam_cell_step(params: RnnParams, hyper: MomentumHyper, state: CellState, x_t, t: int = 1) -> CellState:
    """AdamRNN step (RMSPropRNN when mu = 0).

    v_t = mu v_{t-1} + s W x_t
    m_t = beta m_{t-1} + (1 - beta) (W x_t)^2
    h_t = act(U h_{t-1} + v_t / (sqrt(m_t) + eps))
    """
    mu = hyper.mu_at(t)
    xt = augment(x_t)
    _check_input(params.W, xt)
    wx = _lin(xt, params.W)
    drive = ad.scale(wx, hyper.s) if hyper.s != 1.0 else wx
    v = drive if state.v is None or mu == 0.0 else ad.scale(state.v, mu) + drive
    sq = ad.scale(ad.square(wx), 1.0 - hyper.beta)
    m = sq if state.m is None else ad.scale(state.m, hyper.beta) + sq
    denom = ad.add(ad.sqrt(m), hyper.eps)
    step = ad.div(v, denom)
    if hyper.parameterization == "u-form":
        step = _lin(step, params.U)
    act = ad.ACTIVATIONS[params.activation]
    h = act(_lin(state.h, params.U) + step)
    return CellState(h=h, v=v, m=m)


# --------------------------------------------------------------------------
# sequence models

CELL_KINDS = ("rnn", "momentum", "nag", "srnn", "adam", "rmsprop", "lstm", "momentum_lstm")


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class RecurrentModel:
    """A single recurrent layer plus a linear readout.

    ``readout`` is ``"last"`` (one output from h_T) or ``"sequence"`` (one
    output per timestep).
    """

    kind: str
    input_dim: int
    hidden: int
    output_dim: int
    hyper: MomentumHyper = field(default_factory=MomentumHyper)
    activation: str = "tanh"
    readout: str = "last"
    forget_gate: bool = False

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}; expected one of {CELL_KINDS}")
        if self.readout not in ("last", "sequence"):
            raise ValueError("readout must be 'last' or 'sequence'")

    @property
    def is_lstm(self) -> bool:
        return self.kind in ("lstm", "momentum_lstm")

    def effective_hyper(self) -> MomentumHyper:
        if self.kind == "nag":
            return replace(self.hyper, schedule="nag")
        if self.kind == "srnn":
            return replace(self.hyper, schedule="restart", restart=self.hyper.restart or 10)
        if self.kind == "rmsprop":
            return replace(self.hyper, mu=0.0, schedule="constant")
        return self.hyper

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        h, d1 = self.hidden, self.input_dim + 1
        p = {}
        if self.is_lstm:
            gates = ("i", "c", "o", "f") if self.forget_gate else ("i", "c", "o")
            for g in gates:
                p[f"U_{g}"] = uniform_init(rng, (h, h), h)
                p[f"W_{g}"] = uniform_init(rng, (h, d1), d1)
        else:
            p["U"] = uniform_init(rng, (h, h), h)
            p["W"] = uniform_init(rng, (h, d1), d1)
        p["V"] = uniform_init(rng, (self.output_dim, h + 1), h + 1)
        return p

    def bind(self, tape: Tape, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: tape.param(k, v) for k, v in params.items()}

    def run(self, p: Mapping[str, Tensor], inputs: np.ndarray) -> tuple[list[Tensor], list[Tensor]]:
        """Unroll over ``inputs`` of shape (B, T, d); returns (outputs, hidden states)."""
        outputs, states = self.unroll(p, inputs)
        return outputs, [s.h for s in states]

    def unroll(self, p: Mapping[str, Tensor], inputs: np.ndarray) -> tuple[list[Tensor], list[CellState]]:
        """Like :meth:`run` but keeps every :class:`CellState`."""
        inputs = np.asarray(inputs, dtype=np.float64)
        B, T, _ = inputs.shape
        hyper = self.effective_hyper()
        zeros = Tensor(np.zeros((B, self.hidden)))
        states: list[CellState] = []
        if self.is_lstm:
            gates = ("i", "c", "o", "f") if self.forget_gate else ("i", "c", "o")
            lp = LstmParams({g: p[f"U_{g}"] for g in gates}, {g: p[f"W_{g}"] for g in gates},
                            forget_gate=self.forget_gate)
            state = CellState(h=zeros, c=zeros)
            for t in range(1, T + 1):
                x = inputs[:, t - 1]
                if self.kind == "lstm":
                    h, c = lstm_step(lp, state.h, state.c, x)
                    state = CellState(h=h, c=c)
                else:
                    state = momentum_lstm_step(lp, hyper, state, x, t)
                states.append(state)
        else:
            rp = RnnParams(p["U"], p["W"], self.activation)
            state = CellState(h=zeros)
            for t in range(1, T + 1):
                x = inputs[:, t - 1]
                if self.kind == "rnn":
                    state = CellState(h=recurrent_step(rp, state.h, x))
                elif self.kind in ("adam", "rmsprop"):
                    state = adam_cell_step(rp, hyper, state, x, t)
                else:
                    state = momentum_step(rp, hyper, state, x, t)
                states.append(state)
        if self.readout == "last":
            outputs = [_lin(augment(states[-1].h), p["V"])]
        else:
            outputs = [_lin(augment(s.h), p["V"]) for s in states]
        return outputs, states


ELIMINABLE = ("momentum", "nag", "srnn")


def bptt_gradient_norms(
    model: RecurrentModel,
    params: Mapping[str, np.ndarray],
    inputs: np.ndarray,
    loss: Callable[[list[Tensor]], Tensor],
    coords: str = "auto",
) -> tuple[list[float], ad.Gradients, float]:
    """‖dL/dh_t‖ for t = 1..T from one backward pass.

    ``coords="state"`` differentiates with every other cell state held
    fixed. ``"eliminated"`` (the ``"auto"`` choice for v-form momentum
    cells) takes the state to be (h_t, h_{t-1}) as in the second-order form
    of the momentum cell. Since v_t = act^{-1}(h_t) - U h_{t-1} there,

        dL/dh_t = g_h(t) + mu_{t+1} act^{-1}'(h_t) * g_v(t+1),

    with g_h, g_v the tape gradients of h_t and v_{t+1}. At mu = 0 both
    readings agree with the plain recurrent cell.

    Returns the per-timestep norms, the parameter gradients of the same
    pass, and the loss value.
    """
    if coords not in ("auto", "state", "eliminated"):
        raise ValueError("coords must be auto, state or eliminated")
    hyper = model.effective_hyper()
    eliminable = model.kind in ELIMINABLE and hyper.parameterization == "v-form"
    if coords == "eliminated" and not eliminable:
        raise ValueError(f"{model.kind} ({hyper.parameterization}) has no eliminated-momentum form")
    eliminate = eliminable and coords != "state"
    tape = Tape()
    p = model.bind(tape, params)
    outputs, states = model.unroll(p, inputs)
    L = loss(outputs)
    grads = ad.backward(tape, L)
    norms = []
    T = len(states)
    for t, st in enumerate(states, start=1):
        g = grads.of(st.h)
        if eliminate and t < T:
            mu_next = hyper.mu_at(t + 1)
            if mu_next != 0.0:
                gv = grads.of(states[t].v)
                with np.errstate(invalid="ignore"):
                    extra = mu_next * _inverse_activation_grad(model.activation, st.h.data) * gv
                g = g + np.where(gv == 0.0, 0.0, extra)
        norms.append(float(np.linalg.norm(g)))
    return norms, grads, L.item()


def _inverse_activation_grad(name: str, h: np.ndarray) -> np.ndarray:
    """Derivative of act^{-1}; a saturated unit (|h| = 1 in floating point) gives inf.

    The caller zeroes the product wherever the momentum gradient is exactly 0.
    """
    with np.errstate(divide="ignore"):
        if name == "tanh":
            return 1.0 / (1.0 - h * h)
        return 1.0 / (h * (1.0 - h))
