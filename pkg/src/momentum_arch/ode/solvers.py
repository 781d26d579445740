"""Explicit ODE integrators with function-evaluation accounting.

``integrate`` works on arrays of any shape; the right-hand side is called as
``f(t, y)``. Integration backwards in time (``t1 < t0``) is supported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

METHODS = ("dopri45", "rk4", "euler")

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class OdeSolverError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


@dataclass
class SolverStats:
    forward_nfe: int = 0
    backward_nfe: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    rtol: float = 0.0
    atol: float = 0.0
    last_step: float | None = None

    def merge(self, other: "SolverStats") -> "SolverStats":
        return SolverStats(
            self.forward_nfe + other.forward_nfe,
            self.backward_nfe + other.backward_nfe,
            self.accepted_steps + other.accepted_steps,
            self.rejected_steps + other.rejected_steps,
            other.rtol or self.rtol,
            other.atol or self.atol,
            other.last_step,
        )


class _Counted:
    __slots__ = ("f", "n")

    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, t, y):
        self.n += 1
        dy = np.asarray(self.f(t, y), dtype=np.float64)
        if not np.all(np.isfinite(dy)):
            raise OdeSolverError("non-finite derivative", t)
        return dy


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _initial_step(f, t0, y0, f0, direction, rtol, atol, span) -> tuple[float, int]:
    """Starting step from the sizes of y0 and f(y0) (Hairer, Norsett & Wanner II.4).

    Returns the step magnitude and the number of extra evaluations spent.
    """
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        # stationary to second order at the start: try the whole span
        return span, 1
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100 * h0, h1, span), 1


def integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t0: float,
    t1: float,
    method: str = "dopri45",
    rtol: float = 1e-7,
    atol: float = 1e-7,
    n_steps: int = 100,
    first_step: float | None = None,
    max_steps: int = 50_000,
) -> tuple[np.ndarray, SolverStats]:
    """Solve dy/dt = f(t, y) from t0 to t1.

    ``n_steps`` applies to the fixed-step methods only. For ``dopri45`` a
    step is accepted when the RMS of err / (atol + rtol * max(|y|, |y_new|))
    is at most 1.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    y = np.array(y0, dtype=np.float64)
    fc = _Counted(f)
    if method == "dopri45":
        if not (rtol > 0 and atol > 0):
            raise ValueError("rtol and atol must be positive")
        y, stats = _dopri45(fc, y, float(t0), float(t1), rtol, atol, first_step, max_steps)
    else:
        y, stats = _fixed(fc, y, float(t0), float(t1), method, n_steps)
    stats.forward_nfe = fc.n
    stats.rtol, stats.atol = rtol, atol
    return y, stats


def _fixed(f, y, t0, t1, method, n_steps):
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h = (t1 - t0) / n_steps
    t = t0
    for k in range(n_steps):
        t = t0 + k * h
        if method == "euler":
            y = y + h * f(t, y)
        else:
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y, SolverStats(accepted_steps=n_steps, last_step=abs(h))


def _dopri45(f, y, t0, t1, rtol, atol, first_step, max_steps):
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    t = t0
    k0 = f(t, y)
    if first_step is None:
        h, _ = _initial_step(f, t, y, k0, direction, rtol, atol, span)
    else:
        h = min(abs(first_step), span)
    accepted = rejected = 0
    K = np.empty((7,) + y.shape)
    while direction * (t1 - t) > 0:
        if accepted + rejected >= max_steps:
            raise OdeSolverError(f"exceeded {max_steps} steps", t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise OdeSolverError("step size underflow", t)
        remaining = abs(t1 - t)
        last = h >= remaining * (1 - 1e-12)
        if last:
            h = remaining
        hs = direction * h
        K[0] = k0
        for i in range(1, 7):
            yi = y + hs * np.tensordot(_A[i], K[:i], axes=1)
            K[i] = f(t + _C[i] * hs, yi)
        y_new = y + hs * np.tensordot(_B5[:6], K[:6], axes=1)
        err = hs * np.tensordot(_E, K, axes=1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = _rms(err / scale)
        if en <= 1.0:
            t = t1 if last else t + hs
            y = y_new
            k0 = K[6].copy()
            accepted += 1
            factor = MAX_FACTOR if en == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))
            h_used = h
            h = h * factor
        else:
            rejected += 1
            h = h * max(MIN_FACTOR, SAFETY * en ** -0.2)
    return y, SolverStats(accepted_steps=accepted, rejected_steps=rejected, last_step=h_used if accepted else h)


def integrate_path(
    f,
    y0,
    times: Sequence[float],
    method: str = "dopri45",
    rtol: float = 1e-7,
    atol: float = 1e-7,
    n_steps: int = 100,
) -> tuple[list[np.ndarray], SolverStats]:
    """Integrate through ``times`` in order, returning the state at each."""
    states = [np.array(y0, dtype=np.float64)]
    total = SolverStats(rtol=rtol, atol=atol)
    step = None
    for ta, tb in zip(times[:-1], times[1:]):
        y, st = integrate(f, states[-1], ta, tb, method, rtol, atol, n_steps, first_step=step)
        step = st.last_step
        states.append(y)
        total = total.merge(st)
    return states, total


def default_steps(t0: float, t1: float, dt: float) -> int:
    return max(1, math.ceil(abs(t1 - t0) / dt))
