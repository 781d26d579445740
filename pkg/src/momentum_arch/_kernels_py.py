"""Pure-numpy reference implementations of the sequential attention scans.

Inputs are already feature-mapped: ``fq`` and ``fk`` are φ(Q), φ(K) with shape
(N, D) and ``v`` is (N, Dv). Each scan returns ``(out, n_outer, bad)`` where
``n_outer`` counts the φ(k_i) v_iᵀ products formed and ``bad`` is the first
row whose normaliser φ(q_i)ᵀ z_i was not strictly positive (-1 if none).
"""
from __future__ import annotations

import numpy as np


def _prepare(fq, fk, v):
    fq = np.ascontiguousarray(fq, dtype=np.float64)
    fk = np.ascontiguousarray(fk, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    return fq, fk, v


def causal_linear_scan(fq, fk, v):
    fq, fk, v = _prepare(fq, fk, v)
    n, d = fk.shape
    out = np.empty_like(v)
    s = np.zeros((d, v.shape[1]))
    z = np.zeros(d)
    n_outer = 0
    bad = -1
    for i in range(n):
        s += np.outer(fk[i], v[i])
        n_outer += 1
        z += fk[i]
        den = fq[i] @ z
        if not den > 0.0 and bad < 0:
            bad = i
        out[i] = (fq[i] @ s) / den if den > 0.0 else np.nan
    return out, n_outer, bad


def causal_momentum_scan(fq, fk, v, beta, gamma):
    fq, fk, v = _prepare(fq, fk, v)
    n, d = fk.shape
    out = np.empty_like(v)
    s = np.zeros((d, v.shape[1]))
    m = np.zeros_like(s)
    z = np.zeros(d)
    n_outer = 0
    bad = -1
    for i in range(n):
        m *= beta
        m -= np.outer(fk[i], v[i])
        n_outer += 1
        s -= gamma * m
        z += fk[i]
        den = fq[i] @ z
        if not den > 0.0 and bad < 0:
            bad = i
        out[i] = (fq[i] @ s) / den if den > 0.0 else np.nan
    return out, n_outer, bad


def momentum_carry_scan(fq, fk, v, beta, gamma):
    """Closed-form weights via A_i = Σ P_j and C_i = β (C_{i-1} + P_i).

    s_i = γ (A_i - C_i) / (1 - β) places weight (1 - β^{i-j+1}) / (1 - β) on
    P_j = φ(k_j) v_jᵀ without ever forming negative powers of β.
    """
    fq, fk, v = _prepare(fq, fk, v)
    n, d = fk.shape
    out = np.empty_like(v)
    A = np.zeros((d, v.shape[1]))
    C = np.zeros_like(A)
    z = np.zeros(d)
    c = gamma / (1.0 - beta)
    n_outer = 0
    bad = -1
    for i in range(n):
        P = np.outer(fk[i], v[i])
        n_outer += 1
        A += P
        C += P
        C *= beta
        z += fk[i]
        den = fq[i] @ z
        if not den > 0.0 and bad < 0:
            bad = i
        out[i] = c * (fq[i] @ (A - C)) / den if den > 0.0 else np.nan
    return out, n_outer, bad
