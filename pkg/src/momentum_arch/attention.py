"""Softmax, linear and momentum attention.

Numpy functions act on single sequences: ``Q``/``K`` are (N, D) and ``V`` is
(N, Dv). The ``*_tape`` functions build the same quantities on the
autodiff tape in the masked parallel form used for training, and accept
arbitrary leading batch/head dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import DomainError, ShapeError, Tensor

FEATURE_MAPS = ("elu_plus_one", "clip_positive")


def feature_map(name: str, x: np.ndarray) -> np.ndarray:
    if name == "elu_plus_one":
        return ad.elu_plus_one_np(np.asarray(x, dtype=np.float64))
    if name == "clip_positive":
        return np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    raise ValueError(f"unknown feature map {name!r}; expected one of {FEATURE_MAPS}")


def feature_map_tape(name: str, x) -> Tensor:
    if name == "elu_plus_one":
        return ad.elu_plus_one(x)
    if name == "clip_positive":
        return ad.relu(x)
    raise ValueError(f"unknown feature map {name!r}; expected one of {FEATURE_MAPS}")


@dataclass
class AttnProjections:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    phi: str = "elu_plus_one"

    def __post_init__(self):
        self.W_Q, self.W_K, self.W_V = (np.asarray(w, dtype=np.float64) for w in (self.W_Q, self.W_K, self.W_V))
        if self.W_Q.shape != self.W_K.shape:
            raise ShapeError(f"W_Q {self.W_Q.shape} and W_K {self.W_K.shape} must match")
        if self.W_V.shape[1] != self.W_Q.shape[1]:
            raise ShapeError("W_V must read the same input width as W_Q")
        if self.phi not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map {self.phi!r}")

    def project(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.W_Q.T, X @ self.W_K.T, X @ self.W_V.T


@dataclass
class AttnState:
    s: np.ndarray
    z: np.ndarray
    m: np.ndarray

    @classmethod
    def initial(cls, d: int, dv: int) -> "AttnState":
        return cls(np.zeros((d, dv)), np.zeros(d), np.zeros((d, dv)))


@dataclass
class AttnHyper:
    gamma: float = 1.0
    beta: float = 0.0
    beta_conn: float = 0.0
    adaptive: bool = False
    delta: float = 1e-3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= self.beta_conn < 1.0:
            raise ValueError(f"beta_conn must lie in [0, 1), got {self.beta_conn}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass
class OuterProductCounter:
    """Tally of φ(k) vᵀ products formed by the step/scan functions."""

    count: int = 0

    def add(self, n: int = 1) -> None:
        self.count += n


def _check_qkv(Q, K, V):
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError(f"expected 2-D Q, K, V, got {Q.shape}, {K.shape}, {V.shape}")
    if Q.shape != K.shape or V.shape[0] != K.shape[0]:
        raise ShapeError(f"incompatible Q {Q.shape}, K {K.shape}, V {V.shape}")
    return Q, K, V


def _check_beta(beta: float) -> None:
    if beta == 1.0:
        raise DomainError("beta = 1 makes the momentum weights 1/(1-beta) undefined")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")


def _normalise(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    if np.any(~(den > 0.0)):
        raise DomainError("attention normaliser is not strictly positive")
    return num / den


# --------------------------------------------------------------------------
# dense forms


def attention_weights(Q, K, causal: bool = False) -> np.ndarray:
    Q, K, _ = _check_qkv(Q, K, np.zeros((np.shape(K)[0], 1)))
    scores = Q @ K.T / np.sqrt(Q.shape[1])
    mask = np.tril(np.ones(scores.shape, dtype=bool)) if causal else None
    return ad._softmax_last(scores, mask)


def softmax_attention(Q, K, V, causal: bool = False) -> np.ndarray:
    Q, K, V = _check_qkv(Q, K, V)
    return attention_weights(Q, K, causal) @ V


def linear_attention(Q, K, V, phi: str = "elu_plus_one") -> np.ndarray:
    """Non-causal linear attention via the associativity trick."""
    Q, K, V = _check_qkv(Q, K, V)
    fq, fk = feature_map(phi, Q), feature_map(phi, K)
    kv = fk.T @ V
    return _normalise(fq @ kv, (fq @ fk.sum(axis=0))[:, None])


def momentum_weights(n: int, beta: float, gamma: float = 1.0, causal: bool = True) -> np.ndarray:
    """n×n weight matrix applied to φ(q_i)ᵀφ(k_j) in momentum attention.

    Causal: γ(1 − β^{i−j+1})/(1 − β) for j ≤ i, else 0. Non-causal:
    γ(1 − β^{n−j+1})/(1 − β) in every row.
    """
    _check_beta(beta)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if causal:
        lag = np.maximum(i - j + 1, 0)
        w = np.where(j <= i, _geometric(lag, beta), 0.0)
    else:
        w = np.broadcast_to(_geometric(n - j, beta), (n, n)).copy()
    return gamma * w


def _geometric(k, beta: float):
    """(1 − β^k)/(1 − β) evaluated without cancellation at β = 0."""
    k = np.asarray(k)
    if beta == 0.0:
        return np.where(k > 0, 1.0, 0.0)
    return -np.expm1(k * np.log(beta)) / (1.0 - beta)


def momentum_attention_noncausal(Q, K, V, phi: str = "elu_plus_one",
                                 hyper: AttnHyper | None = None) -> np.ndarray:
    hyper = hyper or AttnHyper()
    Q, K, V = _check_qkv(Q, K, V)
    _check_beta(hyper.beta)
    fq, fk = feature_map(phi, Q), feature_map(phi, K)
    n = K.shape[0]
    w = hyper.gamma * _geometric(n - np.arange(n), hyper.beta)
    kv = (fk * w[:, None]).T @ V
    return _normalise(fq @ kv, (fq @ fk.sum(axis=0))[:, None])


# --------------------------------------------------------------------------
# recurrent forms


def causal_linear_step(state: AttnState, q, k, v, phi: str = "elu_plus_one",
                       counter: OuterProductCounter | None = None) -> tuple[np.ndarray, AttnState]:
    fq, fk = feature_map(phi, q), feature_map(phi, k)
    s = state.s + np.outer(fk, v)
    if counter is not None:
        counter.add()
    z = state.z + fk
    den = fq @ z
    if not den > 0.0:
        raise DomainError("causal linear attention: zero normaliser")
    return (fq @ s) / den, AttnState(s, z, state.m)


def causal_momentum_step(state: AttnState, q, k, v, phi: str = "elu_plus_one",
                         hyper: AttnHyper | None = None,
                         counter: OuterProductCounter | None = None) -> tuple[np.ndarray, AttnState]:
    hyper = hyper or AttnHyper()
    fq, fk = feature_map(phi, q), feature_map(phi, k)
    m = hyper.beta * state.m - np.outer(fk, v)
    if counter is not None:
        counter.add()
    s = state.s - hyper.gamma * m
    z = state.z + fk
    den = fq @ z
    if not den > 0.0:
        raise DomainError("causal momentum attention: zero normaliser")
    return (fq @ s) / den, AttnState(s, z, m)


def _run_scan(scan, Q, K, V, phi, counter, *args) -> np.ndarray:
    Q, K, V = _check_qkv(Q, K, V)
    out, n_outer, bad = scan(feature_map(phi, Q), feature_map(phi, K), V, *args)
    if counter is not None:
        counter.add(int(n_outer))
    if bad >= 0:
        raise DomainError(f"attention normaliser is not strictly positive at position {bad}")
    return out


def causal_linear_attention(Q, K, V, phi: str = "elu_plus_one",
                            counter: OuterProductCounter | None = None) -> np.ndarray:
    return _run_scan(kernels.causal_linear_scan, Q, K, V, phi, counter)


def causal_momentum_attention(Q, K, V, phi: str = "elu_plus_one", hyper: AttnHyper | None = None,
                              counter: OuterProductCounter | None = None) -> np.ndarray:
    """The recurrent (m, s, z) form over a whole sequence."""
    hyper = hyper or AttnHyper()
    return _run_scan(kernels.causal_momentum_scan, Q, K, V, phi, counter, hyper.beta, hyper.gamma)


def causal_momentum_unrolled(Q, K, V, phi: str = "elu_plus_one", hyper: AttnHyper | None = None,
                             counter: OuterProductCounter | None = None) -> np.ndarray:
    """Closed-form reweighting Σ_{j≤i} γ(1−β^{i−j+1})/(1−β) φ(k_j)v_jᵀ in O(N)."""
    hyper = hyper or AttnHyper()
    _check_beta(hyper.beta)
    return _run_scan(kernels.momentum_carry_scan, Q, K, V, phi, counter, hyper.beta, hyper.gamma)


# --------------------------------------------------------------------------
# layer-level pieces


def momentum_connection(X, V_hat, prev, beta_conn: float,
                        f: Callable[[np.ndarray], np.ndarray] = lambda u: u):
    """f(V̂ + X + β̃ (X − prev)); works on arrays and tape tensors alike."""
    if np.shape(X) != np.shape(V_hat) or np.shape(X) != np.shape(prev):
        raise ShapeError(f"momentum_connection shapes {np.shape(X)}, {np.shape(V_hat)}, {np.shape(prev)}")
    if not 0.0 <= beta_conn < 1.0:
        raise ValueError(f"beta_conn must lie in [0, 1), got {beta_conn}")
    if isinstance(X, Tensor) or isinstance(V_hat, Tensor) or isinstance(prev, Tensor):
        u = ad.add(V_hat, X)
        if beta_conn != 0.0:
            u = ad.add(u, ad.scale(ad.sub(X, prev), beta_conn))
        return f(u)
    X, V_hat, prev = (np.asarray(a, dtype=np.float64) for a in (X, V_hat, prev))
    return f(V_hat + X + beta_conn * (X - prev))


def adaptive_momentum(g_k, g_km1, delta: float = 1e-3, previous: float = 0.0) -> float:
    """clamp_[0, 1−δ] (1 − sqrt(‖g_k − g_{k−1}‖ / ‖g_{k−1}‖))².

    Returns ``previous`` unchanged when ‖g_{k−1}‖ = 0.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    g_k = np.ravel(np.asarray(g_k, dtype=np.float64))
    g_km1 = np.ravel(np.asarray(g_km1, dtype=np.float64))
    if g_k.shape != g_km1.shape:
        raise ShapeError(f"gradient sizes differ: {g_k.size} vs {g_km1.size}")
    denom = np.linalg.norm(g_km1)
    if denom == 0.0:
        return float(previous)
    ratio = np.linalg.norm(g_k - g_km1) / denom
    beta = (1.0 - np.sqrt(ratio)) ** 2
    return float(min(max(beta, 0.0), 1.0 - delta))


# --------------------------------------------------------------------------
# tape (training) forms


ATTENTION_KINDS = ("softmax", "linear", "momentum")


@dataclass
class _MaskCache:
    store: dict = field(default_factory=dict)

    def get(self, key, build):
        if key not in self.store:
            self.store[key] = build()
        return self.store[key]


_masks = _MaskCache()


def attention_tape(q, k, v, kind: str, hyper: AttnHyper | None = None,
                   phi: str = "elu_plus_one", causal: bool = True) -> Tensor:
    """Attention on tensors shaped (..., N, D); returns (..., N, Dv).

    ``linear`` is momentum attention with β = 0, γ = 1, so its weights are
    the plain causal mask.
    """
    if kind not in ATTENTION_KINDS:
        raise ValueError(f"attention kind must be one of {ATTENTION_KINDS}, got {kind!r}")
    n, d = q.shape[-2], q.shape[-1]
    if kind == "softmax":
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d))
        mask = _masks.get(("tril", n), lambda: np.tril(np.ones((n, n), dtype=bool))) if causal else None
        return ad.matmul(ad.softmax_rows(scores, mask), v)
    hyper = hyper or AttnHyper()
    beta, gamma = (hyper.beta, hyper.gamma) if kind == "momentum" else (0.0, 1.0)
    fq, fk = feature_map_tape(phi, q), feature_map_tape(phi, k)
    A = ad.matmul(fq, ad.transpose(fk))
    w = _masks.get(("w", n, beta, gamma, causal), lambda: momentum_weights(n, beta, gamma, causal))
    num = ad.matmul(ad.hadamard(A, w), v)
    if causal:
        tri = _masks.get(("tri", n), lambda: np.tril(np.ones((n, n))))
        den = ad.sum_(ad.hadamard(A, tri), axis=-1, keepdims=True)
    else:
        den = ad.sum_(A, axis=-1, keepdims=True)
    return ad.div(num, den)
