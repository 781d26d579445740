"""Slow, independent reference computations used by the verification suite.

Nothing here shares code paths with the production kernels: attention is
evaluated by explicit double loops and eigenvalues come from the
characteristic polynomial (Faddeev-LeVerrier) and Durand-Kerner root
iteration rather than from LAPACK.
"""
from __future__ import annotations

import numpy as np


def kernel_average(fq: np.ndarray, fk: np.ndarray, V: np.ndarray, weights, causal: bool) -> np.ndarray:
    """Σ_j w_ij (φq_i·φk_j) v_j / Σ_j (φq_i·φk_j) by explicit loops.

    ``weights(i, j)`` returns the momentum weight; the normaliser is
    unweighted.
    """
    n = fk.shape[0]
    out = np.zeros((fq.shape[0], V.shape[1]))
    for i in range(fq.shape[0]):
        num = np.zeros(V.shape[1])
        den = 0.0
        last = i if causal else n - 1
        for j in range(last + 1):
            k_ij = float(np.dot(fq[i], fk[j]))
            num += weights(i, j) * k_ij * V[j]
            den += k_ij
        out[i] = num / den
    return out


def momentum_weight(beta: float, gamma: float, lag: int) -> float:
    """γ Σ_{r=0}^{lag-1} β^r, summed term by term."""
    return gamma * sum(beta ** r for r in range(lag))


def brute_linear_attention(fq, fk, V, causal: bool = False) -> np.ndarray:
    return kernel_average(fq, fk, V, lambda i, j: 1.0, causal)


def brute_momentum_attention(fq, fk, V, beta: float, gamma: float, causal: bool = True) -> np.ndarray:
    n = fk.shape[0]
    if causal:
        return kernel_average(fq, fk, V, lambda i, j: momentum_weight(beta, gamma, i - j + 1), True)
    return kernel_average(fq, fk, V, lambda i, j: momentum_weight(beta, gamma, n - j), False)


def brute_softmax_attention(Q, K, V, causal: bool = False) -> np.ndarray:
    n, d = Q.shape
    out = np.zeros((n, V.shape[1]))
    for i in range(n):
        last = i if causal else K.shape[0] - 1
        scores = [float(np.dot(Q[i], K[j])) / np.sqrt(d) for j in range(last + 1)]
        top = max(scores)
        w = [np.exp(s - top) for s in scores]
        total = sum(w)
        for j, wj in enumerate(w):
            out[i] += wj / total * V[j]
    return out


def characteristic_polynomial(M: np.ndarray) -> np.ndarray:
    """Monic coefficients [1, c1, ..., cn] by Faddeev-LeVerrier."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    coeffs = [1.0]
    Mk = np.zeros_like(M)
    I = np.eye(n)
    for k in range(1, n + 1):
        Mk = M @ (Mk + coeffs[-1] * I)
        coeffs.append(-np.trace(Mk) / k)
    return np.array(coeffs)


def polynomial_roots(coeffs: np.ndarray, iters: int = 2000, tol: float = 1e-15) -> np.ndarray:
    """All complex roots of a monic polynomial by Durand-Kerner, Newton-polished."""
    c = np.asarray(coeffs, dtype=np.complex128)
    n = c.size - 1
    if n == 0:
        return np.array([], dtype=np.complex128)
    radius = 1.0 + np.max(np.abs(c[1:]))
    z = radius * np.exp(2j * np.pi * (np.arange(n) + 0.25) / n) * 0.9
    for _ in range(iters):
        p = np.polyval(c, z)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        step = p / np.prod(diff, axis=1)
        z = z - step
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(z))):
            break
    dc = np.polyder(c)
    for _ in range(3):
        d = np.polyval(dc, z)
        safe = np.abs(d) > 1e-300
        z = np.where(safe, z - np.polyval(c, z) / np.where(safe, d, 1.0), z)
    return z


def eigenvalues_charpoly(M: np.ndarray) -> np.ndarray:
    return polynomial_roots(characteristic_polynomial(M))


def multiset_distance(a, b) -> float:
    """Largest gap under the best one-to-one matching of two complex multisets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.size != b.size:
        return np.inf
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max()) if a.size else 0.0
