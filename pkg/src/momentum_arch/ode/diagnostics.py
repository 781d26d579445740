"""Spectral and adjoint-norm diagnostics for heavy-ball dynamics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..linalg import eigenvalues
from .models import AdjointResult


@dataclass
class PairingReport:
    eigenvalues: np.ndarray
    pairs: list[tuple[complex, complex]]
    target_sum: float
    max_pair_residual: float


def block_matrix(F: np.ndarray, J: np.ndarray, gamma: float) -> np.ndarray:
    """H = [[0, J], [F, -gamma I]]."""
    n = F.shape[0]
    return np.block([[np.zeros((n, n)), J], [F, -gamma * np.eye(n)]])


def eigen_pairing_check(F_avg, J_avg, gamma: float, dt: float = 1.0) -> PairingReport:
    """Pair the spectrum of dt*H so that each pair sums to -dt*gamma.

    Each eigenvalue mu of J F yields the two roots of
    lambda (lambda + gamma) = mu; the computed spectrum of dt*H is matched
    to those predicted roots (optimal assignment) and the two spectral
    values matched to one quadratic form a pair. The residual is measured
    on the computed spectrum, not the predicted roots.
    """
    F = np.asarray(F_avg, dtype=np.float64)
    J = np.asarray(J_avg, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != F.shape[1] or J.shape != F.shape:
        raise ValueError(f"F and J must be square and equal size, got {F.shape} and {J.shape}")
    n = F.shape[0]
    spectrum = eigenvalues(dt * block_matrix(F, J, gamma))
    mus = eigenvalues(J @ F)
    disc = np.sqrt(gamma * gamma + 4.0 * mus.astype(np.complex128))
    roots = np.concatenate([(-gamma + disc) / 2.0, (-gamma - disc) / 2.0]) * dt
    owner = np.concatenate([np.arange(n), np.arange(n)])
    cost = np.abs(spectrum[:, None] - roots[None, :])
    rows, cols = linear_sum_assignment(cost)
    slots: dict[int, list[complex]] = {}
    for r, c in zip(rows, cols):
        slots.setdefault(int(owner[c]), []).append(complex(spectrum[r]))
    target = -dt * gamma
    pairs = [tuple(v) for _, v in sorted(slots.items())]
    resid = max(abs(a + b - target) for a, b in pairs) if pairs else 0.0
    return PairingReport(spectrum, pairs, target, float(resid))


def adjoint_norm_trace(result: AdjointResult) -> list[tuple[float, float]]:
    """(t, ‖(a_h, a_m)(t)‖) at each checkpoint, from T down to t0."""
    return list(result.trace)
