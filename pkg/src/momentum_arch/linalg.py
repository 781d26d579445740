"""Dense eigenvalue diagnostics."""
from __future__ import annotations

import numpy as np


def eigenvalues(M) -> np.ndarray:
    """Full complex spectrum of a square matrix, multiplicities included.

    LAPACK's ``geev`` (Hessenberg reduction followed by shifted QR to real
    Schur form) does the work.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"eigenvalues needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.eigvals(M).astype(np.complex128)


def eigenpairs(M) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"eigenpairs needs a square matrix, got shape {M.shape}")
    w, v = np.linalg.eig(M)
    return w.astype(np.complex128), v.astype(np.complex128)
