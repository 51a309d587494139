"""Dense linear-algebra kernels used throughout the package.

All matrices are plain float64 ``numpy.ndarray`` objects in row-major
layout; dimensions and symmetry are validated at operation boundaries.
Matrices here are small (a few hundred square at most), so the kernels
favor accuracy and strict contracts over scalability.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DegenerateInput, SingularMatrixError

__all__ = [
    "as_matrix",
    "sym_spectral",
    "orthonormalize",
    "pinv_psd",
    "logdet_psd",
    "singular_values",
]

_SYM_RTOL = 1e-10
_RANK_RTOL = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a finite 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return a


def _check_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise ContractViolation(f"{name} must be square, got shape {a.shape}")
    scale = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > _SYM_RTOL * max(scale, 1.0):
        raise ContractViolation(
            f"{name} is asymmetric: relative asymmetry {asym / max(scale, 1e-300):.3e}"
        )
    # work on the symmetrized matrix so downstream results are exactly symmetric
    return 0.5 * (a + a.T)


def sym_spectral(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted
    descending and eigenvectors as orthonormal columns, so that
    ``m ~= V @ diag(lam) @ V.T``.
    """
    a = _check_symmetric(as_matrix(m, "sym_spectral input"), "sym_spectral input")
    lam, vec = np.linalg.eigh(a)
    return lam[::-1].copy(), vec[:, ::-1].copy()


def singular_values(m) -> np.ndarray:
    """Singular values of a general matrix, descending."""
    a = as_matrix(m, "singular_values input")
    return np.linalg.svd(a, compute_uv=False)


def orthonormalize(m) -> np.ndarray:
    """Columns orthonormalized, preserving the column span.

    QR-based with the sign convention diag(R) > 0, so an
    already-orthonormal input is returned unchanged up to rounding.
    Raises ``DegenerateInput`` when the columns are numerically dependent
    (smallest singular value below 1e-12 of the largest).
    """
    a = as_matrix(m, "orthonormalize input")
    d, r = a.shape
    if d < r:
        raise ContractViolation(f"need rows >= cols, got {a.shape}")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= _RANK_RTOL * sv[0]:
        raise DegenerateInput(
            f"columns numerically dependent: sigma_min/sigma_max = "
            f"{sv[-1] / max(sv[0], 1e-300):.3e}"
        )
    q, rr = np.linalg.qr(a)
    signs = np.sign(np.diag(rr))
    signs[signs == 0.0] = 1.0
    return q * signs


def pinv_psd(m, tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``tol * lambda_max`` are treated as zero.
    """
    a = _check_symmetric(as_matrix(m, "pinv_psd input"), "pinv_psd input")
    lam, vec = np.linalg.eigh(a)
    lmax = float(lam[-1]) if lam.size else 0.0
    if lam.size and lam[0] < -1e-10 * max(abs(lmax), 1.0):
        raise ContractViolation(
            f"matrix is not PSD: lambda_min = {lam[0]:.3e}, lambda_max = {lmax:.3e}"
        )
    inv = np.zeros_like(lam)
    keep = lam > tol * max(lmax, 0.0)
    inv[keep] = 1.0 / lam[keep]
    return (vec * inv) @ vec.T


def logdet_psd(m) -> float:
    """log det of a symmetric positive-definite matrix.

    Computed as twice the log-sum of Cholesky pivots; a nonpositive pivot
    raises ``SingularMatrixError`` carrying the pivot index.
    """
    a = _check_symmetric(as_matrix(m, "logdet_psd input"), "logdet_psd input")
    n = a.shape[0]
    # unblocked Cholesky; n stays small so the column loop is cheap
    chol = np.zeros_like(a)
    total = 0.0
    for j in range(n):
        pivot = a[j, j] - chol[j, :j] @ chol[j, :j]
        if pivot <= 0.0 or not np.isfinite(pivot):
            raise SingularMatrixError(
                f"nonpositive pivot {pivot:.3e} at index {j}", pivot_index=j
            )
        root = np.sqrt(pivot)
        chol[j, j] = root
        if j + 1 < n:
            chol[j + 1 :, j] = (a[j + 1 :, j] - chol[j + 1 :, :j] @ chol[j, :j]) / root
        total += np.log(root)
    return 2.0 * total
