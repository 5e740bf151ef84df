"""
Dense matrix helpers: norms, recovery metrics and small-scale SVD

Matrices are numpy arrays stored column-major (Fortran order) in 32-bit reals,
so that a batch of columns (frames) is a contiguous slice. All reductions
accumulate in 64-bit.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from errors import DegenerateInputError, DimensionError, MatrixSizeError, NumericalError, ParameterError
import settings

logger = logging.getLogger(__name__)

MATRIX_DTYPE = np.float32

# Tolerances used when two matrices are compared entrywise
DEFAULT_ATOL = 1e-6
DEFAULT_RTOL = 1e-5


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD M = U diag(singular_values) V^T, singular values non-increasing"""
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def as_matrix(data, dtype=MATRIX_DTYPE, check_finite: bool = True) -> np.ndarray:
    """
    Coerce data into a 2-D column-major matrix

    Raises DimensionError for non 2-D input and ParameterError for NaN/Inf
    entries when check_finite is set.
    """
    matrix = np.asfortranarray(data, dtype=dtype)
    if matrix.ndim != 2:
        raise DimensionError(f"Expected a 2-D matrix, got {matrix.ndim} dimension(s)")
    if check_finite and matrix.size and not np.isfinite(matrix).all():
        raise ParameterError("Matrix contains non-finite entries")
    return matrix


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "matrices"):
    if a.shape != b.shape:
        raise DimensionError(f"Shape mismatch between {what}: {a.shape} vs {b.shape}")


def l1_norm(M: np.ndarray) -> float:
    """Sum of absolute entries; an empty matrix has norm 0."""
    if M.size == 0:
        return 0.0
    return float(np.sum(np.abs(M), dtype=np.float64))


def fro_norm(M: np.ndarray) -> float:
    """Frobenius norm with 64-bit accumulation; an empty matrix has norm 0."""
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(np.asarray(M, dtype=np.float64)))


def relative_error(L_true: np.ndarray, L_hat: np.ndarray) -> float:
    """
    Recovery metric ||L_true - L_hat||_F / ||L_true||_F

    Raises DimensionError on shape mismatch and DegenerateInputError when
    L_true is zero.
    """
    check_same_shape(L_true, L_hat, "true and estimated matrices")
    denominator = fro_norm(L_true)
    if denominator == 0.0:
        raise DegenerateInputError("relative_error is undefined for an all-zero reference matrix")
    difference = np.asarray(L_true, dtype=np.float64) - np.asarray(L_hat, dtype=np.float64)
    return fro_norm(difference) / denominator


def matrices_close(a: np.ndarray, b: np.ndarray, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> bool:
    """Entrywise |a - b| <= atol + rtol * |b|"""
    return a.shape == b.shape and bool(np.allclose(a, b, atol=atol, rtol=rtol))


def svd_small(M: np.ndarray, cap: Optional[int] = None) -> SvdResult:
    """
    Full thin SVD for oracle-scale matrices

    LAPACK's divide-and-conquer driver is tried first, then the QR-iteration
    driver. Raises MatrixSizeError when min(n, m) exceeds the cap and
    NumericalError when neither driver converges.
    """
    cap = settings.SVD_CAP if cap is None else cap
    if M.ndim != 2:
        raise DimensionError(f"svd_small expects a 2-D matrix, got {M.ndim} dimension(s)")
    if min(M.shape) > cap:
        raise MatrixSizeError(f"svd_small is limited to min(n, m) <= {cap}, got shape {M.shape}")

    A = np.asarray(M, dtype=np.float64)
    for driver in ('gesdd', 'gesvd'):
        try:
            U, s, Vt = linalg.svd(A, full_matrices=False, lapack_driver=driver, check_finite=False)
            return SvdResult(U=U, singular_values=s, V=Vt.T)
        except linalg.LinAlgError as e:
            logger.warning(f"SVD driver {driver} failed on shape {A.shape}: {e}")

    raise NumericalError(f"SVD did not converge for matrix of shape {A.shape}")


def nuclear_norm(M: np.ndarray, cap: Optional[int] = None) -> float:
    """Sum of singular values (diagnostic only)"""
    return float(np.sum(svd_small(M, cap=cap).singular_values))
