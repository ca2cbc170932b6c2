"""Dense symmetric matrix helpers: Frobenius products, eigendecompositions,
and projection onto the positive semidefinite cone.

All functions take and return plain float64 ndarrays.  Matrices are
symmetrized on entry via (A + A.T) / 2 so that downstream spectral code can
assume exact symmetry.
"""

from typing import NamedTuple

import numpy as np

from .errors import NumericalError

# Eigenvalues with magnitude below RANK_TOL * ||A||_F are treated as zero
# when projecting onto the PSD cone.
RANK_TOL = 1e-12


class EigenDecomp(NamedTuple):
    """Spectral factorization A = vectors @ diag(values) @ vectors.T.

    vectors: orthogonal (d, d) matrix, one eigenvector per column.
    values: eigenvalues sorted in descending order.
    """

    vectors: np.ndarray
    values: np.ndarray


def symmetrize(a) -> np.ndarray:
    """Return (A + A.T) / 2 as a float64 array, validating squareness."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("matrix dimension must be at least 1")
    return (a + a.T) / 2.0


def frob_inner(a, b) -> float:
    """Frobenius inner product <A, B> = sum_ij A_ij * B_ij."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float((a * b).sum())


def sym_eig(a) -> EigenDecomp:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Raises ValueError on non-finite input and NumericalError if the
    underlying factorization fails to converge.
    """
    a = symmetrize(a)
    if not np.isfinite(a).all():
        raise ValueError("matrix contains non-finite entries")
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(values)[::-1]
    return EigenDecomp(np.ascontiguousarray(vectors[:, order]), values[order])


def psd_project(a) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix to (A + A.T) / 2.

    Negative eigenvalues are clamped to zero; eigenvalues within
    RANK_TOL * ||A||_F of zero are treated as exact zeros.
    """
    a = symmetrize(a)
    vectors, values = sym_eig(a)
    cut = RANK_TOL * float(np.linalg.norm(a))
    clamped = np.where(values > cut, values, 0.0)
    return symmetrize((vectors * clamped) @ vectors.T)


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of the symmetrized input."""
    return float(sym_eig(a).values[-1])
