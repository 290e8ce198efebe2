"""Dense matrix primitives for losscape.

This module handles:
1. Validating matrices (2-D, non-empty, finite float64)
2. Numerical rank and singular value queries from a full SVD
3. Determinants from a pivoted LU factorization
4. Principal submatrices for block Hessians
"""

import warnings
from typing import Any, Literal, Sequence, Union

import numpy as np
import numpy.typing as npt
import scipy.linalg

Matrix = npt.NDArray[np.float64]
Tolerance = Union[float, Literal["auto"]]

EPS = float(np.finfo(np.float64).eps)


class LinalgError(ValueError):
    """Exception raised for invalid matrix inputs."""

    pass


def as_matrix(data: Any, name: str = "matrix") -> Matrix:
    """Convert data to a validated float64 matrix.

    Args:
        data: Anything numpy can turn into a 2-D array
        name: Name used in error messages

    Returns:
        A float64 array with at least one row and one column

    Raises:
        LinalgError: If the input is not 2-D, is empty, or has non-finite entries
    """
    matrix = np.array(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise LinalgError(f"{name} must be 2-dimensional, got {matrix.ndim} dimensions")
    if matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise LinalgError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(matrix)):
        raise LinalgError(f"{name} contains NaN or Inf entries")
    return matrix


def singular_values(M: Matrix) -> npt.NDArray[np.float64]:
    """Singular values of M in descending order."""
    return np.linalg.svd(as_matrix(M), compute_uv=False)


def rank_tolerance(M: Matrix, tol: Tolerance = "auto") -> float:
    """Resolve a rank tolerance.

    "auto" is max(rows, cols) * machine epsilon * largest singular value.
    """
    if tol == "auto":
        s = singular_values(M)
        return float(max(M.shape) * EPS * s[0])
    if tol < 0:
        raise LinalgError(f"Rank tolerance must be non-negative, got {tol}")
    return float(tol)


def numerical_rank(M: Matrix, tol: Tolerance = "auto") -> int:
    """Count the singular values of M that exceed the tolerance.

    Args:
        M: Finite matrix
        tol: Non-negative threshold or "auto"

    Returns:
        The numerical rank, at most min(rows, cols)
    """
    s = singular_values(M)
    threshold = rank_tolerance(M, tol)
    return int(np.count_nonzero(s > threshold))


def min_singular_value(M: Matrix) -> float:
    """Smallest singular value of M."""
    return float(singular_values(M)[-1])


def determinant(M: Matrix) -> float:
    """Determinant from an LU factorization with partial pivoting.

    The sign is the parity of the row interchanges recorded in the pivot
    vector times the signs of the diagonal of U.

    Raises:
        LinalgError: If M is not square
    """
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise LinalgError(f"Determinant requires a square matrix, got {M.shape}")

    with warnings.catch_warnings():
        # exactly singular inputs are legal here; their determinant is 0
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)

    swaps = int(np.count_nonzero(piv != np.arange(M.shape[0])))
    sign = -1.0 if swaps % 2 else 1.0
    return sign * float(np.prod(np.diag(lu)))


def principal_submatrix(M: Matrix, indices: Sequence[int]) -> Matrix:
    """Restrict a square matrix to the given rows and columns.

    Args:
        M: Square matrix
        indices: Distinct 0-based indices; their order is preserved

    Returns:
        The |indices| x |indices| submatrix

    Raises:
        LinalgError: If M is not square, or an index is duplicated or out of range
    """
    M = as_matrix(M)
    n = M.shape[0]
    if M.shape[1] != n:
        raise LinalgError(
            f"Principal submatrix requires a square matrix, got {M.shape}"
        )

    idx = [int(i) for i in indices]
    if not idx:
        raise LinalgError("Principal submatrix requires at least one index")
    if len(set(idx)) != len(idx):
        raise LinalgError(f"Duplicate indices in {idx}")
    out_of_range = [i for i in idx if i < 0 or i >= n]
    if out_of_range:
        raise LinalgError(f"Indices {out_of_range} out of range for a {n}x{n} matrix")

    return M[np.ix_(idx, idx)]


def append_ones(M: Matrix) -> Matrix:
    """Return [M, 1_N]."""
    M = as_matrix(M)
    return np.hstack([M, np.ones((M.shape[0], 1))])
