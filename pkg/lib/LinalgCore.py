import math
import logging

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .Errors import DimensionMismatch, OutOfConvergenceRegion, SingularMatrix, ValidationError

logger = logging.getLogger(__name__)

TAU_LIN = 1e-10
TAU_EXP = 1e-12
TAU_DET = 1e-12

_EXP_SERIES_DEGREE = 6
# degree-6 remainder at this norm is below TAU_EXP
_EXP_SCALE_THETA = 0.0625
_LOG_SERIES_TERMS = 20
_LOG_SCALE_THETA = 0.0625
_SQRT_MAX_ITERATIONS = 60


@dataclass(frozen=True, eq=False)
class KanDecomposition:
    k: np.ndarray
    a: np.ndarray
    n: np.ndarray

    @property
    def m(self) -> int:
        return int(self.a.shape[0])

    def reconstruct(self) -> np.ndarray:
        return self.k @ np.diag(self.a) @ self.n

    def an(self) -> np.ndarray:
        """The upper triangular part z = a·n, i.e. the matrix mod K."""
        return np.diag(self.a) @ self.n


def as_matrix(data: Any) -> np.ndarray:
    """Coerce `data` to a finite 2-d float array."""
    try:
        matrix = np.array(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"Matrix entries must be real numbers: {e}")
    if matrix.ndim != 2 or matrix.size == 0:
        raise DimensionMismatch(f"Expected a non-empty 2-d matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("Matrix entries must be finite (no NaN/Inf)")
    return matrix


def _as_square_stack(X: Any) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise DimensionMismatch(f"Expected square matrices, got shape {X.shape}")
    return X


def _identity_like(X: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(X.shape[-1]), X.shape).copy()


def gram_schmidt(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Modified Gram-Schmidt with one re-orthogonalization pass.

    Args:
        M (np.ndarray): n x r matrix with linearly independent columns.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Q (n x r, orthonormal columns) and R (r x r, upper
        triangular with positive diagonal) such that M = Q R.
    """
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    Q = np.zeros((rows, cols))
    R = np.zeros((cols, cols))
    for j in range(cols):
        v = M[:, j].copy()
        for _ in range(2):
            for i in range(j):
                c = Q[:, i] @ v
                R[i, j] += c
                v -= c * Q[:, i]
        norm = float(np.linalg.norm(v))
        column_scale = max(float(np.linalg.norm(M[:, j])), np.finfo(float).tiny)
        if norm <= TAU_DET * column_scale:
            raise SingularMatrix(f"Column {j} is linearly dependent on the previous columns")
        R[j, j] = norm
        Q[:, j] = v / norm
    return Q, R


def kan_decompose(M: Any) -> KanDecomposition:
    """
    Split a square invertible matrix into k·diag(a)·n.

    The i-th column of k·diag(a) is the projection of the i-th column of M to the orthogonal
    complement of the span of the previous columns, so the triangular diagonal comes out
    positive without any sign fix-up.
    """
    M = as_matrix(M)
    rows, cols = M.shape
    if rows != cols:
        raise DimensionMismatch(f"KAN decomposition needs a square matrix, got {rows}x{cols}")
    scale = float(np.max(np.abs(M)))
    det = float(np.linalg.det(M))
    if scale == 0.0 or abs(det) <= TAU_DET * scale ** rows:
        raise SingularMatrix(f"Matrix is singular (|det| = {abs(det):.3e})")

    k, R = gram_schmidt(M)
    a = np.diag(R).copy()
    n = R / a[:, None]
    n[np.tril_indices(rows, -1)] = 0.0
    np.fill_diagonal(n, 1.0)
    return KanDecomposition(k=k, a=a, n=n)


def matrix_exp(X: Any) -> np.ndarray:
    """Scaling and squaring with a truncated Taylor series; accepts stacks (..., d, d)."""
    X = _as_square_stack(X)
    norm = float(np.max(np.abs(X).sum(axis=-2))) if X.size else 0.0
    squarings = 0
    if norm > _EXP_SCALE_THETA:
        squarings = int(math.ceil(math.log2(norm / _EXP_SCALE_THETA)))
    A = X / (2.0 ** squarings)

    result = _identity_like(X)
    term = _identity_like(X)
    for k in range(1, _EXP_SERIES_DEGREE + 1):
        term = term @ A / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def _principal_sqrt(M: np.ndarray) -> np.ndarray:
    # Denman-Beavers iteration
    Y = M.copy()
    Z = _identity_like(M)
    for _ in range(_SQRT_MAX_ITERATIONS):
        Y_next = 0.5 * (Y + np.linalg.inv(Z))
        Z = 0.5 * (Z + np.linalg.inv(Y))
        change = float(np.max(np.abs(Y_next - Y)))
        Y = Y_next
        if change <= 1e-16:
            break
    return Y


def operator_norm(M: np.ndarray) -> np.ndarray:
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def matrix_log(M: Any) -> np.ndarray:
    """
    Principal logarithm of matrices near the identity (‖M - I‖ < 1 in operator norm).

    Repeated square roots bring M close to I, then the Mercator series is summed.
    """
    M = _as_square_stack(M)
    distance = operator_norm(M - _identity_like(M))
    if np.any(distance >= 1.0):
        raise OutOfConvergenceRegion(
            f"matrix_log needs ||M - I|| < 1, got {float(np.max(distance)):.4f}"
        )

    roots = 0
    A = M
    while float(np.max(operator_norm(A - _identity_like(A)))) > _LOG_SCALE_THETA:
        A = _principal_sqrt(A)
        roots += 1

    E = A - _identity_like(A)
    result = np.zeros_like(E)
    power = _identity_like(E)
    for j in range(1, _LOG_SERIES_TERMS + 1):
        power = power @ E
        result = result + ((-1.0) ** (j + 1)) * power / j
    return result * (2.0 ** roots)


def integer_determinant(U: Any) -> int:
    """Exact determinant of an integer matrix (fraction-free Bareiss elimination)."""
    rows = [[int(v) for v in row] for row in np.asarray(U, dtype=object)]
    n = len(rows)
    if any(len(row) != n for row in rows):
        raise DimensionMismatch("integer_determinant needs a square matrix")
    if n == 0:
        return 1
    sign = 1
    previous = 1
    for k in range(n - 1):
        if rows[k][k] == 0:
            pivot = next((i for i in range(k + 1, n) if rows[i][k] != 0), None)
            if pivot is None:
                return 0
            rows[k], rows[pivot] = rows[pivot], rows[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                rows[i][j] = (rows[i][j] * rows[k][k] - rows[i][k] * rows[k][j]) // previous
        previous = rows[k][k]
    return sign * rows[n - 1][n - 1]


def parse_matrix_text(text: str) -> np.ndarray:
    """Read the 'rows cols' header format followed by whitespace separated rows."""
    lines = [line.strip() for line in text.splitlines()]
    lines = [line for line in lines if line and not line.startswith('#')]
    if not lines:
        raise ValidationError("Matrix text is empty")
    try:
        header = lines[0].split()
        rows, cols = int(header[0]), int(header[1])
        body = [[float(token) for token in line.split()] for line in lines[1:]]
    except (IndexError, ValueError) as e:
        raise ValidationError(f"Malformed matrix text: {e}")
    if rows <= 0 or cols <= 0:
        raise DimensionMismatch(f"Matrix header must be positive, got {rows} {cols}")
    if len(body) != rows or any(len(row) != cols for row in body):
        raise DimensionMismatch(f"Matrix body does not match header {rows}x{cols}")
    return as_matrix(body)


def format_matrix_text(M: np.ndarray) -> str:
    M = as_matrix(M)
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines.extend(' '.join(repr(float(v)) for v in row) for row in M)
    return '\n'.join(lines) + '\n'


def matrix_from_document(doc: Dict[str, Any]) -> np.ndarray:
    try:
        rows, cols, entries = int(doc['rows']), int(doc['cols']), list(doc['entries'])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"Matrix document needs rows, cols and entries: {e}")
    if len(entries) != rows * cols:
        raise DimensionMismatch(f"Expected {rows * cols} entries, got {len(entries)}")
    return as_matrix(np.array(entries, dtype=float).reshape(rows, cols))


def matrix_to_document(M: Any) -> Dict[str, Any]:
    M = np.asarray(M)
    entries: List[Any] = [int(v) if M.dtype == object else float(v) for v in M.ravel()]
    return {'rows': int(M.shape[0]), 'cols': int(M.shape[1]), 'entries': entries}


def orthonormalize(elements: Sequence[np.ndarray]) -> np.ndarray:
    """Gram-Schmidt a list of equally shaped matrices w.r.t. the Frobenius inner product."""
    stack = np.array(elements, dtype=float)
    flat = stack.reshape(stack.shape[0], -1).T
    Q, _ = gram_schmidt(flat)
    return Q.T.reshape(stack.shape)
