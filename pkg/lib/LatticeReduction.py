import math
import logging

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from .Errors import DimensionMismatch, NumericError, RankTooLarge, SingularBlock, SingularMatrix
from .LinalgCore import (
    KanDecomposition, TAU_DET, as_matrix, gram_schmidt, integer_determinant, kan_decompose,
    matrix_to_document
)

logger = logging.getLogger(__name__)

MAX_RANK = 8
LLL_DELTA = 0.99
TAU_RED = 1e-9
ACTIVE_TOL = 1e-6

_SHORTEST_SLACK = 1e-9
_TIE_TOL = 1e-9
_LLL_MAX_SWAPS = 100_000


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """Columns v_1..v_m of an invertible matrix."""
    basis: np.ndarray

    def __post_init__(self):
        M = as_matrix(self.basis)
        if M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"Lattice basis must be square, got {M.shape[0]}x{M.shape[1]}")
        scale = float(np.max(np.abs(M)))
        if scale == 0.0 or abs(float(np.linalg.det(M))) <= TAU_DET * scale ** M.shape[0]:
            raise SingularMatrix("Lattice basis is singular")
        object.__setattr__(self, 'basis', M)

    @property
    def m(self) -> int:
        return int(self.basis.shape[1])

    @property
    def covolume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    reduced: np.ndarray
    transform: np.ndarray
    kan: KanDecomposition

    @property
    def m(self) -> int:
        return int(self.reduced.shape[1])

    @property
    def a(self) -> np.ndarray:
        return self.kan.a

    @property
    def n_coeffs(self) -> np.ndarray:
        return self.kan.n

    @property
    def phi(self) -> np.ndarray:
        return self.kan.k

    def to_document(self) -> Dict[str, Any]:
        return {
            'reduced': matrix_to_document(self.reduced),
            'transform': matrix_to_document(self.transform),
            'a': [float(v) for v in self.a],
            'n_coeffs': matrix_to_document(self.n_coeffs),
            'phi': matrix_to_document(self.phi),
        }


@dataclass(frozen=True)
class Violation:
    inequality: str
    lhs: float
    rhs: float


@dataclass(frozen=True)
class SiegelMembershipReport:
    violations: Tuple[Violation, ...]
    candidate_vectors_tested: int
    active_inequalities: Tuple[str, ...] = ()

    @property
    def member(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class FundamentalDomainReport:
    siegel: SiegelMembershipReport
    sign_violations: Tuple[Violation, ...]
    active_inequalities: Tuple[str, ...]

    @property
    def member(self) -> bool:
        return self.siegel.member and not self.sign_violations

    @property
    def generic(self) -> bool:
        return not self.active_inequalities


def as_lattice_basis(basis: Union[LatticeBasis, Any]) -> LatticeBasis:
    return basis if isinstance(basis, LatticeBasis) else LatticeBasis(basis)


def _check_rank(m: int) -> None:
    if m > MAX_RANK:
        raise RankTooLarge(f"Rank {m} exceeds the enumeration limit {MAX_RANK}")


def _integer_identity(m: int) -> np.ndarray:
    T = np.zeros((m, m), dtype=object)
    for i in range(m):
        for j in range(m):
            T[i, j] = 1 if i == j else 0
    return T


def _to_float(T: np.ndarray) -> np.ndarray:
    return np.array(T, dtype=float)


def lll_reduce(basis: np.ndarray, delta: float = LLL_DELTA) -> Tuple[np.ndarray, np.ndarray]:
    """
    LLL-reduce the columns of `basis`.

    Returns:
        Tuple[np.ndarray, np.ndarray]: the reduced basis and the exact integer transform T (object
        dtype) with reduced = basis @ T.
    """
    B0 = np.asarray(basis, dtype=float)
    m = B0.shape[1]
    T = _integer_identity(m)
    B = B0.copy()
    _, R = gram_schmidt(B)
    k = 1
    swaps = 0
    while k < m:
        for j in range(k - 1, -1, -1):
            q = int(round(R[j, k] / R[j, j]))
            if q:
                T[:, k] = T[:, k] - q * T[:, j]
                R[:, k] -= q * R[:, j]
        B[:, k] = B0 @ _to_float(T[:, k])
        mu = R[k - 1, k] / R[k - 1, k - 1]
        if R[k, k] ** 2 >= (delta - mu ** 2) * R[k - 1, k - 1] ** 2:
            k += 1
            continue
        B[:, [k - 1, k]] = B[:, [k, k - 1]]
        T[:, [k - 1, k]] = T[:, [k, k - 1]]
        _, R = gram_schmidt(B)
        k = max(k - 1, 1)
        swaps += 1
        if swaps > _LLL_MAX_SWAPS:
            raise NumericError("LLL did not terminate; basis is numerically degenerate")
    return B, T


def enumerate_short_vectors(R: np.ndarray, radius: float) -> Tuple[List[Tuple[int, ...]], int]:
    """
    All nonzero integer x with ||R x|| <= radius for upper triangular R (Fincke-Pohst).

    Returns the vectors and the number of enumeration nodes visited.
    """
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    bound = radius * radius * (1.0 + 1e-12)
    x = [0] * m
    found: List[Tuple[int, ...]] = []
    nodes = 0

    def descend(level: int, partial: float) -> None:
        nonlocal nodes
        diagonal = R[level, level]
        center = -sum(R[level, j] * x[j] for j in range(level + 1, m)) / diagonal
        remaining = bound - partial
        if remaining < 0:
            return
        span = math.sqrt(remaining) / abs(diagonal)
        for value in range(math.ceil(center - span - 1e-12), math.floor(center + span + 1e-12) + 1):
            nodes += 1
            x[level] = value
            total = partial + (diagonal * (value - center)) ** 2
            if total > bound:
                continue
            if level == 0:
                if any(x):
                    found.append(tuple(x))
            else:
                descend(level - 1, total)
        x[level] = 0

    descend(m - 1, 0.0)
    return found, nodes


def _sign_normalized(x: np.ndarray, point: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scale = max(float(np.max(np.abs(point))), np.finfo(float).tiny)
    for value in point:
        if abs(value) > 1e-12 * scale:
            if value < 0:
                return -x, -point
            break
    return x, point


def _shortest_in(G: np.ndarray) -> Tuple[np.ndarray, float, int]:
    """Shortest nonzero vector of the lattice spanned by the columns of G, as integer coefficients."""
    B, T = lll_reduce(G)
    _, R = gram_schmidt(B)
    radius = float(np.min(np.linalg.norm(B, axis=0))) * (1.0 + _SHORTEST_SLACK)
    found, nodes = enumerate_short_vectors(R, radius)

    candidates = []
    for y in found:
        x = T.dot(np.array(y, dtype=object))
        point = G @ _to_float(x)
        candidates.append((float(np.linalg.norm(point)), x, point))
    shortest = min(c[0] for c in candidates)

    # tie-break: point with positive leading entry, then fewest late basis vectors
    ties = []
    for length, x, point in candidates:
        if length <= shortest * (1.0 + _TIE_TOL):
            x, point = _sign_normalized(x, point)
            key = (tuple(abs(int(v)) for v in reversed(x)), tuple(int(v) for v in x))
            ties.append((key, x, length))
    key, x, length = min(ties, key=lambda t: t[0])
    return x, length, nodes


def shortest_vector(basis: Union[LatticeBasis, Any]) -> Tuple[np.ndarray, float]:
    lattice = as_lattice_basis(basis)
    _check_rank(lattice.m)
    x, length, nodes = _shortest_in(lattice.basis)
    logger.debug(f"Shortest vector {list(x)} of length {length:.6g} after {nodes} enumeration nodes")
    return x, length


def complete_to_unimodular(y: Sequence[int]) -> np.ndarray:
    """An integer matrix with determinant +-1 whose first column is the primitive vector y."""
    v = [int(value) for value in y]
    n = len(v)
    U = _integer_identity(n)
    # invariant: U @ v == y
    while sum(1 for value in v if value != 0) > 1:
        nonzero = [i for i in range(n) if v[i] != 0]
        k = min(nonzero, key=lambda i: abs(v[i]))
        for i in nonzero:
            if i == k:
                continue
            q = v[i] // v[k]
            v[i] -= q * v[k]
            U[:, k] = U[:, k] + q * U[:, i]
    pivots = [i for i in range(n) if v[i] != 0]
    if len(pivots) != 1 or abs(v[pivots[0]]) != 1:
        raise NumericError(f"Vector {list(y)} is not primitive")
    k = pivots[0]
    if k != 0:
        U[:, [0, k]] = U[:, [k, 0]]
        v[0], v[k] = v[k], v[0]
    if v[0] == -1:
        U[:, 0] = -U[:, 0]
    return U


def reduce_basis(basis: Union[LatticeBasis, Any]) -> ReducedBasis:
    """
    Build the reduced basis column by column: each v_j is a lattice vector whose projection
    orthogonal to v_1..v_{j-1} is as short as possible, then size-reduce so |n_ij| <= 1/2.
    """
    lattice = as_lattice_basis(basis)
    m = lattice.m
    _check_rank(m)
    M = lattice.basis
    T = _integer_identity(m)

    for j in range(m):
        _, R = gram_schmidt(M @ _to_float(T))
        y, length, nodes = _shortest_in(R[j:, j:])
        U = complete_to_unimodular(y)
        T[:, j:] = T[:, j:].dot(U)
        logger.debug(f"Level {j + 1}: projected length {length:.6g} ({nodes} nodes)")

    _, R = gram_schmidt(M @ _to_float(T))
    for j in range(1, m):
        for i in range(j - 1, -1, -1):
            q = int(round(R[i, j] / R[i, i]))
            if q:
                T[:, j] = T[:, j] - q * T[:, i]
                R[:, j] -= q * R[:, i]

    det = integer_determinant(T)
    if det == -1:
        T[:, 0] = -T[:, 0]
        det = 1
    if det != 1:
        raise NumericError(f"Change of basis lost unimodularity (det = {det})")

    reduced = M @ _to_float(T)
    return ReducedBasis(reduced=reduced, transform=T, kan=kan_decompose(reduced))


def reduce_many(bases: Sequence[Any], threads: int = 1) -> List[ReducedBasis]:
    if threads <= 1:
        return [reduce_basis(b) for b in bases]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(reduce_basis, bases))


def is_in_reduced_siegel_set(M: Any, tol: float = TAU_RED) -> SiegelMembershipReport:
    """
    Check the off-diagonal bounds |n_ij| <= 1/2 and, level by level, that a_j is the minimum of the
    lattice spanned by the lower right block of z = diag(a) n. Every integer vector shorter than a_j
    is found by enumeration, so the candidate set is exact.
    """
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("Membership test needs a square matrix")
    m = M.shape[0]
    _check_rank(m)
    kan = kan_decompose(M)
    z = kan.an()

    violations: List[Violation] = []
    active: List[str] = []
    for i in range(m):
        for j in range(i + 1, m):
            value = abs(float(kan.n[i, j]))
            if value > 0.5 + tol:
                violations.append(Violation(f"|n[{i + 1},{j + 1}]| <= 1/2", value, 0.5))
            elif value >= 0.5 - ACTIVE_TOL:
                active.append(f"|n[{i + 1},{j + 1}]| = 1/2")

    tested = 0
    for j in range(m - 1):
        block = z[j:, j:]
        target = float(kan.a[j])
        B, T = lll_reduce(block)
        _, R = gram_schmidt(B)
        found, nodes = enumerate_short_vectors(R, target * (1.0 + ACTIVE_TOL))
        tested += nodes
        seen = set()
        for y in found:
            w = T.dot(np.array(y, dtype=object))
            key = tuple(int(v) for v in w)
            if key in seen or tuple(-v for v in key) in seen:
                continue
            seen.add(key)
            if abs(key[0]) == 1 and not any(key[1:]):
                continue
            length = float(np.linalg.norm(block @ _to_float(w)))
            if length < target * (1.0 - tol):
                violations.append(Violation(f"a[{j + 1}] <= |proj(z v)| for v = {list(key)}", target, length))
            elif length <= target * (1.0 + ACTIVE_TOL):
                active.append(f"a[{j + 1}] = |proj(z v)| for v = {list(key)}")

    report = SiegelMembershipReport(tuple(violations), tested, tuple(active))
    logger.debug(f"Siegel membership: member={report.member}, {len(violations)} violations, {tested} candidates")
    return report


def _constrained_columns(m: int) -> List[int]:
    # 0-indexed columns whose first-row entry must be non-negative
    first = 2 if m % 2 == 0 else 1
    return list(range(first, m))


def _leading_sign(vector: np.ndarray) -> int:
    scale = max(float(np.max(np.abs(vector))), np.finfo(float).tiny)
    for value in vector:
        if abs(value) > 1e-12 * scale:
            return 1 if value > 0 else -1
    return 1


def canonicalize(rb: ReducedBasis, tol: float = TAU_RED) -> ReducedBasis:
    """
    Apply an even number of column sign flips so the first-row conditions of the fundamental domain
    hold; leftover freedom makes the first nonzero entry of each phi_j positive.
    """
    m = rb.m
    n = rb.n_coeffs
    phi = rb.phi
    constrained = set(_constrained_columns(m))

    signs = [1] * m
    signs[0] = _leading_sign(phi[:, 0])
    free: List[int] = []
    for j in range(1, m):
        if j in constrained and abs(n[0, j]) > tol:
            signs[j] = signs[0] * (1 if n[0, j] > 0 else -1)
        else:
            free.append(j)
            signs[j] = _leading_sign(phi[:, j])

    if int(np.prod(signs)) == -1:
        if free:
            signs[free[-1]] *= -1
        else:
            signs = [-s for s in signs]

    S = np.array(signs, dtype=float)
    T = rb.transform.copy()
    for j, s in enumerate(signs):
        if s == -1:
            T[:, j] = -T[:, j]
    reduced = rb.reduced * S[None, :]
    kan = KanDecomposition(k=rb.kan.k * S[None, :], a=rb.a.copy(), n=rb.n_coeffs * np.outer(S, S))
    return ReducedBasis(reduced=reduced, transform=T, kan=kan)


def in_fundamental_domain(rb: ReducedBasis, tol: float = TAU_RED) -> FundamentalDomainReport:
    siegel = is_in_reduced_siegel_set(rb.reduced, tol)
    sign_violations = []
    active = list(siegel.active_inequalities)
    for j in _constrained_columns(rb.m):
        value = float(rb.n_coeffs[0, j])
        if value < -tol:
            sign_violations.append(Violation(f"n[1,{j + 1}] >= 0", value, 0.0))
        elif abs(value) <= ACTIVE_TOL:
            active.append(f"n[1,{j + 1}] = 0")
    return FundamentalDomainReport(siegel=siegel, sign_violations=tuple(sign_violations), active_inequalities=tuple(active))


def shape_representative(rb: ReducedBasis) -> np.ndarray:
    """diag(a) n of the canonical form, rescaled to determinant one."""
    canonical = canonicalize(rb)
    z = np.diag(canonical.a) @ canonical.n_coeffs
    return z / float(np.prod(canonical.a)) ** (1.0 / canonical.m)


def duality_map(A: Any, B: Any) -> Tuple[np.ndarray, np.ndarray]:
    """(A | B) -> ((I - P_A) B | A) where P_A is the orthogonal projector onto the span of A."""
    A = as_matrix(A)
    B = as_matrix(B)
    n, d = A.shape
    if B.shape[0] != n or d + B.shape[1] != n:
        raise DimensionMismatch(f"Blocks {A.shape} and {B.shape} do not form a square matrix")
    gram = A.T @ A
    scale = max(float(np.max(np.abs(gram))), np.finfo(float).tiny)
    if abs(float(np.linalg.det(gram))) <= TAU_DET * scale ** d:
        raise SingularBlock("A^T A is singular")
    projected = B - A @ np.linalg.solve(gram, A.T @ B)
    return projected, A.copy()


def same_lattice(G1: Any, G2: Any, tol: float = 1e-8) -> bool:
    """True if G2 = G1 U for an integer matrix U with det +-1."""
    G1 = as_matrix(G1)
    G2 = as_matrix(G2)
    if G1.shape != G2.shape:
        return False
    try:
        X = np.linalg.solve(G1, G2)
    except np.linalg.LinAlgError:
        raise SingularMatrix("First generator matrix is singular")
    rounded = np.round(X)
    if np.max(np.abs(X - rounded)) > tol * max(1.0, float(np.max(np.abs(X)))):
        return False
    return abs(integer_determinant(rounded.astype(int))) == 1
