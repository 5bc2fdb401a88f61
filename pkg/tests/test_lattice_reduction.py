import itertools
import math

import numpy as np
import pytest

from hypothesis import given, settings, assume, strategies as st

from lib.Errors import NumericError, RankTooLarge, SingularBlock, SingularMatrix
from lib.LatticeReduction import (
    LatticeBasis, ReducedBasis, canonicalize, complete_to_unimodular, duality_map, enumerate_short_vectors,
    in_fundamental_domain, is_in_reduced_siegel_set, lll_reduce, reduce_basis, reduce_many, same_lattice,
    shape_representative, shortest_vector
)
from lib.LinalgCore import KanDecomposition, integer_determinant, kan_decompose

entries = st.integers(min_value=-5, max_value=5)


def integer_bases(min_m=2, max_m=4):
    return st.integers(min_value=min_m, max_value=max_m).flatmap(
        lambda m: st.lists(st.lists(entries, min_size=m, max_size=m), min_size=m, max_size=m)
    )


def unimodular_matrices(m):
    """Products of elementary column operations."""
    return st.lists(
        st.tuples(st.integers(0, m - 1), st.integers(0, m - 1), st.integers(-3, 3)), min_size=1, max_size=6
    )


def _apply_operations(m, operations):
    U = np.eye(m, dtype=np.int64)
    for i, j, q in operations:
        if i != j:
            U[:, j] += q * U[:, i]
    return U


def brute_force_shortest(M):
    """Shortest nonzero length using the box |x_i| <= |row i of M^-1| * (shortest column)."""
    inverse = np.linalg.inv(M)
    radius = float(np.min(np.linalg.norm(M, axis=0)))
    limits = [int(math.floor(np.linalg.norm(row) * radius + 1e-9)) for row in inverse]
    axes = [np.arange(-k, k + 1) for k in limits]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing='ij')], axis=1)
    grid = grid[np.any(grid != 0, axis=1)]
    return float(np.min(np.linalg.norm(grid @ M.T, axis=1)))


def random_integer_bases(m, count, seed):
    rng = np.random.default_rng(seed)
    bases = []
    while len(bases) < count:
        M = rng.integers(-5, 6, size=(m, m)).astype(float)
        if round(np.linalg.det(M)) != 0:
            bases.append(M)
    return bases


def random_basis_pairs(m, count, seed):
    """Gaussian bases, so ties between lattice vectors have probability zero, with a det 1 change of basis."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        M = rng.normal(size=(m, m))
        operations = zip(rng.integers(0, m, 6), rng.integers(0, m, 6), rng.integers(-3, 4, 6))
        pairs.append((M, _apply_operations(m, [(int(i), int(j), int(q)) for i, j, q in operations])))
    return pairs


def from_upper_triangular(M):
    M = np.asarray(M, dtype=float)
    return ReducedBasis(reduced=M, transform=np.eye(M.shape[0], dtype=int), kan=kan_decompose(M))


@settings(max_examples=150, deadline=None)
@given(integer_bases())
def test_reduced_basis_invariants(rows):
    M = np.array(rows, dtype=float)
    assume(abs(round(np.linalg.det(M))) >= 1)
    rb = reduce_basis(M)
    m = rb.m
    assert integer_determinant(rb.transform) == 1
    assert np.allclose(rb.reduced, M @ np.array(rb.transform, dtype=float))
    upper = np.triu(rb.n_coeffs, 1)
    assert np.max(np.abs(upper)) <= 0.5 + 1e-9
    for j in range(m - 1):
        assert rb.a[j + 1] >= math.sqrt(3.0) / 2.0 * rb.a[j] - 1e-9
    assert same_lattice(M, rb.reduced)


@settings(max_examples=80, deadline=None)
@given(integer_bases(2, 2))
def test_first_minimum_matches_enumeration(rows):
    M = np.array(rows, dtype=float)
    assume(abs(round(np.linalg.det(M))) >= 1)
    expected = brute_force_shortest(M)
    assert reduce_basis(M).a[0] == pytest.approx(expected, rel=1e-9)
    _, length = shortest_vector(M)
    assert length == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_reduced_basis_invariants_on_integer_corpus(m):
    growth = (2.0 / math.sqrt(3.0)) ** m
    rng = np.random.default_rng(100 + m)
    for M in random_integer_bases(m, 250, seed=m):
        rb = reduce_basis(M)
        a = rb.a
        assert integer_determinant(rb.transform) == 1
        assert np.max(np.abs(np.triu(rb.n_coeffs, 1))) <= 0.5 + 1e-9
        for j in range(m - 1):
            assert a[j + 1] >= math.sqrt(3.0) / 2.0 * a[j] - 1e-9
        assert a[0] == pytest.approx(brute_force_shortest(rb.reduced), rel=1e-9)
        for j in range(m):
            top = float(np.max(a[:j + 1]))
            assert top <= growth * a[j] + 1e-9
            x = np.zeros(m)
            x[:j + 1] = rng.normal(size=j + 1)
            assert np.linalg.norm(a * x) <= top * np.linalg.norm(x) + 1e-9


@settings(max_examples=60, deadline=None)
@given(integer_bases(2, 3), st.data())
def test_canonical_form_is_basis_independent(rows, data):
    M = np.array(rows, dtype=float)
    assume(abs(round(np.linalg.det(M))) >= 1)
    m = M.shape[0]
    U = _apply_operations(m, data.draw(unimodular_matrices(m)))
    first = canonicalize(reduce_basis(M))
    report = in_fundamental_domain(first)
    assert report.member
    if not report.generic:
        return
    second = canonicalize(reduce_basis(M @ U))
    assert np.allclose(first.reduced, second.reduced, atol=1e-6)


def test_canonical_form_is_unique_on_gaussian_corpus():
    pairs = [pair for m in (2, 3, 4, 5) for pair in random_basis_pairs(m, 50, seed=200 + m)]
    assert len(pairs) == 200
    flagged = 0
    for M, U in pairs:
        first = canonicalize(reduce_basis(M))
        report = in_fundamental_domain(first)
        assert report.member
        if not report.generic:
            flagged += 1
            continue
        second = canonicalize(reduce_basis(M @ U))
        assert np.allclose(first.reduced, second.reduced, atol=1e-6)
    assert flagged < 10


def test_canonicalize_makes_first_row_nonnegative():
    n = np.array([[1.0, -0.3, 0.2], [0.0, 1.0, 0.1], [0.0, 0.0, 1.0]])
    M = np.diag([1.0, 1.1, 1.2]) @ n
    rb = from_upper_triangular(M)
    assert not in_fundamental_domain(rb).member
    canonical = canonicalize(rb)
    assert canonical.n_coeffs[0, 1] == pytest.approx(0.3)
    assert canonical.n_coeffs[0, 2] == pytest.approx(0.2)
    assert canonical.n_coeffs[1, 2] == pytest.approx(-0.1)
    assert np.allclose(canonical.a, [1.0, 1.1, 1.2])
    # no free column, so the parity fix flips every sign
    assert np.allclose(canonical.reduced, M * np.array([-1.0, 1.0, -1.0]))
    assert integer_determinant(canonical.transform) == 1
    assert in_fundamental_domain(canonical).member


@pytest.mark.parametrize("m", [3, 4])
def test_canonical_form_ignores_negated_leading_pair(m):
    rb = reduce_basis(np.random.default_rng(30 + m).normal(size=(m, m)))
    S = np.ones(m)
    S[:2] = -1.0
    transform = rb.transform.copy()
    transform[:, :2] = -transform[:, :2]
    negated = ReducedBasis(
        reduced=rb.reduced * S, transform=transform,
        kan=KanDecomposition(k=rb.phi * S, a=rb.a.copy(), n=rb.n_coeffs * np.outer(S, S)),
    )
    first, second = canonicalize(rb), canonicalize(negated)
    assert np.array_equal(first.reduced, second.reduced)
    assert np.array_equal(first.n_coeffs, second.n_coeffs)
    assert np.array_equal(np.array(first.transform, dtype=np.int64), np.array(second.transform, dtype=np.int64))


def test_identity_basis():
    rb = canonicalize(reduce_basis(np.eye(2)))
    assert np.allclose(rb.a, [1.0, 1.0])
    report = in_fundamental_domain(rb)
    assert report.member
    assert not report.generic
    document = rb.to_document()
    assert document['transform']['entries'] == [1, 0, 0, 1]


def test_reduce_known_basis():
    M = np.array([[1.0, 100.0], [0.0, 1.0]])
    rb = reduce_basis(M)
    assert np.allclose(rb.a, [1.0, 1.0])
    assert np.allclose(np.abs(rb.reduced), np.eye(2))


def test_reduce_rejects_singular_and_large_rank():
    with pytest.raises(SingularMatrix):
        reduce_basis([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(RankTooLarge):
        reduce_basis(np.eye(9))
    with pytest.raises(SingularMatrix):
        LatticeBasis(np.zeros((2, 2)))


def test_reduce_many_matches_sequential():
    bases = [np.array([[2.0, 1.0], [1.0, 3.0]]), np.array([[1.0, 4.0, 0.0], [0.0, 1.0, 2.0], [1.0, 0.0, 1.0]])]
    sequential = reduce_many(bases, threads=1)
    threaded = reduce_many(bases, threads=2)
    for a, b in zip(sequential, threaded):
        assert np.array_equal(a.reduced, b.reduced)


def test_siegel_membership_violations():
    assert not is_in_reduced_siegel_set([[1.0, 0.8], [0.0, 1.0]]).member
    report = is_in_reduced_siegel_set([[1.0, 0.0], [0.0, 0.5]])
    assert not report.member
    assert report.candidate_vectors_tested > 0
    assert is_in_reduced_siegel_set([[1.0, 0.3], [0.0, 1.1]]).member


def test_lll_transform_is_unimodular():
    basis = np.array([[1.0, 7.0, 3.0], [0.0, 1.0, 5.0], [2.0, 0.0, 1.0]])
    B, T = lll_reduce(basis)
    assert abs(integer_determinant(T)) == 1
    assert np.allclose(B, basis @ np.array(T, dtype=float))


def test_enumerate_short_vectors_of_square_lattice():
    found, nodes = enumerate_short_vectors(np.eye(2), 1.0)
    assert sorted(found) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert nodes >= len(found)


def test_complete_to_unimodular():
    U = complete_to_unimodular([3, 5])
    assert [int(v) for v in U[:, 0]] == [3, 5]
    assert abs(integer_determinant(U)) == 1
    with pytest.raises(NumericError):
        complete_to_unimodular([2, 4])


def test_duality_map():
    A = np.array([[1.0], [1.0], [0.0]])
    B = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    projected, copy = duality_map(A, B)
    assert np.allclose(A.T @ projected, 0.0)
    assert np.array_equal(copy, A)
    with pytest.raises(SingularBlock):
        duality_map(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]), np.array([[1.0], [0.0], [0.0]]))


def test_same_lattice():
    M = np.array([[2.0, 1.0], [0.0, 3.0]])
    U = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert same_lattice(M, M @ U)
    assert not same_lattice(M, 2.0 * M)
    assert not same_lattice(M, M + 0.1)


def test_shape_representative_has_unit_determinant():
    rb = reduce_basis([[3.0, 1.0, 0.0], [0.0, 2.0, 1.0], [1.0, 0.0, 4.0]])
    assert np.linalg.det(shape_representative(rb)) == pytest.approx(1.0)


def test_exhaustive_small_unimodular_orbit():
    M = np.array([[3.0, 1.0], [0.0, 2.0]])
    base = canonicalize(reduce_basis(M))
    report = in_fundamental_domain(base)
    assert report.member and report.generic
    for a, b, c in itertools.product(range(-2, 3), repeat=3):
        if a == 0:
            continue
        if (1 + b * c) % a:
            continue
        U = np.array([[a, b], [c, (1 + b * c) // a]], dtype=float)
        other = canonicalize(reduce_basis(M @ U))
        assert np.allclose(other.reduced, base.reduced, atol=1e-9)


@pytest.mark.parametrize("columns, expected, length", [
    ([[1.0, 0.0], [0.0, 1.0]], [1, 0], 1.0),
    ([[1.0, 0.5], [0.0, 0.1]], [-1, 2], 0.2),
    ([[1.0, 0.5], [0.0, math.sqrt(3.0) / 2.0]], [1, 0], 1.0),
])
def test_shortest_vector_tie_break(columns, expected, length):
    x, found = shortest_vector(np.array(columns))
    assert [int(v) for v in x] == expected
    assert found == pytest.approx(length)


def test_duality_map_of_coordinate_axes():
    projected, copy = duality_map([[1.0], [0.0]], [[0.0], [1.0]])
    assert np.allclose(np.hstack([projected, copy]), [[0.0, 1.0], [1.0, 0.0]])


def test_duality_map_applied_twice():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 2))
    B = rng.normal(size=(4, 2))
    projected, A_copy = duality_map(A, B)
    back, projected_copy = duality_map(projected, A_copy)
    assert np.allclose(back, A, atol=1e-10)
    assert np.allclose(projected_copy, projected)

    # another basis of the lattice in the quotient projects to the same lattice
    U = np.array([[2.0, 1.0], [1.0, 1.0]])
    W = np.array([[1.0, -2.0], [3.0, 0.0]])
    other, _ = duality_map(A, B @ U + A @ W)
    complement = np.linalg.qr(A, mode='complete')[0][:, 2:]
    assert same_lattice(complement.T @ projected, complement.T @ other)


def test_shape_representative_depends_only_on_the_lattice():
    M = np.random.default_rng(11).normal(size=(3, 3))
    U = _apply_operations(3, [(0, 1, 2), (2, 0, -1), (1, 2, 3), (0, 2, 1)])
    rb = reduce_basis(M)
    assert in_fundamental_domain(canonicalize(rb)).generic
    shape = shape_representative(rb)
    assert np.allclose(shape_representative(reduce_basis(M @ U)), shape, atol=1e-8)
    assert np.allclose(np.tril(shape, -1), 0.0)
    assert np.all(np.diag(shape) > 0)
    assert np.linalg.det(shape) == pytest.approx(1.0)
    # re-reducing the representative lands on itself
    assert np.allclose(shape_representative(reduce_basis(shape)), shape, atol=1e-8)


def test_shape_representative_of_identity():
    assert np.allclose(shape_representative(reduce_basis(np.eye(3))), np.eye(3))
