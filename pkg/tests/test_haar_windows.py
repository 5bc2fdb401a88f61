import math

import numpy as np
import pytest

from lib.Errors import DimensionMismatch, ValidationError
from lib.HaarWindows import (
    DiagonalWindow, HaarWindowFactory, IwasawaWindow, ProductWindow, RotationWindow, TranslationWindow,
    UnipotentWindow, WindowKind, traceless_diagonal_basis
)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_translation_window_defaults_and_round_trip(rng):
    window = TranslationWindow(2)
    assert window.volume == pytest.approx(16.0)
    sample = window.sample(rng, 5)
    assert sample.matrices.shape == (5, 3, 3)
    assert np.allclose(window.from_matrices(sample.matrices), sample.coordinates)
    assert np.all(sample.weights == 1.0)
    assert np.all(window.contains(sample.coordinates))


def test_traceless_basis_is_orthonormal():
    basis = traceless_diagonal_basis(4)
    assert basis.shape == (3, 4)
    assert np.allclose(basis @ basis.T, np.eye(3))
    assert np.allclose(basis.sum(axis=1), 0.0)


def test_diagonal_window_gives_determinant_one(rng):
    window = DiagonalWindow(3)
    coordinates = window.sample_coordinates(rng, 10)
    matrices = window.to_matrices(coordinates)
    assert np.allclose(np.linalg.det(matrices), 1.0)
    assert np.allclose(window.from_matrices(matrices), coordinates)


def test_unipotent_window(rng):
    window = UnipotentWindow(3)
    assert window.dim == 3
    coordinates = window.sample_coordinates(rng, 4)
    matrices = window.to_matrices(coordinates)
    assert np.allclose(np.tril(matrices[0], -1), 0.0)
    assert np.allclose(window.from_matrices(matrices), coordinates)


def test_rotation_window_covers_group(rng):
    window = RotationWindow(2)
    assert window.covers_group
    assert window.volume == pytest.approx(2.0 * math.pi)
    assert window.with_bounds([0.0], [1.0]) is window

    big = RotationWindow(3)
    Q = big.to_matrices(big.sample_coordinates(rng, 20))
    assert np.allclose(np.einsum('nji,njk->nik', Q, Q), np.eye(3), atol=1e-10)
    assert np.allclose(np.linalg.det(Q), 1.0)


def test_iwasawa_window_coordinates_and_density(rng):
    window = IwasawaWindow()
    sample = window.sample(rng, 50)
    assert np.allclose(np.linalg.det(sample.matrices), 1.0)
    assert np.allclose(window.from_matrices(sample.matrices), sample.coordinates, atol=1e-10)
    assert np.allclose(sample.weights, np.exp(2.0 * sample.coordinates[:, 1]))
    assert window.periodic == (True, False, False)


def test_product_window_is_block_diagonal(rng):
    window = ProductWindow([TranslationWindow(1), RotationWindow(2)])
    assert window.dim == 2
    assert window.ambient_dim == 4
    assert not window.covers_group
    assert window.volume == pytest.approx(4.0 * 2.0 * math.pi)
    sample = window.sample(rng, 3)
    assert np.allclose(sample.matrices[:, :2, 2:], 0.0)
    assert np.allclose(window.from_matrices(sample.matrices), sample.coordinates)

    narrowed = window.with_bounds([-0.5, 0.0], [0.5, 2.0 * math.pi])
    assert narrowed.volume == pytest.approx(2.0 * math.pi)


def test_window_bounds_are_validated():
    with pytest.raises(ValidationError):
        TranslationWindow(1, lower=[1.0], upper=[0.0])
    with pytest.raises(DimensionMismatch):
        TranslationWindow(2).with_bounds([0.0], [1.0])


def test_factory_builds_registered_kinds():
    window = HaarWindowFactory.get_window(WindowKind.TRANSLATION, n=3)
    assert isinstance(window, TranslationWindow)
    assert window.dim == 3
