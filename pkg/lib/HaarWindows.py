import copy
import math
import logging

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .Errors import DimensionMismatch, ValidationError
from .LinalgCore import gram_schmidt

logger = logging.getLogger(__name__)


class WindowKind(Enum):
    TRANSLATION = "translation"
    DIAGONAL = "diagonal"
    UNIPOTENT = "unipotent"
    ROTATION = "rotation"
    IWASAWA = "iwasawa"
    PRODUCT = "product"


@dataclass(frozen=True, eq=False)
class WindowSample:
    coordinates: np.ndarray
    matrices: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return int(self.weights.shape[0])


def traceless_diagonal_basis(m: int) -> np.ndarray:
    """Rows form an orthonormal basis of {t in R^m : sum(t) = 0}."""
    if m < 2:
        raise DimensionMismatch(f"Diagonal subgroup needs m >= 2, got {m}")
    simple_roots = np.zeros((m, m - 1))
    for i in range(m - 1):
        simple_roots[i, i] = 1.0
        simple_roots[i + 1, i] = -1.0
    Q, _ = gram_schmidt(simple_roots)
    return Q.T


def upper_index_pairs(m: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


class BaseHaarWindow(ABC):
    """
    A bounded coordinate box with a Haar density.

    Samples are drawn uniformly from the box, so the weight of a sample is the Haar density at its
    coordinates and `volume * mean(weight * f)` estimates the Haar integral of f over the window.
    """
    kind: WindowKind
    covers_group = False

    def __init__(self, lower: Sequence[float], upper: Sequence[float], periodic: Optional[Sequence[bool]] = None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.periodic = tuple(periodic) if periodic is not None else (False,) * self.lower.shape[0]
        self._check_bounds()

    def _check_bounds(self) -> None:
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise DimensionMismatch(f"Window bounds must be equal length vectors, got {self.lower.shape} and {self.upper.shape}")
        if len(self.periodic) != self.lower.shape[0]:
            raise DimensionMismatch("Periodic flags must match the window dimension")
        if not np.all(self.upper > self.lower):
            raise ValidationError(f"Window upper bounds must exceed lower bounds: {self.lower} / {self.upper}")

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    @abstractmethod
    def ambient_dim(self) -> int:
        pass

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def sample(self, rng: np.random.Generator, count: int) -> WindowSample:
        coordinates = self.sample_coordinates(rng, count)
        return WindowSample(coordinates=coordinates, matrices=self.to_matrices(coordinates), weights=self.density(coordinates))

    def sample_coordinates(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def density(self, coordinates: np.ndarray) -> np.ndarray:
        return np.ones(coordinates.shape[0])

    def contains(self, coordinates: np.ndarray) -> np.ndarray:
        inside = np.ones(coordinates.shape[0], dtype=bool)
        for axis in range(self.dim):
            if self.periodic[axis]:
                continue
            inside &= (coordinates[:, axis] >= self.lower[axis]) & (coordinates[:, axis] <= self.upper[axis])
        return inside

    def with_bounds(self, lower: Sequence[float], upper: Sequence[float]) -> 'BaseHaarWindow':
        window = copy.copy(self)
        window.lower = np.asarray(lower, dtype=float)
        window.upper = np.asarray(upper, dtype=float)
        window._check_bounds()
        return window

    def describe(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'lower': [float(v) for v in self.lower],
            'upper': [float(v) for v in self.upper],
            'volume': self.volume,
        }

    @abstractmethod
    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        pass


class TranslationWindow(BaseHaarWindow):
    """R^n embedded as affine translations [[I, x], [0, 1]]; Lebesgue measure is Haar."""
    kind = WindowKind.TRANSLATION

    def __init__(self, n: int, lower: Optional[Sequence[float]] = None, upper: Optional[Sequence[float]] = None):
        if n < 1:
            raise DimensionMismatch(f"Euclidean dimension must be positive, got {n}")
        self.n = n
        super().__init__(lower if lower is not None else [-2.0] * n, upper if upper is not None else [2.0] * n)

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        matrices = np.broadcast_to(np.eye(self.n + 1), (coordinates.shape[0], self.n + 1, self.n + 1)).copy()
        matrices[:, :self.n, self.n] = coordinates
        return matrices

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        return np.asarray(matrices)[:, :self.n, self.n].copy()


class DiagonalWindow(BaseHaarWindow):
    """Positive diagonal det-1 matrices in orthonormal Lie coordinates; Haar is Lebesgue there."""
    kind = WindowKind.DIAGONAL

    def __init__(self, m: int, lower: Optional[Sequence[float]] = None, upper: Optional[Sequence[float]] = None):
        self.m = m
        self.basis = traceless_diagonal_basis(m)
        super().__init__(lower if lower is not None else [-1.0] * (m - 1), upper if upper is not None else [1.0] * (m - 1))

    @property
    def ambient_dim(self) -> int:
        return self.m

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        diagonals = np.exp(coordinates @ self.basis)
        matrices = np.zeros((coordinates.shape[0], self.m, self.m))
        idx = np.arange(self.m)
        matrices[:, idx, idx] = diagonals
        return matrices

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        diagonals = np.diagonal(np.asarray(matrices), axis1=-2, axis2=-1)
        with np.errstate(divide='ignore', invalid='ignore'):
            logs = np.log(np.abs(diagonals))
        return logs @ self.basis.T


class UnipotentWindow(BaseHaarWindow):
    kind = WindowKind.UNIPOTENT

    def __init__(self, m: int, lower: Optional[Sequence[float]] = None, upper: Optional[Sequence[float]] = None):
        if m < 2:
            raise DimensionMismatch(f"Unipotent subgroup needs m >= 2, got {m}")
        self.m = m
        self.pairs = upper_index_pairs(m)
        count = len(self.pairs)
        super().__init__(lower if lower is not None else [-1.0] * count, upper if upper is not None else [1.0] * count)

    @property
    def ambient_dim(self) -> int:
        return self.m

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        matrices = np.broadcast_to(np.eye(self.m), (coordinates.shape[0], self.m, self.m)).copy()
        for axis, (i, j) in enumerate(self.pairs):
            matrices[:, i, j] = coordinates[:, axis]
        return matrices

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        matrices = np.asarray(matrices)
        return np.stack([matrices[:, i, j] for i, j in self.pairs], axis=1)


class RotationWindow(BaseHaarWindow):
    """
    The whole of SO(m). For m = 2 the coordinate is the rotation angle in [0, 2*pi); for larger m the
    coordinates are the flattened matrix entries and samples come from QR of a Gaussian matrix.
    """
    kind = WindowKind.ROTATION
    covers_group = True

    def __init__(self, m: int, lower: Optional[Sequence[float]] = None, upper: Optional[Sequence[float]] = None):
        if m < 2:
            raise DimensionMismatch(f"Rotation group needs m >= 2, got {m}")
        self.m = m
        if m == 2:
            super().__init__([0.0], [2.0 * math.pi], periodic=[True])
        else:
            size = m * m
            super().__init__([-1.0] * size, [1.0] * size, periodic=[True] * size)

    @property
    def ambient_dim(self) -> int:
        return self.m

    @property
    def volume(self) -> float:
        return 2.0 * math.pi if self.m == 2 else 1.0

    def with_bounds(self, lower: Sequence[float], upper: Sequence[float]) -> 'BaseHaarWindow':
        logger.warning("Rotation windows always cover the whole group; ignoring requested bounds")
        return self

    def sample_coordinates(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.m == 2:
            return super().sample_coordinates(rng, count)
        return self.from_matrices(self.haar_rotations(rng, count))

    def haar_rotations(self, rng: np.random.Generator, count: int) -> np.ndarray:
        gaussian = rng.standard_normal((count, self.m, self.m))
        Q, R = np.linalg.qr(gaussian)
        signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
        signs[signs == 0] = 1.0
        Q = Q * signs[:, None, :]
        flip = np.linalg.det(Q) < 0
        Q[flip, :, 0] *= -1.0
        return Q

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        if self.m == 2:
            theta = coordinates[:, 0]
            c, s = np.cos(theta), np.sin(theta)
            return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
        return coordinates.reshape(-1, self.m, self.m).copy()

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        matrices = np.asarray(matrices)
        if self.m == 2:
            theta = np.mod(np.arctan2(matrices[:, 1, 0], matrices[:, 0, 0]), 2.0 * math.pi)
            return theta[:, None]
        return matrices.reshape(matrices.shape[0], -1).copy()


class IwasawaWindow(BaseHaarWindow):
    """
    SL2(R) in coordinates (theta, t, x) with g = k(theta) diag(e^t, e^-t) n(x).

    In these coordinates Haar measure is e^{2t} dtheta dt dx.
    """
    kind = WindowKind.IWASAWA

    def __init__(self, lower: Optional[Sequence[float]] = None, upper: Optional[Sequence[float]] = None):
        default_lower = [0.0, -1.0, -1.0]
        default_upper = [2.0 * math.pi, 1.0, 1.0]
        lower = list(lower) if lower is not None else default_lower
        upper = list(upper) if upper is not None else default_upper
        super().__init__(lower, upper, periodic=[True, False, False])

    @property
    def ambient_dim(self) -> int:
        return 2

    def density(self, coordinates: np.ndarray) -> np.ndarray:
        return np.exp(2.0 * coordinates[:, 1])

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        theta, t, x = coordinates[:, 0], coordinates[:, 1], coordinates[:, 2]
        c, s = np.cos(theta), np.sin(theta)
        a1, a2 = np.exp(t), np.exp(-t)
        # k @ [[a1, a1 x], [0, a2]]
        return np.stack([
            np.stack([c * a1, c * a1 * x - s * a2], axis=-1),
            np.stack([s * a1, s * a1 * x + c * a2], axis=-1),
        ], axis=-2)

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        matrices = np.asarray(matrices)
        first = matrices[:, :, 0]
        a1 = np.linalg.norm(first, axis=1)
        theta = np.mod(np.arctan2(first[:, 1], first[:, 0]), 2.0 * math.pi)
        unit = first / a1[:, None]
        projection = np.einsum('ni,ni->n', unit, matrices[:, :, 1])
        return np.stack([theta, np.log(a1), projection / a1], axis=1)


class ProductWindow(BaseHaarWindow):
    kind = WindowKind.PRODUCT

    def __init__(self, components: Sequence[BaseHaarWindow]):
        if not components:
            raise ValidationError("Product window needs at least one component")
        self.components = list(components)
        super().__init__(
            np.concatenate([w.lower for w in self.components]),
            np.concatenate([w.upper for w in self.components]),
            periodic=[flag for w in self.components for flag in w.periodic],
        )

    @property
    def covers_group(self) -> bool:
        return all(w.covers_group for w in self.components)

    @property
    def ambient_dim(self) -> int:
        return sum(w.ambient_dim for w in self.components)

    @property
    def volume(self) -> float:
        return float(np.prod([w.volume for w in self.components]))

    def _coordinate_slices(self) -> List[slice]:
        slices, start = [], 0
        for window in self.components:
            slices.append(slice(start, start + window.dim))
            start += window.dim
        return slices

    def _block_slices(self) -> List[slice]:
        slices, start = [], 0
        for window in self.components:
            slices.append(slice(start, start + window.ambient_dim))
            start += window.ambient_dim
        return slices

    def with_bounds(self, lower: Sequence[float], upper: Sequence[float]) -> 'BaseHaarWindow':
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if lower.shape[0] != self.dim or upper.shape[0] != self.dim:
            raise DimensionMismatch(f"Product window has {self.dim} coordinates")
        components = [w.with_bounds(lower[s], upper[s]) for w, s in zip(self.components, self._coordinate_slices())]
        return ProductWindow(components)

    def sample_coordinates(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return np.concatenate([w.sample_coordinates(rng, count) for w in self.components], axis=1)

    def density(self, coordinates: np.ndarray) -> np.ndarray:
        weights = np.ones(coordinates.shape[0])
        for window, s in zip(self.components, self._coordinate_slices()):
            weights = weights * window.density(coordinates[:, s])
        return weights

    def to_matrices(self, coordinates: np.ndarray) -> np.ndarray:
        size = self.ambient_dim
        matrices = np.zeros((coordinates.shape[0], size, size))
        for window, cs, bs in zip(self.components, self._coordinate_slices(), self._block_slices()):
            matrices[:, bs, bs] = window.to_matrices(coordinates[:, cs])
        return matrices

    def from_matrices(self, matrices: np.ndarray) -> np.ndarray:
        matrices = np.asarray(matrices)
        parts = [w.from_matrices(matrices[:, bs, bs]) for w, bs in zip(self.components, self._block_slices())]
        return np.concatenate(parts, axis=1)

    def describe(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'components': [w.describe() for w in self.components],
            'volume': self.volume,
        }


class HaarWindowFactory:
    _windows = {
        WindowKind.TRANSLATION: TranslationWindow,
        WindowKind.DIAGONAL: DiagonalWindow,
        WindowKind.UNIPOTENT: UnipotentWindow,
        WindowKind.ROTATION: RotationWindow,
        WindowKind.IWASAWA: IwasawaWindow,
        WindowKind.PRODUCT: ProductWindow,
    }

    @classmethod
    def get_window(cls, kind: WindowKind, **kwargs: Any) -> BaseHaarWindow:
        window_class = cls._windows.get(kind)
        if window_class is None:
            raise ValidationError(f"Unsupported window kind: {kind}")
        return window_class(**kwargs)

    @classmethod
    def register_window(cls, kind: WindowKind, window_class: type) -> None:
        cls._windows[kind] = window_class
