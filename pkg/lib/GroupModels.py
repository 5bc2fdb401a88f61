import re
import math
import logging

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from scipy.linalg import svdvals

from .Errors import EpsilonTooLarge, NoWindow, UnknownGroup, ValidationError
from .HaarWindows import (
    BaseHaarWindow, HaarWindowFactory, WindowKind, WindowSample, traceless_diagonal_basis, upper_index_pairs
)
from .LinalgCore import matrix_exp, matrix_log, operator_norm, orthonormalize
from .SeedStream import DEFAULT_SEED, generator_for

logger = logging.getLogger(__name__)

EPSILON_CHART = 0.5


class GroupKind(Enum):
    EUCLIDEAN = "euclidean"
    DIAGONAL = "diagonal_A"
    UNIPOTENT = "unipotent_N"
    SPECIAL_ORTHOGONAL = "special_orthogonal"
    SPECIAL_LINEAR = "special_linear"
    PRODUCT = "product"


@dataclass(frozen=True, eq=False)
class GroupModel:
    name: str
    kind: GroupKind
    ambient_dim: int
    lie_basis: np.ndarray
    is_abelian: bool
    window: Optional[BaseHaarWindow] = None
    components: Tuple['GroupModel', ...] = ()
    epsilon_chart: float = EPSILON_CHART

    @property
    def dim(self) -> int:
        return int(self.lie_basis.shape[0])

    @property
    def is_euclidean(self) -> bool:
        return self.kind == GroupKind.EUCLIDEAN

    def identity(self) -> np.ndarray:
        return np.eye(self.ambient_dim)

    def require_window(self) -> BaseHaarWindow:
        if self.window is None:
            raise NoWindow(f"Group {self.name} has no bounded Haar window")
        return self.window

    def with_window(self, lower: Sequence[float], upper: Sequence[float]) -> 'GroupModel':
        return replace(self, window=self.require_window().with_bounds(lower, upper))

    def lie_coordinates(self, X: np.ndarray) -> np.ndarray:
        """Frobenius inner products with the orthonormal Lie basis; X is (..., D, D)."""
        return np.einsum('kab,...ab->...k', self.lie_basis, np.asarray(X, dtype=float))

    def lie_element(self, z: np.ndarray) -> np.ndarray:
        return np.einsum('...k,kab->...ab', np.asarray(z, dtype=float), self.lie_basis)

    def exp_coordinates(self, z: np.ndarray) -> np.ndarray:
        return matrix_exp(self.lie_element(z))

    def log_coordinates(self, matrices: np.ndarray) -> np.ndarray:
        return self.lie_coordinates(matrix_log(matrices))

    def component_slices(self) -> List[slice]:
        if not self.components:
            return [slice(0, self.dim)]
        slices, start = [], 0
        for component in self.components:
            slices.append(slice(start, start + component.dim))
            start += component.dim
        return slices

    def coordinate_norm(self, z: np.ndarray) -> np.ndarray:
        """Chart norm of Lie coordinates: Euclidean, or the max over factors for products."""
        z = np.asarray(z, dtype=float)
        return np.max(np.stack([np.linalg.norm(z[..., s], axis=-1) for s in self.component_slices()]), axis=0)

    def chart_norm(self, matrices: np.ndarray) -> np.ndarray:
        return self.coordinate_norm(self.log_coordinates(matrices))

    def constraint_residual(self, matrices: np.ndarray) -> np.ndarray:
        """Largest violation of the defining equations of the group for each matrix in the stack."""
        M = np.asarray(matrices, dtype=float)
        if M.ndim == 2:
            M = M[None]
        if self.kind == GroupKind.PRODUCT:
            residual = np.zeros(M.shape[0])
            mask = np.ones((self.ambient_dim, self.ambient_dim), dtype=bool)
            start = 0
            for component in self.components:
                block = slice(start, start + component.ambient_dim)
                residual = np.maximum(residual, component.constraint_residual(M[:, block, block]))
                mask[block, block] = False
                start += component.ambient_dim
            return np.maximum(residual, np.max(np.abs(M[:, mask]), axis=1, initial=0.0))
        if self.kind == GroupKind.EUCLIDEAN:
            n = self.ambient_dim - 1
            template = M.copy()
            template[:, :n, n] = 0.0
            return np.max(np.abs(template - np.eye(n + 1)), axis=(1, 2))
        if self.kind == GroupKind.DIAGONAL:
            off = M * (1.0 - np.eye(self.ambient_dim))
            diagonal = np.diagonal(M, axis1=1, axis2=2)
            negative = np.maximum(0.0, -np.min(diagonal, axis=1))
            return np.maximum.reduce([np.max(np.abs(off), axis=(1, 2)), np.abs(np.linalg.det(M) - 1.0), negative])
        if self.kind == GroupKind.UNIPOTENT:
            lower = np.tril(M) - np.eye(self.ambient_dim)
            return np.max(np.abs(lower), axis=(1, 2))
        if self.kind == GroupKind.SPECIAL_ORTHOGONAL:
            gram = np.swapaxes(M, 1, 2) @ M - np.eye(self.ambient_dim)
            return np.maximum(np.max(np.abs(gram), axis=(1, 2)), np.abs(np.linalg.det(M) - 1.0))
        return np.abs(np.linalg.det(M) - 1.0)

    def ad_matrices(self, matrices: np.ndarray) -> np.ndarray:
        """Matrices of Z -> g Z g^-1 in Lie-basis coordinates, for a stack of g."""
        g = np.asarray(matrices, dtype=float)
        g_inv = np.linalg.inv(g)
        conjugated = g[:, None] @ self.lie_basis[None] @ g_inv[:, None]
        return np.einsum('jab,niab->nji', self.lie_basis, conjugated)

    def ad_operator_norms(self, matrices: np.ndarray) -> np.ndarray:
        return operator_norm(self.ad_matrices(matrices))

    def describe(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'kind': self.kind.value,
            'ambient_dim': self.ambient_dim,
            'dim': self.dim,
            'is_abelian': self.is_abelian,
            'epsilon_chart': self.epsilon_chart,
            'window': self.window.describe() if self.window is not None else None,
        }


@dataclass(frozen=True, eq=False)
class GroupElement:
    group: GroupModel
    mat: np.ndarray

    def inverse(self) -> 'GroupElement':
        return GroupElement(self.group, np.linalg.inv(self.mat))

    def __matmul__(self, other: 'GroupElement') -> 'GroupElement':
        return GroupElement(self.group, self.mat @ other.mat)

    def log_norm(self) -> float:
        return float(self.group.chart_norm(self.mat[None])[0])


@dataclass(frozen=True)
class CoordinateBall:
    group: GroupModel
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError(f"Ball radius must be non-negative, got {self.epsilon}")
        if self.epsilon > self.group.epsilon_chart:
            raise EpsilonTooLarge(
                f"epsilon {self.epsilon} exceeds the chart radius {self.group.epsilon_chart} of {self.group.name}"
            )


@dataclass(frozen=True)
class AdditivityEstimate:
    c: float
    n_samples: int
    epsilon_max: float
    worst_ratio: float


# builtin models


def euclidean(n: int) -> GroupModel:
    if n < 1:
        raise UnknownGroup(f"euclidean({n}) is not a group")
    basis = np.zeros((n, n + 1, n + 1))
    for i in range(n):
        basis[i, i, n] = 1.0
    return GroupModel(
        name=f"R{n}", kind=GroupKind.EUCLIDEAN, ambient_dim=n + 1, lie_basis=basis, is_abelian=True,
        window=HaarWindowFactory.get_window(WindowKind.TRANSLATION, n=n),
    )


def diagonal_A(m: int) -> GroupModel:
    if m < 2:
        raise UnknownGroup(f"diagonal_A({m}) is trivial")
    vectors = traceless_diagonal_basis(m)
    basis = np.stack([np.diag(v) for v in vectors])
    return GroupModel(
        name=f"A{m}", kind=GroupKind.DIAGONAL, ambient_dim=m, lie_basis=basis, is_abelian=True,
        window=HaarWindowFactory.get_window(WindowKind.DIAGONAL, m=m),
    )


def unipotent_N(m: int) -> GroupModel:
    if m < 2:
        raise UnknownGroup(f"unipotent_N({m}) is trivial")
    elements = []
    for i, j in upper_index_pairs(m):
        E = np.zeros((m, m))
        E[i, j] = 1.0
        elements.append(E)
    return GroupModel(
        name=f"N{m}", kind=GroupKind.UNIPOTENT, ambient_dim=m, lie_basis=np.stack(elements), is_abelian=(m == 2),
        window=HaarWindowFactory.get_window(WindowKind.UNIPOTENT, m=m),
    )


def special_orthogonal(m: int) -> GroupModel:
    if m < 2:
        raise UnknownGroup(f"special_orthogonal({m}) is trivial")
    elements = []
    for i, j in upper_index_pairs(m):
        E = np.zeros((m, m))
        E[i, j] = 1.0 / math.sqrt(2.0)
        E[j, i] = -1.0 / math.sqrt(2.0)
        elements.append(E)
    return GroupModel(
        name=f"SO{m}", kind=GroupKind.SPECIAL_ORTHOGONAL, ambient_dim=m, lie_basis=np.stack(elements),
        is_abelian=(m == 2), window=HaarWindowFactory.get_window(WindowKind.ROTATION, m=m),
    )


def special_linear(m: int) -> GroupModel:
    if m != 2:
        raise UnknownGroup(f"special_linear({m}) is not a built-in; only SL2 is supported")
    H = np.array([[1.0, 0.0], [0.0, -1.0]])
    E = np.array([[0.0, 1.0], [0.0, 0.0]])
    F = np.array([[0.0, 0.0], [1.0, 0.0]])
    return GroupModel(
        name="SL2", kind=GroupKind.SPECIAL_LINEAR, ambient_dim=2, lie_basis=orthonormalize([H, E, F]),
        is_abelian=False, window=HaarWindowFactory.get_window(WindowKind.IWASAWA),
    )


def product(models: Sequence[GroupModel]) -> GroupModel:
    models = list(models)
    if not models:
        raise UnknownGroup("product() needs at least one factor")
    if len(models) == 1:
        return models[0]
    ambient = sum(g.ambient_dim for g in models)
    elements = []
    start = 0
    for g in models:
        for Z in g.lie_basis:
            embedded = np.zeros((ambient, ambient))
            embedded[start:start + g.ambient_dim, start:start + g.ambient_dim] = Z
            elements.append(embedded)
        start += g.ambient_dim
    windows = [g.window for g in models]
    window = None
    if all(w is not None for w in windows):
        window = HaarWindowFactory.get_window(WindowKind.PRODUCT, components=windows)
    return GroupModel(
        name='x'.join(g.name for g in models), kind=GroupKind.PRODUCT, ambient_dim=ambient,
        lie_basis=np.stack(elements), is_abelian=all(g.is_abelian for g in models), window=window,
        components=tuple(models),
    )


_NAME_PATTERNS = [
    (re.compile(r'^(?:R|euclidean\()(\d+)\)?$'), euclidean),
    (re.compile(r'^(?:A|diagonal_A\()(\d+)\)?$'), diagonal_A),
    (re.compile(r'^(?:N|unipotent_N\()(\d+)\)?$'), unipotent_N),
    (re.compile(r'^(?:SO|special_orthogonal\()(\d+)\)?$'), special_orthogonal),
    (re.compile(r'^(?:SL|special_linear\()(\d+)\)?$'), special_linear),
]


def builtin_group(name: str) -> GroupModel:
    """Parse names like 'R2', 'SO3', 'SL2' or products such as 'R1xSO2'."""
    if not isinstance(name, str) or not name.strip():
        raise UnknownGroup(f"Group name must be a non-empty string, got {name!r}")
    factors = [part.strip() for part in name.strip().split('x')]
    models = []
    for factor in factors:
        for pattern, constructor in _NAME_PATTERNS:
            match = pattern.match(factor)
            if match:
                models.append(constructor(int(match.group(1))))
                break
        else:
            raise UnknownGroup(f"Unknown group: {factor!r}")
    model = product(models)
    logger.debug(f"Built group model {model.name} (dim {model.dim}, ambient {model.ambient_dim})")
    return model


# sampling


def sample_ball_coordinates(group: GroupModel, epsilon: float, rng: np.random.Generator, count: int,
                            surface: bool = False) -> np.ndarray:
    """Uniform points of the epsilon-ball (or its sphere) in Lie coordinates, factor by factor for products."""
    CoordinateBall(group, epsilon)
    return _ball_coordinates(group, epsilon, rng, count, surface)


def _ball_coordinates(group: GroupModel, epsilon: float, rng: np.random.Generator, count: int,
                      surface: bool) -> np.ndarray:
    z = np.zeros((count, group.dim))
    for s in group.component_slices():
        width = s.stop - s.start
        direction = rng.standard_normal((count, width))
        norms = np.linalg.norm(direction, axis=1)
        norms[norms == 0.0] = 1.0
        direction /= norms[:, None]
        if surface:
            radius = np.full(count, float(epsilon))
        else:
            radius = epsilon * rng.uniform(size=count) ** (1.0 / width)
        z[:, s] = direction * radius[:, None]
    return z


def ball_sample_many(ball: CoordinateBall, rng: np.random.Generator, count: int, surface: bool = False) -> np.ndarray:
    z = sample_ball_coordinates(ball.group, ball.epsilon, rng, count, surface=surface)
    return ball.group.exp_coordinates(z)


def ball_sample(ball: CoordinateBall, rng: np.random.Generator) -> GroupElement:
    return GroupElement(ball.group, ball_sample_many(ball, rng, 1)[0])


def haar_sample_window_many(group: GroupModel, rng: np.random.Generator, count: int) -> WindowSample:
    return group.require_window().sample(rng, count)


def haar_sample_window(group: GroupModel, rng: np.random.Generator) -> Tuple[GroupElement, float]:
    sample = haar_sample_window_many(group, rng, 1)
    return GroupElement(group, sample.matrices[0]), float(sample.weights[0])


def ad_operator_norm(g: GroupElement) -> float:
    """Largest singular value of Ad_g in the orthonormal Lie basis."""
    ad = g.group.ad_matrices(np.asarray(g.mat, dtype=float)[None])[0]
    return float(svdvals(ad)[0])


def conjugation_radius(g: GroupElement, epsilon: float) -> float:
    """Radius of a coordinate ball that contains g O_eps g^-1."""
    return epsilon * ad_operator_norm(g)


def additivity_constant(group: GroupModel, n_samples: int = 100_000, seed: int = DEFAULT_SEED,
                        epsilon_max: float = 0.1) -> AdditivityEstimate:
    """
    Sampled estimate of c with O_eps O_delta inside O_{c(eps + delta)}.

    Perturbations are drawn on the spheres of radius eps and delta, where the ratio is largest.
    """
    if n_samples < 1:
        raise ValidationError("additivity_constant needs at least one sample")
    rng = generator_for(seed, 'additivity', group.name)
    eps = rng.uniform(0.0, epsilon_max, size=n_samples)
    delta = rng.uniform(0.0, epsilon_max, size=n_samples)
    zu = _ball_coordinates(group, 1.0, rng, n_samples, surface=True)
    zv = _ball_coordinates(group, 1.0, rng, n_samples, surface=True)
    u = group.exp_coordinates(zu * eps[:, None])
    v = group.exp_coordinates(zv * delta[:, None])
    total = eps + delta
    valid = total > 0
    ratios = group.chart_norm(u[valid] @ v[valid]) / total[valid]
    worst = float(np.max(ratios)) if ratios.size else 1.0
    c = max(1.0, worst)
    if c < 1.0 + 1e-9:
        c = 1.0
    logger.info(f"Additivity constant for {group.name}: c = {c:.6f} from {n_samples} samples")
    return AdditivityEstimate(c=c, n_samples=n_samples, epsilon_max=epsilon_max, worst_ratio=worst)
