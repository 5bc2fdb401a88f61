import json
import logging

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Union

import numpy as np

from glom import glom, Coalesce, GlomError

from .Errors import DimensionMismatch, ParameterOutOfRange, ValidationError
from .GroupModels import GroupModel, builtin_group, product
from .SetOracles import (
    BallOracle, BaseSetOracle, BoxOracle, ConvexOracle, PolygonOracle, oracle_from_document, oracle_from_spec,
    unit_ball_volume
)

logger = logging.getLogger(__name__)

BaseMap = Callable[[np.ndarray], np.ndarray]


class FiberKind(Enum):
    CONSTANT = "constant"
    RADIUS_FUNCTION = "radius-function"
    AFFINE_IMAGE = "affine"


class BaseFiberFamily(ABC):
    """
    A family z -> D_z of sets in a euclidean fiber group, indexed by base coordinates z.

    `member(z, y)` is vectorized over rows: row k asks whether y[k] lies in D_{z[k]}.
    """
    kind: FiberKind

    def __init__(self, fiber_group: GroupModel):
        if not fiber_group.is_euclidean:
            raise ValidationError(f"Fiber families live in euclidean groups, got {fiber_group.name}")
        self.fiber_group = fiber_group

    @property
    def fiber_dim(self) -> int:
        return self.fiber_group.dim

    @abstractmethod
    def fiber_at(self, z: np.ndarray) -> ConvexOracle:
        pass

    @abstractmethod
    def member(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        pass

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind.value, 'fiber_group': self.fiber_group.name}


class ConstantFibers(BaseFiberFamily):
    kind = FiberKind.CONSTANT

    def __init__(self, fiber_group: GroupModel, fiber: ConvexOracle):
        super().__init__(fiber_group)
        self.fiber = fiber

    def fiber_at(self, z: np.ndarray) -> ConvexOracle:
        return self.fiber

    def member(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.fiber.member_coordinates(y)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'set': self.fiber.describe()}


class RadiusFunctionFibers(BaseFiberFamily):
    """Balls of radius r0 + amp * sin(freq * z[axis]) about a fixed center."""
    kind = FiberKind.RADIUS_FUNCTION

    def __init__(self, fiber_group: GroupModel, r0: float, amp: float = 0.0, freq: float = 1.0, axis: int = 0,
                 center: Optional[Sequence[float]] = None):
        super().__init__(fiber_group)
        if not r0 > abs(amp):
            raise ParameterOutOfRange(f"Radius function must stay positive: r0={r0}, amp={amp}")
        self.r0 = float(r0)
        self.amp = float(amp)
        self.freq = float(freq)
        self.axis = int(axis)
        self.center = np.zeros(self.fiber_dim) if center is None else np.asarray(center, dtype=float)
        if self.center.shape != (self.fiber_dim,):
            raise DimensionMismatch(f"Fiber center must have {self.fiber_dim} entries")

    def radius(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.r0 + self.amp * np.sin(self.freq * z[:, self.axis])

    @property
    def radius_lipschitz(self) -> float:
        return abs(self.amp * self.freq)

    def fiber_at(self, z: np.ndarray) -> ConvexOracle:
        return BallOracle(self.fiber_group, float(self.radius(z)[0]), self.center)

    def member(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(y) - self.center, axis=1) <= self.radius(z)

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            'r0': self.r0, 'amp': self.amp, 'freq': self.freq, 'axis': self.axis,
            'center': [float(c) for c in self.center],
        }


class AffineImageFibers(BaseFiberFamily):
    """Images of a planar convex polygon under x -> (I + z[axis] L) x + z[axis] b."""
    kind = FiberKind.AFFINE_IMAGE

    def __init__(self, fiber_group: GroupModel, fiber: ConvexOracle, linear: Sequence[Sequence[float]],
                 shift: Optional[Sequence[float]] = None, axis: int = 0):
        super().__init__(fiber_group)
        if self.fiber_dim != 2:
            raise DimensionMismatch("Affine fiber families need a planar fiber group")
        if isinstance(fiber, BoxOracle):
            lo, hi = fiber.lower, fiber.upper
            fiber = PolygonOracle(fiber_group, [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        if not isinstance(fiber, PolygonOracle):
            raise ValidationError(f"Affine fiber families map a polygon or box, got {fiber.kind}")
        self.fiber = fiber
        self.linear = np.asarray(linear, dtype=float)
        self.shift = np.zeros(2) if shift is None else np.asarray(shift, dtype=float)
        self.axis = int(axis)
        if self.linear.shape != (2, 2) or self.shift.shape != (2,):
            raise DimensionMismatch("Affine fiber map needs a 2x2 linear part and a 2-vector shift")

    def _maps(self, z: np.ndarray):
        s = np.atleast_2d(np.asarray(z, dtype=float))[:, self.axis]
        A = np.eye(2)[None] + s[:, None, None] * self.linear[None]
        if np.any(np.linalg.det(A) <= 0):
            raise ParameterOutOfRange("Affine fiber map degenerates inside the sampled base")
        return A, s[:, None] * self.shift[None]

    def fiber_at(self, z: np.ndarray) -> ConvexOracle:
        A, b = self._maps(z)
        vertices = self.fiber.vertices @ A[0].T + b[0]
        return PolygonOracle(self.fiber_group, vertices)

    def member(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        A, b = self._maps(z)
        preimage = np.linalg.solve(A, (np.asarray(y, dtype=float) - b)[..., None])[..., 0]
        return self.fiber.member_coordinates(preimage)

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            'set': self.fiber.describe(),
            'linear': self.linear.tolist(),
            'shift': self.shift.tolist(),
            'axis': self.axis,
        }


class PulledBackFibers(BaseFiberFamily):
    """z0 -> D_{r(z0)} for a map r between base coordinates."""

    def __init__(self, family: BaseFiberFamily, base_map: BaseMap, name: str = 'pullback'):
        super().__init__(family.fiber_group)
        self.family = family
        self.base_map = base_map
        self.name = name
        self.kind = family.kind

    def fiber_at(self, z: np.ndarray) -> ConvexOracle:
        return self.family.fiber_at(self.base_map(np.atleast_2d(z))[0])

    def member(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.family.member(self.base_map(np.atleast_2d(z)), y)

    def describe(self) -> Dict[str, Any]:
        return {**self.family.describe(), 'base_map': self.name}


class FiberedOracle(BaseSetOracle):
    """The set of (z, y) in P x H with z in the base set and y in D_z."""
    kind = "fibered"

    def __init__(self, base_group: GroupModel, base_set: BaseSetOracle, fibers: BaseFiberFamily,
                 bound_radius: float):
        super().__init__(product([base_group, fibers.fiber_group]))
        self.base_group = base_group
        self.base_set = base_set
        self.fibers = fibers
        self.bound_radius = float(bound_radius)
        self.base_dim = base_group.require_window().dim

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        z = coordinates[:, :self.base_dim]
        y = coordinates[:, self.base_dim:]
        inside = self.base_set.member_coordinates(z)
        if np.any(inside):
            inside[inside] = self.fibers.member(z[inside], y[inside])
        return inside

    def bounds(self):
        base_bounds = self.base_set.bounds()
        if base_bounds is None:
            return None
        h = self.fibers.fiber_dim
        return (
            np.concatenate([base_bounds[0], np.full(h, -self.bound_radius)]),
            np.concatenate([base_bounds[1], np.full(h, self.bound_radius)]),
        )

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'base': self.base_set.describe(), 'fibers': self.fibers.describe()}


@dataclass(frozen=True, eq=False)
class BlcFamily:
    """
    A bounded Lipschitz continuous fiber family over a base set, with its claimed parameters
    (C_D, V_min, B) where B is the ball of radius `bound_radius` about the origin of the fiber group.
    `C_E` and `c` feed the fibered constant when present.
    """
    base_group: GroupModel
    base_set: BaseSetOracle
    fibers: BaseFiberFamily
    C_D: float
    V_min: float
    bound_radius: float
    C_E: Optional[float] = None
    c: float = 1.0

    def __post_init__(self):
        if self.C_D < 1:
            raise ParameterOutOfRange(f"C_D must be at least 1, got {self.C_D}")
        if not self.V_min > 0 or not self.bound_radius > 0:
            raise ParameterOutOfRange(f"V_min and the bounding radius must be positive, got {self.V_min}, {self.bound_radius}")
        if self.base_set.group is not self.base_group:
            raise ValidationError("Base set must live in the base group")

    @property
    def fiber_group(self) -> GroupModel:
        return self.fibers.fiber_group

    @property
    def V_max(self) -> float:
        """Haar volume of the bounding ball B."""
        h = self.fibers.fiber_dim
        return unit_ball_volume(h) * self.bound_radius ** h

    def fibered_oracle(self, T: Optional[float] = None) -> FiberedOracle:
        base = self.base_set
        if T is not None:
            if not isinstance(base, ConvexOracle):
                raise ValidationError(f"Only convex base sets can be scaled by T, got {base.kind}")
            base = base.scaled(T)
        return FiberedOracle(self.base_group, base, self.fibers, self.bound_radius)

    def with_fibers(self, fibers: BaseFiberFamily, C_D: Optional[float] = None) -> 'BlcFamily':
        return replace(self, fibers=fibers, C_D=self.C_D if C_D is None else C_D)

    def describe(self) -> Dict[str, Any]:
        return {
            'base_group': self.base_group.name,
            'base_set': self.base_set.describe(),
            'fibers': self.fibers.describe(),
            'C_D': self.C_D,
            'V_min': self.V_min,
            'bound_radius': self.bound_radius,
            'C_E': self.C_E,
            'c': self.c,
        }


def _set_from_document(value: Union[str, Dict[str, Any]], group: GroupModel) -> BaseSetOracle:
    if isinstance(value, str):
        return oracle_from_spec(value, group)
    return oracle_from_document(value, group)


def fibers_from_document(doc: Dict[str, Any], fiber_group: GroupModel) -> BaseFiberFamily:
    kind = glom(doc, Coalesce('kind', 'type', default=FiberKind.CONSTANT.value))
    try:
        fiber_kind = FiberKind(kind)
    except ValueError:
        raise ValidationError(f"Unknown fiber kind {kind!r}; expected one of {[k.value for k in FiberKind]}")
    if fiber_kind == FiberKind.RADIUS_FUNCTION:
        return RadiusFunctionFibers(
            fiber_group,
            r0=float(glom(doc, 'r0')),
            amp=float(glom(doc, 'amp', default=0.0)),
            freq=float(glom(doc, 'freq', default=1.0)),
            axis=int(glom(doc, 'axis', default=0)),
            center=glom(doc, 'center', default=None),
        )
    fiber = _set_from_document(glom(doc, 'set'), fiber_group)
    if fiber_kind == FiberKind.AFFINE_IMAGE:
        return AffineImageFibers(
            fiber_group, fiber,
            linear=glom(doc, 'linear'),
            shift=glom(doc, 'shift', default=None),
            axis=int(glom(doc, 'axis', default=0)),
        )
    if not isinstance(fiber, ConvexOracle):
        raise ValidationError(f"Constant fibers must be convex sets, got {fiber.kind}")
    return ConstantFibers(fiber_group, fiber)


def family_from_document(doc: Dict[str, Any]) -> BlcFamily:
    """
    Read a family description:

        {"base_group": "R1", "base_set": {"kind": "box", "lower": [-1], "upper": [1]},
         "fiber_group": "R2", "fiber": {"kind": "radius-function", "r0": 1.0, "amp": 0.1},
         "C_D": 16, "V_min": 2.5, "bound_radius": 2.0, "C_E": 8, "c": 1}
    """
    try:
        base_group = builtin_group(glom(doc, 'base_group'))
        fiber_group = builtin_group(glom(doc, 'fiber_group'))
        family = BlcFamily(
            base_group=base_group,
            base_set=_set_from_document(glom(doc, 'base_set'), base_group),
            fibers=fibers_from_document(glom(doc, 'fiber'), fiber_group),
            C_D=float(glom(doc, 'C_D', default=1.0)),
            V_min=float(glom(doc, 'V_min')),
            bound_radius=float(glom(doc, Coalesce('bound_radius', 'R'))),
            C_E=glom(doc, 'C_E', default=None),
            c=float(glom(doc, 'c', default=1.0)),
        )
    except (GlomError, KeyError, TypeError) as e:
        raise ValidationError(f"Malformed family document: {e}")
    logger.debug(f"Loaded {family.fibers.kind.value} family over {base_group.name} with fibers in {fiber_group.name}")
    return family


def load_family(path: Union[str, Path]) -> BlcFamily:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"Family file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"Family file {path} is not valid JSON: {e}")
    return family_from_document(doc)


def sample_base_points(family: BlcFamily, rng: np.random.Generator, count: int, max_rounds: int = 50) -> np.ndarray:
    """Up to `count` base coordinates drawn uniformly from the base set by rejection from the base window."""
    window = family.base_group.require_window()
    found = []
    total = 0
    for _ in range(max_rounds):
        candidates = window.sample_coordinates(rng, max(count, 64))
        inside = candidates[family.base_set.member_coordinates(candidates)]
        found.append(inside)
        total += inside.shape[0]
        if total >= count:
            break
    if total == 0:
        raise ValidationError("No sampled base point lies in the base set")
    return np.concatenate(found)[:count]


def projection_map(dim: int) -> BaseMap:
    """Projection of base coordinates onto their first `dim` entries."""
    return lambda z: np.atleast_2d(z)[:, :dim]


def scale_map(factor: float) -> BaseMap:
    return lambda z: float(factor) * np.atleast_2d(z)

