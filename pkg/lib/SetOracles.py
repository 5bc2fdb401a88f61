import json
import math
import logging

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from glom import glom, Coalesce, GlomError

from .Errors import DimensionMismatch, ValidationError
from .GroupModels import GroupModel
from .HaarWindows import WindowKind

logger = logging.getLogger(__name__)

# relative slack on membership so lattice points on the boundary count
MEMBER_TOL = 1e-9

Bounds = Tuple[np.ndarray, np.ndarray]


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


class BaseSetOracle(ABC):
    """A measurable set in a group, described in the coordinates of the group's Haar window."""
    kind = "set"

    def __init__(self, group: GroupModel):
        self.group = group

    @property
    def coordinate_dim(self) -> int:
        return self.group.require_window().dim

    def member(self, matrices: np.ndarray) -> np.ndarray:
        coordinates = self.group.require_window().from_matrices(matrices)
        return self.member_coordinates(coordinates)

    @abstractmethod
    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        pass

    @property
    def has_signed_distance(self) -> bool:
        return False

    def signed_distance(self, coordinates: np.ndarray) -> np.ndarray:
        raise ValidationError(f"{self.kind} oracle has no signed distance")

    def bounds(self) -> Optional[Bounds]:
        return None

    def volume(self) -> Optional[float]:
        return None

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind}


class EmptyOracle(BaseSetOracle):
    kind = "empty"

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        return np.zeros(coordinates.shape[0], dtype=bool)

    @property
    def has_signed_distance(self) -> bool:
        return True

    def signed_distance(self, coordinates: np.ndarray) -> np.ndarray:
        return np.full(coordinates.shape[0], np.inf)

    def dilated_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        return self.member_coordinates(coordinates)

    def eroded_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        return self.member_coordinates(coordinates)

    def volume(self) -> Optional[float]:
        return 0.0

    def scaled(self, factor: float) -> 'EmptyOracle':
        return self

    def translated(self, shift: Sequence[float]) -> 'EmptyOracle':
        return self


class WholeWindowOracle(BaseSetOracle):
    """Everything inside the Haar window (the whole group when the window covers it)."""
    kind = "whole"

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        return self.group.require_window().contains(coordinates)

    def bounds(self) -> Optional[Bounds]:
        window = self.group.require_window()
        return window.lower.copy(), window.upper.copy()

    def volume(self) -> Optional[float]:
        window = self.group.require_window()
        if window.kind in (WindowKind.IWASAWA, WindowKind.PRODUCT):
            return None
        return window.volume


class ConvexOracle(BaseSetOracle):
    """Convex bodies with closed-form distance, support function and morphology."""

    @property
    def has_signed_distance(self) -> bool:
        return True

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        return self.signed_distance(coordinates) <= MEMBER_TOL * max(1.0, self.circumradius())

    @abstractmethod
    def support(self, directions: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def circumradius(self) -> float:
        """Radius of the smallest origin-centred ball containing the body."""

    @abstractmethod
    def inradius_about_origin(self) -> float:
        """Radius of the largest origin-centred ball inside the body (<= 0 if 0 is not interior)."""

    @abstractmethod
    def dilated_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        pass

    @abstractmethod
    def eroded_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        pass

    @abstractmethod
    def scaled(self, factor: float) -> 'ConvexOracle':
        pass

    @abstractmethod
    def translated(self, shift: Sequence[float]) -> 'ConvexOracle':
        pass


class BallOracle(ConvexOracle):
    kind = "ball"

    def __init__(self, group: GroupModel, radius: float, center: Optional[Sequence[float]] = None):
        super().__init__(group)
        if radius <= 0:
            raise ValidationError(f"Ball radius must be positive, got {radius}")
        dim = self.coordinate_dim
        self.radius = float(radius)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if self.center.shape != (dim,):
            raise DimensionMismatch(f"Ball center must have {dim} coordinates")

    def signed_distance(self, coordinates: np.ndarray) -> np.ndarray:
        return np.linalg.norm(coordinates - self.center, axis=1) - self.radius

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        squared = np.sum((coordinates - self.center) ** 2, axis=1)
        return squared <= self.radius ** 2 * (1.0 + MEMBER_TOL)

    def dilated_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        return np.linalg.norm(coordinates - self.center, axis=1) <= self.radius + delta

    def eroded_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        return np.linalg.norm(coordinates - self.center, axis=1) <= self.radius - delta

    def support(self, directions: np.ndarray) -> np.ndarray:
        return directions @ self.center + self.radius * np.linalg.norm(directions, axis=1)

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def inradius_about_origin(self) -> float:
        return self.radius - float(np.linalg.norm(self.center))

    def bounds(self) -> Optional[Bounds]:
        return self.center - self.radius, self.center + self.radius

    def volume(self) -> Optional[float]:
        return unit_ball_volume(self.coordinate_dim) * self.radius ** self.coordinate_dim

    def scaled(self, factor: float) -> 'BallOracle':
        return BallOracle(self.group, self.radius * factor, self.center * factor)

    def translated(self, shift: Sequence[float]) -> 'BallOracle':
        return BallOracle(self.group, self.radius, self.center + np.asarray(shift, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'radius': self.radius, 'center': [float(v) for v in self.center]}


class BoxOracle(ConvexOracle):
    kind = "box"

    def __init__(self, group: GroupModel, lower: Sequence[float], upper: Sequence[float]):
        super().__init__(group)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != (self.coordinate_dim,) or self.upper.shape != self.lower.shape:
            raise DimensionMismatch(f"Box bounds must have {self.coordinate_dim} coordinates")
        if not np.all(self.upper > self.lower):
            raise ValidationError("Box upper bounds must exceed lower bounds")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def signed_distance(self, coordinates: np.ndarray) -> np.ndarray:
        q = np.abs(coordinates - self.center) - self.half_widths
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def dilated_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        nearest = np.clip(coordinates, self.lower, self.upper)
        return np.linalg.norm(coordinates - nearest, axis=1) <= delta

    def eroded_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        return np.all((coordinates >= self.lower + delta) & (coordinates <= self.upper - delta), axis=1)

    def support(self, directions: np.ndarray) -> np.ndarray:
        return np.sum(np.maximum(directions * self.lower, directions * self.upper), axis=1)

    def circumradius(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def inradius_about_origin(self) -> float:
        return float(np.min(np.minimum(-self.lower, self.upper)))

    def bounds(self) -> Optional[Bounds]:
        return self.lower.copy(), self.upper.copy()

    def volume(self) -> Optional[float]:
        return float(np.prod(self.upper - self.lower))

    def scaled(self, factor: float) -> 'BoxOracle':
        return BoxOracle(self.group, self.lower * factor, self.upper * factor)

    def translated(self, shift: Sequence[float]) -> 'BoxOracle':
        shift = np.asarray(shift, dtype=float)
        return BoxOracle(self.group, self.lower + shift, self.upper + shift)

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'lower': [float(v) for v in self.lower], 'upper': [float(v) for v in self.upper]}


def polygon_signed_area(vertices: np.ndarray) -> float:
    following = np.roll(vertices, -1, axis=0)
    return 0.5 * float(np.sum(vertices[:, 0] * following[:, 1] - following[:, 0] * vertices[:, 1]))


class PolygonOracle(ConvexOracle):
    """
    A convex polygon in a 2-dimensional window, stored counter-clockwise. Two vertices give a
    segment, which has empty interior.
    """
    kind = "polygon"

    def __init__(self, group: GroupModel, vertices: Sequence[Sequence[float]]):
        super().__init__(group)
        if self.coordinate_dim != 2:
            raise DimensionMismatch("Polygons live in 2-dimensional windows")
        xy = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if xy.shape[0] < 2:
            raise ValidationError("A polygon needs at least two vertices")
        if xy.shape[0] >= 3:
            area = polygon_signed_area(xy)
            if abs(area) <= 1e-14:
                raise ValidationError("Polygon vertices are collinear")
            if area < 0:
                xy = xy[::-1].copy()
            edges = np.roll(xy, -1, axis=0) - xy
            following = np.roll(edges, -1, axis=0)
            turns = edges[:, 0] * following[:, 1] - edges[:, 1] * following[:, 0]
            if np.any(turns < -1e-12):
                raise ValidationError("Polygon must be convex")
        self.vertices = xy

    @property
    def is_segment(self) -> bool:
        return self.vertices.shape[0] == 2

    def _half_planes(self) -> Tuple[np.ndarray, np.ndarray]:
        # outward unit normals and offsets: n . x <= b inside
        edges = np.roll(self.vertices, -1, axis=0) - self.vertices
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        offsets = np.einsum('ij,ij->i', normals, self.vertices)
        return normals, offsets

    def boundary_distance(self, coordinates: np.ndarray) -> np.ndarray:
        start = self.vertices
        end = np.roll(self.vertices, -1, axis=0)
        if self.is_segment:
            start, end = start[:1], end[:1]
        direction = end - start
        length_sq = np.sum(direction ** 2, axis=1)
        length_sq[length_sq == 0.0] = 1.0
        relative = coordinates[:, None, :] - start[None, :, :]
        w = np.clip(np.einsum('pei,ei->pe', relative, direction) / length_sq, 0.0, 1.0)
        nearest = start[None, :, :] + w[:, :, None] * direction[None, :, :]
        return np.min(np.linalg.norm(coordinates[:, None, :] - nearest, axis=2), axis=1)

    def signed_distance(self, coordinates: np.ndarray) -> np.ndarray:
        distance = self.boundary_distance(coordinates)
        if self.is_segment:
            return distance
        normals, offsets = self._half_planes()
        heights = coordinates @ normals.T - offsets
        inside = np.all(heights <= 0.0, axis=1)
        return np.where(inside, np.max(heights, axis=1), distance)

    def dilated_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        if self.is_segment:
            return self.boundary_distance(coordinates) <= delta
        normals, offsets = self._half_planes()
        inside = np.all(coordinates @ normals.T - offsets <= 0.0, axis=1)
        return inside | (self.boundary_distance(coordinates) <= delta)

    def eroded_member(self, coordinates: np.ndarray, delta: float) -> np.ndarray:
        if self.is_segment:
            return np.zeros(coordinates.shape[0], dtype=bool) if delta > 0 else self.member_coordinates(coordinates)
        normals, offsets = self._half_planes()
        return np.all(coordinates @ normals.T <= offsets - delta, axis=1)

    def support(self, directions: np.ndarray) -> np.ndarray:
        return np.max(directions @ self.vertices.T, axis=1)

    def circumradius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def inradius_about_origin(self) -> float:
        if self.is_segment:
            return 0.0
        _, offsets = self._half_planes()
        return float(np.min(offsets))

    def bounds(self) -> Optional[Bounds]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def volume(self) -> Optional[float]:
        return 0.0 if self.is_segment else abs(polygon_signed_area(self.vertices))

    def scaled(self, factor: float) -> 'PolygonOracle':
        return PolygonOracle(self.group, self.vertices * factor)

    def translated(self, shift: Sequence[float]) -> 'PolygonOracle':
        return PolygonOracle(self.group, self.vertices + np.asarray(shift, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'vertices': self.vertices.tolist()}


class IntersectionOracle(BaseSetOracle):
    kind = "intersection"

    def __init__(self, parts: Sequence[BaseSetOracle]):
        if not parts:
            raise ValidationError("Intersection needs at least one set")
        super().__init__(parts[0].group)
        self.parts = list(parts)

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        result = np.ones(coordinates.shape[0], dtype=bool)
        for part in self.parts:
            result &= part.member_coordinates(coordinates)
        return result

    def bounds(self) -> Optional[Bounds]:
        known = [b for b in (p.bounds() for p in self.parts) if b is not None]
        if not known:
            return None
        lower = np.max([b[0] for b in known], axis=0)
        upper = np.min([b[1] for b in known], axis=0)
        return lower, np.maximum(lower, upper)

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'parts': [p.describe() for p in self.parts]}


class UnionOracle(BaseSetOracle):
    kind = "union"

    def __init__(self, parts: Sequence[BaseSetOracle]):
        if not parts:
            raise ValidationError("Union needs at least one set")
        super().__init__(parts[0].group)
        self.parts = list(parts)

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        result = np.zeros(coordinates.shape[0], dtype=bool)
        for part in self.parts:
            result |= part.member_coordinates(coordinates)
        return result

    def bounds(self) -> Optional[Bounds]:
        known = [p.bounds() for p in self.parts]
        if any(b is None for b in known):
            return None
        return np.min([b[0] for b in known], axis=0), np.max([b[1] for b in known], axis=0)

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'parts': [p.describe() for p in self.parts]}


class ProductOracle(BaseSetOracle):
    """B_1 x ... x B_q inside a product group, one factor set per group component."""
    kind = "product"

    def __init__(self, group: GroupModel, parts: Sequence[BaseSetOracle]):
        super().__init__(group)
        if len(group.components) != len(parts):
            raise DimensionMismatch(f"{group.name} has {len(group.components)} factors, got {len(parts)} sets")
        self.parts = list(parts)

    def _slices(self) -> List[slice]:
        slices, start = [], 0
        for part in self.parts:
            slices.append(slice(start, start + part.coordinate_dim))
            start += part.coordinate_dim
        return slices

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        result = np.ones(coordinates.shape[0], dtype=bool)
        for part, s in zip(self.parts, self._slices()):
            result &= part.member_coordinates(coordinates[:, s])
        return result

    def bounds(self) -> Optional[Bounds]:
        known = [p.bounds() for p in self.parts]
        if any(b is None for b in known):
            return None
        return np.concatenate([b[0] for b in known]), np.concatenate([b[1] for b in known])

    def volume(self) -> Optional[float]:
        volumes = [p.volume() for p in self.parts]
        if any(v is None for v in volumes):
            return None
        return float(np.prod(volumes))

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'parts': [p.describe() for p in self.parts]}


class PreimageOracle(BaseSetOracle):
    """r^{-1}(B) for a map r from `group` into the group of `target`."""
    kind = "preimage"

    def __init__(self, group: GroupModel, target: BaseSetOracle, map_fn: Callable[[np.ndarray], np.ndarray],
                 bounds: Optional[Bounds] = None):
        super().__init__(group)
        self.target = target
        self.map_fn = map_fn
        self._bounds = bounds

    def member(self, matrices: np.ndarray) -> np.ndarray:
        return self.target.member(self.map_fn(matrices))

    def member_coordinates(self, coordinates: np.ndarray) -> np.ndarray:
        return self.member(self.group.require_window().to_matrices(coordinates))

    def bounds(self) -> Optional[Bounds]:
        return self._bounds

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'target': self.target.describe()}


# parsing of --set specifications


def _floats(text: str) -> List[float]:
    try:
        return [float(token) for token in text.split(',') if token.strip()]
    except ValueError as e:
        raise ValidationError(f"Expected comma separated numbers, got {text!r}: {e}")


def oracle_from_document(doc: Dict[str, Any], group: GroupModel) -> BaseSetOracle:
    try:
        return _build_oracle(doc, group)
    except (GlomError, KeyError, TypeError) as e:
        raise ValidationError(f"Malformed set document: {e}")


def _build_oracle(doc: Dict[str, Any], group: GroupModel) -> BaseSetOracle:
    kind = glom(doc, Coalesce('kind', 'type', default=None))
    if kind in ('ball', 'disk'):
        return BallOracle(group, float(glom(doc, 'radius')), glom(doc, 'center', default=None))
    if kind == 'box':
        return BoxOracle(group, glom(doc, 'lower'), glom(doc, 'upper'))
    if kind == 'square':
        half = float(glom(doc, 'side')) / 2.0
        dim = group.require_window().dim
        return BoxOracle(group, [-half] * dim, [half] * dim)
    if kind in ('polygon', 'segment'):
        return PolygonOracle(group, glom(doc, 'vertices'))
    if kind == 'empty':
        return EmptyOracle(group)
    if kind == 'whole':
        return WholeWindowOracle(group)
    if kind == 'intersection':
        return IntersectionOracle([_build_oracle(part, group) for part in glom(doc, 'parts')])
    if kind == 'union':
        return UnionOracle([_build_oracle(part, group) for part in glom(doc, 'parts')])
    if kind == 'product':
        parts = glom(doc, 'parts')
        return ProductOracle(group, [_build_oracle(part, component)
                                     for part, component in zip(parts, group.components)])
    raise ValidationError(f"Unknown set kind: {kind!r}")


def oracle_from_spec(spec: str, group: GroupModel) -> BaseSetOracle:
    """
    Parse a --set value: 'disk:1', 'ball:0.5@0.1,0', 'square:2', 'box:-1,-1;1,1',
    'polygon:0,0;1,0;0,1', 'segment:-1,0;1,0', 'empty', 'whole', or a path to a JSON document.
    """
    spec = spec.strip()
    path = Path(spec)
    if spec.endswith('.json') or path.is_file():
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"Cannot read set document {spec}: {e}")
        return oracle_from_document(doc, group)

    kind, _, argument = spec.partition(':')
    kind = kind.strip().lower()
    if kind in ('disk', 'ball'):
        radius_text, _, center_text = argument.partition('@')
        center = _floats(center_text) if center_text else None
        return oracle_from_document({'kind': 'ball', 'radius': _floats(radius_text)[0], 'center': center}, group)
    if kind == 'square':
        return oracle_from_document({'kind': 'square', 'side': _floats(argument)[0]}, group)
    if kind == 'box':
        lower_text, _, upper_text = argument.partition(';')
        return oracle_from_document({'kind': 'box', 'lower': _floats(lower_text), 'upper': _floats(upper_text)}, group)
    if kind in ('polygon', 'segment'):
        vertices = [_floats(point) for point in argument.split(';') if point.strip()]
        return oracle_from_document({'kind': kind, 'vertices': vertices}, group)
    if kind in ('empty', 'whole'):
        return oracle_from_document({'kind': kind}, group)
    raise ValidationError(f"Unknown set specification: {spec!r}")
