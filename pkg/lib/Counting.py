import math
import logging

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from scipy import integrate

from .Errors import ScaleError, ScaleTooLarge, ValidationError
from .GroupModels import euclidean, special_linear
from .SeedStream import DEFAULT_SEED, generator_for, map_ordered
from .SetOracles import BallOracle, ConvexOracle

logger = logging.getLogger(__name__)

MAX_LATTICE_DIM = 4
MAX_SCALED_RADIUS = 1e4
MAX_BOX_POINTS = 10 ** 9
MAX_SL2_BOUND = 500.0


class CountKind(Enum):
    INTEGER_POINTS = "integer_points"
    SL2Z_BALL = "sl2z_ball"


class ReferenceKind(Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO_VOLUME = "monte_carlo_volume"


@dataclass
class CountReport:
    kind: CountKind
    reference: ReferenceKind
    T_grid: List[float] = field(default_factory=list)
    counts: List[int] = field(default_factory=list)
    reference_volumes: List[float] = field(default_factory=list)
    ratios: List[Optional[float]] = field(default_factory=list)
    doubling_ratios: List[Optional[float]] = field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, Any]]:
        return [
            {'T': T, 'count': count, 'volume': volume, 'ratio': ratio, 'doubling': doubling}
            for T, count, volume, ratio, doubling in zip(
                self.T_grid, self.counts, self.reference_volumes, self.ratios, self.doubling_ratios)
        ]

    def to_document(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'reference': self.reference.value,
            'rows': self.csv_rows(),
        }


def _integer_range(lower: float, upper: float) -> np.ndarray:
    return np.arange(math.ceil(lower - 1e-9), math.floor(upper + 1e-9) + 1, dtype=np.int64)


def count_integer_points(body: ConvexOracle, T: float = 1.0, threads: int = 1) -> int:
    """Integer points of T * body by scanning the integer box around it, one slab of the first axis at a time."""
    if not body.group.is_euclidean:
        raise ValidationError(f"Integer points are counted in euclidean groups, got {body.group.name}")
    n = body.coordinate_dim
    if n > MAX_LATTICE_DIM:
        raise ScaleTooLarge(f"Integer point enumeration is limited to n <= {MAX_LATTICE_DIM}, got {n}")
    if not T > 0:
        raise ValidationError(f"Scale must be positive, got {T}")
    if T * body.circumradius() > MAX_SCALED_RADIUS:
        raise ScaleTooLarge(f"T * circumradius = {T * body.circumradius():.4g} exceeds {MAX_SCALED_RADIUS:g}")
    scaled = body.scaled(T)
    lower, upper = scaled.bounds()
    axes = [_integer_range(lo, hi) for lo, hi in zip(lower, upper)]
    if any(axis.size == 0 for axis in axes):
        return 0
    if math.prod(axis.size for axis in axes) > MAX_BOX_POINTS:
        raise ScaleTooLarge(f"Integer box around the scaled body has more than {MAX_BOX_POINTS} points")

    def slab(first: int) -> int:
        rest = np.meshgrid(*axes[1:], indexing='ij') if n > 1 else []
        columns = [np.full(rest[0].size if rest else 1, first, dtype=float)] + [r.ravel().astype(float) for r in rest]
        return int(np.count_nonzero(scaled.member_coordinates(np.stack(columns, axis=1))))

    return sum(map_ordered(slab, list(axes[0]), threads=threads))


def count_sl2z_norm_ball(bound: float, threads: int = 1) -> int:
    """Number of integer matrices [[a, b], [c, d]] with ad - bc = 1 and Frobenius norm at most `bound`."""
    if bound > MAX_SL2_BOUND:
        raise ScaleTooLarge(f"SL2(Z) scan is limited to bounds <= {MAX_SL2_BOUND:g}, got {bound}")
    if bound < 0:
        raise ValidationError(f"Norm bound must be non-negative, got {bound}")
    squared = bound * bound + 1e-9
    limit = int(math.floor(bound + 1e-9))

    def row(a: int) -> int:
        rest = squared - a * a
        if rest < 0:
            return 0
        if a == 0:
            # bc = -1 forces (b, c) = (1, -1) or (-1, 1); d is free
            if rest < 2:
                return 0
            return 2 * (2 * math.isqrt(int(math.floor(rest - 2))) + 1)
        side = int(math.floor(math.sqrt(rest)))
        values = np.arange(-side, side + 1, dtype=np.int64)
        b, c = np.meshgrid(values, values, indexing='ij')
        numerator = 1 + b * c
        divisible = numerator % a == 0
        d = numerator[divisible] // a
        norms = a * a + b[divisible] ** 2 + c[divisible] ** 2 + d ** 2
        return int(np.count_nonzero(norms <= squared))

    return sum(map_ordered(row, list(range(-limit, limit + 1)), threads=threads))


def sl2_frobenius_ball_volume(T: float) -> float:
    """Haar volume of {g in SL2(R): |g|_F <= T} in the Iwasawa normalization e^{2t} dtheta dt dx."""
    if T * T * T * T <= 4.0:
        return 0.0
    x_max = math.sqrt(T ** 4 / 4.0 - 1.0)
    value, _ = integrate.quad(lambda x: math.sqrt(max(T ** 4 - 4.0 * (1.0 + x * x), 0.0)) / (1.0 + x * x),
                              -x_max, x_max, limit=200)
    return math.pi * value


def _monte_carlo_body_volume(body: ConvexOracle, n_samples: int, seed: int, T: float) -> float:
    lower, upper = body.bounds()
    window = body.group.with_window(lower, upper).require_window()
    rng = generator_for(seed, 'count-volume', T)
    coordinates = window.sample_coordinates(rng, n_samples)
    return window.volume * float(np.mean(body.member_coordinates(coordinates)))


def _monte_carlo_sl2_volume(T: float, n_samples: int, seed: int) -> float:
    if T * T <= 2.0:
        return 0.0
    t_max = math.log(T)
    x_max = math.sqrt(T ** 4 / 4.0 - 1.0)
    group = special_linear(2).with_window([0.0, -t_max, -x_max], [2.0 * math.pi, t_max, x_max])
    window = group.require_window()
    sample = window.sample(generator_for(seed, 'count-volume', T), n_samples)
    inside = np.linalg.norm(sample.matrices, axis=(1, 2)) <= T
    return window.volume * float(np.mean(sample.weights * inside))


def counting_report(kind: CountKind, T_grid: Sequence[float], reference: ReferenceKind = ReferenceKind.ANALYTIC,
                    body: Optional[ConvexOracle] = None, n_samples: int = 200_000, seed: int = DEFAULT_SEED,
                    threads: int = 1) -> CountReport:
    """Counts, reference volumes, count/volume ratios and count(2T)/count(T) over a grid of scales."""
    if kind == CountKind.INTEGER_POINTS and body is None:
        body = BallOracle(euclidean(2), 1.0)
    report = CountReport(kind=kind, reference=reference)
    counts: Dict[float, int] = {}

    def count(T: float) -> int:
        if T not in counts:
            if kind == CountKind.INTEGER_POINTS:
                counts[T] = count_integer_points(body, T, threads=threads)
            else:
                counts[T] = count_sl2z_norm_ball(T, threads=threads)
        return counts[T]

    def volume(T: float) -> float:
        if kind == CountKind.INTEGER_POINTS:
            if reference == ReferenceKind.ANALYTIC and body.volume() is not None:
                return body.volume() * T ** body.coordinate_dim
            return _monte_carlo_body_volume(body.scaled(T), n_samples, seed, T)
        if reference == ReferenceKind.ANALYTIC:
            return sl2_frobenius_ball_volume(T)
        return _monte_carlo_sl2_volume(T, n_samples, seed)

    for T in sorted(float(t) for t in T_grid):
        n_T = count(T)
        vol = volume(T)
        try:
            doubling = count(2.0 * T) / n_T if n_T > 0 else None
        except ScaleError as e:
            logger.warning(f"No doubling ratio at T={T}: {e}")
            doubling = None
        report.T_grid.append(T)
        report.counts.append(n_T)
        report.reference_volumes.append(vol)
        report.ratios.append(n_T / vol if vol > 0 else None)
        report.doubling_ratios.append(doubling)
        logger.info(f"{kind.value} T={T:g}: count={n_T}, volume={vol:.6g}")
    return report
