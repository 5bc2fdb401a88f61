import math
import logging

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .Certificates import WrCertificate, exact, register_rule
from .Errors import (
    DegenerateMinus, EmptyIntersection, EpsilonTooLarge, NonpositiveInput, ValidationError, WindowTooSmall
)
from .GroupModels import sample_ball_coordinates
from .SeedStream import DEFAULT_CHUNKS, DEFAULT_SEED, chunk_generators, chunk_sizes, generator_for, map_chunks
from .SetOracles import BaseSetOracle

logger = logging.getLogger(__name__)

DEFAULT_EPS_GRID = (0.01, 0.02, 0.05)
CONVERGENCE_PERTS = (8, 32, 128)

_WINDOW_CHECK_SAMPLES = 256


class EstimateMode(Enum):
    SAMPLED = "sampled"
    EXACT = "exact"


class FitMethod(Enum):
    MAX_SLOPE = "max_slope"
    ZERO_LIMIT = "zero_limit"


@dataclass(frozen=True)
class SamplingParams:
    n_points: int = 200_000
    n_pert: int = 32
    seed: int = DEFAULT_SEED
    mode: EstimateMode = EstimateMode.SAMPLED
    n_chunks: int = DEFAULT_CHUNKS
    threads: int = 1

    def validate(self):
        if self.n_points < 1 or self.n_pert < 1:
            raise ValidationError(f"n_points and n_pert must be at least 1, got {self.n_points}, {self.n_pert}")
        if self.n_chunks < 1 or self.threads < 1:
            raise ValidationError("n_chunks and threads must be positive")

    def describe(self) -> Dict[str, Any]:
        return {
            'n_points': self.n_points,
            'n_pert': self.n_pert,
            'seed': self.seed,
            'mode': self.mode.value,
            'n_chunks': self.n_chunks,
        }


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    mode: EstimateMode
    bias: str
    n_points: int
    n_pert: int

    def to_document(self) -> Dict[str, Any]:
        return {'value': self.value, 'stderr': self.stderr, 'mode': self.mode.value, 'bias': self.bias}


@dataclass(frozen=True)
class VolumeEstimates:
    epsilon: float
    plus: Estimate
    minus: Estimate
    tube: Estimate

    @property
    def ratio(self) -> float:
        return self.plus.value / self.minus.value if self.minus.value > 0 else math.inf

    @property
    def ratio_stderr(self) -> float:
        return _ratio_stderr(self.plus.value, self.plus.stderr, self.minus.value, self.minus.stderr)


@dataclass(frozen=True)
class FitRow:
    epsilon: float
    vol_plus: float
    vol_minus: float
    stderr_plus: float = 0.0
    stderr_minus: float = 0.0


@dataclass(frozen=True)
class LipschitzFit:
    C: float
    lower: float
    upper: float
    method: FitMethod
    slopes: Tuple[float, ...]

    def to_document(self) -> Dict[str, Any]:
        return {
            'C': self.C,
            'band': [self.lower, self.upper],
            'method': self.method.value,
            'slopes': list(self.slopes),
        }


@dataclass(frozen=True)
class TubeIdentityReport:
    epsilon: float
    n_points: int
    disagreements: int
    disagreements_outside_band: int

    @property
    def passed(self) -> bool:
        return self.disagreements_outside_band == 0


@dataclass
class WrReport:
    epsilons: List[float]
    T_values: List[float]
    cells: Dict[float, List[VolumeEstimates]]
    fit: Optional[LipschitzFit]
    zero_limit_fit: Optional[LipschitzFit]
    params: SamplingParams
    mode: EstimateMode
    convergence: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def fitted_C(self) -> Optional[float]:
        return self.fit.C if self.fit is not None else None

    @property
    def sample_counts(self) -> Dict[str, int]:
        return {'n_points': self.params.n_points, 'n_pert': self.params.n_pert}

    def csv_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for T in self.T_values:
            for cell in self.cells[T]:
                rows.append({
                    'T': T,
                    'epsilon': cell.epsilon,
                    'ratio': cell.ratio,
                    'stderr': cell.ratio_stderr,
                    'vol_plus': cell.plus.value,
                    'vol_minus': cell.minus.value,
                })
        return rows

    def to_document(self) -> Dict[str, Any]:
        return {
            'epsilons': self.epsilons,
            'T_values': self.T_values,
            'cells': [
                {
                    'T': T,
                    'epsilon': cell.epsilon,
                    'vol_plus': cell.plus.to_document(),
                    'vol_minus': cell.minus.to_document(),
                    'tube': cell.tube.to_document(),
                    'ratio': cell.ratio,
                    'ratio_stderr': cell.ratio_stderr,
                }
                for T in self.T_values for cell in self.cells[T]
            ],
            'fitted_C': self.fitted_C,
            'fit': self.fit.to_document() if self.fit else None,
            'fitted_C_zero_limit': self.zero_limit_fit.C if self.zero_limit_fit else None,
            'zero_limit_fit': self.zero_limit_fit.to_document() if self.zero_limit_fit else None,
            'mode': self.mode.value,
            'sample_counts': self.sample_counts,
            'convergence': self.convergence,
        }


@dataclass
class _ChunkSums:
    plus: float = 0.0
    minus: float = 0.0
    plus_sq: float = 0.0
    minus_sq: float = 0.0
    tube_sq: float = 0.0
    count: int = 0

    def add(self, other: '_ChunkSums') -> None:
        self.plus += other.plus
        self.minus += other.minus
        self.plus_sq += other.plus_sq
        self.minus_sq += other.minus_sq
        self.tube_sq += other.tube_sq
        self.count += other.count


def _ratio_stderr(plus: float, plus_err: float, minus: float, minus_err: float) -> float:
    if plus <= 0 or minus <= 0:
        return math.inf if minus <= 0 else 0.0
    ratio = plus / minus
    return ratio * math.sqrt((plus_err / plus) ** 2 + (minus_err / minus) ** 2)


def _mean_and_stderr(total: float, total_sq: float, count: int, volume: float) -> Tuple[float, float]:
    mean = total / count
    variance = max(0.0, total_sq / count - mean * mean)
    return volume * mean, volume * math.sqrt(variance / count)


class WellRoundCertifier:
    """Monte Carlo volumes of the two-sided fattening and erosion of a set, and fits of C."""

    def __init__(self, oracle: BaseSetOracle, params: Optional[SamplingParams] = None):
        self.oracle = oracle
        self.group = oracle.group
        self.window = self.group.require_window()
        self.params = params or SamplingParams()
        self.params.validate()

    @property
    def exact_available(self) -> bool:
        return self.group.is_euclidean and self.oracle.has_signed_distance

    def _resolve_mode(self) -> EstimateMode:
        if self.params.mode == EstimateMode.EXACT and not self.exact_available:
            raise ValidationError(
                f"Exact mode needs a euclidean group and a signed distance; {self.group.name}/{self.oracle.kind} has neither"
            )
        return self.params.mode

    def _check_epsilon(self, epsilon: float, mode: EstimateMode) -> None:
        if not epsilon > 0:
            raise EpsilonTooLarge(f"epsilon must be positive, got {epsilon}")
        # in exact mode exp is a global chart of R^n
        if mode == EstimateMode.SAMPLED and epsilon > self.group.epsilon_chart:
            raise EpsilonTooLarge(f"epsilon {epsilon} exceeds the chart radius {self.group.epsilon_chart}")

    def check_window(self, epsilon: float) -> None:
        """Raise WindowTooSmall when the fattened set provably leaves the sampling window."""
        if self.window.covers_group:
            return
        bounds = self.oracle.bounds()
        if bounds is None:
            logger.debug(f"{self.oracle.kind} oracle has no bounds; skipping window margin check")
            return
        lower, upper = bounds
        rng = generator_for(self.params.seed, 'window-check')
        sample = self.window.sample(rng, _WINDOW_CHECK_SAMPLES)
        inside = np.all((sample.coordinates >= lower) & (sample.coordinates <= upper), axis=1)
        max_ad = 1.0
        if np.any(inside):
            max_ad = max(1.0, float(np.max(self.group.ad_operator_norms(sample.matrices[inside]))))
        margin = 2.0 * epsilon * (1.0 + max_ad)
        for axis in range(self.window.dim):
            if self.window.periodic[axis]:
                continue
            if lower[axis] - margin < self.window.lower[axis] - 1e-12 or upper[axis] + margin > self.window.upper[axis] + 1e-12:
                raise WindowTooSmall(
                    f"Set bounds [{lower[axis]:.4g}, {upper[axis]:.4g}] plus margin {margin:.4g} leave the window "
                    f"[{self.window.lower[axis]:.4g}, {self.window.upper[axis]:.4g}] on axis {axis}"
                )

    def _chunk(self, epsilon: float, mode: EstimateMode, n_pert: int, size: int, rng: np.random.Generator) -> _ChunkSums:
        if size == 0:
            return _ChunkSums()
        sample = self.window.sample(rng, size)
        if mode == EstimateMode.EXACT:
            distance = self.oracle.signed_distance(sample.coordinates)
            plus = distance <= 2.0 * epsilon
            minus = distance <= -2.0 * epsilon
        else:
            g = sample.matrices
            plus = self.oracle.member(g)
            minus = plus.copy()
            for _ in range(n_pert):
                u_inv = self.group.exp_coordinates(-sample_ball_coordinates(self.group, epsilon, rng, size))
                v_inv = self.group.exp_coordinates(-sample_ball_coordinates(self.group, epsilon, rng, size))
                inside = self.oracle.member(u_inv @ g @ v_inv)
                plus |= inside
                minus &= inside
        wp = sample.weights * plus
        wm = sample.weights * minus
        return _ChunkSums(
            plus=float(np.sum(wp)),
            minus=float(np.sum(wm)),
            plus_sq=float(np.sum(wp * wp)),
            minus_sq=float(np.sum(wm * wm)),
            tube_sq=float(np.sum((wp - wm) ** 2)),
            count=size,
        )

    def volumes(self, epsilon: float, n_pert: Optional[int] = None, check_window: bool = True) -> VolumeEstimates:
        """Plus, minus and boundary-tube estimates from one shared set of window samples."""
        mode = self._resolve_mode()
        self._check_epsilon(epsilon, mode)
        if check_window:
            self.check_window(epsilon)
        n_pert = n_pert or self.params.n_pert
        sizes = chunk_sizes(self.params.n_points, self.params.n_chunks)
        generators = chunk_generators(self.params.seed, self.params.n_chunks, 'volumes')
        results = map_chunks(
            lambda size, rng: self._chunk(epsilon, mode, n_pert, size, rng), sizes, generators, self.params.threads
        )
        totals = _ChunkSums()
        for chunk in results:
            totals.add(chunk)

        volume = self.window.volume
        plus, plus_err = _mean_and_stderr(totals.plus, totals.plus_sq, totals.count, volume)
        minus, minus_err = _mean_and_stderr(totals.minus, totals.minus_sq, totals.count, volume)
        tube, tube_err = _mean_and_stderr(totals.plus - totals.minus, totals.tube_sq, totals.count, volume)
        sampled = mode == EstimateMode.SAMPLED
        n = self.params.n_points
        pert = n_pert if sampled else 0
        logger.debug(f"eps={epsilon}: plus={plus:.6g}±{plus_err:.2g}, minus={minus:.6g}±{minus_err:.2g} ({mode.value})")
        return VolumeEstimates(
            epsilon=epsilon,
            plus=Estimate(plus, plus_err, mode, 'under' if sampled else 'none', n, pert),
            minus=Estimate(minus, minus_err, mode, 'over' if sampled else 'none', n, pert),
            tube=Estimate(tube, tube_err, mode, 'under' if sampled else 'none', n, pert),
        )

    def estimate_plus(self, epsilon: float) -> Estimate:
        return self.volumes(epsilon).plus

    def estimate_minus(self, epsilon: float) -> Estimate:
        return self.volumes(epsilon, check_window=False).minus

    def boundary_tube(self, epsilon: float) -> Estimate:
        return self.volumes(epsilon).tube

    def estimate_volume(self) -> Estimate:
        """Haar volume of the set itself, from the same window samples."""
        sizes = chunk_sizes(self.params.n_points, self.params.n_chunks)
        generators = chunk_generators(self.params.seed, self.params.n_chunks, 'volumes')

        def work(size: int, rng: np.random.Generator) -> Tuple[float, float]:
            if size == 0:
                return 0.0, 0.0
            sample = self.window.sample(rng, size)
            values = sample.weights * self.oracle.member(sample.matrices)
            return float(np.sum(values)), float(np.sum(values * values))

        results = map_chunks(work, sizes, generators, self.params.threads)
        total = sum(r[0] for r in results)
        total_sq = sum(r[1] for r in results)
        value, err = _mean_and_stderr(total, total_sq, self.params.n_points, self.window.volume)
        return Estimate(value, err, EstimateMode.SAMPLED, 'none', self.params.n_points, 0)


def estimate_plus(oracle: BaseSetOracle, epsilon: float, params: Optional[SamplingParams] = None) -> Estimate:
    return WellRoundCertifier(oracle, params).estimate_plus(epsilon)


def estimate_minus(oracle: BaseSetOracle, epsilon: float, params: Optional[SamplingParams] = None) -> Estimate:
    return WellRoundCertifier(oracle, params).estimate_minus(epsilon)


def boundary_tube(oracle: BaseSetOracle, epsilon: float, params: Optional[SamplingParams] = None) -> Estimate:
    return WellRoundCertifier(oracle, params).boundary_tube(epsilon)


def _as_fit_row(row: Union[FitRow, VolumeEstimates, Sequence[float]]) -> FitRow:
    if isinstance(row, FitRow):
        return row
    if isinstance(row, VolumeEstimates):
        return FitRow(row.epsilon, row.plus.value, row.minus.value, row.plus.stderr, row.minus.stderr)
    return FitRow(*[float(v) for v in row])


def fit_lipschitz(rows: Sequence[Union[FitRow, VolumeEstimates, Sequence[float]]],
                  method: FitMethod = FitMethod.MAX_SLOPE) -> LipschitzFit:
    """
    Fit C in vol_plus <= (1 + C eps) vol_minus over an epsilon grid.

    MAX_SLOPE takes the largest (ratio - 1) / eps over the grid; ZERO_LIMIT extrapolates the slopes
    linearly to eps -> 0.
    """
    fit_rows = sorted((_as_fit_row(r) for r in rows), key=lambda r: r.epsilon)
    if len(fit_rows) < 2:
        raise ValidationError(f"fit_lipschitz needs at least 2 grid points, got {len(fit_rows)}")
    for row in fit_rows:
        if row.epsilon <= 0:
            raise ValidationError(f"Grid epsilons must be positive, got {row.epsilon}")
        if row.vol_minus <= 0 or row.vol_minus <= 2.0 * row.stderr_minus:
            raise DegenerateMinus(f"vol_minus {row.vol_minus:.4g} at eps={row.epsilon} is not resolved from zero")

    eps = np.array([r.epsilon for r in fit_rows])
    slopes = np.array([(r.vol_plus / r.vol_minus - 1.0) / r.epsilon for r in fit_rows])
    slope_errors = np.array([
        _ratio_stderr(r.vol_plus, r.stderr_plus, r.vol_minus, r.stderr_minus) / r.epsilon for r in fit_rows
    ])

    if method == FitMethod.MAX_SLOPE:
        index = int(np.argmax(slopes))
        C = max(0.0, float(slopes[index]))
        spread = 2.0 * float(slope_errors[index])
    else:
        _, intercept = np.polyfit(eps, slopes, 1)
        C = max(0.0, float(intercept))
        spread = 2.0 * float(np.max(slope_errors))
    return LipschitzFit(
        C=C, lower=max(0.0, C - spread), upper=C + spread, method=method,
        slopes=tuple(float(s) for s in slopes),
    )


def certify(oracle: Union[BaseSetOracle, Callable[[float], BaseSetOracle]],
            eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
            params: Optional[SamplingParams] = None,
            T_values: Optional[Sequence[float]] = None,
            convergence_study: bool = False) -> WrReport:
    """
    Estimate volumes on the epsilon grid and fit the Lipschitz constant.

    With `T_values`, `oracle` is a callable T -> set and the fitted constant is the worst over T.
    """
    params = params or SamplingParams()
    params.validate()
    eps_grid = sorted(float(e) for e in eps_grid)
    if not eps_grid:
        raise ValidationError("Epsilon grid is empty")

    if T_values is None:
        members = {0.0: oracle}
        T_list = [0.0]
    else:
        T_list = [float(T) for T in T_values]
        members = {T: oracle(T) for T in T_list}

    cells: Dict[float, List[VolumeEstimates]] = {}
    mode = params.mode
    for T in T_list:
        certifier = WellRoundCertifier(members[T], params)
        cells[T] = [certifier.volumes(e) for e in eps_grid]
        mode = cells[T][0].plus.mode
        logger.info(f"Certified T={T}: ratios {[round(c.ratio, 6) for c in cells[T]]}")

    fit = zero_fit = None
    if len(eps_grid) >= 2:
        fits = [fit_lipschitz(cells[T], FitMethod.MAX_SLOPE) for T in T_list]
        zero_fits = [fit_lipschitz(cells[T], FitMethod.ZERO_LIMIT) for T in T_list]
        fit = max(fits, key=lambda f: f.C)
        zero_fit = max(zero_fits, key=lambda f: f.C)

    report = WrReport(
        epsilons=eps_grid, T_values=T_list, cells=cells, fit=fit, zero_limit_fit=zero_fit,
        params=params, mode=mode,
    )
    if convergence_study and mode == EstimateMode.SAMPLED:
        report.convergence = perturbation_convergence(members[T_list[-1]], eps_grid, params)
    return report


def perturbation_convergence(oracle: BaseSetOracle, eps_grid: Sequence[float], params: SamplingParams,
                             perts: Sequence[int] = CONVERGENCE_PERTS) -> List[Dict[str, Any]]:
    """Re-run the sampled estimates with more perturbation pairs to expose the one-sided bias."""
    certifier = WellRoundCertifier(oracle, params)
    study = []
    for n_pert in perts:
        cells = [certifier.volumes(e, n_pert=n_pert) for e in eps_grid]
        entry: Dict[str, Any] = {
            'n_pert': n_pert,
            'vol_plus': [c.plus.value for c in cells],
            'vol_minus': [c.minus.value for c in cells],
            'fitted_C': None,
        }
        if len(cells) >= 2:
            try:
                entry['fitted_C'] = fit_lipschitz(cells).C
            except DegenerateMinus as e:
                logger.warning(f"Convergence study at n_pert={n_pert}: {e}")
        study.append(entry)
    return study


def tube_identity_check(oracle: BaseSetOracle, epsilon: float, n_points: int = 10_000,
                        seed: int = DEFAULT_SEED, band: float = 1e-9) -> TubeIdentityReport:
    """
    Compare, point by point, membership in (dilation by 2 eps) minus (erosion by 2 eps) with
    |signed distance| <= 2 eps. Disagreements inside `band` of the threshold are rounding.
    """
    if not (oracle.group.is_euclidean and oracle.has_signed_distance and hasattr(oracle, 'dilated_member')):
        raise ValidationError("Tube identity check needs a euclidean oracle with closed-form morphology")
    if not epsilon > 0:
        raise EpsilonTooLarge(f"epsilon must be positive, got {epsilon}")
    rng = generator_for(seed, 'tube-identity')
    coordinates = oracle.group.require_window().sample_coordinates(rng, n_points)
    delta = 2.0 * epsilon
    fattened = oracle.dilated_member(coordinates, delta)
    eroded = oracle.eroded_member(coordinates, delta)
    distance = oracle.signed_distance(coordinates)
    tube = np.abs(distance) <= delta
    disagree = (fattened & ~eroded) != tube
    near_threshold = np.abs(np.abs(distance) - delta) <= band
    outside = int(np.sum(disagree & ~near_threshold))
    report = TubeIdentityReport(epsilon, n_points, int(np.sum(disagree)), outside)
    logger.info(f"Tube identity at eps={epsilon}: {report.disagreements} disagreements, {outside} outside band")
    return report


@register_rule('single_set')
def single_set_constant(c: Any, mu_B: Any) -> WrCertificate:
    """C = 2c / mu(B), valid for eps < mu(B) / (2c)."""
    c, mu_B = exact(c), exact(mu_B)
    if not c > 0 or not mu_B > 0:
        raise NonpositiveInput(f"c and mu(B) must be positive, got c={c}, mu={mu_B}")
    return WrCertificate(C=2 * c / mu_B, T0=exact(0), eps0=mu_B / (2 * c), rule='single_set',
                         params=(('c', c), ('mu_B', mu_B)))


def _check_measures(**measures: Any) -> None:
    for name, value in measures.items():
        if not value > 0:
            raise NonpositiveInput(f"{name} must be positive, got {value}")


@register_rule('intersection')
def intersection_certificate(C: Any, C_prime: Any, mu_B: Any, mu_B_prime: Any, mu_meet: Any) -> WrCertificate:
    C, C_prime, mu_B, mu_B_prime, mu_meet = (exact(v) for v in (C, C_prime, mu_B, mu_B_prime, mu_meet))
    if not mu_meet > 0:
        raise EmptyIntersection(f"mu(B ∩ B') must be positive, got {mu_meet}")
    _check_measures(C=C, C_prime=C_prime, mu_B=mu_B, mu_B_prime=mu_B_prime)
    value = 2 * max(C, C_prime) * (mu_B + mu_B_prime) / mu_meet
    return WrCertificate(C=value, T0=exact(0), eps0=1 / value, rule='intersection', params=(
        ('C', C), ('C_prime', C_prime), ('mu_B', mu_B), ('mu_B_prime', mu_B_prime), ('mu_meet', mu_meet)))


@register_rule('union')
def union_certificate(C: Any, C_prime: Any, mu_B: Any, mu_B_prime: Any, mu_join: Any) -> WrCertificate:
    C, C_prime, mu_B, mu_B_prime, mu_join = (exact(v) for v in (C, C_prime, mu_B, mu_B_prime, mu_join))
    _check_measures(C=C, C_prime=C_prime, mu_B=mu_B, mu_B_prime=mu_B_prime, mu_join=mu_join)
    value = 2 * max(C, C_prime) * (mu_B + mu_B_prime) / mu_join
    return WrCertificate(C=value, T0=exact(0), eps0=1 / value, rule='union', params=(
        ('C', C), ('C_prime', C_prime), ('mu_B', mu_B), ('mu_B_prime', mu_B_prime), ('mu_join', mu_join)))


def combine_sets(C: Any, C_prime: Any, mu_B: Any, mu_B_prime: Any, mu_meet: Any,
                 mu_join: Any) -> Tuple[WrCertificate, WrCertificate]:
    """Constants for B ∩ B' and B ∪ B' from those of B and B'."""
    return (
        intersection_certificate(C, C_prime, mu_B, mu_B_prime, mu_meet),
        union_certificate(C, C_prime, mu_B, mu_B_prime, mu_join),
    )
