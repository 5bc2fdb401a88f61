import logging

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from scipy import stats

from .Certificates import Number, WrCertificate, exact, register_rule
from .Errors import (
    ChartOverflow, EmptyList, GroupMismatch, NonpositiveF, NotStarShaped, OutOfConvergenceRegion,
    ParameterOutOfRange, ValidationError
)
from .FiberFamilies import BlcFamily, FiberedOracle, PulledBackFibers, projection_map, sample_base_points
from .GroupModels import (
    GroupModel, diagonal_A, euclidean, product, sample_ball_coordinates, special_linear, special_orthogonal,
    unipotent_N
)
from .LinalgCore import kan_decompose
from .SeedStream import DEFAULT_SEED, generator_for
from .SetOracles import ConvexOracle, PreimageOracle, ProductOracle, WholeWindowOracle
from .WrCertifier import EstimateMode, SamplingParams, WellRoundCertifier, single_set_constant

logger = logging.getLogger(__name__)

MatrixMap = Callable[[np.ndarray], np.ndarray]

MEASURE_P_THRESHOLD = 0.01
BALANCING_ITERATIONS = 3


# certificate rules


@register_rule('pullback', inputs='one')
def pullback_certificate(cert: WrCertificate, F: Any) -> WrCertificate:
    """Parameters (T0, F max{C, 1}) of the preimage of an LWR family under a roundomorphism bounded by F."""
    F = exact(F)
    if not F > 0:
        raise NonpositiveF(f"Modulus bound F must be positive, got {F}")
    C = F * max(cert.C, 1)
    return WrCertificate(C=C, T0=cert.T0, eps0=1 / C, rule='pullback', params=(('F', F),), inputs=(cert,))


@register_rule('product', inputs='many')
def product_certificate(certs: Sequence[WrCertificate], F: Any = 1) -> WrCertificate:
    """
    Fold the pairwise bound (1 + C1 eps)(1 + C2 eps) <= 1 + 3 max{C1, C2} eps from the left over the
    factors, then pull back by F.
    """
    certs = list(certs)
    if not certs:
        raise EmptyList("product_certificate needs at least one factor certificate")
    F = exact(F)
    if not F > 0:
        raise NonpositiveF(f"Modulus bound F must be positive, got {F}")
    folded = certs[0].C
    for cert in certs[1:]:
        folded = 3 * max(folded, cert.C)
    C = F * max(folded, 1)
    T0 = max(cert.T0 for cert in certs)
    return WrCertificate(C=C, T0=T0, eps0=1 / C, rule='product', params=(('F', F),), inputs=tuple(certs))


@register_rule('fibered')
def fibered_constant(C_D: Any, C_E: Any, c: Any, V_min: Any, V_max: Any) -> WrCertificate:
    """C_B = 6 (V_max / V_min) C_E + 3 C_D c (1 + C_D), valid for eps < 1 / (C_D c (1 + C_D) + C_E)."""
    C_D, C_E, c, V_min, V_max = (exact(v) for v in (C_D, C_E, c, V_min, V_max))
    if C_D < 1 or c < 1:
        raise ParameterOutOfRange(f"C_D and c must be at least 1, got C_D={C_D}, c={c}")
    if not V_min > 0 or not V_max > 0 or C_E < 0:
        raise ParameterOutOfRange(f"Volumes must be positive and C_E non-negative: V_min={V_min}, V_max={V_max}, C_E={C_E}")
    fiber_part = C_D * c * (1 + C_D)
    C_B = 6 * (V_max / V_min) * C_E + 3 * fiber_part
    return WrCertificate(C=C_B, T0=exact(0), eps0=1 / (fiber_part + C_E), rule='fibered', params=(
        ('C_D', C_D), ('C_E', C_E), ('c', c), ('V_min', V_min), ('V_max', V_max)))


def blc_from_dilation(C: Any, R: Any, n: int) -> Number:
    """BLC constant 16^(n+1) R C of fibers with D + B_eps inside (1 + C eps) D and radius R."""
    C, R = exact(C), exact(R)
    if C < 1 or not R > 0 or int(n) < 1:
        raise ParameterOutOfRange(f"blc_from_dilation needs C >= 1, R > 0, n >= 1; got C={C}, R={R}, n={n}")
    return 16 ** (int(n) + 1) * R * C


# roundomorphisms


@dataclass(frozen=True, eq=False)
class Roundomorphism:
    """
    A map between groups with a candidate Lipschitz modulus f(g).

    `target_density`, when set, is the Haar density the target is measured with (as a function of
    target matrices); otherwise the target window's density is used.
    """
    name: str
    source: GroupModel
    target: GroupModel
    map_fn: MatrixMap
    modulus: Callable[[np.ndarray], np.ndarray]
    target_density: Optional[MatrixMap] = None
    measure_preserving_checked: bool = False
    test_metadata: Tuple[Tuple[str, Any], ...] = ()

    def __call__(self, matrices: np.ndarray) -> np.ndarray:
        return self.map_fn(np.asarray(matrices, dtype=float))

    def moduli(self, matrices: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.modulus(np.asarray(matrices, dtype=float)), (len(matrices),)).astype(float)

    def with_measure_check(self, report: 'MeasurePreservationReport') -> 'Roundomorphism':
        return replace(self, measure_preserving_checked=report.passed, test_metadata=(
            ('p_value', report.p_value), ('statistic', report.statistic), ('n_samples', report.n_samples)))


def _constant_modulus(value: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda matrices: np.full(len(matrices), float(value))


def identity_roundomorphism(group: GroupModel) -> Roundomorphism:
    return Roundomorphism(
        name=f"id_{group.name}", source=group, target=group, map_fn=lambda M: M,
        modulus=_constant_modulus(1.0), measure_preserving_checked=True,
        test_metadata=(('reason', 'identity'),),
    )


def dilation_roundomorphism(n: int, factor: float, claimed_modulus: Optional[float] = None) -> Roundomorphism:
    """x -> factor * x on euclidean(n); the true modulus is |factor|."""
    group = euclidean(n)

    def dilate(M: np.ndarray) -> np.ndarray:
        out = M.copy()
        out[:, :n, n] *= factor
        return out

    return Roundomorphism(
        name=f"dilation_{factor:g}", source=group, target=group, map_fn=dilate,
        modulus=_constant_modulus(abs(factor) if claimed_modulus is None else claimed_modulus),
    )


def iwasawa_modulus(matrices: np.ndarray) -> np.ndarray:
    """(1 + |Ad_g|)^3 on SL2."""
    return (1.0 + special_linear(2).ad_operator_norms(matrices)) ** 3


def iwasawa_roundomorphism(modulus: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Roundomorphism:
    """
    SL2 -> SO2 x A2 x N2, g = k a n -> (k, a, n).

    The target is measured with e^{2t} dk ds dx / sqrt(2), with a = diag(e^t, e^-t) and s the
    orthonormal Lie coordinate of A2, which is the pushforward of Haar measure on SL2.
    """
    source = special_linear(2)
    target = product([special_orthogonal(2), diagonal_A(2), unipotent_N(2)])

    def decompose(M: np.ndarray) -> np.ndarray:
        out = np.zeros((M.shape[0], 6, 6))
        for i, g in enumerate(M):
            kan = kan_decompose(g)
            out[i, 0:2, 0:2] = kan.k
            out[i, 2:4, 2:4] = np.diag(kan.a)
            out[i, 4:6, 4:6] = kan.n
        return out

    def density(M: np.ndarray) -> np.ndarray:
        return M[:, 2, 2] ** 2 / np.sqrt(2.0)

    return Roundomorphism(
        name='iwasawa', source=source, target=target, map_fn=decompose,
        modulus=modulus or iwasawa_modulus, target_density=density,
    )


def compose_roundomorphisms(r1: Roundomorphism, r2: Roundomorphism) -> Roundomorphism:
    """r2 after r1, with modulus f(g) = f2(r1(g)) f1(g)."""
    if r1.target.name != r2.source.name or r1.target.ambient_dim != r2.source.ambient_dim:
        raise GroupMismatch(f"Cannot compose {r1.name}: -> {r1.target.name} with {r2.name}: {r2.source.name} ->")

    def modulus(M: np.ndarray) -> np.ndarray:
        return r2.moduli(r1(M)) * r1.moduli(M)

    return Roundomorphism(
        name=f"{r2.name}({r1.name})", source=r1.source, target=r2.target,
        map_fn=lambda M: r2(r1(M)), modulus=modulus, target_density=r2.target_density,
        measure_preserving_checked=r1.measure_preserving_checked and r2.measure_preserving_checked,
    )


@dataclass
class LocalLipschitzReport:
    name: str
    epsilons: List[float]
    n_tests: int
    n_pert: int
    worst_ratio: float
    worst_index: int
    worst_epsilon: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= 1.0 + self.slack

    def to_document(self) -> Dict[str, Any]:
        return {
            'roundomorphism': self.name,
            'epsilons': self.epsilons,
            'n_tests': self.n_tests,
            'n_pert': self.n_pert,
            'worst_ratio': self.worst_ratio,
            'worst_epsilon': self.worst_epsilon,
            'passed': self.passed,
        }


def _two_sided_split(target: GroupModel, h: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Smallest max(|log u'|, |log v'|) found for h = u' b v', per row.

    Starts from the all-left and all-right decompositions and balances a split of the left factor
    for a few iterations.
    """
    b_inv = np.linalg.inv(b)
    left = h @ b_inv
    right = b_inv @ h
    a = target.chart_norm(left)
    c = target.chart_norm(right)
    best = np.minimum(a, c)
    total = a + c
    active = total > 0
    if not np.any(active):
        return best
    z_left = target.log_coordinates(left[active])
    lam = np.where(active, c / np.where(active, total, 1.0), 0.0)[active]
    for _ in range(BALANCING_ITERATIONS):
        u = target.exp_coordinates(lam[:, None] * z_left)
        v = b_inv[active] @ np.linalg.inv(u) @ h[active]
        p = target.coordinate_norm(lam[:, None] * z_left)
        q = target.chart_norm(v)
        best[active] = np.minimum(best[active], np.maximum(p, q))
        lam = np.clip(lam + (q - p) / total[active], 0.0, 1.0)
    return best


def verify_local_lipschitz(r: Roundomorphism, test_elements: Optional[np.ndarray] = None,
                           eps_grid: Sequence[float] = (1e-3,), n_pert: int = 32, seed: int = DEFAULT_SEED,
                           n_tests: int = 64, slack: float = 0.05) -> LocalLipschitzReport:
    """
    Check r(O_eps g O_eps) inside O_{f eps} r(g) O_{f eps} on sampled perturbations of test points.

    The ratio reported is the decomposition size achieved divided by f(g) eps; it is an upper bound
    for the best decomposition.
    """
    rng = generator_for(seed, 'local-lipschitz', r.name)
    if test_elements is None:
        test_elements = r.source.require_window().sample(rng, n_tests).matrices
    g = np.asarray(test_elements, dtype=float)
    if g.ndim == 2:
        g = g[None]
    f = r.moduli(g)
    for eps in eps_grid:
        if np.any(eps * f > r.target.epsilon_chart):
            raise ChartOverflow(
                f"eps * f(g) reaches {float(np.max(eps * f)):.4g} > chart radius {r.target.epsilon_chart}"
            )
    base = r(g)
    worst, worst_index, worst_eps = 0.0, 0, float(eps_grid[0])
    for eps in eps_grid:
        for _ in range(n_pert):
            u = r.source.exp_coordinates(sample_ball_coordinates(r.source, eps, rng, g.shape[0], surface=True))
            v = r.source.exp_coordinates(sample_ball_coordinates(r.source, eps, rng, g.shape[0], surface=True))
            try:
                sizes = _two_sided_split(r.target, r(u @ g @ v), base)
            except OutOfConvergenceRegion as e:
                raise ChartOverflow(f"Image perturbation left the logarithm chart: {e}")
            ratios = sizes / (f * eps)
            index = int(np.argmax(ratios))
            if ratios[index] > worst:
                worst, worst_index, worst_eps = float(ratios[index]), index, float(eps)
    report = LocalLipschitzReport(
        name=r.name, epsilons=[float(e) for e in eps_grid], n_tests=g.shape[0], n_pert=n_pert,
        worst_ratio=worst, worst_index=worst_index, worst_epsilon=worst_eps, slack=slack,
    )
    logger.info(f"Local Lipschitz check of {r.name}: worst ratio {worst:.6f} ({'pass' if report.passed else 'fail'})")
    return report


@dataclass
class MeasurePreservationReport:
    statistic: float
    dof: int
    p_value: float
    n_samples: int
    pushforward_masses: List[float]
    target_masses: List[float]

    @property
    def passed(self) -> bool:
        return self.p_value > MEASURE_P_THRESHOLD

    def to_document(self) -> Dict[str, Any]:
        return {
            'statistic': self.statistic,
            'dof': self.dof,
            'p_value': self.p_value,
            'passed': self.passed,
            'n_samples': self.n_samples,
            'pushforward_masses': self.pushforward_masses,
            'target_masses': self.target_masses,
        }


def _cell_index(window, coordinates: np.ndarray, bins: int) -> np.ndarray:
    """Index of the grid cell of the target window containing each point, or -1 outside it."""
    scaled = (coordinates - window.lower) / (window.upper - window.lower)
    inside = np.ones(coordinates.shape[0], dtype=bool)
    for axis, periodic in enumerate(window.periodic):
        if periodic:
            scaled[:, axis] = np.mod(scaled[:, axis], 1.0)
        else:
            inside &= (scaled[:, axis] >= 0.0) & (scaled[:, axis] < 1.0)
    cells = np.clip(np.floor(scaled * bins).astype(int), 0, bins - 1)
    index = np.ravel_multi_index(tuple(cells.T), (bins,) * window.dim)
    return np.where(inside, index, -1)


def _cell_masses(cells: np.ndarray, values: np.ndarray, n_cells: int, volume: float) -> Tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    sums = np.zeros(n_cells)
    squares = np.zeros(n_cells)
    keep = cells >= 0
    np.add.at(sums, cells[keep], values[keep])
    np.add.at(squares, cells[keep], values[keep] ** 2)
    mean = sums / n
    variance = np.maximum(squares / n - mean ** 2, 0.0)
    return volume * mean, volume * np.sqrt(variance / n)


def check_measure_preservation(r: Roundomorphism, n_samples: int = 50_000, seed: int = DEFAULT_SEED,
                               bins: int = 2) -> MeasurePreservationReport:
    """
    Compare the pushforward of source Haar mass with target Haar mass on the cells of a grid over
    the target window. The source window must map onto a superset of the target window.
    """
    source_window = r.source.require_window()
    target_window = r.target.require_window()
    n_cells = bins ** target_window.dim

    rng = generator_for(seed, 'measure-preservation', r.name)
    sample = source_window.sample(rng, n_samples)
    pushed = target_window.from_matrices(r(sample.matrices))
    pushed_mass, pushed_err = _cell_masses(
        _cell_index(target_window, pushed, bins), sample.weights, n_cells, source_window.volume
    )

    reference = target_window.sample(rng, 4 * n_samples)
    density = reference.weights if r.target_density is None else r.target_density(reference.matrices)
    target_mass, target_err = _cell_masses(
        _cell_index(target_window, reference.coordinates, bins), density, n_cells, target_window.volume
    )

    variance = pushed_err ** 2 + target_err ** 2
    usable = variance > 0
    statistic = float(np.sum((pushed_mass[usable] - target_mass[usable]) ** 2 / variance[usable]))
    dof = int(np.sum(usable))
    p_value = float(stats.chi2.sf(statistic, dof)) if dof > 0 else 0.0
    report = MeasurePreservationReport(
        statistic=statistic, dof=dof, p_value=p_value, n_samples=n_samples,
        pushforward_masses=[float(m) for m in pushed_mass], target_masses=[float(m) for m in target_mass],
    )
    logger.info(f"Measure preservation of {r.name}: chi2={statistic:.3f} on {dof} cells, p={p_value:.4f}")
    return report


# convex dilation and BLC


@dataclass
class DilationReport:
    alpha: float
    C: float
    epsilons: List[float]
    n_samples: int
    worst_margin: float
    blc_constant: Number
    certificate: WrCertificate

    def to_document(self) -> Dict[str, Any]:
        return {
            'alpha': self.alpha,
            'C': self.C,
            'epsilons': self.epsilons,
            'n_samples': self.n_samples,
            'worst_margin': self.worst_margin,
            'blc_constant': float(self.blc_constant),
            'certificate': self.certificate.to_document(),
        }


def _sample_inside(body: ConvexOracle, rng: np.random.Generator, count: int) -> np.ndarray:
    lower, upper = body.bounds()
    found, total = [], 0
    while total < count:
        candidates = rng.uniform(lower, upper, size=(2 * count, lower.shape[0]))
        inside = candidates[body.member_coordinates(candidates)]
        found.append(inside)
        total += inside.shape[0]
    return np.concatenate(found)[:count]


def convex_dilation_check(body: ConvexOracle, eps_grid: Sequence[float] = (0.01, 0.05), n_samples: int = 10_000,
                          seed: int = DEFAULT_SEED, alpha: Optional[float] = None, c: Any = 1,
                          tol: float = 1e-9) -> DilationReport:
    """
    Check x + eps v in (1 + eps / alpha) body for sampled x in the body and unit v, where alpha is
    the inradius about the origin. Yields C = 1/alpha with its BLC and single-set constants.
    """
    if not body.group.is_euclidean:
        raise ValidationError(f"Convex dilation needs a euclidean group, got {body.group.name}")
    alpha = body.inradius_about_origin() if alpha is None else float(alpha)
    if not alpha > 0:
        raise NotStarShaped(f"{body.kind} has no interior ball about the origin (inradius {alpha:.4g})")
    rng = generator_for(seed, 'convex-dilation', body.kind)
    n = body.coordinate_dim
    points = _sample_inside(body, rng, n_samples)
    directions = rng.standard_normal((n_samples, n))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    worst = -np.inf
    for eps in eps_grid:
        dilated = body.scaled(1.0 + eps / alpha)
        margin = dilated.signed_distance(points + eps * directions)
        worst = max(worst, float(np.max(margin)))
        if worst > tol * max(1.0, body.circumradius()):
            raise NotStarShaped(f"x + eps v leaves (1 + eps/alpha) body by {worst:.3g} at eps={eps}")
    C = 1.0 / alpha
    blc = blc_from_dilation(max(C, 1.0), body.circumradius(), n)
    certificate = single_set_constant(c, body.volume())
    logger.info(f"Convex dilation check of {body.kind}: alpha={alpha:.6g}, C={C:.6g}, worst margin {worst:.3g}")
    return DilationReport(
        alpha=alpha, C=C, epsilons=[float(e) for e in eps_grid], n_samples=n_samples,
        worst_margin=worst, blc_constant=blc, certificate=certificate,
    )


@dataclass
class BlcCondition:
    name: str
    passed: bool
    worst: float
    witness: Optional[List[float]] = None
    detail: str = ''

    def to_document(self) -> Dict[str, Any]:
        return {'name': self.name, 'passed': self.passed, 'worst': self.worst, 'witness': self.witness,
                'detail': self.detail}


@dataclass
class BlcReport:
    family: Dict[str, Any]
    epsilons: List[float]
    conditions: List[BlcCondition] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> BlcCondition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_document(self) -> Dict[str, Any]:
        return {
            'family': self.family,
            'epsilons': self.epsilons,
            'passed': self.passed,
            'conditions': [c.to_document() for c in self.conditions],
        }


def _uniform_lwr_condition(family: BlcFamily, base_points: np.ndarray, eps_grid: Sequence[float],
                           params: SamplingParams) -> BlcCondition:
    usable = [e for e in eps_grid if e < 1.0 / family.C_D] or [min(eps_grid)]
    exact_params = replace(params, mode=EstimateMode.EXACT)
    worst, witness = -np.inf, None
    passed = True
    for z in base_points:
        certifier = WellRoundCertifier(family.fibers.fiber_at(z), exact_params)
        for eps in usable:
            volumes = certifier.volumes(eps)
            slope = (volumes.ratio - 1.0) / eps
            if slope > worst:
                worst, witness = slope, [float(v) for v in z]
            if slope > family.C_D + 2.0 * volumes.ratio_stderr / eps:
                passed = False
    return BlcCondition('uniform_lwr', passed, float(worst), witness,
                        f"fiber slopes (ratio - 1)/eps against C_D={family.C_D} at eps {usable}")


def _continuity_condition(family: BlcFamily, base_points: np.ndarray, eps_grid: Sequence[float],
                          rng: np.random.Generator, n_fiber_points: int) -> BlcCondition:
    base_group = family.base_group
    base_window = base_group.require_window()
    fiber_window = family.fiber_group.require_window()
    g = base_window.to_matrices(base_points)
    worst, witness = 0.0, None
    for eps in eps_grid:
        u = base_group.exp_coordinates(sample_ball_coordinates(base_group, eps, rng, g.shape[0]))
        v = base_group.exp_coordinates(sample_ball_coordinates(base_group, eps, rng, g.shape[0]))
        moved = base_window.from_matrices(u @ g @ v)
        for z, z_moved in zip(base_points, moved):
            y = fiber_window.sample_coordinates(rng, n_fiber_points)
            distance = family.fibers.fiber_at(z).signed_distance(y)
            inside_moved = family.fibers.member(z_moved[None], y)
            # D_{z'} must sit between the erosion and the fattening of D_z by C_D eps
            need = max(
                float(np.max(distance[inside_moved], initial=0.0)),
                float(np.max(-distance[~inside_moved], initial=0.0)),
            )
            required = need / (2.0 * eps)
            if required > worst:
                worst, witness = required, [float(v) for v in z] + [float(v) for v in z_moved]
    passed = worst <= family.C_D * (1.0 + 1e-9)
    return BlcCondition('lipschitz_continuity', passed, worst, witness,
                        "smallest constant sandwiching D_z' between the C eps erosion and fattening of D_z")


def _volume_condition(family: BlcFamily, base_points: np.ndarray) -> BlcCondition:
    volumes = np.array([family.fibers.fiber_at(z).volume() for z in base_points])
    index = int(np.argmin(volumes))
    return BlcCondition('volume_lower_bound', bool(volumes[index] >= family.V_min * (1.0 - 1e-12)),
                        float(volumes[index]), [float(v) for v in base_points[index]],
                        f"smallest fiber volume against V_min={family.V_min}")


def _bounded_condition(family: BlcFamily, base_points: np.ndarray) -> BlcCondition:
    radii = np.array([family.fibers.fiber_at(z).circumradius() for z in base_points])
    index = int(np.argmax(radii))
    return BlcCondition('bounded', bool(radii[index] <= family.bound_radius * (1.0 + 1e-12)),
                        float(radii[index]), [float(v) for v in base_points[index]],
                        f"largest fiber circumradius against R={family.bound_radius}")


def blc_check(family: BlcFamily, eps_grid: Sequence[float] = (0.01, 0.05), params: Optional[SamplingParams] = None,
              seed: Optional[int] = None, n_base: int = 16, n_lwr: int = 3, n_fiber_points: int = 2_000) -> BlcReport:
    """Sampled check of the four BLC conditions; reports every condition with its worst witness."""
    params = params or SamplingParams(n_points=20_000)
    seed = params.seed if seed is None else seed
    params = replace(params, seed=seed)
    eps_grid = sorted(float(e) for e in eps_grid)
    rng = generator_for(seed, 'blc-check')
    base_points = sample_base_points(family, rng, n_base)
    report = BlcReport(family=family.describe(), epsilons=eps_grid)
    report.conditions.append(_uniform_lwr_condition(family, base_points[:n_lwr], eps_grid, params))
    report.conditions.append(_continuity_condition(family, base_points, eps_grid, rng, n_fiber_points))
    report.conditions.append(_volume_condition(family, base_points))
    report.conditions.append(_bounded_condition(family, base_points))
    for c in report.conditions:
        log = logger.info if c.passed else logger.warning
        log(f"BLC condition {c.name}: {'pass' if c.passed else 'FAIL'} (worst {c.worst:.6g})")
    return report


# family transformations


def pullback_family(family: BlcFamily, r: Roundomorphism, F: Any) -> BlcFamily:
    """Fibers D_{r(z0)} over r^-1(base set), with C_D scaled by F = sup f on that preimage."""
    F = exact(F)
    if not F > 0:
        raise NonpositiveF(f"Modulus bound F must be positive, got {F}")
    if r.target.name != family.base_group.name:
        raise GroupMismatch(f"{r.name} maps into {r.target.name}, the family lives over {family.base_group.name}")
    source_window = r.source.require_window()
    target_window = family.base_group.require_window()

    def base_map(z0: np.ndarray) -> np.ndarray:
        return target_window.from_matrices(r(source_window.to_matrices(np.atleast_2d(z0))))

    base_set = PreimageOracle(r.source, family.base_set, r.map_fn)
    return replace(
        family, base_group=r.source, base_set=base_set,
        fibers=PulledBackFibers(family.fibers, base_map, r.name), C_D=float(F) * family.C_D,
    )


def extend_base(family: BlcFamily, Q: GroupModel, Q_set=None) -> BlcFamily:
    """The same fibers over (base set) x Q_set in P x Q, constant in the new coordinates."""
    base_group = product([family.base_group, Q])
    parts = [family.base_set, Q_set if Q_set is not None else WholeWindowOracle(Q)]
    base_dim = family.base_group.require_window().dim
    return replace(
        family, base_group=base_group, base_set=ProductOracle(base_group, parts),
        fibers=PulledBackFibers(family.fibers, projection_map(base_dim), 'projection'),
    )


def fibered_set(family: BlcFamily, T: Optional[float] = None) -> FiberedOracle:
    return family.fibered_oracle(T)


def family_certificate(family: BlcFamily, C_E: Any = None) -> WrCertificate:
    """fibered_constant with the family's own parameters, V_max being the volume of its bounding ball."""
    C_E = family.C_E if C_E is None else C_E
    if C_E is None:
        raise ValidationError("The family has no base constant C_E")
    return fibered_constant(family.C_D, C_E, family.c, family.V_min, family.V_max)
