import math

import pytest

from lib.Errors import DegenerateMinus, EpsilonTooLarge, ValidationError, WindowTooSmall
from lib.GroupModels import builtin_group, euclidean
from lib.SetOracles import BallOracle, BoxOracle, IntersectionOracle, PolygonOracle
from lib.WrCertifier import (
    EstimateMode, FitMethod, FitRow, SamplingParams, WellRoundCertifier, certify, fit_lipschitz,
    intersection_certificate, tube_identity_check
)

EXACT = SamplingParams(n_points=200_000, mode=EstimateMode.EXACT)


@pytest.fixture
def disk():
    return BallOracle(euclidean(2), 1.0)


@pytest.mark.parametrize("eps", [0.01, 0.02, 0.05])
def test_exact_volumes_of_disk(disk, eps):
    volumes = WellRoundCertifier(disk, EXACT).volumes(eps)
    assert volumes.plus.bias == 'none'
    assert abs(volumes.plus.value - math.pi * (1.0 + 2.0 * eps) ** 2) <= 3.0 * volumes.plus.stderr
    assert abs(volumes.minus.value - math.pi * (1.0 - 2.0 * eps) ** 2) <= 3.0 * volumes.minus.stderr
    assert volumes.tube.value == pytest.approx(volumes.plus.value - volumes.minus.value)


@pytest.mark.parametrize("mode, n_points", [(EstimateMode.EXACT, 50_000), (EstimateMode.SAMPLED, 20_000)])
def test_volumes_are_monotone_in_epsilon(disk, mode, n_points):
    certifier = WellRoundCertifier(disk, SamplingParams(n_points=n_points, n_pert=16, mode=mode))
    rows = [certifier.volumes(eps) for eps in (0.01, 0.02, 0.05, 0.1)]
    for smaller, larger in zip(rows, rows[1:]):
        plus_slack = 2.0 * math.hypot(smaller.plus.stderr, larger.plus.stderr)
        minus_slack = 2.0 * math.hypot(smaller.minus.stderr, larger.minus.stderr)
        assert larger.plus.value >= smaller.plus.value - plus_slack
        assert larger.minus.value <= smaller.minus.value + minus_slack
        if mode == EstimateMode.EXACT:
            # the same window points are thresholded at growing distances
            assert larger.plus.value >= smaller.plus.value - 1e-12
            assert larger.minus.value <= smaller.minus.value + 1e-12


@pytest.mark.parametrize("mode", [EstimateMode.EXACT, EstimateMode.SAMPLED])
def test_set_volume_is_sandwiched(disk, mode):
    certifier = WellRoundCertifier(disk, SamplingParams(n_points=20_000, n_pert=8, mode=mode))
    volume = certifier.estimate_volume().value
    assert volume == pytest.approx(math.pi, rel=0.05)
    for eps in (0.01, 0.02, 0.05):
        volumes = certifier.volumes(eps)
        assert volumes.minus.value <= volume + 1e-12
        assert volume <= volumes.plus.value + 1e-12


@pytest.mark.parametrize("body", [
    BallOracle(euclidean(2), 1.0),
    BoxOracle(euclidean(2), [-1.0, -1.0], [1.0, 1.0]),
    PolygonOracle(euclidean(2), [[-1.5, -1.2], [1.5, -1.2], [0.0, 1.5]]),
])
def test_fitted_constant_is_stable_under_grid_refinement(body):
    coarse = certify(body, eps_grid=[0.01, 0.02, 0.05], params=EXACT).fitted_C
    fine = certify(body, eps_grid=[0.005, 0.01, 0.025], params=EXACT).fitted_C
    assert abs(fine - coarse) / coarse < 0.2


def test_overlapping_squares_stay_below_intersection_constant():
    plane = euclidean(2)
    left = BoxOracle(plane, [-1.0, -1.0], [0.5, 1.0])
    right = BoxOracle(plane, [-0.5, -1.0], [1.0, 1.0])
    params = SamplingParams(n_points=20_000, mode=EstimateMode.EXACT)
    C_left = certify(left, eps_grid=[0.02, 0.05], params=params).fitted_C
    C_right = certify(right, eps_grid=[0.02, 0.05], params=params).fitted_C
    bound = float(intersection_certificate(C_left, C_right, 3.0, 3.0, 2.0).C)

    meet = IntersectionOracle([left, right])
    sampled = certify(meet, eps_grid=[0.02, 0.05], params=SamplingParams(n_points=20_000, n_pert=16))
    assert sampled.mode == EstimateMode.SAMPLED
    assert 0.0 < sampled.fitted_C <= bound


def test_exact_mode_rejects_intersections(disk):
    meet = IntersectionOracle([disk, BoxOracle(euclidean(2), [-0.5, -0.5], [0.5, 0.5])])
    with pytest.raises(ValidationError):
        WellRoundCertifier(meet, SamplingParams(n_points=100, mode=EstimateMode.EXACT)).volumes(0.01)


def test_disk_certificate_near_eight(disk):
    report = certify(disk, params=EXACT)
    assert report.mode == EstimateMode.EXACT
    assert report.zero_limit_fit.C == pytest.approx(8.0, rel=0.15)
    assert report.fitted_C >= report.zero_limit_fit.C
    document = report.to_document()
    assert document['fitted_C'] == report.fitted_C
    assert document['mode'] == 'exact'
    assert len(document['cells']) == 3


def test_sampled_estimates_bracket_exact(disk):
    params = SamplingParams(n_points=5_000, n_pert=8, seed=11)
    exact = WellRoundCertifier(disk, SamplingParams(n_points=5_000, seed=11, mode=EstimateMode.EXACT)).volumes(0.05)
    sampled = WellRoundCertifier(disk, params).volumes(0.05)
    assert sampled.plus.bias == 'under'
    assert sampled.minus.bias == 'over'
    assert sampled.plus.value <= exact.plus.value + 1e-9
    assert sampled.minus.value >= exact.minus.value - 1e-9


def test_thread_count_does_not_change_results(disk):
    single = certify(disk, params=SamplingParams(n_points=8_000, n_pert=4, threads=1))
    threaded = certify(disk, params=SamplingParams(n_points=8_000, n_pert=4, threads=4))
    assert single.to_document() == threaded.to_document()


def test_seed_changes_results(disk):
    first = WellRoundCertifier(disk, SamplingParams(n_points=4_000, n_pert=4, seed=1)).volumes(0.02)
    second = WellRoundCertifier(disk, SamplingParams(n_points=4_000, n_pert=4, seed=2)).volumes(0.02)
    assert first.plus.value != second.plus.value


def test_segment_has_degenerate_minus():
    segment = PolygonOracle(euclidean(2), [[-1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateMinus):
        certify(segment, params=SamplingParams(n_points=2_000, mode=EstimateMode.EXACT))


def test_window_too_small():
    big = BallOracle(euclidean(2), 1.9)
    with pytest.raises(WindowTooSmall):
        WellRoundCertifier(big, EXACT).volumes(0.05)


def test_epsilon_limits(disk):
    certifier = WellRoundCertifier(disk, SamplingParams(n_points=100))
    with pytest.raises(EpsilonTooLarge):
        certifier.volumes(0.0)
    with pytest.raises(EpsilonTooLarge):
        certifier.volumes(0.6)


def test_exact_mode_needs_euclidean_group():
    arc = BoxOracle(builtin_group("SO2"), [1.0], [2.0])
    with pytest.raises(ValidationError):
        WellRoundCertifier(arc, SamplingParams(n_points=100, mode=EstimateMode.EXACT)).volumes(0.01)


def test_sampled_arc_in_rotation_group():
    arc = BoxOracle(builtin_group("SO2"), [1.0], [2.0])
    certifier = WellRoundCertifier(arc, SamplingParams(n_points=20_000, n_pert=16))
    assert certifier.estimate_volume().value == pytest.approx(1.0, abs=0.1)
    volumes = certifier.volumes(0.02)
    assert volumes.minus.value <= volumes.plus.value
    assert volumes.plus.value <= 1.0 + 4 * 0.02 + 0.1


def test_tube_identity_on_unit_square():
    square = BoxOracle(euclidean(2), [-0.5, -0.5], [0.5, 0.5])
    report = tube_identity_check(square, 0.01, n_points=20_000)
    assert report.passed
    assert report.n_points == 20_000
    disk_report = tube_identity_check(BallOracle(euclidean(2), 1.0), 0.05)
    assert disk_report.passed


def test_fit_lipschitz_methods():
    rows = [FitRow(0.01, 1.08, 1.0), FitRow(0.02, 1.18, 1.0), FitRow(0.04, 1.44, 1.0)]
    max_fit = fit_lipschitz(rows)
    assert max_fit.C == pytest.approx(11.0)
    assert max_fit.method == FitMethod.MAX_SLOPE
    zero_fit = fit_lipschitz(rows, FitMethod.ZERO_LIMIT)
    assert zero_fit.C == pytest.approx(7.0, abs=1e-6)
    assert zero_fit.lower <= zero_fit.C <= zero_fit.upper


def test_fit_lipschitz_rejects_bad_rows():
    with pytest.raises(ValidationError):
        fit_lipschitz([FitRow(0.01, 1.0, 1.0)])
    with pytest.raises(DegenerateMinus):
        fit_lipschitz([FitRow(0.01, 1.0, 0.0), FitRow(0.02, 1.0, 0.0)])
    with pytest.raises(DegenerateMinus):
        fit_lipschitz([FitRow(0.01, 1.0, 0.1, 0.0, 0.2), FitRow(0.02, 1.0, 1.0)])


def test_certify_over_scaled_family():
    params = SamplingParams(n_points=20_000, mode=EstimateMode.EXACT)
    report = certify(lambda T: BallOracle(euclidean(2), T), eps_grid=[0.01, 0.05], params=params,
                     T_values=[0.5, 1.5])
    assert report.T_values == [0.5, 1.5]
    rows = report.csv_rows()
    assert len(rows) == 4
    assert {row['T'] for row in rows} == {0.5, 1.5}
    # the small disk has the larger constant
    small = fit_lipschitz(report.cells[0.5]).C
    assert report.fitted_C == pytest.approx(small)


def test_convergence_study(disk):
    params = SamplingParams(n_points=1_000, n_pert=4)
    report = certify(disk, eps_grid=[0.02, 0.05], params=params, convergence_study=True)
    assert [entry['n_pert'] for entry in report.convergence] == [8, 32, 128]
    plus = [entry['vol_plus'][1] for entry in report.convergence]
    assert plus[0] <= plus[1] <= plus[2]
