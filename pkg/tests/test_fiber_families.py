import json
import math

import numpy as np
import pytest

from lib.Errors import DimensionMismatch, ParameterOutOfRange, ValidationError
from lib.FiberFamilies import (
    AffineImageFibers, BlcFamily, ConstantFibers, FiberKind, PulledBackFibers, RadiusFunctionFibers,
    family_from_document, fibers_from_document, load_family, projection_map, sample_base_points, scale_map
)
from lib.GroupModels import builtin_group, euclidean
from lib.SeedStream import generator_for
from lib.SetOracles import BallOracle, BoxOracle, UnionOracle


@pytest.fixture
def family(fixture_path):
    return load_family(fixture_path('disk_family.json'))


def test_load_fixture_family(family):
    assert family.fibers.kind == FiberKind.RADIUS_FUNCTION
    assert family.base_group.name == "R1"
    assert family.fiber_group.name == "R2"
    assert family.V_max == pytest.approx(math.pi * 1.5 ** 2)
    assert family.C_E == 8
    document = family.describe()
    assert document['fibers']['amp'] == 0.1
    assert document['bound_radius'] == 1.5


def test_radius_function_membership_is_per_row():
    fibers = RadiusFunctionFibers(euclidean(2), r0=1.0, amp=0.1)
    z = np.array([[0.0], [math.pi / 2.0]])
    y = np.array([[1.05, 0.0], [1.05, 0.0]])
    assert list(fibers.member(z, y)) == [False, True]
    assert fibers.fiber_at(np.array([math.pi / 2.0])).radius == pytest.approx(1.1)
    assert fibers.radius_lipschitz == pytest.approx(0.1)


def test_radius_function_validation():
    with pytest.raises(ParameterOutOfRange):
        RadiusFunctionFibers(euclidean(2), r0=0.1, amp=0.2)
    with pytest.raises(DimensionMismatch):
        RadiusFunctionFibers(euclidean(2), r0=1.0, center=[0.0])
    with pytest.raises(ValidationError):
        RadiusFunctionFibers(builtin_group("SO2"), r0=1.0)


def test_affine_image_fibers():
    plane = euclidean(2)
    fibers = AffineImageFibers(plane, BoxOracle(plane, [-1.0, -1.0], [1.0, 1.0]), linear=[[1.0, 0.0], [0.0, 0.0]])
    stretched = fibers.fiber_at(np.array([0.5]))
    assert stretched.volume() == pytest.approx(6.0)
    y = np.array([[1.4, 0.0], [1.4, 0.0]])
    assert list(fibers.member(np.array([[0.5], [0.0]]), y)) == [True, False]
    with pytest.raises(ParameterOutOfRange):
        fibers.fiber_at(np.array([-1.0]))
    with pytest.raises(DimensionMismatch):
        AffineImageFibers(euclidean(3), BallOracle(euclidean(3), 1.0), linear=np.eye(3))


def test_fibers_from_document():
    plane = euclidean(2)
    constant = fibers_from_document({'set': 'disk:1'}, plane)
    assert isinstance(constant, ConstantFibers)
    with pytest.raises(ValidationError):
        fibers_from_document({'set': 'whole'}, plane)
    with pytest.raises(ValidationError):
        fibers_from_document({'kind': 'spiral', 'set': 'disk:1'}, plane)


def test_fibered_oracle_membership_and_bounds(family):
    oracle = family.fibered_oracle()
    points = np.array([[0.0, 0.95, 0.0], [0.0, 1.05, 0.0], [1.5, 0.0, 0.0]])
    assert list(oracle.member_coordinates(points)) == [True, False, False]
    lower, upper = oracle.bounds()
    assert np.allclose(lower, [-1.0, -1.5, -1.5])
    assert np.allclose(upper, [1.0, 1.5, 1.5])
    assert oracle.group.name == "R1xR2"


def test_fibered_oracle_scaled_base(family):
    scaled = family.fibered_oracle(1.5)
    lower, upper = scaled.base_set.bounds()
    assert np.allclose(lower, [-1.5]) and np.allclose(upper, [1.5])
    union_base = UnionOracle([family.base_set])
    with pytest.raises(ValidationError):
        BlcFamily(family.base_group, union_base, family.fibers, 16, 2.5, 1.5).fibered_oracle(2.0)


def test_family_parameter_checks(family):
    with pytest.raises(ParameterOutOfRange):
        BlcFamily(family.base_group, family.base_set, family.fibers, 0.5, 2.5, 1.5)
    with pytest.raises(ParameterOutOfRange):
        BlcFamily(family.base_group, family.base_set, family.fibers, 16, 0.0, 1.5)
    with pytest.raises(ValidationError):
        BlcFamily(euclidean(1), family.base_set, family.fibers, 16, 2.5, 1.5)


def test_pulled_back_fibers_follow_base_map(family):
    pulled = PulledBackFibers(family.fibers, scale_map(2.0), 'double')
    original = family.fibers.fiber_at(np.array([math.pi / 2.0]))
    assert pulled.fiber_at(np.array([math.pi / 4.0])).radius == pytest.approx(original.radius)
    assert pulled.describe()['base_map'] == 'double'
    projected = PulledBackFibers(family.fibers, projection_map(1))
    y = np.array([[1.05, 0.0]])
    assert list(projected.member(np.array([[math.pi / 2.0, 7.0]]), y)) == [True]


def test_sample_base_points_stay_in_base(family):
    points = sample_base_points(family, generator_for(3, 'base'), 40)
    assert points.shape == (40, 1)
    assert np.all(np.abs(points) <= 1.0)


@pytest.mark.parametrize("content", ["not json", json.dumps({'base_group': 'R1'})])
def test_load_family_errors(tmp_path, content):
    path = tmp_path / "family.json"
    path.write_text(content)
    with pytest.raises(ValidationError):
        load_family(path)
    with pytest.raises(ValidationError):
        load_family(tmp_path / "missing.json")


def test_family_from_document_accepts_R_alias():
    family = family_from_document({
        'base_group': 'R1', 'base_set': 'box:-1;1', 'fiber_group': 'R2', 'fiber': {'set': 'disk:1'},
        'V_min': 3.0, 'R': 1.0,
    })
    assert family.bound_radius == 1.0
    assert family.C_D == 1.0
    assert family.C_E is None
