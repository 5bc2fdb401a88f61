import json
import math

import numpy as np
import pytest

from lib.Errors import DimensionMismatch, ValidationError
from lib.GroupModels import builtin_group, euclidean
from lib.SetOracles import (
    BallOracle, BoxOracle, EmptyOracle, IntersectionOracle, PolygonOracle, PreimageOracle, ProductOracle,
    UnionOracle, WholeWindowOracle, oracle_from_document, oracle_from_spec, unit_ball_volume
)


@pytest.fixture
def plane():
    return euclidean(2)


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)


def test_ball_distance_and_morphology(plane):
    disk = BallOracle(plane, 1.0)
    points = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.5, 0.5]])
    assert np.allclose(disk.signed_distance(points), [-1.0, 0.0, 1.0, math.sqrt(0.5) - 1.0])
    assert list(disk.member_coordinates(points)) == [True, True, False, True]
    assert list(disk.dilated_member(points, 1.0)) == [True, True, True, True]
    assert list(disk.eroded_member(points, 0.5)) == [True, False, False, False]
    assert disk.volume() == pytest.approx(math.pi)
    assert disk.support(np.array([[1.0, 0.0]]))[0] == pytest.approx(1.0)


def test_ball_scaling_and_translation(plane):
    disk = BallOracle(plane, 1.0, [0.5, 0.0]).scaled(2.0)
    assert disk.radius == 2.0
    assert np.allclose(disk.center, [1.0, 0.0])
    assert disk.circumradius() == pytest.approx(3.0)
    assert disk.inradius_about_origin() == pytest.approx(1.0)
    moved = disk.translated([-1.0, 0.0])
    assert np.allclose(moved.center, 0.0)


def test_ball_validation(plane):
    with pytest.raises(ValidationError):
        BallOracle(plane, 0.0)
    with pytest.raises(DimensionMismatch):
        BallOracle(plane, 1.0, [0.0, 0.0, 0.0])


def test_box_distance(plane):
    box = BoxOracle(plane, [-1.0, -1.0], [1.0, 1.0])
    points = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.5, 0.0]])
    assert np.allclose(box.signed_distance(points), [-1.0, 1.0, math.sqrt(2.0), -0.5])
    assert list(box.eroded_member(points, 0.25)) == [True, False, False, True]
    assert list(box.dilated_member(points, 1.0)) == [True, True, False, True]
    assert box.volume() == pytest.approx(4.0)
    assert box.inradius_about_origin() == pytest.approx(1.0)
    assert box.circumradius() == pytest.approx(math.sqrt(2.0))


def test_polygon_orientation_and_distance(plane):
    clockwise = PolygonOracle(plane, [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert clockwise.volume() == pytest.approx(0.5)
    points = np.array([[0.25, 0.25], [-1.0, 0.0], [1.0, 1.0]])
    distances = clockwise.signed_distance(points)
    assert distances[0] == pytest.approx(-0.25)
    assert distances[1] == pytest.approx(1.0)
    assert distances[2] == pytest.approx(math.sqrt(0.5))
    assert clockwise.inradius_about_origin() == pytest.approx(0.0, abs=1e-12)


def test_polygon_rejects_bad_input(plane):
    with pytest.raises(ValidationError):
        PolygonOracle(plane, [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(ValidationError):
        PolygonOracle(plane, [[0.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, 2.0]])
    with pytest.raises(DimensionMismatch):
        PolygonOracle(euclidean(3), [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_segment_has_zero_area(plane):
    segment = PolygonOracle(plane, [[-1.0, 0.0], [1.0, 0.0]])
    assert segment.is_segment
    assert segment.volume() == 0.0
    assert segment.inradius_about_origin() == 0.0
    points = np.array([[0.0, 0.5], [0.0, 0.0]])
    assert np.allclose(segment.signed_distance(points), [0.5, 0.0])
    assert not np.any(segment.eroded_member(points, 0.1))


def test_empty_and_whole(plane):
    points = np.array([[0.0, 0.0], [3.0, 0.0]])
    assert not np.any(EmptyOracle(plane).member_coordinates(points))
    whole = WholeWindowOracle(plane)
    assert list(whole.member_coordinates(points)) == [True, False]
    assert whole.volume() == pytest.approx(16.0)
    assert WholeWindowOracle(builtin_group("SL2")).volume() is None


def test_intersection_and_union(plane):
    a = BoxOracle(plane, [-1.0, -1.0], [1.0, 1.0])
    b = BoxOracle(plane, [0.0, 0.0], [2.0, 2.0])
    points = np.array([[0.5, 0.5], [-0.5, -0.5], [1.5, 1.5], [3.0, 3.0]])
    assert list(IntersectionOracle([a, b]).member_coordinates(points)) == [True, False, False, False]
    assert list(UnionOracle([a, b]).member_coordinates(points)) == [True, True, True, False]
    lower, upper = IntersectionOracle([a, b]).bounds()
    assert np.allclose(lower, [0.0, 0.0]) and np.allclose(upper, [1.0, 1.0])
    with pytest.raises(ValidationError):
        UnionOracle([])


def test_product_oracle():
    group = builtin_group("R1xSO2")
    parts = [BoxOracle(group.components[0], [-1.0], [1.0]), WholeWindowOracle(group.components[1])]
    body = ProductOracle(group, parts)
    assert body.volume() == pytest.approx(2.0 * 2.0 * math.pi)
    points = np.array([[0.5, 1.0], [1.5, 1.0]])
    assert list(body.member_coordinates(points)) == [True, False]
    with pytest.raises(DimensionMismatch):
        ProductOracle(group, parts[:1])


def test_preimage_oracle(plane):
    disk = BallOracle(plane, 1.0)
    window = plane.require_window()

    def halve(matrices):
        return window.to_matrices(0.5 * window.from_matrices(matrices))

    preimage = PreimageOracle(plane, disk, halve)
    points = np.array([[1.5, 0.0], [2.5, 0.0]])
    assert list(preimage.member_coordinates(points)) == [True, False]


def test_membership_through_matrices(plane):
    disk = BallOracle(plane, 1.0)
    matrices = plane.require_window().to_matrices(np.array([[0.5, 0.0], [1.5, 0.0]]))
    assert list(disk.member(matrices)) == [True, False]


@pytest.mark.parametrize("spec, kind, volume", [
    ("disk:1", "ball", math.pi),
    ("ball:0.5@0.1,0", "ball", math.pi * 0.25),
    ("square:2", "box", 4.0),
    ("box:-1,-1;1,0", "box", 2.0),
    ("polygon:0,0;1,0;0,1", "polygon", 0.5),
    ("segment:-1,0;1,0", "polygon", 0.0),
    ("empty", "empty", 0.0),
])
def test_oracle_from_spec(plane, spec, kind, volume):
    body = oracle_from_spec(spec, plane)
    assert body.kind == kind
    assert body.volume() == pytest.approx(volume)


def test_oracle_from_spec_errors(plane):
    with pytest.raises(ValidationError):
        oracle_from_spec("star:5", plane)
    with pytest.raises(ValidationError):
        oracle_from_spec("disk:abc", plane)


def test_oracle_from_document_file(plane, tmp_path):
    path = tmp_path / "lens.json"
    path.write_text(json.dumps({
        'kind': 'intersection',
        'parts': [{'kind': 'ball', 'radius': 1.0, 'center': [0.5, 0.0]}, {'kind': 'ball', 'radius': 1.0}],
    }))
    body = oracle_from_spec(str(path), plane)
    assert body.kind == "intersection"
    assert list(body.member_coordinates(np.array([[0.25, 0.0], [-0.75, 0.0]]))) == [True, False]
    with pytest.raises(ValidationError):
        oracle_from_document({'kind': 'ball'}, plane)
