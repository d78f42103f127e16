import numpy as np
import pytest

from cutlocus.geometry.flow import geodesic_map
from cutlocus.geometry.focal import (
    SyntheticMap,
    a2_test,
    a2_test_of,
    analyze_records,
    classify_forms,
    classify_order2_of,
    first_focal_time,
    fold_map,
    focal_rows,
    focal_times,
    kernel_basis,
    normalize_pair,
    special_coordinates_of,
    synthetic_map,
)
from cutlocus.geometry.schema import ConfigError, Type2


@pytest.mark.parametrize("name", ["type_1", "type_2a", "type_2b", "type_2c", "type_3", "type_4"])
def test_synthetic_order2_types(name):
    tag, coefficients = classify_order2_of(synthetic_map(name), np.zeros(3))
    assert tag == Type2[name]
    assert "q" in coefficients


def test_unknown_synthetic_map():
    with pytest.raises(ConfigError):
        synthetic_map("type_5")


def test_special_coordinates_of_normal_form():
    coords = special_coordinates_of(synthetic_map("type_2a"), np.zeros(3))
    assert coords.order == 2
    assert np.allclose(coords.B, np.eye(3))
    assert np.allclose(coords.B_prime, np.eye(3), atol=1e-6)


def test_special_coordinates_need_a_focal_point():
    with pytest.raises(ConfigError):
        special_coordinates_of(fold_map(), np.array([1.0, 0.0]))


def test_normalize_pair():
    M, new_q, new_r = normalize_pair(np.diag([2.0, -0.5]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(new_q, np.diag([1.0, -1.0]), atol=1e-9)


def test_normalize_pair_is_deterministic():
    Q = np.array([[1.0, 0.3], [0.3, -2.0]])
    R = np.array([[0.5, 1.0], [1.0, 0.2]])
    first = normalize_pair(Q, R)
    second = normalize_pair(Q.copy(), R.copy())
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
    assert np.allclose(first[1], np.diag([1.0, -1.0]), atol=1e-9)
    assert classify_forms(Q, R)[0] == classify_forms(Q.copy(), R.copy())[0]


def test_classify_forms_semidefinite_is_type_1():
    tag, _ = classify_forms(np.diag([1.0, 0.0]), np.diag([1.0, -1.0]))
    assert tag == Type2.type_1


def test_fold_is_a2():
    assert a2_test_of(fold_map(), np.zeros(2))


def test_cusp_is_not_a2():
    # the kernel of dF at the cusp point is tangent to the focal set {3 x1^2 + x2 = 0}
    cusp = SyntheticMap(
        name="cusp",
        dim=2,
        fn=lambda x: np.array([x[0] ** 3 + x[0] * x[1], x[1]]),
        jacobian=lambda x: np.array([[3 * x[0] ** 2 + x[1], x[0]], [0.0, 1.0]]),
    )
    assert not a2_test_of(cusp, np.zeros(2))


def test_a2_needs_order_1():
    with pytest.raises(ConfigError):
        a2_test_of(synthetic_map("type_3"), np.zeros(3))


def test_kernel_basis_sign():
    k = kernel_basis(np.array([[1.0, 1.0], [1.0, 1.0]]), 1)
    assert np.allclose(np.abs(k[:, 0]), [1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert k[np.argmax(np.abs(k[:, 0])), 0] > 0


def test_disk_focal_time_is_the_radius(disk):
    ray = geodesic_map(disk.metric, disk.boundary).ray(0, [0.7])
    records = focal_times(ray)
    assert first_focal_time(records) == pytest.approx(1.0, abs=1e-6)
    assert records[0].order == 1
    assert records[0].order_stable
    assert np.allclose(records[0].point, [0.0, 0.0], atol=1e-6)


def test_ellipse_focal_times_match_curvature_radius(ellipse):
    gmap = geodesic_map(ellipse.metric, ellipse.boundary)
    for theta, expected in ellipse.truths["focal_times"]:
        records = focal_times(gmap.ray(0, [theta]))
        assert records
        assert records[0].t == pytest.approx(expected, abs=1e-3)


def test_ellipse_evolute_point_is_a2(ellipse):
    theta = ellipse.truths["a2_control"]
    records = focal_times(geodesic_map(ellipse.metric, ellipse.boundary).ray(0, [theta]))
    assert a2_test(ellipse.metric, ellipse.boundary, records[0])
    analyzed = analyze_records(ellipse.metric, ellipse.boundary, records)
    assert analyzed[0].a2 is True
    assert analyzed[0].type2 == Type2.not_applicable


def test_focal_rows(disk):
    records = focal_times(geodesic_map(disk.metric, disk.boundary).ray(0, [0.0]))
    rows = list(focal_rows(records))
    assert len(rows) == 1
    piece, sigma, t, order = rows[0][:4]
    assert (piece, sigma, order) == (0, 0.0, 1)
    assert t == pytest.approx(1.0, abs=1e-6)
