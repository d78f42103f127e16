import math

import numpy as np
import pytest

from cutlocus.geometry.flow import (
    BoundaryPiece,
    GeodesicMap,
    exponential_map,
    geodesic_map,
    image_complement,
    injectivity_violations,
    integrate_geodesic,
    jacobi_frame,
    lie_derivative_check,
    second_order_class,
    unit_speed_error,
)
from cutlocus.geometry.metric import euclidean
from cutlocus.geometry.schema import ChartPoint, ConfigError, NumericalError, Tangent
from cutlocus.scenarios import round_sphere_point_source


def test_boundary_piece_validation():
    with pytest.raises(ConfigError):
        BoundaryPiece(name="bad", embedding=lambda s: s, lo=[0.0], hi=[1.0], side=0)
    with pytest.raises(ConfigError):
        BoundaryPiece(name="empty", embedding=lambda s: s, lo=[1.0], hi=[1.0])


def test_boundary_grid_in_3d_is_an_odd_square():
    piece = BoundaryPiece(
        name="patch",
        embedding=lambda s: np.array([s[0], s[1], 0.0]),
        lo=[-1.0, -1.0],
        hi=[1.0, 1.0],
        periodic=(False, False),
    )
    assert len(piece.grid(10)) == 9
    assert len(piece.grid(16)) == 25


def test_disk_inner_normal(disk):
    assert np.allclose(disk.boundary.pieces[0].conormal([0.0]), [-1.0, 0.0])
    assert disk.boundary.validate(disk.metric) == []


def test_ellipse_characteristic_at_vertex(ellipse):
    lam, gamma = geodesic_map(ellipse.metric, ellipse.boundary).characteristic(0, [0.0])
    assert np.allclose(gamma, [-1.0, 0.0], atol=1e-7)


def test_exponential_map_ellipse_minor_vertex(ellipse):
    p, v = exponential_map(ellipse.metric, ellipse.boundary, [math.pi / 2], 1.0)
    assert np.allclose(p.coords, [0.0, 0.0], atol=1e-7)
    assert np.allclose(v.components, [0.0, -1.0], atol=1e-7)


def test_exponential_map_negative_time(disk):
    with pytest.raises(NumericalError):
        exponential_map(disk.metric, disk.boundary, [0.0], -0.1)


def test_disk_ray_exits_at_far_side(disk):
    ray = geodesic_map(disk.metric, disk.boundary).ray(0, [0.0])
    assert ray.exit == "boundary_exit"
    assert ray.t_end == pytest.approx(2.0, abs=1e-7)
    assert unit_speed_error(ray) < 1e-10
    with pytest.raises(NumericalError):
        ray.state(2.5)


def test_disk_jacobi_field(disk):
    # J(t) = (1 - t) c'(s) for the unit circle
    frame = jacobi_frame(disk.metric, disk.boundary, [0.0], 0.5)
    assert np.allclose(frame.J[:, 0], [0.0, 0.5], atol=1e-5)
    assert np.allclose(frame.dF[:, 0], [-1.0, 0.0], atol=1e-7)


def test_initial_velocity_must_be_unit():
    m = euclidean(2)
    p = ChartPoint([0.0, 0.0])
    with pytest.raises(ConfigError):
        integrate_geodesic(m, p, Tangent(p, [2.0, 0.0]), 1.0)


def test_geodesic_map_dimension_mismatch(disk):
    with pytest.raises(ConfigError):
        GeodesicMap(euclidean(3), disk.boundary)


def test_sphere_ray_reaches_antipode():
    scenario = round_sphere_point_source()
    ray = geodesic_map(scenario.metric, scenario.boundary).ray(0, [0.3])
    t = math.pi - scenario.params["eps"]
    chart, x, _, _, _ = ray.state(t)
    assert chart == 1
    assert np.linalg.norm(x) < 1e-5
    assert unit_speed_error(ray, 0.05) < 1e-5


def test_second_order_class_at_disk_centre(disk):
    quotient = second_order_class(disk.metric, disk.boundary, [0.0], 1.0, [0.0, 1.0])
    assert np.allclose(np.abs(quotient), [0.0, 1.0], atol=1e-4)


def test_second_order_class_needs_kernel_vector(disk):
    with pytest.raises(NumericalError):
        second_order_class(disk.metric, disk.boundary, [0.0], 0.5, [0.0, 1.0])


def test_ellipse_vertex_class_is_nonzero(ellipse):
    quotient = second_order_class(ellipse.metric, ellipse.boundary, [0.0], 0.5, [0.0, 1.0])
    assert np.linalg.norm(quotient) > 1e-4


def test_image_complement():
    complement = image_complement(np.diag([1.0, 0.0]))
    assert complement.shape == (2, 1)
    assert np.allclose(np.abs(complement[:, 0]), [0.0, 1.0])


def test_lie_derivative_check():
    m = euclidean(2)
    points = [[1.0, 0.0], [0.3, -0.7], [-0.5, 0.5]]
    assert lie_derivative_check(m, lambda x: x, points) < 1e-6
    assert lie_derivative_check(m, lambda x: np.array([-x[1], x[0]]), points) > 0.1


def test_no_injectivity_violations_on_disk(disk):
    rays = geodesic_map(disk.metric, disk.boundary).family(8)
    assert len(rays) == 8
    assert injectivity_violations(rays, 0.1) == []
