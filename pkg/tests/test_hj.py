import math

import numpy as np
import pytest

from cutlocus.core import truth_cloud
from cutlocus.cut import build_distance_oracle
from cutlocus.geometry.flow import geodesic_map
from cutlocus.geometry.schema import ChartPoint, ConfigError, NumericalError
from cutlocus.hj import (
    build_hj_field,
    characteristic_consistency,
    characteristic_field,
    compatibility_check,
    extend_solution,
    extension_identity,
    hausdorff_distance,
    lax_oleinik,
    lambda_problem,
    mu_function,
    mu_stability,
    singular_measure,
)
from cutlocus.scenarios import disk_with_g


def test_hausdorff_distance():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.0], [1.0, 0.5]])
    assert hausdorff_distance(a, b) == pytest.approx((0.5, 0.5, 0.5))
    assert hausdorff_distance(a, a[:1])[1:] == pytest.approx((1.0, 0.0))
    assert hausdorff_distance(a, np.zeros((0, 2)))[0] == math.inf


def test_compatible_boundary_data():
    scenario = disk_with_g()
    oracle = build_distance_oracle(scenario.metric, scenario.boundary, 0.05)
    report = compatibility_check(scenario.metric, scenario.boundary, oracle)
    assert report.passed
    assert report.k_hat < scenario.truths["k_hat_max"]
    assert report.witness is None


def test_steep_boundary_data_is_not_compatible():
    scenario = disk_with_g(amplitude=2.0, offset=0.0)
    oracle = build_distance_oracle(scenario.metric, scenario.boundary, 0.05)
    report = compatibility_check(scenario.metric, scenario.boundary, oracle)
    assert not report.passed
    assert report.k_hat > 1.0
    assert report.witness is not None


def test_characteristic_field_of_zero_data(disk):
    for sample in characteristic_field(disk.metric, disk.boundary, count=8):
        x = disk.boundary.pieces[0].point(sample.sigma)
        assert np.allclose(sample.vector, -x, atol=1e-7)
        assert sample.residual < 1e-8


def test_lax_oleinik_with_boundary_data():
    scenario = disk_with_g()
    oracle = build_distance_oracle(scenario.metric, scenario.boundary, 0.05)
    result = lax_oleinik(scenario.metric, scenario.boundary, oracle, ChartPoint([0.0, 0.0]))
    assert result.value == pytest.approx(scenario.truths["u"][0][1], abs=0.02)
    piece, sigma = result.argmin[0]
    assert piece == 0
    assert sigma[0] == pytest.approx(scenario.truths["argmin_center"][0], abs=0.1)


def test_lax_oleinik_at_the_disk_centre_is_degenerate(disk):
    oracle = build_distance_oracle(disk.metric, disk.boundary, 0.05)
    result = lax_oleinik(disk.metric, disk.boundary, oracle, ChartPoint([0.0, 0.0]))
    assert result.value == pytest.approx(1.0, abs=0.02)
    assert result.degenerate


def test_extension_of_constant_data():
    scenario = disk_with_g(amplitude=0.0, offset=0.5)
    extension = extend_solution(scenario.metric, scenario.boundary, 0.5, 0.05, count=32)
    assert all(tau == pytest.approx(0.5) for tau in extension.tau.values())
    radii = np.linalg.norm(extension.curves[0].points, axis=1)
    assert np.allclose(radii, scenario.truths["lambda"]["radius"], atol=1e-6)
    assert np.all(extension.values <= 0.5 + 1e-12)


def test_extension_needs_enough_backward_time():
    scenario = disk_with_g(amplitude=0.0, offset=0.5)
    with pytest.raises(NumericalError):
        extend_solution(scenario.metric, scenario.boundary, 0.2, 0.05, count=16)


def test_disk_characteristics_are_consistent(make_run):
    run = make_run("euclidean_disk", rays=16, grid_h=0.05)
    report = characteristic_consistency(run.oracle, run.rays, run.cut_times.times)
    assert report.samples > 0
    assert report.passed


def test_disk_mu_is_the_radius(make_run):
    run = make_run("euclidean_disk", rays=16, grid_h=0.05)
    report = mu_function(run.metric, run.boundary, run.cut_times.times, run.rays)
    assert not report.excluded
    assert len(report.mu) == 16
    assert all(mu == pytest.approx(1.0, abs=0.15) for mu in report.mu.values())


def test_annulus_singular_length(make_run):
    run = make_run("euclidean_annulus", rays=96, grid_h=0.05)
    length = singular_measure(run.cut_times, run.rays, run.boundary, run.h, 2)
    # the middle circle, plus short links between the inner and outer estimates of each cut point
    assert 0.9 * 3 * math.pi <= length <= 1.5 * 3 * math.pi


def test_extension_rejects_negative_data():
    scenario = disk_with_g(amplitude=0.8, offset=0.5)
    with pytest.raises(ConfigError):
        extend_solution(scenario.metric, scenario.boundary, 1.3, 0.05, count=16)


def _lambda_oracle(run, extension):
    lam = lambda_problem(run.metric, run.boundary, run.oracle, extension)
    rays = geodesic_map(run.metric, lam).family(32)
    return lam, build_distance_oracle(run.metric, lam, run.h, rays=rays)


def test_extension_is_the_distance_to_lambda(make_run):
    run = make_run("disk_with_g", rays=32, grid_h=0.05)
    b = run.boundary
    T = max(piece.g(s) for piece in b.pieces for s in piece.grid(64))
    extension = extend_solution(run.metric, b, T, run.h, count=64)
    _, lam_oracle = _lambda_oracle(run, extension)
    error = extension_identity(run.metric, run.oracle, extension, lam_oracle)
    assert error <= run.tolerance("hausdorff_factor") * run.h


def test_lambda_problem_of_constant_data(make_run):
    run = make_run("disk_with_g", rays=32, grid_h=0.05, amplitude=0.0, offset=0.5)
    extension = extend_solution(run.metric, run.boundary, 0.5, run.h, count=64)
    lam, lam_oracle = _lambda_oracle(run, extension)
    assert all(piece.g(np.array([0.3])) == 0.0 for piece in lam.pieces)
    # zero data on the circle of radius 1.5: d(., Lambda) = 1.5 - r
    assert lam_oracle.point_value(ChartPoint([0.0, 0.0])) == pytest.approx(1.5, abs=0.03)
    for angle in (0.0, 1.0, 2.5):
        on_boundary = ChartPoint([math.cos(angle), math.sin(angle)])
        assert lam_oracle.point_value(on_boundary) == pytest.approx(0.5, abs=0.03)
    assert extension_identity(run.metric, run.oracle, extension, lam_oracle) <= 5 * run.h


def test_singular_set_of_the_annulus(make_run):
    run = make_run("euclidean_annulus", rays=48, grid_h=0.05)
    hj_field, _ = build_hj_field(run.metric, run.oracle)
    singular = hj_field.nodes[hj_field.singular]
    assert len(singular) > 0
    truth = truth_cloud(run.scenario.truths["cut"], 2)[0]
    distance, forward, _ = hausdorff_distance(singular, truth)
    assert forward <= 3 * run.h
    assert distance <= run.tolerance("hausdorff_factor") * run.h


def test_mu_ignores_a_constant_shift_of_the_data(make_run):
    runs = [make_run("disk_with_g", rays=16, grid_h=0.05, offset=offset) for offset in (0.5, 0.8)]
    reports = [mu_function(run.metric, run.boundary, run.cut_times.times, run.rays) for run in runs]
    assert reports[0].mu.keys() == reports[1].mu.keys()
    for key, mu in reports[0].mu.items():
        assert reports[1].mu[key] == pytest.approx(mu, abs=runs[0].h)


def test_mu_stability_with_boundary_data(make_run):
    run = make_run("disk_with_g", rays=16, grid_h=0.05)
    coarse, fine = mu_stability(run.metric, run.boundary, run.oracle, 16, run.focal_of)
    assert len(coarse.mu) + len(coarse.excluded) == 16
    assert len(fine.mu) + len(fine.excluded) == 32
    assert len(fine.mu) > 0
    assert 0.0 <= coarse.lipschitz < 5.0
    assert 0.0 <= fine.lipschitz < 5.0
