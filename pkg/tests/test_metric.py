import math

import numpy as np
import pytest

from cutlocus.geometry.metric import (
    MetricSpec,
    characteristic_covector,
    dual_covector,
    dual_vector,
    euclidean,
    finsler_norm,
    hamiltonian_of,
    inner_normal,
    level_set_argmax,
    osculating_riemannian,
    randers,
    sample_convexity,
    sphere_chart,
)
from cutlocus.geometry.schema import ChartPoint, ConfigError, Covector, MetricKind, NumericalError, Tangent


def test_euclidean_norm_and_dual():
    m = euclidean(2)
    p = ChartPoint([0.1, 0.2])
    assert finsler_norm(m, Tangent(p, [3.0, 4.0])) == pytest.approx(5.0)
    assert finsler_norm(m, Tangent(p, [0.0, 0.0])) == 0.0
    assert float(m.hamiltonian(p.coords, [3.0, 4.0])) == pytest.approx(5.0)


def test_point_outside_chart():
    m = euclidean(2)
    with pytest.raises(ConfigError):
        finsler_norm(m, Tangent(ChartPoint([5.0, 0.0]), [1.0, 0.0]))


def test_unsupported_dimension():
    with pytest.raises(ConfigError):
        MetricSpec(name="bad", kind=MetricKind.riemannian, dim=4, charts=[])


def test_randers_needs_small_drift():
    with pytest.raises(ConfigError):
        randers([0.8, 0.6])


def test_randers_dual_norm_closed_form():
    m = randers([0.3, 0.0])
    x = np.zeros(2)
    # sup of xi(v) over |v| + 0.3 v1 = 1 is reached at v = (1/1.3, 0)
    assert float(m.hamiltonian(x, [1.0, 0.0])) == pytest.approx(1 / 1.3)
    for xi in ([1.0, 0.0], [0.2, -0.7], [-1.5, 0.4]):
        value, _ = level_set_argmax(lambda v: float(m.norm(x, v)), np.array(xi))
        assert value == pytest.approx(float(m.hamiltonian(x, xi)), abs=1e-6)


def test_hamiltonian_kind_recovers_norm():
    m = hamiltonian_of(euclidean(2))
    assert m.kind == MetricKind.hamiltonian
    assert float(m.norm(np.zeros(2), [3.0, 4.0])) == pytest.approx(5.0, abs=1e-6)


def test_dual_covector_pairs_to_squared_norm():
    m = randers([0.3, 0.1])
    p = ChartPoint([0.0, 0.0])
    v = Tangent(p, [0.4, -1.1])
    omega = dual_covector(m, v)
    assert omega(v) == pytest.approx(float(m.norm(p.coords, v.components)) ** 2)


def test_dual_of_zero_vector():
    with pytest.raises(NumericalError):
        dual_covector(euclidean(2), Tangent(ChartPoint([0.0, 0.0]), [0.0, 0.0]))


def test_dual_vector_is_unit_and_dual_to_covector():
    m = randers([0.3, 0.1])
    x = np.zeros(2)
    xi = np.array([0.5, 0.9])
    nu = dual_vector(m, x, xi)
    assert float(m.norm(x, nu)) == pytest.approx(1.0)
    omega = dual_covector(m, Tangent(ChartPoint(x), nu)).components
    # positive multiple of xi
    assert omega[0] * xi[1] - omega[1] * xi[0] == pytest.approx(0.0, abs=1e-8)
    assert float(omega @ xi) > 0


def test_inner_normal_sides():
    m = euclidean(2)
    p = ChartPoint([0.0, 0.0])
    hyperplane = Covector(p, [1.0, 0.0])
    assert np.allclose(inner_normal(m, p, hyperplane).components, [1.0, 0.0])
    assert np.allclose(inner_normal(m, p, hyperplane, side=-1).components, [-1.0, 0.0])
    with pytest.raises(NumericalError):
        inner_normal(m, p, Covector(p, [0.0, 0.0]))


def test_osculating_riemannian():
    p = ChartPoint([0.0, 0.0])
    assert np.allclose(osculating_riemannian(euclidean(2), p, Tangent(p, [1.0, 0.0])), np.eye(2))
    g = osculating_riemannian(randers([0.3, 0.0]), p, Tangent(p, [1.0, 0.0]))
    assert np.allclose(g, np.diag([1.69, 1.3]), atol=1e-6)


def test_sample_convexity():
    assert sample_convexity(randers([0.3, 0.0]), [[0.0, 0.0], [0.5, 0.5]], [[1.0, 0.0], [0.0, -1.0]]) == []

    def quasi_norm(x, v):
        v = np.asarray(v, dtype=float)
        return (np.sqrt(np.abs(v[..., 0])) + np.sqrt(np.abs(v[..., 1]))) ** 2

    concave = MetricSpec(name="l_half", kind=MetricKind.finsler, dim=2, charts=euclidean(2).charts, norm_fn=quasi_norm)
    problems = sample_convexity(concave, [[0.0, 0.0]], [[1.0, 1.0]])
    assert len(problems) == 1
    assert "convexity violation" in problems[0]


def test_reversed_randers():
    m = randers([0.3, 0.0])
    r = m.reversed()
    v = np.array([1.0, 0.5])
    assert float(r.norm(np.zeros(2), v)) == pytest.approx(float(m.norm(np.zeros(2), -v)))
    assert euclidean(2).reversed().name == "euclidean"


def test_sphere_charts():
    m = sphere_chart(1.0)
    assert np.allclose(m.tensor(np.zeros(2)), 4 * np.eye(2))
    x = np.array([0.3, -0.4])
    y = m.to_chart(x, 0, 1)
    assert np.allclose(y, x / 0.25)
    assert np.allclose(m.to_chart(y, 1, 0), x)
    with pytest.raises(ConfigError):
        sphere_chart(1.0, handoff_radius=1.3, region_radius=1.25)


def test_characteristic_covector_without_data():
    m = euclidean(2)
    lam, gamma = characteristic_covector(m, [1.0, 0.0], [[0.0], [1.0]], [0.0], [-1.0, 0.0])
    assert np.allclose(lam, [-1.0, 0.0], atol=1e-9)
    assert np.allclose(gamma, [-1.0, 0.0], atol=1e-9)


def test_characteristic_covector_with_data():
    m = euclidean(2)
    lam, gamma = characteristic_covector(m, [1.0, 0.0], [[0.0], [1.0]], [0.5], [-1.0, 0.0])
    assert np.allclose(lam, [-math.sqrt(0.75), 0.5], atol=1e-9)
    assert float(m.norm(np.zeros(2), gamma)) == pytest.approx(1.0)


def test_characteristic_covector_incompatible():
    with pytest.raises(NumericalError):
        characteristic_covector(euclidean(2), [1.0, 0.0], [[0.0], [1.0]], [1.5], [-1.0, 0.0])
