import json
import math

import numpy as np
import pytest

from cutlocus.geometry.schema import ChartPoint, ConfigError, MetricKind
from cutlocus.scenarios import (
    SCENARIOS,
    brute_force_u,
    builtin_scenarios,
    get_scenario,
    randers_disk,
    scenario_from_config,
)


def test_builtin_scenarios_are_self_consistent():
    scenarios = builtin_scenarios()
    assert [s.name for s in scenarios] == list(SCENARIOS)
    for scenario in scenarios:
        assert scenario.self_check() == []


def test_truths_are_json():
    for scenario in builtin_scenarios():
        data = json.loads(json.dumps(scenario.truths_dict()))
        assert data["name"] == scenario.name
        assert data["dim"] == scenario.dim


def test_get_scenario():
    scenario = get_scenario("euclidean_disk", radius=2.0)
    assert scenario.params == {"radius": 2.0}
    assert scenario.truths["t_cut"] == 2.0
    assert str(scenario) == "euclidean_disk (n=2, radius=2.0)"


@pytest.mark.parametrize(
    "name, params",
    [
        ("klein_bottle", {}),
        ("euclidean_disk", {"diameter": 1.0}),
        ("euclidean_disk", {"radius": -1.0}),
        ("euclidean_annulus", {"r_in": 2.0, "r_out": 1.0}),
        ("euclidean_ellipse", {"a": 1.0, "b": 2.0}),
        ("randers_disk", {"b1": 0.9, "b2": 0.9}),
    ],
)
def test_bad_scenarios(name, params):
    with pytest.raises(ConfigError):
        get_scenario(name, **params)


def test_brute_force_needs_enough_samples(disk):
    with pytest.raises(ConfigError):
        brute_force_u(disk, ChartPoint([0.0, 0.0]), N=64)


def test_brute_force_matches_exact_u(annulus):
    for coords in ([1.2, 0.0], [0.0, -1.5], [-1.1, 1.1]):
        p = ChartPoint(coords)
        assert brute_force_u(annulus, p) == pytest.approx(annulus.exact_u(p), abs=1e-3)


def test_brute_force_randers():
    scenario = randers_disk()
    for coords, value in scenario.truths["u"]:
        assert brute_force_u(scenario, ChartPoint(coords)) == pytest.approx(value, abs=1e-3)


def test_inline_riemannian_scenario():
    scenario = scenario_from_config({"name": "flat", "g11": "1", "g12": "0", "g22": "1 + x * x", "g": "0.1 * sin(s)"})
    assert scenario.name == "flat"
    assert scenario.metric.kind == MetricKind.riemannian
    assert np.allclose(scenario.metric.tensor(np.array([0.0, 0.0])), np.eye(2))
    assert np.allclose(scenario.metric.tensor(np.array([0.5, 0.0])), np.diag([1.0, 1.25]))
    assert scenario.boundary.pieces[0].g(np.array([math.pi / 2])) == pytest.approx(0.1)


def test_inline_finsler_scenario():
    scenario = scenario_from_config({"norm": "sqrt(v1 * v1 + v2 * v2) + 0.2 * v1", "domain": "ellipse", "a": "1.5"})
    assert scenario.metric.kind == MetricKind.finsler
    assert float(scenario.metric.norm(np.zeros(2), np.array([1.0, 0.0]))) == pytest.approx(1.2)
    assert float(scenario.metric.norm(np.zeros(2), np.array([-1.0, 0.0]))) == pytest.approx(0.8)
    assert scenario.boundary.pieces[0].point(np.array([0.0])) == pytest.approx([1.5, 0.0])


@pytest.mark.parametrize(
    "section",
    [
        {"g11": "1", "g22": "1"},
        {"norm": "abs(v1) + abs(v2)", "domain": "torus"},
        {"norm": "abs(v1) + abs(v2)", "domain": "annulus", "r_in": "3"},
    ],
)
def test_bad_inline_scenarios(section):
    with pytest.raises(ConfigError):
        scenario_from_config(section)
