import math

import numpy as np
import pytest

from cutlocus.cut import (
    a2_exclusion,
    balanced_check,
    build_distance_oracle,
    classify_cut_point,
    cleave_sheet_check,
    cut_rows,
    cut_time,
    densify_cut_points,
    dual_affine_dim,
    limit_set,
    probe_grid,
    stencil,
    verify_split,
)
from cutlocus.geometry.flow import geodesic_map
from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    Covector,
    CutClass,
    CutRecord,
    Minimizer,
    NumericalError,
    Tangent,
)


def _minimizer(p, arrival, order=0, stable=True, piece=0):
    arrival = np.asarray(arrival, dtype=float)
    return Minimizer(
        key=(piece, (float(arrival[0]),)),
        t=1.0,
        value=1.0,
        arrival=Tangent(p, arrival),
        dual=Covector(p, arrival),
        focal_order=order,
        order_stable=stable,
    )


def test_stencil_offsets_are_primitive():
    offsets = {tuple(o) for o in stencil(2, 3)}
    assert (3, 1) in offsets
    assert (2, 2) not in offsets
    assert (0, 0) not in offsets
    assert len(stencil(2, 1)) == 8


def test_oracle_needs_positive_spacing(disk):
    with pytest.raises(ConfigError):
        build_distance_oracle(disk.metric, disk.boundary, 0.0)


def test_disk_oracle_values(disk):
    oracle = build_distance_oracle(disk.metric, disk.boundary, 0.05)
    assert oracle.point_value(ChartPoint([0.0, 0.0])) == pytest.approx(1.0, abs=0.02)
    assert oracle.point_value(ChartPoint([0.5, 0.0])) == pytest.approx(0.5, abs=0.02)


def test_ellipse_oracle_at_centre(make_run):
    run = make_run("euclidean_ellipse")
    assert run.oracle.point_value(ChartPoint([0.0, 0.0])) == pytest.approx(1.0, abs=0.02)
    assert run.oracle.agreement(5 * run.h + 1e-3) >= 0.99


def test_disk_cut_time_is_the_focal_time(disk):
    oracle = build_distance_oracle(disk.metric, disk.boundary, 0.05)
    ray = geodesic_map(disk.metric, disk.boundary).ray(0, [0.4])
    cut = cut_time(disk.metric, disk.boundary, oracle, ray, focal_t=1.0)
    assert not cut.censored
    assert cut.t == pytest.approx(1.0, abs=0.15)
    assert np.linalg.norm(cut.point.coords) < 0.15


def test_annulus_cut_times(make_run):
    run = make_run("euclidean_annulus", rays=24, grid_h=0.05)
    times = [cut.t for cut in run.cut_times.times.values()]
    assert len(times) == 48
    assert all(not cut.censored for cut in run.cut_times.times.values())
    assert np.allclose(times, 0.5, atol=3 * run.h)


def test_annulus_cut_point_is_a_balanced_cleave(make_run):
    run = make_run("euclidean_annulus", rays=24, grid_h=0.05)
    p = ChartPoint([1.5, 0.0])
    minimizers = limit_set(run.metric, run.boundary, run.oracle, p, run.cut_times.delta, run.cut_times)
    record = CutRecord(p=p, minimizers=minimizers)
    assert classify_cut_point(record) == CutClass.cleave
    arrivals = sorted(tuple(np.round(mz.arrival.components, 3)) for mz in minimizers)
    assert np.allclose(arrivals, [[-1.0, 0.0], [1.0, 0.0]], atol=1e-2)

    outcome = balanced_check(run.metric, run.boundary, run.oracle, record, [1.0, 0.0])
    assert outcome.expected == pytest.approx(1.0, abs=1e-2)
    assert outcome.passed

    outcome = balanced_check(run.metric, run.boundary, run.oracle, record, [-1.0, 0.0])
    assert outcome.expected == pytest.approx(1.0, abs=1e-2)
    assert outcome.passed


def test_balanced_check_catches_a_missing_minimizer(make_run):
    run = make_run("euclidean_annulus", rays=24, grid_h=0.05)
    p = ChartPoint([1.5, 0.0])
    minimizers = limit_set(run.metric, run.boundary, run.oracle, p, run.cut_times.delta, run.cut_times)
    # keep only the arrival from the outer circle, heading towards -x
    outer = [mz for mz in minimizers if mz.arrival.components[0] < 0]
    assert len(outer) == 1
    record = CutRecord(p=p, minimizers=outer)

    outcome = balanced_check(run.metric, run.boundary, run.oracle, record, [1.0, 0.0])
    assert outcome.expected == pytest.approx(-1.0, abs=1e-2)
    assert outcome.quotients
    assert outcome.quotients[-1] == pytest.approx(1.0, abs=0.05)
    assert not outcome.passed


def test_ellipse_cut_classes(make_run):
    run = make_run("euclidean_ellipse")
    for coords, expected in run.scenario.truths["classification"]:
        p = ChartPoint(coords)
        record = CutRecord(
            p=p, minimizers=limit_set(run.metric, run.boundary, run.oracle, p, run.cut_times.delta, run.cut_times)
        )
        assert classify_cut_point(record).value == expected


def test_limit_set_far_from_the_cut_locus(make_run):
    run = make_run("euclidean_annulus", rays=24, grid_h=0.05)
    with pytest.raises(NumericalError):
        limit_set(run.metric, run.boundary, run.oracle, ChartPoint([0.0, 0.0]), 0.1, run.cut_times)


def test_split_check_without_a_cut_locus(make_run):
    # rays that never stop overlap: the inner and outer families both cover the middle
    run = make_run("euclidean_annulus", rays=24, grid_h=0.05)
    report = verify_split(
        run.metric, run.boundary, run.oracle, {0: np.array([[0.0, 0.0]])}, probe_grid(run.oracle, 0.2), run.rays
    )
    assert report.probes > 0
    assert report.multiply_covered


def test_split_locus_of_the_disk(make_run):
    run = make_run("euclidean_disk", rays=48, grid_h=0.05)
    S = densify_cut_points(run.cut_times, run.rays, run.boundary, run.h)
    report = verify_split(run.metric, run.boundary, run.oracle, S, probe_grid(run.oracle, 4 * run.h), run.rays)
    assert report.probes > 0
    assert not report.uncovered
    assert not report.multiply_covered
    assert report.violations == 0


def _cleave_patch(p_coords, arrivals):
    records = []
    for coords in p_coords:
        p = ChartPoint(coords)
        record = CutRecord(p=p, minimizers=[_minimizer(p, a, piece=i) for i, a in enumerate(arrivals)])
        record.classification = classify_cut_point(record)
        records.append(record)
    return records


def test_cleave_sheet_of_a_straight_patch(disk):
    line = [[x, 0.0] for x in np.linspace(-0.5, 0.5, 9)]
    # the jump of the duals is normal to the sheet
    records = _cleave_patch(line, [[0.6, 0.8], [0.6, -0.8]])
    mean, worst = cleave_sheet_check(disk.metric, disk.boundary, records)
    assert mean == pytest.approx(0.0, abs=1e-9)
    assert worst == pytest.approx(0.0, abs=1e-9)

    records = _cleave_patch(line, [[0.8, 0.6], [0.0, -1.0]])
    mean, worst = cleave_sheet_check(disk.metric, disk.boundary, records)
    assert worst == pytest.approx(math.atan(0.5), abs=1e-9)


def test_cleave_sheet_needs_cleave_records(disk):
    p = ChartPoint([0.0, 0.0])
    edge = CutRecord(p=p, minimizers=[_minimizer(p, [1.0, 0.0], order=1)])
    edge.classification = classify_cut_point(edge)
    with pytest.raises(ConfigError):
        cleave_sheet_check(disk.metric, disk.boundary, [edge])
    with pytest.raises(ConfigError):
        cleave_sheet_check(disk.metric, disk.boundary, [])


def test_ellipse_cleave_sheet(make_run):
    run = make_run("euclidean_ellipse")
    cleave = [r for r in run.cuts.records if r.classification == CutClass.cleave]
    assert len(cleave) > 10
    mean, worst = cleave_sheet_check(run.metric, run.boundary, cleave)
    assert mean < 0.35
    assert worst <= math.pi / 2


def test_ellipse_a2_exclusion(make_run):
    run = make_run("euclidean_ellipse")
    end, expected = run.scenario.truths["classification"][0]
    assert expected == "edge"
    p = ChartPoint(end)
    record = CutRecord(
        p=p,
        minimizers=limit_set(run.metric, run.boundary, run.oracle, p, run.cut_times.delta, run.cut_times, run.focal_of),
    )
    record.classification = classify_cut_point(record)
    report = a2_exclusion(run.metric, run.boundary, [record], run.focal_of)
    assert report.tested == 1
    assert not report.violations

    # a generic evolute point is A2; put there as a minimizer it is reported
    ray = run.gmap.ray(0, [run.scenario.truths["a2_control"]])
    focal = run.focal_of(ray)[0]
    q = ChartPoint(focal.point)
    control = Minimizer(
        key=ray.key,
        t=focal.t,
        value=focal.t,
        arrival=Tangent(q, [1.0, 0.0]),
        dual=Covector(q, [1.0, 0.0]),
        focal_order=1,
        focal_t=focal.t,
    )
    report = a2_exclusion(run.metric, run.boundary, [CutRecord(p=q, minimizers=[control])], run.focal_of)
    assert report.tested == 1
    assert len(report.violations) == 1


def test_classify_single_minimizer():
    p = ChartPoint([0.0, 0.0])
    assert classify_cut_point(CutRecord(p=p, minimizers=[_minimizer(p, [1.0, 0.0], order=1)])) == CutClass.edge
    assert classify_cut_point(CutRecord(p=p, minimizers=[_minimizer(p, [1.0, 0.0], order=2)])) == CutClass.remainder
    with pytest.raises(NumericalError):
        classify_cut_point(CutRecord(p=p, minimizers=[_minimizer(p, [1.0, 0.0])]))


def test_classify_two_minimizers():
    p = ChartPoint([0.0, 0.0])

    def classify(*orders):
        arrivals = ([1.0, 0.0], [-1.0, 0.0])
        minimizers = [_minimizer(p, a, order=o) for a, o in zip(arrivals, orders)]
        return classify_cut_point(CutRecord(p=p, minimizers=minimizers))

    assert classify(0, 0) == CutClass.cleave
    assert classify(1, 0) == CutClass.degenerate_cleave
    assert classify(1, 1) == CutClass.remainder


def test_unstable_order_is_indeterminate():
    p = ChartPoint([0.0, 0.0])
    minimizers = [_minimizer(p, [1.0, 0.0]), _minimizer(p, [-1.0, 0.0], stable=False)]
    assert classify_cut_point(CutRecord(p=p, minimizers=minimizers)) == CutClass.indeterminate


def test_crossing_in_3d():
    p = ChartPoint([0.0, 0.0, 0.0])
    arrivals = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-math.sqrt(0.5), -math.sqrt(0.5), 0.0]]
    record = CutRecord(p=p, minimizers=[_minimizer(p, a, piece=i) for i, a in enumerate(arrivals)])
    assert classify_cut_point(record) == CutClass.crossing
    assert record.dual_affine_dim == 2


def test_dual_affine_dim():
    p = ChartPoint([0.0, 0.0, 0.0])
    assert dual_affine_dim([_minimizer(p, [1.0, 0.0, 0.0])]) == 0
    assert dual_affine_dim([_minimizer(p, [1.0, 0.0, 0.0]), _minimizer(p, [-1.0, 0.0, 0.0])]) == 1
    collinear = [_minimizer(p, [1.0, 0.0, 0.0]), _minimizer(p, [0.0, 0.0, 0.0]), _minimizer(p, [-1.0, 0.0, 0.0])]
    assert dual_affine_dim(collinear) == 1


def test_cut_rows():
    p = ChartPoint([0.5, -0.5])
    record = CutRecord(p=p, minimizers=[_minimizer(p, [1.0, 0.0]), _minimizer(p, [-1.0, 0.0])])
    record.classification = classify_cut_point(record)
    (row,) = list(cut_rows([record]))
    assert row[:6] == [0.5, -0.5, 0, "cleave", 2, 1]
