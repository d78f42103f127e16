import logging
import math
import os

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List

import numpy as np

from cutlocus.config import RunConfig
from cutlocus.cut import (
    a2_exclusion,
    balanced_check,
    build_distance_oracle,
    classify_cut_point,
    cleave_sheet_check,
    cut_rows,
    densify_cut_points,
    limit_set,
    probe_grid,
    sheet_mesh,
    verify_split,
)
from cutlocus.geometry.flow import GeodesicMap, Ray, ray_rows, unit_speed_error
from cutlocus.geometry.focal import a2_test, check_regular_exp_map, focal_rows, parameter_neighbours
from cutlocus.geometry.metric import MetricSpec, dual_covector, dual_vector, sample_convexity
from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    CutClass,
    CutRecord,
    InvariantViolation,
    NumericalError,
    Stage,
    Tangent,
    Type2,
    key_to_str,
)
from cutlocus.hj import compatibility_check, hausdorff_distance, lax_oleinik, solve_hj
from cutlocus.models import ScenarioRun, scenario_of
from cutlocus.scenarios import builtin_scenarios, brute_force_u
from cutlocus.utils import write_csv, write_json, write_obj


SUMMARY_VERSION = "1.0"
FD_STEP = 1e-5
CHECKED_RAYS = 16
TRUTH_TOL = 1e-3
ARGMIN_TOL = 1e-2
ORACLE_MIN_AGREEMENT = 0.99


@dataclass
class StageResult:
    summary: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    def check(self, name: str, ok: bool, message: str):
        self.checks[name] = bool(ok)
        if not ok:
            logging.warning(f"check {name} failed: {message}")
            self.failures.append(f"{name}: {message}")

    def to_dict(self):
        data = dict(self.summary)
        data["checks"] = self.checks
        data["failures"] = self.failures
        data["violations"] = self.violations
        return data


###################
# Helpers         #
###################


def _checked_rays(rays: List[Ray]) -> List[Ray]:
    stride = max(1, len(rays) // CHECKED_RAYS)
    return list(rays[::stride])


def df_match_error(gmap: GeodesicMap, rays: List[Ray], step: float = FD_STEP) -> float:
    """Largest relative gap between the Jacobi-field dF and central differences of F."""
    worst = 0.0
    for ray in _checked_rays(rays):
        piece, sigma = ray.key[0], np.array(ray.key[1])
        boundary_piece = gmap.piece(piece)
        for fraction in (0.25, 0.5, 0.75):
            t = fraction * ray.t_end
            chart = ray.state(t)[0]
            view = gmap.view(piece).at(chart)
            z = np.concatenate([[t], sigma])
            try:
                exact = view.dF(z)
                approx = np.zeros_like(exact)
                for j in range(z.shape[0]):
                    e = np.zeros_like(z)
                    e[j] = step
                    if j > 0 and not (
                        boundary_piece.contains_param(sigma + e[1:]) and boundary_piece.contains_param(sigma - e[1:])
                    ):
                        approx = None
                        break
                    approx[:, j] = (view.F(z + e) - view.F(z - e)) / (2 * step)
            except NumericalError as e:
                logging.debug(f"dF check skipped on ray {key_to_str(ray.key)} at t={t:.4g}: {e}")
                continue
            if approx is None:
                continue
            worst = max(worst, float(np.max(np.abs(exact - approx)) / max(1.0, float(np.max(np.abs(exact))))))
    return worst


def dual_roundtrip_error(m: MetricSpec, rays: List[Ray], step: float) -> float:
    """Largest |nu(dual(v)) - v| over unit velocities sampled along the rays."""
    worst = 0.0
    for ray in _checked_rays(rays):
        ts, charts, xs, vs = ray.samples(step)
        for c, x, v in zip(charts, xs, vs):
            base = ChartPoint(x, int(c))
            if not m.charts[base.chart].contains(x):
                continue
            v = v / float(m.norm(x, v))
            nu = dual_vector(m, x, dual_covector(m, Tangent(base, v)).components)
            worst = max(worst, float(np.max(np.abs(nu - v))))
    return worst


def truth_point(coords, dim: int) -> ChartPoint:
    """Truth coordinates carry the chart as a trailing entry when there is more than one chart."""
    if len(coords) > dim:
        return ChartPoint(coords[:dim], int(coords[dim]))
    return ChartPoint(coords)


def truth_cloud(truth: Dict[str, Any], dim: int, count: int = 720) -> Dict[int, np.ndarray]:
    """Sample points of an analytic cut locus, per chart."""
    kind = truth["kind"]
    if kind == "circle":
        angles = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        points = np.array(truth["center"]) + truth["radius"] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return {0: points}
    ends = [truth_point(p, dim) for p in truth["points"]]
    if kind == "point":
        clouds: Dict[int, list] = {}
        for p in ends:
            clouds.setdefault(p.chart, []).append(p.coords)
        return {c: np.array(points) for c, points in clouds.items()}
    if kind == "segment":
        a, b = ends[0].coords, ends[1].coords
        return {ends[0].chart: a + np.linspace(0.0, 1.0, count)[:, None] * (b - a)}
    raise ConfigError(f"unknown truth kind {kind}")


def _periods(run: ScenarioRun):
    return {i: piece.hi - piece.lo for i, piece in enumerate(run.boundary.pieces) if all(piece.periodic)}


def _param_header(run: ScenarioRun) -> List[str]:
    return [f"s{i}" for i in range(run.metric.dim - 1)]


def _coord_header(run: ScenarioRun, prefix: str = "x") -> List[str]:
    return [f"{prefix}{i}" for i in range(run.metric.dim)]


def _axis_ray(run: ScenarioRun) -> Ray:
    return min(run.rays, key=lambda ray: float(np.linalg.norm(ray.key[1])))


###################
# Stages          #
###################


def rays_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    rays = run.rays
    h = run.h
    speed = max(unit_speed_error(ray, h) for ray in rays)
    df_error = df_match_error(run.gmap, rays)
    dual_error = dual_roundtrip_error(run.metric, rays, 4 * h)
    problems = run.boundary.validate(run.metric)
    exits: Dict[str, int] = {}
    for ray in rays:
        exits[ray.exit] = exits.get(ray.exit, 0) + 1
    result.summary = {
        "count": len(rays),
        "exits": dict(sorted(exits.items())),
        "unit_speed_max": speed,
        "df_match_max": df_error,
        "dual_roundtrip_max": dual_error,
        "boundary_problems": problems,
    }
    result.check("unit_speed", speed <= run.tolerance("unit_speed_tol"), f"max |phi(v) - 1| = {speed:.3g}")
    result.check("df_match", df_error <= run.tolerance("df_match_tol"), f"max dF gap = {df_error:.3g}")
    result.check("dual_roundtrip", dual_error <= run.tolerance("dual_roundtrip_tol"), f"max gap = {dual_error:.3g}")
    result.check("boundary", not problems, "; ".join(problems[:5]))
    if "csv" in run.config.formats:
        header = ["piece", *_param_header(run), "t", "chart", *_coord_header(run), *_coord_header(run, "v")]
        write_csv(os.path.join(out, "rays.csv"), header, ray_rows(rays, 4 * h))
    return result


def focal_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    focal = run.focal
    records = [record for ray in run.rays for record in focal[ray.key]]
    orders: Dict[str, int] = {}
    types: Dict[str, int] = {}
    for record in records:
        orders[str(record.order)] = orders.get(str(record.order), 0) + 1
        if record.order == 2:
            types[record.type2.value] = types.get(record.type2.value, 0) + 1
            if record.type2 == Type2.type_2b:
                result.violations.append(f"{record}: type 2b on geodesic data")
    regularity = check_regular_exp_map(run.gmap, run.rays, focal)
    result.summary = {
        "records": len(records),
        "orders": dict(sorted(orders.items())),
        "a2_positive": sum(1 for r in records if r.a2),
        "order2_types": dict(sorted(types.items())),
        "order2_records": [r.to_dict() for r in records if r.order == 2],
        "unstable_orders": sum(1 for r in records if not r.order_stable),
        "regularity": regularity.to_dict(),
    }
    result.check("regularity", regularity.ok, "exponential map is not regular on the sampled family")

    truths = run.scenario.truths
    firsts = [records[0].t for records in focal.values() if records]
    if firsts:
        result.summary["first_focal_spread"] = max(firsts) - min(firsts)
    if "focal_time" in truths:
        error = max((abs(t - truths["focal_time"]) for t in firsts), default=math.inf)
        result.summary["focal_time_error"] = error
        result.check("focal_time", error <= TRUTH_TOL, f"first focal times off by {error:.3g}")
    if "focal_times" in truths:
        errors = []
        for theta, expected in truths["focal_times"]:
            found = run.focal_of(run.gmap.ray(0, [theta]))
            errors.append(abs(found[0].t - expected) if found else math.inf)
        result.summary["focal_times_error"] = max(errors)
        result.check("focal_times", max(errors) <= TRUTH_TOL, f"focal times off by {max(errors):.3g}")
    if truths.get("a2_control") is not None:
        # a generic evolute point, reached by a ray that no longer minimizes: must be A2
        control = run.focal_of(run.gmap.ray(0, [truths["a2_control"]]))
        positive = bool(control) and control[0].order == 1 and a2_test(run.metric, run.boundary, control[0])
        result.summary["a2_negative_control"] = positive
        result.check("a2_negative_control", positive, "generic evolute point did not test A2")
    if "axis_focal" in truths:
        expected = truths["axis_focal"]
        axis = [r for r in run.focal_of(_axis_ray(run)) if r.order == expected["order"]]
        result.summary["axis_focal"] = [r.to_dict() for r in axis]
        ok = len(axis) == 1 and abs(axis[0].t - expected["t"]) <= TRUTH_TOL
        result.check("axis_focal", ok, f"{len(axis)} order-{expected['order']} records on the axis ray")
    if "csv" in run.config.formats:
        header = ["piece", *_param_header(run), "t", "order", "order_stable", "a2", "type2", "chart"]
        header += _coord_header(run)
        write_csv(os.path.join(out, "focal.csv"), header, focal_rows(records))
    return result


def cut_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    oracle = run.oracle
    cuts = run.cut_times
    h = run.h
    tol = run.tolerance("oracle_agreement") * h + 1e-3
    agreement = oracle.agreement(tol)
    exits: Dict[str, int] = {}
    for cut in cuts.times.values():
        exits[cut.exit] = exits.get(cut.exit, 0) + 1
    result.summary = {
        "oracle": str(oracle),
        "cut_times": len(cuts.times),
        "censored": len(cuts.censored),
        "exits": dict(sorted(exits.items())),
        "cluster_radius": cuts.delta,
        "oracle_agreement": agreement,
    }
    result.check("oracle_agreement", agreement >= ORACLE_MIN_AGREEMENT, f"provenances agree on {agreement:.2%}")

    scenario = run.scenario
    probes = []
    for p in scenario.probes:
        if not bool(oracle.contains(p.coords, p.chart)):
            continue
        brute = brute_force_u(scenario, p)
        value = oracle.point_value(p)
        entry = {"p": [float(c) for c in p.coords], "chart": p.chart, "brute_force": brute, "oracle": value}
        message = f"brute force {brute:.6g}, oracle {value:.6g}"
        result.check(f"oracle_independence {p}", abs(brute - value) <= tol, message)
        if scenario.exact_u is not None:
            exact = scenario.exact_u(p)
            entry["exact"] = exact
            message = f"brute force {brute:.6g}, exact {exact:.6g}"
            result.check(f"analytic {p}", abs(brute - exact) <= TRUTH_TOL, message)
        probes.append(entry)
    result.summary["probes"] = probes

    hausdorff_tol = run.tolerance("hausdorff_factor") * h
    if "cut" in scenario.truths:
        distances = {}
        for chart, truth in truth_cloud(scenario.truths["cut"], scenario.dim).items():
            _, points = cuts.endpoints(chart, run.metric)
            if len(points) == 0:
                continue
            distances[str(chart)] = hausdorff_distance(points, truth)[0]
        result.summary["truth_hausdorff"] = distances
        worst = max(distances.values(), default=math.inf)
        result.check("truth_cut", worst <= hausdorff_tol, f"Hausdorff distance to the analytic cut locus {worst:.3g}")
    if "t_cut" in scenario.truths:
        found = [c.t for c in cuts.times.values() if not c.censored]
        error = max((abs(t - scenario.truths["t_cut"]) for t in found), default=math.inf)
        result.summary["t_cut_error"] = error
        result.check("t_cut", error <= hausdorff_tol, f"cut times off by {error:.3g}")
    return result


def classify_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    cuts = run.cuts
    records = cuts.records
    m, b = run.metric, run.boundary
    neighbours = parameter_neighbours(run.rays, _periods(run))
    a2 = a2_exclusion(m, b, records, run.focal_of, neighbours, tol=run.tolerance("a2_tol"))
    result.violations.extend(a2.violations)
    result.summary = {
        "records": len(records),
        "counts": cuts.counts(),
        "failures": cuts.failures[:20],
        "a2": a2.to_dict(),
    }
    cleave = [r for r in records if r.classification == CutClass.cleave]
    try:
        mean, worst = cleave_sheet_check(m, b, cleave)
        result.summary["cleave_sheet"] = {"mean": mean, "max": worst}
    except ConfigError as e:
        result.summary["cleave_sheet"] = {"error": str(e)}

    truths = run.scenario.truths
    if truths.get("all_cleave"):
        result.check("all_cleave", records and len(cleave) == len(records), f"{len(cleave)} of {len(records)} cleave")
    expected_classes = []
    for coords, expected in truths.get("classification", []):
        p = truth_point(coords, run.scenario.dim)
        entry = {"p": [float(c) for c in p.coords], "chart": p.chart, "expected": expected}
        try:
            minimizers = limit_set(
                m,
                b,
                run.oracle,
                p,
                cuts.delta,
                cuts,
                run.focal_of,
                run.tolerance("minimality_slack"),
                run.tolerance("dedup_factor"),
            )
            record = CutRecord(p=p, minimizers=minimizers)
            found = classify_cut_point(record).value
            entry["minimizers"] = len(minimizers)
        except NumericalError as e:
            found = None
            entry["error"] = str(e)
        entry["found"] = found
        result.check(f"classification {p}", found == expected, f"expected {expected}, found {found}")
        if "antipode_min_minimizers" in truths and p.chart == 1:
            count = entry.get("minimizers", 0)
            need = truths["antipode_min_minimizers"]
            result.check("antipode_minimizers", count >= need, f"{count} minimizers at the antipode, need {need}")
        expected_classes.append(entry)
    result.summary["truth_classification"] = expected_classes
    if "axis_focal" in truths:
        axis = _axis_ray(run)
        carrying = [r for r in records if r.source == axis.key]
        ok = any(mz.focal_order == 2 for r in carrying for mz in r.minimizers)
        result.check("axis_minimizer", ok, "the axis cut record has no order-2 minimizer")

    if "csv" in run.config.formats:
        header = [*_coord_header(run), "chart", "class", "minimizers", "dual_affine_dim", "piece/s/t/order"]
        write_csv(os.path.join(out, "cut.csv"), header, cut_rows(records))
    if run.scenario.dim == 3 and "obj" in run.config.formats:
        vertices, faces = sheet_mesh(cuts, run.h)
        write_obj(os.path.join(out, "sheet.obj"), vertices, faces)
        result.summary["sheet_faces"] = int(faces.shape[0])
    return result


def balanced_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    records = [r for r in run.cuts.records if r.minimizers and r.classification != CutClass.indeterminate]
    rng = np.random.default_rng(run.config.seed)
    count = min(int(run.tolerance("balanced_samples")), len(records))
    chosen = sorted(rng.choice(len(records), size=count, replace=False)) if count else []
    checks = []
    for i in chosen:
        record = records[int(i)]
        for _ in range(int(run.tolerance("balanced_directions"))):
            v = rng.normal(size=run.scenario.dim)
            outcome = balanced_check(
                run.metric, run.boundary, run.oracle, record, v, factor=run.tolerance("balanced_factor")
            )
            checks.append((record, outcome))
    failed = [f"{record}: error {outcome.error:.3g}" for record, outcome in checks if not outcome.passed]
    errors = [outcome.error for _, outcome in checks if math.isfinite(outcome.error)]
    result.summary = {
        "records": len(chosen),
        "quotients": len(checks),
        "passed": len(checks) - len(failed),
        "max_error": max(errors, default=None),
        "samples": [outcome.to_dict() for _, outcome in checks[:10]],
    }
    result.check("balanced", not failed, f"{len(failed)} of {len(checks)} quotients off: {failed[:3]}")
    return result


def split_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    h = run.h
    S = densify_cut_points(run.cuts, run.rays, run.boundary, h)
    probes = probe_grid(run.oracle, 4 * h)
    report = verify_split(run.metric, run.boundary, run.oracle, S, probes, run.rays, run.cuts.records)
    result.summary = report.to_dict()
    result.check("split", report.violations == 0, f"{report.violations} split violations")
    return result


def hj_stage(run: ScenarioRun, out: str) -> StageResult:
    result = StageResult()
    m, b, h = run.metric, run.boundary, run.h
    cuts = run.cuts if Stage.classify in run.config.stages else run.cut_times
    hj_field, report, extension = solve_hj(
        m,
        b,
        run.oracle,
        run.rays,
        cuts,
        run.config.rays,
        focal_fn=run.focal_of,
        compatibility_margin=run.tolerance("compatibility_margin"),
        consistency_factor=run.tolerance("consistency_factor"),
        eikonal_factor=run.tolerance("eikonal_factor"),
    )
    result.summary = report.to_dict()
    result.summary["singular_nodes"] = int(np.sum(hj_field.singular))
    result.check("eikonal", report.eikonal_max <= report.eikonal_tolerance, f"residual {report.eikonal_max:.3g}")
    result.check("characteristics", report.consistency.passed, f"{len(report.consistency.failures)} gaps")
    tol = run.tolerance("hausdorff_factor") * h
    if report.extension_error is not None:
        result.check("extension", report.extension_error <= tol, f"|u - d(., Lambda)| = {report.extension_error:.3g}")
    if report.singular_hausdorff is not None:
        distance = report.singular_hausdorff[0]
        result.check("singular_set", distance <= tol, f"Hausdorff distance {distance:.3g} to the Lambda cut locus")
    coarse, fine = report.mu.lipschitz, report.mu_refined.lipschitz
    if coarse > 0 and fine > 0:
        result.check("mu_stability", 0.5 <= fine / coarse <= 2.0, f"Lipschitz {coarse:.3g} then {fine:.3g}")

    truths = run.scenario.truths
    if truths.get("k_hat_max") is not None:
        k_hat = report.compatibility.k_hat
        result.check("k_hat", k_hat < truths["k_hat_max"], f"k = {k_hat:.3g}")
    values = []
    for coords, expected in truths.get("u", []):
        p = truth_point(coords, run.scenario.dim)
        found = lax_oleinik(m, b, run.oracle, p)
        values.append({"p": [float(c) for c in p.coords], "chart": p.chart, "expected": expected, **found.to_dict()})
        result.check(f"u {p}", abs(found.value - expected) <= TRUTH_TOL, f"{found.value:.6g} != {expected:.6g}")
        if "argmin_center" in truths and not np.any(p.coords):
            centre = truths["argmin_center"][0]
            gaps = [abs(math.remainder(float(sigma[0]) - centre, 2 * math.pi)) for _, sigma in found.argmin]
            result.check("argmin", min(gaps, default=math.inf) <= ARGMIN_TOL, f"argmin {found.to_dict()['argmin']}")
    result.summary["lax_oleinik"] = values

    if "csv" in run.config.formats:
        write_csv(os.path.join(out, "u_grid.csv"), [*_coord_header(run), "chart", "u", "singular"], hj_field.to_rows())
        mu_rows = ([key[0], *key[1], value] for key, value in hj_field.mu.items())
        write_csv(os.path.join(out, "mu.csv"), ["piece", *_param_header(run), "mu"], mu_rows)
    if "json" in run.config.formats:
        lam = {"curves": [[[float(c) for c in x] for x in curve] for curve in hj_field.lam]}
        if extension is not None:
            lam["extension"] = extension.to_dict()
        write_json(os.path.join(out, "lambda.json"), lam)
    return result


STAGES: Dict[Stage, Callable[[ScenarioRun, str], StageResult]] = {
    Stage.rays: rays_stage,
    Stage.focal: focal_stage,
    Stage.cut: cut_stage,
    Stage.classify: classify_stage,
    Stage.balanced: balanced_stage,
    Stage.split: split_stage,
    Stage.hj: hj_stage,
}


###################
# Commands        #
###################


def run(config: RunConfig) -> int:
    """Run the configured stages in order, write the data products and summary.json; return the exit status."""
    os.makedirs(config.out, exist_ok=True)
    scenario_run = ScenarioRun.from_config(config)
    logging.info(f"running {', '.join(s.value for s in config.stages)} on {scenario_run}")
    summary: Dict[str, Any] = {
        "spec_version": SUMMARY_VERSION,
        "config": config.to_dict(),
        "scenario": scenario_run.scenario.truths_dict(),
        "stages": {},
    }
    status = 0
    violations: List[str] = []
    failures: List[str] = []
    try:
        for stage in config.stages:
            logging.info(f"stage {stage.value}: start")
            result = STAGES[stage](scenario_run, config.out)
            summary["stages"][stage.value] = result.to_dict()
            violations.extend(result.violations)
            failures.extend(f"{stage.value}: {failure}" for failure in result.failures)
            logging.info(
                f"stage {stage.value}: {len(result.checks)} checks, {len(result.failures)} failed, "
                f"{len(result.violations)} hard violations"
            )
    except NumericalError as e:
        logging.error(f"numerical failure: {e}")
        summary["error"] = str(e)
        status = NumericalError.exit_code
    if violations and status == 0:
        logging.error(f"{len(violations)} hard invariant violations")
        status = InvariantViolation.exit_code
    summary.update(scenario_run.to_dict())
    summary["violations"] = violations
    summary["failed_checks"] = failures
    summary["status"] = status
    write_json(os.path.join(config.out, "summary.json"), summary)
    return status


def validate(config: RunConfig) -> Dict[str, Any]:
    """Dry-run diagnostics: chart bounds, compatibility of the boundary data, indicatrix convexity."""
    scenario = scenario_of(config)
    m, b = scenario.metric, scenario.boundary
    chart_problems = b.validate(m)
    for p in scenario.probes:
        if not (0 <= p.chart < len(m.charts)) or not m.charts[p.chart].contains(p.coords):
            chart_problems.append(f"probe {p} is outside its chart")
    oracle = build_distance_oracle(m, b, config.grid_h)
    compatibility = compatibility_check(m, b, oracle, margin=config.tolerance("compatibility_margin"))

    rng = np.random.default_rng(config.seed)
    chart = m.charts[0]
    points = rng.uniform(chart.lo, chart.hi, size=(256, m.dim))
    points = points[(np.asarray(b.level(points, 0)) <= 0) & np.asarray(chart.contains(points), dtype=bool)][:32]
    directions = rng.normal(size=(8, m.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    convexity = sample_convexity(m, points, directions)

    diagnostics = {
        "spec_version": SUMMARY_VERSION,
        "scenario": str(scenario),
        "chart_bounds": chart_problems,
        "compatibility": compatibility.to_dict(),
        "convexity": convexity[:20],
        "convexity_samples": int(points.shape[0] * directions.shape[0]),
    }
    diagnostics["ok"] = not chart_problems and compatibility.passed and not convexity
    if diagnostics["ok"]:
        logging.info(f"{scenario}: all checks passed")
    else:
        logging.warning(f"{scenario}: validation found problems")
    return diagnostics


def list_scenarios() -> List[str]:
    return [f"{scenario}: {scenario.description}" for scenario in builtin_scenarios()]


def export_truths(out: str) -> str:
    os.makedirs(out, exist_ok=True)
    truths = {scenario.name: scenario.truths_dict() for scenario in builtin_scenarios()}
    return write_json(os.path.join(out, "truths.json"), truths)
