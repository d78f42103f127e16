"""Static Hamilton-Jacobi problems: Lax-Oleinik values, characteristics, the extension past the boundary and mu."""

import logging
import math

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree

from cutlocus.cut import (
    CutLocus,
    CutTime,
    DistanceOracle,
    build_distance_oracle,
    cut_time,
    densify_cut_points,
    sheet_mesh,
    shoot_to,
)
from cutlocus.geometry.flow import (
    BoundaryPiece,
    BoundarySpec,
    Ray,
    boundary_characteristic,
    geodesic_map,
    integrate_geodesic,
)
from cutlocus.geometry.focal import focal_times, parameter_neighbours
from cutlocus.geometry.metric import MetricSpec
from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    HJField,
    NumericalError,
    RayKey,
    Tangent,
    key_to_str,
)


COMPATIBILITY_MARGIN = 0.02
COMPATIBILITY_SAMPLES = 96
CONSISTENCY_FACTOR = 5.0
EIKONAL_FACTOR = 10.0
SINGULAR_GRADIENT_DROP = 0.7
SINGULAR_DISAGREEMENT = 3.0
DEGENERATE_FRACTION = 0.25


###################
# Compatibility   #
###################


@dataclass
class CompatibilityReport:
    passed: bool
    k_hat: float
    witness: Optional[Tuple[str, str]] = None
    pairs: int = 0

    def to_dict(self):
        return {"passed": self.passed, "k_hat": self.k_hat, "witness": self.witness, "pairs": self.pairs}


def compatibility_check(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    samples: int = COMPATIBILITY_SAMPLES,
    margin: float = COMPATIBILITY_MARGIN,
) -> CompatibilityReport:
    """k = max |g(y) - g(z)| / d(y, z) over pairs of boundary samples, d measured through M."""
    chosen, labels, values = [], [], []
    for nodes in oracle.boundary_nodes:
        count = nodes.sigma.shape[0]
        picks = np.unique(np.linspace(0, count - 1, min(samples, count)).round().astype(int))
        for i in picks:
            chosen.append(nodes.first + i)
            labels.append(f"{nodes.piece}:{';'.join(f'{s:.6g}' for s in nodes.sigma[i])}")
            values.append(nodes.g[i])
        # neighbouring samples carry the steepest local ratio
        if count > 1:
            for i in picks[: min(8, len(picks))]:
                j = (i + 1) % count
                chosen.append(nodes.first + j)
                labels.append(f"{nodes.piece}:{';'.join(f'{s:.6g}' for s in nodes.sigma[j])}")
                values.append(nodes.g[j])
    chosen = np.array(chosen)
    values = np.array(values)
    distances = oracle.boundary_distances(chosen)[:, chosen]
    np.fill_diagonal(distances, np.inf)
    jumps = np.abs(values[:, None] - values[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(distances > 0, jumps / distances, np.where(jumps > 0, np.inf, 0.0))
    ratios[~np.isfinite(distances)] = 0.0
    worst = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    k_hat = float(ratios[worst])
    passed = k_hat < 1.0 - margin
    witness = None if passed else (labels[worst[0]], labels[worst[1]])
    if passed:
        logging.info(f"boundary data of {b.name} is compatible: k = {k_hat:.4g}")
    else:
        logging.warning(f"boundary data of {b.name} is not compatible: k = {k_hat:.4g} at {witness}")
    return CompatibilityReport(passed=passed, k_hat=k_hat, witness=witness, pairs=len(chosen) * (len(chosen) - 1))


###################
# Characteristics #
###################


@dataclass
class CharacteristicSample:
    piece: int
    sigma: np.ndarray
    covector: np.ndarray
    vector: np.ndarray
    residual: float


def characteristic_field(m: MetricSpec, b: BoundarySpec, count: int = 64) -> List[CharacteristicSample]:
    """Covector lambda (dg on the boundary tangent, H = 1) and its unit dual Gamma at boundary samples."""
    field_samples = []
    for index, piece in enumerate(b.pieces):
        for sigma in piece.grid(count):
            lam, gamma = boundary_characteristic(m, piece, sigma)
            residual = abs(float(m.hamiltonian(piece.point(sigma), lam)) - 1.0)
            field_samples.append(CharacteristicSample(index, sigma, lam, gamma, residual))
    worst = max((s.residual for s in field_samples), default=0.0)
    logging.debug(f"characteristic field of {b.name}: {len(field_samples)} samples, max |H - 1| = {worst:.3g}")
    return field_samples


###################
# Lax-Oleinik     #
###################


@dataclass
class LaxOleinikResult:
    value: float
    argmin: List[Tuple[int, np.ndarray]]
    degenerate: bool = False
    refined: bool = True

    def to_dict(self):
        return {
            "u": self.value,
            "argmin": [[piece, [float(s) for s in sigma]] for piece, sigma in self.argmin],
            "degenerate": self.degenerate,
            "refined": self.refined,
        }


def _coarse_local_minima(values: np.ndarray, periodic: bool) -> List[int]:
    if values.shape[0] < 3:
        return [int(np.argmin(values))]
    left = np.roll(values, 1)
    right = np.roll(values, -1)
    minima = (values <= left) & (values <= right)
    if not periodic:
        minima[0] = values[0] <= values[1]
        minima[-1] = values[-1] <= values[-2]
    return [int(i) for i in np.flatnonzero(minima)]


def lax_oleinik(
    m: MetricSpec, b: BoundarySpec, oracle: DistanceOracle, p: ChartPoint, eps_min: Optional[float] = None
) -> LaxOleinikResult:
    """u(p) = inf over the boundary of d(q, p) + g(q), with every near-optimal boundary parameter.

    Boundary samples are ranked with graph distances and the local minima are
    refined by shooting the rays of the nearby parameters at p.
    """
    eps_min = 3 * oracle.h if eps_min is None else eps_min
    gmap = geodesic_map(m, b)
    distances = oracle.distances_to(p.coords, p.chart)
    candidates = []
    coarse_best = math.inf
    flat = 0
    total = 0
    for nodes in oracle.boundary_nodes:
        ids = nodes.first + np.arange(nodes.sigma.shape[0])
        coarse = distances[ids] + nodes.g
        coarse_best = min(coarse_best, float(np.min(coarse)))
        piece = b.pieces[nodes.piece]
        for i in _coarse_local_minima(coarse, nodes.sigma.shape[1] == 1 and piece.periodic[0]):
            candidates.append((float(coarse[i]), nodes.piece, nodes.sigma[i]))
    for nodes in oracle.boundary_nodes:
        ids = nodes.first + np.arange(nodes.sigma.shape[0])
        coarse = distances[ids] + nodes.g
        flat += int(np.sum(coarse <= coarse_best + eps_min))
        total += coarse.shape[0]
    if not math.isfinite(coarse_best):
        raise NumericalError(f"unreachable nodes: {p} is not reachable from the boundary")

    candidates = sorted((c for c in candidates if c[0] <= coarse_best + 2 * eps_min), key=lambda c: (c[0], c[1]))[:32]
    refined = []
    for coarse_value, piece, sigma in candidates:
        shot = shoot_to(gmap, piece, sigma, coarse_value - gmap.piece(piece).g(sigma), p.coords, p.chart)
        if shot is not None and shot.residual <= 1e-6:
            refined.append((shot.value, piece, shot.sigma))
    if not refined:
        logging.warning(f"shooting did not refine u at {p}; keeping graph value")
        best = min(candidates, key=lambda c: c[0])
        degenerate = flat > DEGENERATE_FRACTION * total
        return LaxOleinikResult(best[0], [(best[1], best[2])], degenerate=degenerate, refined=False)

    value = min(r[0] for r in refined)
    argmin: List[Tuple[int, np.ndarray]] = []
    for v, piece, sigma in sorted(refined, key=lambda r: r[0]):
        if v > value + eps_min:
            continue
        if any(piece == other and np.linalg.norm(sigma - s) < 1e-4 for other, s in argmin):
            continue
        argmin.append((piece, sigma))
    return LaxOleinikResult(value, argmin, degenerate=flat > DEGENERATE_FRACTION * total)


###################
# Extension       #
###################


@dataclass(eq=False)
class LambdaCurve:
    """Zero level of the extended solution traced along the backward characteristics of one piece."""

    piece: int
    sigma: np.ndarray
    points: np.ndarray
    chart: int
    periodic: Tuple[bool, ...]
    lo: np.ndarray
    hi: np.ndarray
    interpolant: Callable = None

    def __post_init__(self):
        if self.sigma.shape[1] == 1:
            s = self.sigma[:, 0]
            points = self.points
            if self.periodic[0]:
                s = np.append(s, self.hi[0])
                points = np.vstack([points, points[:1]])
                self.interpolant = CubicSpline(s, points, axis=0, bc_type="periodic")
            else:
                self.interpolant = CubicSpline(s, points, axis=0)
        else:
            axes = [np.unique(self.sigma[:, j]) for j in range(2)]
            grid = self.points.reshape(axes[0].shape[0], axes[1].shape[0], -1)
            for j, periodic in enumerate(self.periodic):
                if periodic:
                    axes[j] = np.append(axes[j], self.hi[j])
                    grid = np.concatenate([grid, np.take(grid, [0], axis=j)], axis=j)
            self.interpolant = RegularGridInterpolator(tuple(axes), grid, bounds_error=False, fill_value=None)

    def __call__(self, sigma) -> np.ndarray:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if self.sigma.shape[1] == 1:
            return np.asarray(self.interpolant(sigma[0]), dtype=float)
        return np.asarray(self.interpolant(sigma[None, :])[0], dtype=float)

    def polyline(self) -> List[List[float]]:
        return [[float(c) for c in x] for x in self.points]


@dataclass(eq=False)
class Extension:
    """Samples of the extended solution on backward characteristics, and Lambda."""

    metric: MetricSpec
    boundary: BoundarySpec
    h: float
    points: np.ndarray
    charts: np.ndarray
    values: np.ndarray
    duals: np.ndarray
    tau: Dict[RayKey, float] = field(default_factory=dict)
    curves: List[LambdaCurve] = field(default_factory=list)

    def to_dict(self):
        return {
            "lambda": [
                {"piece": c.piece, "chart": c.chart, "sigma": c.sigma.tolist(), "points": c.polyline()}
                for c in self.curves
            ],
            "tau": {key_to_str(k): v for k, v in self.tau.items()},
        }


def _backward_ray(
    m: MetricSpec, reversed_metric: MetricSpec, piece: BoundaryPiece, index: int, sigma, t_max: float
) -> Ray:
    """Characteristic from c(sigma) run backward in time, as a geodesic of the reversed metric."""
    _, gamma = boundary_characteristic(m, piece, sigma)
    step = 1e-6
    columns = []
    for j in range(piece.param_dim):
        e = np.zeros(piece.param_dim)
        e[j] = step
        plus = boundary_characteristic(m, piece, sigma + e)[1]
        minus = boundary_characteristic(m, piece, sigma - e)[1]
        columns.append(-(plus - minus) / (2 * step))
    x0 = ChartPoint(piece.point(sigma), piece.chart)
    return integrate_geodesic(
        reversed_metric,
        x0,
        Tangent(x0, -gamma),
        t_max,
        J0=piece.tangents(sigma),
        K0=np.stack(columns, axis=1),
        key=(index, tuple(round(float(s), 12) for s in sigma)),
        g=piece.g(sigma),
    )


def extend_solution(m: MetricSpec, b: BoundarySpec, T: float, h: float, count: int = 128) -> Extension:
    """Extended solution g(s) - tau on the backward characteristics, and Lambda where it vanishes.

    The extended function decreases with unit speed along each backward
    characteristic, so Lambda sits at backward time tau = g(s). Characteristics
    that leave the chart atlas or cross each other first invalidate the extension.
    """
    reversed_metric = m.reversed()
    points, charts, values, duals = [], [], [], []
    extension = Extension(m, b, h, np.zeros((0, m.dim)), np.zeros(0, dtype=int), np.zeros(0), np.zeros((0, m.dim)))
    for index, piece in enumerate(b.pieces):
        sigmas = piece.grid(count)
        lam_points = []
        for sigma in sigmas:
            g = piece.g(sigma)
            if g < 0:
                raise ConfigError(f"negative boundary data: g = {g:.6g} at {sigma} on piece {piece.name}")
            if g > T + 1e-12:
                raise NumericalError(f"extension invalid: backward time {T} is below g = {g:.6g} on piece {piece.name}")
            if g <= 0:
                tau_star = 0.0
                ray = None
            else:
                ray = _backward_ray(m, reversed_metric, piece, index, sigma, g)
                if ray.t_end < g - 1e-9:
                    raise NumericalError(
                        f"extension invalid: characteristic from {piece.name} at {sigma} leaves the charts "
                        f"at backward time {ray.t_end:.4g} < {g:.4g}"
                    )
                tau_star = g
            key = (index, tuple(round(float(s), 12) for s in sigma))
            extension.tau[key] = tau_star
            if ray is None:
                lam_points.append(piece.point(sigma))
                continue
            signs = []
            for tau in ray.times(h / 2):
                c, x, v, J, _ = ray.state(tau)
                det = float(np.linalg.det(np.column_stack([v, J])))
                signs.append(det)
                points.append(x)
                charts.append(c)
                values.append(g - tau)
                duals.append(-float(reversed_metric.norm(x, v)) * np.asarray(reversed_metric.norm_grad(x, v)))
            signs = np.array(signs)
            if np.any(np.sign(signs[1:]) != np.sign(signs[0])) or np.any(np.abs(signs[1:]) < 1e-12):
                raise NumericalError(f"extension invalid: backward characteristics cross near {piece.name} at {sigma}")
            c, x, _, _, _ = ray.state(tau_star)
            if c != piece.chart:
                x = m.to_chart(x, c, piece.chart)
            lam_points.append(x)
        extension.curves.append(
            LambdaCurve(
                piece=index,
                sigma=np.array(sigmas),
                points=np.array(lam_points),
                chart=piece.chart,
                periodic=piece.periodic,
                lo=piece.lo,
                hi=piece.hi,
            )
        )
    if points:
        extension.points = np.array(points)
        extension.charts = np.array(charts)
        extension.values = np.array(values)
        extension.duals = np.array(duals)
    logging.info(f"extended {b.name} backward along {len(extension.tau)} characteristics, {len(points)} samples")
    return extension


class ExtendedField:
    """The extended solution: u on M, the backward-characteristic samples beyond it."""

    def __init__(self, oracle: DistanceOracle, extension: Extension):
        self.oracle = oracle
        self.extension = extension
        h = oracle.h
        self._trees: Dict[int, Tuple[cKDTree, np.ndarray]] = {}
        for c in np.unique(extension.charts):
            ids = np.flatnonzero(extension.charts == c)
            self._trees[int(c)] = (cKDTree(extension.points[ids]), ids)
        self.reach = 2 * h

    def value(self, x, chart: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.oracle.contains(x, chart)
        out = np.full(x.shape[0], np.nan)
        if np.any(inside):
            out[inside] = self.oracle.value(x[inside], chart)
        outside = np.flatnonzero(~inside)
        if outside.size and chart in self._trees:
            tree, ids = self._trees[chart]
            distance, nearest = tree.query(x[outside], distance_upper_bound=self.reach)
            found = np.isfinite(distance)
            j = ids[nearest[found]]
            delta = x[outside[found]] - self.extension.points[j]
            out[outside[found]] = self.extension.values[j] + np.einsum("ij,ij->i", self.extension.duals[j], delta)
        return out


def lambda_problem(m: MetricSpec, b: BoundarySpec, oracle: DistanceOracle, extension: Extension) -> BoundarySpec:
    """The zero-data problem on {extended solution >= 0} bounded by Lambda."""
    ext = ExtendedField(oracle, extension)
    levels = []
    for grid in oracle.grids:
        chart = m.charts[grid.chart]
        mesh = np.stack(np.meshgrid(*grid.axes, indexing="ij"), axis=-1)
        flat = mesh.reshape(-1, m.dim)
        values = ext.value(flat, grid.chart)
        values = np.where(np.isfinite(values), values, -1.0)
        values = np.where(chart.contains(flat), values, -1.0)
        level_values = -values.reshape(mesh.shape[:-1])
        levels.append(RegularGridInterpolator(tuple(grid.axes), level_values, bounds_error=False, fill_value=1.0))

    def level(x, chart):
        x = np.asarray(x, dtype=float)
        return levels[chart](x.reshape(-1, m.dim)).reshape(x.shape[:-1])

    pieces = []
    for curve, piece in zip(extension.curves, b.pieces):
        pieces.append(
            BoundaryPiece(
                name=f"lambda-{piece.name}",
                embedding=curve,
                lo=piece.lo,
                hi=piece.hi,
                periodic=piece.periodic,
                side=piece.side,
                chart=piece.chart,
            )
        )
    t_max = b.t_max + max((float(np.max(list(extension.tau.values()))) if extension.tau else 0.0), 0.0)
    return BoundarySpec(name=f"lambda({b.name})", pieces=pieces, level=level, t_max=t_max)


###################
# HJ field        #
###################


def grid_gradient(values: np.ndarray, index: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-node gradients on a chart grid; central where both neighbours are in M, one-sided otherwise.

    Returns the gradient (nodes x n) and a flag telling whether every axis used a central difference.
    """
    mask = index >= 0
    dim = index.ndim
    ids = index[mask]
    gradient = np.zeros((ids.shape[0], dim))
    central = np.ones(ids.shape[0], dtype=bool)
    full = np.full(index.shape, np.nan)
    full[mask] = values[ids]
    for axis in range(dim):
        plus = np.full(index.shape, np.nan)
        minus = np.full(index.shape, np.nan)
        forward = [slice(None)] * dim
        backward = [slice(None)] * dim
        forward[axis] = slice(0, -1)
        backward[axis] = slice(1, None)
        plus[tuple(forward)] = full[tuple(backward)]
        minus[tuple(backward)] = full[tuple(forward)]
        here = full[mask]
        p = plus[mask]
        q = minus[mask]
        both = np.isfinite(p) & np.isfinite(q)
        only_plus = np.isfinite(p) & ~np.isfinite(q)
        only_minus = ~np.isfinite(p) & np.isfinite(q)
        gradient[both, axis] = (p[both] - q[both]) / (2 * h)
        gradient[only_plus, axis] = (p[only_plus] - here[only_plus]) / h
        gradient[only_minus, axis] = (here[only_minus] - q[only_minus]) / h
        central &= both
    return gradient, central


def build_hj_field(m: MetricSpec, oracle: DistanceOracle) -> Tuple[HJField, np.ndarray]:
    """Sampled u with gradients, the eikonal residual and the singular mask; also returns the interior flag."""
    h = oracle.h
    u = oracle.values
    n = oracle.node_count
    gradient = np.zeros((n, m.dim))
    interior = np.zeros(n, dtype=bool)
    for grid in oracle.grids:
        ids = grid.index[grid.index >= 0]
        if ids.size == 0:
            continue
        g, central = grid_gradient(u, grid.index, h)
        gradient[ids] = g
        interior[ids] = central
    eikonal = np.array([float(m.hamiltonian(x, xi)) for x, xi in zip(oracle.nodes, gradient)])
    residual = np.abs(eikonal - 1.0)
    covered = np.isfinite(oracle.envelope_values)
    disagreement = np.zeros(n, dtype=bool)
    gap = np.abs(oracle.envelope_values[covered] - oracle.graph_values[covered])
    disagreement[covered] = gap > SINGULAR_DISAGREEMENT * h
    singular = interior & ((eikonal < SINGULAR_GRADIENT_DROP) | disagreement)
    field_ = HJField(
        nodes=oracle.nodes,
        charts=oracle.charts,
        u=u,
        gradient=gradient,
        singular=singular,
        eikonal_residual=np.where(interior & ~singular, residual, 0.0),
    )
    residual = float(np.max(field_.eikonal_residual)) if field_.eikonal_residual.size else 0.0
    logging.info(f"HJ field: {n} nodes, {int(singular.sum())} singular, max eikonal residual {residual:.3g}")
    return field_, interior


@dataclass
class ConsistencyReport:
    samples: int = 0
    upper_bound_worst: float = 0.0
    characteristic_worst: float = 0.0
    tolerance: float = 0.0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {
            "samples": self.samples,
            "upper_bound_worst": self.upper_bound_worst,
            "characteristic_worst": self.characteristic_worst,
            "tolerance": self.tolerance,
            "failures": self.failures[:20],
        }


def characteristic_consistency(
    oracle: DistanceOracle, rays: Sequence[Ray], cuts: Dict[RayKey, CutTime], factor: float = CONSISTENCY_FACTOR
) -> ConsistencyReport:
    """u(F(s,t)) <= t + g(s) everywhere, and equality before the cut time, both within 5h (graph values)."""
    h = oracle.h
    report = ConsistencyReport(tolerance=factor * h)
    for ray in rays:
        cut = cuts.get(ray.key)
        mu = cut.t if cut is not None else ray.t_end
        for t in ray.times(h):
            c, x, _, _, _ = ray.state(t)
            if not bool(oracle.contains(x, c)):
                continue
            u = float(oracle.graph_value(x, c)[0])
            excess = u - (t + ray.g)
            report.samples += 1
            report.upper_bound_worst = max(report.upper_bound_worst, excess)
            if excess > report.tolerance:
                report.failures.append(f"upper bound: ray {key_to_str(ray.key)} t={t:.4g} exceeds by {excess:.3g}")
            if t < mu:
                gap = abs(excess)
                report.characteristic_worst = max(report.characteristic_worst, gap)
                if gap > report.tolerance:
                    report.failures.append(f"characteristic: ray {key_to_str(ray.key)} t={t:.4g} off by {gap:.3g}")
    return report


def extension_identity(
    m: MetricSpec, oracle: DistanceOracle, extension: Extension, lam_oracle: DistanceOracle
) -> float:
    """max |extended u - d(., Lambda)| over grid nodes where the extended u is nonnegative."""
    ext = ExtendedField(oracle, extension)
    worst = 0.0
    for grid in lam_oracle.grids:
        ids = lam_oracle.chart_nodes(grid.chart)
        if ids.size == 0:
            continue
        x = lam_oracle.nodes[ids]
        values = ext.value(x, grid.chart)
        keep = np.isfinite(values) & (values >= 0)
        if np.any(keep):
            worst = max(worst, float(np.max(np.abs(values[keep] - lam_oracle.values[ids][keep]))))
    return worst


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> Tuple[float, float, float]:
    """(Hausdorff distance, sup over a of d(., b), sup over b of d(., a))."""
    if len(a) == 0 or len(b) == 0:
        return math.inf, math.inf, math.inf
    forward = float(np.max(cKDTree(b).query(a)[0]))
    backward = float(np.max(cKDTree(a).query(b)[0]))
    return max(forward, backward), forward, backward


def singular_measure(cuts: CutLocus, rays: Sequence[Ray], b: BoundarySpec, h: float, dim: int) -> float:
    """Length (n=2) or area (n=3) of the extracted cut locus at the current resolution."""
    if dim == 3:
        vertices, faces = sheet_mesh(cuts, h)
        if faces.shape[0] == 0:
            return 0.0
        a, c, d = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
        return float(0.5 * np.sum(np.linalg.norm(np.cross(c - a, d - a), axis=1)))
    total = 0.0
    for points in densify_cut_points(cuts, rays, b, h).values():
        if len(points) < 2:
            continue
        # thin duplicates from rays landing on the same cut point
        keep = np.ones(len(points), dtype=bool)
        tree = cKDTree(points)
        for i, j in sorted(tree.query_pairs(h / 2)):
            if keep[i]:
                keep[j] = False
        points = points[keep]
        pairs = np.array(sorted(cKDTree(points).query_pairs(2 * h)))
        if pairs.size == 0:
            continue
        weights = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
        graph = coo_matrix((weights, (pairs[:, 0], pairs[:, 1])), shape=(len(points), len(points))).tocsr()
        total += float(minimum_spanning_tree(graph).sum())
    return total


###################
# mu              #
###################


@dataclass
class MuReport:
    mu: Dict[RayKey, float] = field(default_factory=dict)
    lipschitz: float = 0.0
    excluded: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "lipschitz": self.lipschitz,
            "count": len(self.mu),
            "excluded": self.excluded,
            "min": min(self.mu.values()) if self.mu else None,
            "max": max(self.mu.values()) if self.mu else None,
        }


def mu_function(m: MetricSpec, b: BoundarySpec, cuts: Dict[RayKey, CutTime], rays: Sequence[Ray]) -> MuReport:
    """mu(s) = cut time along the characteristic from s, and its Lipschitz constant over neighbouring samples."""
    report = MuReport()
    for ray in rays:
        cut = cuts.get(ray.key)
        if cut is None or cut.censored:
            report.excluded.append(key_to_str(ray.key))
            continue
        report.mu[ray.key] = cut.t
    periods = {i: piece.hi - piece.lo for i, piece in enumerate(b.pieces) if all(piece.periodic)}
    worst = 0.0
    for key, others in parameter_neighbours(list(rays), periods).items():
        if key not in report.mu:
            continue
        x = b.pieces[key[0]].point(key[1])
        for other in others:
            if other not in report.mu:
                continue
            y = b.pieces[other[0]].point(other[1])
            distance = float(m.norm(0.5 * (x + y), y - x))
            if distance > 0:
                worst = max(worst, abs(report.mu[key] - report.mu[other]) / distance)
    report.lipschitz = worst
    if report.excluded:
        logging.warning(f"mu: {len(report.excluded)} censored characteristics excluded")
    return report


def mu_stability(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    count: int,
    focal_fn: Callable[[Ray], list] = focal_times,
) -> Tuple[MuReport, MuReport]:
    """mu and its Lipschitz constant from `count` and `2 * count` characteristics per piece."""
    gmap = geodesic_map(m, b)
    reports = []
    for n in (count, 2 * count):
        rays = gmap.family(n)
        cuts = {}
        for ray in rays:
            records = focal_fn(ray)
            cuts[ray.key] = cut_time(m, b, oracle, ray, records[0].t if records else None)
        reports.append(mu_function(m, b, cuts, rays))
    return reports[0], reports[1]


@dataclass
class HJReport:
    compatibility: Optional[CompatibilityReport] = None
    consistency: Optional[ConsistencyReport] = None
    eikonal_max: float = 0.0
    eikonal_tolerance: float = 0.0
    extension_error: Optional[float] = None
    singular_hausdorff: Optional[Tuple[float, float, float]] = None
    singular_measure: float = 0.0
    mu: Optional[MuReport] = None
    mu_refined: Optional[MuReport] = None

    def to_dict(self):
        return {
            "compatibility": self.compatibility.to_dict() if self.compatibility else None,
            "consistency": self.consistency.to_dict() if self.consistency else None,
            "eikonal_max": self.eikonal_max,
            "eikonal_tolerance": self.eikonal_tolerance,
            "extension_error": self.extension_error,
            "singular_hausdorff": list(self.singular_hausdorff) if self.singular_hausdorff else None,
            "singular_measure": self.singular_measure,
            "mu": self.mu.to_dict() if self.mu else None,
            "mu_refined": self.mu_refined.to_dict() if self.mu_refined else None,
        }


def solve_hj(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    rays: Sequence[Ray],
    cuts: CutLocus,
    ray_count: int,
    extend: bool = True,
    focal_fn: Callable[[Ray], list] = focal_times,
    compatibility_margin: float = COMPATIBILITY_MARGIN,
    consistency_factor: float = CONSISTENCY_FACTOR,
    eikonal_factor: float = EIKONAL_FACTOR,
) -> Tuple[HJField, HJReport, Optional[Extension]]:
    """Everything the hj stage reports: field, compatibility, consistency, extension, mu."""
    h = oracle.h
    report = HJReport(eikonal_tolerance=eikonal_factor * h)
    report.compatibility = compatibility_check(m, b, oracle, margin=compatibility_margin)
    hj_field, _ = build_hj_field(m, oracle)
    report.eikonal_max = float(np.max(hj_field.eikonal_residual)) if hj_field.eikonal_residual.size else 0.0
    report.consistency = characteristic_consistency(oracle, rays, cuts.times, consistency_factor)
    report.mu, report.mu_refined = mu_stability(m, b, oracle, ray_count, focal_fn)
    hj_field.mu = dict(report.mu.mu)
    report.singular_measure = singular_measure(cuts, rays, b, h, m.dim)

    extension = None
    has_data = any(abs(piece.g(sigma)) > 0 for piece in b.pieces for sigma in piece.grid(16))
    if extend and has_data:
        T = max(piece.g(sigma) for piece in b.pieces for sigma in piece.grid(64))
        extension = extend_solution(m, b, T, h, count=max(64, ray_count))
        lam = lambda_problem(m, b, oracle, extension)
        lam_map = geodesic_map(m, lam)
        lam_rays = lam_map.family(ray_count)
        lam_oracle = build_distance_oracle(m, lam, h, rays=lam_rays)
        report.extension_error = extension_identity(m, oracle, extension, lam_oracle)
        lam_focal = {ray.key: focal_fn(ray) for ray in lam_rays}
        lam_cut_points = []
        for ray in lam_rays:
            records = lam_focal[ray.key]
            cut = cut_time(m, lam, lam_oracle, ray, records[0].t if records else None)
            if not cut.censored and bool(oracle.contains(cut.point.coords, cut.point.chart)):
                lam_cut_points.append(cut.point.coords)
        mask_points = hj_field.nodes[hj_field.singular]
        if lam_cut_points:
            report.singular_hausdorff = hausdorff_distance(mask_points, np.array(lam_cut_points))
        hj_field.extension_points = extension.points
        hj_field.extension_values = extension.values
        hj_field.lam = [curve.points for curve in extension.curves]
    elif not has_data:
        hj_field.lam = [np.array([piece.point(s) for s in piece.grid(ray_count)]) for piece in b.pieces]
    logging.info(f"hj stage done: eikonal {report.eikonal_max:.3g}, mu Lipschitz {report.mu.lipschitz:.3g}")
    return hj_field, report, extension
