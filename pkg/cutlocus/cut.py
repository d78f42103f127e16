"""Cut locus extraction: distance oracle, cut times, limit sets and the cut point taxonomy."""

import itertools
import logging
import math

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import Delaunay, cKDTree

from cutlocus.geometry.flow import BoundarySpec, GeodesicMap, Ray, geodesic_map
from cutlocus.geometry.focal import A2_TOL, a2_test, focal_times, parameter_neighbours
from cutlocus.geometry.metric import MetricSpec, dual_covector
from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    CutClass,
    CutRecord,
    FocalRecord,
    Minimizer,
    NumericalError,
    Provenance,
    RayKey,
    Tangent,
    key_to_str,
)


MINIMALITY_SLACK = 3.0
DEDUP_FACTOR = 5.0
FOCAL_MATCH = 5.0
DUAL_RANK_TOL = 1e-6
SHOOT_TOL = 1e-7
SHOOT_ACCEPT = 1e-6
MAX_CANDIDATES = 48


def _in_m(metric: MetricSpec, boundary: BoundarySpec, x, chart: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = np.asarray(metric.charts[chart].contains(x), dtype=bool)
    level = np.broadcast_to(np.asarray(boundary.level(x, chart), dtype=float), inside.shape)
    return inside & (level <= 0)


def stencil(dim: int, radius: int) -> np.ndarray:
    """Primitive integer offsets with max-norm at most `radius`."""
    offsets = [o for o in itertools.product(range(-radius, radius + 1), repeat=dim) if any(o) and math.gcd(*o) == 1]
    return np.array(offsets, dtype=int)


def _sparse_min(rows, cols, weights, size: int):
    """CSR matrix keeping the smallest weight of duplicate edges."""
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    order = np.lexsort((weights, cols, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    first = np.ones(rows.shape[0], dtype=bool)
    first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    return coo_matrix((weights[first], (rows[first], cols[first])), shape=(size, size)).tocsr()


@dataclass(eq=False)
class ChartGrid:
    chart: int
    axes: List[np.ndarray]
    index: np.ndarray
    tree: Optional[cKDTree] = None
    interpolator: Optional[RegularGridInterpolator] = None


@dataclass(eq=False)
class RaySamples:
    """Ray samples of one chart used by the ray-envelope provenance."""

    x: np.ndarray
    value: np.ndarray
    dual: np.ndarray
    radius: np.ndarray
    tree: cKDTree


@dataclass(eq=False)
class BoundaryNodes:
    piece: int
    sigma: np.ndarray
    x: np.ndarray
    g: np.ndarray
    first: int


class DistanceOracle:
    """u(p) = inf d(q, p) + g(q) sampled on a grid over each chart.

    Two provenances are kept: shortest paths on a stencil graph with directed
    edge lengths phi(midpoint, edge), and the envelope of the ray family
    (t + g(s) extended to first order with the dual of the arrival vector).
    """

    def __init__(
        self,
        metric: MetricSpec,
        boundary: BoundarySpec,
        h: float,
        grids: List[ChartGrid],
        nodes: np.ndarray,
        charts: np.ndarray,
        graph,
        boundary_nodes: List[BoundaryNodes],
        graph_values: np.ndarray,
    ):
        self.metric = metric
        self.boundary = boundary
        self.h = h
        self.grids = grids
        self.nodes = nodes
        self.charts = charts
        self.graph = graph
        self.boundary_nodes = boundary_nodes
        self.graph_values = graph_values
        self.envelope_values = np.full(nodes.shape[0], np.nan)
        self._samples: Dict[int, RaySamples] = {}
        self._transposed = None
        for grid in grids:
            self._build_interpolator(grid)

    def __str__(self):
        covered = int(np.sum(np.isfinite(self.envelope_values)))
        return f"DistanceOracle: {self.nodes.shape[0]} nodes, h={self.h:g}, {covered} covered by rays"

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def provenances(self) -> List[Provenance]:
        if self._samples:
            return [Provenance.graph, Provenance.ray_envelope]
        return [Provenance.graph]

    @property
    def values(self) -> np.ndarray:
        covered = np.isfinite(self.envelope_values)
        envelope = np.where(covered, self.envelope_values, np.inf)
        return np.where(covered, np.minimum(envelope, self.graph_values), self.graph_values)

    def _build_interpolator(self, grid: ChartGrid, values: Optional[np.ndarray] = None):
        values = self.graph_values if values is None else values
        mask = grid.index >= 0
        if not np.any(mask):
            grid.interpolator = None
            return
        indices = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
        filled = values[grid.index[tuple(indices)]]
        grid.interpolator = RegularGridInterpolator(tuple(grid.axes), filled, bounds_error=False, fill_value=None)
        grid.tree = cKDTree(self.nodes[grid.index[mask]])

    def chart_nodes(self, chart: int) -> np.ndarray:
        grid = self.grids[chart]
        return grid.index[grid.index >= 0]

    def contains(self, x, chart: int) -> np.ndarray:
        return _in_m(self.metric, self.boundary, x, chart)

    # values

    def graph_value(self, x, chart: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        interpolator = self.grids[chart].interpolator
        if interpolator is None:
            return np.full(x.shape[0], np.inf)
        return np.asarray(interpolator(x), dtype=float)

    def envelope_value(self, x, chart: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], np.nan)
        samples = self._samples.get(chart)
        if samples is None:
            return out
        r_max = float(np.max(samples.radius))
        for i, idx in enumerate(samples.tree.query_ball_point(x, r_max)):
            if not idx:
                continue
            idx = np.asarray(idx)
            delta = x[i] - samples.x[idx]
            close = np.linalg.norm(delta, axis=1) <= samples.radius[idx]
            if np.any(close):
                estimates = samples.value[idx][close] + np.einsum("ij,ij->i", samples.dual[idx][close], delta[close])
                out[i] = float(np.min(estimates))
        return out

    def value(self, x, chart: int = 0) -> np.ndarray:
        """Best estimate of u at chart coordinates `x` (one point or an array of points)."""
        if isinstance(x, ChartPoint):
            x, chart = x.coords, x.chart
        graph = self.graph_value(x, chart)
        envelope = self.envelope_value(x, chart)
        covered = np.isfinite(envelope)
        return np.where(covered, np.minimum(np.where(covered, envelope, np.inf), graph), graph)

    def point_value(self, p: ChartPoint) -> float:
        return float(self.value(p.coords, p.chart)[0])

    # rays

    def attach_rays(self, rays: Sequence[Ray], spacing: Dict[int, float]):
        """Add the ray-envelope provenance from a ray family; `spacing` is the parameter step per piece."""
        per_chart: Dict[int, Tuple[list, list, list, list]] = {}
        for ray in rays:
            ds = spacing.get(ray.key[0], 0.0)
            for t in ray.times(self.h / 2):
                c, x, v, J, _ = ray.state(t)
                lateral = ds * float(np.max(np.linalg.norm(J, axis=0))) if J.size else 0.0
                dual = float(self.metric.norm(x, v)) * np.asarray(self.metric.norm_grad(x, v), dtype=float)
                xs, values, duals, radii = per_chart.setdefault(c, ([], [], [], []))
                xs.append(x)
                values.append(t + ray.g)
                duals.append(dual)
                radii.append(max(self.h, lateral))
        for c, (xs, values, duals, radii) in per_chart.items():
            xs = np.array(xs)
            self._samples[c] = RaySamples(
                x=xs, value=np.array(values), dual=np.array(duals), radius=np.array(radii), tree=cKDTree(xs)
            )
        for grid in self.grids:
            ids = self.chart_nodes(grid.chart)
            if ids.size:
                self.envelope_values[ids] = self.envelope_value(self.nodes[ids], grid.chart)
        covered = np.isfinite(self.envelope_values)
        logging.info(f"ray envelope covers {int(covered.sum())} of {self.node_count} oracle nodes")

    def agreement(self, tol: float) -> float:
        """Fraction of ray-covered nodes where the two provenances agree within `tol`."""
        covered = np.isfinite(self.envelope_values)
        if not np.any(covered):
            return 1.0
        return float(np.mean(np.abs(self.envelope_values[covered] - self.graph_values[covered]) <= tol))

    # graph queries

    def _neighbours(self, x, chart: int, radius: float) -> np.ndarray:
        grid = self.grids[chart]
        if grid.tree is None:
            return np.zeros(0, dtype=int)
        local = grid.index[grid.index >= 0]
        return local[np.asarray(grid.tree.query_ball_point(x, radius), dtype=int)]

    def distances_to(self, x, chart: int) -> np.ndarray:
        """Graph distance from every graph vertex to the point x, via Dijkstra on the transposed graph."""
        x = np.asarray(x, dtype=float)
        near = self._neighbours(x, chart, 2 * self.h)
        if near.size == 0:
            raise NumericalError(f"unreachable nodes: no grid node within 2h of {x}")
        if self._transposed is None:
            self._transposed = self.graph.T.tocsr()
        cost = np.asarray(self.metric.norm(0.5 * (self.nodes[near] + x), x - self.nodes[near]), dtype=float)
        dist = dijkstra(self._transposed, directed=True, indices=near)
        return np.min(dist + cost[:, None], axis=0)

    def boundary_distances(self, node_ids: np.ndarray) -> np.ndarray:
        """Graph distance from the given boundary sample vertices to every vertex."""
        return dijkstra(self.graph, directed=True, indices=node_ids)


def _boundary_samples(piece, h: float) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """Parameters at roughly h/2 spacing plus the adjacency between consecutive samples."""
    if piece.param_dim == 1:
        probe = np.linspace(piece.lo[0], piece.hi[0], 513)
        points = np.array([piece.point([s]) for s in probe])
        length = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
        count = max(32, int(np.ceil(length / (h / 2))))
        sigma = np.linspace(piece.lo[0], piece.hi[0], count, endpoint=not piece.periodic[0])[:, None]
        pairs = [(i, i + 1) for i in range(count - 1)]
        if piece.periodic[0]:
            pairs.append((count - 1, 0))
        return sigma, pairs
    counts = []
    for j in range(2):
        probe = np.linspace(piece.lo[j], piece.hi[j], 129)
        mid = 0.5 * (piece.lo + piece.hi)
        points = []
        for s in probe:
            sigma = mid.copy()
            sigma[j] = s
            points.append(piece.point(sigma))
        length = float(np.sum(np.linalg.norm(np.diff(np.array(points), axis=0), axis=1)))
        counts.append(max(8, int(np.ceil(length / (h / 2)))))
    axes = [np.linspace(lo, hi, c, endpoint=not p) for lo, hi, c, p in zip(piece.lo, piece.hi, counts, piece.periodic)]
    sigma = np.array([[a, b] for a in axes[0] for b in axes[1]])
    pairs = []
    for i in range(counts[0]):
        for j in range(counts[1]):
            here = i * counts[1] + j
            if i + 1 < counts[0] or piece.periodic[0]:
                pairs.append((here, ((i + 1) % counts[0]) * counts[1] + j))
            if j + 1 < counts[1] or piece.periodic[1]:
                pairs.append((here, i * counts[1] + (j + 1) % counts[1]))
    return sigma, pairs


def build_distance_oracle(
    m: MetricSpec,
    b: BoundarySpec,
    h: float,
    rays: Optional[Sequence[Ray]] = None,
    stencil_radius: Optional[int] = None,
) -> DistanceOracle:
    if h <= 0:
        raise ConfigError(f"grid spacing must be positive, got {h}")
    n = m.dim
    radius = stencil_radius or (3 if n == 2 else 1)
    offsets = stencil(n, radius)

    grids: List[ChartGrid] = []
    node_x, node_chart = [], []
    count = 0
    for c, chart in enumerate(m.charts):
        axes = [np.arange(lo, hi + 0.5 * h, h) for lo, hi in zip(chart.lo, chart.hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        inside = _in_m(m, b, mesh, c)
        index = np.full(inside.shape, -1, dtype=int)
        size = int(inside.sum())
        index[inside] = np.arange(count, count + size)
        count += size
        node_x.append(mesh[inside])
        node_chart.append(np.full(size, c))
        grids.append(ChartGrid(c, axes, index))
    if count == 0:
        raise ConfigError(f"no grid node of spacing {h} lies inside {b.name}")
    nodes = np.concatenate(node_x)
    charts = np.concatenate(node_chart)

    rows, cols, weights = [], [], []

    def add(a, c, xa, xc):
        if len(a) == 0:
            return
        rows.append(np.asarray(a))
        cols.append(np.asarray(c))
        weights.append(np.asarray(m.norm(0.5 * (xa + xc), xc - xa), dtype=float) + 1e-15)

    # stencil edges inside each chart
    for grid in grids:
        multi = np.argwhere(grid.index >= 0)
        src = grid.index[tuple(multi.T)]
        shape = np.array(grid.index.shape)
        for o in offsets:
            target = multi + o
            ok = np.all((target >= 0) & (target < shape), axis=1)
            tgt = np.full(src.shape[0], -1)
            tgt[ok] = grid.index[tuple(target[ok].T)]
            ok = tgt >= 0
            a, c = src[ok], tgt[ok]
            xa, xc = nodes[a], nodes[c]
            for f in (0.25, 0.5, 0.75):
                keep = _in_m(m, b, xa + f * (xc - xa), grid.chart)
                a, c, xa, xc = a[keep], c[keep], xa[keep], xc[keep]
            add(a, c, xa, xc)
        if grid.index.max() >= 0:
            grid.tree = cKDTree(nodes[grid.index[grid.index >= 0]])

    # glue edges between overlapping charts
    for grid in grids:
        chart = m.charts[grid.chart]
        if chart.transition is None or chart.handoff_to is None:
            continue
        target = grids[chart.handoff_to]
        if target.tree is None:
            continue
        ids = grid.index[grid.index >= 0]
        mapped = np.array([m.to_chart(x, grid.chart, chart.handoff_to) for x in nodes[ids]])
        inside = _in_m(m, b, mapped, chart.handoff_to)
        local = target.index[target.index >= 0]
        for node, y in zip(ids[inside], mapped[inside]):
            near = local[np.asarray(target.tree.query_ball_point(y, 1.5 * h), dtype=int)]
            if near.size == 0:
                continue
            ys = np.broadcast_to(y, (near.size, n))
            forward = np.asarray(m.norm(0.5 * (ys + nodes[near]), nodes[near] - ys), dtype=float) + 1e-15
            backward = np.asarray(m.norm(0.5 * (ys + nodes[near]), ys - nodes[near]), dtype=float) + 1e-15
            rows.extend([np.full(near.size, node), near])
            cols.extend([near, np.full(near.size, node)])
            weights.extend([forward, backward])

    # boundary sample vertices and the super source
    boundary_nodes: List[BoundaryNodes] = []
    first = count
    for index, piece in enumerate(b.pieces):
        sigma, pairs = _boundary_samples(piece, h)
        xs = np.array([piece.point(s) for s in sigma])
        gs = np.array([piece.g(s) for s in sigma])
        boundary_nodes.append(BoundaryNodes(index, sigma, xs, gs, first))
        ids = first + np.arange(sigma.shape[0])
        if pairs:
            pa = np.array(pairs)
            add(ids[pa[:, 0]], ids[pa[:, 1]], xs[pa[:, 0]], xs[pa[:, 1]])
            add(ids[pa[:, 1]], ids[pa[:, 0]], xs[pa[:, 1]], xs[pa[:, 0]])
        grid = grids[piece.chart]
        if grid.tree is not None:
            local = grid.index[grid.index >= 0]
            for bid, x in zip(ids, xs):
                near = local[np.asarray(grid.tree.query_ball_point(x, 2 * h), dtype=int)]
                if near.size == 0:
                    continue
                mids = 0.5 * (x + nodes[near])
                ok = _in_m(m, b, mids, piece.chart) | (np.asarray(b.level(mids, piece.chart)) <= 0.5 * h * h)
                near = near[ok]
                xb = np.broadcast_to(x, (near.size, n))
                add(np.full(near.size, bid), near, xb, nodes[near])
                add(near, np.full(near.size, bid), nodes[near], xb)
        first += sigma.shape[0]
    source = first
    size = first + 1
    offset = min(float(np.min(nodes_b.g)) for nodes_b in boundary_nodes)
    for nodes_b in boundary_nodes:
        rows.append(np.full(nodes_b.sigma.shape[0], source))
        cols.append(nodes_b.first + np.arange(nodes_b.sigma.shape[0]))
        weights.append(nodes_b.g - offset + 1e-15)

    graph = _sparse_min(rows, cols, weights, size)
    dist = dijkstra(graph, directed=True, indices=source) + offset
    unreachable = np.isinf(dist[:count])
    if np.any(unreachable):
        raise NumericalError(
            f"unreachable nodes: {int(unreachable.sum())} of {count} grid nodes, e.g. {nodes[np.argmax(unreachable)]}"
        )
    oracle = DistanceOracle(m, b, h, grids, nodes, charts, graph, boundary_nodes, dist[:count])
    logging.info(f"built {oracle} with {graph.nnz} edges")
    if rays is not None:
        oracle.attach_rays(rays, parameter_spacing(rays))
    return oracle


def parameter_spacing(rays: Sequence[Ray]) -> Dict[int, float]:
    """Median nearest-neighbour distance of the boundary parameters, per piece."""
    spacing = {}
    by_piece: Dict[int, list] = {}
    for ray in rays:
        by_piece.setdefault(ray.key[0], []).append(ray.key[1])
    for piece, sigmas in by_piece.items():
        sigmas = np.array(sigmas)
        if sigmas.shape[0] < 2:
            continue
        distances, _ = cKDTree(sigmas).query(sigmas, k=2)
        spacing[piece] = float(np.median(distances[:, 1]))
    return spacing


###################
# Cut times       #
###################


@dataclass
class CutTime:
    key: RayKey
    t: float
    censored: bool
    exit: str
    point: ChartPoint
    focal_t: Optional[float] = None
    capped: bool = False

    def to_dict(self):
        return {
            "ray": key_to_str(self.key),
            "t_cut": self.t,
            "censored": self.censored,
            "exit": self.exit,
            "focal_t": self.focal_t,
            "capped_at_focal": self.capped,
            "p": [float(c) for c in self.point.coords],
            "chart": self.point.chart,
        }


def minimality_excess(oracle: DistanceOracle, ray: Ray, t: float) -> float:
    """t + g(s) - u(F(s, t)); nonnegative up to oracle error, zero while the ray minimizes."""
    chart, x, _, _, _ = ray.state(t)
    return t + ray.g - float(oracle.value(x, chart)[0])


def cut_time(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    ray: Ray,
    focal_t: Optional[float] = None,
    slack: Optional[float] = None,
) -> CutTime:
    """Last time the ray minimizes, capped at its first focal time.

    The excess is scanned at steps of h, the first crossing of `slack` is
    bisected and the cut time is extrapolated back along the excess slope.
    """
    h = oracle.h
    slack = MINIMALITY_SLACK * h if slack is None else slack
    times = list(np.arange(h, ray.t_end, h)) + [ray.t_end]
    t_prev = 0.0
    crossing = None
    for t in times:
        if minimality_excess(oracle, ray, t) > slack:
            lo, hi = t_prev, t
            while hi - lo > 1e-6 * (1 + hi):
                mid = 0.5 * (lo + hi)
                if minimality_excess(oracle, ray, mid) > slack:
                    hi = mid
                else:
                    lo = mid
            crossing = 0.5 * (lo + hi)
            break
        t_prev = t

    censored = False
    exit_reason = "cut"
    if crossing is None:
        t_cut = ray.t_end
        censored = True
        exit_reason = ray.exit
    else:
        t_cut = crossing
        e1 = minimality_excess(oracle, ray, crossing)
        t2 = min(crossing + h, ray.t_end)
        if t2 > crossing + 1e-9:
            slope = (minimality_excess(oracle, ray, t2) - e1) / (t2 - crossing)
            if slope > 0.1:
                t_cut = max(crossing - e1 / slope, 0.0)

    capped = False
    if focal_t is not None and focal_t <= t_cut + 1e-12:
        t_cut = focal_t
        censored = False
        capped = True
        exit_reason = "focal"
    return CutTime(
        key=ray.key,
        t=float(t_cut),
        censored=censored,
        exit=exit_reason,
        point=ray.position(t_cut),
        focal_t=focal_t,
        capped=capped,
    )


###################
# Limit sets      #
###################


@dataclass
class Shot:
    piece: int
    sigma: np.ndarray
    t: float
    residual: float
    value: float
    ray: Ray


def shoot_to(
    gmap: GeodesicMap, piece: int, sigma0, t0: float, target, chart: int, max_nfev: int = 60
) -> Optional[Shot]:
    """Ray parameters (sigma, t) with F(sigma, t) = target, by least squares from a starting guess."""
    boundary_piece = gmap.piece(piece)
    view = gmap.view(piece).at(chart)
    target = np.asarray(target, dtype=float)
    periodic = np.array(boundary_piece.periodic)
    lo = np.concatenate([[0.0], np.where(periodic, -np.inf, boundary_piece.lo)])
    hi = np.concatenate([[gmap.t_max], np.where(periodic, np.inf, boundary_piece.hi)])

    def clamp(z):
        ray = gmap.ray(piece, z[1:])
        return ray, min(max(z[0], 0.0), ray.t_end)

    def residual(z):
        ray, t = clamp(z)
        x = ray.state(t, chart)[1]
        overshoot = max(z[0] - ray.t_end, 0.0)
        return x - target + overshoot

    def jacobian(z):
        _, t = clamp(z)
        return view.dF(np.concatenate([[t], z[1:]]))

    z0 = np.clip(np.concatenate([[t0], np.atleast_1d(sigma0)]), lo, hi)
    try:
        if float(np.linalg.norm(residual(z0))) <= SHOOT_TOL:
            z = z0
        else:
            result = least_squares(
                residual, z0, jac=jacobian, bounds=(lo, hi), xtol=1e-12, ftol=1e-12, max_nfev=max_nfev
            )
            z = result.x
        ray, t = clamp(z)
        miss = float(np.linalg.norm(ray.state(t, chart)[1] - target))
    except NumericalError as e:
        logging.debug(f"shooting from piece {piece} at {sigma0} failed: {e}")
        return None
    sigma = boundary_piece.wrap(z[1:])
    return Shot(piece=piece, sigma=sigma, t=float(t), residual=miss, value=float(t + ray.g), ray=ray)


@dataclass
class CutLocus:
    """Cut times of a ray family and the per-ray cut records."""

    h: float
    times: Dict[RayKey, CutTime] = field(default_factory=dict)
    records: List[CutRecord] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    delta: float = 0.0

    @property
    def censored(self) -> List[CutTime]:
        return [c for c in self.times.values() if c.censored]

    def endpoints(self, chart: int, metric: MetricSpec) -> Tuple[List[RayKey], np.ndarray]:
        """Cut endpoints of non-censored rays expressed in `chart` where possible."""
        keys, points = [], []
        for key, cut in self.times.items():
            if cut.censored:
                continue
            x = cut.point.coords
            if cut.point.chart != chart:
                source = metric.charts[cut.point.chart]
                if source.handoff_to != chart or source.transition is None:
                    continue
                x = metric.to_chart(x, cut.point.chart, chart)
                if not metric.charts[chart].contains(x):
                    continue
            keys.append(key)
            points.append(x)
        return keys, np.array(points).reshape(-1, metric.dim)

    def counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {c: 0 for c in CutClass.values()}
        for record in self.records:
            if record.classification is not None:
                counts[record.classification.value] += 1
        return counts


def cluster_radius(h: float, cuts: Dict[RayKey, CutTime], rays: Sequence[Ray], periods: Dict[int, np.ndarray]) -> float:
    """max(4h, twice the median distance between cut endpoints of neighbouring rays)."""
    gaps = []
    neighbours = parameter_neighbours(list(rays), periods)
    for key, others in neighbours.items():
        here = cuts.get(key)
        if here is None or here.censored:
            continue
        for other in others:
            there = cuts.get(other)
            if there is None or there.censored or there.point.chart != here.point.chart:
                continue
            gaps.append(float(np.linalg.norm(here.point.coords - there.point.coords)))
    median = float(np.median(gaps)) if gaps else 0.0
    return max(4 * h, 2 * median)


def limit_set(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    p: ChartPoint,
    delta: float,
    cuts: CutLocus,
    focal_fn: Callable[[Ray], List[FocalRecord]] = focal_times,
    slack_factor: float = MINIMALITY_SLACK,
    dedup_factor: float = DEDUP_FACTOR,
) -> List[Minimizer]:
    """Minimizing arrival vectors at p gathered from rays whose cut endpoints lie within `delta`."""
    gmap = geodesic_map(m, b)
    h = oracle.h
    keys, points = cuts.endpoints(p.chart, m)
    if not keys:
        raise NumericalError(f"not a cut point at this radius: no cut endpoints in chart {p.chart}")
    distances = np.linalg.norm(points - p.coords, axis=1)
    chosen = [i for i in np.argsort(distances, kind="stable") if distances[i] <= delta]
    if len(chosen) > MAX_CANDIDATES:
        chosen = sorted(chosen, key=lambda i: keys[i])
        chosen = [chosen[int(j)] for j in np.linspace(0, len(chosen) - 1, MAX_CANDIDATES)]
    shots: List[Shot] = []
    for i in chosen:
        key = keys[i]
        shot = shoot_to(gmap, key[0], np.array(key[1]), cuts.times[key].t, p.coords, p.chart)
        if shot is not None and shot.residual <= max(SHOOT_ACCEPT, 1e-3 * h):
            shots.append(shot)
    if not shots:
        raise NumericalError(f"not a cut point at this radius: no ray within {delta:.3g} reaches {p}")

    best = min(s.value for s in shots)
    shots = sorted((s for s in shots if s.value <= best + slack_factor * h), key=lambda s: (s.value, s.piece))
    angle = dedup_factor * math.sqrt(h)
    clusters: List[List[Tuple[Shot, np.ndarray]]] = []
    for shot in shots:
        arrival = shot.ray.state(shot.t, p.chart)[2]
        direction = arrival / np.linalg.norm(arrival)
        for cluster in clusters:
            lead = cluster[0][1]
            if math.acos(float(np.clip(lead @ direction, -1.0, 1.0))) < angle:
                cluster.append((shot, arrival))
                break
        else:
            clusters.append([(shot, arrival)])

    minimizers = []
    for cluster in clusters:
        shot = cluster[0][0]
        arrival = np.mean([a for _, a in cluster], axis=0)
        arrival = arrival / float(m.norm(p.coords, arrival))
        tangent = Tangent(p, arrival)
        order, stable, focal_t = 0, True, None
        for record in focal_fn(shot.ray):
            if abs(record.t - shot.t) <= FOCAL_MATCH * h:
                order, stable, focal_t = record.order, record.order_stable, record.t
                break
        minimizers.append(
            Minimizer(
                key=(shot.piece, tuple(round(float(s), 12) for s in shot.sigma)),
                t=shot.t,
                value=shot.value,
                arrival=tangent,
                dual=dual_covector(m, tangent),
                focal_order=order,
                order_stable=stable,
                focal_t=focal_t,
            )
        )
    return minimizers


def dual_affine_dim(minimizers: List[Minimizer], tol: float = DUAL_RANK_TOL) -> int:
    """Affine dimension of the dual covectors of the minimizers."""
    if len(minimizers) < 2:
        return 0
    duals = np.array([mz.dual.components for mz in minimizers])
    centered = duals - duals.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    scale = max(float(np.max(np.abs(duals))), 1e-300)
    return int(np.sum(sv > tol * scale))


def classify_cut_point(record: CutRecord) -> CutClass:
    minimizers = record.minimizers
    record.dual_affine_dim = dual_affine_dim(minimizers)
    if any(not mz.order_stable for mz in minimizers):
        return CutClass.indeterminate
    orders = [mz.focal_order for mz in minimizers]
    if len(minimizers) == 1:
        if orders[0] == 0:
            raise NumericalError(f"not in split locus: single non-focal minimizer at {record.p}")
        return CutClass.edge if orders[0] == 1 else CutClass.remainder
    if len(minimizers) == 2:
        if orders == [0, 0]:
            return CutClass.cleave
        if sorted(orders) == [0, 1]:
            return CutClass.degenerate_cleave
        return CutClass.remainder
    if record.p.dim == 3 and max(orders) <= 1 and record.dual_affine_dim == 2:
        return CutClass.crossing
    return CutClass.remainder


def compute_cut_times(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    rays: Sequence[Ray],
    focal: Dict[RayKey, List[FocalRecord]],
    slack_factor: float = MINIMALITY_SLACK,
) -> CutLocus:
    """Cut time of every ray, capped at its first focal time, and the clustering radius for limit sets."""
    cuts = CutLocus(h=oracle.h)
    for ray in rays:
        records = focal.get(ray.key, [])
        cuts.times[ray.key] = cut_time(m, b, oracle, ray, records[0].t if records else None, slack_factor * oracle.h)
    periods = {i: piece.hi - piece.lo for i, piece in enumerate(b.pieces) if all(piece.periodic)}
    cuts.delta = cluster_radius(oracle.h, cuts.times, rays, periods)
    logging.info(f"{len(cuts.times)} cut times, {len(cuts.censored)} censored, cluster radius {cuts.delta:.3g}")
    return cuts


def classify_cut_locus(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    cuts: CutLocus,
    rays: Sequence[Ray],
    focal_fn: Callable[[Ray], List[FocalRecord]] = focal_times,
    slack_factor: float = MINIMALITY_SLACK,
    dedup_factor: float = DEDUP_FACTOR,
) -> CutLocus:
    """Limit set and class of the cut point of every non-censored ray."""
    cuts.records = []
    cuts.failures = []
    for ray in rays:
        cut = cuts.times[ray.key]
        if cut.censored:
            continue
        record = CutRecord(p=cut.point, minimizers=[], source=ray.key)
        try:
            record.minimizers = limit_set(
                m, b, oracle, cut.point, cuts.delta, cuts, focal_fn, slack_factor, dedup_factor
            )
            record.classification = classify_cut_point(record)
        except NumericalError as e:
            logging.warning(f"ray {key_to_str(ray.key)}: {e}")
            cuts.failures.append(f"{key_to_str(ray.key)}: {e}")
            if not record.minimizers:
                continue
            record.classification = CutClass.indeterminate
        cuts.records.append(record)
    logging.info(f"classified {len(cuts.records)} cut records: {cuts.counts()}")
    return cuts


###################
# Balanced        #
###################


@dataclass
class BalancedResult:
    direction: np.ndarray
    steps: List[float]
    quotients: List[float]
    expected: float
    error: float
    passed: bool

    def to_dict(self):
        return {
            "direction": [float(c) for c in self.direction],
            "steps": self.steps,
            "quotients": self.quotients,
            "expected": self.expected,
            "error": self.error,
            "passed": self.passed,
        }


def balanced_check(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    record: CutRecord,
    v,
    steps: Optional[Sequence[float]] = None,
    factor: float = 10.0,
    value_fn: Optional[Callable[[ChartPoint], float]] = None,
) -> BalancedResult:
    """Difference quotients (u(p) - u(p - h v)) / d(p - h v, p) against max over R_p of the duals at v.

    u is taken from `value_fn`, by default the Lax-Oleinik minimum over the whole boundary, so a
    record missing one of its minimizers shows up as a quotient away from the expected value.
    """
    if value_fn is None:
        from cutlocus.hj import lax_oleinik

        def lax_value(x: ChartPoint) -> float:
            return lax_oleinik(m, b, oracle, x).value

        value_fn = lax_value

    p = record.p
    v = np.asarray(v, dtype=float)
    v = v / float(np.linalg.norm(v))
    steps = list(steps) if steps is not None else [oracle.h * 2.0 ** (-k) for k in range(4)]
    expected = max(mz.dual(v) / float(m.norm(p.coords, mz.arrival.components)) for mz in record.minimizers)
    u_p = value_fn(p)
    used, quotients = [], []
    for step in steps:
        q = p.coords - step * v
        if not bool(_in_m(m, b, q, p.chart)):
            continue
        try:
            u_q = value_fn(ChartPoint(q, p.chart))
        except NumericalError as e:
            logging.debug(f"balanced quotient at {q} skipped: {e}")
            continue
        distance = float(m.norm(0.5 * (p.coords + q), p.coords - q))
        used.append(float(step))
        quotients.append((u_p - u_q) / distance)
    if not quotients:
        return BalancedResult(v, [], [], float(expected), math.inf, False)
    error = abs(quotients[-1] - expected)
    return BalancedResult(v, used, quotients, float(expected), float(error), error <= factor * used[-1])


###################
# Split locus     #
###################


@dataclass
class SplitReport:
    probes: int = 0
    uncovered: List[List[float]] = field(default_factory=list)
    multiply_covered: List[List[float]] = field(default_factory=list)
    unsupported_records: List[str] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return len(self.uncovered) + len(self.multiply_covered) + len(self.unsupported_records)

    def to_dict(self):
        return {
            "probes": self.probes,
            "violations": self.violations,
            "uncovered": self.uncovered[:20],
            "multiply_covered": self.multiply_covered[:20],
            "unsupported_records": self.unsupported_records[:20],
        }


def _count_components(mask: np.ndarray, periodic: Sequence[bool]) -> int:
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    labels, count = ndimage.label(mask, structure=structure)
    if count < 2:
        return count
    parent = list(range(count + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for axis, wrap in enumerate(periodic):
        if not wrap:
            continue
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        for a, c in zip(first.ravel(), last.ravel()):
            if a and c:
                parent[find(a)] = find(c)
    return len({find(a) for a in range(1, count + 1)})


def densify_cut_points(cuts: CutLocus, rays: Sequence[Ray], b: BoundarySpec, h: float) -> Dict[int, np.ndarray]:
    """Cut endpoints per chart, with segments between neighbouring rays' endpoints filled at h/2."""
    periods = {i: piece.hi - piece.lo for i, piece in enumerate(b.pieces) if all(piece.periodic)}
    per_chart: Dict[int, list] = {}
    for key, cut in cuts.times.items():
        if not cut.censored:
            per_chart.setdefault(cut.point.chart, []).append(cut.point.coords)
    for key, others in parameter_neighbours(list(rays), periods).items():
        here = cuts.times.get(key)
        if here is None or here.censored:
            continue
        for other in others:
            there = cuts.times.get(other)
            if there is None or there.censored or there.point.chart != here.point.chart:
                continue
            gap = float(np.linalg.norm(here.point.coords - there.point.coords))
            if 0 < gap <= 4 * h:
                for f in np.linspace(0, 1, int(np.ceil(gap / (h / 2))) + 1)[1:-1]:
                    per_chart[here.point.chart].append(here.point.coords + f * (there.point.coords - here.point.coords))
    return {c: np.array(points) for c, points in per_chart.items()}


def probe_grid(oracle: DistanceOracle, spacing: float) -> List[Tuple[int, np.ndarray]]:
    probes = []
    for grid in oracle.grids:
        chart = oracle.metric.charts[grid.chart]
        axes = [np.arange(lo + 0.5 * spacing, hi, spacing) for lo, hi in zip(chart.lo, chart.hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, oracle.metric.dim)
        inside = oracle.contains(mesh, grid.chart)
        probes.extend((grid.chart, x) for x in mesh[inside])
        if grid.chart == 0 and len(oracle.grids) > 1:
            # overlapping charts would probe the same points twice
            break
    return probes


def verify_split(
    m: MetricSpec,
    b: BoundarySpec,
    oracle: DistanceOracle,
    S: Dict[int, np.ndarray],
    probes: Sequence[Tuple[int, np.ndarray]],
    rays: Sequence[Ray],
    records: Sequence[CutRecord] = (),
) -> SplitReport:
    """Rays stopped at S must cover every probe off S exactly once (one connected family of rays)."""
    h = oracle.h
    report = SplitReport()
    trees = {c: cKDTree(points) for c, points in S.items() if len(points)}
    kept = [(c, x) for c, x in probes if c not in trees or trees[c].query(x)[0] > 2 * h]
    report.probes = len(kept)
    if not kept:
        return report
    probe_trees: Dict[int, Tuple[cKDTree, List[int]]] = {}
    for c in {c for c, _ in kept}:
        ids = [i for i, (cc, _) in enumerate(kept) if cc == c]
        probe_trees[c] = (cKDTree(np.array([kept[i][1] for i in ids])), ids)

    spacing = parameter_spacing(rays)
    layout: Dict[int, Tuple[Tuple[int, ...], Dict[RayKey, Tuple[int, ...]], Tuple[bool, ...]]] = {}
    for index, piece in enumerate(b.pieces):
        members = [ray for ray in rays if ray.key[0] == index]
        if not members:
            continue
        if piece.param_dim == 1:
            shape = (len(members),)
            positions = {ray.key: (i,) for i, ray in enumerate(sorted(members, key=lambda r: r.key[1]))}
        else:
            side = int(round(math.sqrt(len(members))))
            shape = (side, side)
            ordered = sorted(members, key=lambda r: r.key[1])
            positions = {ray.key: divmod(i, side) for i, ray in enumerate(ordered)}
        layout[index] = (shape, positions, piece.periodic)

    hits: Dict[int, Dict[int, set]] = {}
    for ray in rays:
        ds = spacing.get(ray.key[0], 0.0)
        for t in ray.times(h / 2):
            c, x, _, J, _ = ray.state(t)
            if c in trees and trees[c].query(x)[0] <= 1.5 * h:
                break
            if c not in probe_trees:
                continue
            lateral = ds * float(np.max(np.linalg.norm(J, axis=0)))
            tree, ids = probe_trees[c]
            for j in tree.query_ball_point(x, 0.6 * lateral + 0.5 * h):
                hits.setdefault(ids[j], {}).setdefault(ray.key[0], set()).add(ray.key)

    for i, (c, x) in enumerate(kept):
        components = 0
        for piece, keys in hits.get(i, {}).items():
            shape, positions, periodic = layout[piece]
            mask = np.zeros(shape, dtype=bool)
            for key in keys:
                mask[positions[key]] = True
            components += _count_components(mask, periodic)
        if components == 0:
            report.uncovered.append([float(a) for a in x])
        elif components > 1:
            report.multiply_covered.append([float(a) for a in x])

    for record in records:
        if len(record.minimizers) < 2 and not any(mz.focal_order >= 1 for mz in record.minimizers):
            report.unsupported_records.append(str(record))
    logging.info(
        f"split check: {report.probes} probes, {len(report.uncovered)} uncovered, "
        f"{len(report.multiply_covered)} covered more than once"
    )
    return report


###################
# Cleave sheets   #
###################


def cleave_sheet_check(
    m: MetricSpec, b: BoundarySpec, records: Sequence[CutRecord], k: Optional[int] = None
) -> Tuple[float, float]:
    """Mean and max angle between the fitted normal of the cleave patch and the covector X1 - X2."""
    if any(r.classification != CutClass.cleave for r in records):
        raise ConfigError("mixed patch: cleave_sheet_check needs cleave records only")
    if not records:
        raise ConfigError("mixed patch: no cleave records")
    n = records[0].p.dim
    k = k or (4 if n == 2 else 8)
    if len(records) < n:
        raise ConfigError(f"mixed patch: {len(records)} cleave records cannot span a sheet")
    by_chart: Dict[int, List[CutRecord]] = {}
    for record in records:
        by_chart.setdefault(record.p.chart, []).append(record)
    residuals = []
    for chart, members in by_chart.items():
        points = np.array([r.p.coords for r in members])
        tree = cKDTree(points)
        for i, record in enumerate(members):
            count = min(k + 1, len(members))
            _, idx = tree.query(points[i], k=count)
            patch = points[np.atleast_1d(idx)]
            centered = patch - patch.mean(axis=0)
            _, sv, vt = np.linalg.svd(centered)
            if sv.shape[0] < n - 1 or sv[n - 2] <= 1e-12:
                continue
            normal = vt[-1]
            duals = [mz.dual.components for mz in record.minimizers]
            jump = duals[0] - duals[1]
            cosine = abs(float(normal @ jump)) / (np.linalg.norm(jump) * np.linalg.norm(normal))
            residuals.append(math.acos(min(1.0, cosine)))
    if not residuals:
        raise ConfigError("mixed patch: no cleave record has enough neighbours")
    return float(np.mean(residuals)), float(np.max(residuals))


###################
# A2 exclusion    #
###################


@dataclass
class A2Report:
    tested: int = 0
    violations: List[str] = field(default_factory=list)
    edge_limits: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self):
        return {"tested": self.tested, "violations": self.violations, "edge_limits": self.edge_limits}


def a2_exclusion(
    m: MetricSpec,
    b: BoundarySpec,
    records: Sequence[CutRecord],
    focal_fn: Callable[[Ray], List[FocalRecord]] = focal_times,
    neighbours: Optional[Dict[RayKey, List[RayKey]]] = None,
    tol: float = A2_TOL,
) -> A2Report:
    """A2-test every focal minimizer of every cut record; an A2 minimizer is a violation.

    For edge records the neighbouring rays' first focal points are tested too,
    telling whether the edge point is a limit of A2 points.
    """
    gmap = geodesic_map(m, b)
    report = A2Report()
    for record in records:
        for mz in record.minimizers:
            if mz.focal_order != 1 or mz.focal_t is None:
                continue
            ray = gmap.ray(mz.key[0], np.array(mz.key[1]))
            focal = [r for r in focal_fn(ray) if abs(r.t - mz.focal_t) < 1e-9 and r.order == 1]
            if not focal:
                continue
            report.tested += 1
            try:
                if a2_test(m, b, focal[0], tol=tol):
                    report.violations.append(f"{record}: minimizer {key_to_str(mz.key)} is A2 at t={mz.focal_t:.6g}")
            except NumericalError as e:
                logging.warning(f"{record}: A2 test failed: {e}")
        if record.classification == CutClass.edge and neighbours and record.source in neighbours:
            limits = []
            for other in neighbours[record.source]:
                focal = focal_fn(gmap.ray(other[0], np.array(other[1])))
                if focal and focal[0].order == 1:
                    try:
                        limits.append(a2_test(m, b, focal[0], tol=tol))
                    except NumericalError:
                        continue
            report.edge_limits[key_to_str(record.source)] = bool(limits) and all(limits)
    if report.violations:
        logging.error(f"{len(report.violations)} cut-locus minimizers are A2")
    return report


###################
# Export          #
###################


def cut_rows(records: Sequence[CutRecord]):
    """Rows for cut CSV export: x..., chart, class, count, dual dim, then piece/s.../t/order per minimizer."""
    for record in records:
        row = [*(float(c) for c in record.p.coords), record.p.chart]
        row += [record.classification.value if record.classification else "", len(record.minimizers)]
        row.append(record.dual_affine_dim)
        for mz in record.minimizers:
            row += [mz.key[0], *mz.key[1], mz.t, mz.focal_order]
        yield row


def sheet_mesh(cuts: CutLocus, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles over the cleave records of a 3D cut locus.

    Triangles come from a Delaunay triangulation of the source ray parameters
    and are kept when all three corners are cleave points within 4h of each other.
    """
    records = [r for r in cuts.records if r.source is not None and r.p.dim == 3]
    vertices = np.array([r.p.coords for r in records]).reshape(-1, 3)
    faces: List[Tuple[int, int, int]] = []
    by_piece: Dict[int, List[int]] = {}
    for i, record in enumerate(records):
        by_piece.setdefault(record.source[0], []).append(i)
    for piece, ids in by_piece.items():
        if len(ids) < 3:
            continue
        params = np.array([records[i].source[1] for i in ids])
        try:
            triangulation = Delaunay(params)
        except Exception as e:
            logging.warning(f"cannot triangulate cut sheet of piece {piece}: {e}")
            continue
        for simplex in triangulation.simplices:
            corners = [ids[j] for j in simplex]
            if any(records[c].classification != CutClass.cleave for c in corners):
                continue
            pts = vertices[corners]
            if max(np.linalg.norm(pts[a] - pts[c]) for a, c in ((0, 1), (1, 2), (0, 2))) <= 4 * h:
                faces.append(tuple(corners))
    return vertices, np.array(faces, dtype=int).reshape(-1, 3)
