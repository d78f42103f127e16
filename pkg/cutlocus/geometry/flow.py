import logging

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from cutlocus.geometry.metric import MetricSpec, characteristic_covector, dual_covector
from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    JacobiFrame,
    NumericalError,
    RayKey,
    Tangent,
    key_to_str,
    ray_key,
)


RTOL = 1e-10
ATOL = 1e-10
MAX_STEP = 0.05
PARAM_STEP = 1e-6
KERNEL_TOL = 1e-6
RAY_CACHE_SIZE = 4096


def _zero_data(sigma) -> float:
    return 0.0


@dataclass(eq=False)
class BoundaryPiece:
    """One smooth piece of the boundary.

    `embedding` maps the boundary parameter (length n-1) to chart coordinates.
    `side` is +1 when the inward side is rot90(c') in 2D or c_u x c_v in 3D,
    -1 otherwise. `data` is the boundary value g.
    """

    name: str
    embedding: Callable
    lo: np.ndarray
    hi: np.ndarray
    periodic: Tuple[bool, ...] = (True,)
    side: int = 1
    data: Callable = _zero_data
    chart: int = 0
    characteristic: Optional[Callable] = None

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        self.periodic = tuple(bool(p) for p in np.broadcast_to(self.periodic, self.lo.shape))
        if self.side not in (1, -1):
            raise ConfigError(f"boundary piece {self.name}: side must be +1 or -1")
        if np.any(self.hi <= self.lo):
            raise ConfigError(f"boundary piece {self.name}: empty parameter domain")

    @property
    def param_dim(self) -> int:
        return self.lo.shape[0]

    def point(self, sigma) -> np.ndarray:
        return np.asarray(self.embedding(np.atleast_1d(np.asarray(sigma, dtype=float))), dtype=float)

    def g(self, sigma) -> float:
        return float(self.data(np.atleast_1d(np.asarray(sigma, dtype=float))))

    def tangents(self, sigma) -> np.ndarray:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        columns = []
        for j in range(self.param_dim):
            e = np.zeros(self.param_dim)
            e[j] = PARAM_STEP
            columns.append((self.point(sigma + e) - self.point(sigma - e)) / (2 * PARAM_STEP))
        return np.stack(columns, axis=1)

    def data_gradient(self, sigma) -> np.ndarray:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        grad = np.zeros(self.param_dim)
        for j in range(self.param_dim):
            e = np.zeros(self.param_dim)
            e[j] = PARAM_STEP
            grad[j] = (self.g(sigma + e) - self.g(sigma - e)) / (2 * PARAM_STEP)
        return grad

    def conormal(self, sigma) -> np.ndarray:
        """Euclidean normal covector pointing into M."""
        t = self.tangents(sigma)
        if t.shape[1] == 1:
            normal = np.array([-t[1, 0], t[0, 0]])
        else:
            normal = np.cross(t[:, 0], t[:, 1])
        return self.side * normal

    def grid(self, count: int) -> List[np.ndarray]:
        """Boundary parameters in deterministic order; in 3D `count` is rounded to an odd square."""
        if self.param_dim == 1:
            axis = np.linspace(self.lo[0], self.hi[0], count, endpoint=not self.periodic[0])
            return [np.array([s]) for s in axis]
        side = max(3, int(round(np.sqrt(count))))
        if side % 2 == 0:
            side += 1
        axes = [
            np.linspace(lo, hi, side, endpoint=not periodic)
            for lo, hi, periodic in zip(self.lo, self.hi, self.periodic)
        ]
        return [np.array([a, b]) for a in axes[0] for b in axes[1]]

    def wrap(self, sigma) -> np.ndarray:
        sigma = np.array(sigma, dtype=float)
        for j, periodic in enumerate(self.periodic):
            if periodic:
                span = self.hi[j] - self.lo[j]
                sigma[j] = self.lo[j] + np.mod(sigma[j] - self.lo[j], span)
        return sigma

    def contains_param(self, sigma) -> bool:
        sigma = np.atleast_1d(sigma)
        return all(p or (lo <= s <= hi) for s, lo, hi, p in zip(sigma, self.lo, self.hi, self.periodic))


@dataclass(eq=False)
class BoundarySpec:
    """The boundary of M: its pieces, and `level(x, chart)` which is <= 0 exactly on M."""

    name: str
    pieces: List[BoundaryPiece]
    level: Callable
    t_max: float = 3.0

    def __str__(self):
        return f"BoundarySpec: {self.name} ({len(self.pieces)} pieces, t_max={self.t_max:g})"

    def validate(self, metric: MetricSpec, samples: int = 32):
        """Check the immersion, inward-pointing and unit-speed conditions at sample parameters."""
        problems = []
        for index, piece in enumerate(self.pieces):
            for sigma in piece.grid(samples):
                t = piece.tangents(sigma)
                if np.linalg.matrix_rank(t, tol=1e-8) < piece.param_dim:
                    problems.append(f"piece {piece.name}: embedding is not immersive at {sigma}")
                    continue
                x = piece.point(sigma)
                if not metric.charts[piece.chart].contains(x):
                    problems.append(f"piece {piece.name}: point {x} outside chart {piece.chart}")
                    continue
                try:
                    _, gamma = boundary_characteristic(metric, piece, sigma)
                except NumericalError as e:
                    problems.append(f"piece {piece.name} at {sigma}: {e}")
                    continue
                if float(piece.conormal(sigma) @ gamma) <= 0:
                    problems.append(f"piece {piece.name}: characteristic at {sigma} does not point inward")
        return problems


def boundary_characteristic(metric: MetricSpec, piece: BoundaryPiece, sigma) -> Tuple[np.ndarray, np.ndarray]:
    """(lambda, Gamma) at a boundary parameter; Gamma has unit norm."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    x = piece.point(sigma)
    if piece.characteristic is not None:
        gamma = np.asarray(piece.characteristic(sigma), dtype=float)
        gamma = gamma / float(metric.norm(x, gamma))
        base = ChartPoint(x, piece.chart)
        lam = dual_covector(metric, Tangent(base, gamma)).components
        return lam, gamma
    return characteristic_covector(metric, x, piece.tangents(sigma), piece.data_gradient(sigma), piece.conormal(sigma))


###################
# Rays            #
###################


@dataclass(eq=False)
class RaySegment:
    """A piece of a ray inside one chart; the state is (x, v, J, K) with K the time derivative of J."""

    chart: int
    t0: float
    t1: float
    dim: int
    columns: int
    spline: Optional[CubicHermiteSpline] = None
    linear: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None

    def state(self, t: float):
        n, k = self.dim, self.columns
        if self.linear is not None:
            x0, v0, J0, K0 = self.linear
            dt = t - self.t0
            return x0 + dt * v0, v0.copy(), J0 + dt * K0, K0.copy()
        y = self.spline(t)
        return y[:n], y[n : 2 * n], y[2 * n : 2 * n + n * k].reshape(n, k), y[2 * n + n * k :].reshape(n, k)

    def acceleration(self, t: float) -> np.ndarray:
        if self.linear is not None:
            return np.zeros(self.dim)
        return self.spline(t, 1)[self.dim : 2 * self.dim]


@dataclass(eq=False)
class Ray:
    key: Optional[RayKey]
    g: float
    segments: List[RaySegment]
    t_end: float
    exit: str
    dim: int
    metric: MetricSpec = field(repr=False, default=None)

    @property
    def t_max(self) -> float:
        return self.t_end

    def segment_at(self, t: float) -> RaySegment:
        if t < -1e-12 and self.segments[0].t0 >= 0:
            raise NumericalError(f"outside domain of F: t={t} < 0 on ray {self.key}")
        if t > self.t_end + 1e-12:
            raise NumericalError(f"outside domain of F: t={t} beyond ray end {self.t_end} ({self.exit})")
        for segment in self.segments:
            if t <= segment.t1 + 1e-12:
                return segment
        return self.segments[-1]

    def state(self, t: float, chart: Optional[int] = None):
        """(chart, x, v, J, K) at time t, optionally expressed in another chart."""
        segment = self.segment_at(t)
        x, v, J, K = segment.state(t)
        if chart is not None and chart != segment.chart:
            jac = self.metric.transition_jacobian(x, segment.chart)
            x, v, J, K = self.metric.to_chart(x, segment.chart, chart), jac @ v, jac @ J, jac @ K
            return chart, x, v, J, K
        return segment.chart, x, v, J, K

    def position(self, t: float, chart: Optional[int] = None) -> ChartPoint:
        c, x, _, _, _ = self.state(t, chart)
        return ChartPoint(x, c)

    def velocity(self, t: float, chart: Optional[int] = None) -> Tangent:
        c, x, v, _, _ = self.state(t, chart)
        return Tangent(ChartPoint(x, c), v)

    def frame(self, t: float, chart: Optional[int] = None) -> JacobiFrame:
        c, x, v, J, K = self.state(t, chart)
        return JacobiFrame(t=t, chart=c, J=J, Jdot=K, dF=np.column_stack([v, J]))

    def acceleration(self, t: float) -> np.ndarray:
        return self.segment_at(t).acceleration(t)

    def times(self, step: float) -> np.ndarray:
        count = max(2, int(np.ceil(self.t_end / step)) + 1)
        return np.linspace(0.0, self.t_end, count)

    def samples(self, step: float):
        """Positions, velocities and charts at uniform times."""
        ts = self.times(step)
        charts, xs, vs = [], [], []
        for t in ts:
            c, x, v, _, _ = self.state(t)
            charts.append(c)
            xs.append(x)
            vs.append(v)
        return ts, np.array(charts), np.array(xs), np.array(vs)


def _rhs_factory(metric: MetricSpec, columns: int, with_jacobi: bool):
    n = metric.dim

    def rhs(t, y):
        x = y[:n]
        v = y[n : 2 * n]
        a = metric.spray(x, v)
        if not with_jacobi:
            return np.concatenate([v, a, np.zeros(2 * n * columns)])
        J = y[2 * n : 2 * n + n * columns].reshape(n, columns)
        K = y[2 * n + n * columns :].reshape(n, columns)
        da_dx, da_dv = metric.spray_jacobian(x, v)
        return np.concatenate([v, a, K.ravel(), (da_dx @ J + da_dv @ K).ravel()])

    return rhs


def _handoff_state(metric: MetricSpec, chart: int, x, v, J, K):
    target = metric.charts[chart].handoff_to
    jac = metric.transition_jacobian(x, chart)
    step = 1e-6 * (1 + np.linalg.norm(x))
    ahead = metric.transition_jacobian(x + step * v, chart)
    behind = metric.transition_jacobian(x - step * v, chart)
    djac = (ahead - behind) / (2 * step)
    return target, metric.to_chart(x, chart, target), jac @ v, jac @ J, jac @ K + djac @ J


def _linear_exit(metric: MetricSpec, chart: int, x0, v0, t0: float, t_max: float, level: Optional[Callable]):
    """First time the straight ray leaves the chart box or M, scanning then refining with brentq."""
    box = metric.charts[chart]

    def outside(t):
        x = x0 + (t - t0) * v0
        margin = -box.box_margin(x)
        if level is not None:
            margin = max(margin, float(level(x, chart)))
        return margin

    step = min(0.01, max(t_max - t0, 1e-9))
    t_prev = t0
    t = t0 + step
    while t_prev < t_max:
        t = min(t, t_max)
        if outside(t) > 0:
            t_exit = brentq(outside, t_prev, t, xtol=1e-13) if outside(t_prev) <= 0 else t_prev
            x = x0 + (t_exit - t0) * v0
            reason = "chart_exit" if abs(box.box_margin(x)) <= 1e-9 else "boundary_exit"
            return t_exit, reason
        t_prev = t
        t += step
    return t_max, "t_max"


def integrate_geodesic(
    metric: MetricSpec,
    x0: ChartPoint,
    v0: Tangent,
    t_max: float,
    J0: Optional[np.ndarray] = None,
    K0: Optional[np.ndarray] = None,
    level: Optional[Callable] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float = MAX_STEP,
    key: Optional[RayKey] = None,
    g: float = 0.0,
) -> Ray:
    """Unit-speed geodesic from (x0, v0), with the variational system when J0 is given.

    The ray is truncated when it leaves the chart atlas, when it leaves M
    (if `level` is given) or at `t_max`.
    """
    phi = float(metric.norm(x0.coords, v0.components))
    if abs(phi - 1.0) > 1e-8:
        raise ConfigError(f"initial velocity must have unit norm, got {phi:.12g}")
    n = metric.dim
    with_jacobi = J0 is not None
    columns = n - 1
    J = np.zeros((n, columns)) if J0 is None else np.asarray(J0, dtype=float).reshape(n, columns)
    K = np.zeros((n, columns)) if K0 is None else np.asarray(K0, dtype=float).reshape(n, columns)
    x, v = x0.coords.copy(), v0.components.copy()
    chart = x0.chart
    t = 0.0
    segments: List[RaySegment] = []
    exit_reason = "t_max"
    rhs = _rhs_factory(metric, columns, with_jacobi)

    for _ in range(64):
        chart_spec = metric.charts[chart]
        if metric.homogeneous and chart_spec.handoff_radius is None:
            t_end, exit_reason = _linear_exit(metric, chart, x, v, t, t_max, level)
            segments.append(RaySegment(chart, t, t_end, n, columns, linear=(x, v, J, K)))
            break

        def box_event(_, y, _box=chart_spec):
            return _box.box_margin(y[:n])

        box_event.terminal = True
        box_event.direction = -1
        events = [box_event]
        if chart_spec.handoff_radius is not None:

            def handoff_event(_, y, _radius=chart_spec.handoff_radius):
                return np.linalg.norm(y[:n]) - _radius

            handoff_event.terminal = True
            handoff_event.direction = 1
            events.append(handoff_event)
        if level is not None:

            def level_event(_, y, _chart=chart):
                return float(level(y[:n], _chart))

            level_event.terminal = True
            level_event.direction = 1
            events.append(level_event)

        y0 = np.concatenate([x, v, J.ravel(), K.ravel()])
        sol = solve_ivp(rhs, (t, t_max), y0, method="RK45", rtol=rtol, atol=atol, max_step=max_step, events=events)
        if sol.status == -1:
            raise NumericalError(f"stiff geodesic: {sol.message} (ray {key}, t={t:.6g})")
        ts = sol.t
        ys = sol.y.T
        if ts.shape[0] < 2:
            ts = np.array([t, t + 1e-12])
            ys = np.vstack([y0, y0])
        derivatives = np.array([rhs(tt, yy) for tt, yy in zip(ts, ys)])
        spline = CubicHermiteSpline(ts, ys, derivatives, axis=0)
        segments.append(RaySegment(chart, float(ts[0]), float(ts[-1]), n, columns, spline=spline))
        t = float(ts[-1])
        if sol.status == 0:
            exit_reason = "t_max"
            break
        fired = [i for i, te in enumerate(sol.t_events) if len(te)]
        kind = events[fired[0]].__name__ if fired else "box_event"
        if kind == "handoff_event":
            last = ys[-1]
            x, v, J, K = last[:n], last[n : 2 * n], last[2 * n : 2 * n + n * columns], last[2 * n + n * columns :]
            chart, x, v, J, K = _handoff_state(metric, chart, x, v, J.reshape(n, columns), K.reshape(n, columns))
            logging.debug(f"ray {key} handed off to chart {chart} at t={t:.6g}")
            continue
        exit_reason = "boundary_exit" if kind == "level_event" else "chart_exit"
        break
    else:
        raise NumericalError(f"stiff geodesic: too many chart handoffs on ray {key}")

    return Ray(key=key, g=g, segments=segments, t_end=segments[-1].t1, exit=exit_reason, dim=n, metric=metric)


###################
# Exponential map #
###################


class GeodesicMap:
    """The map F(piece, sigma, t) built from a boundary, with cached rays.

    Rays are integrated together with their Jacobi fields: J(0) = c'(sigma),
    J'(0) is the sigma-derivative of the characteristic field.
    """

    def __init__(
        self,
        metric: MetricSpec,
        boundary: BoundarySpec,
        t_max: Optional[float] = None,
        rtol: float = RTOL,
        atol: float = ATOL,
        max_step: float = MAX_STEP,
        stop_at_boundary: bool = True,
    ):
        if any(piece.param_dim != metric.dim - 1 for piece in boundary.pieces):
            raise ConfigError(f"boundary {boundary.name} does not match the dimension of {metric.name}")
        self.metric = metric
        self.boundary = boundary
        self.t_max = boundary.t_max if t_max is None else t_max
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.stop_at_boundary = stop_at_boundary
        self._rays: "OrderedDict[RayKey, Ray]" = OrderedDict()
        self._characteristics: Dict[RayKey, Tuple[np.ndarray, np.ndarray]] = {}

    def __str__(self):
        return f"GeodesicMap: {self.metric.name} from {self.boundary.name}"

    @property
    def dim(self) -> int:
        return self.metric.dim

    def piece(self, index: int) -> BoundaryPiece:
        return self.boundary.pieces[index]

    def characteristic(self, piece: int, sigma) -> Tuple[np.ndarray, np.ndarray]:
        sigma = self.piece(piece).wrap(np.atleast_1d(sigma))
        key = ray_key(piece, sigma)
        if key not in self._characteristics:
            self._characteristics[key] = boundary_characteristic(self.metric, self.piece(piece), sigma)
        return self._characteristics[key]

    def characteristic_derivative(self, piece: int, sigma) -> np.ndarray:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        columns = []
        for j in range(sigma.shape[0]):
            e = np.zeros_like(sigma)
            e[j] = PARAM_STEP
            plus = boundary_characteristic(self.metric, self.piece(piece), sigma + e)[1]
            minus = boundary_characteristic(self.metric, self.piece(piece), sigma - e)[1]
            columns.append((plus - minus) / (2 * PARAM_STEP))
        return np.stack(columns, axis=1)

    def ray(self, piece: int, sigma) -> Ray:
        boundary_piece = self.piece(piece)
        sigma = boundary_piece.wrap(np.atleast_1d(np.asarray(sigma, dtype=float)))
        key = ray_key(piece, sigma)
        cached = self._rays.get(key)
        if cached is not None:
            self._rays.move_to_end(key)
            return cached
        _, gamma = self.characteristic(piece, sigma)
        x0 = ChartPoint(boundary_piece.point(sigma), boundary_piece.chart)
        ray = integrate_geodesic(
            self.metric,
            x0,
            Tangent(x0, gamma),
            self.t_max,
            J0=boundary_piece.tangents(sigma),
            K0=self.characteristic_derivative(piece, sigma),
            level=self.boundary.level if self.stop_at_boundary else None,
            rtol=self.rtol,
            atol=self.atol,
            max_step=self.max_step,
            key=key,
            g=boundary_piece.g(sigma),
        )
        self._rays[key] = ray
        if len(self._rays) > RAY_CACHE_SIZE:
            self._rays.popitem(last=False)
        return ray

    def family(self, count: int) -> List[Ray]:
        """Rays on a deterministic parameter grid, `count` per piece."""
        rays = []
        for index, piece in enumerate(self.boundary.pieces):
            for sigma in piece.grid(count):
                rays.append(self.ray(index, sigma))
        logging.info(f"integrated {len(rays)} rays for {self.boundary.name}")
        return rays

    def evaluate(self, piece: int, sigma, t: float, chart: Optional[int] = None) -> Tuple[ChartPoint, Tangent]:
        ray = self.ray(piece, sigma)
        c, x, v, _, _ = ray.state(t, chart)
        point = ChartPoint(x, c)
        return point, Tangent(point, v)

    def frame(self, piece: int, sigma, t: float, chart: Optional[int] = None) -> JacobiFrame:
        return self.ray(piece, sigma).frame(t, chart)

    def view(self, piece: int) -> "PieceMap":
        return PieceMap(self, piece)


@dataclass(eq=False)
class PieceMap:
    """F restricted to one boundary piece, in domain coordinates z = (t, sigma...)."""

    gmap: GeodesicMap
    piece: int
    chart: Optional[int] = None

    @property
    def dim(self) -> int:
        return self.gmap.dim

    def F(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.gmap.ray(self.piece, z[1:]).state(float(z[0]), self.chart)[1]

    def dF(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _, _, v, J, _ = self.gmap.ray(self.piece, z[1:]).state(float(z[0]), self.chart)
        return np.column_stack([v, J])

    def d2F_r(self, z, vector) -> np.ndarray:
        """Derivative along the flow of dF(vector): [a | K] vector."""
        z = np.asarray(z, dtype=float)
        ray = self.gmap.ray(self.piece, z[1:])
        c, x, v, J, K = ray.state(float(z[0]), self.chart)
        a = ray.acceleration(float(z[0]))
        native = ray.segment_at(float(z[0])).chart
        if c != native:
            a = self.gmap.metric.push_vector(ray.state(float(z[0]))[1], a, native, c)
        return np.column_stack([a, K]) @ np.asarray(vector, dtype=float)

    def at(self, chart: Optional[int]) -> "PieceMap":
        return PieceMap(self.gmap, self.piece, chart)


@lru_cache(maxsize=32)
def geodesic_map(metric: MetricSpec, boundary: BoundarySpec) -> GeodesicMap:
    return GeodesicMap(metric, boundary)


def _split_key(boundary: BoundarySpec, s) -> Tuple[int, np.ndarray]:
    if isinstance(s, tuple) and len(s) == 2 and isinstance(s[0], (int, np.integer)):
        return int(s[0]), np.atleast_1d(np.asarray(s[1], dtype=float))
    return 0, np.atleast_1d(np.asarray(s, dtype=float))


def exponential_map(metric: MetricSpec, boundary: BoundarySpec, s, t: float) -> Tuple[ChartPoint, Tangent]:
    """F(s, t) and the arrival velocity; `s` is a boundary parameter or a (piece, parameter) pair."""
    piece, sigma = _split_key(boundary, s)
    if t < 0:
        raise NumericalError(f"outside domain of F: t={t} < 0")
    return geodesic_map(metric, boundary).evaluate(piece, sigma, t)


def jacobi_frame(metric: MetricSpec, boundary: BoundarySpec, s, t: float) -> JacobiFrame:
    piece, sigma = _split_key(boundary, s)
    return geodesic_map(metric, boundary).frame(piece, sigma, t)


def image_complement(dF: np.ndarray, tol: float = KERNEL_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the Euclidean complement of image(dF)."""
    u, sv, _ = np.linalg.svd(dF)
    rank = int(np.sum(sv > tol * max(sv[0], 1e-300)))
    return u[:, rank:]


def second_order_class(
    metric: MetricSpec, boundary: BoundarySpec, s, t: float, v, tol: float = KERNEL_TOL
) -> np.ndarray:
    """Class of d^2F(r # v) in the quotient by image(dF), as a vector in the complement.

    `v` is a kernel vector of dF in domain coordinates (t, sigma...).
    """
    piece, sigma = _split_key(boundary, s)
    view = geodesic_map(metric, boundary).view(piece)
    z = np.concatenate([[t], sigma])
    dF = view.dF(z)
    v = np.asarray(v, dtype=float)
    residual = float(np.linalg.norm(dF @ v))
    scale = float(np.linalg.norm(dF, 2) * np.linalg.norm(v))
    if residual > tol * max(scale, 1e-300):
        raise NumericalError(f"not a kernel vector: |dF v| = {residual:.3g}")
    complement = image_complement(dF, tol)
    return complement @ (complement.T @ view.d2F_r(z, v))


def lie_derivative_check(metric: MetricSpec, field_fn: Callable, points: Iterable, step: float = 1e-5) -> float:
    """Max over the points and the coordinate frame of |(L_X omega)(e_i)|, omega the dual of X/phi(X).

    Near zero certifies that the integral curves of X are geodesics.
    """

    def unit_field(x):
        X = np.asarray(field_fn(x), dtype=float)
        return X / float(metric.norm(x, X))

    def omega(x):
        X = unit_field(x)
        return float(metric.norm(x, X)) * np.asarray(metric.norm_grad(x, X), dtype=float)

    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        X = unit_field(x)
        w = omega(x)
        d_omega = np.zeros((n, n))
        d_X = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            d_omega[:, j] = (omega(x + e) - omega(x - e)) / (2 * step)
            d_X[:, j] = (unit_field(x + e) - unit_field(x - e)) / (2 * step)
        lie = d_omega @ X + d_X.T @ w
        worst = max(worst, float(np.max(np.abs(lie))))
    return worst


def unit_speed_error(ray: Ray, step: float = 0.01) -> float:
    ts, charts, xs, vs = ray.samples(step)
    phis = np.array([float(ray.metric.norm(x, v)) for x, v in zip(xs, vs)])
    return float(np.max(np.abs(phis - 1.0)))


def injectivity_violations(rays: List[Ray], step: float, tol: float = 1e-6) -> List[Tuple[str, float, str, float]]:
    """Pairs of distinct samples with the same image and the same arrival velocity."""
    labels, points = [], []
    for ray in rays:
        ts, charts, xs, vs = ray.samples(step)
        for t, c, x, v in zip(ts, charts, xs, vs):
            labels.append((ray.key, float(t)))
            points.append(np.concatenate([[1e6 * c], x, v]))
    if not points:
        return []
    tree = cKDTree(np.array(points))
    violations = []
    for i, j in sorted(tree.query_pairs(tol)):
        (key_i, t_i), (key_j, t_j) = labels[i], labels[j]
        if key_i == key_j and abs(t_i - t_j) < 1e-12:
            continue
        violations.append((key_to_str(key_i), t_i, key_to_str(key_j), t_j))
    return violations


def ray_rows(rays: List[Ray], step: float):
    """Rows for ray CSV export: piece, s..., t, chart, x..., v..."""
    for ray in rays:
        ts, charts, xs, vs = ray.samples(step)
        for t, c, x, v in zip(ts, charts, xs, vs):
            yield [ray.key[0], *ray.key[1], float(t), int(c), *(float(a) for a in x), *(float(a) for a in v)]
