"""Built-in scenarios with analytic truths, and a brute-force Lax-Oleinik oracle independent of the cut module."""

import logging
import math

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from cutlocus.geometry.flow import BoundaryPiece, BoundarySpec, integrate_geodesic
from cutlocus.geometry.metric import MetricSpec, euclidean, randers, sphere_chart
from cutlocus.geometry.schema import ChartPoint, ConfigError, MetricKind, Tangent, to_jsonable
from cutlocus.utils import compile_expression


BRUTE_FORCE_SAMPLES = 256
DENSE_SAMPLES = 4096
SHOOTING_STARTS = 32


@dataclass(eq=False)
class Scenario:
    name: str
    metric: MetricSpec
    boundary: BoundarySpec
    params: Dict[str, Any] = field(default_factory=dict)
    truths: Dict[str, Any] = field(default_factory=dict)
    probes: List[ChartPoint] = field(default_factory=list)
    exact_u: Optional[Callable[[ChartPoint], float]] = None
    checks: List[Callable[[], Optional[str]]] = field(default_factory=list)
    description: str = ""

    def __post_init__(self):
        problems = self.self_check()
        if problems:
            raise ConfigError(f"scenario {self.name} is inconsistent: {'; '.join(problems)}")

    def __str__(self):
        params = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name} (n={self.metric.dim}{', ' + params if params else ''})"

    @property
    def dim(self) -> int:
        return self.metric.dim

    def self_check(self) -> List[str]:
        """Compare the stored truths with their own closed forms."""
        problems = []
        if self.exact_u is not None:
            for coords, value in self.truths.get("u", []):
                p = ChartPoint(coords[:-1], int(coords[-1])) if len(coords) > self.metric.dim else ChartPoint(coords)
                exact = self.exact_u(p)
                if abs(exact - value) > 1e-6:
                    problems.append(f"u{p} = {exact:.9g} but truth says {value:.9g}")
        for check in self.checks:
            problem = check()
            if problem:
                problems.append(problem)
        return problems

    def truths_dict(self) -> dict:
        return to_jsonable(
            {
                "name": self.name,
                "dim": self.metric.dim,
                "params": self.params,
                "description": self.description,
                "truths": self.truths,
            }
        )


###################
# Boundaries      #
###################


def _circle_piece(name: str, radius: float, side: int = 1, data: Optional[Callable] = None, center=(0.0, 0.0)):
    center = np.asarray(center, dtype=float)
    kwargs = {"data": data} if data is not None else {}
    return BoundaryPiece(
        name=name,
        embedding=lambda s: center + radius * np.array([math.cos(s[0]), math.sin(s[0])]),
        lo=[-math.pi],
        hi=[math.pi],
        periodic=(True,),
        side=side,
        **kwargs,
    )


def _radius(x) -> np.ndarray:
    return np.linalg.norm(np.asarray(x, dtype=float), axis=-1)


def _dense_boundary_min(m: MetricSpec, b: BoundarySpec, p: ChartPoint, samples: int = DENSE_SAMPLES) -> float:
    """min over boundary parameters of phi(p - c(s)) + g(s) for translation invariant metrics with straight rays."""
    best = math.inf
    for piece in b.pieces:
        if piece.param_dim != 1:
            raise ConfigError("dense boundary minimization is implemented for curves")
        span = piece.hi[0] - piece.lo[0]
        grid = np.linspace(piece.lo[0], piece.hi[0], samples, endpoint=not piece.periodic[0])

        def cost(s, _piece=piece):
            q = _piece.point([s])
            return float(m.norm(p.coords, p.coords - q)) + _piece.g([s])

        values = np.array([cost(s) for s in grid])
        i = int(np.argmin(values))
        step = span / samples
        lo, hi = grid[i] - step, grid[i] + step
        if not piece.periodic[0]:
            lo, hi = max(lo, piece.lo[0]), min(hi, piece.hi[0])
        result = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        best = min(best, float(values[i]), float(result.fun))
    return best


###################
# Scenarios       #
###################


def euclidean_disk(radius: float = 1.0) -> Scenario:
    if radius <= 0:
        raise ConfigError(f"disk radius must be positive, got {radius}")
    box = 1.1 * radius
    m = euclidean(2, lo=[-box, -box], hi=[box, box])
    b = BoundarySpec(
        name="disk",
        pieces=[_circle_piece("circle", radius)],
        level=lambda x, chart: _radius(x) - radius,
        t_max=2.5 * radius,
    )

    def exact_u(p: ChartPoint) -> float:
        return radius - float(np.linalg.norm(p.coords))

    return Scenario(
        name="euclidean_disk",
        metric=m,
        boundary=b,
        params={"radius": radius},
        truths={
            "u": [[[0.0, 0.0], radius], [[0.5 * radius, 0.0], 0.5 * radius]],
            "cut": {"kind": "point", "points": [[0.0, 0.0]]},
            "t_cut": radius,
            "focal_time": radius,
            "classification": [[[0.0, 0.0], "remainder"]],
        },
        probes=[ChartPoint([0.0, 0.0]), ChartPoint([0.5 * radius, 0.0]), ChartPoint([0.3 * radius, -0.4 * radius])],
        exact_u=exact_u,
        description="Euclidean unit disk: every ray focuses at the centre.",
    )


def euclidean_annulus(r_in: float = 1.0, r_out: float = 2.0) -> Scenario:
    if not 0 < r_in < r_out:
        raise ConfigError(f"annulus radii must satisfy 0 < r_in < r_out, got {r_in}, {r_out}")
    box = 1.05 * r_out
    m = euclidean(2, lo=[-box, -box], hi=[box, box])
    b = BoundarySpec(
        name="annulus",
        pieces=[_circle_piece("inner", r_in, side=-1), _circle_piece("outer", r_out, side=1)],
        level=lambda x, chart: np.maximum(r_in - _radius(x), _radius(x) - r_out),
        t_max=r_out - r_in + 0.5,
    )
    middle = 0.5 * (r_in + r_out)

    def exact_u(p: ChartPoint) -> float:
        r = float(np.linalg.norm(p.coords))
        return min(r - r_in, r_out - r)

    return Scenario(
        name="euclidean_annulus",
        metric=m,
        boundary=b,
        params={"r_in": r_in, "r_out": r_out},
        truths={
            "u": [[[0.5 * (r_in + middle), 0.0], 0.5 * (middle - r_in)], [[0.0, middle], middle - r_in]],
            "cut": {"kind": "circle", "center": [0.0, 0.0], "radius": middle},
            "t_cut": middle - r_in,
            "classification": [[[middle, 0.0], "cleave"]],
            "all_cleave": True,
        },
        probes=[ChartPoint([0.5 * (r_in + middle), 0.0]), ChartPoint([0.0, middle]), ChartPoint([-1.2, 0.0])],
        exact_u=exact_u,
        description="Euclidean annulus: the cut locus is the middle circle.",
    )


def euclidean_ellipse(a: float = 2.0, b: float = 1.0) -> Scenario:
    if not a > b > 0:
        raise ConfigError(f"ellipse semiaxes must satisfy a > b > 0, got a={a}, b={b}")
    m = euclidean(2, lo=[-1.05 * a, -1.05 * b - 0.05], hi=[1.05 * a, 1.05 * b + 0.05])
    piece = BoundaryPiece(
        name="ellipse",
        embedding=lambda s: np.array([a * math.cos(s[0]), b * math.sin(s[0])]),
        lo=[-math.pi],
        hi=[math.pi],
    )
    boundary = BoundarySpec(
        name="ellipse",
        pieces=[piece],
        level=lambda x, chart: (np.asarray(x)[..., 0] / a) ** 2 + (np.asarray(x)[..., 1] / b) ** 2 - 1.0,
        t_max=2 * a + 0.5,
    )
    end = (a * a - b * b) / a

    def focal_time(theta: float) -> float:
        return (a * a * math.sin(theta) ** 2 + b * b * math.cos(theta) ** 2) ** 1.5 / (a * b)

    def evolute_inside(theta: float) -> bool:
        c = a * a - b * b
        x, y = c / a * math.cos(theta) ** 3, -c / b * math.sin(theta) ** 3
        return (x / a) ** 2 + (y / b) ** 2 < 1.0

    def exact_u(p: ChartPoint) -> float:
        return _dense_boundary_min(m, boundary, p)

    def vertex_focus() -> Optional[str]:
        x = a - focal_time(0.0)
        if abs(x - end) > 1e-12:
            return f"focal point of the vertex ray at {x} is not the cut endpoint {end}"
        return None

    # rays whose focal point is inside M
    angles = [theta for theta in (0.0, 0.3, 0.6) if evolute_inside(theta)]

    return Scenario(
        name="euclidean_ellipse",
        metric=m,
        boundary=boundary,
        params={"a": a, "b": b},
        truths={
            "cut": {"kind": "segment", "points": [[-end, 0.0], [end, 0.0]]},
            "cut_endpoints": [[-end, 0.0], [end, 0.0]],
            "focal_times": [[theta, focal_time(theta)] for theta in angles],
            "a2_control": angles[-1] if len(angles) > 1 else None,
            "classification": [[[end, 0.0], "edge"], [[-end, 0.0], "edge"], [[0.0, 0.0], "cleave"]],
            "u": [[[0.0, 0.0], b], [[1.0, 0.0], exact_u(ChartPoint([1.0, 0.0]))]],
        },
        probes=[ChartPoint([1.0, 0.0]), ChartPoint([0.0, 0.5 * b]), ChartPoint([-0.8, 0.2])],
        exact_u=exact_u,
        checks=[vertex_focus],
        description="Euclidean ellipse: the cut locus is the segment between the centres of curvature of the vertices.",
    )


def round_sphere_point_source(R: float = 1.0, eps: float = 1e-3) -> Scenario:
    """The cut locus of the north pole, seen as the cut locus of a tiny geodesic circle around it."""
    if R <= 0 or not 0 < eps < 0.1 * R:
        raise ConfigError(f"need R > 0 and 0 < eps < R/10, got R={R}, eps={eps}")
    m = sphere_chart(R)
    rho = math.tan(eps / (2 * R))

    def level(x, chart):
        x = np.asarray(x, dtype=float)
        if chart == 0:
            return rho - _radius(x)
        return -np.ones(x.shape[:-1])

    b = BoundarySpec(
        name="geodesic_circle",
        pieces=[_circle_piece("circle", rho, side=-1)],
        level=level,
        t_max=math.pi * R - eps + 0.2,
    )

    def exact_u(p: ChartPoint) -> float:
        d = 2 * R * math.atan(float(np.linalg.norm(p.coords)))
        if p.chart == 1:
            d = math.pi * R - d
        return d - eps

    def antipode_time() -> Optional[str]:
        t = exact_u(ChartPoint([0.0, 0.0], 1))
        if abs(t - (math.pi * R - eps)) > 1e-12:
            return f"u at the antipode is {t}, expected {math.pi * R - eps}"
        return None

    return Scenario(
        name="round_sphere_point_source",
        metric=m,
        boundary=b,
        params={"R": R, "eps": eps},
        truths={
            "t_cut": math.pi * R - eps,
            "focal_time": math.pi * R - eps,
            "cut": {"kind": "point", "points": [[0.0, 0.0, 1]]},
            "classification": [[[0.0, 0.0, 1], "remainder"]],
            "antipode_min_minimizers": 8,
            "u": [
                [[0.5, 0.0, 0], 2 * R * math.atan(0.5) - eps],
                [[0.3, 0.0, 1], math.pi * R - 2 * R * math.atan(0.3) - eps],
            ],
        },
        probes=[ChartPoint([0.5, 0.0], 0), ChartPoint([0.3, 0.0], 1), ChartPoint([0.0, 0.9], 0)],
        exact_u=exact_u,
        checks=[antipode_time],
        description="Round sphere: all rays from a small circle around the north pole meet at the south pole.",
    )


def revolution_solid_3d(kappa: float = 1.0) -> Scenario:
    """Solid above the paraboloid z = kappa (x^2 + y^2) / 2; the axis ray is focal of order 2 at t = 1/kappa."""
    if kappa <= 0:
        raise ConfigError(f"paraboloid curvature must be positive, got {kappa}")
    top = 1.0 / kappa + kappa + 0.1
    m = euclidean(3, lo=[-1.1, -1.1, -0.05], hi=[1.1, 1.1, top])
    piece = BoundaryPiece(
        name="paraboloid",
        embedding=lambda s: np.array([s[0], s[1], 0.5 * kappa * (s[0] ** 2 + s[1] ** 2)]),
        lo=[-1.0, -1.0],
        hi=[1.0, 1.0],
        periodic=(False, False),
        side=1,
    )

    def level(x, chart):
        x = np.asarray(x, dtype=float)
        return 0.5 * kappa * (x[..., 0] ** 2 + x[..., 1] ** 2) - x[..., 2]

    b = BoundarySpec(name="paraboloid", pieces=[piece], level=level, t_max=top + 0.5)

    def axis_hit(r: float):
        """Time and height where the ray from radius r meets the axis."""
        t = math.sqrt(1 + (kappa * r) ** 2) / kappa
        return t, 0.5 * kappa * r * r + 1.0 / kappa

    def axis_consistency() -> Optional[str]:
        t, z = axis_hit(0.0)
        if abs(t - 1.0 / kappa) > 1e-12 or abs(z - 1.0 / kappa) > 1e-12:
            return "axis ray does not focus at the centre of curvature"
        return None

    return Scenario(
        name="revolution_solid_3d",
        metric=m,
        boundary=b,
        params={"kappa": kappa},
        truths={
            "axis_focal": {"t": 1.0 / kappa, "order": 2, "point": [0.0, 0.0, 1.0 / kappa]},
            "axis_hits": [[r, *axis_hit(r)] for r in (0.25, 0.5, 1.0)],
            "cut": {"kind": "segment", "points": [[0.0, 0.0, 1.0 / kappa], [0.0, 0.0, 1.0 / kappa + kappa]]},
            "classification": [[[0.0, 0.0, 1.0 / kappa], "remainder"]],
        },
        probes=[ChartPoint([0.0, 0.0, 0.5]), ChartPoint([0.3, 0.0, 0.6]), ChartPoint([0.0, 0.2, 1.0])],
        checks=[axis_consistency],
        description="Solid of revolution over a paraboloid cap: the axis carries an order-2 focal point.",
    )


def randers_disk(b1: float = 0.3, b2: float = 0.0, radius: float = 1.0) -> Scenario:
    drift = np.array([b1, b2])
    if float(np.linalg.norm(drift)) >= 1:
        raise ConfigError(f"randers drift must have norm below 1, got {np.linalg.norm(drift):.3g}")
    box = 1.1 * radius
    m = randers(drift, lo=[-box, -box], hi=[box, box])
    boundary = BoundarySpec(
        name="disk",
        pieces=[_circle_piece("circle", radius)],
        level=lambda x, chart: _radius(x) - radius,
        t_max=2.5 * radius * (1 + float(np.linalg.norm(drift))),
    )

    def exact_u(p: ChartPoint) -> float:
        return _dense_boundary_min(m, boundary, p)

    return Scenario(
        name="randers_disk",
        metric=m,
        boundary=boundary,
        params={"b1": b1, "b2": b2, "radius": radius},
        truths={"u": [[[0.0, 0.0], exact_u(ChartPoint([0.0, 0.0]))], [[0.4, 0.1], exact_u(ChartPoint([0.4, 0.1]))]]},
        probes=[ChartPoint([0.0, 0.0]), ChartPoint([0.4, 0.1]), ChartPoint([-0.5, -0.3])],
        exact_u=exact_u,
        description="Disk under a Randers norm with constant drift.",
    )


def disk_with_g(amplitude: float = 0.2, offset: float = 0.5, radius: float = 1.0) -> Scenario:
    """Unit disk with boundary data g = amplitude sin(s) + offset, on a chart large enough to extend past it."""
    if radius <= 0:
        raise ConfigError(f"disk radius must be positive, got {radius}")
    box = radius + max(offset + abs(amplitude), 0.0) + 0.3
    m = euclidean(2, lo=[-box, -box], hi=[box, box])
    boundary = BoundarySpec(
        name="disk",
        pieces=[_circle_piece("circle", radius, data=lambda s: amplitude * math.sin(s[0]) + offset)],
        level=lambda x, chart: _radius(x) - radius,
        t_max=2.5 * radius,
    )

    def exact_u(p: ChartPoint) -> float:
        return _dense_boundary_min(m, boundary, p)

    def centre_value() -> Optional[str]:
        u = exact_u(ChartPoint([0.0, 0.0]))
        if abs(u - (radius + offset - abs(amplitude))) > 1e-6:
            return f"u at the centre is {u}, expected {radius + offset - abs(amplitude)}"
        return None

    truths = {
        "u": [[[0.0, 0.0], radius + offset - abs(amplitude)]],
        "argmin_center": [-math.pi / 2 if amplitude > 0 else math.pi / 2],
        "k_hat_max": 0.35 if abs(amplitude) <= 0.2 else None,
    }
    if amplitude == 0:
        truths["lambda"] = {"kind": "circle", "center": [0.0, 0.0], "radius": radius + offset}
    return Scenario(
        name="disk_with_g",
        metric=m,
        boundary=boundary,
        params={"amplitude": amplitude, "offset": offset, "radius": radius},
        truths=truths,
        probes=[ChartPoint([0.0, 0.0]), ChartPoint([0.3, 0.2]), ChartPoint([-0.4, 0.5])],
        exact_u=exact_u,
        checks=[centre_value],
        description="Disk with nonzero boundary data.",
    )


SCENARIOS: Dict[str, Callable[..., Scenario]] = {
    "euclidean_disk": euclidean_disk,
    "euclidean_annulus": euclidean_annulus,
    "euclidean_ellipse": euclidean_ellipse,
    "round_sphere_point_source": round_sphere_point_source,
    "revolution_solid_3d": revolution_solid_3d,
    "randers_disk": randers_disk,
    "disk_with_g": disk_with_g,
}


def get_scenario(name: str, **params) -> Scenario:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name}; choose from {', '.join(SCENARIOS)}")
    try:
        return SCENARIOS[name](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for {name}: {e}")


def builtin_scenarios() -> List[Scenario]:
    return [factory() for factory in SCENARIOS.values()]


###################
# Inline          #
###################


def _domain(section: Dict[str, str], data: Optional[Callable]):
    shape = section.get("domain", "disk")
    if shape == "disk":
        r = float(section.get("radius", 1.0))
        return [_circle_piece("circle", r, data=data)], (lambda x, chart: _radius(x) - r), r
    if shape == "ellipse":
        a, b = float(section.get("a", 2.0)), float(section.get("b", 1.0))
        if not a > b > 0:
            raise ConfigError(f"ellipse semiaxes must satisfy a > b > 0, got a={a}, b={b}")
        piece_kwargs = {"data": data} if data is not None else {}
        piece = BoundaryPiece(
            name="ellipse",
            embedding=lambda s: np.array([a * math.cos(s[0]), b * math.sin(s[0])]),
            lo=[-math.pi],
            hi=[math.pi],
            **piece_kwargs,
        )
        return [piece], (lambda x, chart: (np.asarray(x)[..., 0] / a) ** 2 + (np.asarray(x)[..., 1] / b) ** 2 - 1), a
    if shape == "annulus":
        r_in, r_out = float(section.get("r_in", 1.0)), float(section.get("r_out", 2.0))
        if not 0 < r_in < r_out:
            raise ConfigError(f"annulus radii must satisfy 0 < r_in < r_out, got {r_in}, {r_out}")
        pieces = [_circle_piece("inner", r_in, side=-1, data=data), _circle_piece("outer", r_out, data=data)]
        return pieces, (lambda x, chart: np.maximum(r_in - _radius(x), _radius(x) - r_out)), r_out
    raise ConfigError(f"unknown domain {shape}; choose disk, ellipse or annulus")


def scenario_from_config(section: Dict[str, str]) -> Scenario:
    """A two-dimensional scenario from a run file's [scenario] section.

    Either `g11`, `g12`, `g22` (riemannian, in x and y) or `norm` (finsler, in x, y, v1, v2)
    define the metric; `g` (in s) gives the boundary data.
    """
    section = {k: str(v) for k, v in section.items()}
    data = None
    if section.get("g"):
        g_expr = compile_expression(section["g"], ["s"])

        def data(s):
            return float(g_expr(float(s[0])))

    pieces, level, size = _domain(section, data)
    box = float(section.get("box", size + 0.3 + (1.0 if data is not None else 0.0)))
    lo, hi = [-box, -box], [box, box]
    if "norm" in section:
        norm_expr = compile_expression(section["norm"], ["x", "y", "v1", "v2"])

        def norm_fn(x, v):
            x = np.asarray(x, dtype=float)
            v = np.asarray(v, dtype=float)
            value = np.asarray(norm_expr(x[..., 0], x[..., 1], v[..., 0], v[..., 1]), dtype=float)
            return value * np.ones(v.shape[:-1])

        metric = MetricSpec(
            name=section.get("name", "inline"),
            kind=MetricKind.finsler,
            dim=2,
            charts=euclidean(2, lo=lo, hi=hi).charts,
            norm_fn=norm_fn,
        )
    elif all(k in section for k in ("g11", "g12", "g22")):
        entries = {k: compile_expression(section[k], ["x", "y"]) for k in ("g11", "g12", "g22")}

        def tensor(x):
            x = np.asarray(x, dtype=float)
            shape = x.shape[:-1]
            g11, g12, g22 = (np.broadcast_to(entries[k](x[..., 0], x[..., 1]), shape) for k in ("g11", "g12", "g22"))
            return np.stack([np.stack([g11, g12], axis=-1), np.stack([g12, g22], axis=-1)], axis=-2)

        metric = MetricSpec(
            name=section.get("name", "inline"),
            kind=MetricKind.riemannian,
            dim=2,
            charts=euclidean(2, lo=lo, hi=hi).charts,
            tensor=tensor,
        )
    else:
        raise ConfigError("inline scenario needs either `norm` or all of `g11`, `g12`, `g22`")
    boundary = BoundarySpec(
        name=section.get("domain", "disk"),
        pieces=pieces,
        level=level,
        t_max=float(section.get("t_max", 4 * size)),
    )
    probe = ChartPoint([0.0, 0.0])
    if section.get("domain") == "annulus":
        probe = ChartPoint([0.0, 0.5 * (float(section.get("r_in", 1.0)) + size)])
    return Scenario(
        name=section.get("name", "inline"),
        metric=metric,
        boundary=boundary,
        params={k: v for k, v in section.items() if k != "name"},
        probes=[probe],
        description="user-defined scenario",
    )


###################
# Brute force     #
###################


def _directions(dim: int, count: int) -> np.ndarray:
    if dim == 2:
        angles = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # golden spiral on the sphere
    i = np.arange(count) + 0.5
    polar = np.arccos(1 - 2 * i / count)
    azimuth = math.pi * (1 + math.sqrt(5)) * i
    return np.stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1)


def _reverse_hit(scenario: Scenario, reversed_metric: MetricSpec, p: ChartPoint, direction: np.ndarray) -> float:
    """t + g at the first boundary point reached by the reversed geodesic from p, inf when none is reached."""
    m, b = scenario.metric, scenario.boundary
    v = direction / float(reversed_metric.norm(p.coords, direction))
    ray = integrate_geodesic(reversed_metric, p, Tangent(p, v), b.t_max + 1.0, level=b.level, rtol=1e-10, atol=1e-10)
    if ray.exit != "boundary_exit":
        return math.inf
    c, x, _, _, _ = ray.state(ray.t_end)
    best = math.inf
    for piece in b.pieces:
        if piece.chart != c:
            continue
        # data at the boundary sample closest to the hit
        grid = piece.grid(512)
        points = np.array([piece.point(s) for s in grid])
        i = int(np.argmin(np.linalg.norm(points - x, axis=1)))
        if np.linalg.norm(points[i] - x) < 0.05:
            best = min(best, ray.t_end + piece.g(grid[i]))
    return best


def brute_force_u(scenario: Scenario, p: ChartPoint, N: int = BRUTE_FORCE_SAMPLES, fallback_h: float = 0.05) -> float:
    """u(p) by direct minimization over N boundary samples or N reverse shooting directions.

    Straight-ray metrics use phi(p - q) + g(q) directly; curved metrics shoot
    reversed geodesics from p and minimize arrival time plus data, refined by
    golden-section search. Neither path uses the cut module's oracle except as
    a last resort when no reversed geodesic reaches the boundary.
    """
    if N < 256:
        raise ConfigError(f"brute force needs at least 256 boundary samples, got {N}")
    m, b = scenario.metric, scenario.boundary
    single_chart = len(m.charts) == 1 and m.charts[0].handoff_radius is None
    if m.homogeneous and single_chart and m.dim == 2:
        return _dense_boundary_min(m, b, p, samples=N)
    if m.homogeneous and single_chart:
        return _refine_3d(m, b, p, math.inf, N)

    reversed_metric = m.reversed()
    directions = _directions(m.dim, max(N, SHOOTING_STARTS))
    values = np.array([_reverse_hit(scenario, reversed_metric, p, d) for d in directions])
    if not np.any(np.isfinite(values)):
        logging.warning(f"brute force shooting from {p} never reached the boundary; using graph distance")
        from cutlocus.cut import build_distance_oracle

        return float(build_distance_oracle(m, b, fallback_h).value(p.coords, p.chart)[0])
    i = int(np.argmin(values))
    if m.dim == 2:
        angle = math.atan2(directions[i][1], directions[i][0])
        step = 2 * math.pi / directions.shape[0]

        def cost(a):
            return _reverse_hit(scenario, reversed_metric, p, np.array([math.cos(a), math.sin(a)]))

        result = minimize_scalar(cost, bracket=(angle - step, angle, angle + step), method="golden", tol=1e-8)
        return float(min(values[i], result.fun))
    return float(values[i])


def _refine_3d(m: MetricSpec, b: BoundarySpec, p: ChartPoint, best: float, N: int) -> float:
    for piece in b.pieces:
        grid = piece.grid(N)
        costs = [float(m.norm(p.coords, p.coords - piece.point(s))) + piece.g(s) for s in grid]
        sigma = np.array(grid[int(np.argmin(costs))], dtype=float)
        step = (piece.hi - piece.lo) / math.sqrt(N)
        for _ in range(3):
            for j in range(piece.param_dim):

                def cost(a, _j=j):
                    trial = sigma.copy()
                    trial[_j] = a
                    trial = np.clip(trial, piece.lo, piece.hi)
                    return float(m.norm(p.coords, p.coords - piece.point(trial))) + piece.g(trial)

                lo = max(sigma[j] - step[j], piece.lo[j])
                hi = min(sigma[j] + step[j], piece.hi[j])
                result = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
                sigma[j] = result.x
                best = min(best, float(result.fun))
            step = step / 4
    return best
