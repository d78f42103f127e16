import enum
import math

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


class CutLocusError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 1


class ConfigError(CutLocusError):
    exit_code = 2


class InvariantViolation(CutLocusError):
    exit_code = 3


class NumericalError(CutLocusError):
    exit_code = 4


class ValuedEnum(enum.Enum):
    @classmethod
    def has_value(cls, value):
        return value in set(item.value for item in cls)

    @classmethod
    def values(cls):
        return [item.value for item in cls]


class MetricKind(ValuedEnum):
    """How the geometry is given.

    Can be one of:
        - riemannian: a tensor field g_ij(p).
        - finsler: a norm function phi(p, v), 1-homogeneous and strongly convex in v.
        - hamiltonian: H(p, xi) on covectors; the norm is its dual.
    """

    riemannian = "riemannian"
    finsler = "finsler"
    hamiltonian = "hamiltonian"


class CutClass(ValuedEnum):
    """Cut point taxonomy.

    Can be one of:
        - cleave: exactly two minimizers, neither focal.
        - edge: exactly one minimizer, focal of order 1.
        - degenerate_cleave: two minimizers, one of them focal of order 1.
        - crossing: three or more minimizers of order at most 1 whose duals span a 2-dimensional affine subspace.
        - remainder: anything else.
        - indeterminate: focal orders were not stable under the rank tolerance.
    """

    cleave = "cleave"
    edge = "edge"
    degenerate_cleave = "degenerate_cleave"
    crossing = "crossing"
    remainder = "remainder"
    indeterminate = "indeterminate"


class Type2(ValuedEnum):
    type_1 = "1"
    type_2a = "2a"
    type_2b = "2b"
    type_2c = "2c"
    type_3 = "3"
    type_4 = "4"
    not_applicable = "n/a"
    indeterminate = "indeterminate"


class Provenance(ValuedEnum):
    ray_envelope = "ray-envelope"
    graph = "graph-shortest-path"


class Stage(ValuedEnum):
    rays = "rays"
    focal = "focal"
    cut = "cut"
    classify = "classify"
    balanced = "balanced"
    split = "split"
    hj = "hj"


STAGE_REQUIREMENTS = {
    Stage.rays: [],
    Stage.focal: [Stage.rays],
    Stage.cut: [Stage.rays],
    Stage.classify: [Stage.cut, Stage.focal],
    Stage.balanced: [Stage.classify],
    Stage.split: [Stage.classify],
    Stage.hj: [Stage.cut],
}


def _as_vector(values) -> np.ndarray:
    vector = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vector)):
        raise NumericalError(f"non-finite components: {vector}")
    return vector


@dataclass(eq=False)
class ChartPoint:
    coords: np.ndarray
    chart: int = 0

    def __post_init__(self):
        self.coords = _as_vector(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __str__(self):
        coords = ", ".join(f"{c:.6g}" for c in self.coords)
        return f"({coords})@{self.chart}"


@dataclass(eq=False)
class Tangent:
    base: ChartPoint
    components: np.ndarray

    def __post_init__(self):
        self.components = _as_vector(self.components)


@dataclass(eq=False)
class Covector:
    base: ChartPoint
    components: np.ndarray

    def __post_init__(self):
        self.components = _as_vector(self.components)

    def __call__(self, vector) -> float:
        if isinstance(vector, Tangent):
            vector = vector.components
        return float(np.dot(self.components, vector))


RayKey = Tuple[int, Tuple[float, ...]]


def ray_key(piece: int, sigma) -> RayKey:
    return (int(piece), tuple(round(float(s), 12) for s in np.atleast_1d(sigma)))


def key_to_str(key: RayKey) -> str:
    sigma = ";".join(f"{s:.9g}" for s in key[1])
    return f"{key[0]}:{sigma}"


@dataclass
class JacobiFrame:
    """Variation fields along a ray at time `t`.

    `J` holds one column per boundary parameter direction, `Jdot` their plain
    time derivatives in chart coordinates and `dF` the
    differential of the exponential map, first column being the velocity.
    """

    t: float
    chart: int
    J: np.ndarray
    Jdot: np.ndarray
    dF: np.ndarray


@dataclass
class FocalRecord:
    key: Optional[RayKey]
    t: float
    order: int
    singular_values: List[float]
    order_stable: bool = True
    a2: Optional[bool] = None
    type2: Type2 = Type2.not_applicable
    coefficients: Dict[str, Any] = field(default_factory=dict)
    point: Optional[np.ndarray] = None
    chart: int = 0

    def __str__(self):
        where = key_to_str(self.key) if self.key else "synthetic"
        return f"FocalRecord: ray={where}, t={self.t:.9g}, order={self.order}, a2={self.a2}, type={self.type2.value}"

    def to_dict(self):
        return {
            "ray": key_to_str(self.key) if self.key else None,
            "t": self.t,
            "order": self.order,
            "order_stable": self.order_stable,
            "singular_values": [float(v) for v in self.singular_values],
            "a2": self.a2,
            "type2": self.type2.value,
            "coefficients": to_jsonable(self.coefficients),
            "point": None if self.point is None else [float(c) for c in self.point],
            "chart": self.chart,
        }


@dataclass
class Minimizer:
    key: RayKey
    t: float
    value: float
    arrival: Tangent
    dual: Covector
    focal_order: int = 0
    order_stable: bool = True
    focal_t: Optional[float] = None

    def to_dict(self):
        return {
            "ray": key_to_str(self.key),
            "t": self.t,
            "value": self.value,
            "arrival": [float(c) for c in self.arrival.components],
            "dual": [float(c) for c in self.dual.components],
            "focal_order": self.focal_order,
            "focal_t": self.focal_t,
        }


@dataclass
class CutRecord:
    p: ChartPoint
    minimizers: List[Minimizer]
    source: Optional[RayKey] = None
    classification: Optional[CutClass] = None
    dual_affine_dim: int = 0
    censored: bool = False

    @property
    def value(self) -> float:
        return min(m.value for m in self.minimizers)

    def __str__(self):
        tag = self.classification.value if self.classification else "unclassified"
        return f"CutRecord: p={self.p}, minimizers={len(self.minimizers)}, class={tag}"

    def to_dict(self):
        return {
            "p": [float(c) for c in self.p.coords],
            "chart": self.p.chart,
            "source": key_to_str(self.source) if self.source else None,
            "classification": self.classification.value if self.classification else None,
            "dual_affine_dim": self.dual_affine_dim,
            "minimizers": [m.to_dict() for m in self.minimizers],
        }


@dataclass
class HJField:
    """Sampled viscosity solution on the oracle grid plus the extension data."""

    nodes: np.ndarray
    charts: np.ndarray
    u: np.ndarray
    gradient: np.ndarray
    singular: np.ndarray
    eikonal_residual: np.ndarray
    mu: Dict[RayKey, float] = field(default_factory=dict)
    extension_points: Optional[np.ndarray] = None
    extension_values: Optional[np.ndarray] = None
    lam: List[np.ndarray] = field(default_factory=list)

    def to_rows(self):
        for x, chart, u, flag in zip(self.nodes, self.charts, self.u, self.singular):
            yield [*(float(c) for c in x), int(chart), float(u), int(bool(flag))]


def to_jsonable(value):
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, enum.Enum):
        return value.value
    return value
