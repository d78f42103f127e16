import logging

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from cutlocus.geometry.flow import GeodesicMap, PieceMap, Ray, geodesic_map, injectivity_violations
from cutlocus.geometry.metric import MetricSpec
from cutlocus.geometry.schema import (
    ConfigError,
    FocalRecord,
    NumericalError,
    RayKey,
    Type2,
    key_to_str,
)


RANK_TOL = 1e-6
FOCAL_GRID_STEP = 0.01
FOCAL_BISECT_TOL = 1e-9
A2_STEP = 1e-4
A2_TOL = 1e-3
JET_STEP = 1e-4
JET_STEP_GEODESIC = 1e-2
ZERO_TOL = 1e-8
ZERO_TOL_GEODESIC = 1e-6
SEMIDEF_TOL = 1e-10
BORDERLINE_DET = 1e-6
RANK_A_LOW = 1e-6
RANK_A_HIGH = 1e-4


###################
# Synthetic maps  #
###################


@dataclass(eq=False)
class SyntheticMap:
    """A map R^n -> R^n injected in place of the exponential map.

    The flow direction is the first coordinate, so d2F(r # v) is the
    x1-derivative of dF(v).
    """

    name: str
    dim: int
    fn: Callable
    jacobian: Optional[Callable] = None
    step: float = 1e-6
    chart: Optional[int] = None

    def F(self, z) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(z, dtype=float)), dtype=float)

    def dF(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(z), dtype=float)
        columns = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = self.step
            columns.append((self.F(z + e) - self.F(z - e)) / (2 * self.step))
        return np.stack(columns, axis=1)

    def d2F_r(self, z, vector) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        e = np.zeros(self.dim)
        e[0] = 1e-5
        vector = np.asarray(vector, dtype=float)
        return (self.dF(z + e) @ vector - self.dF(z - e) @ vector) / 2e-5

    def at(self, chart: Optional[int]) -> "SyntheticMap":
        return self


def normal_form_map(q, r, name: str = "normal_form") -> SyntheticMap:
    """F(x) = (x1, x1 x2 + q(x2, x3), x1 x3 + r(x2, x3)) for symmetric 2x2 matrices q and r."""
    Q = np.asarray(q, dtype=float)
    R = np.asarray(r, dtype=float)

    def fn(x):
        y = x[1:3]
        return np.array([x[0], x[0] * x[1] + y @ Q @ y, x[0] * x[2] + y @ R @ y])

    def jacobian(x):
        y = x[1:3]
        dq = 2 * Q @ y
        dr = 2 * R @ y
        return np.array([[1.0, 0.0, 0.0], [x[1], x[0] + dq[0], dq[1]], [x[2], dr[0], x[0] + dr[1]]])

    return SyntheticMap(name=name, dim=3, fn=fn, jacobian=jacobian)


def fold_map() -> SyntheticMap:
    """F(x1, x2) = (x1^2, x2), the model fold."""
    return SyntheticMap(
        name="fold",
        dim=2,
        fn=lambda x: np.array([x[0] ** 2, x[1]]),
        jacobian=lambda x: np.array([[2 * x[0], 0.0], [0.0, 1.0]]),
    )


SYNTHETIC_FORMS: Dict[str, Tuple[list, list]] = {
    "type_1": ([[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]),
    "type_3": ([[1.0, 0.0], [0.0, -1.0]], [[0.0, 0.0], [0.0, 0.0]]),
    "type_2a": ([[1.0, 0.0], [0.0, -1.0]], [[1.0, 2.0], [2.0, 0.0]]),
    "type_2b": ([[1.0, 0.0], [0.0, -1.0]], [[0.0, 1.0], [1.0, 0.0]]),
    "type_2c": ([[1.0, 0.0], [0.0, -1.0]], [[0.0, 1.0], [1.0, 3.0]]),
    "type_4": ([[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]),
}


def synthetic_map(name: str) -> SyntheticMap:
    if name == "fold":
        return fold_map()
    if name not in SYNTHETIC_FORMS:
        raise ConfigError(f"unknown synthetic map {name}, expected fold or one of {sorted(SYNTHETIC_FORMS)}")
    q, r = SYNTHETIC_FORMS[name]
    return normal_form_map(q, r, name=name)


###################
# Focal times     #
###################


def _singular_values(ray: Ray, t: float) -> np.ndarray:
    return np.linalg.svd(ray.frame(t).dF, compute_uv=False)


def _order(sv: np.ndarray, tol: float) -> int:
    return int(np.sum(sv < tol * max(sv[0], 1e-300)))


def _sigma_min_slope(ray: Ray, t: float, eta: float = 1e-11) -> float:
    lo = max(t - eta, 0.0)
    hi = min(t + eta, ray.t_end)
    return float(_singular_values(ray, hi)[-1] - _singular_values(ray, lo)[-1])


def _refine_minimum(ray: Ray, a: float, b: float, tol: float) -> Optional[float]:
    """Bisect on the sign of the slope of the smallest singular value."""
    if _sigma_min_slope(ray, a) > 0 or _sigma_min_slope(ray, b) < 0:
        return None
    while b - a > tol:
        m = 0.5 * (a + b)
        if _sigma_min_slope(ray, m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def focal_times(
    ray: Ray,
    tol: float = RANK_TOL,
    grid_step: float = FOCAL_GRID_STEP,
    bisect_tol: float = FOCAL_BISECT_TOL,
) -> List[FocalRecord]:
    """Focal points along one ray, in increasing t.

    Local minima of sigma_min / sigma_max of dF on a uniform grid are refined
    by bisection; a minimum counts when at least one singular value falls
    below `tol` times the largest.
    """
    dt = min(grid_step, ray.t_end / 400.0)
    if dt <= 0:
        return []
    ts = np.arange(0.0, ray.t_end + 0.5 * dt, dt)
    ts[-1] = min(ts[-1], ray.t_end)
    ratios = []
    for t in ts:
        sv = _singular_values(ray, t)
        ratios.append(sv[-1] / max(sv[0], 1e-300))
    ratios = np.array(ratios)

    records = []
    for i in range(1, len(ts) - 1):
        if not (ratios[i] <= ratios[i - 1] and ratios[i] <= ratios[i + 1]):
            continue
        t_star = _refine_minimum(ray, ts[i - 1], ts[i + 1], bisect_tol)
        if t_star is None:
            continue
        sv = _singular_values(ray, t_star)
        order = _order(sv, tol)
        if order == 0:
            continue
        if records and abs(records[-1].t - t_star) < 10 * bisect_tol:
            continue
        chart, x, _, _, _ = ray.state(t_star)
        records.append(
            FocalRecord(
                key=ray.key,
                t=float(t_star),
                order=order,
                singular_values=[float(s) for s in sv],
                order_stable=_order(sv, tol / 2) == order,
                point=x.copy(),
                chart=chart,
            )
        )
    if records:
        logging.debug(f"ray {key_to_str(ray.key) if ray.key else '?'}: focal times {[r.t for r in records]}")
    return records


def first_focal_time(records: List[FocalRecord]) -> Optional[float]:
    return records[0].t if records else None


###################
# Local analysis  #
###################


def record_map(m: MetricSpec, b, record: FocalRecord) -> Tuple[PieceMap, np.ndarray]:
    """The exponential map of the record's piece, in the record's chart, and z = (t, sigma)."""
    if record.key is None:
        raise ConfigError("record has no ray key; use the map-level functions for synthetic maps")
    piece, sigma = record.key
    view = geodesic_map(m, b).view(piece).at(record.chart)
    return view, np.concatenate([[record.t], np.asarray(sigma, dtype=float)])


def kernel_basis(dF: np.ndarray, k: int) -> np.ndarray:
    """k kernel vectors (columns): canonical vectors projected on the null space, orthonormalized.

    Each is signed so that its largest component is positive.
    """
    _, _, vt = np.linalg.svd(dF)
    null = vt[-k:].T
    projected = null @ null.T
    order = np.argsort(-np.linalg.norm(projected, axis=0), kind="stable")
    basis: List[np.ndarray] = []
    for j in order:
        v = projected[:, j].copy()
        for u in basis:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        v /= norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        basis.append(v)
        if len(basis) == k:
            break
    return np.column_stack(basis)


def _complete_basis(columns: np.ndarray, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(columns)
    extra: List[np.ndarray] = []
    for j in np.argsort(-np.linalg.norm(np.eye(dim) - q @ q.T, axis=0), kind="stable"):
        if columns.shape[1] + len(extra) == dim:
            break
        v = np.eye(dim)[:, j] - q @ (q.T @ np.eye(dim)[:, j])
        for u in extra:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            extra.append(v / norm)
    if not extra:
        return np.zeros((dim, 0))
    return np.column_stack(extra)


@dataclass
class SpecialCoordinates:
    """Adapted frames at a focal point.

    `B` (domain) holds the flow direction, the kernel and a complement;
    `B_prime` (target) holds dF(r), d2F(r # v_i) for kernel vectors v_i and
    dF of the complement.
    """

    z: np.ndarray
    base: np.ndarray
    order: int
    B: np.ndarray
    B_prime: np.ndarray
    kernel: np.ndarray
    condition: Tuple[float, float] = (1.0, 1.0)

    def local_map(self, emap) -> Callable:
        inverse = np.linalg.inv(self.B_prime)

        def F_tilde(x):
            return inverse @ (emap.F(self.z + self.B @ np.asarray(x, dtype=float)) - self.base)

        return F_tilde


def special_coordinates_of(emap, z, order: Optional[int] = None, tol: float = RANK_TOL) -> SpecialCoordinates:
    z = np.asarray(z, dtype=float)
    n = emap.dim
    dF = emap.dF(z)
    sv = np.linalg.svd(dF, compute_uv=False)
    k = _order(sv, tol) if order is None else order
    if k < 1:
        raise ConfigError(f"special coordinates need a focal point, dF has full rank at {z}")
    r = np.zeros(n)
    r[0] = 1.0
    kernel = kernel_basis(dF, k)
    complement = _complete_basis(np.column_stack([r, kernel]), n)
    B = np.column_stack([r, kernel, complement])
    B_prime = np.column_stack(
        [dF @ r]
        + [emap.d2F_r(z, kernel[:, i]) for i in range(k)]
        + [dF @ complement[:, i] for i in range(complement.shape[1])]
    )
    sv_prime = np.linalg.svd(B_prime, compute_uv=False)
    if sv_prime[-1] < 1e-8 * max(sv_prime[0], 1e-300):
        raise NumericalError(f"R2 violated: second-order frame is singular at {z} (singular values {sv_prime})")
    return SpecialCoordinates(
        z=z,
        base=emap.F(z),
        order=k,
        B=B,
        B_prime=B_prime,
        kernel=kernel,
        condition=(float(np.linalg.cond(B)), float(sv_prime[0] / sv_prime[-1])),
    )


def special_coordinates(m: MetricSpec, b, record: FocalRecord) -> SpecialCoordinates:
    if record.order not in (1, 2):
        raise ConfigError(f"special coordinates need order 1 or 2, got {record.order}")
    emap, z = record_map(m, b, record)
    return special_coordinates_of(emap, z, record.order)


def second_derivatives(f: Callable, dim: int, indices, step: float) -> np.ndarray:
    """Hessian of the vector function f at 0 restricted to `indices`, with one Richardson level.

    Returns an array (components, len(indices), len(indices)).
    """

    def hessian(h):
        f0 = f(np.zeros(dim))
        size = len(indices)
        H = np.zeros((f0.shape[0], size, size))
        for a, i in enumerate(indices):
            e_i = np.zeros(dim)
            e_i[i] = h
            H[:, a, a] = (f(e_i) - 2 * f0 + f(-e_i)) / h**2
            for c in range(a + 1, size):
                e_j = np.zeros(dim)
                e_j[indices[c]] = h
                mixed = (f(e_i + e_j) - f(e_i - e_j) - f(-e_i + e_j) + f(-e_i - e_j)) / (4 * h**2)
                H[:, a, c] = H[:, c, a] = mixed
        return H

    return (4 * hessian(step / 2) - hessian(step)) / 3


###################
# A2              #
###################


def a2_residual(emap, z, step: float = A2_STEP) -> float:
    """|grad det dF . k| / (|grad det dF| |k|), k spanning the kernel of dF."""
    z = np.asarray(z, dtype=float)
    n = emap.dim
    grad = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        grad[j] = (np.linalg.det(emap.dF(z + e)) - np.linalg.det(emap.dF(z - e))) / (2 * step)
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return 0.0
    k = kernel_basis(emap.dF(z), 1)[:, 0]
    return abs(float(grad @ k)) / norm


def a2_test_of(emap, z, step: float = A2_STEP, tol: float = A2_TOL) -> bool:
    dF = emap.dF(np.asarray(z, dtype=float))
    sv = np.linalg.svd(dF, compute_uv=False)
    if _order(sv, RANK_TOL) != 1:
        raise ConfigError("A2 defined only for order 1")
    return a2_residual(emap, z, step) > tol


def a2_test(m: MetricSpec, b, record: FocalRecord, step: float = A2_STEP, tol: float = A2_TOL) -> bool:
    """Whether the kernel at an order-1 focal point is transversal to the focal set."""
    if record.order != 1:
        raise ConfigError("A2 defined only for order 1")
    emap, z = record_map(m, b, record)
    residual = a2_residual(emap, z, step)
    logging.debug(f"{record}: A2 transversality {residual:.3g}")
    return residual > tol


###################
# Order 2 types   #
###################


def _form_eigenvalues(form: np.ndarray, scale: float) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (form + form.T)) / scale


def _is_zero(eig: np.ndarray, zero_tol: float) -> bool:
    return bool(np.all(np.abs(eig) < zero_tol))


def _is_semidefinite(eig: np.ndarray) -> bool:
    peak = float(np.max(np.abs(eig)))
    if peak == 0.0:
        return True
    return float(eig[0] * eig[-1]) / peak**2 >= -SEMIDEF_TOL


def _normalized_det(form: np.ndarray) -> float:
    peak = float(np.max(np.abs(np.linalg.eigvalsh(form))))
    return float(np.linalg.det(form)) / peak**2 if peak > 0 else 0.0


def _pencil_row(Q: np.ndarray, R: np.ndarray) -> Tuple[float, float]:
    """A row (a, b) with P = aQ + bR indefinite and (a, b) P^-1 (a, b)^T = 1."""

    def kappa(a, b):
        P = a * Q + b * R
        if np.linalg.det(P) >= 0:
            return None
        value = float(np.array([a, b]) @ np.linalg.solve(P, np.array([a, b])))
        return value if value > 0 else None

    candidates = []
    if Q[1, 1] < 0:
        candidates.append((1.0, 0.0))
    elif Q[1, 1] > 0:
        candidates.append((-1.0, 0.0))
    candidates.extend((float(np.cos(theta)), float(np.sin(theta))) for theta in np.linspace(0, 2 * np.pi, 721)[:-1])
    best = None
    for a, b in candidates:
        value = kappa(a, b)
        if value is None:
            continue
        det = abs(_normalized_det(a * Q + b * R))
        if best is None or (best[0] < 1e-3 and det > best[0]):
            best = (det, a / value, b / value)
        if best[0] >= 1e-3:
            break
    if best is None:
        raise NumericalError("no indefinite combination of q and r")
    return best[1], best[2]


def normalize_pair(Q: np.ndarray, R: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Change (x2, x3) and the target by M so that the new q is x2^2 - x3^2.

    The pencil member brought to that form is the first indefinite one of a fixed
    scan, so the result is deterministic but depends on the (x2, x3) it is given:
    types 1 and 2c (both Q_2^1) can trade places under a change of those coordinates.

    Returns (M, new Q, new R).
    """
    a, b = _pencil_row(Q, R)
    P = a * Q + b * R
    eigenvalues, vectors = np.linalg.eigh(P)
    order = np.argsort(-eigenvalues)
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    B0 = vectors @ np.diag(1.0 / np.sqrt(np.abs(eigenvalues)))
    w = np.array([a, b]) @ B0
    O = np.array([[w[0], -w[1]], [-w[1], w[0]]])
    M = B0 @ O
    inverse = np.linalg.inv(M)
    new_q = M.T @ (inverse[0, 0] * Q + inverse[0, 1] * R) @ M
    new_r = M.T @ (inverse[1, 0] * Q + inverse[1, 1] * R) @ M
    return M, new_q, new_r


def coefficient_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    return np.array([[1.0, 2.0, 0.0], [0.0, 0.0, -2.0], [0.0, 2 * alpha, beta], [1.0, beta, 2 * gamma]])


def classify_forms(Q, R, zero_tol: float = ZERO_TOL) -> Tuple[Type2, Dict]:
    """Order-2 type from the quadratic parts q (of F2) and r (of F3) in special coordinates."""
    Q = 0.5 * (np.asarray(Q, dtype=float) + np.asarray(Q, dtype=float).T)
    R = 0.5 * (np.asarray(R, dtype=float) + np.asarray(R, dtype=float).T)
    coefficients: Dict = {"q": Q, "r": R}
    scale = max(1.0, float(np.max(np.abs(np.concatenate([np.linalg.eigvalsh(Q), np.linalg.eigvalsh(R)])))))
    eig_q = _form_eigenvalues(Q, scale)
    eig_r = _form_eigenvalues(R, scale)
    zero_q, zero_r = _is_zero(eig_q, zero_tol), _is_zero(eig_r, zero_tol)

    if (not zero_q and _is_semidefinite(eig_q)) or (not zero_r and _is_semidefinite(eig_r)):
        return Type2.type_1, coefficients
    if zero_q and zero_r:
        return Type2.type_4, coefficients
    if zero_q or zero_r:
        return Type2.type_3, coefficients
    for form in (Q, R):
        det = _normalized_det(form)
        if -BORDERLINE_DET < det < -SEMIDEF_TOL:
            coefficients["reason"] = f"borderline determinant {det:.3g}"
            return Type2.indeterminate, coefficients

    M, new_q, new_r = normalize_pair(Q, R)
    alpha, beta, gamma = float(new_r[0, 0]), float(2 * new_r[0, 1]), float(new_r[1, 1])
    sv = np.linalg.svd(coefficient_matrix(alpha, beta, gamma), compute_uv=False)
    rank_ratio = float(sv[2] / sv[0])
    coefficients.update(
        {"change": M, "q_normalized": new_q, "alpha": alpha, "beta": beta, "gamma": gamma, "rank_ratio": rank_ratio}
    )
    if RANK_A_LOW <= rank_ratio <= RANK_A_HIGH:
        coefficients["reason"] = f"rank of A undecided, ratio {rank_ratio:.3g}"
        return Type2.indeterminate, coefficients
    if rank_ratio > RANK_A_HIGH:
        return Type2.type_2a, coefficients
    if abs(gamma / 2) < 1:
        return Type2.type_2b, coefficients
    return Type2.type_2c, coefficients


def quadratic_parts(
    emap, z, step: float = JET_STEP, tol: float = RANK_TOL
) -> Tuple[np.ndarray, np.ndarray, SpecialCoordinates]:
    coords = special_coordinates_of(emap, z, 2, tol)
    if emap.dim != 3:
        raise ConfigError("order-2 focal points need n = 3")
    f = coords.local_map(emap)
    h = step / max(1.0, float(np.linalg.norm(coords.B, 2)))
    H = second_derivatives(f, 3, [1, 2], h)
    return H[1] / 2, H[2] / 2, coords


def classify_order2_of(emap, z, step: float = JET_STEP, zero_tol: float = ZERO_TOL) -> Tuple[Type2, Dict]:
    Q, R, _ = quadratic_parts(emap, z, step)
    return classify_forms(Q, R, zero_tol)


def classify_order2(
    m: MetricSpec, b, record: FocalRecord, step: float = JET_STEP_GEODESIC, zero_tol: float = ZERO_TOL_GEODESIC
) -> Tuple[Type2, Dict]:
    if record.order != 2:
        raise ConfigError(f"classify_order2 needs an order-2 record, got order {record.order}")
    if not record.order_stable:
        return Type2.indeterminate, {"reason": "order not stable under the rank tolerance"}
    emap, z = record_map(m, b, record)
    tag, coefficients = classify_order2_of(emap, z, step, zero_tol)
    logging.info(f"{record}: order-2 type {tag.value}")
    return tag, coefficients


def analyze_records(
    m: MetricSpec, b, records: Iterable[FocalRecord], a2_tol: float = A2_TOL, zero_tol: float = ZERO_TOL_GEODESIC
) -> List[FocalRecord]:
    """Fill in the A2 flag and the order-2 type of each record; local failures are logged, not raised."""
    analyzed = []
    for record in records:
        try:
            if record.order == 1:
                record.a2 = a2_test(m, b, record, tol=a2_tol)
            elif record.order == 2:
                record.type2, record.coefficients = classify_order2(m, b, record, zero_tol=zero_tol)
        except NumericalError as e:
            logging.warning(f"{record}: {e}")
            if record.order == 2:
                record.type2 = Type2.indeterminate
                record.coefficients = {"reason": str(e)}
        analyzed.append(record)
    return analyzed


###################
# Regularity      #
###################


@dataclass
class RegularityReport:
    """The four properties of a regular exponential map, checked on a sampled family."""

    min_flow_speed: float = np.inf
    frame_failures: List[str] = field(default_factory=list)
    order_mismatches: List[str] = field(default_factory=list)
    injectivity: List[Tuple[str, float, str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        problems = self.frame_failures or self.order_mismatches or self.injectivity
        return self.min_flow_speed > 1e-8 and not problems

    def to_dict(self):
        return {
            "ok": self.ok,
            "min_flow_speed": float(self.min_flow_speed),
            "frame_failures": self.frame_failures,
            "order_mismatches": self.order_mismatches,
            "injectivity_violations": [list(v) for v in self.injectivity],
        }


def parameter_neighbours(rays: List[Ray], periods: Dict[int, np.ndarray]) -> Dict[RayKey, List[RayKey]]:
    """Grid neighbours of each ray within its piece, wrapping periodic parameters."""
    neighbours: Dict[RayKey, List[RayKey]] = {}
    by_piece: Dict[int, List[Ray]] = {}
    for ray in rays:
        by_piece.setdefault(ray.key[0], []).append(ray)
    for piece, members in by_piece.items():
        sigma = np.array([ray.key[1] for ray in members])
        period = periods.get(piece)
        boxsize = None
        if period is not None and np.all(period > 0):
            sigma = np.mod(sigma, period)
            boxsize = period
        if len(members) < 2:
            continue
        tree = cKDTree(sigma, boxsize=boxsize)
        distances, _ = tree.query(sigma, k=2)
        spacing = float(np.median(distances[:, 1]))
        for i, ray in enumerate(members):
            found = tree.query_ball_point(sigma[i], 1.01 * spacing)
            neighbours[ray.key] = [members[j].key for j in found if j != i]
    return neighbours


def check_regular_exp_map(
    gmap: GeodesicMap,
    rays: List[Ray],
    focal: Dict[RayKey, List[FocalRecord]],
    step: float = 0.05,
    window: float = 0.1,
) -> RegularityReport:
    report = RegularityReport()
    for ray in rays:
        for t in ray.times(step):
            speed = float(np.linalg.norm(ray.frame(t).dF[:, 0]))
            report.min_flow_speed = min(report.min_flow_speed, speed)

    for key, records in focal.items():
        for record in records:
            if record.order > 2:
                continue
            try:
                special_coordinates(gmap.metric, gmap.boundary, record)
            except (NumericalError, ConfigError) as e:
                report.frame_failures.append(f"{record}: {e}")

    periods = {}
    for index, piece in enumerate(gmap.boundary.pieces):
        if all(piece.periodic):
            periods[index] = piece.hi - piece.lo
    by_key = {ray.key: ray for ray in rays}
    for key, others in parameter_neighbours(rays, periods).items():
        for record in focal.get(key, []):
            for other in others:
                if by_key[other].t_end < record.t + window:
                    continue
                total = sum(r.order for r in focal.get(other, []) if abs(r.t - record.t) <= window)
                if total != record.order:
                    report.order_mismatches.append(
                        f"{record}: neighbour {key_to_str(other)} carries order {total} within {window}"
                    )

    report.injectivity = injectivity_violations(rays, step)
    if not report.ok:
        logging.warning(
            f"regularity: min |dF(r)|={report.min_flow_speed:.3g}, {len(report.frame_failures)} frame failures, "
            f"{len(report.order_mismatches)} order mismatches, {len(report.injectivity)} injectivity violations"
        )
    return report


def focal_rows(records: Iterable[FocalRecord]):
    """Rows for focal CSV export: piece, s..., t, order, order_stable, a2, type2, chart, x..."""
    for record in records:
        piece, sigma = record.key if record.key else (-1, ())
        point = [] if record.point is None else [float(c) for c in record.point]
        a2 = "" if record.a2 is None else int(record.a2)
        row = [piece, *sigma, record.t, record.order, int(record.order_stable), a2, record.type2.value]
        yield row + [record.chart, *point]
