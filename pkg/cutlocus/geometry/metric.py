import logging
import math

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from cutlocus.geometry.schema import (
    ChartPoint,
    ConfigError,
    Covector,
    MetricKind,
    NumericalError,
    Tangent,
)


FD_STEP = 1e-5
HESSIAN_STEP = 1e-4
DUAL_SUP_TOL = 1e-10
DUAL_SUP_MAX_ITER = 200
DUAL_SUP_ACCEPT = 1e-6


@dataclass(eq=False)
class Chart:
    """A coordinate box, optionally restricted by `region` and handing rays off to another chart.

    `region(x)` returns a boolean mask over the trailing axis of `x`. When
    `handoff_radius` is set, a ray whose coordinates grow past it is moved to
    chart `handoff_to` through `transition`.
    """

    name: str
    lo: np.ndarray
    hi: np.ndarray
    region: Optional[Callable] = None
    handoff_radius: Optional[float] = None
    handoff_to: Optional[int] = None
    transition: Optional[Callable] = None
    transition_jacobian: Optional[Callable] = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ConfigError(f"chart {self.name} has an empty box {self.lo} .. {self.hi}")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        if self.region is not None:
            inside = inside & np.asarray(self.region(x), dtype=bool)
        return inside

    def box_margin(self, x) -> float:
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))


def box_chart(lo, hi, name="box", region=None) -> Chart:
    return Chart(name=name, lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float), region=region)


def _fd_gradient(f: Callable, a: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(a)
    for i in range(a.shape[0]):
        e = np.zeros_like(a)
        e[i] = step
        grad[i] = (f(a + e) - f(a - e)) / (2 * step)
    return grad


def _radial_projection(f: Callable, a: np.ndarray) -> np.ndarray:
    """Scale `a` onto the level set {f = 1}; f must be below 1 at the origin."""
    fa = f(a)
    if fa > 0:
        scaled = a / fa
        if abs(f(scaled) - 1.0) < 1e-13:
            return scaled
    if f(np.zeros_like(a)) >= 1.0:
        raise NumericalError("dual-sup divergence: origin is not inside the level set")
    hi = 1.0
    for _ in range(80):
        if f(hi * a) >= 1.0:
            break
        hi *= 2.0
    else:
        raise NumericalError("dual-sup divergence: level set is unbounded")
    s = brentq(lambda s: f(s * a) - 1.0, 0.0, hi, xtol=1e-15, rtol=1e-15)
    return s * a


def level_set_argmax(
    f: Callable,
    w: np.ndarray,
    grad_f: Optional[Callable] = None,
    tol: float = DUAL_SUP_TOL,
    max_iter: int = DUAL_SUP_MAX_ITER,
) -> Tuple[float, np.ndarray]:
    """Maximize <w, a> over the level set {f(a) = 1} by projected gradient ascent.

    Starts at the Euclidean-normalized direction of `w`, steps along the
    component of `w` tangent to the level set and projects radially back.
    """
    w = np.asarray(w, dtype=float)
    w_norm = float(np.linalg.norm(w))
    if w_norm == 0.0:
        return 0.0, np.zeros_like(w)
    a = _radial_projection(f, w / w_norm)
    value = float(w @ a)
    step = float(np.linalg.norm(a)) / w_norm
    residual = math.inf
    for _ in range(max_iter):
        normal = grad_f(a) if grad_f is not None else _fd_gradient(f, a, 1e-7 * (1 + np.linalg.norm(a)))
        normal_norm = np.linalg.norm(normal)
        if normal_norm == 0.0:
            raise NumericalError("dual-sup divergence: flat level set")
        n_hat = normal / normal_norm
        direction = w - (w @ n_hat) * n_hat
        residual = float(np.linalg.norm(direction)) / w_norm
        if residual <= tol:
            return value, a
        trial = _radial_projection(f, a + step * direction)
        trial_value = float(w @ trial)
        if trial_value > value:
            a, value = trial, trial_value
            step *= 1.5
        else:
            step *= 0.5
            if step * np.linalg.norm(direction) < 1e-15 * (1 + np.linalg.norm(a)):
                break
    if residual <= DUAL_SUP_ACCEPT:
        return value, a
    raise NumericalError(f"dual-sup divergence: tangential residual {residual:.3g} after {max_iter} iterations")


@dataclass(eq=False)
class MetricSpec:
    """Geometry on an atlas of coordinate charts.

    All closures are vectorized over leading axes: `tensor(x)` maps (..., n)
    to (..., n, n), `norm_fn(x, v)` maps to (...). `tensor_grad(x)[..., k, i, j]`
    is the derivative of g_ij along x_k. Missing derivative closures fall back
    to central differences with step `fd_step * (1 + |v|)`.
    """

    name: str
    kind: MetricKind
    dim: int
    charts: List[Chart]
    tensor: Optional[Callable] = None
    tensor_grad: Optional[Callable] = None
    norm_fn: Optional[Callable] = None
    norm_grad_fn: Optional[Callable] = None
    norm_hessian_fn: Optional[Callable] = None
    dual_norm_fn: Optional[Callable] = None
    dual_grad_fn: Optional[Callable] = None
    hamiltonian_fn: Optional[Callable] = None
    hamiltonian_grad_fn: Optional[Callable] = None
    homogeneous: bool = False
    fd_step: float = FD_STEP
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"metric {self.name}: dimension {self.dim} is not supported")
        if self.kind == MetricKind.riemannian and self.tensor is None:
            raise ConfigError(f"metric {self.name}: riemannian kind needs a tensor field")
        if self.kind == MetricKind.finsler and self.norm_fn is None:
            raise ConfigError(f"metric {self.name}: finsler kind needs a norm function")
        if self.kind == MetricKind.hamiltonian and self.hamiltonian_fn is None:
            raise ConfigError(f"metric {self.name}: hamiltonian kind needs H")
        for chart in self.charts:
            if chart.dim != self.dim:
                raise ConfigError(f"metric {self.name}: chart {chart.name} has dimension {chart.dim}")

    def __str__(self):
        return f"MetricSpec: {self.name} ({self.kind.value}, n={self.dim}, charts={len(self.charts)})"

    # norms

    def norm(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == MetricKind.riemannian:
            g = self.tensor(x)
            return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", v, g, v), 0.0))
        if self.kind == MetricKind.finsler:
            return np.asarray(self.norm_fn(x, v), dtype=float)
        return self._pointwise(lambda xi, vi: self._hamiltonian_sup(xi, vi)[0], x, v)

    def norm_grad(self, x, v) -> np.ndarray:
        """Derivative of the norm in v."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == MetricKind.riemannian:
            g = self.tensor(x)
            gv = np.einsum("...ij,...j->...i", g, v)
            phi = np.sqrt(np.maximum(np.einsum("...i,...i->...", v, gv), 0.0))
            return gv / np.where(phi > 0, phi, 1.0)[..., None]
        if self.kind == MetricKind.finsler:
            if self.norm_grad_fn is not None:
                return np.asarray(self.norm_grad_fn(x, v), dtype=float)
            return self._fd_grad_v(lambda vv: self.norm_fn(x, vv), v)
        return self._pointwise_vector(lambda xi, vi: self._hamiltonian_sup(xi, vi)[1], x, v)

    def hamiltonian(self, x, xi) -> np.ndarray:
        """Dual norm of the covector `xi`."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.kind == MetricKind.riemannian:
            ginv = np.linalg.inv(self.tensor(x))
            return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", xi, ginv, xi), 0.0))
        if self.kind == MetricKind.finsler:
            if self.dual_norm_fn is not None:
                return np.asarray(self.dual_norm_fn(x, xi), dtype=float)
            return self._pointwise(lambda xp, wp: self._finsler_sup(xp, wp)[0], x, xi)
        return np.asarray(self.hamiltonian_fn(x, xi), dtype=float)

    def hamiltonian_grad(self, x, xi) -> np.ndarray:
        """Derivative of H in the covector; for a 1-homogeneous H this is the dual unit vector."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.kind == MetricKind.riemannian:
            ginv = np.linalg.inv(self.tensor(x))
            gxi = np.einsum("...ij,...j->...i", ginv, xi)
            h = np.sqrt(np.maximum(np.einsum("...i,...i->...", xi, gxi), 0.0))
            return gxi / np.where(h > 0, h, 1.0)[..., None]
        if self.kind == MetricKind.finsler:
            if self.dual_grad_fn is not None:
                return np.asarray(self.dual_grad_fn(x, xi), dtype=float)
            return self._pointwise_vector(lambda xp, wp: self._finsler_sup(xp, wp)[1], x, xi)
        if self.hamiltonian_grad_fn is not None:
            return np.asarray(self.hamiltonian_grad_fn(x, xi), dtype=float)
        return self._fd_grad_v(lambda ww: self.hamiltonian_fn(x, ww), xi)

    def energy_hessian(self, x, v) -> np.ndarray:
        """Second derivative of phi^2/2 in v at a single (x, v)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == MetricKind.riemannian:
            return np.asarray(self.tensor(x), dtype=float)
        if self.kind == MetricKind.finsler and self.norm_hessian_fn is not None and self.norm_grad_fn is not None:
            phi = float(self.norm_fn(x, v))
            grad = np.asarray(self.norm_grad_fn(x, v), dtype=float)
            return np.outer(grad, grad) + phi * np.asarray(self.norm_hessian_fn(x, v), dtype=float)
        step = HESSIAN_STEP * (1 + np.linalg.norm(v))
        hessian = np.zeros((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            hessian[:, j] = (self._energy_grad(x, v + e) - self._energy_grad(x, v - e)) / (2 * step)
        return 0.5 * (hessian + hessian.T)

    def _energy_grad(self, x, v) -> np.ndarray:
        return float(self.norm(x, v)) * np.asarray(self.norm_grad(x, v), dtype=float)

    # geodesic spray

    def metric_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.tensor_grad is not None:
            return np.asarray(self.tensor_grad(x), dtype=float)
        step = self.fd_step * (1 + np.linalg.norm(x))
        dg = np.zeros((self.dim, self.dim, self.dim))
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = step
            dg[k] = (self.tensor(x + e) - self.tensor(x - e)) / (2 * step)
        return dg

    def spray(self, x, v) -> np.ndarray:
        """Acceleration of the unit-speed geodesic through (x, v)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.homogeneous:
            return np.zeros(self.dim)
        if self.kind == MetricKind.riemannian:
            g = self.tensor(x)
            dg = self.metric_derivative(x)
            rhs = np.einsum("kij,k,j->i", dg, v, v) - 0.5 * np.einsum("lij,i,j->l", dg, v, v)
            return -np.linalg.solve(g, rhs)
        # Euler-Lagrange equations of the energy phi^2/2
        step = self.fd_step * (1 + np.linalg.norm(x))
        energy_x = np.zeros(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            energy_x[i] = (float(self.norm(x + e, v)) ** 2 - float(self.norm(x - e, v)) ** 2) / (4 * step)
        mixed = (self._energy_grad(x + step * v, v) - self._energy_grad(x - step * v, v)) / (2 * step)
        return np.linalg.solve(self.energy_hessian(x, v), energy_x - mixed)

    def spray_jacobian(self, x, v) -> Tuple[np.ndarray, np.ndarray]:
        """Derivatives of the spray in x and in v, by central differences."""
        n = self.dim
        if self.homogeneous:
            return np.zeros((n, n)), np.zeros((n, n))
        step_x = 1e-6 * (1 + np.linalg.norm(x))
        step_v = 1e-6 * (1 + np.linalg.norm(v))
        da_dx = np.zeros((n, n))
        da_dv = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            da_dx[:, j] = (self.spray(x + step_x * e, v) - self.spray(x - step_x * e, v)) / (2 * step_x)
            da_dv[:, j] = (self.spray(x, v + step_v * e) - self.spray(x, v - step_v * e)) / (2 * step_v)
        return da_dx, da_dv

    # charts

    def to_chart(self, x, source: int, target: int) -> np.ndarray:
        if source == target:
            return np.asarray(x, dtype=float)
        chart = self.charts[source]
        if chart.transition is None or chart.handoff_to != target:
            raise NumericalError(f"no transition from chart {source} to chart {target}")
        return np.asarray(chart.transition(np.asarray(x, dtype=float)), dtype=float)

    def push_vector(self, x, v, source: int, target: int) -> np.ndarray:
        if source == target:
            return np.asarray(v, dtype=float)
        return self.transition_jacobian(x, source) @ np.asarray(v, dtype=float)

    def transition_jacobian(self, x, source: int) -> np.ndarray:
        chart = self.charts[source]
        if chart.transition_jacobian is not None:
            return np.asarray(chart.transition_jacobian(np.asarray(x, dtype=float)), dtype=float)
        step = 1e-6 * (1 + np.linalg.norm(x))
        jac = np.zeros((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step
            jac[:, j] = (chart.transition(x + e) - chart.transition(x - e)) / (2 * step)
        return jac

    def reversed(self) -> "MetricSpec":
        """The metric phi(x, -v); geodesics of it are the time-reversed geodesics of this one."""
        if self.kind == MetricKind.riemannian:
            return self
        flipped = {}
        if self.norm_fn is not None:
            norm_fn = self.norm_fn
            flipped["norm_fn"] = lambda x, v: norm_fn(x, -np.asarray(v))
        if self.norm_grad_fn is not None:
            norm_grad_fn = self.norm_grad_fn
            flipped["norm_grad_fn"] = lambda x, v: -np.asarray(norm_grad_fn(x, -np.asarray(v)))
        if self.norm_hessian_fn is not None:
            norm_hessian_fn = self.norm_hessian_fn
            flipped["norm_hessian_fn"] = lambda x, v: norm_hessian_fn(x, -np.asarray(v))
        if self.dual_norm_fn is not None:
            dual_norm_fn = self.dual_norm_fn
            flipped["dual_norm_fn"] = lambda x, xi: dual_norm_fn(x, -np.asarray(xi))
        if self.dual_grad_fn is not None:
            dual_grad_fn = self.dual_grad_fn
            flipped["dual_grad_fn"] = lambda x, xi: -np.asarray(dual_grad_fn(x, -np.asarray(xi)))
        if self.hamiltonian_fn is not None:
            hamiltonian_fn = self.hamiltonian_fn
            flipped["hamiltonian_fn"] = lambda x, xi: hamiltonian_fn(x, -np.asarray(xi))
        if self.hamiltonian_grad_fn is not None:
            hamiltonian_grad_fn = self.hamiltonian_grad_fn
            flipped["hamiltonian_grad_fn"] = lambda x, xi: -np.asarray(hamiltonian_grad_fn(x, -np.asarray(xi)))
        return replace(self, name=f"{self.name}-reversed", **flipped)

    # helpers

    def _fd_grad_v(self, f: Callable, v: np.ndarray) -> np.ndarray:
        step = self.fd_step * (1 + np.linalg.norm(v, axis=-1, keepdims=True))
        grad = np.zeros_like(v)
        for i in range(v.shape[-1]):
            e = np.zeros(v.shape[-1])
            e[i] = 1.0
            grad[..., i] = (np.asarray(f(v + step * e)) - np.asarray(f(v - step * e))) / (2 * step[..., 0])
        return grad

    def _hamiltonian_sup(self, x, v):
        return level_set_argmax(
            lambda alpha: float(self.hamiltonian_fn(x, alpha)),
            v,
            grad_f=(lambda alpha: np.asarray(self.hamiltonian_grad_fn(x, alpha))) if self.hamiltonian_grad_fn else None,
        )

    def _finsler_sup(self, x, xi):
        return level_set_argmax(
            lambda v: float(self.norm_fn(x, v)),
            xi,
            grad_f=(lambda v: np.asarray(self.norm_grad_fn(x, v))) if self.norm_grad_fn else None,
        )

    @staticmethod
    def _pointwise(f: Callable, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x_b, v_b = np.broadcast_arrays(x, v)
        flat_x = x_b.reshape(-1, x_b.shape[-1])
        flat_v = v_b.reshape(-1, v_b.shape[-1])
        out = np.array([f(xi, vi) for xi, vi in zip(flat_x, flat_v)], dtype=float)
        return out.reshape(v_b.shape[:-1])

    @staticmethod
    def _pointwise_vector(f: Callable, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x_b, v_b = np.broadcast_arrays(x, v)
        flat_x = x_b.reshape(-1, x_b.shape[-1])
        flat_v = v_b.reshape(-1, v_b.shape[-1])
        out = np.array([f(xi, vi) for xi, vi in zip(flat_x, flat_v)], dtype=float)
        return out.reshape(v_b.shape)


#################
# Operations    #
#################


def _check_point(m: MetricSpec, p: ChartPoint):
    if p.dim != m.dim:
        raise ConfigError(f"point {p} has dimension {p.dim}, metric {m.name} has {m.dim}")
    if not (0 <= p.chart < len(m.charts)) or not m.charts[p.chart].contains(p.coords):
        raise ConfigError(f"point {p} is outside the chart domain of {m.name}")


def finsler_norm(m: MetricSpec, v: Tangent) -> float:
    _check_point(m, v.base)
    if not np.any(v.components):
        return 0.0
    return float(m.norm(v.base.coords, v.components))


def dual_covector(m: MetricSpec, v: Tangent) -> Covector:
    """The one-form with omega(v) = phi(v)^2 that vanishes on the indicatrix tangent at v."""
    _check_point(m, v.base)
    if not np.any(v.components):
        raise NumericalError("dual of zero vector")
    x = v.base.coords
    phi = float(m.norm(x, v.components))
    return Covector(v.base, phi * np.asarray(m.norm_grad(x, v.components), dtype=float))


def dual_vector(m: MetricSpec, x, xi) -> np.ndarray:
    """Unit vector nu whose dual one-form is a positive multiple of `xi`."""
    xi = np.asarray(xi, dtype=float)
    nu = np.asarray(m.hamiltonian_grad(x, xi), dtype=float)
    phi = float(m.norm(x, nu))
    if not phi > 0 or not np.isfinite(phi):
        raise NumericalError(f"normal not found: degenerate dual vector for {xi}")
    return nu / phi


def inner_normal(m: MetricSpec, p: ChartPoint, hyperplane: Covector, side: int = 1) -> Tangent:
    """Unit normal to ker(hyperplane) pointing to the side where side * hyperplane is positive."""
    _check_point(m, p)
    kappa = float(np.sign(side) or 1.0) * hyperplane.components
    if not np.any(kappa):
        raise NumericalError("normal not found: hyperplane covector is zero")
    try:
        nu = dual_vector(m, p.coords, kappa)
    except NumericalError as e:
        raise NumericalError(f"normal not found: {e}")
    if float(kappa @ nu) <= 0:
        raise NumericalError(f"normal not found: dual vector {nu} points to the wrong side")
    return Tangent(p, nu)


def osculating_riemannian(m: MetricSpec, p: ChartPoint, X: Tangent) -> np.ndarray:
    """Fundamental tensor: second derivative of phi^2/2 in v at (p, X)."""
    _check_point(m, p)
    if not np.any(X.components):
        raise NumericalError("osculating metric of zero vector")
    if m.kind == MetricKind.riemannian:
        return np.asarray(m.tensor(p.coords), dtype=float)
    g = m.energy_hessian(p.coords, X.components)
    eigenvalues = np.linalg.eigvalsh(g)
    if eigenvalues[0] <= 0:
        raise ConfigError(
            f"convexity violation: {m.name} at {p} in direction {X.components}, eigenvalues {eigenvalues}"
        )
    return g


def characteristic_covector(m: MetricSpec, x, tangents, dg, conormal) -> Tuple[np.ndarray, np.ndarray]:
    """Covector lambda with lambda restricted to the boundary tangent equal to dg and H(lambda) = 1.

    Of the two roots along the conormal the one whose dual vector pairs
    positively with `conormal` is returned together with that unit vector.
    """
    x = np.asarray(x, dtype=float)
    tangents = np.asarray(tangents, dtype=float).reshape(m.dim, -1)
    dg = np.atleast_1d(np.asarray(dg, dtype=float))
    conormal = np.asarray(conormal, dtype=float)
    nu = conormal / np.linalg.norm(conormal)
    lam0 = np.linalg.lstsq(tangents.T, dg, rcond=None)[0]
    lam0 = lam0 - (lam0 @ nu) * nu

    def h(mu):
        return float(m.hamiltonian(x, lam0 + mu * nu))

    scale = 1.0 + float(np.linalg.norm(lam0))
    best = minimize_scalar(h, bracket=(-scale, scale), tol=1e-12)
    mu_min = float(best.x)
    if h(mu_min) >= 1.0:
        raise NumericalError(f"incompatible data: min H = {h(mu_min):.6g} >= 1 at {x}")

    roots = []
    for direction in (1.0, -1.0):
        reach = scale
        for _ in range(80):
            if h(mu_min + direction * reach) > 1.0:
                break
            reach *= 2.0
        else:
            raise NumericalError(f"incompatible data: no root of H = 1 at {x}")
        lo, hi = sorted((mu_min, mu_min + direction * reach))
        roots.append(brentq(lambda mu: h(mu) - 1.0, lo, hi, xtol=1e-14, rtol=1e-14))

    for mu in roots:
        lam = lam0 + mu * nu
        gamma = dual_vector(m, x, lam)
        if float(conormal @ gamma) > 0:
            return lam, gamma
    raise NumericalError(f"incompatible data: no inward characteristic at {x}")


##################
# Built-in metrics #
##################


def euclidean(dim: int = 2, lo=None, hi=None, region=None) -> MetricSpec:
    lo = np.full(dim, -2.0) if lo is None else lo
    hi = np.full(dim, 2.0) if hi is None else hi
    identity = np.eye(dim)
    return MetricSpec(
        name="euclidean",
        kind=MetricKind.riemannian,
        dim=dim,
        charts=[box_chart(lo, hi, region=region)],
        tensor=lambda x: np.broadcast_to(identity, np.shape(x)[:-1] + (dim, dim)),
        tensor_grad=lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim, dim)),
        homogeneous=True,
    )


def randers(b, lo=None, hi=None, region=None) -> MetricSpec:
    """phi(v) = |v| + <b, v>, translation invariant; strongly convex for |b| < 1."""
    b = np.asarray(b, dtype=float)
    dim = b.shape[0]
    lam = 1.0 - float(b @ b)
    if lam <= 0:
        raise ConfigError(f"randers drift |b| = {np.linalg.norm(b):.3g} must be below 1")
    lo = np.full(dim, -2.0) if lo is None else lo
    hi = np.full(dim, 2.0) if hi is None else hi

    def norm_fn(x, v):
        return np.linalg.norm(v, axis=-1) + v @ b

    def norm_grad_fn(x, v):
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / np.where(r > 0, r, 1.0) + b

    def norm_hessian_fn(x, v):
        r = float(np.linalg.norm(v))
        u = v / r
        return (np.eye(dim) - np.outer(u, u)) / r

    def dual_norm_fn(x, xi):
        bxi = xi @ b
        return (np.sqrt(lam * np.einsum("...i,...i->...", xi, xi) + bxi**2) - bxi) / lam

    def dual_grad_fn(x, xi):
        bxi = (xi @ b)[..., None]
        root = np.sqrt(lam * np.einsum("...i,...i->...", xi, xi)[..., None] + bxi**2)
        return ((lam * xi + bxi * b) / np.where(root > 0, root, 1.0) - b) / lam

    return MetricSpec(
        name=f"randers({', '.join(f'{c:g}' for c in b)})",
        kind=MetricKind.finsler,
        dim=dim,
        charts=[box_chart(lo, hi, region=region)],
        norm_fn=norm_fn,
        norm_grad_fn=norm_grad_fn,
        norm_hessian_fn=norm_hessian_fn,
        dual_norm_fn=dual_norm_fn,
        dual_grad_fn=dual_grad_fn,
        homogeneous=True,
        params={"b": b.tolist()},
    )


def _inversion(x):
    x = np.asarray(x, dtype=float)
    return x / np.sum(x * x, axis=-1, keepdims=True)


def _inversion_jacobian(x):
    r2 = float(x @ x)
    return (np.eye(x.shape[0]) * r2 - 2 * np.outer(x, x)) / r2**2


def sphere_chart(R: float = 1.0, handoff_radius: float = 1.2, box: float = 1.3, region_radius: float = 1.25):
    """Round sphere of radius R on two stereographic charts glued by inversion.

    Chart 0 puts the north pole at the origin, chart 1 the south pole.
    """
    if R <= 0:
        raise ConfigError(f"sphere radius must be positive, got {R}")
    if not handoff_radius < region_radius < box:
        raise ConfigError("sphere charts need handoff radius < region radius < box half-width")

    def tensor(x):
        rho2 = np.sum(np.asarray(x) ** 2, axis=-1)
        factor = 4 * R**2 / (1 + rho2) ** 2
        return factor[..., None, None] * np.eye(2)

    def tensor_grad(x):
        x = np.asarray(x, dtype=float)
        rho2 = np.sum(x**2, axis=-1)
        factor = -16 * R**2 / (1 + rho2) ** 3
        return (factor[..., None] * x)[..., :, None, None] * np.eye(2)

    charts = []
    for index, name in enumerate(("north", "south")):
        charts.append(
            Chart(
                name=name,
                lo=np.full(2, -box),
                hi=np.full(2, box),
                region=lambda x: np.sum(np.asarray(x) ** 2, axis=-1) <= region_radius**2,
                handoff_radius=handoff_radius,
                handoff_to=1 - index,
                transition=_inversion,
                transition_jacobian=_inversion_jacobian,
            )
        )
    return MetricSpec(
        name=f"sphere_chart({R:g})",
        kind=MetricKind.riemannian,
        dim=2,
        charts=charts,
        tensor=tensor,
        tensor_grad=tensor_grad,
        params={"R": R},
    )


def surface_of_revolution(profile: Callable, dprofile: Optional[Callable] = None, lo=None, hi=None) -> MetricSpec:
    """Induced metric of the graph z = profile(r) over the plane chart: g = I + grad f grad f^T."""
    lo = np.full(2, -2.0) if lo is None else lo
    hi = np.full(2, 2.0) if hi is None else hi
    if dprofile is None:

        def dprofile(r):
            step = 1e-6 * (1 + np.abs(r))
            return (profile(r + step) - profile(r - step)) / (2 * step)

    def tensor(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        slope = np.where(r > 0, dprofile(r) / safe, 0.0)
        grad = slope[..., None] * x
        return np.eye(2) + grad[..., :, None] * grad[..., None, :]

    return MetricSpec(
        name="surface_of_revolution",
        kind=MetricKind.riemannian,
        dim=2,
        charts=[box_chart(lo, hi)],
        tensor=tensor,
    )


def hamiltonian_of(metric: MetricSpec) -> MetricSpec:
    """Hamiltonian-kind copy of a riemannian metric: H(x, xi) = sqrt(xi g^-1 xi)."""
    if metric.kind != MetricKind.riemannian:
        raise ConfigError(f"{metric.name} is not riemannian")
    tensor = metric.tensor

    def hamiltonian_fn(x, xi):
        ginv = np.linalg.inv(tensor(x))
        return np.sqrt(np.einsum("...i,...ij,...j->...", xi, ginv, xi))

    return MetricSpec(
        name=f"hamiltonian({metric.name})",
        kind=MetricKind.hamiltonian,
        dim=metric.dim,
        charts=metric.charts,
        hamiltonian_fn=hamiltonian_fn,
        homogeneous=metric.homogeneous,
    )


def sample_convexity(m: MetricSpec, points, directions) -> List[str]:
    """Check the fundamental tensor at sampled (point, direction) pairs; returns problems found."""
    problems = []
    for x in points:
        p = ChartPoint(x)
        for v in directions:
            try:
                osculating_riemannian(m, p, Tangent(p, v))
            except ConfigError as e:
                problems.append(str(e))
            except NumericalError as e:
                problems.append(f"convexity check failed at {p}: {e}")
    if problems:
        logging.warning(f"{len(problems)} convexity problems found for {m.name}")
    return problems
