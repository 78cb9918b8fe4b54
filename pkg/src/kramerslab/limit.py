"""Two-state jump limit: the entropic cost S, its duals, and profile lifts.

In the limit the density collapses onto the two wells and the whole
evolution is a single nonincreasing function z(t), the mass of the left
state, together with its flux j = -z'. The rate functional is
2 int S(j|z) dt with S the Boltzmann cost. This module houses that
functional, its test-function dual, the one-dimensional variational
characterization of S, and the profile lift (u0, b0) used by the
recovery construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateDenominator,
    GridMismatch,
    InfiniteCost,
    RangeError,
    StructureError,
    ViolationError,
)
from .quadrature import gauss_legendre_rule
from .transform import Bump


@dataclass(frozen=True, eq=False)
class TwoStatePath:
    """Nonincreasing left-state mass z on a time grid, with its flux.

    j is the per-interval forward difference -dz/dt, stored explicitly so
    that a path object carries the exact discrete continuity relation; the
    constructor rejects any j that is not bitwise that difference.
    """

    t_nodes: np.ndarray
    z: np.ndarray
    j: np.ndarray
    z0: float

    def __post_init__(self):
        if self.t_nodes.ndim != 1 or self.t_nodes.size < 2:
            raise StructureError("need at least two time nodes")
        if self.t_nodes[0] != 0.0:
            raise StructureError("time grid must start at 0")
        if np.any(np.diff(self.t_nodes) <= 0):
            raise StructureError("time grid must increase strictly")
        if self.z.shape != self.t_nodes.shape:
            raise StructureError("z must live on the time nodes")
        if np.any(self.z < 0) or np.any(self.z > 1):
            raise StructureError("z must take values in [0, 1]")
        if np.any(np.diff(self.z) > 0):
            raise StructureError("z must be nonincreasing")
        if self.z[0] != self.z0:
            raise StructureError("z(0) != z0")
        expected = -np.diff(self.z) / np.diff(self.t_nodes)
        if self.j.shape != expected.shape or not np.array_equal(self.j, expected):
            raise StructureError("j is not the discrete flux of z")

    @classmethod
    def from_z(cls, t_nodes, z) -> "TwoStatePath":
        t_nodes = np.asarray(t_nodes, dtype=float)
        z = np.asarray(z, dtype=float)
        j = -np.diff(z) / np.diff(t_nodes)
        return cls(t_nodes, z, j, float(z[0]))

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t_nodes)

    @property
    def horizon(self) -> float:
        return float(self.t_nodes[-1])


def s_function(a, b):
    """Boltzmann cost S(a|b): a log(a/b) - a + b, with its closed extension.

    S(0|b) = b for b > 0; every other boundary or negative case is +inf,
    including S(0|0).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scalar = a.ndim == 0 and b.ndim == 0
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    a, b = np.broadcast_arrays(a, b)
    out = np.full(a.shape, np.inf)
    pos = (a > 0) & (b > 0)
    out[pos] = a[pos] * np.log(a[pos] / b[pos]) - a[pos] + b[pos]
    azero = (a == 0) & (b > 0)
    out[azero] = b[azero]
    return float(out[0]) if scalar else out


def rate_limit(path: TwoStatePath) -> float:
    """2 sum S(j_k | z_k) dt_k, left endpoints, +inf if any term diverges."""
    vals = s_function(path.j, path.z[:-1])
    return float(2.0 * np.sum(vals * path.dt))


def first_order_test_function(path: TwoStatePath):
    """f* = log(j/z) sampled at the left endpoints, linearly interpolated.

    This is the stationarity point of the dual integrand, so feeding it to
    rate_limit_dual reproduces rate_limit exactly, cell by cell.
    """
    if np.any(path.j <= 0) or np.any(path.z[:-1] <= 0):
        raise RangeError("first-order test function needs j > 0 and z > 0")
    t_left = path.t_nodes[:-1]
    f_vals = np.log(path.j / path.z[:-1])

    def f(t):
        return float(np.interp(t, t_left, f_vals))

    return f


def rate_limit_dual(path: TwoStatePath, f_family) -> float:
    """Best dual value 2 sum [j f - z (e^f - 1)] dt over the family.

    Evaluated before summation by parts, with f read only at the left
    endpoints; this is identical to the f'-form with a backward difference
    and f(T) snapped to zero, so every family member is admissible and the
    value is dominated by rate_limit cell by cell.
    """
    if not f_family:
        raise StructureError("empty test family")
    t_left = path.t_nodes[:-1]
    z_left = path.z[:-1]
    best = -np.inf
    for f in f_family:
        fk = np.asarray([float(f(t)) for t in t_left])
        val = 2.0 * float(
            np.sum((path.j * fk - z_left * np.expm1(fk)) * path.dt)
        )
        best = max(best, val)
    primal = rate_limit(path)
    if best > primal + 1e-9 * max(1.0, abs(primal)):
        raise ViolationError("dual value exceeded the primal rate")
    return best


# ---------------------------------------------------------------------------
# the variational characterization of S on [-1/2, 1/2]


def optimal_u(j, z, y):
    """Minimizing profile (1/2 - y)(j (y + 1/2) + z (1/2 - y))."""
    y = np.asarray(y, dtype=float)
    return (0.5 - y) * (j * (y + 0.5) + z * (0.5 - y))


def _log_mean_with_partials(a: np.ndarray, b: np.ndarray):
    """Log-mean of positive arrays and its two partial derivatives."""
    m = 0.5 * (a + b)
    h = 0.5 * (a - b)
    small = np.abs(a - b) <= 1e-6 * np.maximum(a, b)
    lam = np.empty_like(m)
    da = np.empty_like(m)
    db = np.empty_like(m)
    lam[small] = m[small] - h[small] ** 2 / (3.0 * m[small])
    da[small] = 0.5 - h[small] / (3.0 * m[small])
    db[small] = 0.5 + h[small] / (3.0 * m[small])
    big = ~small
    r = np.log(a[big] / b[big])
    d = a[big] - b[big]
    lam[big] = d / r
    da[big] = (r - d / a[big]) / r**2
    db[big] = (d / b[big] - r) / r**2
    return lam, da, db


def _default_y_grid(n_cells: int = 256) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n_cells + 1)
    return 0.5 - (1.0 - t) ** 2


def s_variational(j: float, z: float, y_grid=None):
    """Minimize (1/4) int (j + u')^2 / u over profiles from z down to 0.

    The last cell is pinned to the closed-form minimizer (the integrand is
    0/0 at y = 1/2 for any other profile), interior nodes carry log-values
    optimized by a quasi-Newton descent from the closed-form initializer,
    and each linear cell is integrated exactly through the log-mean.
    Returns (value, u_nodes).
    """
    j, z = float(j), float(z)
    if j < 0:
        raise InfiniteCost("negative flux has infinite cost")
    if z <= 0:
        raise InfiniteCost("no admissible profile starts at z = 0")
    if y_grid is None:
        y = _default_y_grid()
    else:
        y = np.asarray(y_grid, dtype=float)
        if y.ndim != 1 or y.size < 4:
            raise GridMismatch("y grid needs at least four nodes")
        if y[0] != -0.5 or y[-1] != 0.5 or np.any(np.diff(y) <= 0):
            raise GridMismatch("y grid must increase strictly from -1/2 to 1/2")
    n = y.size - 1
    dy = np.diff(y)
    u_pin = float(optimal_u(j, z, y[n - 1]))

    # exact cost of the closed-form profile on the pinned last cell
    nodes, weights = gauss_legendre_rule(8)
    mid, half = 0.5 * (y[n - 1] + 0.5), 0.5 * (0.5 - y[n - 1])
    yq = mid + half * nodes
    aq = j * (yq + 0.5) + z * (0.5 - yq)
    tail = float(np.sum(weights * (0.5 - yq) * (j - z) ** 2 / aq) * half)

    def assemble(xi):
        u = np.empty(n)  # nodes 0 .. n-1; the final node is u = 0
        u[0] = z
        u[1 : n - 1] = np.exp(xi)
        u[n - 1] = u_pin
        return u

    def cost_and_grad(xi):
        u = assemble(xi)
        ul, ur = u[:-1], u[1:]
        gaps = dy[: n - 1]
        slope = (ur - ul) / gaps
        lam, dl, dr = _log_mean_with_partials(ul, ur)
        excess = j + slope
        cells = 0.25 * excess**2 * gaps / lam
        dc_l = -0.5 * excess / lam - cells * dl / lam
        dc_r = 0.5 * excess / lam - cells * dr / lam
        grad_u = np.zeros(n)
        grad_u[:-1] += dc_l
        grad_u[1:] += dc_r
        return float(cells.sum()), grad_u[1 : n - 1] * u[1 : n - 1]

    xi0 = np.log(optimal_u(j, z, y[1 : n - 1]))
    res = minimize(cost_and_grad, xi0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    value, _ = cost_and_grad(res.x)
    u_nodes = np.concatenate([assemble(res.x), [0.0]])
    return value + tail, u_nodes


# ---------------------------------------------------------------------------
# regularization and the profile lift


def regularize_z(path: TwoStatePath, eta: float) -> TwoStatePath:
    """Energy-dense approximation with inf z > 0 and inf(-z') > 0.

    Constant extension in time, mollification at scale eta with the smooth
    bump kernel, then the convex combination with the affine ramp
    1/2 - t/(4T). Joint convexity of S keeps the rate within C eta plus
    (1 - eta) times the input rate.
    """
    if not 0.0 < eta < 1.0:
        raise RangeError("eta must lie in (0, 1)")
    if not np.isfinite(rate_limit(path)):
        raise InfiniteCost("regularization needs a finite-rate path")
    t = path.t_nodes
    horizon = path.horizon
    kernel = Bump(0.0, eta)
    s_nodes, s_weights = gauss_legendre_rule(32)
    s = eta * s_nodes
    w = s_weights * kernel.value(s)
    w = w / w.sum()
    smoothed = np.array([
        float(np.sum(w * np.interp(tk - s, t, path.z))) for tk in t
    ])
    ramp = 0.5 - t / (4.0 * horizon)
    return TwoStatePath.from_z(t, eta * ramp + (1.0 - eta) * smoothed)


def limit_profile(z, j, t: float, y):
    """Profile lift (u0, b0) at time t on the cross-section grid y.

    u0 is the optimal parabola of the variational problem for (j(t), z(t));
    b0 = (j + d_y u0)/u0 = 2 (j - z) / (j (y + 1/2) + z (1/2 - y)).
    """
    zt, jt = float(z(t)), float(j(t))
    if zt == 0.0 and jt == 0.0:
        raise DegenerateDenominator("profile undefined when j = z = 0")
    y = np.asarray(y, dtype=float)
    u0 = optimal_u(jt, zt, y)
    with np.errstate(divide="ignore"):
        b0 = 2.0 * (jt - zt) / (jt * (y + 0.5) + zt * (0.5 - y))
    return u0, b0
