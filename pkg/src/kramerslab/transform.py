"""Committor-type coordinate change and its tabulated inverse.

The slow variable y(x) integrates e^{V/eps} outward from the saddle,
scaled so its plateaus sit near -1/2 and +1/2 over the two wells. Both y
and the mollified committor phi span hundreds of orders of magnitude in
slope, so the table keeps sign and log magnitude separately and always
accumulates away from the saddle, where every contribution adds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, MonotonicityError, RangeError
from .functionals import DensityFluxPath
from .measures import EpsilonContext, log_mass_on
from .potential import LandmarkReport
from .quadrature import gauss_legendre_rule, cumulative_log_integral, refined_edges

RADIUS_SHRINK = 0.999


class Bump:
    """C^infinity bump exp(1 - 1/(1-s^2)) on (center-radius, center+radius).

    Normalized to value 1 at the center. The log form never underflows
    inside the support, which is what the measure integrals consume.
    """

    def __init__(self, center: float, radius: float):
        if radius <= 0:
            raise RangeError("bump radius must be positive")
        self.center = float(center)
        self.radius = float(radius)

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius

    def log_value(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.radius
        out = np.full(s.shape, -np.inf)
        inside = np.abs(s) < 1.0
        si = s[inside]
        out[inside] = 1.0 - 1.0 / (1.0 - si * si)
        return out

    def value(self, x):
        return np.exp(self.log_value(x))


def bump_pair(report: LandmarkReport) -> tuple[Bump, Bump]:
    """Bumps centered on the wells, supported inside the deep-level sets."""
    ra = RADIUS_SHRINK * min(report.x_a - report.b_a.lo, report.b_a.hi - report.x_a)
    rb = RADIUS_SHRINK * min(report.x_b - report.b_b.lo, report.b_b.hi - report.x_b)
    return Bump(report.x_a, ra), Bump(report.x_b, rb)


def _insert_nodes(grid: np.ndarray, points, snap: float = 1e-12) -> np.ndarray:
    """Grid with the given points as exact nodes, snapping near-duplicates."""
    grid = np.asarray(grid, dtype=float).copy()
    for p in points:
        tol = snap * max(1.0, abs(p))
        i = int(np.argmin(np.abs(grid - p)))
        if abs(grid[i] - p) <= tol:
            grid[i] = p
        else:
            grid = np.insert(grid, np.searchsorted(grid, p), p)
    if np.any(np.diff(grid) <= 0):
        raise GridMismatch("node insertion produced a nonincreasing grid")
    return grid


def _merge_micro_gaps(grid: np.ndarray, keep, tol: float) -> np.ndarray:
    """Drop plain nodes closer than tol to a neighbor.

    Micro-gaps appear where refinement clusters collide with background
    nodes; their cumulative contributions fall below one ulp of the
    running log-integral and would trip the stall guard spuriously. Nodes
    in keep always survive.
    """
    keep_set = set(float(p) for p in keep)
    out = [grid[0]]
    for x in grid[1:]:
        if x - out[-1] >= tol:
            out.append(x)
        elif float(x) in keep_set:
            if float(out[-1]) in keep_set:
                out.append(x)
            else:
                out[-1] = x
    return np.asarray(out)


@dataclass(frozen=True, eq=False)
class TransformTable:
    """Tabulated slow variable, committor, and their shared bookkeeping.

    sign_y and log_abs_y hold y = sign * exp(log_abs) over x_nodes, exact
    zero at the saddle node. m_values is the cumulative difference of the
    two normalized bump densities: identically 1 between the wells and
    identically 0 beyond the right bump, both exact by construction.
    """

    ctx: EpsilonContext
    chi_a: Bump
    chi_b: Bump
    x_nodes: np.ndarray
    i_saddle: int
    sign_y: np.ndarray
    log_abs_y: np.ndarray
    m_values: np.ndarray
    phi_values: np.ndarray
    log_n_a: float
    log_n_b: float
    log_scale: float

    @property
    def y_values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.sign_y * np.exp(self.log_abs_y)

    @property
    def coverage(self) -> tuple[float, float]:
        return float(self.x_nodes[0]), float(self.x_nodes[-1])


def _side_log_cumulative(log_f, xs_away: np.ndarray) -> np.ndarray:
    """Log cumulative integral along a grid ordered away from the saddle."""
    cum = cumulative_log_integral(log_f, xs_away, order=8)
    inc = np.diff(cum[1:])
    if np.any(inc[np.isfinite(cum[2:])] <= 0):
        raise MonotonicityError(
            "cumulative integral stalled in double precision; eps too small for this table"
        )
    return cum


def build_transform(ctx: EpsilonContext, n_nodes: int = 4096) -> TransformTable:
    rep = ctx.landmarks
    chi_a, chi_b = bump_pair(rep)
    lo, hi = rep.x_a - 2.0, rep.x_bplus + 2.0

    grid = refined_edges(lo, hi, [rep.x_a, rep.x_0, rep.x_b], ctx.eps,
                         base_panels=max(16, n_nodes - 69))
    special = [rep.x_0, rep.x_a, rep.x_b, *chi_a.support, *chi_b.support]
    merge_tol = 0.3 * (hi - lo) / max(16, n_nodes - 69)
    grid = _merge_micro_gaps(_insert_nodes(grid, special), special, tol=merge_tol)
    i0 = int(np.searchsorted(grid, rep.x_0))
    if grid[i0] != rep.x_0:
        raise GridMismatch("saddle failed to land on a node")

    eps = ctx.eps
    log_scale = ctx.log_z_left - np.log(eps) - ctx.log_tau

    # signed log of y, accumulated outward on each side of the saddle
    log_ev = lambda x: ctx.spec.v(x) / eps
    cum_r = _side_log_cumulative(log_ev, grid[i0:])
    xs_l = grid[: i0 + 1]
    cum_l = _side_log_cumulative(lambda s: ctx.spec.v(-s) / eps, -xs_l[::-1])
    log_abs_y = np.concatenate([cum_l[::-1][:-1], cum_r]) + log_scale
    sign_y = np.concatenate([
        np.full(i0, -1.0), [0.0], np.full(grid.size - i0 - 1, 1.0),
    ])
    log_abs_y[i0] = -np.inf

    # cumulative normalized bump masses; saturation beyond each support is
    # float-exact because the increments there are exactly -inf
    cum_a = cumulative_log_integral(lambda x: chi_a.log_value(x) - ctx.spec.v(x) / eps, grid)
    cum_b = cumulative_log_integral(lambda x: chi_b.log_value(x) - ctx.spec.v(x) / eps, grid)
    ia_end = int(np.searchsorted(grid, chi_a.support[1]))
    ib_end = int(np.searchsorted(grid, chi_b.support[1]))
    log_n_a = float(cum_a[ia_end])
    log_n_b = float(cum_b[ib_end])
    m_values = np.exp(cum_a - log_n_a) - np.exp(cum_b - log_n_b)

    # phi integrates M e^{V/eps} outward exactly like y
    def log_m_interp(x):
        m = np.interp(x, grid, m_values)
        with np.errstate(divide="ignore"):
            return np.where(m > 0, np.log(np.maximum(m, 1e-320)), -np.inf)

    phi_r = cumulative_log_integral(lambda x: log_ev(x) + log_m_interp(x), grid[i0:])
    phi_l = cumulative_log_integral(
        lambda s: log_ev(-s) + log_m_interp(-s), -xs_l[::-1]
    )
    log_abs_phi = np.concatenate([phi_l[::-1][:-1], phi_r]) + log_scale
    with np.errstate(over="ignore"):
        phi_values = sign_y * np.exp(np.minimum(log_abs_phi, 10.0))

    return TransformTable(
        ctx=ctx,
        chi_a=chi_a,
        chi_b=chi_b,
        x_nodes=grid,
        i_saddle=i0,
        sign_y=sign_y,
        log_abs_y=log_abs_y,
        m_values=m_values,
        phi_values=phi_values,
        log_n_a=log_n_a,
        log_n_b=log_n_b,
        log_scale=log_scale,
    )


# ---------------------------------------------------------------------------
# pointwise evaluation


def _gap_log_integral(log_f, lo: float, hi: float, order: int = 8) -> float:
    """Log integral of exp(log_f) over one short gap."""
    if hi <= lo:
        return -np.inf
    nodes, weights = gauss_legendre_rule(order)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    vals = np.asarray(log_f(mid + half * nodes), dtype=float)
    peak = float(np.max(vals))
    if not np.isfinite(peak):
        return -np.inf
    return peak + np.log(np.sum(weights * np.exp(vals - peak)) * half)


def _eval_signed_log(table: TransformTable, x, node_logs: np.ndarray, log_f):
    """Signed log of an outward cumulative at arbitrary points.

    The base node is chosen between the saddle and x, so the remaining gap
    contribution always adds; no cancellation can occur.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    lo, hi = table.coverage
    if np.any((x < lo) | (x > hi)):
        raise RangeError("point outside the tabulated range")
    grid = table.x_nodes
    i0 = table.i_saddle
    sign = np.empty(x.shape)
    log_abs = np.empty(x.shape)
    for k, xv in enumerate(x):
        if xv == grid[i0]:
            sign[k], log_abs[k] = 0.0, -np.inf
            continue
        if xv > grid[i0]:
            j = int(np.searchsorted(grid, xv, side="right")) - 1
            base = node_logs[j]
            gap = _gap_log_integral(log_f, grid[j], xv) + table.log_scale
            sign[k] = 1.0
        else:
            j = int(np.searchsorted(grid, xv, side="left"))
            base = node_logs[j]
            gap = _gap_log_integral(log_f, xv, grid[j]) + table.log_scale
            sign[k] = -1.0
        log_abs[k] = np.logaddexp(base, gap)
    if scalar:
        return float(sign[0]), float(log_abs[0])
    return sign, log_abs


def y_eval_log(table: TransformTable, x):
    """(sign, log|y|) at arbitrary points inside the table coverage."""
    eps = table.ctx.eps
    return _eval_signed_log(
        table, x, table.log_abs_y, lambda s: table.ctx.spec.v(s) / eps
    )


def y_eval(table: TransformTable, x):
    """The slow variable itself; may overflow to +-inf at the far tails."""
    sign, log_abs = y_eval_log(table, x)
    with np.errstate(over="ignore"):
        return sign * np.exp(log_abs)


def phi_eval(table: TransformTable, x):
    """The mollified committor, a bounded increasing function."""
    eps = table.ctx.eps

    def log_f(s):
        m = np.interp(s, table.x_nodes, table.m_values)
        with np.errstate(divide="ignore"):
            logm = np.where(m > 0, np.log(np.maximum(m, 1e-320)), -np.inf)
        return table.ctx.spec.v(s) / eps + logm

    sign, log_abs = _eval_signed_log(table, x, _phi_node_logs(table), log_f)
    return sign * np.exp(np.minimum(log_abs, 10.0))


def _phi_node_logs(table: TransformTable) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(
            np.abs(table.phi_values) > 0, np.log(np.abs(table.phi_values)), -np.inf
        )


def phi_prime(table: TransformTable, x):
    """phi'(x) = scale e^{V/eps} M(x), exact zero beyond the right bump."""
    x = np.asarray(x, dtype=float)
    m = np.interp(x, table.x_nodes, table.m_values)
    out = np.zeros(x.shape)
    pos = m > 0
    out[pos] = np.exp(
        table.log_scale + table.ctx.spec.v(x[pos]) / table.ctx.eps + np.log(m[pos])
    )
    return out


def invert_y(table: TransformTable, y):
    """x with y(x) = y, by safeguarded Newton on the log of |y|."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    grid, i0 = table.x_nodes, table.i_saddle
    eps = table.ctx.eps
    out = np.empty(y.shape)
    for k, yv in enumerate(y):
        if yv == 0.0:
            out[k] = grid[i0]
            continue
        target = np.log(abs(yv))
        if yv > 0:
            side_logs = table.log_abs_y[i0:]
            side_x = grid[i0:]
        else:
            side_logs = table.log_abs_y[: i0 + 1][::-1]
            side_x = grid[: i0 + 1][::-1]
        if target > side_logs[-1]:
            raise RangeError("target beyond the tabulated range of y")
        j = int(np.searchsorted(side_logs[1:], target)) + 1
        lo_x, hi_x = sorted((float(side_x[j - 1]), float(side_x[j])))
        x_cur = float(
            np.interp(target, [side_logs[j - 1], side_logs[j]],
                      sorted((lo_x, hi_x), reverse=bool(yv < 0)))
        ) if np.isfinite(side_logs[j - 1]) else 0.5 * (lo_x + hi_x)
        x_cur = min(max(x_cur, lo_x), hi_x)
        increasing = yv > 0  # |y| grows to the right of the root iff y > 0
        for _ in range(80):
            _, cur_log = y_eval_log(table, x_cur)
            h = cur_log - target
            if h == 0.0:
                break
            # keep a valid bracket around the root
            if (h > 0) == increasing:
                hi_x = x_cur
            else:
                lo_x = x_cur
            dlog = table.log_scale + table.ctx.spec.v(x_cur) / eps - cur_log
            step = -h / np.exp(dlog) * (1.0 if increasing else -1.0)
            x_new = x_cur + step
            if not (lo_x <= x_new <= hi_x):
                x_new = 0.5 * (lo_x + hi_x)
            if abs(x_new - x_cur) <= 1e-13 * max(1.0, abs(x_cur)):
                x_cur = x_new
                break
            x_cur = x_new
        out[k] = x_cur
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# measure bookkeeping in the slow variable


def log_g_hat(table: TransformTable, x):
    """Log density of the transformed left-normalized invariant measure.

    In closed form log g = log(eps tau) - 2V(x)/eps - 2 log Z_left,
    expressed at the source point x = x(y).
    """
    ctx = table.ctx
    return (
        np.log(ctx.eps) + ctx.log_tau - 2.0 * ctx.spec.v(np.asarray(x, float)) / ctx.eps
        - 2.0 * ctx.log_z_left
    )


def g_hat_band_mass(table: TransformTable, band: float) -> float:
    """Transformed reference mass of |y| <= band, via the source measure."""
    x_lo = invert_y(table, -band)
    x_hi = invert_y(table, band)
    return float(np.exp(log_mass_on(table.ctx, (x_lo, x_hi), norm="left")))


def verify_g_closed_form(table: TransformTable, band: float = 0.45, panels: int = 48):
    """Quadrature of the closed-form density across a y-band vs source mass.

    The left side integrates g(y) dy panel by panel, inverting y at every
    quadrature node; the right side is the corresponding x-interval mass
    from the measure layer. Agreement exercises the closed form, the
    inversion, and the normalization together.
    """
    nodes, weights = gauss_legendre_rule(16)
    edges = np.linspace(-band, band, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        ys = mid + half * nodes
        xs = invert_y(table, ys)
        total += float(np.sum(weights * np.exp(log_g_hat(table, xs))) * half)
    return total, g_hat_band_mass(table, band)


def mu_sup_deviation(table: TransformTable) -> float:
    """Sup distance between the scaled signed density and the left bump.

    The two bump supports are disjoint, so the sup is the larger of the
    a-side normalization error and the b-side leakage.
    """
    ctx = table.ctx
    dev_a = abs(np.expm1(ctx.log_z_left - table.log_n_a))
    dev_b = np.exp(ctx.log_z_left - table.log_n_b)
    return float(max(dev_a, dev_b))


# ---------------------------------------------------------------------------
# paths across the change of variables


def pushforward_pair(table: TransformTable, path: DensityFluxPath) -> DensityFluxPath:
    """Image of a density-flux path under y: masses and fluxes carry over.

    Interface fluxes are copied bitwise onto the image interfaces; cell
    masses survive up to one rounding in the stored density, since the
    path keeps rho = m / width. The continuity residual therefore moves
    by a few ulps of the cell masses at most.
    """
    y_edges = np.asarray(y_eval(table, path.x_nodes), dtype=float)
    if not np.all(np.isfinite(y_edges)):
        raise RangeError("path grid reaches the overflow region of y")
    if np.any(np.diff(y_edges) <= 0):
        raise MonotonicityError("image grid collapsed in double precision")
    rho_hat = path.masses / np.diff(y_edges)[None, :]
    return DensityFluxPath(
        path.t_nodes.copy(), y_edges, rho_hat, path.flux.copy(), ce_tol=path.ce_tol
    )


def pullback_pair(table: TransformTable, path: DensityFluxPath) -> DensityFluxPath:
    """Preimage of a y-space path, the exact inverse of pushforward_pair."""
    x_edges = np.asarray(invert_y(table, path.x_nodes), dtype=float)
    if np.any(np.diff(x_edges) <= 0):
        raise MonotonicityError("preimage grid collapsed in double precision")
    rho = path.masses / np.diff(x_edges)[None, :]
    return DensityFluxPath(
        path.t_nodes.copy(), x_edges, rho, path.flux.copy(), ce_tol=path.ce_tol
    )


# ---------------------------------------------------------------------------
# dual test functions built from the committor


def committor_test_function(table: TransformTable, f):
    """b(t,x) = 2 d/dx log(1 + psi(t)(1/2 - phi(x))) with psi = e^{-f} - 1.

    f is a C^1 function of time with f(T) = 0 in the intended use; any
    bounded f gives an admissible test function since psi > -1 always.
    """
    grid = table.x_nodes
    phi_grid = table.phi_values

    def b(t, x):
        x = np.asarray(x, dtype=float)
        psi = np.expm1(-float(f(t)))
        phi = np.interp(x, grid, phi_grid)
        dphi = phi_prime(table, x)
        return -2.0 * psi * dphi / (1.0 + psi * (0.5 - phi))

    return b


def committor_family(table: TransformTable, f_list) -> list:
    return [committor_test_function(table, f) for f in f_list]
