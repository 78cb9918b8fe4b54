"""Pre-limit rate functionals and the inequality diagnostics.

The rate functional of a density-flux path is evaluated in four ways that
must agree: primal (quadratic form), dual (sup over test functions), an
energy/kinetic/slope split, and a transformed-coordinate form. The split
uses an entropy-mean time collocation chosen so the chain-rule cross term
telescopes exactly at the discrete level; see rate_edp_split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBound,
    EmptyMeasure,
    RangeError,
    SingularDensity,
    StructureError,
    ViolationError,
)
from .measures import EpsilonContext, gamma_log_density

# cells below this mass are exact zeros for the singular-density convention
ZERO_MASS = 1e-300


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Nonnegative cell masses on an edge grid."""

    edges: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        if self.edges.ndim != 1 or self.w.shape != (self.edges.size - 1,):
            raise StructureError("measure needs n+1 edges for n cell masses")
        if np.any(np.diff(self.edges) <= 0):
            raise StructureError("measure edges must increase strictly")
        if np.any(self.w < 0):
            raise StructureError("negative cell mass")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def region_mask(self, region) -> np.ndarray:
        lo, hi = float(region[0]), float(region[1])
        c = self.centers
        return (c >= lo) & (c <= hi)

    def mass(self, region=None) -> float:
        if region is None:
            return float(self.w.sum())
        return float(self.w[self.region_mask(region)].sum())


@dataclass(frozen=True, eq=False)
class DensityFluxPath:
    """Time-dependent density and flux on a fixed cell grid.

    x_nodes are the n+1 cell edges; rho holds densities (mass per unit
    length) for every time slice including the initial one; flux[k] is the
    flux across each of the n+1 interfaces during the window
    [t_nodes[k], t_nodes[k+1]], outermost interfaces closed.
    """

    t_nodes: np.ndarray
    x_nodes: np.ndarray
    rho: np.ndarray
    flux: np.ndarray
    ce_tol: float = 1e-9

    def __post_init__(self):
        k1, n1 = self.t_nodes.size, self.x_nodes.size
        if self.rho.shape != (k1, n1 - 1):
            raise StructureError(f"rho shape {self.rho.shape} != {(k1, n1 - 1)}")
        if self.flux.shape != (k1 - 1, n1):
            raise StructureError(f"flux shape {self.flux.shape} != {(k1 - 1, n1)}")
        if np.any(np.diff(self.t_nodes) <= 0) or np.any(np.diff(self.x_nodes) <= 0):
            raise StructureError("grids must increase strictly")

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.x_nodes)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.x_nodes[:-1] + self.x_nodes[1:])

    @property
    def masses(self) -> np.ndarray:
        return self.rho * self.widths[None, :]

    def slice_measure(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.x_nodes, self.masses[k])

    def check(self, mass_tol: float = 1e-10) -> None:
        """Unit mass per slice and the discrete continuity equation."""
        m = self.masses
        if np.any(np.abs(m.sum(axis=1) - 1.0) > mass_tol):
            worst = float(np.abs(m.sum(axis=1) - 1.0).max())
            raise StructureError(f"slice mass deviates from 1 by {worst:.3e}")
        if np.any(self.rho < 0):
            raise StructureError("negative density")
        dt = np.diff(self.t_nodes)[:, None]
        resid = (m[1:] - m[:-1]) + dt * np.diff(self.flux, axis=1)
        worst = float(np.abs(resid).max())
        if worst > self.ce_tol:
            raise StructureError(
                f"continuity residual {worst:.3e} above declared tolerance {self.ce_tol:.1e}"
            )


@dataclass(frozen=True)
class EdpSplit:
    """Energy difference, kinetic term, metric slope, and their sum."""

    delta_e: float
    kinetic: float
    slope: float
    total: float


# ---------------------------------------------------------------------------
# entropy, Fisher information, and the inequality suite


def relative_entropy(mu: DiscreteMeasure, nu: DiscreteMeasure, region) -> float:
    """Localized entropy of mu against nu over the region.

    Value is sum f log f dnu - mu(A) log(mu(A)/nu(A)) with f the discrete
    density; +inf when mu charges a cell where nu vanishes. The subtracted
    term makes the functional (1,0)-homogeneous, so neither measure needs
    to be normalized.
    """
    if mu.edges.shape != nu.edges.shape or np.any(mu.edges != nu.edges):
        raise StructureError("measures live on different grids")
    mask = mu.region_mask(region)
    wm, wn = mu.w[mask], nu.w[mask]
    if np.any((wn <= ZERO_MASS) & (wm > ZERO_MASS)):
        return np.inf
    mm, nn = float(wm.sum()), float(wn.sum())
    if mm <= ZERO_MASS:
        return 0.0
    pos = wm > ZERO_MASS
    body = float(np.sum(wm[pos] * np.log(wm[pos] / wn[pos])))
    return body - mm * np.log(mm / nn)


def fisher_information(mu: DiscreteMeasure, nu: DiscreteMeasure, region) -> float:
    """2 int |d sqrt(f)|^2 dnu over the region, central differences.

    The square root is taken before differentiating; one-sided stencils at
    the region boundary. +inf when absolute continuity fails on the region.
    """
    if mu.edges.shape != nu.edges.shape or np.any(mu.edges != nu.edges):
        raise StructureError("measures live on different grids")
    mask = mu.region_mask(region)
    if not mask.any():
        return 0.0
    wm, wn = mu.w[mask], nu.w[mask]
    if np.any((wn <= ZERO_MASS) & (wm > ZERO_MASS)):
        return np.inf
    x = mu.centers[mask]
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(wn > ZERO_MASS, wm / np.maximum(wn, ZERO_MASS), 0.0)
    root = np.sqrt(f)
    if root.size < 2:
        return 0.0
    grad = np.gradient(root, x)
    return float(2.0 * np.sum(grad * grad * wn))


def energy(ctx: EpsilonContext, rho_slice: DiscreteMeasure) -> float:
    """Plain relative entropy of the slice against the invariant measure.

    Unlike relative_entropy this keeps the normalization term: the
    reference cell masses carry the true partition function, so a slice
    confined to one well scores the barrier content. +inf where the slice
    charges cells whose reference mass underflows.
    """
    g = np.exp(gamma_log_density(ctx, rho_slice.centers, "full")) * rho_slice.widths
    m = rho_slice.w
    if np.any((g <= ZERO_MASS) & (m > ZERO_MASS)):
        return np.inf
    pos = m > ZERO_MASS
    return float(np.sum(m[pos] * np.log(m[pos] / g[pos])))


def lsi_check(mu: DiscreteMeasure, w_potential, region, alpha: float):
    """Both sides of the log-Sobolev inequality alpha*E <= R and the ratio.

    The caller certifies W'' >= alpha on the region. Mass of mu outside the
    region makes the Fisher side +inf (the inequality holds trivially). A
    discrete violation beyond 1e-6 relative signals a bug, not mathematics.
    """
    if alpha <= 0:
        raise RangeError("alpha must be positive")
    c = mu.centers
    nu = DiscreteMeasure(mu.edges, np.exp(-np.asarray(w_potential(c), float)) * mu.widths)
    outside = float(mu.w[~mu.region_mask(region)].sum())
    ent = relative_entropy(mu, nu, region)
    if outside > ZERO_MASS:
        fisher = np.inf
    else:
        fisher = fisher_information(mu, nu, region)
    if np.isfinite(fisher) and alpha * ent > fisher * (1.0 + 1e-6) + 1e-300:
        raise ViolationError(
            f"discrete LSI violated: alpha*entropy={alpha * ent:.6e} > fisher={fisher:.6e}"
        )
    ratio = 0.0 if fisher == 0.0 else (alpha * ent / fisher if np.isfinite(fisher) else 0.0)
    return ent, fisher, ratio


def concentration_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, a1, a2) -> float:
    """(E(mu|nu,a2) + mu(a2)) / log(nu(a2)/nu(a1)), an upper bound for mu(a1)."""
    if not (a2[0] <= a1[0] and a1[1] <= a2[1]):
        raise RangeError("a1 must be contained in a2")
    n1, n2 = nu.mass(a1), nu.mass(a2)
    if n1 <= 0:
        raise DegenerateBound("nu gives no mass to the inner interval")
    if n2 <= n1:
        raise DegenerateBound("log(nu(a2)/nu(a1)) <= 0 carries no information")
    bound = (relative_entropy(mu, nu, a2) + mu.mass(a2)) / np.log(n2 / n1)
    if mu.mass(a1) > bound + 1e-12:
        raise ViolationError(
            f"concentration bound violated: mass {mu.mass(a1):.6e} > bound {bound:.6e}"
        )
    return float(bound)


def poincare_check(f_values: np.ndarray, x_nodes: np.ndarray, mu_weights: np.ndarray, interval):
    """sup-norm bound against gradient plus measure-weighted L2 norms.

    Returns (lhs, rhs) = (max f^2, C*(int f'^2 dx + mu(I)^{-1} int f^2 dmu))
    with C = max(2(b-a), 2/(b-a), 2). f is piecewise linear through
    (x_nodes, f_values); mu sits as atoms on the nodes. For that class the
    bound is exact, so the assertion tolerates only roundoff.
    """
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise RangeError("empty interval")
    sel = (x_nodes >= a) & (x_nodes <= b)
    if sel.sum() < 2:
        raise RangeError("interval contains fewer than two nodes")
    x, fv, wv = x_nodes[sel], f_values[sel], mu_weights[sel]
    mass = float(wv.sum())
    if mass <= 0:
        raise EmptyMeasure("mu vanishes on the interval")
    lhs = float(np.max(fv * fv))
    slopes = np.diff(fv) / np.diff(x)
    grad_sq = float(np.sum(slopes * slopes * np.diff(x)))
    l2_mu = float(np.sum(fv * fv * wv))
    width = b - a
    c = max(2.0 * width, 2.0 / width, 2.0)
    rhs = c * (grad_sq + l2_mu / mass)
    if lhs > rhs * (1.0 + 1e-12) + 1e-300:
        raise ViolationError(f"Poincare bound violated: {lhs:.6e} > {rhs:.6e}")
    return lhs, rhs


# ---------------------------------------------------------------------------
# rate functionals


def _bernoulli(s: np.ndarray) -> np.ndarray:
    """B(s) = s/(e^s - 1), stable across all double-precision inputs."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    tiny = np.abs(s) < 1e-5
    out[tiny] = 1.0 - s[tiny] / 2.0 + s[tiny] ** 2 / 12.0
    big_pos = s > 500.0
    out[big_pos] = s[big_pos] * np.exp(-s[big_pos])
    big_neg = s < -500.0
    out[big_neg] = -s[big_neg]
    rest = ~(tiny | big_pos | big_neg)
    out[rest] = s[rest] / np.expm1(s[rest])
    return out


def _log_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Logarithmic mean, zero whenever either argument vanishes."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    out = np.zeros(np.broadcast(a, b).shape)
    pos = (a > 0) & (b > 0)
    av, bv = np.broadcast_to(a, out.shape)[pos], np.broadcast_to(b, out.shape)[pos]
    mid = 0.5 * (av + bv)
    d = (av - bv) / np.maximum(mid, ZERO_MASS)
    near = np.abs(d) < 1e-6
    vals = np.empty(av.shape)
    vals[near] = mid[near] * (1.0 - d[near] ** 2 / 24.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals[~near] = (av[~near] - bv[~near]) / (np.log(av[~near]) - np.log(bv[~near]))
    out[pos] = vals
    return out


@dataclass(frozen=True, eq=False)
class _WindowData:
    """Per-window collocated state shared by all rate evaluations."""

    dt: np.ndarray            # (K,)
    gaps: np.ndarray          # (N-1,) center distances
    t_mid: np.ndarray         # (K,)
    x_int: np.ndarray         # (N-1,) interface positions
    u_tilde: np.ndarray       # (K, N) entropy-mean relative density
    g_int: np.ndarray         # (N-1,) interface invariant weight
    rho_int: np.ndarray       # (K, N-1) interface density weight
    j_int: np.ndarray         # (K, N-1) interior interface fluxes
    drift_flux: np.ndarray    # (K, N-1) the stencil flux of u_tilde


def _collocate(ctx: EpsilonContext, path: DensityFluxPath) -> _WindowData:
    """Entropy-mean time collocation on every cell and window.

    u_tilde is the value making delta(m log(m/g)) = delta(m) (log u + 1)
    exact per cell, i.e. the time point where the chain rule for the
    entropy holds with no remainder; the arithmetic mean takes over when
    delta(m) is negligible. This is what makes the EDP split reproduce the
    primal form to machine precision.
    """
    path.check()
    bmax = max(float(np.abs(path.flux[:, 0]).max()), float(np.abs(path.flux[:, -1]).max()))
    if bmax > path.ce_tol:
        raise StructureError(f"outermost interfaces must be closed, got flux {bmax:.3e}")
    h = path.widths
    c = path.centers
    g_dens = np.exp(gamma_log_density(ctx, c, "full"))
    g_mass = g_dens * h
    m = path.masses
    if np.any((g_mass <= ZERO_MASS) & (m > ZERO_MASS)):
        raise SingularDensity("path charges cells where the reference weight underflows")
    u = np.divide(m, g_mass, out=np.zeros_like(m), where=g_mass > ZERO_MASS)

    m0, m1 = m[:-1], m[1:]
    u0, u1 = u[:-1], u[1:]
    dm = m1 - m0

    def xlog(mm, uu):
        out = np.zeros_like(mm)
        pos = mm > ZERO_MASS
        out[pos] = mm[pos] * np.log(uu[pos])
        return out

    d_ent = xlog(m1, u1) - xlog(m0, u0)
    mid = 0.5 * (u0 + u1)
    scale = np.maximum(m0, m1)
    safe = np.abs(dm) > 1e-12 * np.maximum(scale, ZERO_MASS)
    u_tilde = np.where(safe, np.exp(np.where(safe, d_ent / np.where(safe, dm, 1.0), 0.0) - 1.0), mid)
    u_tilde = np.where((m0 <= ZERO_MASS) & (m1 <= ZERO_MASS), 0.0, u_tilde)

    v = ctx.spec.v(c)
    s = (v[1:] - v[:-1]) / ctx.eps
    g_int = g_dens[:-1] * _bernoulli(s)
    gaps = np.diff(c)
    rho_int = g_int[None, :] * _log_mean(u_tilde[:, :-1], u_tilde[:, 1:])

    tau = np.exp(ctx.log_tau)
    coef = ctx.eps * tau * g_int / gaps
    drift_flux = -coef[None, :] * (u_tilde[:, 1:] - u_tilde[:, :-1])

    return _WindowData(
        dt=np.diff(path.t_nodes),
        gaps=gaps,
        t_mid=0.5 * (path.t_nodes[:-1] + path.t_nodes[1:]),
        x_int=path.x_nodes[1:-1],
        u_tilde=u_tilde,
        g_int=g_int,
        rho_int=rho_int,
        j_int=path.flux[:, 1:-1],
        drift_flux=drift_flux,
    )


def _quadratic_sum(ctx: EpsilonContext, wd: _WindowData, numerator: np.ndarray) -> float:
    """(1/2) sum dt gap numerator^2/(eps tau rho), with the zero convention.

    On interfaces whose density weight is an exact zero: a nonzero path
    flux is an input error (SingularDensity); a nonzero stencil residual
    means the path has a hard support edge and the value is +inf.
    """
    w = ctx.eps * np.exp(ctx.log_tau) * wd.rho_int
    dead = w <= ZERO_MASS
    if np.any(dead):
        scale = max(float(np.abs(wd.j_int).max()), 1.0)
        if np.any(np.abs(wd.j_int[dead]) > 1e-14 * scale):
            raise SingularDensity("nonzero flux against vanishing density")
        num_scale = max(float(np.abs(numerator).max()), 1.0)
        if np.any(np.abs(numerator[dead]) > 1e-14 * num_scale):
            return np.inf
    vals = np.zeros_like(numerator)
    vals[~dead] = numerator[~dead] ** 2 / w[~dead]
    return float(0.5 * np.sum(wd.dt[:, None] * wd.gaps[None, :] * vals))


def rate_primal(ctx: EpsilonContext, path: DensityFluxPath) -> float:
    """(1/2) int int |j - J(rho)|^2 / (eps tau rho), stencil-matched.

    J(rho) is the exponentially fitted drift-diffusion flux on the same
    interfaces the solver uses, evaluated at the collocated state, so a
    solver-produced path scores the pure time-discretization residual.
    """
    wd = _collocate(ctx, path)
    return _quadratic_sum(ctx, wd, wd.j_int - wd.drift_flux)


def rate_edp_split(ctx: EpsilonContext, path: DensityFluxPath) -> EdpSplit:
    """Energy difference plus kinetic plus slope, telescoping exactly.

    With the entropy-mean collocation the cross term of the primal square
    equals the discrete energy difference through the continuity equation
    (summation by parts in space, telescoping in time), so
    total = rate_primal holds to machine precision by construction rather
    than by quadrature accuracy.
    """
    wd = _collocate(ctx, path)
    kinetic = _quadratic_sum(ctx, wd, wd.j_int)
    slope = _quadratic_sum(ctx, wd, wd.drift_flux)
    e0 = energy(ctx, path.slice_measure(0))
    e1 = energy(ctx, path.slice_measure(path.t_nodes.size - 1))
    delta_e = e1 - e0
    return EdpSplit(delta_e=delta_e, kinetic=kinetic, slope=slope, total=delta_e + kinetic + slope)


def rate_dual(ctx: EpsilonContext, path: DensityFluxPath, test_family) -> float:
    """Largest dual value over a finite family of test functions b(t, x).

    Evaluated in the pre-integration-by-parts form
    sum [ b (j - J(rho)) - (eps tau rho / 2) b^2 ], which is dominated by
    the primal value cell by cell for every b, so the sandwich
    rate_dual <= rate_primal is structural and cannot be broken by
    discretization.
    """
    wd = _collocate(ctx, path)
    w = ctx.eps * np.exp(ctx.log_tau) * wd.rho_int
    resid = wd.j_int - wd.drift_flux
    if not test_family:
        raise StructureError("empty test family")
    best = -np.inf
    for b_fn in test_family:
        b = np.asarray(
            [np.asarray(b_fn(t, wd.x_int), dtype=float) for t in wd.t_mid]
        )
        if b.shape != resid.shape:
            raise StructureError("test function returned a wrong-shaped array")
        integrand = b * resid - 0.5 * w * b * b
        val = float(np.sum(wd.dt[:, None] * wd.gaps[None, :] * integrand))
        best = max(best, val)
    return best


def reconstruct_optimal_b(ctx: EpsilonContext, path: DensityFluxPath):
    """The maximizing test function (j - J)/(eps tau rho) as an interpolant."""
    wd = _collocate(ctx, path)
    w = ctx.eps * np.exp(ctx.log_tau) * wd.rho_int
    with np.errstate(divide="ignore", invalid="ignore"):
        b_star = np.where(w > ZERO_MASS, (wd.j_int - wd.drift_flux) / np.maximum(w, ZERO_MASS), 0.0)
    t_mid, x_int = wd.t_mid, wd.x_int

    def b_fn(t, x):
        k = int(np.clip(np.searchsorted(t_mid, t), 0, t_mid.size - 1))
        return np.interp(np.asarray(x, float), x_int, b_star[k])

    return b_fn


def rate_transformed(
    u_hat: np.ndarray, j_hat: np.ndarray, y_nodes: np.ndarray, dt: np.ndarray | None = None
) -> float:
    """(1/2) int |j + du/dy|^2 / u on interior interfaces of the y-grid.

    u_hat holds cell values against the transformed reference weight,
    j_hat interface fluxes including the outermost ones (which are only
    inspected, not differenced). One-dimensional input gives the
    instantaneous dissipation; stacked windows need dt weights. Interface
    densities are arithmetic means, matching the transformed solver's
    stencil, so pure-diffusion fluxes score exactly zero.
    """
    u_hat = np.asarray(u_hat, float)
    j_hat = np.asarray(j_hat, float)
    y_nodes = np.asarray(y_nodes, float)
    if u_hat.ndim == 1:
        u_hat = u_hat[None, :]
        j_hat = j_hat[None, :]
        dt_w = np.ones(1)
    else:
        if dt is None:
            raise StructureError("stacked windows need dt weights")
        dt_w = np.asarray(dt, float)
        if dt_w.shape != (u_hat.shape[0],):
            raise StructureError("dt must hold one weight per window")
    n = y_nodes.size - 1
    if u_hat.shape[1] != n or j_hat.shape[1] != n + 1:
        raise StructureError("u needs n cells and j needs n+1 interfaces")
    centers = 0.5 * (y_nodes[:-1] + y_nodes[1:])
    gaps = np.diff(centers)
    du = np.diff(u_hat, axis=1) / gaps[None, :]
    u_int = 0.5 * (u_hat[:, :-1] + u_hat[:, 1:])
    resid = j_hat[:, 1:-1] + du
    dead = u_int <= ZERO_MASS
    if np.any(dead):
        if np.any(np.abs(j_hat[:, 1:-1][dead]) > 1e-14 * max(float(np.abs(j_hat).max()), 1.0)):
            raise SingularDensity("nonzero transformed flux against vanishing density")
        if np.any(np.abs(resid[dead]) > 1e-14 * max(float(np.abs(resid).max()), 1.0)):
            return np.inf
    vals = np.zeros_like(resid)
    vals[~dead] = resid[~dead] ** 2 / u_int[~dead]
    return float(0.5 * np.sum(dt_w[:, None] * gaps[None, :] * vals))


def fundamental_estimate(ctx: EpsilonContext, path: DensityFluxPath) -> float:
    """eps * (slope integral + sup of the energy along the path)."""
    split = rate_edp_split(ctx, path)
    sup_e = max(
        energy(ctx, path.slice_measure(k)) for k in range(path.t_nodes.size)
    )
    return ctx.eps * (split.slope + sup_e)
