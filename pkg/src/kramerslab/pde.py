"""Theta-scheme solvers for the slow Fokker-Planck flow and its
transformed weighted-heat form.

Both solvers share one conservative skeleton: interface fluxes
J_i = p_i w_i - q_i w_{i+1} with closed outermost interfaces, a
tridiagonal theta step, and a state update written directly in flux
form so the output path satisfies the discrete continuity equation to
roundoff. The x-solver fits p and q exponentially to the local
equilibrium, which keeps the discretized invariant measure stationary
at any resolution; the y-solver uses plain central coefficients whose
arithmetic-mean drift is the stencil rate_transformed assumes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import (
    ConfigError,
    NegativityError,
    RangeError,
    StabilityError,
    StructureError,
)
from .functionals import DensityFluxPath, _bernoulli
from .measures import EpsilonContext, gamma_log_density, log_mass_on
from .transform import TransformTable, invert_y

_log = logging.getLogger(__name__)

# Cells whose reference mass falls below this are frozen out of the flow.
# The threshold sits ten orders above the functional layer's zero-mass
# convention, so a frozen cell is a dead cell for every consumer and a
# live cell never trips the singular-density guard there.
DEAD_MASS = 1e-290


@dataclass(frozen=True)
class SolverConfig:
    """Grid, step size, and implicitness for one solver run.

    theta = 1 is backward Euler, the default; 1/2 is Crank-Nicolson.
    The schemes here are linear, so max_newton only caps hypothetical
    outer iterations and is kept for interface symmetry; tol guards the
    residual of each tridiagonal solve.
    """

    grid: np.ndarray
    dt: float
    theta: float = 1.0
    tol: float = 1e-9
    max_newton: int = 8

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 1 or grid.size < 4:
            raise ConfigError("grid must be a 1-d array of at least 4 edges")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("grid edges must increase strictly")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError(f"theta={self.theta} outside [1/2, 1]")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_newton < 1:
            raise ConfigError("max_newton must be at least 1")


def _time_grid(horizon: float, dt: float) -> np.ndarray:
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    n = max(1, int(np.ceil(horizon / dt - 1e-9)))
    return np.linspace(0.0, horizon, n + 1)


def _flux_full(p: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """All n+1 interface fluxes of a state vector, closed ends exact zeros."""
    out = np.zeros(w.size + 1)
    out[1:-1] = p * w[:-1] - q * w[1:]
    return out


def _banded(mass: np.ndarray, p: np.ndarray, q: np.ndarray, dt_theta: float) -> np.ndarray:
    """Matrix of the implicit step, mass + dt theta div(flux), banded storage."""
    n = mass.size
    ab = np.zeros((3, n))
    ab[1] = mass + dt_theta * (np.concatenate([[0.0], q]) + np.concatenate([p, [0.0]]))
    ab[0, 1:] = -dt_theta * q
    ab[2, :-1] = -dt_theta * p
    return ab


def _check_solve(mass, p, q, dt_theta, w_new, rhs, tol):
    lhs = mass * w_new + dt_theta * np.diff(_flux_full(p, q, w_new))
    err = float(np.max(np.abs(lhs - rhs)))
    if not err <= tol * max(1.0, float(np.max(np.abs(rhs)))):
        raise StabilityError(f"linear solve residual {err:.3e} above tolerance")


# ---------------------------------------------------------------------------
# slow Fokker-Planck flow in the original coordinate


def default_x_grid(ctx: EpsilonContext, n_cells: int = 1024) -> np.ndarray:
    """Uniform edges spanning the truncated reference domain."""
    return np.linspace(float(ctx.quad_grid[0]), float(ctx.quad_grid[-1]), n_cells + 1)


def stationary_profile(ctx: EpsilonContext, x_nodes) -> np.ndarray:
    """Cell densities of the discretized invariant measure, unit mass."""
    x_nodes = np.asarray(x_nodes, dtype=float)
    h = np.diff(x_nodes)
    c = 0.5 * (x_nodes[:-1] + x_nodes[1:])
    m = np.exp(gamma_log_density(ctx, c, "full")) * h
    return m / m.sum() / h


def left_equilibrated_profile(ctx: EpsilonContext, x_nodes) -> np.ndarray:
    """Reference shape confined to the left basin, unit mass.

    The natural start for watching the slow exchange: within the basin
    the profile is already equilibrated, so the left mass follows the
    two-state decay from the first step instead of an intra-well
    transient.
    """
    x_nodes = np.asarray(x_nodes, dtype=float)
    h = np.diff(x_nodes)
    c = 0.5 * (x_nodes[:-1] + x_nodes[1:])
    m = np.exp(gamma_log_density(ctx, c, "full")) * h
    m[c >= ctx.landmarks.x_0] = 0.0
    if not m.sum() > 0:
        raise RangeError("grid has no cells left of the saddle")
    return m / m.sum() / h


def solve_fp_x(
    ctx: EpsilonContext, rho0, cfg: SolverConfig, horizon: float
) -> DensityFluxPath:
    """Exponentially fitted conservative theta scheme for the slow flow.

    Interface coefficients come from the Bernoulli function of the
    potential increment, and wherever both neighboring reference masses
    are representable the leftward coefficient is locked to the exact
    detailed-balance ratio, so the discretized invariant measure is a
    fixed point up to log-evaluation roundoff. Cells whose reference
    mass underflows DEAD_MASS are frozen: their interfaces are closed
    and any initial mass there is dropped once, which keeps the
    relative density evaluable for every functional downstream.

    Each step advances the cell masses by the divergence of the
    theta-state flux, in the cells' own floating point scale, so the
    returned fluxes satisfy the discrete continuity equation with the
    returned densities to per-cell roundoff and tail cells leave zero
    as soon as any flux reaches them. The fluxes are the discrete
    drift-diffusion fluxes -tau (eps drho + rho dV) in exponentially
    fitted form.
    """
    x = cfg.grid
    uncovered = 1.0 - float(np.exp(log_mass_on(ctx, (float(x[0]), float(x[-1])), norm="full")))
    if not uncovered < 1e-9:
        raise RangeError(f"grid leaves {uncovered:.3e} of the reference mass uncovered")
    h = np.diff(x)
    c = 0.5 * (x[:-1] + x[1:])
    n = c.size
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (n,):
        raise StructureError(f"rho0 must hold {n} cell densities")
    if np.any(rho0 < 0):
        raise RangeError("rho0 must be nonnegative")
    m = rho0 * h
    total = float(m.sum())
    if abs(total - 1.0) > 1e-8:
        raise RangeError(f"rho0 mass {total:.8f} is not 1")
    m = m / total

    log_gm = gamma_log_density(ctx, c, "full") + np.log(h)
    live = log_gm > np.log(DEAD_MASS)
    if not live.any():
        raise RangeError("no representable reference mass on this grid")
    lost = float(m[~live].sum())
    if lost > 0.0:
        m = np.where(live, m, 0.0)
        m = m / m.sum()
        _log.info(
            "dropped %.3e initial mass in %d frozen cells", lost, int((~live).sum())
        )

    log_eps_tau = float(np.log(ctx.eps) + ctx.log_tau)
    if log_eps_tau > 700.0:
        raise RangeError("eps tau overflows double precision at this eps")
    eps_tau = float(np.exp(log_eps_tau))
    v = ctx.spec.v(c)
    s = np.diff(v) / ctx.eps
    delta = np.diff(c)
    p = eps_tau * _bernoulli(s) / (delta * h[:-1])
    q = eps_tau * _bernoulli(-s) / (delta * h[1:])
    dlog = log_gm[:-1] - log_gm[1:]
    lock = live[:-1] & live[1:] & (np.abs(dlog) < 700.0)
    q = np.where(lock, p * np.exp(np.where(lock, dlog, 0.0)), q)
    open_ = live[:-1] & live[1:]
    p = np.where(open_, p, 0.0)
    q = np.where(open_, q, 0.0)

    t_nodes = _time_grid(horizon, cfg.dt)
    dt = float(t_nodes[1] - t_nodes[0])
    steps = t_nodes.size - 1
    theta = cfg.theta
    ab = _banded(np.ones(n), p, q, dt * theta)
    rho = np.empty((steps + 1, n))
    flux = np.empty((steps, n + 1))
    rho[0] = m / h
    clipped = 0.0
    for k in range(steps):
        # increment form: the same theta step for every theta, and a right
        # side that vanishes identically on discrete steady states
        rhs = -dt * np.diff(_flux_full(p, q, m))
        delta_m = solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(delta_m)):
            raise StabilityError("linear solve produced non-finite masses")
        _check_solve(np.ones(n), p, q, dt * theta, delta_m, rhs, cfg.tol)
        j_full = _flux_full(p, q, m + theta * delta_m)
        m_new = m - dt * np.diff(j_full)
        rho_new = m_new / h
        worst = float(rho_new.min())
        if worst < 0.0:
            if worst < -1e-12:
                raise NegativityError(f"density reached {worst:.3e}")
            target = float(m_new.sum())
            m_new = np.clip(m_new, 0.0, None)
            m_new *= target / m_new.sum()
            rho_new = m_new / h
            clipped -= worst
        m = m_new
        rho[k + 1] = rho_new
        flux[k] = j_full
    if clipped > 0.0:
        _log.warning("clipped negative densities totalling %.3e", clipped)
    return DensityFluxPath(t_nodes, x.copy(), rho, flux, ce_tol=1e-10)


# ---------------------------------------------------------------------------
# weighted heat flow in the transformed coordinate


def default_y_grid(n_cells: int = 1024, margin: float = 0.25) -> np.ndarray:
    """Uniform window with a fixed overhang beyond the limit interval.

    The transformed reference measure has fat algebraic tails in y, so
    no affordable window captures them to quadrature accuracy; the
    overhang is instead sized to keep both plateaus of the slow
    variable strictly inside for every ladder eps, and the truncation
    is validated against the x-side solver by the commutation test.
    """
    if margin <= 0:
        raise ConfigError("margin must be positive")
    return np.linspace(-0.5 - margin, 0.5 + margin, n_cells + 1)


def g_hat_masses(table: TransformTable, y_nodes) -> np.ndarray:
    """Reference cell masses of the transformed measure on a y-grid.

    Each cell mass is the left-normalized source mass of its preimage,
    an exact pushforward rather than a midpoint quadrature of the
    closed-form density.
    """
    y_nodes = np.asarray(y_nodes, dtype=float)
    x_edges = np.asarray(invert_y(table, y_nodes), dtype=float)
    if np.any(np.diff(x_edges) <= 0):
        raise StructureError("window preimage collapsed in double precision")
    ctx = table.ctx
    out = np.empty(y_nodes.size - 1)
    for i in range(out.size):
        out[i] = np.exp(log_mass_on(ctx, (x_edges[i], x_edges[i + 1]), norm="left"))
    if np.any(out <= 0.0):
        raise StructureError("transformed reference mass vanished in a window cell")
    return out


def tapered_drift(y_nodes, drift_b):
    """Interface sampler applying the solver's cutoff and taper to a drift.

    The drift is read only strictly inside the open limit interval and
    ramped to zero over the cell adjacent to each endpoint, the discrete
    stand-in for the sharp indicator, so the interface flux stays single
    valued at the endpoints. Returns a function of time yielding one
    value per interior interface.
    """
    y = np.asarray(y_nodes, dtype=float)
    c = 0.5 * (y[:-1] + y[1:])
    delta = np.diff(c)
    y_int = y[1:-1]
    inside = np.abs(y_int) < 0.5
    taper = np.clip((0.5 - np.abs(y_int)) / delta, 0.0, 1.0)
    taper[~inside] = 0.0

    def at(t: float) -> np.ndarray:
        b = np.zeros(y_int.size)
        if inside.any():
            vals = np.asarray(drift_b(float(t), y_int[inside]), dtype=float)
            b[inside] = vals * taper[inside]
        return b

    return at


@dataclass(frozen=True, eq=False)
class TransformedPath:
    """Solution of the transformed flow: relative densities and fluxes.

    u_hat[k] holds cell values against the reference masses g_masses;
    j_hat[k] the interface fluxes during window k with closed outermost
    interfaces, the same continuity convention as DensityFluxPath.
    """

    t_nodes: np.ndarray
    y_nodes: np.ndarray
    u_hat: np.ndarray
    j_hat: np.ndarray
    g_masses: np.ndarray

    def __post_init__(self):
        k1, n1 = self.t_nodes.size, self.y_nodes.size
        if self.u_hat.shape != (k1, n1 - 1):
            raise StructureError(f"u_hat shape {self.u_hat.shape} != {(k1, n1 - 1)}")
        if self.j_hat.shape != (k1 - 1, n1):
            raise StructureError(f"j_hat shape {self.j_hat.shape} != {(k1 - 1, n1)}")
        if self.g_masses.shape != (n1 - 1,):
            raise StructureError("g_masses must hold one value per cell")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.y_nodes[:-1] + self.y_nodes[1:])

    def mass(self, k: int) -> float:
        return float(np.dot(self.u_hat[k], self.g_masses))

    def to_density_path(self, ce_tol: float = 1e-9) -> DensityFluxPath:
        """The same path as plain densities against Lebesgue length."""
        rho = self.u_hat * self.g_masses[None, :] / np.diff(self.y_nodes)[None, :]
        return DensityFluxPath(
            self.t_nodes.copy(), self.y_nodes.copy(), rho, self.j_hat.copy(),
            ce_tol=ce_tol,
        )


def solve_weighted_heat_y(
    table: TransformTable, u0_hat, drift_b, cfg: SolverConfig, horizon: float
) -> TransformedPath:
    """Theta scheme for g du/dt = d/dy (du/dy - b u) on a closed window.

    The drift enters implicitly, read at the new time level of every
    step through tapered_drift; interface values of u are arithmetic
    means. An interface Peclet number reaching one would break the sign
    structure of the matrix, so it raises StabilityError rather than
    silently losing positivity. With drift zero this is the transformed
    slow flow itself. The returned window fluxes are the theta-state
    fluxes used in the mass update, so at theta = 1 they are exactly
    the new-level formula -du/dy + b u and the continuity residual is
    pure roundoff.
    """
    y = cfg.grid
    g = g_hat_masses(table, y)
    n = g.size
    u0 = np.asarray(u0_hat, dtype=float)
    if u0.shape != (n,):
        raise StructureError(f"u0_hat must hold {n} cell values")
    if np.any(u0 <= 0.0):
        raise RangeError("u0_hat must be strictly positive")
    c = 0.5 * (y[:-1] + y[1:])
    delta = np.diff(c)
    d = 1.0 / delta
    b_at = tapered_drift(y, drift_b)

    t_nodes = _time_grid(horizon, cfg.dt)
    dt = float(t_nodes[1] - t_nodes[0])
    steps = t_nodes.size - 1
    theta = cfg.theta
    u = np.empty((steps + 1, n))
    j = np.empty((steps, n + 1))
    u[0] = u0
    m = g * u0
    clipped = 0.0
    for k in range(steps):
        b = b_at(t_nodes[k + 1])
        peclet = 0.5 * float(np.max(np.abs(b) * delta))
        if not peclet < 1.0:
            raise StabilityError(f"interface Peclet number {peclet:.3f} reached 1")
        p = d + 0.5 * b
        q = d - 0.5 * b
        u_old = u[k]
        rhs = -dt * np.diff(_flux_full(p, q, u_old))
        delta_u = solve_banded((1, 1), _banded(g, p, q, dt * theta), rhs)
        if not np.all(np.isfinite(delta_u)):
            raise StabilityError("linear solve produced non-finite values")
        _check_solve(g, p, q, dt * theta, delta_u, rhs, cfg.tol)
        j_full = _flux_full(p, q, u_old + theta * delta_u)
        m = m - dt * np.diff(j_full)
        u_new = m / g
        worst = float(u_new.min())
        if worst < 0.0:
            if worst < -1e-12:
                raise NegativityError(f"transformed density reached {worst:.3e}")
            target = float(m.sum())
            m = g * np.clip(u_new, 0.0, None)
            m *= target / m.sum()
            u_new = m / g
            clipped -= worst
        u[k + 1] = u_new
        j[k] = j_full
    if clipped > 0.0:
        _log.warning("clipped negative transformed densities totalling %.3e", clipped)
    return TransformedPath(t_nodes, y.copy(), u, j, g)
