"""Particle-level view: diffusion ensembles, exit times, and jump clocks.

Three layers of the same story. simulate_sde integrates the time-rescaled
diffusion for a cloud of particles and reduces it to binned density-flux
pairs plus basin occupation; mfpt_monte_carlo measures the unscaled exit
time from the shallow well against the closed-form double integral of
mfpt_quadrature; simulate_jump runs the limiting one-way jump process.

Randomness is counter-based throughout: particle i of a run with seed s
draws from Philox keyed by (s, i) on a fixed chunk schedule, so every
result is bit-identical for a given configuration and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetExceeded,
    QuadratureError,
    RangeError,
    StabilityError,
    StructureError,
)
from .functionals import DensityFluxPath
from .limit import TwoStatePath
from .measures import EpsilonContext, _truncation_point
from .potential import LandmarkReport, PotentialSpec
from .quadrature import cumulative_log_integral, log_integral, refined_edges

# level offset (in units of eps) defining the window particles may visit;
# the equilibrium weight beyond it is below e^-16 of the well weight
LEVEL_MARGIN = 16.0
# the stability heuristic: dt * tau * sup|V''| may not exceed this
STABILITY_BUDGET = 0.1
# noise is materialized in blocks of at most this many steps per particle,
# shrunk for large ensembles to cap the block at a few million floats
CHUNK_STEPS = 2048


def _chunk_steps(n: int) -> int:
    return max(16, min(CHUNK_STEPS, 4_000_000 // max(n, 1)))


def _stream(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def core_window(
    spec: PotentialSpec, report: LandmarkReport, eps: float
) -> tuple[float, float, float]:
    """Confinement window (lo, hi) and sup|V''| on it.

    The window is the connected sublevel set V <= barrier + 16 eps probed
    on a dense grid over the declared domain; excursions beyond it carry
    equilibrium weight below e^-16 relative to the wells, so clipping
    there is statistically invisible while keeping the explicit scheme's
    stability constant finite.
    """
    grid = np.linspace(spec.domain_hint.lo, spec.domain_hint.hi, 4001)
    cut = report.barrier + LEVEL_MARGIN * eps
    inside = grid[spec.v(grid) <= cut]
    if inside.size < 2:
        raise RangeError("sublevel window is empty on the declared domain")
    lo, hi = float(inside[0]), float(inside[-1])
    probe = np.linspace(lo, hi, 4001)
    return lo, hi, float(np.abs(spec.ddv(probe)).max())


def stable_dt(ctx: EpsilonContext, safety: float = 1.0) -> float:
    """Largest step passing the simulate_sde stability check, times safety."""
    _, _, sup_dd = core_window(ctx.spec, ctx.landmarks, ctx.eps)
    tau = float(np.exp(ctx.log_tau))
    return safety * STABILITY_BUDGET / (tau * sup_dd)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Binned summary of a diffusion ensemble; trajectories are not kept.

    pair holds occupation fractions per bin (as densities against bin
    width) and the net signed interface crossings per window, which
    satisfy the discrete continuity equation exactly by construction.
    basin_fraction is the share of particles left of the saddle at each
    snapshot; mfpt_samples the first times particles reached x_b, for
    those that did within the horizon.
    """

    n: int
    seed: int
    pair: DensityFluxPath
    basin_fraction: np.ndarray
    mfpt_samples: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise StructureError("ensemble needs at least one particle")
        sums = self.pair.masses.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-12:
            raise StructureError("binned slices must account for every particle")
        if self.basin_fraction.shape != self.pair.t_nodes.shape:
            raise StructureError("basin fractions live on the snapshot nodes")
        if np.any(self.basin_fraction < 0) or np.any(self.basin_fraction > 1):
            raise StructureError("basin fractions must lie in [0, 1]")
        if self.mfpt_samples.size and not np.all(self.mfpt_samples > 0):
            raise StructureError("passage times must be positive")


def simulate_sde(
    ctx: EpsilonContext,
    x0: float,
    dt: float,
    T: float,
    n: int,
    seed: int,
    n_bins: int = 64,
    n_windows: int = 60,
) -> EnsembleResult:
    """Euler scheme for dX = -tau V'(X) dt + sqrt(2 eps tau) dB, n particles.

    Positions are clipped to the confinement window of core_window (the
    documented accounting convention: every particle always sits in some
    bin). Fluxes are net signed interface crossings per window, obtained
    by telescoping the per-step crossing counts, so the binned pair obeys
    the discrete continuity equation to rounding.
    """
    if n < 1:
        raise RangeError("need at least one particle")
    if dt <= 0 or T <= 0:
        raise RangeError("dt and T must be positive")
    if ctx.log_tau > 700.0:
        raise RangeError("tau overflows double precision at this eps")
    lo, hi, sup_dd = core_window(ctx.spec, ctx.landmarks, ctx.eps)
    if not lo <= x0 <= hi:
        raise RangeError("x0 must start inside the confinement window")
    tau = float(np.exp(ctx.log_tau))
    if dt * tau * sup_dd > STABILITY_BUDGET * (1.0 + 1e-9):
        raise StabilityError(
            f"dt*tau*sup|V''| = {dt * tau * sup_dd:.3g} exceeds "
            f"{STABILITY_BUDGET}; the explicit step would amplify"
        )

    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    dt_eff = T / n_steps
    snap = np.unique(np.round(np.linspace(0, n_steps, n_windows + 1)).astype(int))
    t_nodes = snap * dt_eff
    x_edges = np.linspace(lo, hi, n_bins + 1)
    width = (hi - lo) / n_bins
    x_b, x_0 = ctx.landmarks.x_b, ctx.landmarks.x_0
    sig = np.sqrt(2.0 * ctx.eps * tau * dt_eff)
    dv = ctx.spec.dv

    def occupancy(x: np.ndarray) -> np.ndarray:
        idx = np.clip(((x - lo) / width).astype(int), 0, n_bins - 1)
        return np.bincount(idx, minlength=n_bins) / n

    gens = [_stream(seed, i) for i in range(n)]
    x = np.full(n, float(x0))
    fp = np.full(n, np.inf)
    frac = np.empty((snap.size, n_bins))
    basin = np.empty(snap.size)
    frac[0] = occupancy(x)
    basin[0] = float(np.mean(x < x_0))
    ptr = 1
    k = 0
    chunk = _chunk_steps(n)
    while k < n_steps:
        c = min(chunk, n_steps - k)
        noise = np.empty((n, c))
        for i, g in enumerate(gens):
            noise[i] = g.standard_normal(c)
        for s in range(c):
            x += -tau * dv(x) * dt_eff + sig * noise[:, s]
            np.clip(x, lo, hi, out=x)
            k += 1
            newly = (x >= x_b) & ~np.isfinite(fp)
            if newly.any():
                fp[newly] = k * dt_eff
            if ptr < snap.size and k == snap[ptr]:
                frac[ptr] = occupancy(x)
                basin[ptr] = float(np.mean(x < x_0))
                ptr += 1

    # net rightward crossings per interface telescope to the difference of
    # cumulative occupations, which makes the continuity equation exact
    right_of = np.cumsum(frac[:, ::-1], axis=1)[:, ::-1]
    flux = np.zeros((snap.size - 1, n_bins + 1))
    flux[:, 1:-1] = np.diff(right_of[:, 1:], axis=0) / np.diff(t_nodes)[:, None]
    rho = frac / width
    pair = DensityFluxPath(t_nodes, x_edges, rho, flux, ce_tol=1e-10)
    return EnsembleResult(
        n=n,
        seed=seed,
        pair=pair,
        basin_fraction=basin,
        mfpt_samples=fp[np.isfinite(fp)],
    )


def mfpt_monte_carlo(
    spec: PotentialSpec,
    report: LandmarkReport,
    eps: float,
    n: int,
    seed: int,
) -> tuple[float, float]:
    """Sample mean and standard error of the exit time from x_a to x_b.

    Unscaled dynamics dY = -V' dt + sqrt(2 eps) dB started at x_a and
    absorbed at x_b. Each step applies the Brownian-bridge crossing
    probability exp(-(b-y0)(b-y1)/(eps dt)), which removes the sqrt(dt)
    overshoot bias of naive threshold absorption. Any path outliving 100
    times the predicted scale aborts the run with BudgetExceeded carrying
    the censored count.
    """
    if n < 1:
        raise RangeError("need at least one particle")
    if eps <= 0:
        raise RangeError("eps must be positive")
    lo, hi, sup_dd = core_window(spec, report, eps)
    log_tau = (
        np.log(2.0 * np.pi)
        - 0.5 * (np.log(spec.ddv(report.x_a)) + np.log(-spec.ddv(report.x_0)))
        + report.barrier / eps
    )
    if log_tau > 700.0:
        raise RangeError("predicted exit time overflows double precision")
    tau = float(np.exp(log_tau))
    dt = 0.25 * STABILITY_BUDGET / sup_dd
    budget = int(np.ceil(100.0 * tau / dt))
    x_b = report.x_b
    sig = np.sqrt(2.0 * eps * dt)
    dv = spec.dv

    gens = [_stream(seed, i) for i in range(n)]
    ids = np.arange(n)
    y = np.full(n, float(report.x_a))
    t_exit = np.full(n, np.nan)
    done_steps = 0
    chunk = _chunk_steps(n)
    while ids.size and done_steps < budget:
        c = min(chunk, budget - done_steps)
        noise = np.empty((ids.size, c))
        uni = np.empty((ids.size, c))
        for row, i in enumerate(ids):
            noise[row] = gens[i].standard_normal(c)
            uni[row] = gens[i].random(c)
        alive = np.ones(ids.size, dtype=bool)
        for s in range(c):
            y1 = y - dv(y) * dt + sig * noise[:, s]
            np.clip(y1, lo, None, out=y1)
            with np.errstate(over="ignore"):
                p_cross = np.exp(-(x_b - y) * (x_b - y1) / (eps * dt))
            crossed = alive & (uni[:, s] < p_cross)
            if crossed.any():
                t_exit[ids[crossed]] = (done_steps + s + 1) * dt
                alive &= ~crossed
                if not alive.any():
                    break
            y = np.where(alive, y1, y)
        done_steps += c
        y = y[alive]
        ids = ids[alive]
    if ids.size:
        raise BudgetExceeded(
            f"{ids.size} of {n} paths still running at 100x the predicted "
            f"exit time {tau:.3g}; censored and aborted"
        )
    mean = float(t_exit.mean())
    stderr = float(t_exit.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def mfpt_quadrature(spec: PotentialSpec, eps: float, a: float, b: float) -> float:
    """Exact mean exit time (1/eps) int_a^b e^{V/eps} int_-inf^y e^{-V/eps}.

    Both layers run in log space: the inner cumulative on a grid refined
    near every critical point of V, truncated on the left where V reaches
    745 eps (the integrand is an exact zero beyond), the outer through the
    panel-doubling checked integral. Classical closed form for the 1D exit
    problem; serves as the deterministic oracle for the Monte Carlo side.
    """
    if not b > a:
        raise QuadratureError("need a < b")
    if eps <= 0:
        raise RangeError("eps must be positive")
    x_lo = _truncation_point(spec, a, eps, -1)
    if not x_lo < a:
        raise QuadratureError("no integrable mass left of the start point")
    probe = np.linspace(x_lo, b, 4001)
    sign_flips = np.flatnonzero(np.diff(np.sign(spec.dv(probe))) != 0)
    crit = [float(0.5 * (probe[i] + probe[i + 1])) for i in sign_flips]
    xs = refined_edges(x_lo, b, crit, eps)
    inner = cumulative_log_integral(lambda t: -spec.v(t) / eps, xs)

    def log_outer(yv: np.ndarray) -> np.ndarray:
        return spec.v(yv) / eps + np.interp(yv, xs, inner)

    outer_edges = np.unique(
        np.concatenate([[a], xs[(xs > a) & (xs < b)], [b]])
    )
    total = log_integral(log_outer, outer_edges, tol=1e-7)
    value = float(np.exp(total - np.log(eps)))
    if not (np.isfinite(value) and value > 0):
        raise QuadratureError("exit-time integral left double precision")
    return value


def simulate_jump(
    z0: float, n: int, T: float, seed: int, n_bins: int = 64
) -> TwoStatePath:
    """Empirical left-state fraction of n one-way exponential clocks.

    round(z0 n) particles start in state a and each leaves at a unit-rate
    exponential time, never to return; the rest sit in b throughout. The
    fraction still in a is read at n_bins + 1 uniform nodes, giving a
    nonincreasing step path whose flux is its own discrete derivative.
    """
    if n < 1:
        raise RangeError("need at least one particle")
    if not 0.0 <= z0 <= 1.0:
        raise RangeError("z0 must lie in [0, 1]")
    if T <= 0:
        raise RangeError("T must be positive")
    n_a = int(round(z0 * n))
    clocks = _stream(seed, 0).standard_exponential(n_a)
    t_nodes = np.linspace(0.0, T, n_bins + 1)
    still_a = (clocks[None, :] > t_nodes[:, None]).sum(axis=1)
    return TwoStatePath.from_z(t_nodes, still_a / n)
