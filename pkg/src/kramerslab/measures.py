"""Partition functions, invariant measures, and the slow time scale.

Everything here lives in log-space. The invariant density e^{-V/eps} spans
hundreds of orders of magnitude across the ladder, so partition functions
are exchanged as logs and densities only ever leave as log-densities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QuadratureError, RangeError, StructureError
from .potential import LandmarkReport, PotentialSpec
from .quadrature import (
    UNDERFLOW_LOG,
    log_gaussian_tail,
    log_integral,
    refined_edges,
)

# ratio of barrier to the largest exponent representable in double precision
EPS_FLOOR_FACTOR = -UNDERFLOW_LOG  # 745


def certified_eps_floor(report: LandmarkReport) -> float:
    """Smallest eps for which e^{-barrier/eps} stays a normal double."""
    return report.barrier / EPS_FLOOR_FACTOR


@dataclass(frozen=True, eq=False)
class EpsilonContext:
    """Immutable bundle of everything eps-dependent about the landscape.

    log_z and log_z_left are the full-line and left-of-saddle partition
    integrals of e^{-V/eps}; log_tau is the slow Kramers time scale

        log_tau = log 2pi - (log V''(x_a) + log |V''(x_0)|)/2 + barrier/eps,

    held exactly in this closed form. quad_grid is the panel-edge grid used
    for every integral against this context.
    """

    spec: PotentialSpec
    landmarks: LandmarkReport
    eps: float
    log_z: float
    log_z_left: float
    log_tau: float
    quad_grid: np.ndarray

    def log_density(self, x: np.ndarray, norm: str = "full") -> np.ndarray:
        """Vectorized alias of gamma_log_density."""
        return gamma_log_density(self, x, norm)


def _truncation_point(spec: PotentialSpec, start: float, eps: float, side: int) -> float:
    """x beyond start (direction side = +-1) where V(x) = 745*eps.

    Doubling bracket expansion, then bisection. The landscape is certified
    convex past the cutoffs, so the bracket always closes.
    """
    target = EPS_FLOOR_FACTOR * eps
    vx = lambda x: float(spec.v(np.asarray([x]))[0])
    w = 1.0
    while vx(start + side * w) < target:
        w *= 2.0
        if w > 1e9:
            raise QuadratureError("potential grows too slowly for domain truncation")
    lo, hi = start, start + side * w
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if vx(mid) < target:
            lo = mid
        else:
            hi = mid
        if abs(hi - lo) < 1e-12 * max(1.0, abs(hi)):
            break
    return hi


def build_context(
    spec: PotentialSpec,
    report: LandmarkReport,
    eps: float,
    quad_points: int = 512,
) -> EpsilonContext:
    """Certified partition functions and time scale at one noise level.

    The integration domain is truncated where V/eps reaches 745 (the
    integrand is an exact double-precision zero beyond); the remaining
    tails are added through the analytic convexity bound, which keeps the
    result bit-reproducible without changing any digit in practice.
    """
    if eps <= 0:
        raise RangeError("eps must be positive")
    floor = certified_eps_floor(report)
    if eps < floor:
        raise RangeError(
            f"eps={eps:.3e} below the certified floor {floor:.3e}; "
            "e^{-barrier/eps} underflows double precision"
        )

    lo = _truncation_point(spec, report.x_a, eps, side=-1)
    hi = _truncation_point(spec, report.x_b, eps, side=+1)
    centers = [report.x_a, report.x_0, report.x_b]
    base = max(16, quad_points - 3 * (2 * 11 + 1))
    grid = refined_edges(lo, hi, centers, eps, base_panels=base)
    grid.flags.writeable = False

    log_f = lambda x: -spec.v(x) / eps
    log_z_inner = log_integral(log_f, grid)
    # analytic tails; each sits ~e^{-745} below the bulk and is absorbed
    dv_lo = float(-spec.dv(np.asarray([lo]))[0])
    dv_hi = float(spec.dv(np.asarray([hi]))[0])
    tail_lo = log_gaussian_tail(-float(spec.v(np.asarray([lo]))[0]) / eps, dv_lo, report.alpha, eps)
    tail_hi = log_gaussian_tail(-float(spec.v(np.asarray([hi]))[0]) / eps, dv_hi, report.alpha, eps)
    log_z = float(np.logaddexp(np.logaddexp(log_z_inner, tail_lo), tail_hi))

    left = grid[grid <= report.x_0]
    if left[-1] < report.x_0:
        left = np.concatenate([left, [report.x_0]])
    log_z_left = float(np.logaddexp(log_integral(log_f, left), tail_lo))

    dd = lambda x: float(spec.ddv(np.asarray([x]))[0])
    log_tau = (
        np.log(2.0 * np.pi)
        - 0.5 * (np.log(dd(report.x_a)) + np.log(abs(dd(report.x_0))))
        + report.barrier / eps
    )

    if not log_z > log_z_left:
        raise StructureError("log Z <= log Z_left; quadrature inconsistency")
    if not np.isfinite([log_z, log_z_left, log_tau]).all():
        raise StructureError("non-finite partition data")
    return EpsilonContext(
        spec=spec,
        landmarks=report,
        eps=eps,
        log_z=log_z,
        log_z_left=log_z_left,
        log_tau=float(log_tau),
        quad_grid=grid,
    )


def log_laplace_estimate(fdd_at_min: float, f_min: float, min_location: str, n: float) -> float:
    if min_location not in ("interior", "boundary"):
        raise RangeError(f"min_location must be interior or boundary, got {min_location!r}")
    val = 0.5 * np.log(2.0 * np.pi / (n * fdd_at_min)) - n * f_min
    if min_location == "boundary":
        val -= np.log(2.0)
    return float(val)


def laplace_estimate(f, fdd_at_min: float, f_min: float, min_location: str, n: float) -> float:
    """Leading-order peak integral sqrt(2pi/(n f'')) e^{-n f_min}.

    Halved when the minimum sits on the integration boundary. f itself is
    accepted for signature symmetry with the quadrature routines but the
    estimate uses only the local data.
    """
    return float(np.exp(log_laplace_estimate(fdd_at_min, f_min, min_location, n)))


def gamma_log_density(ctx: EpsilonContext, x, norm: str = "full"):
    """log-density of the invariant measure, full or left normalization."""
    if norm == "full":
        log_norm = ctx.log_z
    elif norm == "left":
        log_norm = ctx.log_z_left
    else:
        raise RangeError(f"norm must be full or left, got {norm!r}")
    arr = np.asarray(x, dtype=float)
    out = -ctx.spec.v(arr) / ctx.eps - log_norm
    return out if arr.shape else float(out)


def log_mass_on(ctx: EpsilonContext, interval, norm: str = "full") -> float:
    """log of the measure of an interval, clipped to the truncated domain.

    Mass beyond the truncation points is below e^{-745} relative to the
    bulk by construction, so clipping is exact at double precision.
    """
    lo = max(float(interval[0]), float(ctx.quad_grid[0]))
    hi = min(float(interval[1]), float(ctx.quad_grid[-1]))
    if not hi > lo:
        return -np.inf
    inner = ctx.quad_grid[(ctx.quad_grid > lo) & (ctx.quad_grid < hi)]
    edges = np.unique(np.concatenate([[lo], inner, [hi]]))
    log_norm = ctx.log_z if norm == "full" else ctx.log_z_left
    if norm not in ("full", "left"):
        raise RangeError(f"norm must be full or left, got {norm!r}")
    return log_integral(lambda x: -ctx.spec.v(x) / ctx.eps, edges) - log_norm


def mass_on(ctx: EpsilonContext, interval, norm: str = "full") -> float:
    return float(np.exp(log_mass_on(ctx, interval, norm)))


def laplace_errors(ctx: EpsilonContext) -> tuple[float, float]:
    """|log Z - log Laplace| for the full and left partition integrals."""
    rep = ctx.landmarks
    dd = lambda x: float(ctx.spec.ddv(np.asarray([x]))[0])
    est_full = log_laplace_estimate(
        dd(rep.x_b), float(ctx.spec.v(np.asarray([rep.x_b]))[0]), "interior", 1.0 / ctx.eps
    )
    est_left = log_laplace_estimate(dd(rep.x_a), 0.0, "interior", 1.0 / ctx.eps)
    return abs(ctx.log_z - est_full), abs(ctx.log_z_left - est_left)


def saddle_half_integral(ctx: EpsilonContext, x_tilde: float) -> float:
    """(Z^l/(eps tau)) * integral of e^{V/eps} from x_0 to x_tilde.

    Converges to 1/2 as eps drops whenever V < V(x_0) strictly on
    (x_0, x_tilde]; the boundary peak at the saddle carries half a
    Gaussian. Positive x_tilde direction only.
    """
    rep = ctx.landmarks
    if not x_tilde > rep.x_0:
        raise RangeError("x_tilde must lie right of the saddle")
    edges = refined_edges(rep.x_0, x_tilde, [rep.x_0], ctx.eps)
    val = log_integral(lambda x: ctx.spec.v(x) / ctx.eps, edges)
    return float(np.exp(ctx.log_z_left - np.log(ctx.eps) - ctx.log_tau + val))
