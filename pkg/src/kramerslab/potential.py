"""Asymmetric double-well landscapes and their landmark certification.

A landscape enters the rest of the package only through a validated
:class:`LandmarkReport`: the two wells, the saddle, the convexity cutoffs,
the zero-level set of the deep well, and the certified convexity bounds.
Validation is deliberately derivative-free beyond the user-supplied
callables: a sign-change scan at probe resolution followed by bracketed
bisection, ties broken by the leftmost bracket.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import AdmissibilityError, ValidationFailure

Array = np.ndarray
Func = Callable[[Array], Array]

BISECT_TOL = 1e-12
# relative margin defining the level-set intervals around the wells
BASIN_MARGIN = 0.05
# fraction by which the convexity cutoffs are pulled inside the inflection span
CUTOFF_PULL = 0.05


class Interval(NamedTuple):
    lo: float
    hi: float

    def __contains__(self, x) -> bool:  # type: ignore[override]
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class PotentialSpec:
    """The landscape V with first and second derivatives.

    All three callables must accept numpy arrays. domain_hint delimits the
    interval on which probing happens; outside it, quadratic growth is the
    caller's declared responsibility.
    """

    v: Func
    dv: Func
    ddv: Func
    domain_hint: Interval


@dataclass(frozen=True)
class LandmarkReport:
    """Certified landmarks of an admissible double well.

    Ordering x_a < x_cl < x_0 < x_cr < x_bminus < x_b < x_bplus, with
    V(x_a) = 0, V(x_b) = min V < 0, convexity >= alpha outside
    (x_cl, x_cr), and the level-set intervals b_a, b_b, b_0 used by the
    committor construction.
    """

    x_a: float
    x_cl: float
    x_0: float
    x_cr: float
    x_bminus: float
    x_b: float
    x_bplus: float
    alpha: float
    a_upper: float
    barrier: float
    b_a: Interval
    b_b: Interval
    b_0: Interval


def _bisect(f: Callable[[float], float], lo: float, hi: float) -> float:
    """Bracketed bisection to BISECT_TOL; assumes f(lo)*f(hi) <= 0."""
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= BISECT_TOL:
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (flo < 0) == (fm < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sign_change_roots(f: Func, grid: Array) -> list[float]:
    """All roots located by sign changes between consecutive probes."""
    vals = np.asarray(f(grid), dtype=float)
    roots: list[float] = []
    sign = np.sign(vals)
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        roots.append(_bisect(lambda x: float(f(np.asarray([x]))[0]), grid[i], grid[i + 1]))
    for i in np.flatnonzero(sign == 0):
        roots.append(float(grid[i]))
    return sorted(roots)


def _check_derivatives(spec: PotentialSpec, n: int = 1000) -> None:
    lo, hi = spec.domain_hint
    xs = np.linspace(lo + 1e-4, hi - 1e-4, n)
    h = 1e-5
    fd1 = (spec.v(xs + h) - spec.v(xs - h)) / (2 * h)
    fd2 = (spec.dv(xs + h) - spec.dv(xs - h)) / (2 * h)
    d1 = spec.dv(xs)
    d2 = spec.ddv(xs)
    if not np.all(np.isfinite(np.concatenate([spec.v(xs), d1, d2]))):
        raise ValidationFailure("potential or derivative not finite on probe grid")
    bad1 = np.abs(fd1 - d1) > 1e-6 * (1.0 + np.abs(d1))
    bad2 = np.abs(fd2 - d2) > 1e-4 * (1.0 + np.abs(d2))
    if np.any(bad1):
        raise ValidationFailure("dv is not the derivative of v at probe resolution")
    if np.any(bad2):
        raise ValidationFailure("ddv is not the derivative of dv at probe resolution")


def validate(spec: PotentialSpec, probe_count: int = 10_000) -> LandmarkReport:
    """Locate and certify every landmark, or raise ValidationFailure.

    The first violated clause is named in the exception message. Checks run
    on a uniform probe grid over domain_hint plus bisection-refined roots;
    pathological behavior strictly between probes is out of certification
    scope by design.
    """
    if probe_count < 1000:
        raise ValidationFailure("probe_count must be at least 1000")
    _check_derivatives(spec)
    lo, hi = spec.domain_hint
    grid = np.linspace(lo, hi, probe_count)

    crit = _sign_change_roots(spec.dv, grid)
    if len(crit) != 3:
        raise ValidationFailure(
            f"expected exactly two wells and one saddle, found {len(crit)} "
            "critical points (extra critical point in the landscape)"
        )
    x_a, x_0, x_b = crit
    vx = lambda x: float(spec.v(np.asarray([x]))[0])
    ddx = lambda x: float(spec.ddv(np.asarray([x]))[0])
    if not (ddx(x_a) > 0 and ddx(x_b) > 0):
        raise ValidationFailure("outer critical points are not minima")
    if not ddx(x_0) < 0:
        raise ValidationFailure("V''(x_0) < 0 fails at the saddle")

    v_a, v_0, v_b = vx(x_a), vx(x_0), vx(x_b)
    if abs(v_a) > 1e-10:
        raise ValidationFailure(f"V(x_a) = 0 fails: V(x_a) = {v_a:.3e}")
    if not v_b < -1e-10:
        raise ValidationFailure("V(x_b) = min V < 0 fails (wells not strictly ordered)")
    barrier = v_0 - v_a
    if not barrier > 0:
        raise ValidationFailure("saddle does not lie above the shallow well")

    # strict intermediate-range clause: V < V(x_0) between the wells
    between = grid[(grid > x_a) & (grid < x_b)]
    between = between[np.abs(between - x_0) > 2.0 * (hi - lo) / probe_count]
    if np.any(spec.v(between) >= v_0):
        raise ValidationFailure(
            "V(x) < V(x_0) fails between the wells (intermediary valley present)"
        )

    # zero-level set of the deep well
    zeros = _sign_change_roots(spec.v, grid[grid > x_0])
    if len(zeros) != 2:
        raise ValidationFailure(
            f"zero-level set of the deep well has {len(zeros)} crossings, expected 2"
        )
    x_bminus, x_bplus = zeros
    neg = grid[spec.v(grid) < -1e-10]
    if neg.size and (neg.min() < x_bminus - 1e-6 or neg.max() > x_bplus + 1e-6):
        raise ValidationFailure("{V <= 0} is not {x_a} union one deep-well interval")

    # convexity cutoffs from the outermost inflection points
    infl = _sign_change_roots(spec.ddv, grid)
    if not infl:
        raise ValidationFailure("no inflection points found around the saddle")
    x_il, x_ir = infl[0], infl[-1]
    if not (x_a < x_il and x_ir < x_bminus):
        raise ValidationFailure("inflection span not contained in (x_a, x_bminus)")
    x_cl = x_il - CUTOFF_PULL * (x_il - x_a)
    x_cr = x_ir + CUTOFF_PULL * (x_bminus - x_ir)

    # include the cutoffs themselves: V'' attains its outer infimum there
    # for the reference family, and grid probes alone overstate alpha
    outer = np.concatenate(
        [grid[grid <= x_cl], [x_cl, x_cr], grid[grid >= x_cr]]
    )
    dd_outer = spec.ddv(outer)
    alpha = float(dd_outer.min())
    a_upper = float(dd_outer.max())
    if not alpha > 0:
        raise ValidationFailure("V'' >= alpha > 0 fails on an outer region probe")

    # level-set intervals: maximal intervals where V < V(x_0) - margin
    level = v_0 - BASIN_MARGIN * barrier
    g = lambda x: vx(x) - level
    if not (g(lo) > 0 and g(hi) > 0):
        raise ValidationFailure("domain_hint does not contain the sublevel intervals")
    b_a = Interval(_bisect(g, lo, x_a), _bisect(g, x_a, x_0))
    b_b = Interval(_bisect(g, x_0, x_b), _bisect(g, x_b, hi))
    b_0 = Interval(b_a.hi, b_b.lo)

    report = LandmarkReport(
        x_a=x_a, x_cl=x_cl, x_0=x_0, x_cr=x_cr,
        x_bminus=x_bminus, x_b=x_b, x_bplus=x_bplus,
        alpha=alpha, a_upper=a_upper, barrier=barrier,
        b_a=b_a, b_b=b_b, b_0=b_0,
    )
    order = (x_a, x_cl, x_0, x_cr, x_bminus, x_b, x_bplus)
    if not all(p < q for p, q in zip(order, order[1:])):
        raise ValidationFailure(f"landmark ordering violated: {order}")
    return report


# certified parameter box for the reference family; the ratio cap keeps the
# deep well's zero crossing strictly right of the inflection point (the
# landmark ordering degenerates at tilt/depth ~ 0.2851)
REFERENCE_BOX = {"depth": (0.25, 4.0), "tilt_over_depth": (0.05, 0.26)}


def reference_potential(depth: float, tilt: float) -> PotentialSpec:
    """Canonical admissible family: depth*(x^2-1)^2 - tilt*x, left well at 0.

    The shift making V(x_a) exactly zero is computed by bisection on the
    derivative (the left minimum is bracketed by [-3, -1/sqrt(3)] for every
    parameter pair in the certified box).
    """
    dlo, dhi = REFERENCE_BOX["depth"]
    rlo, rhi = REFERENCE_BOX["tilt_over_depth"]
    if not (dlo <= depth <= dhi) or not (rlo <= tilt / max(depth, 1e-300) <= rhi):
        raise AdmissibilityError(
            f"(depth={depth}, tilt={tilt}) outside certified box "
            f"depth in {REFERENCE_BOX['depth']}, tilt/depth in {REFERENCE_BOX['tilt_over_depth']}"
        )

    def raw(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return depth * (x * x - 1.0) ** 2 - tilt * x

    def draw(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return 4.0 * depth * x * (x * x - 1.0) - tilt

    def ddraw(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return 12.0 * depth * x * x - 4.0 * depth

    x_a = _bisect(lambda x: float(draw(np.asarray([x]))[0]), -3.0, -1.0 / np.sqrt(3.0))
    shift = float(raw(np.asarray([x_a]))[0])
    return PotentialSpec(
        v=lambda x: raw(x) - shift,
        dv=draw,
        ddv=ddraw,
        domain_hint=Interval(-3.5, 3.5),
    )


def polynomial_potential(coeffs: list[float], domain: tuple[float, float] = (-3.5, 3.5)) -> PotentialSpec:
    """Landscape from polynomial coefficients (ascending order).

    No admissibility is implied; run validate() on the result. The constant
    coefficient is adjusted afterwards by validate()'s caller if a zero left
    well is required; this constructor leaves coefficients untouched.
    """
    p = np.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    ddp = dp.deriv()
    return PotentialSpec(
        v=lambda x: p(np.asarray(x, dtype=float)),
        dv=lambda x: dp(np.asarray(x, dtype=float)),
        ddv=lambda x: ddp(np.asarray(x, dtype=float)),
        domain_hint=Interval(*domain),
    )
