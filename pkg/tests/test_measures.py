"""Partition functions and invariant-measure asymptotics on the eps ladder.

The scipy.integrate.quad values below were frozen from an independent
oracle run; they share no code with the package's log-space panels.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from kramerslab.errors import RangeError, StructureError
from kramerslab.measures import (
    EpsilonContext,
    build_context,
    certified_eps_floor,
    gamma_log_density,
    laplace_errors,
    laplace_estimate,
    log_laplace_estimate,
    mass_on,
    saddle_half_integral,
)
from kramerslab.potential import (
    Interval,
    LandmarkReport,
    PotentialSpec,
    reference_potential,
    validate,
)

LADDER = (0.5, 0.35, 0.25, 0.18, 0.125)


@pytest.fixture(scope="module")
def landscape():
    spec = reference_potential(1.4, 0.35)
    return spec, validate(spec)


@pytest.fixture(scope="module")
def contexts(landscape):
    spec, rep = landscape
    return {eps: build_context(spec, rep, eps) for eps in LADDER}


def test_log_z_matches_scipy_oracle(landscape, contexts):
    spec, _ = landscape
    for eps in (0.5, 0.125):
        want, err = quad(lambda x: np.exp(-float(spec.v(np.array([x]))[0]) / eps), -6, 6, limit=200)
        assert contexts[eps].log_z == pytest.approx(np.log(want), abs=1e-9 + err)


def test_gaussian_sanity_bypassing_validation():
    # synthetic landmark data; only the integrals matter here
    gauss = PotentialSpec(
        v=lambda x: np.asarray(x, float) ** 2 / 2,
        dv=lambda x: np.asarray(x, float),
        ddv=lambda x: np.ones_like(np.asarray(x, float)),
        domain_hint=Interval(-4.0, 6.0),
    )
    rep = LandmarkReport(
        x_a=0.0, x_cl=0.5, x_0=2.0, x_cr=2.5, x_bminus=3.0, x_b=4.0, x_bplus=5.0,
        alpha=1.0, a_upper=1.0, barrier=2.0,
        b_a=Interval(-1.0, 1.0), b_b=Interval(3.0, 5.0), b_0=Interval(1.0, 3.0),
    )
    for eps in (1.0, 0.3):
        ctx = build_context(gauss, rep, eps)
        assert ctx.log_z == pytest.approx(np.log(np.sqrt(2 * np.pi * eps)), abs=1e-8)


def test_log_tau_closed_form(landscape, contexts):
    spec, rep = landscape
    dd = lambda x: float(spec.ddv(np.array([x]))[0])
    for eps, ctx in contexts.items():
        want = (
            np.log(2 * np.pi)
            - 0.5 * (np.log(dd(rep.x_a)) + np.log(abs(dd(rep.x_0))))
            + rep.barrier / eps
        )
        assert ctx.log_tau == want


def test_z_exceeds_z_left(contexts):
    for ctx in contexts.values():
        assert ctx.log_z > ctx.log_z_left
        assert np.isfinite(ctx.log_z) and np.isfinite(ctx.log_z_left)


def test_laplace_ratio_trends(contexts):
    # |Z/est - 1| and |Z_left/est - 1| both shrink strictly down the ladder
    errs = [laplace_errors(contexts[eps]) for eps in LADDER]
    full = [abs(np.expm1(e[0])) for e in errs]
    left = [abs(np.expm1(e[1])) for e in errs]
    assert all(a > b for a, b in zip(full, full[1:]))
    assert all(a > b for a, b in zip(left, left[1:]))
    # frozen magnitudes from the build-time oracle run
    assert full[0] == pytest.approx(0.386, abs=0.01)
    assert left[0] == pytest.approx(0.118, abs=0.01)


def test_laplace_estimate_formula():
    est = laplace_estimate(lambda x: x * x, 2.0, 0.0, "interior", 10.0)
    assert est == pytest.approx(np.sqrt(np.pi / 10.0), abs=1e-12)
    assert est == pytest.approx(0.5604991, abs=1e-6)
    half = laplace_estimate(lambda x: x * x, 2.0, 0.0, "boundary", 10.0)
    assert half == pytest.approx(est / 2, abs=1e-15)
    with pytest.raises(RangeError):
        laplace_estimate(lambda x: x, 1.0, 0.0, "edge", 1.0)


def test_laplace_estimate_against_quadrature():
    n = 50.0
    val, _ = quad(lambda x: np.exp(-n * x * x), -1, 1)
    est = laplace_estimate(lambda x: x * x, 2.0, 0.0, "interior", n)
    assert abs(val / est - 1) <= 2.0 / n


def test_log_density_peak_and_normalization(landscape, contexts):
    _, rep = landscape
    ctx = contexts[0.25]
    dens = gamma_log_density(ctx, ctx.quad_grid, "full")
    peak = ctx.quad_grid[int(np.argmax(dens))]
    assert peak == pytest.approx(rep.x_b, abs=1e-6)
    assert mass_on(ctx, (-np.inf, np.inf), "full") == pytest.approx(1.0, abs=1e-8)
    assert np.all(np.isfinite(dens))


def test_left_mass_beyond_saddle_diverges(landscape, contexts):
    _, rep = landscape
    vals = [mass_on(contexts[eps], (rep.x_0, np.inf), "left") for eps in LADDER]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 10.0


def test_left_mass_concentrates_at_shallow_well(landscape, contexts):
    _, rep = landscape
    c = 0.5 * (rep.x_a + rep.x_0)
    vals = [mass_on(contexts[eps], (-np.inf, c), "left") for eps in LADDER]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 1.0) < 0.01


def test_high_level_set_mass_vanishes(landscape, contexts):
    # {V > 0.1} under the left normalization; three intervals compose it
    spec, rep = landscape
    totals = []
    for eps in LADDER:
        ctx = contexts[eps]
        grid = ctx.quad_grid
        high = spec.v(grid) > 0.1
        # locate the maximal sub-intervals of {V > 0.1} on the grid
        idx = np.flatnonzero(np.diff(high.astype(int)))
        cuts = [grid[0]] + [0.5 * (grid[i] + grid[i + 1]) for i in idx] + [grid[-1]]
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            if float(spec.v(np.array([mid]))[0]) > 0.1:
                total += mass_on(ctx, (a, b), "left")
        totals.append(total)
    assert all(a > b for a, b in zip(totals, totals[1:]))
    # decay scale is e^{-0.1/eps}, so the ladder only reaches ~0.32
    assert totals[-1] == pytest.approx(0.3231, abs=0.01)


def test_saddle_half_integral_trend(landscape, contexts):
    _, rep = landscape
    vals = [saddle_half_integral(contexts[eps], rep.x_bminus) for eps in LADDER]
    errs = [abs(v - 0.5) for v in vals]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.02


def test_eps_floor_enforced(landscape):
    spec, rep = landscape
    floor = certified_eps_floor(rep)
    assert floor == pytest.approx(rep.barrier / 745.0, rel=1e-12)
    with pytest.raises(RangeError, match="floor"):
        build_context(spec, rep, floor * 0.5)
    with pytest.raises(RangeError):
        build_context(spec, rep, -1.0)


def test_context_immutable(contexts):
    ctx = contexts[0.5]
    with pytest.raises(Exception):
        ctx.quad_grid[0] = 0.0
    with pytest.raises(Exception):
        ctx.eps = 1.0  # type: ignore[misc]
