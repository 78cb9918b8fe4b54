"""Tests for the slow-variable table: construction, inversion, pushforward."""

import numpy as np
import pytest

from kramerslab.errors import MonotonicityError, RangeError
from kramerslab.functionals import rate_dual, rate_primal
from kramerslab.measures import build_context
from kramerslab.transform import (
    Bump,
    bump_pair,
    build_transform,
    committor_family,
    committor_test_function,
    g_hat_band_mass,
    invert_y,
    mu_sup_deviation,
    phi_eval,
    phi_prime,
    pullback_pair,
    pushforward_pair,
    verify_g_closed_form,
    y_eval,
)

from conftest import LADDER, perturbation_path


@pytest.fixture(scope="module")
def tables(contexts):
    return {eps: build_transform(contexts[eps]) for eps in LADDER}


# ---------------------------------------------------------------------------
# bumps


def test_bump_profile():
    w = Bump(0.3, 0.7)
    assert w.value(0.3) == 1.0
    assert w.value(0.3 + 0.7) == 0.0
    assert w.value(0.3 - 0.7) == 0.0
    assert w.value(5.0) == 0.0
    inside = w.value(np.linspace(-0.39, 0.99, 101))
    assert np.all(inside > 0.0) and np.all(inside <= 1.0)


def test_bump_derivative_matches_closed_form():
    w = Bump(-0.2, 1.3)
    h = 1e-6
    for s in (-0.8, -0.5, -0.2, 0.3, 0.6):
        x = w.center + s * w.radius
        fd = (w.value(x + h) - w.value(x - h)) / (2 * h)
        exact = w.value(x) * (-2.0 * s / (1.0 - s * s) ** 2) / w.radius
        assert fd == pytest.approx(exact, rel=1e-4, abs=1e-10)


def test_bump_rejects_bad_radius():
    with pytest.raises(RangeError):
        Bump(0.0, 0.0)
    with pytest.raises(RangeError):
        Bump(0.0, -1.0)


def test_bump_pair_supports_sit_inside_deep_sets(landscape):
    _, rep = landscape
    chi_a, chi_b = bump_pair(rep)
    assert rep.b_a.lo < chi_a.support[0] < rep.x_a < chi_a.support[1] < rep.b_a.hi
    assert rep.b_b.lo < chi_b.support[0] < rep.x_b < chi_b.support[1] < rep.b_b.hi


# ---------------------------------------------------------------------------
# the slow variable y


def test_saddle_maps_to_exact_zero(tables, landscape):
    _, rep = landscape
    for tab in tables.values():
        assert tab.sign_y[tab.i_saddle] == 0.0
        assert y_eval(tab, rep.x_0) == 0.0
        assert invert_y(tab, 0.0) == rep.x_0


def test_y_is_strictly_increasing_on_nodes(tables):
    for tab in tables.values():
        y = tab.y_values
        finite = np.isfinite(y)
        assert np.all(np.diff(y[finite]) > 0)
        i0 = tab.i_saddle
        assert np.all(y[:i0][np.isfinite(y[:i0])] < 0)
        assert np.all(y[i0 + 1 :][np.isfinite(y[i0 + 1 :])] > 0)


def test_left_plateau_approaches_minus_half(tables, landscape):
    _, rep = landscape
    gaps = [abs(y_eval(tables[eps], rep.x_a) + 0.5) for eps in LADDER]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05


def test_roundtrip_inversion(tables, landscape):
    _, rep = landscape
    rng = np.random.default_rng(7)
    xs = rng.uniform(rep.x_a - 1.0, rep.x_bplus + 1.0, 40)
    for tab in tables.values():
        back = invert_y(tab, y_eval(tab, xs))
        assert np.max(np.abs(back - xs)) <= 1e-9


def test_evaluation_outside_coverage_is_rejected(tables):
    tab = tables[0.5]
    lo, hi = tab.coverage
    with pytest.raises(RangeError):
        y_eval(tab, hi + 0.5)
    with pytest.raises(RangeError):
        y_eval(tab, lo - 0.5)
    with pytest.raises(RangeError):
        invert_y(tab, np.inf)
    with pytest.raises(RangeError):
        invert_y(tab, -np.inf)


def test_stall_guard_fires_when_eps_is_too_small(landscape):
    spec, rep = landscape
    ctx = build_context(spec, rep, 0.04)
    with pytest.raises(MonotonicityError):
        build_transform(ctx)


# ---------------------------------------------------------------------------
# committor table


def test_m_saturates_exactly(tables):
    for tab in tables.values():
        m = tab.m_values
        assert np.all(m >= 0.0) and np.all(m <= 1.0)
        x = tab.x_nodes
        between = (x >= tab.chi_a.support[1]) & (x <= tab.chi_b.support[0])
        assert between.sum() > 10
        assert np.all(m[between] == 1.0)
        beyond = x > tab.chi_b.support[1]
        assert beyond.sum() > 10
        assert np.all(m[beyond] == 0.0)


def test_phi_plateaus_approach_half_levels(tables, landscape):
    _, rep = landscape
    gap_a = [abs(phi_eval(tables[eps], rep.x_a) + 0.5) for eps in LADDER]
    gap_b = [abs(phi_eval(tables[eps], rep.x_b) - 0.5) for eps in LADDER]
    for gaps in (gap_a, gap_b):
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.05


def test_phi_prime_is_nonnegative_and_vanishes_in_tails(tables):
    tab = tables[0.25]
    xs = np.linspace(*tab.coverage, 801)
    d = phi_prime(tab, xs)
    assert np.all(d >= 0.0)
    assert np.all(d[xs < tab.chi_a.support[0]] == 0.0)
    assert np.all(d[xs > tab.chi_b.support[1]] == 0.0)


def test_mu_deviation_shrinks_along_ladder(tables):
    devs = [mu_sup_deviation(tables[eps]) for eps in LADDER]
    assert all(a > b for a, b in zip(devs, devs[1:]))
    assert devs[-1] < 0.15


# ---------------------------------------------------------------------------
# transformed reference density


def test_g_hat_closed_form_matches_source_mass(tables):
    for eps in (0.5, 0.125):
        lhs, rhs = verify_g_closed_form(tables[eps])
        assert lhs == pytest.approx(rhs, rel=1e-8)


def test_g_hat_band_mass_collapses(tables):
    masses = [g_hat_band_mass(tables[eps], 0.45) for eps in LADDER]
    assert all(a > b for a, b in zip(masses, masses[1:]))
    assert masses[-1] < 1e-3


# ---------------------------------------------------------------------------
# paths across the change of variables


def test_pushforward_preserves_masses_and_continuity(tables, contexts):
    ctx = contexts[0.25]
    tab = tables[0.25]
    path = perturbation_path(ctx, 1e-3)
    pushed = pushforward_pair(tab, path)
    pushed.check()
    assert np.array_equal(pushed.flux, path.flux)
    assert np.all(np.diff(pushed.x_nodes) > 0)
    assert np.max(np.abs(pushed.masses / path.masses - 1.0)) <= 5e-16
    back = pullback_pair(tab, pushed)
    back.check()
    assert np.max(np.abs(back.x_nodes - path.x_nodes)) <= 1e-9
    assert np.array_equal(back.flux, path.flux)
    assert np.max(np.abs(back.masses / path.masses - 1.0)) <= 1e-15


# ---------------------------------------------------------------------------
# committor-built test functions


def test_committor_b_sign_support_and_finiteness(tables):
    tab = tables[0.25]
    b = committor_test_function(tab, lambda t: 0.6 * (1.0 - t))
    xs = np.linspace(*tab.coverage, 1201)
    vals = b(0.0, xs)
    assert np.all(np.isfinite(vals))
    assert np.all(vals >= 0.0)
    assert np.any(vals > 0.0)
    assert np.all(vals[xs < tab.chi_a.support[0]] == 0.0)
    assert np.all(vals[xs > tab.chi_b.support[1]] == 0.0)
    assert np.all(b(1.0, xs) == 0.0)


def test_committor_family_respects_duality(tables, contexts):
    ctx = contexts[0.25]
    tab = tables[0.25]
    path = perturbation_path(ctx, 1e-3)
    t_end = float(path.t_nodes[-1])
    family = committor_family(
        tab,
        [
            lambda t: 0.0,
            lambda t: 0.5 * (1.0 - t / t_end),
            lambda t: 0.2,
            lambda t: -0.3 * (1.0 - t / t_end),
        ],
    )
    dual = rate_dual(ctx, path, family)
    primal = rate_primal(ctx, path)
    assert 0.0 <= dual <= primal + 1e-8
