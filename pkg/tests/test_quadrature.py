"""Log-space quadrature against closed-form Gaussian integrals."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import erf, log_ndtr

from kramerslab.errors import QuadratureError
from kramerslab.quadrature import (
    cumulative_log_integral,
    log_gaussian_tail,
    log_integral,
    refined_edges,
    trapezoid_weights,
)


def test_gaussian_mass():
    s = 0.3
    edges = refined_edges(-10.0, 10.0, [0.0], eps=s * s)
    val = log_integral(lambda x: -x * x / (2 * s * s), edges)
    assert val == pytest.approx(np.log(np.sqrt(2 * np.pi) * s), abs=1e-12)


def test_narrow_offcenter_peak():
    # width sqrt(eps/2) ~ 0.022, far from any background panel edge
    eps = 1e-3
    edges = refined_edges(-5.0, 5.0, [2.0], eps=eps)
    val = log_integral(lambda x: -((x - 2.0) ** 2) / eps, edges)
    assert val == pytest.approx(0.5 * np.log(np.pi * eps), abs=1e-10)


def test_huge_exponent_offsets_are_exact():
    # adding a constant to log f adds it to the log integral; the shifted
    # integrand overflows exp() by hundreds of units
    edges = refined_edges(-10.0, 10.0, [0.0], eps=1.0)
    base = log_integral(lambda x: -x * x / 2, edges)
    for shift in (700.0, -700.0, 5000.0):
        val = log_integral(lambda x: -x * x / 2 + shift, edges)
        assert val - shift == pytest.approx(base, abs=1e-12)


def test_two_peak_decomposition():
    # mass of two separated Gaussians, second suppressed by e^{-200}
    eps = 0.01
    edges = refined_edges(-4.0, 4.0, [-1.0, 1.0], eps=eps)

    def log_f(x):
        return np.logaddexp(-((x + 1) ** 2) / eps, -((x - 1) ** 2) / eps - 200.0)

    want = np.log(np.sqrt(np.pi * eps) * (1 + np.exp(-200.0)))
    assert log_integral(log_f, edges) == pytest.approx(want, abs=1e-12)


def test_unresolved_peak_raises():
    eps = 1e-6
    coarse = np.linspace(-1.0, 1.0, 4)
    with pytest.raises(QuadratureError, match="panel-doubling"):
        log_integral(lambda x: -x * x / eps, coarse, order=2)
    # the unchecked path still returns a number
    val = log_integral(lambda x: -x * x / eps, coarse, order=2, check=False)
    assert np.isfinite(val)


def test_empty_range_raises():
    with pytest.raises(QuadratureError):
        refined_edges(1.0, 1.0, [], eps=0.1)


def test_refined_edges_shape():
    edges = refined_edges(-2.0, 3.0, [0.5], eps=0.04)
    assert edges[0] == -2.0 and edges[-1] == 3.0
    assert np.all(np.diff(edges) > 0)
    # finest panel at the center resolves r / 2^levels
    gaps_near = np.diff(edges)[np.argmin(np.abs(edges[:-1] - 0.5))]
    assert gaps_near <= 5.0 * 0.2 / 2**10 + 1e-12


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 5.0])
def test_tail_bound_dominates_gaussian_tail(c):
    # standard Gaussian, edge at c: bound must sit above the true tail but
    # within the generic overshoot of the linear-decay comparison, which
    # tops out near a factor 4 on this range
    bound = log_gaussian_tail(-c * c / 2, c, alpha=1.0, eps=1.0)
    true = log_ndtr(-c)
    assert bound >= true
    assert bound <= true + np.log(4.0)


def test_tail_bound_requires_convexity():
    with pytest.raises(QuadratureError):
        log_gaussian_tail(0.0, 1.0, alpha=0.0, eps=1.0)


def test_cumulative_constant_integrand():
    xs = np.array([0.0, 0.4, 1.0, 2.5, 2.6])
    out = cumulative_log_integral(lambda x: np.zeros_like(x), xs)
    assert out[0] == -np.inf
    assert np.allclose(out[1:], np.log(xs[1:] - xs[0]), atol=1e-14)


def test_cumulative_gaussian_cdf():
    # compare against the cdf only where the mass below the lower limit is
    # negligible; near -8 that missing mass dominates the running integral
    xs = np.linspace(-8.0, 3.0, 400)
    out = cumulative_log_integral(lambda x: -x * x / 2, xs)
    want = 0.5 * np.log(2 * np.pi) + log_ndtr(xs[1:])
    mask = xs[1:] > -4.0
    assert np.allclose(out[1:][mask], want[mask], atol=1e-9)
    assert np.all(np.diff(out[1:]) >= 0)


def test_cumulative_rejects_nonincreasing_grid():
    with pytest.raises(QuadratureError):
        cumulative_log_integral(lambda x: x, np.array([0.0, 1.0, 1.0, 2.0]))


def test_trapezoid_weights_linear_exact():
    xs = np.array([0.0, 0.1, 0.35, 1.0, 1.2])
    w = trapezoid_weights(xs)
    assert w.sum() == pytest.approx(1.2, abs=1e-15)
    f = 3.0 * xs + 1.0
    assert w @ f == pytest.approx(1.2 * (3.0 * 0.6 + 1.0), abs=1e-12)


def test_gaussian_halves_match_erf():
    # integral over [0, 4] of exp(-x^2) = sqrt(pi)/2 * erf(4)
    edges = refined_edges(0.0, 4.0, [0.0], eps=1.0)
    val = log_integral(lambda x: -x * x, edges)
    assert val == pytest.approx(np.log(np.sqrt(np.pi) / 2 * erf(4.0)), abs=1e-12)
