from types import SimpleNamespace

import numpy as np
import pytest

from conftest import LADDER
from kramerslab.errors import QuadratureError, RangeError, StabilityError
from kramerslab.limit import rate_limit
from kramerslab.potential import (
    Interval,
    PotentialSpec,
    polynomial_potential,
    reference_potential,
    validate,
)
from kramerslab.stochastic import (
    core_window,
    mfpt_monte_carlo,
    mfpt_quadrature,
    simulate_jump,
    simulate_sde,
    stable_dt,
)


@pytest.fixture(scope="module")
def mc_runs(landscape):
    spec, report = landscape
    return {
        eps: mfpt_monte_carlo(spec, report, eps, 2000, seed=7)
        for eps in (0.35, 0.25)
    }


@pytest.fixture(scope="module")
def ensemble(contexts):
    ctx = contexts[0.25]
    return simulate_sde(
        ctx, ctx.landmarks.x_a, stable_dt(ctx), 3.0, 2000, seed=3
    )


def flat_context(eps=0.25, span=8.0):
    """Zero-drift stand-in exposing just the attributes the sampler reads."""

    def zero(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    spec = PotentialSpec(v=zero, dv=zero, ddv=zero, domain_hint=Interval(-span, span))
    marks = SimpleNamespace(x_b=0.75 * span, x_0=0.0, barrier=1.0)
    return SimpleNamespace(spec=spec, landmarks=marks, log_tau=0.0, eps=eps)


class TestQuadratureOracle:
    def test_ratio_to_kramers_decreases_toward_one(self, landscape, contexts):
        spec, report = landscape
        ratios = []
        for eps in LADDER:
            q = mfpt_quadrature(spec, eps, report.x_a, report.x_b)
            ratios.append(q / float(np.exp(contexts[eps].log_tau)))
        assert all(r > 1.0 for r in ratios)
        assert all(np.diff(ratios) < 0)
        assert ratios[-1] <= 1.05

    def test_barrier_doubling_multiplies_exit_time(self):
        eps = 0.15
        s1 = reference_potential(1.4, 0.35)
        r1 = validate(s1)
        s2 = reference_potential(2.8, 0.70)
        r2 = validate(s2)
        assert r2.barrier == pytest.approx(2.0 * r1.barrier, rel=1e-12)
        q1 = mfpt_quadrature(s1, eps, r1.x_a, r1.x_b)
        q2 = mfpt_quadrature(s2, eps, r2.x_a, r2.x_b)
        predicted = (r2.barrier - r1.barrier) / eps
        assert abs(np.log(q2 / q1) - predicted) <= 0.15 * predicted

    def test_single_well_monotone_in_steepness(self):
        values = [
            mfpt_quadrature(polynomial_potential([0.0, 0.0, k]), 0.25, 0.0, 1.5)
            for k in (0.5, 1.0, 2.0)
        ]
        assert all(np.isfinite(values)) and all(v > 0 for v in values)
        assert values[0] < values[1] < values[2]

    def test_rejects_empty_interval(self, landscape):
        spec, report = landscape
        with pytest.raises(QuadratureError):
            mfpt_quadrature(spec, 0.25, report.x_b, report.x_a)


class TestMfptMonteCarlo:
    def test_matches_oracle_within_three_se(self, landscape, mc_runs):
        spec, report = landscape
        mean, se = mc_runs[0.25]
        oracle = mfpt_quadrature(spec, 0.25, report.x_a, report.x_b)
        assert abs(mean - oracle) <= 3.0 * se

    def test_ratio_trend_toward_one(self, contexts, mc_runs):
        ratios = [
            mc_runs[eps][0] / float(np.exp(contexts[eps].log_tau))
            for eps in (0.35, 0.25)
        ]
        assert ratios[0] > ratios[1] > 1.0

    def test_rejects_bad_inputs(self, landscape):
        spec, report = landscape
        with pytest.raises(RangeError):
            mfpt_monte_carlo(spec, report, 0.25, 0, seed=1)
        with pytest.raises(RangeError):
            mfpt_monte_carlo(spec, report, -0.1, 10, seed=1)


class TestEnsemble:
    def test_bit_identical_for_same_seed(self, contexts):
        ctx = contexts[0.5]
        dt = stable_dt(ctx)
        a = simulate_sde(ctx, ctx.landmarks.x_a, dt, 0.2, 50, seed=9)
        b = simulate_sde(ctx, ctx.landmarks.x_a, dt, 0.2, 50, seed=9)
        assert np.array_equal(a.pair.masses, b.pair.masses)
        assert np.array_equal(a.pair.flux, b.pair.flux)
        assert np.array_equal(a.basin_fraction, b.basin_fraction)
        assert np.array_equal(a.mfpt_samples, b.mfpt_samples)
        c = simulate_sde(ctx, ctx.landmarks.x_a, dt, 0.2, 50, seed=10)
        assert not np.array_equal(a.pair.masses, c.pair.masses)

    def test_crossings_close_the_continuity_equation(self, ensemble):
        ensemble.pair.check()
        resid = np.abs(
            np.diff(ensemble.pair.masses, axis=0)
            + np.diff(ensemble.pair.t_nodes)[:, None]
            * np.diff(ensemble.pair.flux, axis=1)
        )
        assert resid.max() <= 1e-12
        assert np.abs(ensemble.pair.masses.sum(axis=1) - 1.0).max() <= 1e-12

    def test_density_concentrates_at_the_wells(self, ensemble, landscape):
        spec, report = landscape
        c = 0.5 * (ensemble.pair.x_nodes[:-1] + ensemble.pair.x_nodes[1:])
        interior = (c > report.b_a.hi) & (c < report.b_b.lo)
        assert ensemble.pair.masses[-1][interior].sum() < 0.02

    def test_most_particles_cross_and_times_are_sane(self, ensemble):
        assert ensemble.mfpt_samples.size >= 0.8 * ensemble.n
        assert ensemble.mfpt_samples.max() <= 3.0

    def test_basin_fraction_tracks_the_jump_law(
        self, ensemble, landscape, contexts
    ):
        # center the band on the two-state law calibrated by the exact
        # oracle (finite-eps rate and equilibrium split); the distance from
        # the calibrated law to the limit law is the documented eps bias
        spec, report = landscape
        ctx = contexts[0.25]
        tau = float(np.exp(ctx.log_tau))
        r_f = tau / mfpt_quadrature(spec, 0.25, report.x_a, report.x_b)
        z_inf = float(np.exp(ctx.log_z_left - ctx.log_z))
        lam = r_f / (1.0 - z_inf)
        t = ensemble.pair.t_nodes
        for tq in (0.5, 1.0, 2.0, 3.0):
            k = int(np.argmin(np.abs(t - tq)))
            model = z_inf + (1.0 - z_inf) * np.exp(-lam * t[k])
            pure = np.exp(-t[k])
            band = 3.0 * np.sqrt(model * (1.0 - model) / ensemble.n)
            emp = ensemble.basin_fraction[k]
            assert abs(emp - model) <= band
            assert abs(emp - pure) <= band + abs(model - pure)

    def test_flat_drift_recovers_brownian_variance(self):
        ctx = flat_context()
        res = simulate_sde(ctx, 0.0, 1e-3, 1.0, 4000, seed=5, n_bins=256)
        edges = res.pair.x_nodes
        c = 0.5 * (edges[:-1] + edges[1:])
        w = edges[1] - edges[0]
        frac = res.pair.masses[-1]
        m1 = float(frac @ c)
        var = float(frac @ (c - m1) ** 2) - w * w / 12.0
        target = 2.0 * ctx.eps * 1.0
        assert abs(var - target) <= 3.0 * target * np.sqrt(2.0 / 3999.0)

    def test_stability_guard_fires(self, contexts):
        ctx = contexts[0.25]
        with pytest.raises(StabilityError):
            simulate_sde(ctx, ctx.landmarks.x_a, 1e-2, 0.5, 10, seed=1)

    def test_rejects_bad_inputs(self, contexts):
        ctx = contexts[0.5]
        dt = stable_dt(ctx)
        with pytest.raises(RangeError):
            simulate_sde(ctx, ctx.landmarks.x_a, dt, 0.5, 0, seed=1)
        with pytest.raises(RangeError):
            simulate_sde(ctx, ctx.landmarks.x_a, -dt, 0.5, 10, seed=1)
        with pytest.raises(RangeError):
            simulate_sde(ctx, ctx.landmarks.x_a, dt, 0.0, 10, seed=1)
        lo, hi, _ = core_window(ctx.spec, ctx.landmarks, ctx.eps)
        with pytest.raises(RangeError):
            simulate_sde(ctx, hi + 1.0, dt, 0.5, 10, seed=1)


class TestJumpProcess:
    def test_lln_matches_exponential_decay(self):
        n = 100_000
        path = simulate_jump(0.7, n, 3.0, seed=11)
        for tq in (0.5, 1.0, 2.0):
            z_emp = float(np.interp(tq, path.t_nodes, path.z))
            z_true = 0.7 * np.exp(-tq)
            band = 3.0 * np.sqrt(z_true * (1.0 - z_true) / n)
            assert abs(z_emp - z_true) <= band

    def test_single_particle_is_one_step(self):
        path = simulate_jump(0.7, 1, 3.0, seed=4)
        assert path.z0 == 1.0
        assert set(np.unique(path.z)) <= {0.0, 1.0}
        assert np.count_nonzero(np.diff(path.z)) == 1

    def test_empirical_rate_decays_with_n(self):
        rates = [
            rate_limit(simulate_jump(0.7, n, 3.0, seed=21))
            for n in (1000, 10_000, 100_000)
        ]
        assert rates[0] > rates[1] > rates[2]
        assert rates[-1] <= 2e-3

    def test_deterministic(self):
        a = simulate_jump(0.5, 500, 2.0, seed=13)
        b = simulate_jump(0.5, 500, 2.0, seed=13)
        assert np.array_equal(a.z, b.z)

    def test_rejects_bad_inputs(self):
        with pytest.raises(RangeError):
            simulate_jump(0.5, 0, 1.0, seed=1)
        with pytest.raises(RangeError):
            simulate_jump(1.2, 10, 1.0, seed=1)
        with pytest.raises(RangeError):
            simulate_jump(0.5, 10, 0.0, seed=1)