import numpy as np
import pytest

from kramerslab.functionals import DensityFluxPath, DiscreteMeasure
from kramerslab.measures import build_context, gamma_log_density
from kramerslab.potential import reference_potential, validate

LADDER = (0.5, 0.35, 0.25, 0.18, 0.125)


@pytest.fixture(scope="session")
def landscape():
    spec = reference_potential(depth=1.4, tilt=0.35)
    return spec, validate(spec)


@pytest.fixture(scope="session")
def contexts(landscape):
    spec, report = landscape
    return {eps: build_context(spec, report, eps) for eps in LADDER}


def uniform_edges(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def invariant_slice(ctx, edges):
    c = 0.5 * (edges[:-1] + edges[1:])
    w = np.exp(gamma_log_density(ctx, c, "full")) * np.diff(edges)
    return DiscreteMeasure(edges, w / w.sum())


def perturbation_path(ctx, delta, n_cells=240, n_windows=20, dt=0.01):
    """Closed-boundary path whose flux is a small prescribed bump.

    Masses evolve by the exact discrete continuity equation, so the path
    passes its own checks to machine precision.
    """
    rep = ctx.landmarks
    lo, hi = rep.x_a - 1.2, rep.x_bplus + 1.2
    edges = uniform_edges(lo, hi, n_cells)
    h = np.diff(edges)
    base = invariant_slice(ctx, edges)
    t_nodes = dt * np.arange(n_windows + 1)

    s = (edges - rep.x_a) / (rep.x_b - rep.x_a)
    shape = np.where((s > 0) & (s < 1), np.sin(np.pi * np.clip(s, 0, 1)) ** 2, 0.0)
    flux = np.empty((n_windows, n_cells + 1))
    masses = np.empty((n_windows + 1, n_cells))
    masses[0] = base.w
    for k in range(n_windows):
        flux[k] = delta * shape * (1.0 + 0.3 * np.cos(t_nodes[k]))
        masses[k + 1] = masses[k] - dt * np.diff(flux[k])
    rho = masses / h[None, :]
    return DensityFluxPath(t_nodes, edges, rho, flux, ce_tol=1e-12)
