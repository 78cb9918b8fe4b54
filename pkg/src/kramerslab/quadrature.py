"""Log-space composite quadrature for Laplace-type integrands.

All integrands here are of the form exp(g(x)) with g spanning hundreds of
units (g = -V/eps or +V/eps), so every integral is assembled as a
log-sum-exp over Gauss-Legendre panel nodes and exchanged as a logarithm.
Panels are refined geometrically near the landmark points where the
integrand peaks on a sqrt(eps) scale.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import QuadratureError

# width (in units of sqrt(eps)) of the refined zone around each landmark
REFINE_RADIUS = 5.0
# geometric halvings inside a refined zone
REFINE_LEVELS = 10
# exponent below which exp(g) underflows to an exact double-precision zero
UNDERFLOW_LOG = -745.0


def gauss_legendre_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]. Thin wrapper, cached by numpy itself."""
    return np.polynomial.legendre.leggauss(order)


def refined_edges(
    lo: float,
    hi: float,
    centers: Sequence[float],
    eps: float,
    base_panels: int = 48,
) -> np.ndarray:
    """Panel edges on [lo, hi], geometrically clustered near each center.

    Around every center c the edges c +- r/2^k for k = 0..REFINE_LEVELS
    with r = REFINE_RADIUS*sqrt(eps) resolve the sqrt(eps)-wide peak of
    exp(-V/eps). A uniform background of base_panels edges covers the rest.
    """
    if not hi > lo:
        raise QuadratureError(f"empty integration range [{lo}, {hi}]")
    edges = [np.linspace(lo, hi, base_panels + 1)]
    r = REFINE_RADIUS * np.sqrt(eps)
    offsets = r / 2.0 ** np.arange(REFINE_LEVELS + 1)
    for c in centers:
        edges.append(np.asarray([c]))
        edges.append(c + offsets)
        edges.append(c - offsets)
    out = np.unique(np.concatenate(edges))
    out = out[(out >= lo) & (out <= hi)]
    if out[0] > lo:
        out = np.concatenate([[lo], out])
    if out[-1] < hi:
        out = np.concatenate([out, [hi]])
    # drop degenerate panels produced by clipping
    keep = np.concatenate([[True], np.diff(out) > 1e-14 * max(1.0, abs(hi - lo))])
    return out[keep]


def _panel_nodes(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened GL nodes and log-weights (weight times jacobian) per node."""
    xg, wg = gauss_legendre_rule(order)
    a = edges[:-1][:, None]
    b = edges[1:][:, None]
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * xg[None, :]
    logw = np.log(wg)[None, :] + np.log(half)
    return nodes.ravel(), logw.ravel()


def log_integral(
    log_f: Callable[[np.ndarray], np.ndarray],
    edges: np.ndarray,
    order: int = 16,
    tol: float = 1e-8,
    check: bool = True,
) -> float:
    """log of integral exp(log_f) over the panel decomposition.

    The error estimate splits every panel in half and compares; relative
    error above tol raises QuadratureError. Panels whose maximum exponent
    is below the underflow threshold relative to the running maximum are
    kept anyway (logsumexp absorbs them at zero cost).
    """
    nodes, logw = _panel_nodes(edges, order)
    val = logsumexp(log_f(nodes) + logw)
    if not check:
        return float(val)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fine = np.unique(np.concatenate([edges, mids]))
    nodes2, logw2 = _panel_nodes(fine, order)
    val2 = logsumexp(log_f(nodes2) + logw2)
    rel = abs(np.expm1(val - val2)) if np.isfinite(val2) else np.inf
    if not rel <= tol:
        raise QuadratureError(
            f"panel-doubling estimate {rel:.3e} above tolerance {tol:.1e}"
        )
    return float(val2)


def log_gaussian_tail(log_f_edge: float, df_edge: float, alpha: float, eps: float) -> float:
    """log of an analytic bound on a one-sided tail of exp(log_f).

    Valid when -log_f*eps is convex with second derivative >= alpha beyond
    the edge and slope df_edge = d(-eps*log_f)/dx points uphill (> 0).
    The bound is exp(log_f_edge) * min(eps/df_edge, sqrt(pi*eps/(2*alpha))).
    """
    if alpha <= 0:
        raise QuadratureError("tail bound requires a positive convexity certificate")
    widths = [np.sqrt(np.pi * eps / (2.0 * alpha))]
    if df_edge > 0:
        widths.append(eps / df_edge)
    return float(log_f_edge + np.log(min(widths)))


def cumulative_log_integral(
    log_f: Callable[[np.ndarray], np.ndarray],
    xs: np.ndarray,
    order: int = 8,
) -> np.ndarray:
    """log of integral exp(log_f) from xs[0] to xs[i], for every i.

    xs must be strictly increasing and already resolve the integrand (one
    GL panel per consecutive gap). Entry 0 is -inf (empty integral). The
    running sum accumulates with logaddexp, which is monotone and stable.
    """
    xs = np.asarray(xs, dtype=float)
    if np.any(np.diff(xs) <= 0):
        raise QuadratureError("cumulative grid must be strictly increasing")
    xg, wg = gauss_legendre_rule(order)
    a = xs[:-1][:, None]
    b = xs[1:][:, None]
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * xg[None, :]
    logw = np.log(wg)[None, :] + np.log(half)
    per_gap = logsumexp(log_f(nodes.ravel()).reshape(nodes.shape) + logw, axis=1)
    out = np.empty(xs.size)
    out[0] = -np.inf
    out[1:] = np.logaddexp.accumulate(per_gap)
    return out


def trapezoid_weights(xs: np.ndarray) -> np.ndarray:
    """Trapezoid-rule node weights for a nonuniform grid."""
    xs = np.asarray(xs, dtype=float)
    w = np.zeros_like(xs)
    d = np.diff(xs)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w
