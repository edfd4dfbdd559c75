"""Independent reference computations used to freeze derived test values.

Nothing here imports from ``klquant``: each oracle is computed from
textbook formulas, scipy root finders or mpmath quadrature.
"""

import math

import mpmath
import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm


def bm_eigen(k, T=1.0):
    w = (k - 0.5) * math.pi / T
    return 1.0 / (w * w)


def bm_eigenfunction(k, t, T=1.0):
    return math.sqrt(2.0 / T) * np.sin((k - 0.5) * math.pi * np.asarray(t) / T)


def bridge_eigen(k, T=1.0):
    return (T / (k * math.pi)) ** 2


def bridge_eigenfunction(k, t, T=1.0):
    return math.sqrt(2.0 / T) * np.sin(k * math.pi * np.asarray(t) / T)


def stat_ou_system(k_max, theta=1.0, sigma=1.0, T=1.0):
    """Eigenpairs of ``v exp(-theta |t - s|)``, ``v = sigma^2 / (2 theta)``.

    Frequencies solve ``2 theta w cos(wT) + (theta^2 - w^2) sin(wT) = 0``;
    eigenfunctions ``a cos(wt) + b sin(wt)`` with ``b/a = w / theta`` are
    normalised by numerical quadrature (mpmath), so this is independent
    of any closed-form normalisation constant.
    """
    f = lambda w: 2 * theta * w * math.cos(w * T) + (theta**2 - w * w) * math.sin(w * T)
    roots = []
    grid = np.linspace(1e-9, (k_max + 2) * math.pi / T, 20000)
    vals = [f(w) for w in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-15, rtol=1e-15))
    roots = roots[:k_max]
    v = sigma**2 / (2 * theta)
    lams = [2 * theta * v / (theta**2 + w * w) for w in roots]
    funcs = []
    for w in roots:
        def g(t, w=w):
            return np.cos(w * np.asarray(t)) + (theta / w) * np.sin(w * np.asarray(t))

        nrm = math.sqrt(float(mpmath.quad(lambda s: (mpmath.cos(w * s) + theta / w * mpmath.sin(w * s)) ** 2, [0, T])))
        funcs.append(lambda t, g=g, nrm=nrm: g(t) / nrm)
    return np.array(lams), np.array(roots), funcs


def fbm_cov(s, t, H):
    s, t = np.asarray(s, float), np.asarray(t, float)
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


def panel_weights_mp(l, r, H, dps=40):
    """Solve the 2x2 moment system with mpmath quadrature."""
    mpmath.mp.dps = dps
    l, r, H = mpmath.mpf(l), mpmath.mpf(r), mpmath.mpf(H)
    wf = lambda v: v ** (1 / (2 * H) - 1) / (2 * H)
    m0 = mpmath.quad(wf, [l, r])
    m1 = mpmath.quad(lambda v: v * wf(v), [l, r])
    # w_l + w_r = m0, l w_l + r w_r = m1
    w_r = (m1 - l * m0) / (r - l)
    w_l = m0 - w_r
    return float(w_l), float(w_r)


def gaussian_distortion_grid(points, n=1_000_000, lim=12.0):
    """E min (Z - x)^2 by a fine midpoint rule on [-lim, lim]."""
    z = np.linspace(-lim, lim, n + 1)
    mid = 0.5 * (z[1:] + z[:-1])
    h = z[1] - z[0]
    pts = np.sort(np.asarray(points))
    b = 0.5 * (pts[1:] + pts[:-1])
    idx = np.searchsorted(b, mid)
    return float(np.sum((mid - pts[idx]) ** 2 * norm.pdf(mid)) * h)


def black_scholes_call(S, K, r, sigma, T):
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * T) / (sigma * math.sqrt(T))
    d2 = d1 - sigma * math.sqrt(T)
    return S * norm.cdf(d1) - K * math.exp(-r * T) * norm.cdf(d2)


HALF_NORMAL_MEAN = math.sqrt(2.0 / math.pi)


def affine_rule_on_square(n, T=1.0, dps=30):
    """Exact output of the panel rule (H = 1/4) applied to t = v^2.

    The rule integrates the piecewise-linear interpolant of v^2 exactly
    against ``2 v dv``, so its output is ``T^2/2`` minus the interpolation
    residual summed over panels.
    """
    mpmath.mp.dps = dps
    u = [mpmath.sqrt(mpmath.mpf(i) * T / n) for i in range(n + 1)]
    resid = sum(mpmath.quad(lambda v: 2 * v * (v - l) * (v - r), [l, r]) for l, r in zip(u[:-1], u[1:]))
    return float(mpmath.mpf(T) ** 2 / 2 - resid)


def r_integral_mp(t, T, H, dps=30):
    """Integral over [0, T] of the fBm covariance in s, by mpmath quadrature."""
    mpmath.mp.dps = dps
    t, H = mpmath.mpf(t), mpmath.mpf(H)
    g = lambda s: (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H)) / 2
    return float(mpmath.quad(g, [0, t, T]))


def gaussian_distortion_cells(points, lim=12.0, order=60):
    """E min (Z - x)^2 by Gauss-Legendre on every Voronoi cell (clipped to +-lim)."""
    pts = np.sort(np.asarray(points, dtype=float))
    edges = np.concatenate(([-lim], 0.5 * (pts[1:] + pts[:-1]), [lim]))
    x, w = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, b, c in zip(edges[:-1], edges[1:], pts):
        z = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * (z - c) ** 2 * norm.pdf(z))
    return float(total)
