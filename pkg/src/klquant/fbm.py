"""Nystrom scheme for the fractional Brownian motion kernel.

For H >= 1/2 the kernel is smooth enough for the plain trapezoidal rule.
For H < 1/2 the boundary singularity at t = 0 is removed by the change of
variable u = t^(2H) and a panel rule exact on affine functions of u under
the weight (1/2H) u^(1/2H - 1); the diagonal singularity is handled by
subtracting it, which adds ``Delta_ii = r(t_i) - sum_j w_j K_ij`` to the
symmetrised matrix.
"""

import numpy as np

from .kernels import fbm as fbm_kernel
from .nystrom import QuadratureRule, kl_approx, trapezoidal_rule

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
# map to [0, 1]
_GL_S = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


def _check_H(H):
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst exponent H must lie in (0, 1), got {H}")


def fbm_panel_weights_closed(l, r, H):
    """Panel weights ``(w_l, w_r)`` straight from the closed-form solution.

    Loses about 1e-10 relative accuracy on narrow panels far from 0 through
    cancellation; :func:`fbm_panel_weights` avoids that.
    """
    p = 1.0 / (2.0 * H)
    den = (2 * H + 1) * (r - l)
    w_l = (l ** (p + 1) + 2 * H * r ** (p + 1) - (2 * H + 1) * l**p * r) / den
    w_r = (r ** (p + 1) + 2 * H * l ** (p + 1) - (2 * H + 1) * r**p * l) / den
    return w_l, w_r


def fbm_panel_weights(l, r, H):
    """Two-point rule on [l, r] exact for ``a v + b`` under ``(1/2H) v^(1/2H-1)``.

    Parameters
    ----------
    l, r : float
        Panel end points in the transformed variable, ``0 <= l < r``.
    H : float
        Hurst exponent.

    Returns
    -------
    (w_l, w_r) : tuple of float

    Notes
    -----
    Panels touching 0 use the closed form (no cancellation there). Other
    panels integrate the smooth moments ``(1 - s)`` and ``s`` against
    ``(l + (r - l) s)^(1/2H - 1)`` with 24-point Gauss-Legendre, which is
    exact to rounding because the weight is analytic away from 0 and
    ``r / l`` stays bounded.
    """
    _check_H(H)
    if not 0.0 <= l < r:
        raise ValueError(f"need 0 <= l < r, got l={l}, r={r}")
    if l == 0.0 or r > 4.0 * l:
        return fbm_panel_weights_closed(l, r, H)
    alpha = 1.0 / (2.0 * H) - 1.0
    d = r - l
    dens = (l + d * _GL_S) ** alpha * (d / (2.0 * H))
    w_r = float(np.dot(_GL_W, dens * _GL_S))
    w_l = float(np.dot(_GL_W, dens * (1.0 - _GL_S)))
    return w_l, w_r


class SingularQuadrature(QuadratureRule):
    """Extended panel rule on the abscissas ``x_i = i T / n``.

    Abscissas are stored in original time; ``transformed`` gives
    ``u_i = x_i^(2H)``.
    """

    def __init__(self, abscissas, weights, H):
        super().__init__(abscissas, weights)
        object.__setattr__(self, "H", float(H))

    @property
    def transformed(self):
        return self.abscissas ** (2 * self.H)

    @property
    def alpha(self):
        return 1.0 / (2 * self.H) - 1.0


def extended_rule(T, n, H):
    """Accumulate the panel rule over ``(x_i^(2H), x_(i+1)^(2H))``."""
    _check_H(H)
    if n < 2:
        raise ValueError(f"need n >= 2 panels, got {n}")
    x = np.arange(n + 1) * (T / n)
    x[-1] = T
    u = x ** (2 * H)
    w = np.zeros(n + 1)
    for i in range(n):
        wl, wr = fbm_panel_weights(u[i], u[i + 1], H)
        w[i] += wl
        w[i + 1] += wr
    # QuadratureRule requires positive weights; w_0 > 0 for every H in (0, 1)
    return SingularQuadrature(x, w, H)


def r_integral(t, T, H):
    """``r(t) = integral over [0, T] of Gamma_H(t, s) ds`` in closed form."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > T * (1 + 1e-12)):
        raise ValueError(f"t outside [0, {T}]")
    t = np.clip(t, 0.0, T)
    a = 2 * H + 1
    out = 0.5 * ((T**a - t**a) / a + t ** (2 * H) * T - (T - t) ** a / a)
    return float(out) if out.ndim == 0 else out


def diagonal_correction(kernel, rule):
    """``Delta_ii = r(t_i) - sum_j w_j Gamma(t_i, t_j)``."""
    k = kernel.matrix(rule.abscissas)
    return r_integral(rule.abscissas, kernel.T, kernel.H) - k @ rule.weights


def singular_rule_factory(kernel, n):
    rule = extended_rule(kernel.T, n, kernel.H)
    return rule, diagonal_correction(kernel, rule)


def smooth_rule_factory(kernel, n):
    return trapezoidal_rule(kernel.T, n), None


def fbm_kl(H, T=1.0, n_modes=5, resolutions=(50, 100, 200), singular=None, use_numba=None):
    """K-L approximation of fBm on [0, T].

    ``singular`` forces the corrected scheme on (True) or off (False); by
    default it is used for H < 1/2 only.
    """
    kernel = fbm_kernel(H, T)
    if singular is None:
        singular = H < 0.5
    factory = singular_rule_factory if singular else smooth_rule_factory
    return kl_approx(kernel, n_modes, resolutions, rule_factory=factory, use_numba=use_numba)


def kl_for_kernel(kernel, n_modes, resolutions, use_numba=None):
    """Route to the fBm scheme when appropriate, else the plain Nystrom one."""
    if kernel.family.value == "fbm":
        return fbm_kl(kernel.H, kernel.T, n_modes, resolutions, use_numba=use_numba)
    return kl_approx(kernel, n_modes, resolutions, use_numba=use_numba)


def decay_slope(eigenvalues, k_lo=5, k_hi=30):
    """Least-squares slope of log(lambda_k) against log(k) over [k_lo, k_hi]."""
    k = np.arange(k_lo, k_hi + 1)
    lam = np.asarray(eigenvalues)[k_lo - 1 : k_hi]
    return float(np.polyfit(np.log(k), np.log(lam), 1)[0])


__all__ = [
    "fbm_panel_weights",
    "fbm_panel_weights_closed",
    "extended_rule",
    "r_integral",
    "diagonal_correction",
    "fbm_kl",
    "kl_for_kernel",
    "decay_slope",
    "SingularQuadrature",
]
