"""Covariance kernels of the supported Gaussian processes and their
closed-form Karhunen-Loeve systems.

All kernels are centred. Ornstein-Uhlenbeck kernels follow
``dX = -theta X dt + sigma dW``; the mean-reversion level is taken as 0.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np


class Family(str, Enum):
    BM = "bm"
    BRIDGE = "bridge"
    OU = "ou"
    OU_STAT = "ou-stat"
    FBM = "fbm"
    CUSTOM = "custom"


class DomainError(ValueError):
    """Time argument outside [0, T]."""


class ParameterError(ValueError):
    """Invalid process parameter."""


class UnsupportedFamilyError(ValueError):
    """No closed-form K-L system exists for this family."""


_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class CovarianceKernel:
    """Covariance function Gamma(s, t) of a centred process on [0, T].

    Build instances with the factory functions below (:func:`brownian_motion`,
    :func:`fbm`, ...) or :func:`custom_kernel` for a user-supplied evaluator.
    """

    family: Family
    T: float = 1.0
    params: dict = field(default_factory=dict)
    evaluator: object = None

    @property
    def H(self):
        return self.params.get("H", 0.5)

    @property
    def smooth(self):
        """True when the even-power Nystrom error expansion applies."""
        if self.family is Family.FBM:
            return self.H >= 0.5
        return self.params.get("smooth", True)

    def __call__(self, s, t):
        return eval_cov(self, s, t)

    def matrix(self, s, t=None):
        """Covariance matrix ``Gamma(s_i, t_j)``, exactly symmetric when ``t is None``."""
        s = np.asarray(s, dtype=float)
        if t is None:
            m = _raw(self, s[:, None], s[None, :])
            iu = np.triu_indices(len(s), 1)
            m[iu[1], iu[0]] = m[iu]
            return m
        t = np.asarray(t, dtype=float)
        return _raw(self, s[:, None], t[None, :])

    def to_dict(self):
        if self.family is Family.CUSTOM:
            raise ParameterError("custom kernels are not serialisable")
        return {"family": self.family.value, "T": self.T, **self.params}


def _check_T(T):
    if not (T > 0 and math.isfinite(T)):
        raise ParameterError(f"horizon T must be positive, got {T}")


def brownian_motion(T=1.0):
    _check_T(T)
    return CovarianceKernel(Family.BM, float(T))


def brownian_bridge(T=1.0):
    _check_T(T)
    return CovarianceKernel(Family.BRIDGE, float(T))


def ornstein_uhlenbeck(theta=1.0, sigma=1.0, T=1.0):
    """OU process started at 0."""
    _check_T(T)
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return CovarianceKernel(Family.OU, float(T), {"theta": float(theta), "sigma": float(sigma)})


def stationary_ou(theta=1.0, sigma=1.0, T=1.0, sigma0=None):
    """OU process with ``X_0 ~ N(0, sigma0**2)``.

    ``sigma0`` defaults to the stationary standard deviation
    ``sigma / sqrt(2 theta)``; only that choice has a closed-form K-L system.
    """
    _check_T(T)
    if not theta > 0:
        raise ParameterError(f"theta must be positive, got {theta}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if sigma0 is None:
        sigma0 = sigma / math.sqrt(2.0 * theta)
    if sigma0 < 0:
        raise ParameterError(f"sigma0 must be non-negative, got {sigma0}")
    return CovarianceKernel(
        Family.OU_STAT,
        float(T),
        {"theta": float(theta), "sigma": float(sigma), "sigma0": float(sigma0)},
    )


def fbm(H, T=1.0):
    _check_T(T)
    if not 0.0 < H < 1.0:
        raise ParameterError(f"Hurst exponent H must lie in (0, 1), got {H}")
    return CovarianceKernel(Family.FBM, float(T), {"H": float(H)})


def custom_kernel(evaluator, T=1.0, trace=None, smooth=True):
    """Wrap a symmetric vectorised evaluator ``f(s, t)``.

    Extension point for kernels without a dedicated family. ``trace`` (the
    integral of ``f(t, t)`` over [0, T]) is needed by the distortion
    formulas; it is computed by quadrature when omitted.
    """
    _check_T(T)
    params = {"smooth": bool(smooth)}
    if trace is not None:
        params["trace"] = float(trace)
    return CovarianceKernel(Family.CUSTOM, float(T), params, evaluator)


def make_kernel(family, T=1.0, H=None, theta=1.0, sigma=1.0, sigma0=None):
    family = Family(family)
    if family is Family.BM:
        return brownian_motion(T)
    if family is Family.BRIDGE:
        return brownian_bridge(T)
    if family is Family.OU:
        return ornstein_uhlenbeck(theta, sigma, T)
    if family is Family.OU_STAT:
        return stationary_ou(theta, sigma, T, sigma0)
    if family is Family.FBM:
        if H is None:
            raise ParameterError("fbm requires the Hurst exponent H")
        return fbm(H, T)
    raise ParameterError(f"cannot build kernel of family {family.value!r} from parameters")


def kernel_from_dict(d):
    d = dict(d)
    fam = d.pop("family")
    return make_kernel(fam, **d)


def _pow2h(x, H):
    # |x|^(2H) with an explicit zero branch (no log(0))
    x = np.abs(x)
    out = np.zeros(np.broadcast(x).shape)
    pos = x > 0
    out[pos] = np.exp(2.0 * H * np.log(x[pos]))
    return out


def _raw(kernel, s, t):
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    fam = kernel.family
    T = kernel.T
    if fam is Family.BM:
        return np.minimum(s, t)
    if fam is Family.BRIDGE:
        return np.minimum(s, t) - s * t / T
    if fam is Family.OU:
        th, sg = kernel.params["theta"], kernel.params["sigma"]
        lo = np.minimum(s, t)
        # e^{-th|t-s|} - e^{-th(t+s)} = e^{-th|t-s|}(1 - e^{-2 th min})
        return sg * sg / (2 * th) * np.exp(-th * np.abs(t - s)) * -np.expm1(-2 * th * lo)
    if fam is Family.OU_STAT:
        th, sg, s0 = (kernel.params[k] for k in ("theta", "sigma", "sigma0"))
        v = sg * sg / (2 * th)
        return v * np.exp(-th * np.abs(t - s)) + (s0 * s0 - v) * np.exp(-th * (s + t))
    if fam is Family.FBM:
        H = kernel.H
        return 0.5 * (_pow2h(s, H) + _pow2h(t, H) - _pow2h(s - t, H))
    return np.asarray(kernel.evaluator(s, t), dtype=float)


def eval_cov(kernel, s, t):
    """Evaluate ``Gamma(s, t)``; scalars in, scalar out, arrays broadcast.

    Raises :class:`DomainError` if an argument lies outside [0, T].
    """
    sa = np.asarray(s, dtype=float)
    ta = np.asarray(t, dtype=float)
    lim = kernel.T * (1 + _DOMAIN_TOL)
    for x in (sa, ta):
        if np.any(x < -_DOMAIN_TOL) or np.any(x > lim):
            raise DomainError(f"time outside [0, {kernel.T}]")
    # symmetric by construction: evaluate on (min, max)
    lo, hi = np.minimum(sa, ta), np.maximum(sa, ta)
    out = _raw(kernel, lo, hi)
    if out.ndim == 0:
        return float(out)
    return out


def kernel_trace(kernel):
    """Exact value of the integral of Gamma(t, t) over [0, T]."""
    T = kernel.T
    fam = kernel.family
    if fam is Family.BM:
        return T * T / 2
    if fam is Family.BRIDGE:
        return T * T / 6
    if fam is Family.OU:
        th, sg = kernel.params["theta"], kernel.params["sigma"]
        return sg * sg / (2 * th) * (T + math.expm1(-2 * th * T) / (2 * th))
    if fam is Family.OU_STAT:
        th, sg, s0 = (kernel.params[k] for k in ("theta", "sigma", "sigma0"))
        v = sg * sg / (2 * th)
        return v * T - (s0 * s0 - v) * math.expm1(-2 * th * T) / (2 * th)
    if fam is Family.FBM:
        H = kernel.H
        return T ** (2 * H + 1) / (2 * H + 1)
    if "trace" in kernel.params:
        return kernel.params["trace"]
    from scipy.integrate import quad

    return quad(lambda x: float(kernel.evaluator(x, x)), 0.0, T, limit=200)[0]


# ---------------------------------------------------------------------------
# closed-form K-L systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormKL:
    """First ``k_max`` eigenpairs of a kernel with a known K-L system."""

    kernel: CovarianceKernel
    eigenvalues: np.ndarray
    omegas: np.ndarray = None

    @property
    def family(self):
        return self.kernel.family

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    @property
    def T(self):
        return self.kernel.T

    def eigenfunction(self, k, t):
        """Evaluate the L2-normalised ``e_k`` (1-based ``k``) at times ``t``."""
        return self.eigenfunctions(t)[k - 1]

    def eigenfunctions(self, t, n_modes=None):
        """Matrix ``(n_modes, len(t))`` of eigenfunction values."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.n_modes if n_modes is None else n_modes
        T = self.T
        k = np.arange(1, m + 1)[:, None]
        fam = self.family
        if fam is Family.BM:
            return math.sqrt(2 / T) * np.sin(np.pi * (k - 0.5) * t / T)
        if fam is Family.BRIDGE:
            return math.sqrt(2 / T) * np.sin(np.pi * k * t / T)
        w = self.omegas[:m, None]
        if fam is Family.OU:
            norm = 1.0 / np.sqrt(T / 2 - np.sin(2 * w * T) / (4 * w))
            return norm * np.sin(w * t)
        th = self.kernel.params["theta"]
        return _stat_ou_norm(w, th, T) * (w * np.cos(w * t) + th * np.sin(w * t))


def _stat_ou_norm(w, th, T):
    s2 = np.sin(2 * w * T) / (2 * w)
    inv_sq = th / 2 * (1 - np.cos(2 * w * T)) + w * w / 2 * (T + s2) + th * th / 2 * (T - s2)
    return 1.0 / np.sqrt(inv_sq)


def _ou_zero_eq(w, th, T):
    return th * math.sin(w * T) + w * math.cos(w * T), th * T * math.cos(w * T) + math.cos(w * T) - w * T * math.sin(w * T)


def _ou_stat_eq(w, th, T):
    c, s = math.cos(w * T), math.sin(w * T)
    f = 2 * th * w * c + (th * th - w * w) * s
    df = 2 * th * c - 2 * th * w * T * s - 2 * w * s + (th * th - w * w) * T * c
    return f, df


def _roots_in(eq, lo, hi, th, T, n_scan=64, tol=1e-13):
    """All sign changes of ``eq`` on (lo, hi): bisection then Newton polish."""
    grid = np.linspace(lo, hi, n_scan + 1)
    # keep the open interval: nudge endpoints inward
    span = hi - lo
    grid[0] += 1e-12 * span
    grid[-1] -= 1e-12 * span
    vals = [eq(x, th, T)[0] for x in grid]
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb > 0:
            continue
        for _ in range(200):
            mid = 0.5 * (a + b)
            fm = eq(mid, th, T)[0]
            if fm == 0.0 or b - a < 1e-15 * max(1.0, abs(mid)):
                a = b = mid
                break
            if fa * fm < 0:
                b = mid
            else:
                a, fa = mid, fm
        x = 0.5 * (a + b)
        for _ in range(8):
            f, df = eq(x, th, T)
            if abs(f) <= tol or df == 0.0:
                break
            step = f / df
            if not (a - 1e-12 <= x - step <= b + 1e-12):
                break
            x -= step
        roots.append(x)
    return roots


def ou_frequencies(family, theta, T, k_max):
    """Sorted positive roots of the OU frequency equation.

    Each interval ``((k-1) pi / T, k pi / T)`` is scanned for sign changes,
    bracketed by bisection and polished by Newton.
    """
    family = Family(family)
    eq = _ou_zero_eq if family is Family.OU else _ou_stat_eq
    roots = []
    k = 1
    while len(roots) < k_max:
        rs = _roots_in(eq, (k - 1) * math.pi / T, k * math.pi / T, theta, T)
        if not rs and k > k_max + 10:
            raise RuntimeError("root bracketing failed for OU frequencies")
        roots.extend(rs)
        k += 1
    return np.array(sorted(roots)[:k_max])


def closed_form_kl(kernel, k_max):
    """Closed-form K-L system (first ``k_max`` modes) of ``kernel``.

    Raises
    ------
    UnsupportedFamilyError
        For fBm, custom kernels, and stationary OU with a non-stationary
        initial law.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    T = kernel.T
    fam = kernel.family
    k = np.arange(1, k_max + 1)
    if fam is Family.BM:
        return ClosedFormKL(kernel, (T / (np.pi * (k - 0.5))) ** 2)
    if fam is Family.BRIDGE:
        return ClosedFormKL(kernel, (T / (np.pi * k)) ** 2)
    if fam in (Family.OU, Family.OU_STAT):
        th, sg = kernel.params["theta"], kernel.params["sigma"]
        if fam is Family.OU_STAT:
            s0 = kernel.params["sigma0"]
            if not math.isclose(s0 * s0, sg * sg / (2 * th), rel_tol=1e-12):
                raise UnsupportedFamilyError(
                    "closed form requires sigma0**2 == sigma**2 / (2 theta)"
                )
        w = ou_frequencies(fam, th, T, k_max)
        return ClosedFormKL(kernel, sg * sg / (w * w + th * th), w)
    raise UnsupportedFamilyError(f"no closed-form K-L system for {fam.value}")
