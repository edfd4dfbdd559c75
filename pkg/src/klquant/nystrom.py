"""Nystrom discretisation of the K-L eigenproblem with Richardson-Romberg
extrapolation across three resolutions.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .eigensolver import solve_eigen

SIGN_THRESHOLD = 1e-6
NULL_EIGENVALUE = 1e-14


@dataclass(frozen=True)
class QuadratureRule:
    abscissas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.abscissas.shape != self.weights.shape:
            raise ValueError("abscissas and weights differ in length")
        if np.any(np.diff(self.abscissas) <= 0):
            raise ValueError("abscissas must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def n(self):
        """Number of panels."""
        return len(self.abscissas) - 1

    @property
    def T(self):
        return float(self.abscissas[-1])

    def integrate(self, values):
        return float(np.dot(self.weights, values))


def trapezoidal_rule(T, n):
    """Composite trapezoidal rule with ``n`` panels on [0, T]."""
    if n < 2:
        raise ValueError(f"trapezoidal rule needs n >= 2 panels, got {n}")
    h = T / n
    s = np.arange(n + 1) * h
    s[-1] = T
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2
    return QuadratureRule(s, w)


def assemble_symmetrized(kernel, rule, correction=None):
    """``M_ij = sqrt(w_i) Gamma(s_i, s_j) sqrt(w_j)`` plus an optional diagonal."""
    if abs(rule.T - kernel.T) > 1e-12 * kernel.T:
        raise ValueError("rule and kernel horizons differ")
    sw = np.sqrt(rule.weights)
    m = kernel.matrix(rule.abscissas)
    m *= sw[:, None]
    m *= sw[None, :]
    # exact symmetry after scaling
    iu = np.triu_indices(len(sw), 1)
    m[iu[1], iu[0]] = m[iu]
    if correction is not None:
        correction = np.asarray(correction, dtype=float)
        if correction.shape != sw.shape:
            raise ValueError(
                f"correction has length {correction.size}, rule has {sw.size} abscissas"
            )
        m[np.diag_indices_from(m)] += correction
    return m


def fix_signs(samples):
    """Flip each row so its first entry with ``|f| > 1e-6`` is positive."""
    samples = np.array(samples, dtype=float, copy=True)
    for row in samples:
        idx = np.flatnonzero(np.abs(row) > SIGN_THRESHOLD)
        if idx.size and row[idx[0]] < 0:
            row *= -1.0
    return samples


@dataclass(frozen=True)
class DiscreteEigenSystem:
    """Leading eigenpairs of one Nystrom discretisation.

    ``samples[k, j]`` is ``f_k(s_j)``, normalised in the discrete weighted
    inner product. ``correction`` is the diagonal added to the symmetrised
    matrix (zero for the plain rule); ``trace`` is the trace of that matrix,
    i.e. the sum of *all* its eigenvalues.
    """

    kernel: object
    rule: QuadratureRule
    eigenvalues: np.ndarray
    samples: np.ndarray
    correction: np.ndarray
    trace: float
    raw_min_eigenvalue: float
    full_eigenvalues: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.rule.n

    def gram(self):
        w = self.rule.weights
        return (self.samples * w) @ self.samples.T

    def integral_terms(self, t):
        """``sum_j w_j Gamma(t, s_j) f_k(s_j)`` for every mode: shape (m, len(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        kt = self.kernel.matrix(t, self.rule.abscissas)
        return (self.samples * self.rule.weights) @ kt.T

    def diagonal_shift(self, t):
        """Diagonal correction extended off the grid (zero for the plain rule)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.any(self.correction):
            return np.zeros_like(t)
        from .fbm import r_integral

        kt = self.kernel.matrix(t, self.rule.abscissas)
        return r_integral(t, self.kernel.T, self.kernel.H) - kt @ self.rule.weights


def recover_eigenfunction_samples(rule, vectors):
    """Map eigenvectors of the symmetrised matrix back to ``f_k(s_j)``.

    Each row is divided by ``sqrt(w_j)``, renormalised in the weighted inner
    product and sign-fixed.
    """
    w = rule.weights
    if np.any(w <= 0):
        raise ValueError("zero quadrature weight")
    f = np.atleast_2d(vectors) / np.sqrt(w)
    norms = np.sqrt((f * f) @ w)
    f /= norms[:, None]
    return fix_signs(f)


def nystrom_system(kernel, rule, n_modes, correction=None, use_numba=None):
    """Assemble, solve and post-process one discretisation."""
    m = assemble_symmetrized(kernel, rule, correction)
    trace = float(np.trace(m))
    vals, vecs = solve_eigen(m, use_numba=use_numba)
    lam1 = vals[0]
    raw_min = float(vals[-1])
    if raw_min < -1e-12 * abs(lam1):
        warnings.warn(
            f"discrete eigenvalue {raw_min:.3e} below -1e-12*lambda_1; clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    kept = np.where(vals[:n_modes] < 0, 0.0, vals[:n_modes])
    samples = recover_eigenfunction_samples(rule, vecs[:n_modes])
    corr = np.zeros(len(rule.weights)) if correction is None else np.asarray(correction, float)
    return DiscreteEigenSystem(
        kernel, rule, kept, samples, corr, trace, raw_min, full_eigenvalues=vals
    )


def richardson_romberg3(u_k, u_l, u_m, k, l, m):
    """Three-step Richardson-Romberg combination cancelling the 1/n^2 and
    1/n^4 error terms of ``U_n = V + a/n^2 + b/n^4``.

    Works elementwise on arrays. The resolutions must be pairwise distinct.
    """
    k, l, m = float(k), float(l), float(m)
    if k == l or l == m or k == m:
        raise ValueError("Richardson-Romberg needs three distinct resolutions")
    k2, l2, m2 = k * k, l * l, m * m
    num = (
        np.asarray(u_k) * k2 * k2 * (m2 - l2)
        + np.asarray(u_l) * l2 * l2 * (k2 - m2)
        + np.asarray(u_m) * m2 * m2 * (l2 - k2)
    )
    den = (m2 - l2) * (l2 * m2 + k2 * k2 - m2 * k2 - l2 * k2)
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


def nystrom_interpolate(kernel, rule, lam, samples, t, shift=0.0):
    """Nystrom interpolant ``f(t) = sum_j w_j Gamma(t, s_j) f(s_j) / lambda``.

    ``shift`` is the off-grid diagonal correction for corrected systems, in
    which case the denominator becomes ``lambda - shift(t)``.
    """
    if lam <= NULL_EIGENVALUE:
        raise ValueError(f"eigenvalue {lam!r} is numerically null")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    kt = kernel.matrix(t_arr, rule.abscissas)
    vals = kt @ (rule.weights * np.asarray(samples, dtype=float))
    vals = vals / (lam - np.asarray(shift))
    return float(vals[0]) if np.ndim(t) == 0 else vals


@dataclass(frozen=True)
class KLApproximation:
    """Extrapolated K-L system built from three Nystrom resolutions."""

    kernel: object
    systems: tuple
    eigenvalues: np.ndarray
    near_degenerate: tuple = ()

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    @property
    def T(self):
        return self.kernel.T

    @property
    def resolutions(self):
        return tuple(s.n for s in self.systems)

    def raw_eigenvalues(self):
        """(3, m) array of per-resolution eigenvalues."""
        return np.array([s.eigenvalues for s in self.systems])

    def eigenfunctions(self, t, n_modes=None):
        """Extrapolated eigenfunctions at times ``t``: shape (n_modes, len(t)).

        The three interpolated integrals are extrapolated, as are the three
        denominators ``lambda - shift(t)`` (which reduce to the extrapolated
        eigenvalue for uncorrected systems).
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.n_modes if n_modes is None else n_modes
        k, l, mm = self.resolutions
        nums = [s.integral_terms(t)[:m] for s in self.systems]
        num = richardson_romberg3(*nums, k, l, mm)
        shifts = [s.diagonal_shift(t) for s in self.systems]
        if any(np.any(sh) for sh in shifts):
            dens = [s.eigenvalues[:m, None] - sh[None, :] for s, sh in zip(self.systems, shifts)]
            den = richardson_romberg3(*dens, k, l, mm)
        else:
            den = self.eigenvalues[:m, None]
        return num / den

    def eigenfunction(self, k, t):
        return self.eigenfunctions(t, k)[k - 1]


def kl_approx(kernel, n_modes, resolutions=(25, 50, 100), rule_factory=None, use_numba=None):
    """Richardson-Romberg extrapolated Nystrom K-L approximation.

    Parameters
    ----------
    kernel : CovarianceKernel
    n_modes : int
        Number of modes kept; must not exceed the number of abscissas of the
        coarsest resolution.
    resolutions : tuple of three ints
        Strictly increasing panel counts.
    rule_factory : callable, optional
        ``rule_factory(kernel, n) -> (QuadratureRule, correction or None)``.
        Defaults to the plain trapezoidal rule.
    """
    res = tuple(int(r) for r in resolutions)
    if len(res) != 3 or not res[0] < res[1] < res[2]:
        raise ValueError(f"need three strictly increasing resolutions, got {resolutions}")
    if not 1 <= n_modes <= res[0] + 1:
        raise ValueError(f"n_modes must lie in [1, {res[0] + 1}]")
    if rule_factory is None:
        def rule_factory(kern, n):
            return trapezoidal_rule(kern.T, n), None

    systems = []
    for n in res:
        rule, corr = rule_factory(kernel, n)
        systems.append(nystrom_system(kernel, rule, n_modes, corr, use_numba))
    lam = richardson_romberg3(*(s.eigenvalues for s in systems), *res)
    lam = np.atleast_1d(lam)
    flagged = []
    for s in systems:
        gaps = -np.diff(s.eigenvalues)
        for i in np.flatnonzero(gaps < 1e-12 * s.eigenvalues[0]):
            flagged.append((s.n, int(i) + 1))
    return KLApproximation(kernel, tuple(systems), lam, tuple(flagged))


def trace_identity(system):
    """(sum of all raw eigenvalues, sum_j w_j Gamma(s_j, s_j) + sum_j Delta_jj)."""
    rule = system.rule
    diag = system.kernel(rule.abscissas, rule.abscissas)
    expected = float(rule.weights @ diag + system.correction.sum())
    return float(np.sum(system.full_eigenvalues)), expected

