"""Functional stratification of Gaussian processes.

Strata are the Voronoi slabs of a K-L product quantizer. Within a stratum
the first ``d`` K-L coordinates are truncated normals and the process on a
time schedule is Gaussian given those coordinates, so paths are drawn as
``m(xi) + L g`` with ``L`` the Cholesky factor of the conditional
covariance.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import math
import warnings

import numpy as np
from scipy.special import ndtr, ndtri

from .kernels import kernel_trace
from .quantizer import FunctionalQuantizer, ProductStructure, _cell_mass, truncated_normal_variance

Z95 = 1.959963984540054
CHUNK = 1 << 17


class AllocationRule(str, Enum):
    PLAIN = "plain"
    PROPORTIONAL = "prop"
    LIPSCHITZ = "lip"
    OPTIMAL = "opt"
    RAW_SIGMA = "raw-sigma"


class ConditioningError(np.linalg.LinAlgError):
    """Conditional covariance is indefinite beyond the jitter cap."""


@dataclass(frozen=True)
class Stratification:
    """Product strata over the first ``d`` K-L coordinates.

    ``lower``/``upper`` hold the cell bounds in unit-variance coordinates,
    one row per stratum; ``inertia`` is the local inertia sigma_i^2 of the
    process (in L^2[0, T]) within each stratum.
    """

    eigenvalues: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    indices: tuple
    probs: np.ndarray
    inertia: np.ndarray
    tail: float
    quantizer: FunctionalQuantizer = field(default=None, repr=False)

    @property
    def d(self):
        return self.lower.shape[1]

    @property
    def n_strata(self):
        return len(self.probs)

    def total_inertia(self):
        return float(self.probs @ self.inertia)


def build_stratification(fq, trace=None):
    """Strata = Cartesian products of 1D Voronoi cells of a product quantizer."""
    if not isinstance(fq.structure, ProductStructure):
        raise TypeError("stratification requires a product-structured quantizer")
    if trace is None:
        trace = kernel_trace(fq.kl.kernel)
    lam = np.asarray(fq.eigenvalues, dtype=float)
    tail = float(trace - lam.sum())
    idx = fq.structure.multi_indices()
    qs = fq.structure.quantizers
    bounds = [
        (np.concatenate(([-np.inf], q.boundaries)), np.concatenate((q.boundaries, [np.inf])))
        for q in qs
    ]
    cvar = [q.cell_variances() for q in qs]
    lower = np.array([[bounds[k][0][i[k]] for k in range(len(qs))] for i in idx]).reshape(len(idx), -1)
    upper = np.array([[bounds[k][1][i[k]] for k in range(len(qs))] for i in idx]).reshape(len(idx), -1)
    probs = np.prod(_cell_mass(lower, upper), axis=1)
    inertia = np.array([sum(lam[k] * cvar[k][i[k]] for k in range(len(qs))) for i in idx]) + tail
    return Stratification(lam, lower, upper, tuple(idx), probs, inertia, tail, fq)


def trivial_stratification(kernel):
    """One stratum holding the whole space: plain Monte-Carlo."""
    tr = kernel_trace(kernel)
    return Stratification(
        np.zeros(0), np.zeros((1, 0)), np.zeros((1, 0)), ((),), np.ones(1), np.array([tr]), tr
    )


def sample_truncated_normal(lo, hi, size, rng):
    """Standard normal restricted to (lo, hi) by inverse CDF."""
    u = rng.random(size)
    if lo >= 0:
        # upper tail: work with the mirrored variable for accuracy
        a, b = ndtr(-hi), ndtr(-lo)
        z = -ndtri(a + (b - a) * u)
    else:
        a, b = ndtr(lo), ndtr(hi)
        z = ndtri(a + (b - a) * u)
    return np.clip(z, lo, hi)


def sample_stratum_coords(strat, i, rng, size=1):
    """K-L coordinates ``xi_k = sqrt(lambda_k) Z_k`` with ``Z_k`` in the cell of stratum ``i``.

    Returns an array of shape ``(size, d)``.
    """
    out = np.empty((size, strat.d))
    for k in range(strat.d):
        z = sample_truncated_normal(strat.lower[i, k], strat.upper[i, k], size, rng)
        out[:, k] = math.sqrt(strat.eigenvalues[k]) * z
    return out


class ConditionalSampler:
    """Sampler of ``(X_t0, ..., X_tn)`` given the first ``d`` K-L coordinates.

    Attributes
    ----------
    basis : (d, n+1) ndarray
        ``e_k(t_i)``.
    cond_cov : (n+1, n+1) ndarray
        ``Gamma(t_i, t_j) - sum_k lambda_k e_k(t_i) e_k(t_j)``.
    chol : (n+1, n+1) ndarray
        Lower Cholesky factor of ``cond_cov`` (rows of deterministic
        coordinates are zero).
    jitter : float
        Diagonal jitter that was needed (0 if none).
    """

    JITTERS = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10)

    def __init__(self, kl, schedule, d):
        t = np.asarray(schedule, dtype=float)
        if np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] > kl.T * (1 + 1e-12):
            raise ValueError("schedule must be ascending within [0, T]")
        if d > kl.n_modes:
            raise ValueError(f"d={d} exceeds available modes {kl.n_modes}")
        self.schedule = t
        self.d = d
        self.kernel = kl.kernel
        self.eigenvalues = np.asarray(kl.eigenvalues[:d], dtype=float)
        self.basis = kl.eigenfunctions(t, d) if d > 0 else np.zeros((0, len(t)))
        gamma = kl.kernel.matrix(t)
        self.gamma = gamma
        self.explained = (self.basis.T * self.eigenvalues) @ self.basis
        self.cond_cov = gamma - self.explained
        self.chol, self.jitter = self._factor(self.cond_cov, gamma)

    def _factor(self, c, gamma):
        n = len(c)
        live = np.flatnonzero(np.diag(gamma) > 0)
        sub = c[np.ix_(live, live)]
        sub = 0.5 * (sub + sub.T)
        scale = max(float(np.max(np.abs(np.diag(sub)))) if live.size else 0.0, 1e-300)
        for jit in self.JITTERS:
            try:
                lsub = np.linalg.cholesky(sub + jit * scale * np.eye(len(live)))
            except np.linalg.LinAlgError:
                continue
            if jit:
                warnings.warn(f"conditional covariance needed jitter {jit:g}", RuntimeWarning, stacklevel=3)
            full = np.zeros((n, n))
            full[np.ix_(live, live)] = lsub
            return full, jit
        raise ConditioningError("conditional covariance is not positive semidefinite")

    @property
    def n_points(self):
        return len(self.schedule)

    def mean(self, xi):
        """Conditional mean ``sum_k xi_k e_k(t_i)``; ``xi`` has shape (M, d)."""
        return np.asarray(xi) @ self.basis

    def sample(self, xi, rng):
        xi = np.atleast_2d(xi)
        g = rng.standard_normal((xi.shape[0], self.n_points))
        return self.mean(xi) + g @ self.chol.T


@dataclass(frozen=True)
class StratumStats:
    n: int
    mean: float
    var: float
    m4: float


@dataclass(frozen=True)
class StratifiedEstimate:
    estimate: float
    variance: float
    variance_se: float
    per_stratum: tuple
    probs: np.ndarray
    rule: str
    seed: int
    M: int
    pilot_paths: int = 0

    @property
    def std_error(self):
        return math.sqrt(self.variance)

    @property
    def ci(self):
        h = Z95 * self.std_error
        return (self.estimate - h, self.estimate + h)

    @property
    def normalized_variance(self):
        """``M * Var(estimator)``: the per-path variance figure."""
        return self.M * self.variance

    @property
    def normalized_variance_se(self):
        return self.M * self.variance_se

    def recomputed_variance(self):
        return float(sum(p * p * s.var / s.n for p, s in zip(self.probs, self.per_stratum)))

    def to_dict(self):
        lo, hi = self.ci
        return {
            "price": self.estimate,
            "variance": self.variance,
            "normalized_variance": self.normalized_variance,
            "ci": [lo, hi],
            "rule": self.rule,
            "M": self.M,
            "seed": self.seed,
            "per_stratum": [
                {"p": float(p), "M": s.n, "mean": s.mean, "var": s.var}
                for p, s in zip(self.probs, self.per_stratum)
            ],
        }


def _largest_remainder(q, M):
    raw = q * M
    base = np.maximum(np.floor(raw).astype(np.int64), 1)
    diff = M - int(base.sum())
    frac = raw - np.floor(raw)
    if diff > 0:
        order = np.argsort(-frac, kind="stable")
        base[order[:diff]] += 1
    elif diff < 0:
        # the floor of 1 overshot: take back from the largest allocations
        for _ in range(-diff):
            j = int(np.argmax(base - raw))
            if base[j] <= 1:
                j = int(np.argmax(base))
            base[j] -= 1
    return base


def allocation_weights(rule, strat, pilot_sigma=None):
    rule = AllocationRule(rule)
    p = strat.probs
    if rule in (AllocationRule.PROPORTIONAL, AllocationRule.PLAIN):
        q = p.copy()
    elif rule is AllocationRule.LIPSCHITZ:
        q = p * np.sqrt(strat.inertia)
    elif rule is AllocationRule.RAW_SIGMA:
        q = np.sqrt(strat.inertia)
    else:
        if pilot_sigma is None:
            raise ValueError("optimal allocation needs pilot estimates of sigma_F")
        q = p * np.asarray(pilot_sigma, dtype=float)
        if not np.any(q > 0):
            q = p.copy()
    return q / q.sum()


def allocate(rule, strat, M, pilot_sigma=None):
    """Integer budgets ``M_i >= 1`` summing to ``M``."""
    if M < strat.n_strata:
        raise ValueError(f"budget M={M} smaller than the number of strata {strat.n_strata}")
    q = allocation_weights(rule, strat, pilot_sigma)
    return _largest_remainder(q, int(M))


def _stream_seeds(seed, n_strata, tag):
    root = np.random.SeedSequence([int(seed), tag])
    return root.spawn(n_strata)


def _simulate_stratum(F, strat, sampler, i, n, seedseq):
    rng = np.random.default_rng(seedseq)
    vals = np.empty(n)
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        xi = sample_stratum_coords(strat, i, rng, m)
        vals[start : start + m] = F(sampler.sample(xi, rng))
    mean = float(vals.mean())
    if n > 1:
        dev = vals - mean
        var = float(dev @ dev / (n - 1))
        m4 = float(np.mean(dev**4))
    else:
        var = 0.0
        m4 = 0.0
    return StratumStats(n, mean, var, m4)


def _run(F, strat, sampler, budgets, seeds, threads):
    jobs = [(i, int(n), s) for i, (n, s) in enumerate(zip(budgets, seeds))]
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda j: _simulate_stratum(F, strat, sampler, *j), jobs))
    return [_simulate_stratum(F, strat, sampler, *j) for j in jobs]


def _variance_se(probs, stats):
    # Var(s^2) ~ (mu4 - (n-3)/(n-1) sigma^4) / n
    acc = 0.0
    for p, s in zip(probs, stats):
        if s.n < 2:
            continue
        v = max(s.m4 - (s.n - 3) / (s.n - 1) * s.var * s.var, 0.0) / s.n
        acc += (p * p / s.n) ** 2 * v
    return math.sqrt(acc)


def stratified_estimate(
    F,
    strat,
    sampler,
    M,
    rule="prop",
    seed=0,
    pilot_fraction=0.05,
    min_pilot=20,
    threads=1,
):
    """Stratified estimator ``sum_i p_i mean_i`` of ``E[F(X_t0..X_tn)]``.

    Parameters
    ----------
    F : callable
        Maps an ``(m, n+1)`` array of paths to ``m`` payoffs.
    strat : Stratification
    sampler : ConditionalSampler
        Its truncation must match ``strat.d``.
    M : int
        Total number of paths of the main run.
    rule : AllocationRule or str
        ``plain`` treats the input as one stratum (``strat`` must then be
        trivial); ``opt`` runs a pilot of ``pilot_fraction * M`` paths
        (at least ``min_pilot`` per stratum) to estimate sigma_F per stratum.
    seed : int
        Every stratum draws from its own stream spawned from ``seed``, so
        the result does not depend on ``threads``.
    """
    rule = AllocationRule(rule)
    if sampler.d != strat.d:
        raise ValueError("sampler and stratification truncations differ")
    if rule is AllocationRule.PLAIN and strat.n_strata != 1:
        raise ValueError("plain Monte-Carlo needs the trivial stratification")
    pilot_sigma = None
    pilot_paths = 0
    if rule is AllocationRule.OPTIMAL:
        pb = allocate("prop", strat, max(int(pilot_fraction * M), strat.n_strata))
        pb = np.maximum(pb, min_pilot)
        pilot = _run(F, strat, sampler, pb, _stream_seeds(seed, strat.n_strata, 1), threads)
        pilot_sigma = np.sqrt([s.var for s in pilot])
        pilot_paths = int(pb.sum())
    budgets = allocate(rule, strat, M, pilot_sigma)
    stats = _run(F, strat, sampler, budgets, _stream_seeds(seed, strat.n_strata, 0), threads)
    p = strat.probs
    est = float(sum(pi * s.mean for pi, s in zip(p, stats)))
    var = float(sum(pi * pi * s.var / s.n for pi, s in zip(p, stats)))
    return StratifiedEstimate(
        est, var, _variance_se(p, stats), tuple(stats), p, rule.value, int(seed), int(M), pilot_paths
    )


@dataclass(frozen=True)
class Reconstruction:
    schedule: np.ndarray
    theoretical: np.ndarray
    estimated: np.ndarray
    std_error: np.ndarray
    M: int

    @property
    def ci_lo(self):
        return self.estimated - Z95 * self.std_error

    @property
    def ci_hi(self):
        return self.estimated + Z95 * self.std_error

    def covered(self):
        return (self.ci_lo <= self.theoretical) & (self.theoretical <= self.ci_hi)


def reconstruct_process(strat, sampler, M, seed=0, threads=1):
    """Rebuild the process: draw a stratum from ``(p_i)``, then a conditional path.

    Returns empirical ``E[X_ti X_tj]`` with 95% confidence intervals.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    counts = rng.multinomial(int(M), strat.probs / strat.probs.sum())
    seeds = _stream_seeds(seed, strat.n_strata, 3)
    n = sampler.n_points

    def one(job):
        i, cnt, ss = job
        r = np.random.default_rng(ss)
        s1 = np.zeros((n, n))
        s2 = np.zeros((n, n))
        for start in range(0, cnt, CHUNK):
            m = min(CHUNK, cnt - start)
            x = sampler.sample(sample_stratum_coords(strat, i, r, m), r)
            s1 += x.T @ x
            x2 = x * x
            s2 += x2.T @ x2
        return s1, s2

    jobs = [(i, int(c), s) for i, (c, s) in enumerate(zip(counts, seeds)) if c > 0]
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / M
    var = np.maximum(s2 / M - mean * mean, 0.0) * M / (M - 1)
    return Reconstruction(sampler.schedule, sampler.gamma, mean, np.sqrt(var / M), int(M))
