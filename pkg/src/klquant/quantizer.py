"""Optimal quantization of Gaussian K-L coordinates.

* :func:`gauss1d` -- optimal quadratic quantizer of N(0, 1) by Newton's
  method on the distortion gradient.
* :func:`blind_decomposition` -- exhaustive search of the best product
  decomposition ``N_1 x ... x N_d <= N``.
* :func:`lloyd_multivariate` -- fixed-pool Lloyd iterations for a
  d-dimensional product Gaussian.
* :class:`FunctionalQuantizer` -- codebook of paths on a K-L basis.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import itertools
import math
import warnings

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr, ndtri

from ._accel import USE_NUMBA, njit

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class QuantizerConvergenceError(RuntimeError):
    pass


def _pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _cell_mass(lo, hi):
    """P(lo < Z < hi) computed on the side of 0 that avoids cancellation."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    left = ndtr(hi) - ndtr(lo)
    right = ndtr(-lo) - ndtr(-hi)
    return np.where(lo >= 0, right, left)


def _cell_stats(points):
    """Boundaries, masses and first moments of the Voronoi cells of ``points``."""
    b = np.concatenate(([-np.inf], 0.5 * (points[1:] + points[:-1]), [np.inf]))
    mass = _cell_mass(b[:-1], b[1:])
    phi = _pdf(b)
    first = phi[:-1] - phi[1:]
    return b, mass, first


def distortion_of(points):
    """E min_i (Z - x_i)^2 for Z ~ N(0, 1), in closed form."""
    x = np.sort(np.asarray(points, dtype=float))
    b, mass, first = _cell_stats(x)
    return float(1.0 + np.sum(x * x * mass - 2.0 * x * first))


@dataclass(frozen=True)
class Quantizer1D:
    points: np.ndarray
    boundaries: np.ndarray
    cell_probs: np.ndarray
    distortion: float
    iterations: int = 0
    used_fallback: bool = False

    @property
    def N(self):
        return len(self.points)

    def cell_means(self):
        b = np.concatenate(([-np.inf], self.boundaries, [np.inf]))
        phi = _pdf(b)
        return (phi[:-1] - phi[1:]) / self.cell_probs

    def cell_variances(self):
        """Var(Z | Z in cell_i), from truncated-normal moments."""
        return truncated_normal_variance(
            np.concatenate(([-np.inf], self.boundaries)),
            np.concatenate((self.boundaries, [np.inf])),
        )

    def cell_bounds(self, i):
        lo = -np.inf if i == 0 else self.boundaries[i - 1]
        hi = np.inf if i == self.N - 1 else self.boundaries[i]
        return lo, hi

    def gradient(self):
        _, mass, first = _cell_stats(self.points)
        return 2.0 * (self.points * mass - first)


def truncated_normal_variance(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p = _cell_mass(lo, hi)
    plo, phi_ = _pdf(lo), _pdf(hi)
    mean = (plo - phi_) / p
    # x phi(x) -> 0 at +-inf
    lo_term = np.where(np.isfinite(lo), np.nan_to_num(lo) * plo, 0.0)
    hi_term = np.where(np.isfinite(hi), np.nan_to_num(hi) * phi_, 0.0)
    second = 1.0 + (lo_term - hi_term) / p
    return second - mean * mean


def _newton(x, tol, max_iter):
    n = len(x)
    for it in range(1, max_iter + 1):
        b, mass, first = _cell_stats(x)
        grad = 2.0 * (x * mass - first)
        # stop on the stationarity residual: the gradient is scaled by the
        # cell mass, which is tiny in the outer cells
        if np.max(np.abs(x - first / mass)) <= tol:
            return x, it - 1, True
        gaps = np.diff(x)
        phib = _pdf(b[1:-1])
        off = -0.5 * gaps * phib
        diag = 2.0 * mass.copy()
        diag[:-1] += off
        diag[1:] += off
        ab = np.zeros((3, n))
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        step = solve_banded((1, 1), ab, grad)
        # damp until ordering is preserved and distortion does not rise
        d0 = distortion_of(x)
        t = 1.0
        while t > 1e-8:
            cand = x - t * step
            if np.all(np.diff(cand) > 0) and distortion_of(cand) <= d0 + 1e-15:
                break
            t *= 0.5
        else:
            return x, it, False
        x = cand
    b, mass, first = _cell_stats(x)
    return x, max_iter, bool(np.max(np.abs(x - first / mass)) <= tol)


def _lloyd_1d(x, tol, max_iter=200000):
    for it in range(max_iter):
        _, mass, first = _cell_stats(x)
        new = first / mass
        if np.max(np.abs(new - x)) <= tol:
            return new, it
        x = new
    return x, max_iter


@lru_cache(maxsize=None)
def _gauss1d_cached(N, tol):
    if N == 1:
        return Quantizer1D(np.zeros(1), np.zeros(0), np.ones(1), 1.0)
    x0 = ndtri((np.arange(1, N + 1) - 0.5) / N)
    x, iters, ok = _newton(x0, tol, 200)
    fallback = False
    if not ok:
        warnings.warn(f"Newton failed for N={N}; falling back to Lloyd", RuntimeWarning, stacklevel=3)
        x, iters = _lloyd_1d(x, tol / 2)
        fallback = True
    # enforce exact antisymmetry
    x = 0.5 * (x - x[::-1])
    # one fixed-point polish: x_i = E[Z | cell_i]
    _, mass, first = _cell_stats(x)
    x = 0.5 * (first / mass - (first / mass)[::-1])
    b, mass, first = _cell_stats(x)
    x.setflags(write=False)
    return Quantizer1D(x, b[1:-1], mass, distortion_of(x), iters, fallback)


def gauss1d(N, tol=1e-12):
    """Optimal quadratic N-quantizer of the standard normal distribution.

    Newton's method on the distortion gradient, started at the quantiles
    ``Phi^-1((i - 1/2) / N)``, with a tridiagonal Hessian built from the
    Gaussian density at the cell boundaries.

    Parameters
    ----------
    N : int
        Number of points.
    tol : float
        Sup-norm tolerance on the stationarity residual ``x_i - E[Z | cell_i]``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _gauss1d_cached(int(N), float(tol))


def distortion_table(n_max):
    """``table[N]`` = optimal distortion of N(0, 1) with N points (index 0 unused)."""
    out = np.full(n_max + 1, np.nan)
    for n in range(1, n_max + 1):
        out[n] = gauss1d(n).distortion
    return out


# ---------------------------------------------------------------------------
# product decompositions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductDecomposition:
    sizes: tuple
    criterion: float

    @property
    def d(self):
        return len(self.sizes)

    @property
    def total(self):
        return math.prod(self.sizes) if self.sizes else 1


def decomposition_criterion(sizes, eigenvalues, trace, dist_table=None):
    """``sum_{n<=d} lambda_n D(N_n) + (trace - sum_{n<=d} lambda_n)``."""
    sizes = tuple(int(s) for s in sizes)
    lam = np.asarray(eigenvalues, dtype=float)
    d = len(sizes)
    if d > len(lam):
        raise ValueError(f"{d} sizes but only {len(lam)} eigenvalues")
    total = float(trace)
    for n, size in enumerate(sizes):
        if dist_table is None:
            dn = gauss1d(size).distortion
        else:
            if size >= len(dist_table) or not np.isfinite(dist_table[size]):
                raise KeyError(f"no distortion entry for size {size}")
            dn = dist_table[size]
        total += lam[n] * (dn - 1.0)
    return total


def _nonincreasing_factorisations(budget, max_factor, max_len):
    """Non-increasing sequences of factors >= 2 with product <= budget."""
    yield ()
    if max_len == 0:
        return
    for f in range(min(max_factor, budget), 1, -1):
        for rest in _nonincreasing_factorisations(budget // f, f, max_len - 1):
            yield (f,) + rest


def admissible_decompositions(N, max_len=None):
    d_max = int(math.floor(math.log2(N))) if N >= 2 else 0
    if max_len is not None:
        d_max = min(d_max, max_len)
    for seq in _nonincreasing_factorisations(N, N, d_max):
        yield seq if seq else (1,)


def blind_decomposition(N, eigenvalues, trace, max_dim=None):
    """Exhaustive search of the product decomposition minimising the criterion.

    Ties are broken by smaller dimension, then by lexicographically larger
    sizes.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    lam = np.asarray(eigenvalues, dtype=float)
    d_max = int(math.floor(math.log2(N))) if N >= 2 else 1
    if max_dim is not None:
        d_max = min(d_max, max_dim)
    if len(lam) < d_max:
        raise ValueError(
            f"blind search up to dimension {d_max} needs {d_max} eigenvalues, got {len(lam)}"
        )
    if trace < lam[:d_max].sum() * (1 - 1e-12):
        raise ValueError("trace is smaller than the sum of supplied eigenvalues")
    table = distortion_table(N)
    best = None
    for sizes in admissible_decompositions(N, d_max):
        crit = decomposition_criterion(sizes, lam, trace, table)
        key = (crit, len(sizes), tuple(-s for s in sizes))
        if best is None or key < best[0]:
            best = (key, sizes)
    (crit, _, _), sizes = best
    return ProductDecomposition(tuple(sizes), crit)


# ---------------------------------------------------------------------------
# multivariate Lloyd
# ---------------------------------------------------------------------------


@njit(cache=True)
def _assign_nb(samples, codebook):
    n, d = samples.shape
    k = codebook.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = samples[i, c] - codebook[j, c]
                acc += diff * diff
            if acc < best:
                best = acc
                bj = j
        idx[i] = bj
        dist[i] = best
    return idx, dist


def _assign_np(samples, codebook, chunk=65536):
    n = samples.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    cn = np.einsum("ij,ij->i", codebook, codebook)
    for start in range(0, n, chunk):
        x = samples[start : start + chunk]
        d2 = cn[None, :] - 2.0 * x @ codebook.T
        j = np.argmin(d2, axis=1)
        idx[start : start + chunk] = j
        diff = x - codebook[j]
        dist[start : start + chunk] = np.einsum("ij,ij->i", diff, diff)
    return idx, dist


def nearest_codeword(samples, codebook, use_numba=None):
    """Index of and squared distance to the nearest codeword for each sample."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        return _assign_nb(samples, codebook)
    return _assign_np(samples, codebook)


@dataclass(frozen=True)
class MultiQuantizer:
    """Quantizer of ``N(0, diag(lambda))`` in R^d; codewords in sqrt(lambda)-scaled units."""

    eigenvalues: np.ndarray
    codebook: np.ndarray
    weights: np.ndarray
    distortion: float
    distortion_se: float
    iterations: int
    reseeds: int = 0
    scaled: bool = True

    @property
    def d(self):
        return self.codebook.shape[1]

    @property
    def N(self):
        return self.codebook.shape[0]


def _product_codebook(sizes, lam, d):
    grids = [np.sqrt(lam[k]) * gauss1d(s).points for k, s in enumerate(sizes)]
    while len(grids) < d:
        grids.append(np.zeros(1))
    mesh = np.array(list(itertools.product(*grids)))
    return mesh.reshape(-1, d)


def lloyd_multivariate(eigenvalues, N, budget=200_000, seed=0, max_iter=500, rtol=1e-6, use_numba=None):
    """Lloyd iterations on a fixed pool of ``N(0, diag(eigenvalues))`` samples.

    Initialised from the best product quantizer of size <= N (extra
    codewords are split off the cell with the largest local distortion).
    Stops when the relative distortion improvement falls below ``rtol``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    d = lam.size
    if d < 1 or N < 1:
        raise ValueError("need d >= 1 and N >= 1")
    if budget < 100_000:
        raise ValueError("budget must be >= 1e5 samples")
    rng = np.random.default_rng(seed)
    pool = rng.standard_normal((budget, d)) * np.sqrt(lam)
    dec = blind_decomposition(N, lam, float(lam.sum()), max_dim=d)
    sizes = [s for s in dec.sizes if s > 1]
    code = _product_codebook(sizes, lam, d) if sizes else np.zeros((1, d))
    idx, dist = nearest_codeword(pool, code, use_numba)
    while code.shape[0] < N:
        local = np.bincount(idx, weights=dist, minlength=code.shape[0])
        worst = int(np.argmax(local))
        members = np.flatnonzero(idx == worst)
        far = members[np.argmax(dist[members])]
        code = np.vstack([code, pool[far]])
        idx, dist = nearest_codeword(pool, code, use_numba)
    prev = dist.mean()
    reseeds = 0
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(idx, minlength=N)
        sums = np.empty((N, d))
        for c in range(d):
            sums[:, c] = np.bincount(idx, weights=pool[:, c], minlength=N)
        live = counts > 0
        code = code.copy()
        code[live] = sums[live] / counts[live, None]
        for j in np.flatnonzero(~live):
            code[j] = pool[int(np.argmax(dist))]
            reseeds += 1
        idx, dist = nearest_codeword(pool, code, use_numba)
        cur = dist.mean()
        if prev - cur <= rtol * prev:
            prev = cur
            break
        prev = cur
    if reseeds > N:
        warnings.warn(f"Lloyd reseeded empty cells {reseeds} times", RuntimeWarning, stacklevel=2)
    weights = np.bincount(idx, minlength=N) / budget
    se = float(dist.std(ddof=1) / math.sqrt(budget))
    return MultiQuantizer(lam, code, weights, float(dist.mean()), se, it, reseeds)


def stationarity_residual(mq, samples=None, seed=1, budget=None):
    """Per-codeword gap between codeword and the empirical cell mean, with its SE."""
    if samples is None:
        rng = np.random.default_rng(seed)
        samples = rng.standard_normal((budget or 200_000, mq.d)) * np.sqrt(mq.eigenvalues)
    idx, _ = nearest_codeword(samples, mq.codebook)
    res = np.zeros_like(mq.codebook)
    se = np.zeros_like(mq.codebook)
    for j in range(mq.N):
        pts = samples[idx == j]
        if len(pts) > 1:
            res[j] = pts.mean(axis=0) - mq.codebook[j]
            se[j] = pts.std(axis=0, ddof=1) / math.sqrt(len(pts))
    return res, se


# ---------------------------------------------------------------------------
# functional quantizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductStructure:
    sizes: tuple
    quantizers: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.quantizers is None:
            object.__setattr__(self, "quantizers", tuple(gauss1d(s) for s in self.sizes))

    type = "product"

    @property
    def d(self):
        return len(self.sizes)

    @property
    def N(self):
        return math.prod(self.sizes)

    def multi_indices(self):
        return list(itertools.product(*(range(s) for s in self.sizes)))

    def coefficients(self):
        """Unit-variance coordinates ``x_{i_n}`` of every codeword, shape (N, d)."""
        grids = [q.points for q in self.quantizers]
        return np.array(list(itertools.product(*grids))).reshape(-1, self.d)

    def probabilities(self):
        probs = [q.cell_probs for q in self.quantizers]
        out = np.array([math.prod(c) for c in itertools.product(*probs)])
        return out


@dataclass(frozen=True)
class OptimalStructure:
    codebook: np.ndarray
    weights: np.ndarray

    type = "optimal"

    @property
    def d(self):
        return self.codebook.shape[1]

    @property
    def N(self):
        return self.codebook.shape[0]


@dataclass(frozen=True)
class FunctionalQuantizer:
    """Paths ``chi_i(t) = sum_n sqrt(lambda_n) c_{i,n} e_n(t)`` on a K-L basis.

    For a product structure ``c`` are unit-variance 1D quantizer points;
    for an optimal structure the codebook is already sqrt(lambda)-scaled.
    """

    kl: object
    structure: object
    probabilities: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.structure.d

    @property
    def N(self):
        return self.structure.N

    @property
    def eigenvalues(self):
        return np.asarray(self.kl.eigenvalues[: self.d])

    def scaled_codebook(self):
        if isinstance(self.structure, ProductStructure):
            return self.structure.coefficients() * np.sqrt(self.eigenvalues)
        return np.asarray(self.structure.codebook)

    def paths(self, t):
        """Matrix (N, len(t)) of codeword paths."""
        e = self.kl.eigenfunctions(t, self.d)
        return self.scaled_codebook() @ e


def build_functional_quantizer(kl, structure, meta=None):
    """Attach a product or optimal structure to a K-L system.

    ``structure`` may be a tuple of sizes (product), a
    :class:`ProductStructure`, a :class:`MultiQuantizer` or an
    :class:`OptimalStructure`.
    """
    if isinstance(structure, (tuple, list)):
        structure = ProductStructure(tuple(int(s) for s in structure))
    if isinstance(structure, MultiQuantizer):
        structure = OptimalStructure(structure.codebook, structure.weights)
    if structure.d > kl.n_modes:
        raise ValueError(f"structure needs {structure.d} modes, K-L system has {kl.n_modes}")
    if isinstance(structure, ProductStructure):
        probs = structure.probabilities()
    else:
        probs = np.asarray(structure.weights, dtype=float)
    return FunctionalQuantizer(kl, structure, probs, dict(meta or {}))
