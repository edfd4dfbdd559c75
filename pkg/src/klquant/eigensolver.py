"""Dense symmetric eigensolver: Householder tridiagonalisation followed by
the QL algorithm with implicit shifts.

Two interchangeable back ends are provided. ``*_nb`` are scalar loops
compiled by numba; ``*_np`` vectorise the inner loops with numpy and are
used when numba is disabled (see :mod:`klquant._accel`).
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

MAX_QL_ITER = 60


class EigenConvergenceError(RuntimeError):
    """QL iteration did not converge within the iteration cap."""


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tred2_nb(z, d, e):
    n = z.shape[0]
    for i in range(n - 1, 0, -1):
        l = i - 1
        h = 0.0
        scale = 0.0
        if l > 0:
            for k in range(i):
                scale += abs(z[i, k])
            if scale == 0.0:
                e[i] = z[i, l]
            else:
                for k in range(i):
                    z[i, k] /= scale
                    h += z[i, k] * z[i, k]
                f = z[i, l]
                g = -math.sqrt(h) if f >= 0.0 else math.sqrt(h)
                e[i] = scale * g
                h -= f * g
                z[i, l] = f - g
                f = 0.0
                for j in range(i):
                    z[j, i] = z[i, j] / h
                    g = 0.0
                    for k in range(j + 1):
                        g += z[j, k] * z[i, k]
                    for k in range(j + 1, i):
                        g += z[k, j] * z[i, k]
                    e[j] = g / h
                    f += e[j] * z[i, j]
                hh = f / (h + h)
                for j in range(i):
                    f = z[i, j]
                    g = e[j] - hh * f
                    e[j] = g
                    for k in range(j + 1):
                        z[j, k] -= f * e[k] + g * z[i, k]
        else:
            e[i] = z[i, l]
        d[i] = h
    d[0] = 0.0
    e[0] = 0.0
    for i in range(n):
        if d[i] != 0.0:
            for j in range(i):
                g = 0.0
                for k in range(i):
                    g += z[i, k] * z[k, j]
                for k in range(i):
                    z[k, j] -= g * z[k, i]
        d[i] = z[i, i]
        z[i, i] = 1.0
        for j in range(i):
            z[j, i] = 0.0
            z[i, j] = 0.0


@njit(cache=True)
def _tqli_nb(d, e, zt, max_iter):
    # zt holds eigenvectors as rows; returns 0 on success, else failing index + 1
    n = d.shape[0]
    eps = 2.220446049250313e-16
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            if it == max_iter:
                return l + 1
            it += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (abs(r) if g >= 0.0 else -abs(r)))
            s = 1.0
            c = 1.0
            p = 0.0
            early = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    early = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = zt[i + 1, k]
                    zt[i + 1, k] = s * zt[i, k] + c * f
                    zt[i, k] = c * zt[i, k] - s * f
                i -= 1
            if early:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return 0


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------


def _tred2_np(z, d, e):
    n = z.shape[0]
    for i in range(n - 1, 0, -1):
        l = i - 1
        h = 0.0
        if l > 0:
            a = z[i, :i]
            scale = np.abs(a).sum()
            if scale == 0.0:
                e[i] = z[i, l]
            else:
                a /= scale
                h = float(a @ a)
                f = a[l]
                g = -math.sqrt(h) if f >= 0.0 else math.sqrt(h)
                e[i] = scale * g
                h -= f * g
                a[l] = f - g
                z[:i, i] = a / h
                low = np.tril(z[:i, :i])
                sym = low + np.tril(low, -1).T
                e[:i] = (sym @ a) / h
                f = float(e[:i] @ a)
                hh = f / (h + h)
                e[:i] -= hh * a
                upd = np.outer(a, e[:i])
                z[:i, :i] -= np.tril(upd + upd.T)
        else:
            e[i] = z[i, l]
        d[i] = h
    d[0] = 0.0
    e[0] = 0.0
    for i in range(n):
        if d[i] != 0.0:
            g = z[i, :i] @ z[:i, :i]
            z[:i, :i] -= np.outer(z[:i, i], g)
        d[i] = z[i, i]
        z[i, i] = 1.0
        z[:i, i] = 0.0
        z[i, :i] = 0.0


def _tqli_np(d, e, zt, max_iter):
    n = d.shape[0]
    eps = np.finfo(float).eps
    e[:-1] = e[1:]
    e[n - 1] = 0.0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                if abs(e[m]) <= eps * (abs(d[m]) + abs(d[m + 1])):
                    break
                m += 1
            if m == l:
                break
            if it == max_iter:
                return l + 1
            it += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = c = 1.0
            p = 0.0
            early = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    early = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                zi = zt[i].copy()
                zt[i] = c * zi - s * zt[i + 1]
                zt[i + 1] = s * zi + c * zt[i + 1]
            if early:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return 0


def _full_eigh(a, use_numba):
    z = np.array(a, dtype=np.float64, order="C", copy=True)
    n = z.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    if n == 1:
        return z[0, :1].copy(), np.ones((1, 1))
    if use_numba:
        _tred2_nb(z, d, e)
        zt = np.ascontiguousarray(z.T)
        status = _tqli_nb(d, e, zt, MAX_QL_ITER)
    else:
        _tred2_np(z, d, e)
        zt = np.ascontiguousarray(z.T)
        status = _tqli_np(d, e, zt, MAX_QL_ITER)
    if status:
        raise EigenConvergenceError(
            f"QL iteration did not converge for eigenvalue {status - 1}"
        )
    return d, zt


def solve_eigen(m, n_modes=None, use_numba=None):
    """Top eigenpairs of a real symmetric matrix.

    Parameters
    ----------
    m : (n, n) array_like
        Symmetric matrix. Only symmetry up to roundoff is assumed.
    n_modes : int, optional
        Number of leading eigenpairs to return (default: all).
    use_numba : bool, optional
        Override the global back-end selection.

    Returns
    -------
    eigenvalues : (n_modes,) ndarray
        Sorted in descending order.
    eigenvectors : (n_modes, n) ndarray
        Euclidean-orthonormal eigenvectors, one per row.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    if n_modes is None:
        n_modes = n
    if not 1 <= n_modes <= n:
        raise ValueError(f"n_modes must lie in [1, {n}], got {n_modes}")
    if use_numba is None:
        use_numba = USE_NUMBA
    d, zt = _full_eigh(a, use_numba)
    order = np.argsort(-d, kind="stable")[:n_modes]
    return d[order], zt[order]
