import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klquant.eigensolver import EigenConvergenceError, solve_eigen
from klquant.kernels import brownian_bridge, brownian_motion, closed_form_kl, ornstein_uhlenbeck, stationary_ou
from klquant.nystrom import (
    QuadratureRule,
    assemble_symmetrized,
    fix_signs,
    kl_approx,
    nystrom_interpolate,
    nystrom_system,
    recover_eigenfunction_samples,
    richardson_romberg3,
    trace_identity,
    trapezoidal_rule,
)

import oracles

BACKENDS = [pytest.param(True, id="numba"), pytest.param(False, id="numpy")]
SMOOTH = [brownian_motion(), brownian_bridge(), ornstein_uhlenbeck(1.0, 1.0), stationary_ou(1.0, 1.0)]


# ---------------------------------------------------------------- quadrature


def test_trapezoid_small():
    r = trapezoidal_rule(1.0, 2)
    np.testing.assert_array_equal(r.abscissas, [0, 0.5, 1])
    np.testing.assert_array_equal(r.weights, [0.25, 0.5, 0.25])
    assert trapezoidal_rule(1.0, 4).weights.sum() == 1.0


def test_trapezoid_error_term():
    r = trapezoidal_rule(1.0, 100)
    # exact 1/3 plus h^2/6 from the end-point derivative correction
    assert r.integrate(r.abscissas**2) == pytest.approx(1 / 3 + 1e-4 / 6, abs=1e-15)


@pytest.mark.parametrize("n", [2, 7, 100, 513])
def test_trapezoid_mass(n):
    assert trapezoidal_rule(2.5, n).weights.sum() == pytest.approx(2.5, abs=1e-14)


def test_trapezoid_errors():
    with pytest.raises(ValueError):
        trapezoidal_rule(1.0, 1)
    with pytest.raises(ValueError):
        QuadratureRule(np.array([0.0, 0.5, 0.4]), np.ones(3))
    with pytest.raises(ValueError):
        QuadratureRule(np.array([0.0, 0.5]), np.array([1.0, 0.0]))


# ---------------------------------------------------------------- eigensolver


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_solve_eigen_trivial(use_numba):
    v, _ = solve_eigen(np.eye(5), 5, use_numba=use_numba)
    np.testing.assert_allclose(v, 1.0, atol=1e-15)
    v, vec = solve_eigen(np.diag([1.0, 3.0, 2.0]), 2, use_numba=use_numba)
    np.testing.assert_allclose(v, [3, 2], atol=1e-15)
    np.testing.assert_allclose(np.abs(vec), [[0, 1, 0], [0, 0, 1]], atol=1e-15)


@pytest.mark.parametrize("use_numba", BACKENDS)
@pytest.mark.parametrize("n", [1, 2, 3, 17, 101])
def test_solve_eigen_random(use_numba, n):
    rng = np.random.default_rng(n)
    a = rng.standard_normal((n, n))
    a = a + a.T
    v, vec = solve_eigen(a, use_numba=use_numba)
    np.testing.assert_allclose(v, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-12 * max(1, abs(v).max()))
    np.testing.assert_allclose(vec @ vec.T, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(vec @ a @ vec.T, np.diag(v), atol=1e-11 * max(1, abs(v).max()))


def test_solve_eigen_bm_table():
    m = assemble_symmetrized(brownian_motion(), trapezoidal_rule(1.0, 50))
    v, _ = solve_eigen(m, 1)
    assert v[0] == pytest.approx(0.405318070, abs=5e-10)


def test_solve_eigen_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_eigen(np.ones((2, 3)))
    with pytest.raises(ValueError):
        solve_eigen(np.eye(3), 4)


def test_convergence_error_type():
    assert issubclass(EigenConvergenceError, RuntimeError)


# ---------------------------------------------------------------- assembly


def test_assemble_bm_n2():
    m = assemble_symmetrized(brownian_motion(), trapezoidal_rule(1.0, 2))
    assert m.shape == (3, 3)
    assert m[0, 0] == 0.0


@pytest.mark.parametrize("kern", SMOOTH, ids=lambda k: k.family.value)
def test_assemble_exact_symmetry(kern):
    m = assemble_symmetrized(kern, trapezoidal_rule(1.0, 37), correction=np.linspace(0, 1e-3, 38))
    assert np.array_equal(m, m.T)


def test_assemble_bm_100_table():
    v, _ = solve_eigen(assemble_symmetrized(brownian_motion(), trapezoidal_rule(1.0, 100)), 1)
    assert v[0] == pytest.approx(0.405293068, abs=5e-10)


def test_assemble_errors():
    with pytest.raises(ValueError):
        assemble_symmetrized(brownian_motion(), trapezoidal_rule(1.0, 4), correction=np.zeros(3))
    with pytest.raises(ValueError):
        assemble_symmetrized(brownian_motion(2.0), trapezoidal_rule(1.0, 4))


# ---------------------------------------------------------------- eigenfunctions


def test_recover_bm_first_mode():
    sys_ = nystrom_system(brownian_motion(), trapezoidal_rule(1.0, 200), 3)
    s = sys_.rule.abscissas
    assert np.abs(sys_.samples[0] - oracles.bm_eigenfunction(1, s)).max() <= 5e-3


def test_recover_bridge_first_mode():
    sys_ = nystrom_system(brownian_bridge(), trapezoidal_rule(1.0, 200), 3)
    s = sys_.rule.abscissas
    assert np.abs(sys_.samples[0] - oracles.bridge_eigenfunction(1, s)).max() <= 5e-3


def test_sign_convention():
    f = fix_signs(np.array([[0.0, 1e-7, -0.5, 1.0], [0.0, 2e-6, -3.0, 0.0]]))
    np.testing.assert_array_equal(f[0], [0.0, -1e-7, 0.5, -1.0])
    assert f[1, 1] > 0


def test_recover_rejects_zero_weight():
    r = trapezoidal_rule(1.0, 4)
    object.__setattr__(r, "weights", np.array([0.0, 0.25, 0.25, 0.25, 0.125]))
    with pytest.raises(ValueError):
        recover_eigenfunction_samples(r, np.ones((1, 5)))


def test_interpolate_bm():
    sys_ = nystrom_system(brownian_motion(), trapezoidal_rule(1.0, 100), 2)
    f = nystrom_interpolate(sys_.kernel, sys_.rule, sys_.eigenvalues[0], sys_.samples[0], 0.5)
    assert f == pytest.approx(math.sqrt(2) * math.sin(math.pi / 4), abs=1e-3)
    assert abs(nystrom_interpolate(sys_.kernel, sys_.rule, sys_.eigenvalues[0], sys_.samples[0], 0.0)) <= 1e-10
    g = nystrom_interpolate(sys_.kernel, sys_.rule, sys_.eigenvalues[0], sys_.samples[0], sys_.rule.abscissas)
    np.testing.assert_allclose(g, sys_.samples[0], atol=1e-9)
    with pytest.raises(ValueError):
        nystrom_interpolate(sys_.kernel, sys_.rule, 0.0, sys_.samples[0], 0.5)


def test_interpolate_bridge_end():
    sys_ = nystrom_system(brownian_bridge(), trapezoidal_rule(1.0, 100), 2)
    f = nystrom_interpolate(sys_.kernel, sys_.rule, sys_.eigenvalues[0], sys_.samples[0], 1.0)
    assert abs(f) <= 1e-10


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("kern", SMOOTH, ids=lambda k: k.family.value)
@pytest.mark.parametrize("n", [25, 100, 256])
def test_discrete_invariants(kern, n):
    s = nystrom_system(kern, trapezoidal_rule(kern.T, n), 8)
    np.testing.assert_allclose(s.gram(), np.eye(8), atol=1e-10)
    total, expected = trace_identity(s)
    assert total == pytest.approx(expected, rel=1e-10)
    assert np.all(s.eigenvalues >= 0) and np.all(np.diff(s.eigenvalues) <= 0)
    assert s.raw_min_eigenvalue >= -1e-12 * s.eigenvalues[0]


@pytest.mark.parametrize("kern", SMOOTH, ids=lambda k: k.family.value)
def test_refinement_order(kern):
    exact = closed_form_kl(kern, 5).eigenvalues
    errs = [np.abs(nystrom_system(kern, trapezoidal_rule(1.0, n), 5).eigenvalues - exact) for n in (50, 100, 200)]
    order = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
    assert np.all(np.asarray(order) >= 1.9)


@pytest.mark.parametrize("kern", SMOOTH, ids=lambda k: k.family.value)
def test_rr_within_sanity_band(kern):
    kl = kl_approx(kern, 5)
    raw = kl.raw_eigenvalues()
    spread = raw.max(0) - raw.min(0)
    assert np.all(kl.eigenvalues >= raw.min(0) - spread)
    assert np.all(kl.eigenvalues <= raw.max(0) + spread)


def test_kl_approx_table_values():
    kl = kl_approx(brownian_motion(), 5)
    np.testing.assert_allclose(kl.raw_eigenvalues()[:, 0], [0.405418094, 0.405318070, 0.405293068], atol=5e-10)
    assert np.abs(kl.eigenvalues - closed_form_kl(brownian_motion(), 5).eigenvalues).max() <= 1e-9
    kl = kl_approx(stationary_ou(1.0, 1.0), 5)
    assert kl.eigenvalues[0] == pytest.approx(0.369405405, abs=1e-9)


def test_bridge_eigenfunction_errors():
    kl = kl_approx(brownian_bridge(), 5, (50, 100, 200))
    t = np.arange(300) / 299
    ef = kl.eigenfunctions(t)
    for k in range(5):
        assert np.abs(ef[k] - oracles.bridge_eigenfunction(k + 1, t)).max() <= 1e-2


def test_kl_approx_errors():
    with pytest.raises(ValueError):
        kl_approx(brownian_motion(), 5, (50, 25, 100))
    with pytest.raises(ValueError):
        kl_approx(brownian_motion(), 30, (25, 50, 100))


def test_negative_eigenvalue_warning():
    from klquant.kernels import custom_kernel

    # indefinite symmetric kernel
    k = custom_kernel(lambda s, t: np.cos(3 * np.pi * (s - t)) - 0.9, T=1.0, trace=0.1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        s = nystrom_system(k, trapezoidal_rule(1.0, 20), 3)
    assert any("clamped" in str(x.message) for x in w)
    assert s.raw_min_eigenvalue < 0


# ---------------------------------------------------------------- RR properties


def test_rr_table():
    v = richardson_romberg3(0.405418094, 0.405318070, 0.405293068, 25, 50, 100)
    assert v == pytest.approx(0.405284735, abs=1e-9)


def test_rr_repeated():
    with pytest.raises(ValueError):
        richardson_romberg3(1, 2, 3, 10, 10, 20)


@settings(max_examples=200, deadline=None)
@given(
    V=st.floats(-10, 10),
    a=st.floats(-10, 10),
    b=st.floats(-100, 100),
    ns=st.lists(st.integers(2, 2000), min_size=3, max_size=3, unique=True),
)
def test_rr_exact_on_two_term_model(V, a, b, ns):
    k, l, m = ns
    u = [V + a / n**2 + b / n**4 for n in ns]
    scale = max(1.0, abs(V), abs(a), abs(b))
    # conditioning grows when the resolutions are close together
    k2, l2, m2 = sorted(x * x for x in ns)
    cond = max(ns) ** 4 / max(1.0, (m2 - l2) * (l2 - k2) * (m2 - k2) / max(ns) ** 2)
    assert abs(richardson_romberg3(*u, k, l, m) - V) <= 1e-12 * scale * max(1.0, cond)


@settings(max_examples=100, deadline=None)
@given(
    u=st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    ns=st.lists(st.integers(2, 1000), min_size=3, max_size=3, unique=True),
    perm=st.permutations(range(3)),
)
def test_rr_permutation_invariant(u, ns, perm):
    base = richardson_romberg3(*u, *ns)
    p = list(perm)
    other = richardson_romberg3(*(u[i] for i in p), *(ns[i] for i in p))
    mag = max(abs(x) for x in u) * max(n**4 for n in ns) / max(1, min(abs(ns[i] ** 2 - ns[j] ** 2) for i in range(3) for j in range(i)) ** 2)
    assert abs(base - other) <= 1e-15 * max(1.0, mag) * 8


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_backends_agree_on_kl(use_numba):
    a = kl_approx(ornstein_uhlenbeck(1.0, 1.0), 5, use_numba=use_numba)
    b = kl_approx(ornstein_uhlenbeck(1.0, 1.0), 5, use_numba=not use_numba)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-13)
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(a.eigenfunctions(t), b.eigenfunctions(t), atol=1e-11)
