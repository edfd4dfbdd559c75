import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from klquant.fbm import fbm_kl
from klquant.pricing import (
    BARRIER_CONFIGS,
    IntrinsicValueWarning,
    MarketParams,
    asset_path,
    call_payoff,
    fbs_call,
    prepare,
    price_up_in_call,
    price_vanilla_mc,
    up_in_call_payoff,
)
from klquant.stratification import stratified_estimate

import oracles


def combined(a, b):
    return math.hypot(a.std_error, b.std_error)


# ---------------------------------------------------------------- closed form


def test_fbs_reduces_to_bs():
    p = MarketParams(S0=100, K=100, sigma=0.2, T=1.0, H=0.5)
    assert fbs_call(p) == pytest.approx(100 * (2 * ndtr(0.1) - 1), abs=1e-12)
    assert fbs_call(p) == pytest.approx(7.9656, abs=5e-5)
    for S, K, r, sig, T in [(90, 100, 0.03, 0.25, 2.0), (120, 95, 0.0, 0.4, 0.5)]:
        q = MarketParams(S0=S, K=K, r=r, sigma=sig, T=T, H=0.5)
        assert fbs_call(q) == pytest.approx(oracles.black_scholes_call(S, K, r, sig, T), rel=1e-13)


def test_fbs_small_strike():
    p = MarketParams(S0=100, K=1e-12, sigma=0.3, T=1.0, H=0.3)
    assert fbs_call(p) == pytest.approx(100, abs=1e-9)


def test_fbs_at_the_money_d_values():
    # t = 0, S = K, r = 0: d1 = sigma T^H / 2 = -d2
    p = MarketParams(S0=100, K=100, sigma=0.3, T=2.0, H=0.3)
    d = 0.3 * 2.0**0.3 / 2
    assert fbs_call(p) == pytest.approx(100 * (ndtr(d) - ndtr(-d)), rel=1e-14)


def test_fbs_intrinsic_after_maturity():
    p = MarketParams(S0=100, K=90, sigma=0.3, T=1.0, H=0.3)
    with pytest.warns(IntrinsicValueWarning):
        assert fbs_call(p, t=1.0, S_t=105) == 15.0


def test_fbs_time_t():
    p = MarketParams(S0=100, K=100, r=0.02, sigma=0.3, T=1.0, H=0.7)
    t = 0.4
    v = 0.3**2 * (1 - t**1.4)
    d1 = (math.log(110 / 100) + 0.02 * 0.6 + v / 2) / math.sqrt(v)
    ref = 110 * ndtr(d1) - 100 * math.exp(-0.02 * 0.6) * ndtr(d1 - math.sqrt(v))
    assert fbs_call(p, t, 110) == pytest.approx(ref, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(
    S=st.floats(50, 150),
    sig=st.floats(0.05, 0.8),
    T=st.floats(0.1, 3),
    H=st.floats(0.1, 0.9),
    r=st.floats(0, 0.1),
)
def test_fbs_monotone(S, sig, T, H, r):
    base = fbs_call(MarketParams(S0=S, K=100, r=r, sigma=sig, T=T, H=H))
    h = 1e-4
    assert fbs_call(MarketParams(S0=S + h, K=100, r=r, sigma=sig, T=T, H=H)) - base >= -1e-10
    assert fbs_call(MarketParams(S0=S, K=100, r=r, sigma=sig + h, T=T, H=H)) - base >= -1e-10
    assert fbs_call(MarketParams(S0=S, K=100, r=r, sigma=sig, T=T + h, H=H)) - base >= -1e-10


def test_market_validation():
    for kw in (dict(S0=-1), dict(K=0), dict(sigma=0), dict(T=0), dict(H=1.0), dict(n=0)):
        base = dict(S0=100, K=100, sigma=0.3, T=1.0, H=0.3)
        base.update(kw)
        with pytest.raises(ValueError):
            MarketParams(**base)


# ---------------------------------------------------------------- asset paths


def test_asset_path_zero_noise():
    p = MarketParams(S0=100, K=100, sigma=0.3, T=1.0, H=0.3, n=4)
    t = p.schedule()
    np.testing.assert_allclose(asset_path(np.zeros(5), p), 100 * np.exp(-0.5 * 0.09 * t**0.6), rtol=1e-15)
    assert asset_path(np.zeros(5), p)[0] == 100
    with pytest.raises(ValueError):
        asset_path(np.zeros(4), p)


def test_martingale():
    p = MarketParams(S0=100, K=100, sigma=0.3, T=1.0, H=0.3)
    s = prepare(p, "plain")
    est = stratified_estimate(lambda x: asset_path(x, p)[:, -1], s.strat, s.sampler, 1_000_000, "plain", seed=5)
    assert abs(est.estimate - 100) <= 3 * est.std_error


def test_half_is_gbm_marginal():
    p = MarketParams(S0=100, K=100, sigma=0.2, T=1.0, H=0.5, n=4)
    s = prepare(p, "plain")
    x = s.sampler.sample(np.zeros((200_000, 0)), np.random.default_rng(0))
    logs = np.log(asset_path(x, p)[:, -1] / 100)
    se = 0.2 / math.sqrt(len(logs))
    assert abs(logs.mean() + 0.02) <= 4 * se
    assert logs.std() == pytest.approx(0.2, rel=0.01)


# ---------------------------------------------------------------- Monte-Carlo prices


def test_vanilla_h03_million():
    p = MarketParams(S0=100, K=100, sigma=0.3, T=1.0, H=0.3)
    est = price_vanilla_mc(p, 1_000_000, "prop", seed=1)
    assert abs(est.estimate - fbs_call(p)) <= 3 * est.std_error


def test_vanilla_h05_classical():
    p = MarketParams(S0=100, K=110, r=0.05, sigma=0.2, T=1.0, H=0.5)
    est = price_vanilla_mc(p, 200_000, "lip", seed=2)
    assert abs(est.estimate - oracles.black_scholes_call(100, 110, 0.05, 0.2, 1.0)) <= 3 * est.std_error


def test_vanilla_zero_vol_limit():
    p = MarketParams(S0=100, K=95, r=0.03, sigma=1e-12, T=1.0, H=0.3)
    est = price_vanilla_mc(p, 1000, "prop", seed=0)
    ref = (100 * math.exp(0.03) - 95) * math.exp(-0.03)
    assert est.estimate == pytest.approx(ref, abs=1e-8)
    assert est.variance <= 1e-16


def test_put_call_parity_h05():
    p = MarketParams(S0=100, K=105, r=0.02, sigma=0.25, T=1.0, H=0.5)
    s = prepare(p, "prop")
    disc = math.exp(-p.r * p.T)
    F_call = call_payoff(p)
    F_put = lambda x: disc * np.maximum(p.K - asset_path(x, p)[:, -1], 0.0)
    F_diff = lambda x: F_call(x) - F_put(x)
    c = stratified_estimate(F_call, s.strat, s.sampler, 100_000, "prop", seed=9)
    d = stratified_estimate(F_diff, s.strat, s.sampler, 100_000, "prop", seed=9)
    assert abs(d.estimate - (p.S0 - p.K * disc)) <= 3 * d.std_error
    assert c.estimate > 0


def test_up_in_degenerates_to_vanilla():
    p = MarketParams(S0=100, K=100, B=90, sigma=0.3, T=1.0, H=0.3, n=11)
    for rule in ("plain", "prop", "opt"):
        a = price_up_in_call(p, 20_000, rule, seed=3)
        b = price_vanilla_mc(p, 20_000, rule, seed=3)
        assert a.estimate == b.estimate and a.variance == b.variance


def test_up_in_pathwise_dominance():
    p = BARRIER_CONFIGS[0]
    s = prepare(p, "prop")
    x = s.sampler.sample(np.zeros((50_000, 3)) + 0.1, np.random.default_rng(0))
    assert np.all(up_in_call_payoff(p)(x) <= call_payoff(p)(x))


def test_up_in_requires_barrier():
    with pytest.raises(ValueError):
        price_up_in_call(MarketParams(S0=100, K=100, sigma=0.3, T=1.0, H=0.3), 1000)


def test_stratified_and_plain_agree():
    for p in BARRIER_CONFIGS:
        a = price_up_in_call(p, 100_000, "plain", seed=21)
        b = price_up_in_call(p, 100_000, "lip", seed=22)
        assert abs(a.estimate - b.estimate) <= 3 * combined(a, b)


def test_quantizer_override_matches_default_strata():
    p = MarketParams(S0=100, K=100, B=125, sigma=0.3, T=1.5, H=0.3, n=11)
    from klquant.quantizer import build_functional_quantizer

    fq = build_functional_quantizer(fbm_kl(0.3, 1.5, 3, (50, 100, 200)), (10, 5, 2))
    a = price_up_in_call(p, 10_000, "prop", seed=1, quantizer=fq)
    b = price_up_in_call(p, 10_000, "prop", seed=1)
    assert a.estimate == b.estimate
    with pytest.raises(ValueError):
        price_up_in_call(MarketParams(S0=100, K=100, B=125, sigma=0.3, T=1.0, H=0.3, n=11), 1000, "prop", quantizer=fq)
