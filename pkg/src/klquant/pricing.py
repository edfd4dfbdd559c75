"""Fractional Black-Scholes pricing: closed-form call and stratified
Monte-Carlo for vanilla and discretely monitored up-in calls.
"""

from dataclasses import dataclass
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy.special import ndtr

from .fbm import fbm_kl
from .kernels import fbm as fbm_kernel
from .quantizer import build_functional_quantizer
from .stratification import (
    AllocationRule,
    ConditionalSampler,
    build_stratification,
    stratified_estimate,
    trivial_stratification,
)

DEFAULT_STRATA = (10, 5, 2)
DEFAULT_RESOLUTIONS = (50, 100, 200)


class IntrinsicValueWarning(UserWarning):
    """Raised when a call is priced at or after maturity."""


@dataclass(frozen=True)
class MarketParams:
    S0: float
    K: float
    sigma: float
    T: float
    H: float
    r: float = 0.0
    B: float = None
    n: int = 1

    def __post_init__(self):
        if not (self.S0 > 0 and self.K > 0):
            raise ValueError("S0 and K must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"H must lie in (0, 1), got {self.H}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n (fixings) must be a positive integer")

    @property
    def mu(self):
        # risk-neutral drift
        return self.r

    def schedule(self):
        t = np.arange(self.n + 1) * (self.T / self.n)
        t[-1] = self.T
        return t


def fbs_call(p, t=0.0, S_t=None):
    """Closed-form call price at time ``t`` under fractional Black-Scholes.

    At or after maturity the intrinsic value is returned and an
    :class:`IntrinsicValueWarning` is issued.
    """
    S = p.S0 if S_t is None else float(S_t)
    if S <= 0:
        raise ValueError("S_t must be positive")
    if t >= p.T:
        warnings.warn("t >= T: returning intrinsic value", IntrinsicValueWarning, stacklevel=2)
        return max(S - p.K, 0.0)
    if t < 0:
        raise ValueError("t must be non-negative")
    v = p.sigma**2 * (p.T ** (2 * p.H) - t ** (2 * p.H))
    sv = math.sqrt(v)
    d1 = (math.log(S / p.K) + p.r * (p.T - t) + 0.5 * v) / sv
    d2 = d1 - sv
    return float(S * ndtr(d1) - p.K * math.exp(-p.r * (p.T - t)) * ndtr(d2))


def asset_path(fbm_path, p, t=None):
    """``S_t = S0 exp(sigma B_t + mu t - sigma^2 t^(2H) / 2)`` on the fixings.

    ``fbm_path`` may be one path of length n+1 or an (M, n+1) array.
    """
    b = np.asarray(fbm_path, dtype=float)
    t = p.schedule() if t is None else np.asarray(t, dtype=float)
    if b.shape[-1] != len(t):
        raise ValueError(f"path has {b.shape[-1]} points, schedule has {len(t)}")
    drift = p.mu * t - 0.5 * p.sigma**2 * t ** (2 * p.H)
    return p.S0 * np.exp(p.sigma * b + drift)


def call_payoff(p):
    disc = math.exp(-p.r * p.T)

    def F(paths):
        s = asset_path(paths, p)
        return disc * np.maximum(s[:, -1] - p.K, 0.0)

    return F


def up_in_call_payoff(p):
    if p.B is None:
        raise ValueError("up-in call needs a barrier B")
    disc = math.exp(-p.r * p.T)

    def F(paths):
        s = asset_path(paths, p)
        hit = s.max(axis=1) >= p.B
        return disc * np.where(hit, np.maximum(s[:, -1] - p.K, 0.0), 0.0)

    return F


@dataclass(frozen=True)
class PricingSetup:
    strat: object
    sampler: ConditionalSampler


@lru_cache(maxsize=32)
def _setup(H, T, n, strata, resolutions):
    t = np.arange(n + 1) * (T / n)
    t[-1] = T
    if not strata:
        kl = fbm_kl(H, T, n_modes=1, resolutions=resolutions)
        return PricingSetup(trivial_stratification(fbm_kernel(H, T)), ConditionalSampler(kl, t, 0))
    kl = fbm_kl(H, T, n_modes=len(strata), resolutions=resolutions)
    fq = build_functional_quantizer(kl, tuple(strata))
    return PricingSetup(build_stratification(fq), ConditionalSampler(kl, t, len(strata)))


def prepare(p, rule="prop", strata=DEFAULT_STRATA, resolutions=DEFAULT_RESOLUTIONS, quantizer=None):
    """Stratification and conditional sampler for ``p``'s fixing schedule.

    ``quantizer`` (a product :class:`FunctionalQuantizer`) overrides
    ``strata``; plain Monte-Carlo ignores both.
    """
    if AllocationRule(rule) is AllocationRule.PLAIN:
        return _setup(float(p.H), float(p.T), int(p.n), (), tuple(resolutions))
    if quantizer is not None:
        kl = quantizer.kl
        if kl.kernel.family.value != "fbm" or abs(kl.kernel.H - p.H) > 0 or abs(kl.T - p.T) > 0:
            raise ValueError("quantizer was built for a different process")
        return PricingSetup(build_stratification(quantizer), ConditionalSampler(kl, p.schedule(), quantizer.d))
    return _setup(float(p.H), float(p.T), int(p.n), tuple(strata), tuple(resolutions))


def _price(F, p, M, rule, seed, strata, quantizer, threads, **kw):
    s = prepare(p, rule, strata, quantizer=quantizer)
    return stratified_estimate(F, s.strat, s.sampler, M, rule, seed, threads=threads, **kw)


def price_vanilla_mc(p, M, rule="prop", seed=0, strata=DEFAULT_STRATA, quantizer=None, threads=1, **kw):
    """Discounted call ``e^{-rT}(S_T - K)^+`` by (stratified) Monte-Carlo."""
    return _price(call_payoff(p), p, M, rule, seed, strata, quantizer, threads, **kw)


def price_up_in_call(p, M, rule="prop", seed=0, strata=DEFAULT_STRATA, quantizer=None, threads=1, **kw):
    """Up-in call paying ``(S_T - K)^+`` iff ``max_i S_{t_i} >= B`` on the fixings."""
    return _price(up_in_call_payoff(p), p, M, rule, seed, strata, quantizer, threads, **kw)


# the two up-in configurations used for the variance benchmark
BARRIER_CONFIGS = (
    MarketParams(S0=100.0, K=100.0, B=125.0, sigma=0.3, T=1.5, H=0.3, r=0.0, n=11),
    MarketParams(S0=100.0, K=100.0, B=200.0, sigma=0.3, T=1.0, H=0.3, r=0.0, n=11),
)
