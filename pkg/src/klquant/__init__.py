"""Karhunen-Loeve decompositions, functional quantization and stratified
Monte-Carlo for Gaussian processes and fractional Black-Scholes pricing.
"""

__version__ = "0.1.0"

from .kernels import (
    CovarianceKernel,
    brownian_bridge,
    brownian_motion,
    closed_form_kl,
    custom_kernel,
    fbm,
    kernel_trace,
    make_kernel,
    ornstein_uhlenbeck,
    stationary_ou,
)
from .nystrom import KLApproximation, kl_approx, richardson_romberg3, trapezoidal_rule
from .fbm import fbm_kl, kl_for_kernel
from .quantizer import (
    blind_decomposition,
    build_functional_quantizer,
    gauss1d,
    lloyd_multivariate,
)
from .stratification import (
    AllocationRule,
    ConditionalSampler,
    allocate,
    build_stratification,
    reconstruct_process,
    stratified_estimate,
)
from .pricing import MarketParams, asset_path, fbs_call, price_up_in_call, price_vanilla_mc

__all__ = [
    "CovarianceKernel",
    "brownian_motion",
    "brownian_bridge",
    "ornstein_uhlenbeck",
    "stationary_ou",
    "fbm",
    "custom_kernel",
    "make_kernel",
    "kernel_trace",
    "closed_form_kl",
    "KLApproximation",
    "kl_approx",
    "richardson_romberg3",
    "trapezoidal_rule",
    "fbm_kl",
    "kl_for_kernel",
    "gauss1d",
    "blind_decomposition",
    "lloyd_multivariate",
    "build_functional_quantizer",
    "AllocationRule",
    "ConditionalSampler",
    "allocate",
    "build_stratification",
    "reconstruct_process",
    "stratified_estimate",
    "MarketParams",
    "fbs_call",
    "asset_path",
    "price_vanilla_mc",
    "price_up_in_call",
]
