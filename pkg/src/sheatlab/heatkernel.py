"""Closed-form heat-kernel quantities and Gaussian moments.

The kernel is the transition density of the generator (kappa/2) d^2/dx^2,

    p_t(z) = (2 pi kappa t)^{-1/2} exp(-z^2 / (2 kappa t)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelParams",
    "kernel_value",
    "kernel_l2_norm_sq",
    "kernel_l2_time_integral",
    "gaussian_even_moment",
    "mu_t",
]


@dataclass(frozen=True)
class KernelParams:
    kappa: float
    t: float

    def __post_init__(self):
        if not (self.kappa > 0):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not (self.t > 0):
            raise ValueError(f"t must be > 0, got {self.t}")


def kernel_value(params: KernelParams, z):
    """Heat kernel p_t(z); accepts scalars or arrays."""
    var = params.kappa * params.t
    z = np.asarray(z, dtype=float)
    out = np.exp(-(z * z) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return float(out) if out.ndim == 0 else out


def kernel_l2_norm_sq(params: KernelParams) -> float:
    """||p_t||^2_{L^2(R)} = (4 pi kappa t)^{-1/2}."""
    return 1.0 / math.sqrt(4.0 * math.pi * params.kappa * params.t)


def kernel_l2_time_integral(params: KernelParams) -> float:
    """int_0^t ||p_s||^2 ds = sqrt(t / (pi kappa)).

    ``params.t`` may not be zero because KernelParams forbids it; use
    :func:`kernel_l2_time_integral_at` for the t = 0 endpoint.
    """
    return math.sqrt(params.t / (math.pi * params.kappa))


def kernel_l2_time_integral_at(kappa: float, t: float) -> float:
    """Same as :func:`kernel_l2_time_integral` but allows ``t == 0``."""
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return math.sqrt(t / (math.pi * kappa))


def gaussian_even_moment(variance: float, k: int) -> float:
    """E[Z^{2k}] for Z ~ N(0, variance): variance^k (2k)! / (k! 2^k)."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k}")
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    k = int(k)
    # (2k-1)!! computed as an exact integer
    double_fact = math.prod(range(1, 2 * k, 2))
    return float(variance) ** k * double_fact


def mu_t(eps0: float, params: KernelParams) -> float:
    """(2/e) * eps0^2 * sqrt(t / (pi kappa))."""
    if not eps0 > 0:
        raise ValueError(f"eps0 must be > 0, got {eps0}")
    return (2.0 / math.e) * eps0 * eps0 * kernel_l2_time_integral(params)
