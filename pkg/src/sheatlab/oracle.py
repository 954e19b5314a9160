"""Deterministic reference values: Abel-kernel renewal equations.

The second moment of the parabolic Anderson model started from 1 solves

    f(t) = 1 + a int_0^t f(s) (4 pi kappa (t - s))^{-1/2} ds,

with a = c^2. The same kernel, iterated, gives the chain of nested
integrals whose partial sums bound E(M_t^{2k}) from below. Integrals
against the singular kernel are done by product integration: f is
interpolated piecewise linearly and each piece is integrated against
(t - s)^{-1/2} exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

from .errors import NonConvergence
from .heatkernel import gaussian_even_moment

__all__ = [
    "RenewalParams",
    "RenewalCurve",
    "renewal_second_moment",
    "renewal_closed_form",
    "picard_second_moment",
    "iterated_abel_integral",
    "constant_sigma_moments",
]

MAX_LEVEL = 12


@dataclass(frozen=True)
class RenewalParams:
    kappa: float
    coeff: float
    t_end: float
    n_steps: int = 1000

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.coeff < 0:
            raise ValueError("coeff must be >= 0")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.n_steps < 100:
            raise ValueError("n_steps must be >= 100")

    @property
    def rate(self) -> float:
        """lambda = coeff / (2 sqrt(kappa)); f(t) = exp(lambda^2 t)(1 + erf(lambda sqrt(t)))."""
        return self.coeff / (2.0 * math.sqrt(self.kappa))


@dataclass(frozen=True)
class RenewalCurve:
    t: np.ndarray
    f: np.ndarray
    n_steps: int

    @property
    def value(self) -> float:
        return float(self.f[-1])


def _abel_weights(h: float, n: int):
    """Product-integration weights for int_0^{t_n} (t_n - s)^{-1/2} g(s) ds.

    On a uniform grid the quadrature is a convolution,
    sum_{d=0}^{n} w[d] g_{n-d} - corr[n] g_0, with the correction removing
    the half of the first hat function that lies left of s = 0.
    """
    m = np.arange(n + 2, dtype=float)
    A = np.zeros(n + 2)
    B = np.zeros(n + 2)
    A[1:] = 2.0 * math.sqrt(h) * (np.sqrt(m[1:]) - np.sqrt(m[1:] - 1.0))
    B[1:] = (2.0 / 3.0) * h ** 1.5 * (m[1:] ** 1.5 - (m[1:] - 1.0) ** 1.5)
    left = (1.0 - m) * A + B / h   # weight on the node at the far end of piece m
    right = m * A - B / h          # weight on the node at the near end of piece m
    left[0] = 0.0
    right[0] = 0.0
    w = left[:-1] + right[1:]
    return w, right


def _abel_apply(g: np.ndarray, w: np.ndarray, corr: np.ndarray) -> np.ndarray:
    """(K g)_n for every node n, K the unnormalized Abel operator."""
    n = g.size - 1
    out = fftconvolve(g, w[: n + 1])[: n + 1]
    out -= corr[1 : n + 2] * g[0]
    out[0] = 0.0
    return out


def _solve_direct(coeff: float, kappa: float, t_end: float, n: int) -> np.ndarray:
    h = t_end / n
    b = coeff / math.sqrt(4.0 * math.pi * kappa)
    w, corr = _abel_weights(h, n)
    f = np.empty(n + 1)
    f[0] = 1.0
    denom = 1.0 - b * w[0]
    for k in range(1, n + 1):
        s = np.dot(w[1 : k + 1], f[k - 1 :: -1]) - corr[k + 1] * f[0]
        f[k] = (1.0 + b * s) / denom
    return f


def renewal_second_moment(params: RenewalParams, rtol: float = 1e-6, max_doublings: int = 8) -> RenewalCurve:
    """Solve the renewal equation on [0, t_end].

    The grid starts at ``params.n_steps`` intervals and is doubled until
    successive values of f(t_end) agree to ``rtol``.
    """
    n = params.n_steps
    prev = _solve_direct(params.coeff, params.kappa, params.t_end, n)
    for _ in range(max_doublings):
        n *= 2
        cur = _solve_direct(params.coeff, params.kappa, params.t_end, n)
        if abs(cur[-1] - prev[-1]) <= rtol * abs(cur[-1]):
            return RenewalCurve(np.linspace(0.0, params.t_end, n + 1), cur, n)
        prev = cur
    raise NonConvergence(
        f"renewal solution not converged to {rtol} after {max_doublings} doublings (n={n})"
    )


def picard_second_moment(params: RenewalParams, n_steps: int | None = None,
                         tol: float = 1e-10, max_iter: int = 200) -> RenewalCurve:
    """Same discretized equation as :func:`renewal_second_moment`, by Picard iteration."""
    n = params.n_steps if n_steps is None else n_steps
    h = params.t_end / n
    b = params.coeff / math.sqrt(4.0 * math.pi * params.kappa)
    w, corr = _abel_weights(h, n)
    f = np.ones(n + 1)
    for _ in range(max_iter):
        new = 1.0 + b * _abel_apply(f, w, corr)
        change = np.max(np.abs(new - f)) / np.max(np.abs(new))
        f = new
        if change < tol:
            return RenewalCurve(np.linspace(0.0, params.t_end, n + 1), f, n)
    raise NonConvergence(f"Picard iteration did not reach {tol} in {max_iter} iterations")


def renewal_closed_form(params: RenewalParams, t=None):
    """exp(lambda^2 t)(1 + erf(lambda sqrt t)) with lambda = coeff / (2 sqrt kappa)."""
    t = params.t_end if t is None else np.asarray(t, dtype=float)
    lam = params.rate
    return np.exp(lam * lam * t) * (1.0 + erf(lam * np.sqrt(t)))


def iterated_abel_integral(l: int, kappa: float, t: float, n_steps: int = 4096) -> float:
    """(l+1)-fold nested integral of nu(s_i, ds_{i+1}) = ds / sqrt(4 pi kappa (s_i - s)).

    Evaluated from the inside out: the innermost level is the constant 1,
    and each level applies the Abel operator to the previous one on a
    uniform grid of [0, t].
    """
    if int(l) != l or l < 0:
        raise ValueError("l must be a nonnegative integer")
    if l > MAX_LEVEL:
        raise ValueError(f"l must be <= {MAX_LEVEL}")
    if not kappa > 0 or t < 0:
        raise ValueError("need kappa > 0 and t >= 0")
    if t == 0:
        return 0.0
    h = t / n_steps
    w, corr = _abel_weights(h, n_steps)
    norm = 1.0 / math.sqrt(4.0 * math.pi * kappa)
    g = np.ones(n_steps + 1)
    for _ in range(int(l) + 1):
        g = norm * _abel_apply(g, w, corr)
    return float(g[-1])


def constant_sigma_moments(eps0: float, kappa: float, t: float, k: int) -> float:
    """E[(1 + Z)^{2k}] for Z ~ N(0, eps0^2 sqrt(t / (pi kappa)))."""
    if int(k) != k or k < 1:
        raise ValueError("k must be an integer >= 1")
    k = int(k)
    v = eps0 * eps0 * math.sqrt(t / (math.pi * kappa))
    total = 1.0
    for j in range(1, k + 1):
        total += math.comb(2 * k, 2 * j) * gaussian_even_moment(v, j)
    return total
