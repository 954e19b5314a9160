import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheatlab.errors import NonConvergence
from sheatlab.oracle import (
    RenewalParams,
    constant_sigma_moments,
    iterated_abel_integral,
    picard_second_moment,
    renewal_closed_form,
    renewal_second_moment,
)

# e (1 + erf 1), the renewal solution at lambda = 1, t = 1
LAMBDA_ONE_VALUE = 5.008980080762282


def series_solution(coeff, kappa, t, terms=200):
    """Power series of the renewal solution in sqrt(t).

    The Abel operator maps s^(n/2) to t^((n+1)/2) B(1/2, n/2 + 1), so the
    Neumann series is sum_n (b sqrt(pi))^n t^(n/2) / Gamma(n/2 + 1) with
    b = coeff / sqrt(4 pi kappa).
    """
    z = coeff / math.sqrt(4 * math.pi * kappa) * math.sqrt(math.pi) * math.sqrt(t)
    if z == 0:
        return 1.0
    return math.fsum(math.exp(n * math.log(z) - math.lgamma(n / 2 + 1)) for n in range(terms))


def test_zero_coefficient_gives_one():
    curve = renewal_second_moment(RenewalParams(1.0, 0.0, 3.0))
    assert np.all(curve.f == 1.0)


def test_lambda_one_value():
    p = RenewalParams(1.0, 2.0, 1.0)
    assert p.rate == 1.0
    assert series_solution(2.0, 1.0, 1.0) == pytest.approx(LAMBDA_ONE_VALUE, rel=1e-12)
    assert renewal_closed_form(p) == pytest.approx(LAMBDA_ONE_VALUE, rel=1e-12)
    assert renewal_second_moment(p).value == pytest.approx(LAMBDA_ONE_VALUE, rel=1e-6)
    assert abs(renewal_second_moment(p).value - 5.0090) < 1e-4


def test_picard_agrees_with_direct_solve():
    p = RenewalParams(1.0, 2.0, 1.0)
    direct = renewal_second_moment(p)
    picard = picard_second_moment(p, n_steps=direct.n_steps)
    assert np.max(np.abs(picard.f - direct.f) / direct.f) < 1e-8


def test_doubling_changes_value_little():
    p = RenewalParams(1.0, 2.0, 1.0)
    curve = renewal_second_moment(p)
    finer = renewal_second_moment(RenewalParams(1.0, 2.0, 1.0, n_steps=curve.n_steps * 2))
    assert abs(finer.value - curve.value) < 1e-6 * curve.value


def test_non_convergence_is_reported():
    with pytest.raises(NonConvergence):
        renewal_second_moment(RenewalParams(1.0, 2.0, 1.0), rtol=1e-14, max_doublings=1)


def test_rejects_bad_params():
    with pytest.raises(ValueError):
        RenewalParams(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        RenewalParams(1.0, 1.0, 1.0, n_steps=50)


@settings(max_examples=12, deadline=None)
@given(coeff=st.floats(0.1, 3.0), kappa=st.floats(0.3, 3.0), t=st.floats(0.2, 3.0))
def test_renewal_matches_series(coeff, kappa, t):
    curve = renewal_second_moment(RenewalParams(kappa, coeff, t))
    assert curve.value == pytest.approx(series_solution(coeff, kappa, t), rel=2e-6)
    assert curve.f[0] == 1.0
    assert np.all(np.diff(curve.f) >= 0)


def test_monotone_in_coefficient_and_time():
    values = [renewal_second_moment(RenewalParams(1.0, a, 1.0)).value for a in (0.5, 1.0, 1.5, 2.0)]
    assert values == sorted(values) and len(set(values)) == 4
    times = [renewal_second_moment(RenewalParams(1.0, 1.0, t)).value for t in (0.5, 1.0, 2.0)]
    assert times == sorted(times) and len(set(times)) == 3


def test_dominates_truncated_iterated_sums():
    c, kappa, t = 1.3, 1.0, 1.5
    full = renewal_second_moment(RenewalParams(kappa, c * c, t)).value
    partial = 1.0
    for level in range(13):
        partial += c ** (2 * (level + 1)) * iterated_abel_integral(level, kappa, t)
        assert partial <= full
    assert partial == pytest.approx(full, rel=1e-2)


def test_growth_rate_settles():
    p20 = renewal_second_moment(RenewalParams(1.0, 2.0, 20.0))
    p40 = renewal_second_moment(RenewalParams(1.0, 2.0, 40.0))
    r20, r40 = math.log(p20.value) / 20, math.log(p40.value) / 40
    assert abs(r20 - r40) / r40 < 0.02


def test_iterated_level_zero():
    assert iterated_abel_integral(0, 1.0, math.pi) == pytest.approx(1.0, abs=1e-12)
    for kappa, t in ((2.0, 1.0), (0.5, 3.0)):
        assert iterated_abel_integral(0, kappa, t) == pytest.approx(math.sqrt(t / (math.pi * kappa)), rel=1e-12)
    assert iterated_abel_integral(3, 1.0, 0.0) == 0.0


def test_iterated_level_one_monte_carlo():
    # s1 = t(1 - v^2), s2 = s1(1 - w^2) turn both kernel singularities into smooth weights
    rng = np.random.default_rng(7)
    n, t, kappa = 10 ** 7, 1.0, 1.0
    v, w = rng.random(n), rng.random(n)
    s1 = t * (1 - v * v)
    vals = 4 * math.sqrt(t) * np.sqrt(s1) / (4 * math.pi * kappa)
    m, se = vals.mean(), vals.std() / math.sqrt(n)
    assert abs(iterated_abel_integral(1, kappa, t) - m) < 3 * se


def test_iterated_ratios_decay():
    vals = [iterated_abel_integral(l, 1.0, 2.0) for l in range(8)]
    ratios = [b / a for a, b in zip(vals, vals[1:])]
    assert all(r2 < r1 for r1, r2 in zip(ratios, ratios[1:]))
    assert all(vals[l] * vals[0] >= vals[l + 1] for l in range(7))


def test_iterated_rejects_deep_levels():
    with pytest.raises(ValueError):
        iterated_abel_integral(13, 1.0, 1.0)
    assert iterated_abel_integral(12, 1.0, 1.0) > 0


def test_constant_sigma_moments_examples():
    assert constant_sigma_moments(1.0, 1.0, math.pi, 1) == pytest.approx(2.0, abs=1e-14)
    v = 0.7 ** 2 * math.sqrt(2.0 / (math.pi * 1.5))
    assert constant_sigma_moments(0.7, 1.5, 2.0, 1) == pytest.approx(1 + v, rel=1e-14)
    assert constant_sigma_moments(0.7, 1.5, 2.0, 2) == pytest.approx(1 + 6 * v + 3 * v * v, rel=1e-14)


@pytest.mark.parametrize("k", [2, 3])
def test_constant_sigma_moments_monte_carlo(k):
    rng = np.random.default_rng(11 + k)
    v = 0.5
    z = 1 + rng.normal(0.0, math.sqrt(v), 10 ** 7)
    x = z ** (2 * k)
    eps0 = math.sqrt(v / math.sqrt(1 / math.pi))  # v at kappa = 1, t = 1
    assert abs(constant_sigma_moments(eps0, 1.0, 1.0, k) - x.mean()) < 3 * x.std() / math.sqrt(x.size)
