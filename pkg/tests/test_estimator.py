import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sheatlab.errors import InsufficientRange, NonPositive
from sheatlab.estimator import (
    ShardStats,
    TailEstimate,
    bump_weights,
    estimate_coupling_decay,
    estimate_lyapunov,
    estimate_moments,
    estimate_tail,
    fit_sup_scaling,
    fit_tail_exponent,
    independence_test,
    mean_ci,
    mollified,
    wilson_interval,
)
from sheatlab.noise import GridSpec


def planted(lams, p):
    return [TailEstimate(l, p(l), p(l), p(l), 10 ** 6) for l in lams]


def test_tail_all_below_threshold(rng):
    est = estimate_tail(rng.random(2000), [5.0])[0]
    assert est.p_hat == 0.0 and est.ci_lo == 0.0 and est.ci_hi > 0


def test_tail_gaussian_cdf(rng):
    x = rng.normal(size=10 ** 5)
    est = estimate_tail(x, [1.0])[0]
    # two-sided: P{|Z| >= 1} = 2 * 0.1587
    assert est.ci_lo <= 2 * stats.norm.sf(1.0) <= est.ci_hi
    one_sided = estimate_tail(np.maximum(x, 0.0), [1.0])[0]
    assert one_sided.ci_lo <= 0.1587 <= one_sided.ci_hi


def test_tail_ci_shrinks_like_root_n(rng):
    x = rng.normal(size=40_000)
    w1 = estimate_tail(x[:20_000], [1.0])[0]
    w2 = estimate_tail(x, [1.0])[0]
    ratio = (w2.ci_hi - w2.ci_lo) / (w1.ci_hi - w1.ci_lo)
    assert abs(ratio / (1 / math.sqrt(2)) - 1) < 0.2


def test_tail_rejects_small_samples():
    with pytest.raises(ValueError):
        estimate_tail([], [1.0])
    with pytest.raises(ValueError):
        estimate_tail(np.ones(999), [1.0])


@settings(max_examples=200, deadline=None)
@given(k=st.integers(0, 500), extra=st.integers(0, 5000))
def test_wilson_interval_brackets_estimate(k, extra):
    n = k + extra
    if n == 0:
        return
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_coverage():
    rng = np.random.default_rng(3)
    n, reps = 10 ** 4, 2000
    for p in (0.001, 0.01, 0.2):
        hits = rng.binomial(n, p, reps)
        covered = sum(lo <= p <= hi for lo, hi in (wilson_interval(int(h), n) for h in hits))
        assert covered / reps >= 0.93


def test_tail_fit_gaussian_law():
    fit = fit_tail_exponent(planted(np.linspace(1.5, 4.0, 8), lambda l: math.exp(-l * l)))
    assert abs(fit.exponent - 2.0) < 0.05
    assert fit.r2 > 0.999


def test_tail_fit_pam_law():
    fit = fit_tail_exponent(planted(np.linspace(3.0, 40.0, 8), lambda l: math.exp(-math.log(l) ** 1.5)), mode="pam")
    assert abs(fit.exponent - 1.5) < 0.05


def test_tail_fit_rejects_narrow_range():
    with pytest.raises(InsufficientRange):
        fit_tail_exponent(planted([2.0, 2.2, 2.5, 3.0], lambda l: math.exp(-l * l)))
    with pytest.raises(InsufficientRange):
        fit_tail_exponent(planted([2.0, 4.0, 6.0], lambda l: math.exp(-l * l)))


def test_sup_fit_planted_law():
    R = 16.0 * 2.0 ** np.arange(9)
    samples = [np.full(3, 3 * math.sqrt(math.log(r))) for r in R]
    fit = fit_sup_scaling(R, samples)
    assert fit.exponent == pytest.approx(3.0, abs=1e-9)
    assert fit.r2 > 0.999


@pytest.mark.parametrize("mode,power", [("general", 1 / 6), ("pam", 2 / 3)])
def test_sup_fit_other_modes(mode, power):
    R = 16.0 * 2.0 ** np.arange(6)
    vals = [2.0 * math.log(r) ** power + 0.5 for r in R]
    samples = [np.full(2, math.exp(v) if mode == "pam" else v) for v in vals]
    assert fit_sup_scaling(R, samples, mode).exponent == pytest.approx(2.0, rel=1e-9)


def test_sup_fit_gaussian_block_maxima():
    # the max of N iid standard normals grows like sqrt(2 log N)
    rng = np.random.default_rng(5)
    R = 16 * 2 ** np.arange(9)
    samples = [rng.standard_normal((200, r)).max(axis=1) for r in R]
    fit = fit_sup_scaling(R.astype(float), samples)
    assert fit.exponent > 0 and fit.r2 > 0.95


def test_sup_fit_rejects_short_span():
    with pytest.raises(InsufficientRange):
        fit_sup_scaling([2.0, 4.0, 8.0, 16.0], [np.ones(2)] * 4)


def test_coupling_planted_law():
    beta = np.array([4.0, 8.0, 16.0, 32.0, 64.0])
    assert estimate_coupling_decay(beta, beta ** -0.5).exponent == pytest.approx(-0.5, abs=1e-12)


def test_coupling_perturbed_law():
    rng = np.random.default_rng(8)
    beta = np.array([4.0, 8.0, 16.0, 32.0, 64.0])
    rms = 2.0 * beta ** -0.5 * (1 + 0.05 * rng.standard_normal(beta.size))
    assert abs(estimate_coupling_decay(beta, rms).exponent + 0.5) < 0.1


def test_coupling_needs_range():
    with pytest.raises(InsufficientRange):
        estimate_coupling_decay([4.0, 8.0, 16.0], [1.0, 0.5, 0.2])
    with pytest.raises(InsufficientRange):
        estimate_coupling_decay([4.0, 8.0, 16.0, 32.0, 64.0], [0.1, 1e-3, 1e-9, 0.0, 0.0])


def test_independence_identical_columns(rng):
    x = rng.normal(size=2000)
    assert independence_test(np.column_stack([x, x])) == pytest.approx(1.0)


def test_independence_null_distribution():
    rng = np.random.default_rng(9)
    n = 10 ** 4
    ok = [independence_test(rng.standard_normal((n, 4))) < 3 / math.sqrt(n) for _ in range(200)]
    assert np.mean(ok) >= 0.95


def test_independence_rejects_degenerate(rng):
    with pytest.raises(ValueError):
        independence_test(np.column_stack([rng.normal(size=2000), np.ones(2000)]))
    with pytest.raises(ValueError):
        independence_test(rng.normal(size=(2000, 1)))


def test_lyapunov_exact_exponential():
    t = np.linspace(0.0, 10.0, 11)
    est = estimate_lyapunov(zip(t, np.exp(-0.3 * t)))
    assert abs(est.slope + 0.3) < 1e-12


def test_lyapunov_checks_input():
    with pytest.raises(NonPositive):
        estimate_lyapunov([(t, 1.0 - t) for t in range(6)])
    with pytest.raises(InsufficientRange):
        estimate_lyapunov([(t, 1.0) for t in range(4)])


def test_bump_is_probability_density():
    g = GridSpec(1.0, 1e-4, 0.01, -2.0, 2.0, 1.0)
    w = bump_weights(g)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w[np.abs(g.x) >= 0.5] == 0)
    assert mollified(np.full(g.n_cells, 3.0), w) == pytest.approx(3.0)


def test_moments_of_constant_samples():
    out = estimate_moments(np.full(50, 1.5), [1, 2, 4])
    for k in (1, 2, 4):
        assert out[k].value == pytest.approx(1.5 ** k, rel=1e-14)
        assert out[k].ci_lo == out[k].ci_hi == out[k].value


def test_moments_reject_high_orders():
    with pytest.raises(ValueError):
        estimate_moments(np.ones(10), [9])


def test_moments_are_deterministic(rng):
    x = rng.lognormal(size=500)
    a = estimate_moments(x, [2], seed=4, alpha=0.5)
    b = estimate_moments(x, [2], seed=4, alpha=0.5)
    assert a[2] == b[2]
    assert (a["exp_log"].value, a["exp_log"].ci_lo) == (b["exp_log"].value, b["exp_log"].ci_lo)
    assert a["exp_log"].ci_lo <= a["exp_log"].value <= a["exp_log"].ci_hi


def test_lognormal_moment_shape(rng):
    # log m_k = k^2 s^2 / 2 makes (1/k) log m_k increasing in k
    x = rng.lognormal(0.0, 0.5, 10 ** 6)
    m = estimate_moments(x, [2, 4, 6], n_boot=20)
    per_k = [math.log(m[k].value) / k for k in (2, 4, 6)]
    assert per_k[0] < per_k[1] < per_k[2]


def test_mean_ci_contains_mean(rng):
    m, lo, hi = mean_ci(rng.normal(2.0, 1.0, 10_000))
    assert lo < 2.0 < hi and lo < m < hi


def test_shard_merge_order_independent(rng):
    shards = [ShardStats.from_samples(rng.lognormal(size=int(s))) for s in rng.integers(5, 500, 6)]
    results = set()
    for perm in itertools.permutations(range(4)):
        acc = shards[perm[0]]
        for i in perm[1:]:
            acc = acc.merge(shards[i])
        results.add((acc.n, acc.mean(), acc.variance(), acc.raw_moment(4)))
    assert len(results) == 1
    samples = [rng.normal(size=n) for n in (10, 200, 37)]
    merged = ShardStats.from_samples(samples[0]).merge(ShardStats.from_samples(samples[1]))
    merged = merged.merge(ShardStats.from_samples(samples[2]))
    pooled = np.concatenate(samples)
    assert merged.mean() == pytest.approx(pooled.mean(), abs=1e-12)
    assert merged.variance() == pytest.approx(pooled.var(ddof=1), abs=1e-12)
