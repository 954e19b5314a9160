"""Monte Carlo statistics and scaling-law fits.

Every function here is a deterministic function of its inputs; resampling
uses an explicit ``seed`` argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientRange, NonPositive
from .noise import GridSpec

__all__ = [
    "TailEstimate",
    "ScalingFit",
    "LyapunovEstimate",
    "MomentEstimate",
    "ShardStats",
    "wilson_interval",
    "estimate_tail",
    "fit_tail_exponent",
    "fit_sup_scaling",
    "estimate_coupling_decay",
    "independence_test",
    "estimate_lyapunov",
    "estimate_moments",
    "bump_weights",
    "mollified",
    "mean_ci",
]

Z95 = float(stats.norm.ppf(0.975))
MAX_MOMENT_ORDER = 8

SUP_TRANSFORMS = {
    "bounded": ("(log R)^(1/2)", 0.5),
    "general": ("(log R)^(1/6)", 1.0 / 6.0),
    "pam": ("(log R)^(2/3)", 2.0 / 3.0),
}


@dataclass(frozen=True)
class TailEstimate:
    lam: float
    p_hat: float
    ci_lo: float
    ci_hi: float
    n: int

    def __post_init__(self):
        if not 0.0 <= self.ci_lo <= self.p_hat <= self.ci_hi <= 1.0:
            raise ValueError(f"inconsistent tail estimate {self}")


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r2: float
    n_points: int
    transform: str
    stderr: float = float("nan")
    p_value: float = float("nan")

    def __post_init__(self):
        if self.n_points < 4:
            raise InsufficientRange(f"need >= 4 points, got {self.n_points}")

    def as_dict(self):
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "r2": self.r2,
            "n_points": self.n_points,
            "transform": self.transform,
            "stderr": self.stderr,
            "p_value": self.p_value,
        }


@dataclass(frozen=True)
class LyapunovEstimate:
    slope: float
    stderr: float
    intercept: float
    n_points: int

    def ci(self, level=0.95):
        dof = max(self.n_points - 2, 1)
        q = stats.t.ppf(0.5 + level / 2, dof)
        return self.slope - q * self.stderr, self.slope + q * self.stderr


@dataclass(frozen=True)
class MomentEstimate:
    order: float
    value: float
    ci_lo: float
    ci_hi: float
    n: int


def wilson_interval(successes: int, total: int, z: float = Z95):
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("total must be positive")
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, min(p, center - half)), min(1.0, max(p, center + half))


def estimate_tail(samples, lambdas, min_samples: int = 1000):
    """P{|X| >= lambda} with 95% Wilson intervals, one estimate per lambda."""
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("no samples")
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    xs = np.sort(x)
    out = []
    for lam in lambdas:
        hits = int(xs.size - np.searchsorted(xs, lam, side="left"))
        lo, hi = wilson_interval(hits, xs.size)
        out.append(TailEstimate(float(lam), hits / xs.size, lo, hi, int(xs.size)))
    return out


def _ols(x, y, w=None):
    """Weighted least squares y ~ a + b x. Returns (b, a, r2, stderr_b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx <= 0:
        raise InsufficientRange("regressor has no spread")
    b = (w * (x - xm) * (y - ym)).sum() / sxx
    a = ym - b * xm
    resid = y - a - b * x
    ss_res = (w * resid ** 2).sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    dof = x.size - 2
    se = math.sqrt(ss_res / dof / sxx) if dof > 0 else float("nan")
    return b, a, r2, se


def _fit(x, y, transform, w=None):
    b, a, r2, se = _ols(x, y, w)
    dof = len(x) - 2
    if se > 0 and math.isfinite(se):
        p = float(2 * stats.t.sf(abs(b / se), dof))
    else:
        p = 0.0
    return ScalingFit(float(b), float(a), float(r2), len(x), transform, float(se), p)


def fit_tail_exponent(estimates, mode: str = "bounded") -> ScalingFit:
    """Slope of log(-log p) against log(lambda) or, in ``pam`` mode, log log lambda."""
    if mode not in ("bounded", "pam"):
        raise ValueError("mode must be 'bounded' or 'pam'")
    use = [e for e in estimates if 0.0 < e.p_hat < 0.5 and (mode == "bounded" or e.lam > 1.0)]
    if len(use) < 4:
        raise InsufficientRange(f"need >= 4 estimates with 0 < p < 0.5, got {len(use)}")
    lam = np.array([e.lam for e in use])
    if lam.max() < 2.0 * lam.min():
        raise InsufficientRange("lambda span is less than a factor of 2")
    y = np.log(-np.log([e.p_hat for e in use]))
    if mode == "bounded":
        return _fit(np.log(lam), y, "log(-log p) vs log lambda")
    return _fit(np.log(np.log(lam)), y, "log(-log p) vs log log lambda")


def fit_sup_scaling(R_values, sup_samples, mode: str = "bounded") -> ScalingFit:
    """Regress the mean sup (mean log sup for ``pam``) on a power of log R.

    Per-R means are weighted by their inverse squared standard error when
    every R has at least two samples with nonzero spread.
    """
    if mode not in SUP_TRANSFORMS:
        raise ValueError(f"mode must be one of {tuple(SUP_TRANSFORMS)}")
    R = np.asarray(R_values, dtype=float)
    if R.size < 4:
        raise InsufficientRange("need >= 4 radii")
    if np.any(np.diff(R) <= 0):
        raise ValueError("R_values must be increasing")
    if R[0] <= 1.0:
        raise ValueError("R_values must exceed 1")
    if R[-1] < 16 * R[0]:
        raise InsufficientRange("R span is less than a factor of 16")
    means, ses = [], []
    for s in sup_samples:
        s = np.asarray(s, dtype=float)
        if mode == "pam":
            if np.any(s <= 0):
                raise NonPositive("pam mode takes logs of sup values")
            s = np.log(s)
        means.append(s.mean())
        ses.append(s.std(ddof=1) / math.sqrt(s.size) if s.size > 1 else 0.0)
    ses = np.array(ses)
    w = 1.0 / ses ** 2 if np.all(ses > 0) else None
    label, power = SUP_TRANSFORMS[mode]
    return _fit(np.log(R) ** power, np.array(means), ("mean log sup vs " if mode == "pam" else "mean sup vs ") + label, w)


def estimate_coupling_decay(beta_values, rms_diffs) -> ScalingFit:
    """Log-log slope of RMS(u - U^beta) against beta.

    Zero RMS values (the two solutions agree to the last bit) carry no
    slope information and are dropped before the range checks.
    """
    beta = np.asarray(beta_values, dtype=float)
    rms = np.asarray(rms_diffs, dtype=float)
    if beta.shape != rms.shape:
        raise ValueError("beta_values and rms_diffs differ in length")
    if np.any(rms < 0):
        raise NonPositive("RMS values must be >= 0")
    keep = rms > 0
    beta, rms = beta[keep], rms[keep]
    if beta.size < 4:
        raise InsufficientRange(f"need >= 4 beta values with nonzero RMS, got {beta.size}")
    if beta.max() < 8 * beta.min():
        raise InsufficientRange("beta span is less than a factor of 8")
    return _fit(np.log(beta), np.log(rms), "log RMS vs log beta")


def independence_test(block_samples, min_replicates: int = 1000) -> float:
    """Largest absolute off-diagonal correlation between block columns."""
    m = np.asarray(block_samples, dtype=float)
    if m.ndim != 2 or m.shape[1] < 2:
        raise ValueError("need a replicate x block matrix with >= 2 blocks")
    if m.shape[0] < min_replicates:
        raise ValueError(f"need >= {min_replicates} replicates, got {m.shape[0]}")
    if np.any(m.std(axis=0) == 0):
        raise ValueError("a block column is constant")
    c = np.corrcoef(m, rowvar=False)
    np.fill_diagonal(c, 0.0)
    return float(np.max(np.abs(c)))


def estimate_lyapunov(trajectory) -> LyapunovEstimate:
    """Least-squares slope of log(statistic) against t."""
    traj = list(trajectory)
    if len(traj) < 5:
        raise InsufficientRange("need >= 5 time points")
    t = np.array([p[0] for p in traj], dtype=float)
    s = np.array([p[1] for p in traj], dtype=float)
    if np.any(s <= 0):
        raise NonPositive("statistic must be positive at every time point")
    b, a, _, se = _ols(t, np.log(s))
    return LyapunovEstimate(float(b), float(se), float(a), len(traj))


def bump_weights(grid: GridSpec, center: float = 0.0, width: float = 1.0) -> np.ndarray:
    """Quadrature weights of a smooth bump density supported on [center - width/2, center + width/2]."""
    z = (grid.x - center) / (width / 2.0)
    psi = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    psi[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    total = psi.sum()
    if total == 0:
        raise ValueError("bump narrower than the grid spacing")
    return psi / total


def mollified(values, weights) -> float:
    """int u(x) psi(x) dx approximated with precomputed weights."""
    return float(np.dot(values, weights))


def mean_ci(x):
    """(mean, lo, hi) normal-theory 95% interval for the mean."""
    x = np.asarray(x, dtype=float).ravel()
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return m, m - Z95 * se, m + Z95 * se


def _bootstrap_ci(x, stat, n_boot, seed, level=0.95):
    rng = np.random.default_rng(seed)
    n = x.size
    vals = np.empty(n_boot)
    for i in range(n_boot):
        vals[i] = stat(x[rng.integers(0, n, n)])
    a = (1 - level) / 2
    return float(np.quantile(vals, a)), float(np.quantile(vals, 1 - a))


def estimate_moments(samples, orders, n_boot: int = 400, seed: int = 0, alpha=None):
    """Empirical E|X|^k with percentile-bootstrap 95% intervals.

    If ``alpha`` is given the result also carries
    E exp(alpha (log+ |X|)^{3/2}) under the key ``"exp_log"``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    out = {}
    for k in orders:
        if k > MAX_MOMENT_ORDER:
            raise ValueError(f"moment order {k} exceeds {MAX_MOMENT_ORDER}")
        if k <= 0:
            raise ValueError("moment orders must be positive")
        stat = lambda s, k=k: float(np.mean(np.abs(s) ** k))
        value = stat(x)
        if np.all(x == x[0]):
            lo = hi = value
        else:
            lo, hi = _bootstrap_ci(x, stat, n_boot, seed)
        out[k] = MomentEstimate(float(k), value, lo, hi, x.size)
    if alpha is not None:
        lp = np.log(np.maximum(np.abs(x), 1.0))
        stat = lambda s: float(np.mean(np.exp(alpha * np.log(np.maximum(np.abs(s), 1.0)) ** 1.5)))
        value = float(np.mean(np.exp(alpha * lp ** 1.5)))
        lo, hi = _bootstrap_ci(x, stat, n_boot, seed)
        out["exp_log"] = MomentEstimate(float("nan"), value, lo, hi, x.size)
    return out


@dataclass
class ShardStats:
    """Power sums of a sample, mergeable across shards in any order.

    Each shard keeps its own partial sums; totals are formed with
    ``math.fsum`` so the result does not depend on merge order.
    """

    max_order: int = 4
    partials: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, x, max_order: int = 4):
        x = np.asarray(x, dtype=float).ravel()
        row = [float(x.size)] + [math.fsum((x ** k).tolist()) for k in range(1, max_order + 1)]
        return cls(max_order, [row])

    def merge(self, other: "ShardStats") -> "ShardStats":
        if other.max_order != self.max_order:
            raise ValueError("shards track different moment orders")
        return ShardStats(self.max_order, self.partials + other.partials)

    @property
    def n(self) -> int:
        return int(math.fsum(p[0] for p in self.partials))

    def raw_moment(self, k: int) -> float:
        return math.fsum(p[k] for p in self.partials) / self.n

    def mean(self) -> float:
        return self.raw_moment(1)

    def variance(self) -> float:
        """Unbiased sample variance."""
        n = self.n
        m1 = self.raw_moment(1)
        return (self.raw_moment(2) - m1 * m1) * n / (n - 1)
