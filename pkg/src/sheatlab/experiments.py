"""The canonical experiments: per-replicate work plus aggregation.

Every experiment is split into a picklable per-replicate function, run
through :func:`map_replicates`, and an aggregation step that sees the
results in replicate order. Replicate ``r`` always draws from the streams
keyed by ``(master_seed, r, block)``, so the number of worker processes
never changes a result.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import estimator as est
from .errors import SheatlabError
from .noise import GridSpec, make_block_plan
from .oracle import (
    RenewalParams,
    constant_sigma_moments,
    renewal_closed_form,
    renewal_second_moment,
)
from .sigma import SigmaSpec
from .solver import Integrator, OrderingStats, RunConfig, sup_over_radius

logger = logging.getLogger(__name__)

EXPERIMENTS = ("tails", "supscaling", "moments", "coupling", "comparison", "lyapunov", "oracle")

# name of the swept parameter, used as the second CSV column
PARAM_COLUMN = {
    "tails": "lambda",
    "supscaling": "R",
    "moments": "k",
    "coupling": "beta",
    "comparison": "t",
    "lyapunov": "t",
    "oracle": "t",
}


@dataclass
class ExperimentConfig:
    experiment: str
    grid: GridSpec | None
    sigma: SigmaSpec | None
    n_replicates: int = 1
    master_seed: int = 0
    workers: int = 1
    out: str = "results"
    boundary: str = "periodic"
    lambdas: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    times: list = field(default_factory=list)
    orders: list = field(default_factory=list)
    spacing: float = 2.5
    u0_hi: float = 2.0
    u0_lo: float = 1.0
    alpha: float | None = None
    independence_beta: float | None = None
    coeff: float = 2.0
    n_steps: int = 1000
    points: int = 101
    snapshots: list = field(default_factory=list)
    resolved: dict = field(default_factory=dict)
    config_hash: str = ""

    def run_config(self, replicate_id: int, plan=None, grid=None) -> RunConfig:
        return RunConfig(
            grid=self.grid if grid is None else grid,
            sigma=self.sigma,
            master_seed=self.master_seed,
            replicate_id=replicate_id,
            boundary=self.boundary,
            localization=plan,
        )


@dataclass
class ExperimentResult:
    experiment: str
    param: str
    rows: list
    summary: dict


# ---------------------------------------------------------------- scheduling

def _run_chunk(func, cfg, ids):
    return [func(cfg, r) for r in ids]


def map_replicates(func, cfg: ExperimentConfig, n: int | None = None, workers: int | None = None):
    """[func(cfg, r) for r in range(n)], optionally spread over processes."""
    n = cfg.n_replicates if n is None else n
    workers = cfg.workers if workers is None else workers
    if workers <= 1 or n <= 1:
        return [func(cfg, r) for r in range(n)]
    n_chunks = min(n, workers * 4)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, func, cfg, list(range(a, b)))
                   for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        out = []
        for f in futures:
            out.extend(f.result())
    return out


def _steps_for(grid: GridSpec, t: float) -> int:
    k = round(t / grid.dt)
    if abs(k * grid.dt - t) > 1e-9 * max(1.0, t) or not 0 <= k <= grid.n_steps:
        raise SheatlabError(f"time {t} is not a grid time in [0, {grid.t_end}]")
    return int(k)


def _sample_indices(grid: GridSpec, spacing: float) -> np.ndarray:
    step = max(1, int(round(spacing / grid.dx)))
    return np.arange(0, grid.n_cells, step)


# --------------------------------------------------------------------- tails

def _tails_replicate(cfg, r):
    integ = Integrator(cfg.run_config(r)).run()
    return integ.values()[_sample_indices(cfg.grid, cfg.spacing)].copy()


def run_tails(cfg: ExperimentConfig) -> ExperimentResult:
    samples = np.concatenate(map_replicates(_tails_replicate, cfg))
    tails = est.estimate_tail(samples, cfg.lambdas, min_samples=1)
    rows = [(e.lam, e.p_hat, e.ci_lo, e.ci_hi, e.n) for e in tails]
    mode = "pam" if cfg.sigma.kind == "linear" else "bounded"
    summary = {
        "n_samples": int(samples.size),
        "points_per_replicate": int(samples.size // cfg.n_replicates),
        "sample_mean": float(samples.mean()),
        "sample_sd": float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
    }
    try:
        summary["tail_fit"] = est.fit_tail_exponent(tails, mode).as_dict()
    except SheatlabError as exc:
        summary["tail_fit"] = None
        summary["tail_fit_error"] = str(exc)
    return ExperimentResult("tails", "lambda", rows, summary)


# ---------------------------------------------------------------- supscaling

def _sup_replicate(cfg, r):
    field = Integrator(cfg.run_config(r)).run().field()
    return np.array([sup_over_radius(field, R) for R in cfg.radii])


def sup_mode(sigma: SigmaSpec) -> str:
    return {"linear": "pam", "logdecay": "general"}.get(sigma.kind, "bounded")


def run_supscaling(cfg: ExperimentConfig) -> ExperimentResult:
    sups = np.array(map_replicates(_sup_replicate, cfg))  # replicate x R
    mode = sup_mode(cfg.sigma)
    rows = []
    for i, R in enumerate(cfg.radii):
        m, lo, hi = est.mean_ci(sups[:, i])
        rows.append((R, m, lo, hi, sups.shape[0]))
    means = sups.mean(axis=0)
    summary = {
        "mode": mode,
        "mean_sup": means.tolist(),
        "strictly_increasing": bool(np.all(np.diff(means) > 0)),
    }
    if mode == "pam":
        summary["mean_log_sup"] = np.log(sups).mean(axis=0).tolist() if np.all(sups > 0) else None
    try:
        fit = est.fit_sup_scaling(cfg.radii, list(sups.T), mode)
        summary["sup_fit"] = fit.as_dict()
        summary["rejects_constant_95"] = bool(fit.exponent > 0 and fit.p_value < 0.05)
    except SheatlabError as exc:
        summary["sup_fit"] = None
        summary["sup_fit_error"] = str(exc)
    return ExperimentResult("supscaling", "R", rows, summary)


# ------------------------------------------------------------------- moments

def _moments_replicate(cfg, r):
    u = Integrator(cfg.run_config(r)).run().values()
    i0 = cfg.grid.index_of(0.0) if cfg.grid.x_min <= 0.0 < cfg.grid.x_max else 0
    pooled = np.array([np.mean(np.abs(u) ** k) for k in cfg.orders])
    return u[i0], pooled


def run_moments(cfg: ExperimentConfig) -> ExperimentResult:
    res = map_replicates(_moments_replicate, cfg)
    point = np.array([p for p, _ in res])
    pooled = np.array([q for _, q in res])
    moments = est.estimate_moments(point, cfg.orders, seed=cfg.master_seed, alpha=cfg.alpha)
    rows = [(k, m.value, m.ci_lo, m.ci_hi, m.n) for k, m in moments.items() if k != "exp_log"]
    n = point.size
    centered = point - point.mean()
    var = float(point.var(ddof=1))
    summary = {
        "n": n,
        "mean": float(point.mean()),
        "mean_se": float(point.std(ddof=1) / math.sqrt(n)) if n > 1 else None,
        "variance": var,
        "central_moment_4": float(np.mean(centered ** 4)),
        "skewness": float(stats.skew(point)) if n > 2 else None,
        "excess_kurtosis": float(stats.kurtosis(point)) if n > 3 else None,
        "skewness_se": math.sqrt(6.0 / n),
        "kurtosis_se": math.sqrt(24.0 / n),
        "pooled_moments": {},
    }
    for j, k in enumerate(cfg.orders):
        m, lo, hi = est.mean_ci(pooled[:, j])
        summary["pooled_moments"][str(k)] = {"value": m, "ci_lo": lo, "ci_hi": hi}
    if "exp_log" in moments:
        summary["exp_log_functional"] = {"alpha": cfg.alpha, "value": moments["exp_log"].value,
                                         "ci_lo": moments["exp_log"].ci_lo, "ci_hi": moments["exp_log"].ci_hi}
    g = cfg.grid
    if cfg.sigma.kind == "constant" and g.t_end > 0:
        summary["oracle"] = {
            str(k): constant_sigma_moments(cfg.sigma.eps0, g.kappa, g.t_end, k // 2)
            for k in cfg.orders if k % 2 == 0
        }
        summary["oracle_variance"] = cfg.sigma.eps0 ** 2 * math.sqrt(g.t_end / (math.pi * g.kappa))
    if cfg.sigma.kind == "linear" and g.t_end > 0:
        p = RenewalParams(g.kappa, cfg.sigma.c ** 2, g.t_end)
        summary["oracle"] = {"2": renewal_second_moment(p).value}
        summary["oracle_closed_form"] = {"2": float(renewal_closed_form(p))}
        even = [k for k in cfg.orders if k % 2 == 0 and k in moments]
        if len(even) >= 2:
            logm = [math.log(moments[k].value) for k in even]
            per_order = [lm / k for lm, k in zip(logm, even)]
            summary["log_moment_per_order"] = dict(zip(map(str, even), per_order))
            summary["per_order_increasing"] = bool(np.all(np.diff(per_order) > 0))
    return ExperimentResult("moments", "k", rows, summary)


# ------------------------------------------------------------------ coupling

def _coupling_replicate(cfg, r):
    g = cfg.grid
    out = {}
    for beta in cfg.betas:
        plan = make_block_plan(beta, g.t_end, g)
        integ = Integrator(cfg.run_config(r, plan), lanes=((None, False), (None, True))).run()
        idx = [g.index_of(plan.midpoint(j)) for j in plan.full_blocks()]
        u, U = integ.values(0)[idx], integ.values(1)[idx]
        out[beta] = (u - U, U.copy())
    return out


def run_coupling(cfg: ExperimentConfig) -> ExperimentResult:
    res = map_replicates(_coupling_replicate, cfg)
    rows, rms = [], []
    for beta in cfg.betas:
        d = np.concatenate([x[beta][0] for x in res])
        sq = d ** 2
        m = float(math.sqrt(sq.mean()))
        # delta-method interval on the RMS
        se = float(sq.std(ddof=1) / math.sqrt(sq.size)) / (2 * m) if m > 0 and sq.size > 1 else 0.0
        rows.append((beta, m, max(0.0, m - est.Z95 * se), m + est.Z95 * se, int(sq.size)))
        rms.append(m)
    summary = {"rms": dict(zip(map(str, cfg.betas), rms))}
    try:
        summary["coupling_fit"] = est.estimate_coupling_decay(cfg.betas, rms).as_dict()
    except SheatlabError as exc:
        summary["coupling_fit"] = None
        summary["coupling_fit_error"] = str(exc)
    beta_i = cfg.independence_beta if cfg.independence_beta is not None else cfg.betas[0]
    if beta_i in cfg.betas:
        mat = np.array([x[beta_i][1] for x in res])
        summary["independence"] = {"beta": beta_i, "n_blocks": int(mat.shape[1]),
                                   "n_replicates": int(mat.shape[0]),
                                   "threshold": 3.0 / math.sqrt(mat.shape[0])}
        try:
            summary["independence"]["max_abs_corr"] = est.independence_test(mat)
        except ValueError as exc:
            summary["independence"]["max_abs_corr"] = None
            summary["independence"]["error"] = str(exc)
    return ExperimentResult("coupling", "beta", rows, summary)


# ---------------------------------------------------------------- comparison

def _comparison_replicate(cfg, r):
    g = cfg.grid
    integ = Integrator(cfg.run_config(r), lanes=((cfg.u0_hi, False), (cfg.u0_lo, False)))
    st = OrderingStats()
    out = []
    for t in cfg.times:
        integ.advance_to(_steps_for(g, t), st)
        out.append((st.violations, st.points, st.min_lo))
    return out


def run_comparison(cfg: ExperimentConfig) -> ExperimentResult:
    res = np.array(map_replicates(_comparison_replicate, cfg))  # replicate x time x 3
    rows = []
    for i, t in enumerate(cfg.times):
        v = int(res[:, i, 0].sum())
        n = int(res[:, i, 1].sum())
        lo, hi = est.wilson_interval(v, n) if n else (0.0, 1.0)
        rows.append((t, v / n if n else 0.0, lo, hi, n))
    summary = {
        "violations": int(res[:, -1, 0].sum()),
        "points": int(res[:, -1, 1].sum()),
        "min_lower_solution": float(res[:, -1, 2].min()),
        "positive": bool(res[:, -1, 2].min() > 0),
        "slack": OrderingStats().slack,
    }
    return ExperimentResult("comparison", "t", rows, summary)


# ------------------------------------------------------------------ lyapunov

def _lyapunov_replicate(cfg, r):
    g = cfg.grid
    idx = _sample_indices(g, cfg.spacing)
    psi = est.bump_weights(g, 0.0, 1.0)
    integ = Integrator(cfg.run_config(r))
    point, spatial, moll = [], [], []
    for t in cfg.times:
        integ.advance_to(_steps_for(g, t))
        u = integ.values()
        point.append(u[idx].copy())
        spatial.append(u.mean())
        moll.append(est.mollified(u, psi))
    return np.array(point), np.array(spatial), np.array(moll)


def _slope_summary(slopes):
    slopes = np.asarray(slopes, dtype=float)
    n = slopes.size
    m = float(slopes.mean())
    se = float(slopes.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    q = float(stats.t.ppf(0.975, max(n - 1, 1)))
    return {"slope": m, "stderr": se, "ci_lo": m - q * se, "ci_hi": m + q * se, "n": n}


def run_lyapunov(cfg: ExperimentConfig) -> ExperimentResult:
    res = map_replicates(_lyapunov_replicate, cfg)
    times = np.asarray(cfg.times, dtype=float)
    point = np.array([p for p, _, _ in res])   # replicate x time x point
    spatial = np.array([s for _, s, _ in res])  # replicate x time
    moll = np.array([m for _, _, m in res])
    summary = {}

    # pointwise: one slope per positive trajectory, averaged within a replicate
    per_rep, skipped = [], 0
    for rep in point:
        slopes = []
        for j in range(rep.shape[1]):
            try:
                slopes.append(est.estimate_lyapunov(zip(times, rep[:, j])).slope)
            except est.NonPositive:
                skipped += 1
        if slopes:
            per_rep.append(np.mean(slopes))
    if len(per_rep) >= 2:
        summary["pointwise"] = _slope_summary(per_rep)
        summary["pointwise"]["negative_95"] = bool(summary["pointwise"]["ci_hi"] < 0)
    summary["pointwise_skipped_trajectories"] = skipped

    per_rep = []
    for rep in moll:
        try:
            per_rep.append(est.estimate_lyapunov(zip(times, rep)).slope)
        except est.NonPositive:
            pass
    if len(per_rep) >= 2:
        summary["mollified"] = _slope_summary(per_rep)

    # mean statistic: slope of log of the replicate average, batched for an interval
    n_groups = min(8, spatial.shape[0])
    groups = np.array_split(np.arange(spatial.shape[0]), n_groups)
    try:
        whole = est.estimate_lyapunov(zip(times, spatial.mean(axis=0)))
        batch = [est.estimate_lyapunov(zip(times, spatial[gi].mean(axis=0))).slope for gi in groups]
        summary["mean"] = _slope_summary(batch)
        summary["mean"]["slope_all"] = whole.slope
        summary["mean"]["contains_zero"] = bool(summary["mean"]["ci_lo"] <= 0 <= summary["mean"]["ci_hi"])
    except est.NonPositive as exc:
        summary["mean"] = {"error": str(exc)}

    if cfg.sigma.kind == "linear":
        c, k = cfg.sigma.c, cfg.grid.kappa
        summary["reference_rates"] = {"minus_c2_over_24kappa": -c * c / (24 * k),
                                      "minus_c4_over_24kappa": -c ** 4 / (24 * k)}
    rows = []
    for i, t in enumerate(cfg.times):
        if np.all(point[:, i, :] > 0):
            m, lo, hi = est.mean_ci(np.log(point[:, i, :]).mean(axis=1))
        else:
            m = lo = hi = float("nan")
        rows.append((t, m, lo, hi, point.shape[0]))
    return ExperimentResult("lyapunov", "t", rows, summary)


# -------------------------------------------------------------------- oracle

def run_oracle(cfg: ExperimentConfig) -> ExperimentResult:
    kappa = cfg.grid.kappa if cfg.grid is not None else 1.0
    t_end = cfg.grid.t_end if cfg.grid is not None else 1.0
    p = RenewalParams(kappa, cfg.coeff, t_end, cfg.n_steps)
    curve = renewal_second_moment(p)
    idx = np.unique(np.linspace(0, curve.f.size - 1, max(2, cfg.points)).round().astype(int))
    rows = [(float(curve.t[i]), float(curve.f[i])) for i in idx]
    summary = {
        "coeff": cfg.coeff,
        "kappa": kappa,
        "t_end": t_end,
        "rate": p.rate,
        "f_t_end": curve.value,
        "closed_form": float(renewal_closed_form(p)),
        "n_steps_used": curve.n_steps,
    }
    return ExperimentResult("oracle", "t", rows, summary)


RUNNERS = {
    "tails": run_tails,
    "supscaling": run_supscaling,
    "moments": run_moments,
    "coupling": run_coupling,
    "comparison": run_comparison,
    "lyapunov": run_lyapunov,
    "oracle": run_oracle,
}
