"""Risk experiments: oracle, actual and empirical risk across exposure bounds.

For a true covariance ``S`` and an estimate ``S_hat``:

- *oracle* risk is the optimum of the exposure-constrained problem on ``S``;
- *actual* risk is the risk under ``S`` of the portfolio optimized on ``S_hat``;
- *empirical* risk is the risk of that same portfolio under ``S_hat``.

Risks are reported as annualized volatility in percent; the approximation
bounds are checked on the raw per-period variances.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .core import (AllocationVector, BoundCheck, CovarianceEstimate, annualized_risk_pct,
                   approximation_bounds, portfolio_risk, sup_norm_error)
from .covariance import estimate, sample_covariance
from .lars import approx_risk_path, lars_path, transform_regression
from .qp import solve_no_short, solve_path
from .simulation import FactorSimConfig, draw_panel, draw_universe
from .validation import as_covariance, check_same_assets

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
DEFAULT_D_GRID = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
SOLVERS = ("exact", "lars")


def n_threads(default: int = 1) -> int:
    """Worker cap from the ``GE_THREADS`` environment variable."""
    raw = os.environ.get("GE_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"GE_THREADS must be a positive integer, got {raw!r}") from None


@dataclass(frozen=True)
class RiskTriple:
    c: float
    oracle_risk: float
    actual_risk: float
    empirical_risk: float
    oracle_var: float
    actual_var: float
    empirical_var: float
    a_n: float
    bounds: BoundCheck
    allocation: AllocationVector

    def as_row(self) -> dict:
        b = self.bounds
        return {
            "c": self.c, "oracle": self.oracle_risk, "actual": self.actual_risk,
            "empirical": self.empirical_risk, "a_n": self.a_n,
            "slack_actual_oracle": b.slack_actual_oracle,
            "slack_actual_empirical": b.slack_actual_empirical,
            "slack_oracle_empirical": b.slack_oracle_empirical,
            "bounds_ok": int(b.all_pass),
        }


def _check_grid(c_grid) -> list[float]:
    grid = [float(c) for c in c_grid]
    if not grid:
        raise ValueError("c grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("c grid must be sorted ascending")
    if grid[0] < 1:
        raise ValueError("every c must be at least 1")
    return grid


def risk_sweep(true_sigma, est_sigma, c_grid=DEFAULT_C_GRID, solver: str = "exact",
               periods_per_year: int = 252) -> list[RiskTriple]:
    """Oracle, actual and empirical risk for every ``c`` in ``c_grid``.

    Parameters
    ----------
    true_sigma, est_sigma : CovarianceEstimate or array-like
        True and estimated covariance of the same assets.
    c_grid : sequence of float
        Ascending exposure bounds, all at least 1.
    solver : {"exact", "lars"}
        How the portfolio is chosen on ``est_sigma``: the active-set QP or
        the LARS approximate path started at the no-short-sale portfolio.
        The oracle always uses the exact solver.
    """
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}, got {solver!r}")
    true, est = as_covariance(true_sigma), as_covariance(est_sigma)
    check_same_assets(true.n_assets, est.n_assets, "true and estimated covariance")
    grid = _check_grid(c_grid)
    a_n = sup_norm_error(est, true)
    oracle = solve_path(true, grid)
    if solver == "exact":
        chosen = [r.allocation for r in solve_path(est, grid)]
    else:
        y = solve_no_short(est).allocation
        chosen = [pt.allocation for pt in approx_risk_path(est, y, grid)]
    out = []
    for c, orc, w in zip(grid, oracle, chosen):
        ov = orc.variance
        av = portfolio_risk(w, true).raw_variance
        ev = portfolio_risk(w, est).raw_variance
        out.append(RiskTriple(
            c=c,
            oracle_risk=annualized_risk_pct(ov, periods_per_year),
            actual_risk=annualized_risk_pct(av, periods_per_year),
            empirical_risk=annualized_risk_pct(ev, periods_per_year),
            oracle_var=ov, actual_var=av, empirical_var=ev, a_n=a_n,
            bounds=approximation_bounds(ov, av, ev, a_n, c, tol=1e-10 * max(abs(ov), 1e-300)),
            allocation=w,
        ))
    return out


@dataclass(frozen=True)
class ReplicationResult:
    """Per-replicate rows and per-(estimator, c) quantile summaries."""

    rows: list[dict]
    summary: list[dict]
    true_sigma: CovarianceEstimate

    def column(self, estimator: str, c: float, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows
                         if r["estimator"] == estimator and r["c"] == c])


def _one_replicate(universe, config, rep, c_grid, estimators, solver):
    panel, factors = draw_panel(universe, config, rep, return_factors=True)
    rows = []
    for name in estimators:
        est = estimate(name, panel, factors)
        for t in risk_sweep(universe.true_sigma, est, c_grid, solver, config.periods_per_year):
            rows.append({"replicate": rep, "estimator": name, **t.as_row()})
    return rows


def replicate(config: FactorSimConfig, n_reps: int = 101, c_grid=DEFAULT_C_GRID,
              estimators: Sequence[str] = ("sample", "factor"), solver: str = "exact",
              workers: int | None = None) -> ReplicationResult:
    """Monte Carlo risk sweeps on a fixed universe with fresh panels.

    Replicate ``k`` uses the ``k``-th factor and noise streams of the
    configuration seed, so results do not depend on ``workers``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    grid = _check_grid(c_grid)
    universe = draw_universe(config)
    workers = n_threads() if workers is None else workers
    reps = range(n_reps)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(
                lambda k: _one_replicate(universe, config, k, grid, estimators, solver), reps))
    else:
        chunks = [_one_replicate(universe, config, k, grid, estimators, solver) for k in reps]
    rows = [r for chunk in chunks for r in chunk]
    summary = []
    for name in estimators:
        for c in grid:
            sel = [r for r in rows if r["estimator"] == name and r["c"] == c]
            actual = np.array([r["actual"] for r in sel])
            q10, q50, q90 = np.quantile(actual, [0.1, 0.5, 0.9])
            summary.append({
                "estimator": name, "c": c, "oracle": sel[0]["oracle"],
                "actual_q10": float(q10), "actual_q50": float(q50), "actual_q90": float(q90),
                "empirical_median": float(np.median([r["empirical"] for r in sel])),
                "bound_violations": int(sum(1 - r["bounds_ok"] for r in sel)),
            })
    return ReplicationResult(rows, summary, universe.true_sigma)


@dataclass(frozen=True)
class ImprovementRow:
    d: float
    n_modified: int
    short_pct: float
    implied_c: float
    empirical_risk: float
    actual_risk: float | None
    allocation: AllocationVector

    def as_row(self) -> dict:
        return {"d": self.d, "n_modified": self.n_modified, "short_pct": self.short_pct,
                "implied_c": self.implied_c, "empirical": self.empirical_risk,
                "actual": "" if self.actual_risk is None else self.actual_risk}


def improve_portfolio(panel, base, true_sigma=None, d_grid=DEFAULT_D_GRID,
                      sigma=None) -> list[ImprovementRow]:
    """Modify a base portfolio along the LARS tracking path.

    ``Y`` is the base portfolio and the predictors are ``Y - R_j``; at each
    ``d`` the row reports how many weights were changed, the total short
    position of the resulting portfolio in percent, and its risks.
    ``sigma`` overrides the sample covariance of ``panel``.
    """
    est = sample_covariance(panel) if sigma is None else as_covariance(sigma)
    base = base if isinstance(base, AllocationVector) else AllocationVector(np.asarray(base))
    check_same_assets(base.n_assets, est.n_assets, "base portfolio and covariance")
    true = None if true_sigma is None else as_covariance(true_sigma)
    ppy = getattr(panel, "periods_per_year", 252)
    grid = sorted(float(d) for d in d_grid)
    problem = transform_regression(est, base.weights)
    path = lars_path(problem, max_d=grid[-1] if grid else 0.0)
    rows = []
    for d in grid:
        w_star = path.w_at(d)
        full = problem.assemble(w_star)
        alloc = AllocationVector(full / full.sum(), est.asset_ids)
        rows.append(ImprovementRow(
            d=d,
            n_modified=int(np.count_nonzero(w_star)),
            short_pct=abs(100.0 * alloc.short_exposure),
            implied_c=path.implied_c_at(d),
            empirical_risk=annualized_risk_pct(portfolio_risk(alloc, est).raw_variance, ppy),
            actual_risk=None if true is None else
            annualized_risk_pct(portfolio_risk(alloc, true).raw_variance, ppy),
            allocation=alloc,
        ))
    for prev, cur in zip(rows, rows[1:]):
        if cur.n_modified < prev.n_modified:
            logger.info("modified count fell from %d to %d between d=%g and d=%g",
                        prev.n_modified, cur.n_modified, prev.d, cur.d)
    return rows


@dataclass(frozen=True)
class ConvergenceResult:
    """Median sup-norm error per (n, p) and its fit on ``sqrt(log p / n)``."""

    n: np.ndarray
    p: np.ndarray
    rate: np.ndarray
    median_error: np.ndarray
    slope: float
    intercept: float
    r_squared: float


def convergence_study(n_grid=(125, 250, 500, 1000), p_grid=(50, 100, 200), n_reps: int = 20,
                      seed: int = 1) -> ConvergenceResult:
    """Regress the median ``max |S_hat - S|`` on ``sqrt(log p / n)``.

    One universe per ``p`` is drawn and held fixed; each replicate draws a
    fresh panel of length ``n`` and uses the sample covariance.
    """
    ns, ps, med = [], [], []
    for p in p_grid:
        for n in n_grid:
            cfg = FactorSimConfig(p=p, n=n, seed=seed)
            uni = draw_universe(cfg)
            errs = [sup_norm_error(sample_covariance(draw_panel(uni, cfg, k)), uni.true_sigma)
                    for k in range(n_reps)]
            ns.append(n)
            ps.append(p)
            med.append(float(np.median(errs)))
    ns, ps, med = np.array(ns), np.array(ps), np.array(med)
    rate = np.sqrt(np.log(ps) / ns)
    fit = stats.linregress(rate, med)
    return ConvergenceResult(ns, ps, rate, med, float(fit.slope), float(fit.intercept),
                             float(fit.rvalue**2))
