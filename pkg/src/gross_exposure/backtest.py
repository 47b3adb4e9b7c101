"""Rolling-window out-of-sample backtests.

At every rebalance date ``t`` the covariance is estimated from rows
``[t - window, t)``, a portfolio is chosen, and its weights are held fixed
over rows ``[t, t + rebalance)``. Realized returns are ``w' r`` with no drift
of weights inside the holding period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AllocationVector, ReturnPanel
from .covariance import estimate
from .lars import approx_risk_path
from .qp import solve, solve_gmv, solve_no_short

STRATEGIES = ("no_short", "exact_qp", "lars_approx", "gmv", "equal_weight")
ESTIMATORS = ("sample", "factor", "ewma")


class BacktestError(RuntimeError):
    """A rebalance step failed; ``date`` names the offending period."""

    def __init__(self, date: str, cause: Exception):
        super().__init__(f"rebalance at {date}: {cause}")
        self.date = date
        self.cause = cause


@dataclass(frozen=True)
class BacktestConfig:
    """Backtest protocol.

    Parameters
    ----------
    estimation_window : int
        Number of trailing periods used to estimate the covariance.
    rebalance_frequency : int
        Holding period in rows between rebalances.
    estimator : {"sample", "factor", "ewma"}
    strategy : {"no_short", "exact_qp", "lars_approx", "gmv", "equal_weight"}
    c : float
        Gross-exposure bound for ``exact_qp`` and ``lars_approx``.
    y_choice : str
        Tracked portfolio for ``lars_approx``: ``"no_short"`` or an asset id
        (for instance an index column in the panel).
    lam : float
        Decay for the ``ewma`` estimator.
    """

    estimation_window: int = 252
    rebalance_frequency: int = 21
    estimator: str = "sample"
    strategy: str = "no_short"
    c: float = 2.0
    y_choice: str = "no_short"
    lam: float = 0.97

    def __post_init__(self):
        if self.estimation_window < 2:
            raise ValueError("estimation_window must be at least 2")
        if self.rebalance_frequency < 1:
            raise ValueError("rebalance_frequency must be positive")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.c < 1:
            raise ValueError("c must be at least 1")

    @property
    def label(self) -> str:
        if self.strategy in ("exact_qp", "lars_approx"):
            return f"{self.strategy}(c={self.c:g})"
        return self.strategy


@dataclass(frozen=True)
class Rebalance:
    date: str
    allocation: AllocationVector
    max_weight: float
    min_weight: float
    n_long: int
    n_short: int


@dataclass(frozen=True)
class BacktestReport:
    """Per-rebalance allocations and aggregate realized statistics.

    ``mean_pct`` is the mean return times ``periods_per_year`` in percent,
    ``volatility_pct`` the standard deviation (divisor ``n - 1``) times
    ``sqrt(periods_per_year)`` in percent, and ``sharpe`` their ratio with
    no risk-free adjustment (NaN when the volatility is zero). Weight
    extremes and position counts are averaged over rebalances; counts are
    rounded to the nearest integer.
    """

    label: str
    per_rebalance: list[Rebalance]
    returns: np.ndarray
    dates: tuple[str, ...]
    periods_per_year: int
    mean_pct: float = field(init=False)
    volatility_pct: float = field(init=False)
    sharpe: float = field(init=False)

    def __post_init__(self):
        r, k = self.returns, self.periods_per_year
        mean = 100.0 * float(np.mean(r)) * k
        vol = 100.0 * float(np.std(r, ddof=1) * np.sqrt(k)) if r.size > 1 else 0.0
        # round-off on constant series
        if vol <= 1e-12 * max(1.0, abs(mean)):
            vol = 0.0
        object.__setattr__(self, "mean_pct", mean)
        object.__setattr__(self, "volatility_pct", vol)
        object.__setattr__(self, "sharpe", mean / vol if vol > 0 else float("nan"))

    def _avg(self, attr: str) -> float:
        return float(np.mean([getattr(x, attr) for x in self.per_rebalance]))

    def summary(self) -> dict:
        return {
            "strategy": self.label,
            "mean_pct": self.mean_pct,
            "std_pct": self.volatility_pct,
            "sharpe": self.sharpe,
            "max_weight": self._avg("max_weight"),
            "min_weight": self._avg("min_weight"),
            "n_long": int(round(self._avg("n_long"))),
            "n_short": int(round(self._avg("n_short"))),
        }

    def rebalance_rows(self) -> list[dict]:
        return [{"date": x.date, "max_weight": x.max_weight, "min_weight": x.min_weight,
                 "n_long": x.n_long, "n_short": x.n_short,
                 "gross_exposure": x.allocation.gross_exposure}
                for x in self.per_rebalance]


def _choose(window: ReturnPanel, config: BacktestConfig, factors: ReturnPanel | None,
            prev: AllocationVector | None = None):
    p = window.n_assets
    if config.strategy == "equal_weight":
        return AllocationVector.equal(p, window.asset_ids)
    sigma = estimate(config.estimator, window, factors, config.lam)
    # the previous holdings stay feasible and usually sit near the new optimum
    prev_w = None if prev is None else prev.weights
    if config.strategy == "no_short":
        return solve(sigma, 1.0, initial=prev_w).allocation
    if config.strategy == "exact_qp":
        return solve(sigma, config.c, initial=prev_w).allocation
    if config.strategy == "gmv":
        return solve_gmv(sigma).allocation
    if config.y_choice == "no_short":
        y = solve_no_short(sigma).allocation
    elif config.y_choice in window.asset_ids:
        y = window.asset_ids.index(config.y_choice)
    else:
        raise ValueError(f"y_choice {config.y_choice!r} is neither 'no_short' nor an asset id")
    return approx_risk_path(sigma, y, [config.c])[0].allocation


def rebalance_dates(n_periods: int, config: BacktestConfig) -> list[int]:
    return list(range(config.estimation_window, n_periods, config.rebalance_frequency))


def run(panel: ReturnPanel, config: BacktestConfig,
        factors: ReturnPanel | None = None) -> BacktestReport:
    """Roll the configured strategy through ``panel``.

    The weights held over ``[t, t + h)`` depend only on rows before ``t``.
    """
    w_len, h = config.estimation_window, config.rebalance_frequency
    T = panel.n_periods
    if T <= w_len + h:
        raise ValueError(f"panel has {T} periods; need more than window + rebalance = {w_len + h}")
    if config.estimator == "factor" and config.strategy != "equal_weight":
        if factors is None:
            raise ValueError("the factor estimator needs a factor panel aligned with the returns")
        if factors.n_periods != T:
            raise ValueError(f"factor panel has {factors.n_periods} periods, returns have {T}")
    rows, realized, alloc = [], [], None
    for t in rebalance_dates(T, config):
        win = panel.window(t - w_len, t)
        fwin = factors.window(t - w_len, t) if factors is not None else None
        try:
            alloc = _choose(win, config, fwin, alloc)
        except Exception as exc:
            raise BacktestError(panel.index[t], exc) from exc
        w = alloc.weights
        rows.append(Rebalance(panel.index[t], alloc, float(w.max()), float(w.min()),
                              alloc.n_long, alloc.n_short))
        realized.append(panel.returns[t:min(t + h, T)] @ w)
    returns = np.concatenate(realized)
    dates = panel.index[w_len:]
    return BacktestReport(config.label, rows, returns, dates, panel.periods_per_year)


def equal_weight_benchmark(panel: ReturnPanel, config: BacktestConfig) -> BacktestReport:
    """The same schedule holding ``1/p`` in every asset."""
    return run(panel, BacktestConfig(config.estimation_window, config.rebalance_frequency,
                                     "sample", "equal_weight"))
