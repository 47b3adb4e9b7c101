"""Covariance estimators operating on return panels.

Each estimator is available as a plain function returning a
:class:`~gross_exposure.core.CovarianceEstimate` and as a scikit-learn style
estimator exposing ``covariance_`` after ``fit``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from .core import CovarianceEstimate, DimensionError, ReturnPanel
from .validation import as_panel, check_returns

logger = logging.getLogger(__name__)


def sample_covariance(panel: ReturnPanel) -> CovarianceEstimate:
    """Sample covariance with divisor ``n``: ``(1/n) sum R_t R_t' - Rbar Rbar'``."""
    r = panel.returns
    n = r.shape[0]
    if n < 2:
        raise ValueError("sample covariance needs at least 2 periods")
    centered = r - r.mean(axis=0)
    s = centered.T @ centered / n
    return CovarianceEstimate(s, "sample", panel.asset_ids)


def ewma_covariance(panel: ReturnPanel, lam: float = 0.97) -> CovarianceEstimate:
    """RiskMetrics exponentially weighted covariance (zero-mean convention).

    Initialized at ``R_1 R_1'`` and updated as
    ``S_t = lam * S_{t-1} + (1 - lam) * R_t R_t'``.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    r = panel.returns
    t = r.shape[0]
    # closed form of the recursion: weight lam^(T-1) on R_1, (1-lam) lam^(T-k) on R_k
    w = (1.0 - lam) * lam ** np.arange(t - 1, -1, -1, dtype=float)
    w[0] = lam ** (t - 1)
    s = (r * w[:, None]).T @ r
    return CovarianceEstimate(s, "ewma", panel.asset_ids)


def population_variance(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean((x - x.mean()) ** 2))


def pairwise_covariance(
    panel: ReturnPanel,
    var_estimator: Callable[[np.ndarray], float] = population_variance,
) -> CovarianceEstimate:
    """Assemble a covariance from univariate variances of sums and differences.

    ``cov_ij = [var(R_i + R_j) - var(R_i - R_j)] / 4`` off the diagonal and
    ``var(R_i)`` on it. The result need not be positive semi-definite.
    """
    r = panel.returns
    p = r.shape[1]
    s = np.empty((p, p))
    for i in range(p):
        s[i, i] = var_estimator(r[:, i])
        for j in range(i + 1, p):
            v = (var_estimator(r[:, i] + r[:, j]) - var_estimator(r[:, i] - r[:, j])) / 4.0
            s[i, j] = s[j, i] = v
    return CovarianceEstimate(s, "pairwise", panel.asset_ids)


@dataclass(frozen=True)
class FactorModelFit:
    """Per-asset OLS fit of returns on observed factors."""

    loadings: np.ndarray
    factor_cov: np.ndarray
    idio_var: np.ndarray
    factor_ids: tuple[str, ...]
    intercepts: np.ndarray
    n_clamped: int = 0

    def implied_covariance(self) -> np.ndarray:
        b = self.loadings
        return b @ self.factor_cov @ b.T + np.diag(self.idio_var)


def fit_factor_model(panel: ReturnPanel, factors: ReturnPanel) -> FactorModelFit:
    """Regress every asset on the factors (with intercept) by least squares.

    Residual variances use divisor ``T - k - 1``; negative values from
    round-off are clamped to zero and counted in ``n_clamped``. The factor
    covariance uses the same divisor-``n`` convention as
    :func:`sample_covariance`.
    """
    r, f = panel.returns, factors.returns
    t, k = f.shape
    if r.shape[0] != t:
        raise DimensionError(f"panel has {r.shape[0]} periods, factors have {t}")
    if k + 1 >= t:
        raise ValueError(f"need more periods than factors + 1 (T={t}, k={k})")
    design = np.column_stack([np.ones(t), f])
    if np.linalg.matrix_rank(design) < k + 1:
        raise np.linalg.LinAlgError("factor panel is rank deficient")
    coef, *_ = np.linalg.lstsq(design, r, rcond=None)
    resid = r - design @ coef
    idio = np.sum(resid**2, axis=0) / (t - k - 1)
    neg = idio < 0
    if np.any(neg):
        logger.warning("clamped %d negative idiosyncratic variances", int(neg.sum()))
        idio = np.where(neg, 0.0, idio)
    fc = f - f.mean(axis=0)
    return FactorModelFit(
        loadings=coef[1:].T.copy(),
        factor_cov=fc.T @ fc / t,
        idio_var=idio,
        factor_ids=factors.asset_ids,
        intercepts=coef[0].copy(),
        n_clamped=int(neg.sum()),
    )


def factor_covariance(
    panel: ReturnPanel, factors: ReturnPanel
) -> tuple[FactorModelFit, CovarianceEstimate]:
    """Factor-model covariance ``B cov(f) B' + diag(idio_var)``."""
    fit = fit_factor_model(panel, factors)
    return fit, CovarianceEstimate(fit.implied_covariance(), "factor", panel.asset_ids)


# --------------------------------------------------------------------------
# scikit-learn style wrappers


class _BaseCovariance(BaseEstimator):
    tag = "exogenous"

    def _finish(self, est: CovarianceEstimate):
        self.estimate_ = est
        self.covariance_ = np.array(est.matrix)
        self.n_features_in_ = est.n_assets
        return self

    def fit(self, X, y=None):
        raise NotImplementedError

    def score(self, X, y=None) -> float:
        """Negative sup-norm distance to the covariance of ``X``."""
        other = sample_covariance(as_panel(X))
        return -float(np.max(np.abs(other.matrix - self.covariance_)))


class SampleCovariance(_BaseCovariance):
    """Sample covariance (divisor ``n``) of the last ``window_size`` rows.

    Parameters
    ----------
    window_size : int, optional
        Use only the trailing ``window_size`` observations.
    """

    def __init__(self, window_size: int | None = None):
        self.window_size = window_size

    def fit(self, X, y=None):
        panel = as_panel(X)
        if self.window_size is not None:
            panel = panel.window(panel.n_periods - self.window_size, panel.n_periods)
        return self._finish(sample_covariance(panel))


class EWMACovariance(_BaseCovariance):
    """RiskMetrics covariance with decay ``lam``."""

    def __init__(self, lam: float = 0.97, window_size: int | None = None):
        self.lam = lam
        self.window_size = window_size

    def fit(self, X, y=None):
        panel = as_panel(X)
        if self.window_size is not None:
            panel = panel.window(panel.n_periods - self.window_size, panel.n_periods)
        return self._finish(ewma_covariance(panel, self.lam))


class FactorCovariance(_BaseCovariance):
    """Covariance implied by an OLS fit on observed factors.

    ``y`` passed to ``fit`` holds the factor returns aligned with ``X``.
    """

    def __init__(self, window_size: int | None = None):
        self.window_size = window_size

    def fit(self, X, y=None):
        if y is None:
            raise ValueError("FactorCovariance.fit requires factor returns as y")
        panel, factors = as_panel(X), as_panel(y)
        if self.window_size is not None:
            t = panel.n_periods
            panel = panel.window(t - self.window_size, t)
            factors = factors.window(t - self.window_size, t)
        self.fit_, est = factor_covariance(panel, factors)
        return self._finish(est)


class PairwiseCovariance(_BaseCovariance):
    """Covariance built pair by pair from a univariate variance estimator."""

    def __init__(self, var_estimator: Callable[[np.ndarray], float] = population_variance):
        self.var_estimator = var_estimator

    def fit(self, X, y=None):
        return self._finish(pairwise_covariance(as_panel(X), self.var_estimator))


ESTIMATORS = {
    "sample": SampleCovariance,
    "ewma": EWMACovariance,
    "factor": FactorCovariance,
    "pairwise": PairwiseCovariance,
}


def estimate(name: str, panel: ReturnPanel, factors: ReturnPanel | None = None,
             lam: float = 0.97) -> CovarianceEstimate:
    """Dispatch to an estimator by name."""
    check_returns(panel.returns)
    if name == "sample":
        return sample_covariance(panel)
    if name == "ewma":
        return ewma_covariance(panel, lam)
    if name == "pairwise":
        return pairwise_covariance(panel)
    if name == "factor":
        if factors is None:
            raise ValueError("the factor estimator needs a factor panel")
        return factor_covariance(panel, factors)[1]
    raise ValueError(f"unknown estimator {name!r}")
