"""Domain types and risk arithmetic shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ESTIMATOR_TAGS = ("sample", "factor", "ewma", "pairwise", "exogenous")
WEIGHT_SUM_TOL = 1e-8


class DimensionError(ValueError):
    """Raised when array shapes do not agree."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReturnPanel:
    """T x p matrix of per-period simple returns.

    Parameters
    ----------
    returns : array-like of shape (n_periods, n_assets)
        Simple returns as decimal fractions.
    asset_ids : sequence of str, optional
        Unique asset labels. Defaults to ``A0, A1, ...``.
    periods_per_year : int, default=252
        Annualization factor.
    index : sequence of str, optional
        Period labels (dates). Defaults to ``0, 1, ...``.
    """

    returns: np.ndarray
    asset_ids: tuple[str, ...] = ()
    periods_per_year: int = 252
    index: tuple[str, ...] = ()

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2:
            raise DimensionError("returns must be a 2-d array")
        n, p = r.shape
        if n < 2 or p < 1:
            raise ValueError(f"panel needs T >= 2 and p >= 1, got T={n}, p={p}")
        if not np.all(np.isfinite(r)):
            raise ValueError("panel contains missing or non-finite returns")
        ids = tuple(str(a) for a in self.asset_ids or ()) or tuple(f"A{i}" for i in range(p))
        if len(ids) != p:
            raise DimensionError(f"{len(ids)} asset ids for {p} columns")
        if len(set(ids)) != p:
            raise ValueError("asset ids must be unique")
        idx = tuple(str(t) for t in self.index) or tuple(str(t) for t in range(n))
        if len(idx) != n:
            raise DimensionError(f"{len(idx)} period labels for {n} rows")
        if int(self.periods_per_year) < 1:
            raise ValueError("periods_per_year must be a positive integer")
        object.__setattr__(self, "returns", _readonly(r))
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "periods_per_year", int(self.periods_per_year))

    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def window(self, start: int, stop: int) -> "ReturnPanel":
        """Rows ``start:stop`` as a new panel."""
        return ReturnPanel(
            self.returns[start:stop],
            self.asset_ids,
            self.periods_per_year,
            self.index[start:stop],
        )


@dataclass(frozen=True)
class CovarianceEstimate:
    """Symmetric p x p covariance estimate.

    The matrix is symmetrized as ``(M + M.T) / 2`` on construction. It is not
    required to be positive semi-definite.
    """

    matrix: np.ndarray
    estimator_tag: str = "exogenous"
    asset_ids: tuple[str, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"covariance must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("covariance contains non-finite entries")
        m = 0.5 * (m + m.T)
        if np.any(np.diag(m) < 0):
            raise ValueError("covariance has negative diagonal entries")
        if self.estimator_tag not in ESTIMATOR_TAGS:
            raise ValueError(f"unknown estimator tag {self.estimator_tag!r}")
        p = m.shape[0]
        ids = tuple(str(a) for a in self.asset_ids or ()) or tuple(f"A{i}" for i in range(p))
        if len(ids) != p:
            raise DimensionError(f"{len(ids)} asset ids for a {p}x{p} matrix")
        object.__setattr__(self, "matrix", _readonly(m))
        object.__setattr__(self, "asset_ids", ids)

    @property
    def n_assets(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self, rtol: float = 1e-8) -> bool:
        """Smallest eigenvalue >= -rtol * largest."""
        ev = np.linalg.eigvalsh(self.matrix)
        return bool(ev[0] >= -rtol * max(ev[-1], 0.0))


@dataclass(frozen=True)
class AllocationVector:
    """Portfolio weights summing to one.

    ``gross_exposure``, ``n_long`` and ``n_short`` are recomputed from the
    weights and cannot be passed in.
    """

    weights: np.ndarray
    asset_ids: tuple[str, ...] = ()
    gross_exposure: float = field(init=False)
    n_long: int = field(init=False)
    n_short: int = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a non-empty finite vector")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
        ids = tuple(str(a) for a in self.asset_ids or ()) or tuple(f"A{i}" for i in range(w.size))
        if len(ids) != w.size:
            raise DimensionError(f"{len(ids)} asset ids for {w.size} weights")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "gross_exposure", float(np.abs(w).sum()))
        object.__setattr__(self, "n_long", int(np.count_nonzero(w > 0)))
        object.__setattr__(self, "n_short", int(np.count_nonzero(w < 0)))

    @property
    def n_assets(self) -> int:
        return self.weights.size

    @property
    def long_exposure(self) -> float:
        return float(self.weights[self.weights > 0].sum())

    @property
    def short_exposure(self) -> float:
        """Total short position as a positive number."""
        return float(-self.weights[self.weights < 0].sum())

    @classmethod
    def normalized(cls, weights, asset_ids: Sequence[str] = ()) -> "AllocationVector":
        """Rescale ``weights`` to sum exactly to one."""
        w = np.asarray(weights, dtype=float).ravel()
        s = w.sum()
        if s == 0 or not np.isfinite(s):
            raise ValueError("cannot normalize weights with zero or non-finite sum")
        return cls(w / s, tuple(asset_ids))

    @classmethod
    def equal(cls, p: int, asset_ids: Sequence[str] = ()) -> "AllocationVector":
        return cls(np.full(p, 1.0 / p), tuple(asset_ids))


@dataclass(frozen=True)
class PortfolioRisk:
    variance: float
    raw_variance: float
    annualized_volatility: float


def _matrix(sigma) -> np.ndarray:
    if isinstance(sigma, CovarianceEstimate):
        return sigma.matrix
    m = np.asarray(sigma, dtype=float)
    return 0.5 * (m + m.T)


def _weights(w) -> np.ndarray:
    if isinstance(w, AllocationVector):
        return w.weights
    return np.asarray(w, dtype=float).ravel()


def portfolio_risk(w, sigma, periods_per_year: int = 252) -> PortfolioRisk:
    """Per-period variance ``w' S w`` and annualized volatility.

    ``raw_variance`` keeps the sign of the quadratic form, which can be
    negative for an indefinite estimate; ``variance`` is clamped at zero.
    """
    wv, m = _weights(w), _matrix(sigma)
    if m.shape != (wv.size, wv.size):
        raise DimensionError(f"{wv.size} weights against a {m.shape} covariance")
    raw = float(wv @ m @ wv)
    var = max(raw, 0.0)
    return PortfolioRisk(var, raw, float(np.sqrt(var * periods_per_year)))


def annualized_risk_pct(variance: float, periods_per_year: int = 252) -> float:
    """Annualized volatility in percent from a per-period variance."""
    return float(100.0 * np.sqrt(max(variance, 0.0) * periods_per_year))


def sup_norm_error(a, b) -> float:
    """Largest elementwise absolute difference between two matrices."""
    ma, mb = _matrix(a), _matrix(b)
    if ma.shape != mb.shape:
        raise DimensionError(f"shapes {ma.shape} and {mb.shape} differ")
    return float(np.max(np.abs(ma - mb))) if ma.size else 0.0


@dataclass(frozen=True)
class BoundCheck:
    """Outcome of the three risk-approximation inequalities.

    Slack is ``bound - |difference|``; a check passes when slack is
    non-negative (up to ``tol``).
    """

    actual_vs_oracle: bool
    actual_vs_empirical: bool
    oracle_vs_empirical: bool
    slack_actual_oracle: float
    slack_actual_empirical: float
    slack_oracle_empirical: float

    @property
    def all_pass(self) -> bool:
        return self.actual_vs_oracle and self.actual_vs_empirical and self.oracle_vs_empirical


def approximation_bounds(
    oracle_risk: float,
    actual_risk: float,
    empirical_risk: float,
    a_n: float,
    c: float,
    tol: float = 1e-12,
) -> BoundCheck:
    """Check the risk-approximation sandwich for gross-exposure bound ``c``.

    All risks are per-period variances (quadratic forms), ``a_n`` is the
    sup-norm covariance estimation error. Verifies

    - ``|actual - oracle| <= 2 a_n c^2``
    - ``|actual - empirical| <= a_n c^2``
    - ``|oracle - empirical| <= 3 a_n c^2``
    """
    if a_n < 0:
        raise ValueError("a_n must be non-negative")
    if c < 1:
        raise ValueError("c must be at least 1")
    unit = a_n * c * c
    s1 = 2 * unit - abs(actual_risk - oracle_risk)
    s2 = unit - abs(actual_risk - empirical_risk)
    s3 = 3 * unit - abs(oracle_risk - empirical_risk)
    return BoundCheck(s1 >= -tol, s2 >= -tol, s3 >= -tol, s1, s2, s3)
