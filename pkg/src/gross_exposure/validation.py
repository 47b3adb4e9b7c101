"""Input coercion and validation helpers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .core import AllocationVector, CovarianceEstimate, DimensionError, ReturnPanel


def check_returns(X) -> np.ndarray:
    """Finite 2-d float array with at least two rows."""
    arr = check_array(X, dtype=float, ensure_2d=True, ensure_min_samples=2,
                      ensure_all_finite=True)
    return arr


def as_panel(X, periods_per_year: int = 252) -> ReturnPanel:
    """Coerce a panel, DataFrame or array to :class:`ReturnPanel`."""
    if isinstance(X, ReturnPanel):
        return X
    columns = getattr(X, "columns", None)
    index = getattr(X, "index", None)
    arr = check_returns(X)
    ids = tuple(str(c) for c in columns) if columns is not None else ()
    idx = tuple(str(i) for i in index) if index is not None else ()
    return ReturnPanel(arr, ids, periods_per_year, idx)


def as_covariance(sigma, asset_ids=()) -> CovarianceEstimate:
    if isinstance(sigma, CovarianceEstimate):
        return sigma
    m = np.asarray(sigma, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    return CovarianceEstimate(m, "exogenous", tuple(asset_ids))


def as_allocation(w) -> AllocationVector:
    if isinstance(w, AllocationVector):
        return w
    return AllocationVector(np.asarray(w, dtype=float))


class NotPositiveSemiDefinite(ValueError):
    """A covariance has a materially negative eigenvalue."""


def check_psd(sigma: CovarianceEstimate, rtol: float = 1e-8) -> None:
    """Raise if the smallest eigenvalue is below ``-rtol * largest``."""
    if not sigma.is_psd(rtol):
        raise NotPositiveSemiDefinite(
            f"covariance is not positive semi-definite "
            f"(smallest eigenvalue {sigma.min_eigenvalue():.3g})"
        )


def check_same_assets(n: int, m: int, what: str = "inputs") -> None:
    if n != m:
        raise DimensionError(f"{what} disagree on the number of assets ({n} vs {m})")
