"""LARS-LASSO solution paths for covariance-driven tracking regressions.

A target portfolio ``Y = wy' R`` is tracked by the predictors
``X_j = Y - R_j``. Minimizing ``var(Y - w' X)`` subject to ``||w||_1 <= d``
traces a piecewise-linear path in ``d``; each point maps back to a full
allocation with ``w_j`` on asset ``j`` and ``1 - 1'w`` on ``Y``, whose gross
exposure is at most ``d + |1 - 1'w|``.

Everything here needs only second moments, so the inputs are covariance
matrices rather than return data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone

from .core import AllocationVector, CovarianceEstimate, DimensionError, portfolio_risk
from .covariance import SampleCovariance
from .validation import NotPositiveSemiDefinite, as_covariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackingProblem:
    """Second moments of the tracking regression.

    ``predictors`` holds the asset index behind each column ``X_j = Y - R_j``;
    ``target`` is the weight vector defining ``Y``.
    """

    sigma_xx: np.ndarray
    sigma_xy: np.ndarray
    var_y: float
    predictors: np.ndarray
    target: np.ndarray
    labels: tuple[str, ...] = ()
    provenance: str = ""

    def __post_init__(self):
        xx = np.asarray(self.sigma_xx, dtype=float)
        xy = np.asarray(self.sigma_xy, dtype=float).ravel()
        if xx.shape != (xy.size, xy.size):
            raise DimensionError(f"sigma_xx {xx.shape} does not match sigma_xy {xy.shape}")
        if self.var_y < 0:
            raise ValueError("var_y must be non-negative")
        object.__setattr__(self, "sigma_xx", 0.5 * (xx + xx.T))
        object.__setattr__(self, "sigma_xy", xy)

    @property
    def n_predictors(self) -> int:
        return self.sigma_xy.size

    def residual_variance(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(self.var_y - 2.0 * self.sigma_xy @ w + w @ self.sigma_xx @ w)

    def assemble(self, w_star) -> np.ndarray:
        """Asset-space weights: ``w_j`` on asset ``j``, the rest on ``Y``."""
        w_star = np.asarray(w_star, dtype=float)
        full = (1.0 - w_star.sum()) * self.target
        full[self.predictors] += w_star
        return full


def transform_regression(sigma, y, labels=None) -> TrackingProblem:
    """Build the tracking regression for target ``y``.

    Parameters
    ----------
    sigma : CovarianceEstimate or array-like of shape (p, p)
    y : int or array-like of shape (p,) or AllocationVector
        Asset index or portfolio weights (summing to one) defining ``Y``.

    The asset carrying the largest weight in ``Y`` (lowest index on ties) is
    left out of the predictors: the full set of ``X_j`` satisfies
    ``sum_j wy_j X_j = 0`` and would be exactly collinear. Every asset stays
    reachable through ``Y`` itself.
    """
    sig = as_covariance(sigma)
    S = sig.matrix
    p = S.shape[0]
    if p < 2:
        raise ValueError("the tracking regression needs at least two assets")
    if isinstance(y, (int, np.integer)):
        if not 0 <= y < p:
            raise IndexError(f"asset index {y} out of range for {p} assets")
        wy = np.zeros(p)
        wy[y] = 1.0
        provenance = f"Y = asset {sig.asset_ids[y]}"
    else:
        wy = np.asarray(getattr(y, "weights", y), dtype=float).ravel()
        if wy.size != p:
            raise DimensionError(f"{wy.size} target weights for {p} assets")
        if abs(wy.sum() - 1.0) > 1e-8:
            raise ValueError("target weights must sum to one")
        provenance = "Y = portfolio"
    excluded = int(np.argmax(wy))
    J = np.array([j for j in range(p) if j != excluded])
    sy = S @ wy
    var_y = float(wy @ sy)
    xy = var_y - sy[J]
    xx = var_y - sy[J][:, None] - sy[J][None, :] + S[np.ix_(J, J)]
    names = tuple(labels) if labels is not None else tuple(sig.asset_ids[j] for j in J)
    return TrackingProblem(xx, xy, max(var_y, 0.0), J, wy, names, provenance)


@dataclass(frozen=True)
class Knot:
    d: float
    active: tuple[int, ...]
    w_star: np.ndarray
    implied_c: float
    empirical_variance: float
    max_corr: float
    event: str


@dataclass
class SolutionPath:
    """Knots of a LARS-LASSO path; the path is linear in ``d`` between knots.

    ``d`` is the L1 bound in the scale the path was computed in (original
    units unless ``standardized``).
    """

    knots: list[Knot]
    problem: TrackingProblem
    standardized: bool = False
    scales: np.ndarray | None = None
    skipped: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.knots)

    @property
    def d(self) -> np.ndarray:
        return np.array([k.d for k in self.knots])

    @property
    def implied_c(self) -> np.ndarray:
        return np.array([k.implied_c for k in self.knots])

    @property
    def empirical_variance(self) -> np.ndarray:
        return np.array([k.empirical_variance for k in self.knots])

    @property
    def coefs(self) -> np.ndarray:
        """Array of shape (n_knots, n_predictors)."""
        return np.vstack([k.w_star for k in self.knots])

    def w_at(self, d: float) -> np.ndarray:
        """Coefficients at bound ``d`` by linear interpolation between knots."""
        ds = self.d
        if d <= ds[0]:
            return self.knots[0].w_star.copy()
        if d >= ds[-1]:
            return self.knots[-1].w_star.copy()
        k = int(np.searchsorted(ds, d, side="right")) - 1
        t = (d - ds[k]) / (ds[k + 1] - ds[k])
        return (1 - t) * self.knots[k].w_star + t * self.knots[k + 1].w_star

    def implied_c_at(self, d: float) -> float:
        w = self.w_at(d)
        return implied_gross_exposure(w)

    def allocation_at(self, d: float) -> AllocationVector:
        full = self.problem.assemble(self.w_at(d))
        return AllocationVector(full / full.sum())

    def d_for_c(self, c: float, tol: float = 1e-12) -> float:
        """Largest ``d`` on the path whose implied gross exposure is at most ``c``.

        ``implied_c`` is non-decreasing along the path; inside a segment the
        crossing is located by bisection.
        """
        cs = self.implied_c
        if c < cs[0] - tol:
            raise ValueError(f"c = {c} is below the path start ({cs[0]:.6g})")
        if c >= cs[-1]:
            return float(self.d[-1])
        k = int(np.searchsorted(cs, c, side="right"))  # first knot with implied_c > c
        lo, hi = self.d[k - 1], self.d[k]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.implied_c_at(mid) <= c:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * max(1.0, hi):
                break
        return float(lo)


def implied_gross_exposure(w_star) -> float:
    """``||w||_1 + |1 - 1'w|``: gross exposure bound of the assembled allocation."""
    w_star = np.asarray(w_star, dtype=float)
    return float(np.abs(w_star).sum() + abs(1.0 - w_star.sum()))


def _chol_ok(M: np.ndarray, rtol: float = 1e-10) -> bool:
    if M.size == 0:
        return True
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    d = np.diag(L) ** 2
    return bool(d.min() > rtol * max(d.max(), np.abs(M).max()))


def lars_path(
    problem: TrackingProblem,
    max_d: float = np.inf,
    max_active: int | None = None,
    standardize: bool = False,
    psd_rtol: float = 1e-8,
) -> SolutionPath:
    """LARS with the LASSO modification on covariance inputs.

    Starting from ``w = 0`` the active set grows by the predictor whose
    covariance with the working residual ties the current maximum; active
    coefficients move along the direction that lowers all active absolute
    covariances at the same rate, and a coefficient that reaches zero leaves
    the active set. A knot is recorded at every entry and drop.

    Parameters
    ----------
    problem : TrackingProblem
    max_d : float
        Stop once the L1 norm of the coefficients reaches ``max_d``.
    max_active : int, optional
        Stop when this many predictors are active.
    standardize : bool, default=False
        Rescale predictors to unit variance first. The L1 bound then applies
        to the standardized coefficients; the reported ``w_star`` is always
        in original units.

    Raises
    ------
    NotPositiveSemiDefinite
        If ``sigma_xx`` has a materially negative eigenvalue.
    """
    xx, xy = problem.sigma_xx, problem.sigma_xy
    q = xy.size
    ev = np.linalg.eigvalsh(xx) if q else np.zeros(1)
    if ev[0] < -psd_rtol * max(ev[-1], 0.0):
        raise NotPositiveSemiDefinite(
            f"sigma_xx is not positive semi-definite (min eigenvalue {ev[0]:.3g})")
    max_active = q if max_active is None else int(max_active)

    diag = np.diag(xx).copy()
    usable = diag > 1e-14 * max(diag.max(initial=0.0), np.finfo(float).tiny)
    if standardize:
        scales = np.where(usable, np.sqrt(np.where(usable, diag, 1.0)), 1.0)
    else:
        scales = np.ones(q)
    G = xx / np.outer(scales, scales)
    b = xy / scales
    ignored = ~usable

    def record(beta, active, lam, event):
        w = beta / scales
        var = problem.var_y - 2.0 * xy @ w + w @ xx @ w
        return Knot(float(np.abs(beta).sum()), tuple(sorted(active)), w,
                    implied_gross_exposure(w), float(max(var, 0.0)), float(lam), event)

    beta = np.zeros(q)
    corr = b.copy()
    cand = np.flatnonzero(~ignored)
    lam = float(np.abs(corr[cand]).max()) if cand.size else 0.0
    knots = [record(beta, [], lam, "start")]
    skipped: list[int] = []
    active: list[int] = []
    if lam <= 0 or max_d <= 0:
        return SolutionPath(knots, problem, standardize, scales, skipped)

    tie_tol = 1e-10
    just_dropped: set[int] = set()
    scale_corr = lam

    def admit(candidates):
        for j in sorted(candidates):
            trial = active + [j]
            if _chol_ok(G[np.ix_(trial, trial)]):
                active.append(j)
            else:
                ignored[j] = True
                skipped.append(j)
                logger.info("predictor %d is collinear with the active set; skipped", j)

    admit(np.flatnonzero((np.abs(corr) >= lam * (1 - tie_tol)) & ~ignored))

    for _ in range(8 * q + 10):
        if not active or lam <= tie_tol * scale_corr or len(active) > max_active:
            break
        A = np.array(active)
        s = np.sign(corr[A])
        # coefficients at zero (just entered) take the sign of their covariance
        delta = np.linalg.solve(G[np.ix_(A, A)], s)
        a = G[:, A] @ delta
        d_now = np.abs(beta).sum()
        d_rate = s @ delta

        gamma, event, who = lam, "end", []
        inactive = np.flatnonzero(~ignored)
        inactive = inactive[~np.isin(inactive, A)]
        for j in inactive:
            # a predictor that just left sits exactly on the boundary; only its
            # re-entry from the other side counts
            floor = 1e-9 * lam if j in just_dropped else 1e-14 * lam
            for num, den in ((lam - corr[j], 1.0 - a[j]), (lam + corr[j], 1.0 + a[j])):
                if den > 1e-14:
                    g = num / den
                    if floor < g:
                        if g < gamma * (1 - tie_tol):
                            gamma, event, who = g, "entry", [j]
                        elif event == "entry" and abs(g - gamma) <= tie_tol * gamma:
                            who.append(j)
        for idx, j in enumerate(A):
            if delta[idx] * beta[j] < 0:  # moving toward zero
                g = -beta[j] / delta[idx]
                if g < gamma * (1 - tie_tol):
                    gamma, event, who = g, "drop", [j]
        if np.isfinite(max_d) and d_rate > 0:
            g = (max_d - d_now) / d_rate
            if g < gamma * (1 - tie_tol):
                gamma, event, who = g, "max_d", []

        beta[A] += gamma * delta
        lam = lam - gamma
        corr = b - G @ beta
        just_dropped = set()
        if event == "drop":
            for j in who:
                beta[j] = 0.0
                active.remove(j)
            just_dropped = set(who)
        knots.append(record(beta, active, lam, event))
        if event == "entry":
            if len(active) >= max_active:
                break
            admit(who)
        elif event in ("end", "max_d"):
            break
    return SolutionPath(knots, problem, standardize, scales, skipped)


@dataclass(frozen=True)
class ApproxPoint:
    c: float
    allocation: AllocationVector
    variance: float
    d: float


def approx_risk_path(
    sigma,
    y,
    c_grid=None,
    max_d: float = np.inf,
    standardize: bool = False,
) -> list[ApproxPoint]:
    """Approximate solution path of the gross-exposure problem via LARS.

    Without ``c_grid`` one point per knot is returned, keeping the lowest
    variance when several knots share the same implied ``c``. With ``c_grid``
    each ``c`` is matched to the largest ``d`` whose implied gross exposure
    does not exceed it. Output is sorted by ``c``.
    """
    sig = as_covariance(sigma)
    problem = transform_regression(sig, y)
    if c_grid is not None and len(c_grid):
        # implied c is at least d, so the path is not needed beyond max(c)
        max_d = min(max_d, max(float(x) for x in c_grid))
    path = lars_path(problem, max_d=max_d, standardize=standardize)
    ids = sig.asset_ids
    out: list[ApproxPoint] = []
    if c_grid is None:
        best: dict[float, ApproxPoint] = {}
        for k in path.knots:
            full = problem.assemble(k.w_star)
            alloc = AllocationVector(full / full.sum(), ids)
            var = portfolio_risk(alloc, sig).raw_variance
            key = round(k.implied_c, 12)
            if key not in best or var < best[key].variance:
                best[key] = ApproxPoint(k.implied_c, alloc, var, k.d)
        out = [best[key] for key in sorted(best)]
        # a smaller-c portfolio is feasible for every larger c
        for i in range(1, len(out)):
            if out[i].variance > out[i - 1].variance:
                prev = out[i - 1]
                out[i] = ApproxPoint(out[i].c, prev.allocation, prev.variance, prev.d)
        return out
    for c in sorted(float(x) for x in c_grid):
        d = path.d_for_c(c)
        full = problem.assemble(path.w_at(d))
        alloc = AllocationVector(full / full.sum(), ids)
        out.append(ApproxPoint(c, alloc, portfolio_risk(alloc, sig).raw_variance, d))
    return out


# --------------------------------------------------------------------------
# estimator API


class LarsTracker(BaseEstimator):
    """Fit the LARS-LASSO tracking path for a target portfolio.

    Parameters
    ----------
    target : "no_short", "equal" or int or array-like, default="no_short"
        Portfolio to track/improve: the no-short-sale minimum-variance
        portfolio of the fitted covariance, the equal-weight portfolio, an
        asset index, or explicit weights.
    covariance_estimator : estimator, optional
        Defaults to :class:`~gross_exposure.covariance.SampleCovariance`.
    max_d : float, default=inf
    standardize : bool, default=False

    Attributes
    ----------
    path_ : SolutionPath
    target_weights_ : ndarray of shape (n_assets,)
    """

    def __init__(self, target="no_short", covariance_estimator=None, max_d=np.inf,
                 standardize=False):
        self.target = target
        self.covariance_estimator = covariance_estimator
        self.max_d = max_d
        self.standardize = standardize

    def _fit_covariance(self, X, y):
        est = clone(self.covariance_estimator) if self.covariance_estimator is not None \
            else SampleCovariance()
        est.fit(X, y)
        self.covariance_estimator_ = est
        self.covariance_ = as_covariance(est.covariance_)
        return self.covariance_

    def _target(self, sigma: CovarianceEstimate):
        if isinstance(self.target, str):
            if self.target == "no_short":
                from .qp import solve_no_short
                return np.array(solve_no_short(sigma).weights)
            if self.target == "equal":
                return np.full(sigma.n_assets, 1.0 / sigma.n_assets)
            raise ValueError(f"unknown target {self.target!r}")
        if isinstance(self.target, (int, np.integer)):
            w = np.zeros(sigma.n_assets)
            w[self.target] = 1.0
            return w
        return np.asarray(self.target, dtype=float)

    def fit(self, X, y=None):
        sigma = self._fit_covariance(X, y)
        self.target_weights_ = self._target(sigma)
        self.problem_ = transform_regression(sigma, self.target_weights_)
        self.path_ = lars_path(self.problem_, self.max_d, standardize=self.standardize)
        return self

    def weights_at(self, d: float) -> np.ndarray:
        return np.array(self.path_.allocation_at(d).weights)

    def predict(self, X, d: float | None = None):
        """Returns of the assembled portfolio at bound ``d`` (path end if None)."""
        d = self.path_.d[-1] if d is None else d
        return np.asarray(X, dtype=float) @ self.weights_at(d)


class ApproxGrossExposurePortfolio(LarsTracker):
    """Approximate gross-exposure constrained minimum-variance allocation.

    Tracks ``target`` (by default the no-short-sale optimum) and keeps the
    largest path point with implied gross exposure at most ``c``.
    """

    def __init__(self, c: float = 2.0, target="no_short", covariance_estimator=None,
                 standardize=False):
        super().__init__(target=target, covariance_estimator=covariance_estimator,
                         standardize=standardize)
        self.c = c

    def fit(self, X, y=None):
        super().fit(X, y)
        d = self.path_.d_for_c(self.c)
        self.d_ = d
        self.allocation_ = self.path_.allocation_at(d)
        self.weights_ = np.array(self.allocation_.weights)
        self.variance_ = portfolio_risk(self.allocation_, self.covariance_).raw_variance
        return self

    def predict(self, X, d=None):
        return np.asarray(X, dtype=float) @ self.weights_
