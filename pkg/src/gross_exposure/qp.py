"""Exact gross-exposure constrained minimum-variance portfolios.

Solves::

    minimize    w' S w
    subject to  1'w = 1,  ||w||_1 <= c,  A w = a

with a primal active-set method. The L1 ball is handled through the usual
lifting ``w = u - v``, ``u, v >= 0``, ``1'(u + v) <= c``; because a variable
never needs both halves free at once, the working set is stored as one sign
state per asset (zero, long, short) plus a flag for the budget row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import linprog
from sklearn.base import BaseEstimator, clone

from .core import AllocationVector, CovarianceEstimate, portfolio_risk
from .covariance import SampleCovariance
from .validation import as_covariance, check_psd

logger = logging.getLogger(__name__)

NO_SHORT_ATOL = 1e-12


class InfeasibleProblem(ValueError):
    """The constraint set is empty."""


class IterationLimit(RuntimeError):
    """The active-set loop hit its iteration cap."""


class SingularCovariance(np.linalg.LinAlgError):
    """The covariance cannot be inverted."""


@dataclass(frozen=True)
class QPResult:
    allocation: AllocationVector
    variance: float
    c: float
    budget_active: bool
    iterations: int
    budget_multiplier: float

    @property
    def weights(self) -> np.ndarray:
        return self.allocation.weights


class ActiveSetSolver:
    """Active-set solver for one covariance matrix, reusable across ``c``.

    Successive calls to :meth:`solve` with non-decreasing ``c`` start from
    the previous solution, which remains feasible. The instance keeps mutable
    working state and must not be shared between threads.

    Parameters
    ----------
    sigma : CovarianceEstimate or array-like
        Positive semi-definite covariance (singular matrices are accepted).
    A, a : array-like, optional
        Extra equality constraints ``A w = a``.
    max_iter : int, optional
        Iteration cap; defaults to ``50 * p`` (at least 200).
    """

    def __init__(self, sigma, A=None, a=None, max_iter: int | None = None,
                 psd_rtol: float = 1e-8):
        self.sigma = as_covariance(sigma)
        check_psd(self.sigma, psd_rtol)
        self._S = np.array(self.sigma.matrix)
        self._scale = max(float(np.abs(self._S).max()), np.finfo(float).tiny)
        p = self._S.shape[0]
        if A is None:
            self._A = np.zeros((0, p))
            self._a = np.zeros(0)
        else:
            self._A = np.atleast_2d(np.asarray(A, dtype=float))
            self._a = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
            if self._A.shape[1] != p or self._A.shape[0] != self._a.size:
                raise ValueError(f"equality constraints have shape {self._A.shape}, "
                                 f"rhs {self._a.shape}, expected (m, {p})")
        self.max_iter = max_iter if max_iter is not None else max(200, 50 * p)
        self._state: np.ndarray | None = None
        self._w: np.ndarray | None = None
        self._budget = False
        self._c_prev = np.inf
        self._no_short_prev = False

    @property
    def n_assets(self) -> int:
        return self._S.shape[0]

    # -- starting points -------------------------------------------------

    def _cold_start(self, c: float, no_short: bool):
        p = self.n_assets
        if self._A.shape[0] == 0:
            k = int(np.argmin(np.diag(self._S)))
            w = np.zeros(p)
            w[k] = 1.0
        else:
            w = self._phase_one(c, no_short)
        state = np.sign(w).astype(np.int8)
        state[np.abs(w) <= NO_SHORT_ATOL] = 0
        w[state == 0] = 0.0
        self._w, self._state = w, state
        self._budget = (not no_short) and abs(np.abs(w).sum() - c) <= 1e-10 * c

    def _phase_one(self, c: float, no_short: bool) -> np.ndarray:
        p, A = self.n_assets, self._A
        a_eq = np.vstack([np.concatenate([np.ones(p), -np.ones(p)]), np.hstack([A, -A])])
        b_eq = np.concatenate([[1.0], self._a])
        bounds = [(0, None)] * p + [(0, 0 if no_short else None)] * p
        res = linprog(np.ones(2 * p), A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status != 0:
            raise InfeasibleProblem(f"equality constraints are infeasible: {res.message}")
        w = res.x[:p] - res.x[p:]
        if np.abs(w).sum() > c * (1 + 1e-9):
            raise InfeasibleProblem(
                f"smallest gross exposure meeting the constraints is "
                f"{np.abs(w).sum():.6g} > c = {c:.6g}")
        return w

    # -- main loop -------------------------------------------------------

    def _feasible_start(self, w0, c: float, no_short: bool) -> bool:
        w = np.array(w0, dtype=float).ravel()
        if w.size != self.n_assets or not np.all(np.isfinite(w)):
            return False
        if abs(w.sum() - 1.0) > 1e-9 or np.abs(w).sum() > c * (1 + 1e-12):
            return False
        if no_short and w.min() < -NO_SHORT_ATOL:
            return False
        if self._A.shape[0] and np.abs(self._A @ w - self._a).max() > 1e-9:
            return False
        state = np.sign(w).astype(np.int8)
        state[np.abs(w) <= NO_SHORT_ATOL] = 0
        w[state == 0] = 0.0
        self._w, self._state = w, state
        self._budget = (not no_short) and abs(np.abs(w).sum() - c) <= 1e-10 * c
        return True

    def solve(self, c: float, warm_start: bool = True, initial=None) -> QPResult:
        """Minimize variance subject to ``||w||_1 <= c`` and the equalities.

        ``initial`` is an optional feasible starting allocation (for example
        the previous solution on a nearby covariance); infeasible starts are
        ignored.
        """
        c = float(c)
        if not c >= 1.0:
            raise InfeasibleProblem(f"gross exposure bound c = {c} < 1 is infeasible")
        no_short = c - 1.0 <= 1e-12
        if initial is not None and self._feasible_start(initial, c, no_short):
            pass
        elif warm_start and self._state is not None and c >= self._c_prev:
            if c > self._c_prev:
                self._budget = False
        else:
            self._cold_start(c, no_short)
        it = self._iterate(c, no_short)
        self._c_prev, self._no_short_prev = c, no_short
        w = self._w.copy()
        alloc = AllocationVector(w / w.sum(), self.sigma.asset_ids)
        var = portfolio_risk(alloc, self.sigma).raw_variance
        return QPResult(alloc, var, c, self._budget, it, self._lam)

    def _iterate(self, c: float, no_short: bool) -> int:
        S, A = self._S, self._A
        w, state = self._w, self._state
        self._lam = 0.0
        if no_short:
            self._budget = False
        for it in range(1, self.max_iter + 1):
            F = np.flatnonzero(state)
            sF = state[F].astype(float)
            rows = [np.ones(F.size)]
            if A.shape[0]:
                rows.extend(A[:, F])
            if self._budget:
                rows.append(sF)
            C = np.vstack(rows)
            g = 2.0 * (S @ w)
            gF = g[F]
            Z = _null_space(C)
            step, bounded = self._direction(F, Z, gF)

            if step is not None and np.any(step != 0):
                alpha, block = self._ratio_test(F, sF, w, step, c, bounded, no_short)
                if block is None and not bounded:
                    # zero-curvature direction: objective is linear along it
                    if step @ gF < -1e-12 * max(np.abs(gF).max(), 1e-300) * np.abs(step).max():
                        raise RuntimeError("unbounded descent direction in a bounded problem")
                    step = -step
                    alpha, block = self._ratio_test(F, sF, w, step, c, bounded, no_short)
                    if block is None:
                        raise RuntimeError("zero-curvature direction is not blocked")
                w[F] += alpha * step
                if block is not None:
                    if block == -1:
                        self._budget = True
                    else:
                        w[block] = 0.0
                        state[block] = 0
                    continue

            # at the minimizer of the current face: check multipliers
            g = 2.0 * (S @ w)
            release = self._pricing(F, sF, g, no_short)
            if release is None:
                return it
            if release == -1:
                self._budget = False
            else:
                idx, sign = release
                state[idx] = sign
        raise IterationLimit(f"no convergence after {self.max_iter} iterations")

    def _direction(self, F, Z, gF):
        """Newton step on the current face, or a zero-curvature direction."""
        if Z.shape[1] == 0:
            return None, True
        HF = 2.0 * self._S[np.ix_(F, F)]
        M = Z.T @ HF @ Z
        M = 0.5 * (M + M.T)
        gz = Z.T @ gF
        scale = max(np.abs(HF).max(), np.finfo(float).tiny)
        # fast path for a clearly positive definite face; a pivot bounds the
        # smallest eigenvalue from above, so tiny pivots go to the eigen route
        try:
            L = np.linalg.cholesky(M)
            if np.diag(L).min() ** 2 > 1e-8 * scale:
                y = -cho_solve((L, True), gz)
                return Z @ y, True
        except np.linalg.LinAlgError:
            pass
        evals, evecs = np.linalg.eigh(M)
        scale = max(evals[-1], scale)
        null = evals <= 1e-11 * scale
        if np.any(null):
            direction = Z @ evecs[:, np.flatnonzero(null)[0]]
            if direction @ gF > 0:
                direction = -direction
            return direction, False
        y = -evecs @ ((evecs.T @ gz) / evals)
        return Z @ y, True

    def _ratio_test(self, F, sF, w, step, c, bounded, no_short):
        alpha, block = (1.0 if bounded else np.inf), None
        toward_zero = sF * step < 0
        if np.any(toward_zero):
            ratios = -w[F][toward_zero] / step[toward_zero]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block = max(ratios[k], 0.0), int(F[toward_zero][k])
        if not self._budget and not no_short:
            growth = sF @ step
            if growth > 0:
                ab = max((c - sF @ w[F]) / growth, 0.0)
                if ab < alpha:
                    alpha, block = ab, -1
        return alpha, block

    def _pricing(self, F, sF, g, no_short):
        """Most negative Lagrange multiplier of the working set, or None."""
        A = self._A
        cols = [np.ones(F.size)]
        if A.shape[0]:
            cols.extend(A[:, F])
        if self._budget:
            cols.append(-sF)
        Cm = np.column_stack(cols)
        theta, *_ = np.linalg.lstsq(Cm, g[F], rcond=None)
        mu = theta[0]
        nu = theta[1:1 + A.shape[0]]
        lam = theta[-1] if self._budget else 0.0
        self._lam = float(lam)
        h = g - mu - A.T @ nu
        # gradient scale that stays meaningful when the optimal variance is ~0
        tol = 1e-9 * max(np.abs(g).max(), 2.0 * self._scale * np.abs(self._w).sum())

        best, choice = -tol, None
        if self._budget and lam < best:
            best, choice = lam, -1
        zero = np.flatnonzero(self._state == 0)
        if zero.size:
            pi_long = h[zero] + lam
            k = int(np.argmin(pi_long))
            if pi_long[k] < best:
                best, choice = pi_long[k], (int(zero[k]), 1)
            if not no_short:
                pi_short = lam - h[zero]
                k = int(np.argmin(pi_short))
                if pi_short[k] < best:
                    best, choice = pi_short[k], (int(zero[k]), -1)
        return choice


def _null_space(C: np.ndarray) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(C.shape[1])
    _, s, vt = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1.0)))
    return vt[rank:].T


# --------------------------------------------------------------------------
# functional interface


def solve(sigma, c: float, A=None, a=None, initial=None) -> QPResult:
    """Minimum-variance portfolio with gross exposure at most ``c``."""
    return ActiveSetSolver(sigma, A, a).solve(c, initial=initial)


def solve_path(sigma, c_grid, A=None, a=None) -> list[QPResult]:
    """Solve for every ``c`` in ascending order, warm-starting each solve."""
    solver = ActiveSetSolver(sigma, A, a)
    order = np.argsort(np.asarray(c_grid, dtype=float), kind="stable")
    out: list[QPResult | None] = [None] * len(order)
    for i in order:
        out[i] = solver.solve(c_grid[i])
    return out


def solve_no_short(sigma, A=None, a=None) -> QPResult:
    """Minimum-variance portfolio without short positions (``c = 1``)."""
    return solve(sigma, 1.0, A, a)


def solve_gmv(sigma) -> QPResult:
    """Global minimum-variance portfolio ``S^-1 1 / (1' S^-1 1)``.

    Raises :class:`SingularCovariance` when ``sigma`` is not positive
    definite; the reported ``c`` is the gross exposure of the solution.
    """
    sig = as_covariance(sigma)
    S = sig.matrix
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc
    d = np.diag(L)
    if d.min() <= 1e-7 * d.max():
        raise SingularCovariance(
            f"covariance is numerically singular (pivot ratio {d.min() / d.max():.2e})")
    x = np.linalg.solve(L.T, np.linalg.solve(L, np.ones(S.shape[0])))
    alloc = AllocationVector(x / x.sum(), sig.asset_ids)
    var = portfolio_risk(alloc, sig).raw_variance
    return QPResult(alloc, var, alloc.gross_exposure, False, 0, 0.0)


def optimality_gap(sigma, w, c: float, A=None, a=None) -> float:
    """Frank-Wolfe gap ``g'w - min_v g'v`` over the feasible set, ``g = 2 S w``.

    Non-negative for feasible ``w`` and zero exactly at an optimum. Returned
    relative to ``2 max|S| ||w||_1`` (a bound on ``|g|``) plus any constraint
    violation of ``w``.
    """
    S = as_covariance(sigma).matrix
    w = np.asarray(w, dtype=float)
    p = w.size
    g = 2.0 * S @ w
    scale = max(2.0 * np.abs(S).max() * np.abs(w).sum(), np.finfo(float).tiny)
    viol = max(abs(w.sum() - 1.0), max(np.abs(w).sum() - c, 0.0))
    a_eq = [np.concatenate([np.ones(p), -np.ones(p)])]
    b_eq = [1.0]
    if A is not None:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        a_eq.extend(np.hstack([A, -A]))
        b_eq.extend(np.atleast_1d(a))
        viol = max(viol, np.abs(A @ w - np.atleast_1d(a)).max())
    gn = max(np.abs(g).max(), np.finfo(float).tiny)
    res = linprog(np.concatenate([g, -g]) / gn, A_ub=np.ones((1, 2 * p)), b_ub=[c],
                  A_eq=np.vstack(a_eq), b_eq=b_eq, bounds=[(0, None)] * (2 * p),
                  method="highs")
    return float((g @ w / gn - res.fun) * gn / scale + viol)


# --------------------------------------------------------------------------
# estimator API


class GrossExposurePortfolio(BaseEstimator):
    """Minimum-variance allocation under a gross-exposure bound.

    Parameters
    ----------
    c : float, default=1.6
        Upper bound on ``sum |w_i|``; ``c = 1`` forbids short sales.
    covariance_estimator : estimator, optional
        Object with ``fit`` and ``covariance_``; defaults to
        :class:`~gross_exposure.covariance.SampleCovariance`.
    A, a : array-like, optional
        Extra linear equality constraints ``A w = a``.

    Attributes
    ----------
    weights_ : ndarray of shape (n_assets,)
    allocation_ : AllocationVector
    variance_ : float
        Per-period variance under the fitted covariance.
    """

    def __init__(self, c: float = 1.6, covariance_estimator=None, A=None, a=None):
        self.c = c
        self.covariance_estimator = covariance_estimator
        self.A = A
        self.a = a

    def fit(self, X, y=None):
        est = clone(self.covariance_estimator) if self.covariance_estimator is not None \
            else SampleCovariance()
        est.fit(X, y)
        self.covariance_estimator_ = est
        res = solve(est.covariance_, self.c, self.A, self.a)
        self.result_ = res
        self.allocation_ = res.allocation
        self.weights_ = np.array(res.weights)
        self.variance_ = res.variance
        return self

    def predict(self, X):
        """Portfolio returns ``X @ weights_``."""
        return np.asarray(X, dtype=float) @ self.weights_


class GlobalMinimumVariance(GrossExposurePortfolio):
    """Unconstrained minimum-variance allocation (requires a non-singular estimate)."""

    def __init__(self, covariance_estimator=None):
        super().__init__(c=np.inf, covariance_estimator=covariance_estimator)

    def fit(self, X, y=None):
        est = clone(self.covariance_estimator) if self.covariance_estimator is not None \
            else SampleCovariance()
        est.fit(X, y)
        self.covariance_estimator_ = est
        res = solve_gmv(est.covariance_)
        self.result_ = res
        self.allocation_ = res.allocation
        self.weights_ = np.array(res.weights)
        self.variance_ = res.variance
        return self
