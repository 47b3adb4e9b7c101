"""Independent reference computations used by the tests.

Each oracle takes a different route from the package code: explicit loops,
enumeration or dense grids rather than the closed forms and active-set
iterations under test.
"""

from __future__ import annotations

import itertools

import numpy as np


def double_sum_variance(w, S) -> float:
    total = 0.0
    for i in range(len(w)):
        for j in range(len(w)):
            total += w[i] * w[j] * S[i][j]
    return total


def ewma_loop(R, lam) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    S = np.outer(R[0], R[0])
    for t in range(1, R.shape[0]):
        S = lam * S + (1 - lam) * np.outer(R[t], R[t])
    return S


def simple_ols(x, y):
    """Slope, intercept and residual variance (divisor n - 2) of y on x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    xm, ym = x.mean(), y.mean()
    slope = np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2)
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    return slope, intercept, np.sum(resid**2) / (len(x) - 2)


def random_psd(rng, p, rank=None, scale=1.0) -> np.ndarray:
    k = p if rank is None else rank
    B = rng.standard_normal((p, k))
    return scale * (B @ B.T) / k


def grid_min_variance(S, c, step=0.01):
    """Minimum of w'Sw over 1'w = 1, ||w||_1 <= c on a lattice of width ``step``.

    The last weight is pinned by the budget, so the grid covers the first
    ``p - 1`` coordinates over ``[-(c-1)/2, (c+1)/2]``, the reachable range of
    any single weight.
    """
    S = np.asarray(S, float)
    p = S.shape[0]
    lo, hi = -(c - 1) / 2, (c + 1) / 2
    axis = np.arange(np.floor(lo / step) * step, hi + step / 2, step)
    if p == 1:
        return float(S[0, 0]), np.ones(1)
    # vectorize over up to two free coordinates, loop over the rest; with
    # w = E m + b the objective is m'(E'SE)m + 2 m'E'S b + b'S b
    k = min(2, p - 1)
    mesh = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), -1).reshape(-1, k)
    E = np.zeros((p, k))
    E[:k] = np.eye(k)
    E[-1] = -1.0
    Q = E.T @ S @ E
    quad = ((mesh @ Q) * mesh).sum(axis=1)
    l1_mesh = np.abs(mesh).sum(axis=1)
    sum_mesh = mesh.sum(axis=1)
    best, arg = np.inf, None
    for rest in itertools.product(axis, repeat=p - 1 - k):
        b = np.zeros(p)
        b[k:p - 1] = rest
        b[-1] = 1.0 - sum(rest)
        l1 = l1_mesh + np.abs(b[k:p - 1]).sum() + np.abs(b[-1] - sum_mesh)
        ok = l1 <= c + 1e-12
        if not ok.any():
            continue
        v = quad + mesh @ (2 * E.T @ S @ b) + b @ S @ b
        v = np.where(ok, v, np.inf)
        j = int(np.argmin(v))
        if v[j] < best:
            best = float(v[j])
            arg = E @ mesh[j] + b
    return best, arg


def lasso_by_sign_patterns(sxx, sxy, var_y, d, tol=1e-10):
    """min var_y - 2 sxy'w + w'Sxx w  s.t. ||w||_1 <= d, by face enumeration.

    For every sign pattern the objective is minimized on the affine hull of
    the face (with and without the L1 row active); candidates that respect
    the pattern's signs and the L1 bound are feasible points, and the face
    holding the true optimum contributes it, so the smallest feasible value
    is the optimum.
    """
    sxx, sxy = np.asarray(sxx, float), np.asarray(sxy, float)
    q = sxy.size

    def f(w):
        return var_y - 2 * sxy @ w + w @ sxx @ w

    best, arg = f(np.zeros(q)), np.zeros(q)
    for pattern in itertools.product((-1, 0, 1), repeat=q):
        s = np.array(pattern, float)
        S = np.flatnonzero(s)
        if S.size == 0:
            continue
        H, g, sS = sxx[np.ix_(S, S)], sxy[S], s[S]
        cands = []
        sol, *_ = np.linalg.lstsq(H, g, rcond=None)
        cands.append(sol)
        K = np.block([[H, sS[:, None]], [sS[None, :], np.zeros((1, 1))]])
        rhs = np.concatenate([g, [d]])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        cands.append(sol[:-1])
        for wS in cands:
            if np.any(sS * wS < -tol) or np.abs(wS).sum() > d + tol:
                continue
            w = np.zeros(q)
            w[S] = wS
            v = f(w)
            if v < best:
                best, arg = v, w
    return best, arg
