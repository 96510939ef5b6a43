"""Optimisation-based post-processing onto the invariant set.

These are the baselines the conditional mechanism is compared against: the
Euclidean projection onto the equality constraints, the nonnegative least
squares projection onto the full invariant set (NNL2), and the family of L1
solutions for a two-bin histogram with a fixed total.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_beta, check_query, check_query_matrix
from .invariants import LinearInvariantSystem

L1_CONVEX = "l1_convex"
L2 = "l2"
NNL2 = "nnl2"


class ProjectionError(RuntimeError):
    """The active-set solver hit its iteration cap."""

    def __init__(self, message, iterate, residual):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


@dataclass(frozen=True)
class ProjectionConfig:
    norm: str = NNL2
    beta: float = None
    tolerance: float = 1e-9
    max_iterations: int = 500

    def __post_init__(self):
        if self.norm not in (L1_CONVEX, L2, NNL2):
            raise ValueError(f"unknown norm {self.norm!r}")
        if (self.beta is not None) != (self.norm == L1_CONVEX):
            raise ValueError("beta is required for, and only for, the l1_convex norm")
        if self.beta is not None:
            object.__setattr__(self, "beta", check_beta(self.beta))
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance and max_iterations must be positive")


def l2_project_equality(m, sys):
    """Closest point to ``m`` on ``{s : A s = a}`` in Euclidean distance.

    Examples
    --------
    >>> sys = LinearInvariantSystem(2, A=[[1, 1]], a=[6])
    >>> l2_project_equality([3.0, 5.0], sys).tolist()
    [2.0, 4.0]
    """
    m = check_query(m, name="m")
    if sys.d_B:
        raise ValueError("l2_project_equality only handles equality constraints")
    if m.shape[0] != sys.d:
        raise ValueError("dimension mismatch between m and the system")
    if sys.d_A == 0:
        return m.copy()
    A = sys.A
    lam = np.linalg.solve(A @ A.T, A @ m - sys.a)
    return m - A.T @ lam


def _projected_step(C, g):
    """Minimiser of ``|g + p|^2`` subject to ``C p = 0``."""
    if C.shape[0] == 0:
        return -g
    lam, *_ = np.linalg.lstsq(C @ C.T, C @ g, rcond=None)
    return -(g - C.T @ lam)


def nnl2_project(m, sys, tolerance=1e-9, max_iterations=500):
    """Euclidean projection of ``m`` onto ``{A s = a, B s >= b}``.

    Primal active-set method started from a feasible point of the system.
    Ties when adding or dropping a constraint go to the lowest row index.

    Raises
    ------
    ProjectionError
        When ``max_iterations`` is reached; carries the last iterate and its
        KKT residual.
    """
    m = check_query(m, name="m")
    if m.shape[0] != sys.d:
        raise ValueError("dimension mismatch between m and the system")
    if sys.d_B == 0:
        return l2_project_equality(m, sys) if sys.d_A else m.copy()
    A, B, b = sys.A, sys.B, sys.b
    scale = 1.0 + np.max(np.abs(m))
    tol = tolerance * scale

    x = np.array(sys.feasible_point, dtype=float)
    if sys.d_A:
        x = x - A.T @ np.linalg.lstsq(A @ A.T, A @ x - sys.a, rcond=None)[0]
    slack = B @ x - b
    if np.min(slack) < -tol:
        raise ValueError("could not find a feasible starting point")
    working = []
    for i in np.flatnonzero(np.abs(slack) <= tol):
        trial = np.vstack([A, B[working + [int(i)]]])
        if np.linalg.matrix_rank(trial) == trial.shape[0]:
            working.append(int(i))

    residual = np.inf
    for _ in range(max_iterations):
        C = np.vstack([A, B[working]]) if working else A
        g = x - m
        p = _projected_step(C, g)
        if np.max(np.abs(p)) <= tol:
            # x - m = A^T nu + B_W^T mu with mu >= 0 at the optimum
            coef, *_ = np.linalg.lstsq(C.T, g, rcond=None)
            mu = coef[sys.d_A :]
            residual = float(np.max(np.abs(C.T @ coef - g), initial=0.0))
            if mu.size == 0 or np.min(mu) >= -tol:
                if sys._bounds is not None and working:
                    # active simple bounds hold with equality; drop rounding residue
                    cols, coef = sys._bounds
                    w = np.asarray(working)
                    x[cols[w]] = b[w] / coef[w]
                return x + 0.0
            j = int(np.argmin(mu))
            working.pop(j)
            continue
        Bp = B @ p
        slack = B @ x - b
        alpha, block = 1.0, None
        inactive = np.setdiff1d(np.arange(sys.d_B), working)
        cand = inactive[Bp[inactive] < -tol * 1e-3]
        if cand.size:
            ratios = slack[cand] / -Bp[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block = max(0.0, float(ratios[k])), int(cand[k])
        x = x + alpha * p
        if block is not None:
            working.append(block)
            working.sort()
        residual = float(np.max(np.abs(p)))
    raise ProjectionError("active-set iteration cap reached", x, residual)


def l1_convex_project(m, n, beta):
    """A two-bin L1 projection onto ``s1 + s2 = n``.

    Returns ``(t, n - t)`` with ``t = beta * m1 + (1 - beta) * (n - m2)``, a
    point of the L1-optimal segment between ``m1`` and ``n - m2``.

    Examples
    --------
    >>> l1_convex_project([3.0, 5.0], 6.0, 1.0).tolist()
    [3.0, 3.0]
    """
    beta = check_beta(beta)
    m = check_query(m, name="m")
    if m.shape[0] != 2:
        raise ValueError("l1_convex_project needs a length-2 vector")
    n = float(n)
    t = beta * m[0] + (1.0 - beta) * (n - m[1])
    return np.array([t, n - t])


def l1_convex_project_many(M, n, beta):
    """Row-wise :func:`l1_convex_project` for an ``(N, 2)`` array."""
    beta = check_beta(beta)
    M = check_query_matrix(M, name="M")
    if M.shape[1] != 2:
        raise ValueError("expected an (N, 2) array")
    t = beta * M[:, 0] + (1.0 - beta) * (float(n) - M[:, 1])
    return np.column_stack([t, float(n) - t])


def l2_project_sum_many(M, n):
    """Row-wise projection of two-bin releases onto ``s1 + s2 = n``."""
    M = check_query_matrix(M, name="M")
    excess = (M.sum(axis=1) - float(n)) / 2.0
    return M - excess[:, None]


class InvariantProjector(TransformerMixin, BaseEstimator):
    """Project each row onto an invariant system.

    Parameters
    ----------
    invariants : LinearInvariantSystem
    norm : {"nnl2", "l2", "l1_convex"}, default="nnl2"
        ``"l2"`` ignores inequality rows; ``"l1_convex"`` applies to two-bin
        systems with a single sum constraint.
    beta : float, optional
        Weight for ``"l1_convex"``.
    tolerance : float, default=1e-9
    max_iterations : int, default=500
    """

    def __init__(self, invariants=None, norm=NNL2, beta=None, tolerance=1e-9,
                 max_iterations=500):
        self.invariants = invariants
        self.norm = norm
        self.beta = beta
        self.tolerance = tolerance
        self.max_iterations = max_iterations

    def fit(self, X, y=None):
        if not isinstance(self.invariants, LinearInvariantSystem):
            raise ValueError("invariants must be a LinearInvariantSystem")
        self.config_ = ProjectionConfig(self.norm, self.beta, self.tolerance,
                                        self.max_iterations)
        if self.norm == L1_CONVEX and (self.invariants.d != 2 or self.invariants.d_A != 1):
            raise ValueError("l1_convex projection needs a two-bin sum constraint")
        X = check_query_matrix(X)
        if X.shape[1] != self.invariants.d:
            raise ValueError("X and invariants disagree on dimension")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_query_matrix(X)
        sys = self.invariants
        if self.norm == L1_CONVEX:
            row = sys.A[0]
            if row[0] == 0 or row[1] != row[0]:
                raise ValueError("l1_convex projection needs a plain sum constraint")
            return l1_convex_project_many(X, sys.a[0] / row[0], self.beta)
        if self.norm == L2:
            eq = LinearInvariantSystem(sys.d, A=sys.A, a=sys.a) if sys.d_B else sys
            return np.vstack([l2_project_equality(row, eq) for row in X])
        return np.vstack([nnl2_project(row, sys, self.tolerance, self.max_iterations)
                          for row in X])
