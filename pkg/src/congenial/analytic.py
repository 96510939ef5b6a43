"""Closed-form densities for the two-bin model and a numerical check of the
shift-ratio bound behind the attained L1 budget.

Two-bin setting: ``s = (s1, s2)`` with ``s1 + s2 = n`` invariant and i.i.d.
Laplace noise of scale ``2/epsilon`` on each cell.  Conditioning on the total
gives a Laplace(1/epsilon) release of ``s1``; the convex L1 post-processing
``beta * m1 + (1 - beta) * (n - m2)`` gives ``s1`` plus the combination noise
``beta * u1 - (1 - beta) * u2`` whose density is :func:`combo_density`.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from ._validation import check_beta, check_positive

# |beta - 1/2| below this uses the limit form
BETA_HALF_WINDOW = 1e-6
QUAD_ABS_TOL = 1e-10


@dataclass(frozen=True)
class CombinationDensityParams:
    beta: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "beta", check_beta(self.beta))
        object.__setattr__(self, "epsilon", check_positive(self.epsilon, "epsilon"))

    @property
    def is_half(self):
        return abs(self.beta - 0.5) < BETA_HALF_WINDOW

    def variance(self):
        b = self.beta
        return (b * b + (1.0 - b) ** 2) * 8.0 / self.epsilon**2


def _as_output(u, out):
    return float(out) if np.ndim(u) == 0 else out


def conditional_laplace_density(m, s1, epsilon):
    """Density of the conditioned release of ``s1``: Laplace(1/epsilon) at ``s1``.

    Examples
    --------
    >>> conditional_laplace_density(3.0, 3.0, 2.0)
    1.0
    """
    epsilon = check_positive(epsilon, "epsilon")
    m = np.asarray(m, dtype=float)
    out = 0.5 * epsilon * np.exp(-epsilon * np.abs(m - float(s1)))
    return _as_output(m, out)


def combo_density(u, params):
    """Density of ``beta*u1 - (1-beta)*u2`` with ``u1, u2`` i.i.d. Laplace(2/eps).

    A signed (non-convex) combination of Laplace densities with scales
    ``2 beta / eps`` and ``2 (1 - beta) / eps``.  Near ``beta = 1/2`` the
    limit ``(eps/4)(1 + eps|u|) exp(-eps|u|)`` is used instead, since the
    general form is a 0/0 there.
    """
    if not isinstance(params, CombinationDensityParams):
        raise TypeError("params must be a CombinationDensityParams")
    eps, beta = params.epsilon, params.beta
    x = np.abs(np.asarray(u, dtype=float))
    if params.is_half:
        out = 0.25 * eps * (1.0 + eps * x) * np.exp(-eps * x)
        return _as_output(u, out)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        # a zero weight kills its term outright (scale 0 would give 0 * exp(-inf))
        t1 = beta * np.exp(-eps * x / (2.0 * beta)) if beta > 0 else np.zeros_like(x)
        t2 = ((1.0 - beta) * np.exp(-eps * x / (2.0 * (1.0 - beta)))
              if beta < 1 else np.zeros_like(x))
    out = eps / (4.0 * (2.0 * beta - 1.0)) * (t1 - t2)
    return _as_output(u, np.maximum(out, 0.0))


def attained_budget_l1(beta, epsilon):
    """Privacy loss attained by the convex L1 post-processing with weight ``beta``.

    >>> attained_budget_l1(0.75, 3.0)
    2.0
    """
    beta = check_beta(beta)
    epsilon = check_positive(epsilon, "epsilon")
    return epsilon / (2.0 * max(beta, 1.0 - beta))


def integrate_density(f, half_width, moment=0):
    """``int x**moment f(x) dx`` over ``[-half_width, half_width]``.

    Adaptive quadrature split at the kink at 0.
    """
    g = (lambda x: f(x)) if moment == 0 else (lambda x: x**moment * f(x))
    left = integrate.quad(g, -half_width, 0.0, epsabs=QUAD_ABS_TOL, epsrel=0, limit=200)[0]
    right = integrate.quad(g, 0.0, half_width, epsabs=QUAD_ABS_TOL, epsrel=0, limit=200)[0]
    return left + right


@dataclass(frozen=True)
class ShiftRatioReport:
    """Outcome of :func:`verify_shift_ratio_bound`.

    ``witness_i`` / ``witness_ii`` hold a grid point where the corresponding
    monotonicity condition fails, or ``None``.
    """

    sup_log_ratio: float
    bound: float
    holds: bool
    argmax: float
    condition_i: bool
    condition_ii: bool
    witness_i: float = None
    witness_ii: float = None

    def to_dict(self):
        return asdict(self)


def default_grid(epsilon, half_width=40.0, spacing=0.01):
    n = int(round(half_width / spacing))
    return np.arange(-n, n + 1) * (spacing / epsilon)


def _first_violation(x, values, increasing, rtol):
    # monotonicity in |x| on the nonnegative half of the grid
    order = np.argsort(x)
    x, values = x[order], values[order]
    step = np.diff(values)
    slack = rtol * np.maximum(np.abs(values[:-1]), np.abs(values[1:]))
    bad = step < -slack if increasing else step > slack
    hits = np.flatnonzero(bad)
    return None if hits.size == 0 else float(x[hits[0] + 1])


def verify_shift_ratio_bound(f, alpha, shifts=(1.0, 0.0), grid=None, rtol=1e-9, epsilon=None):
    """Check ``sup_x f(x - a) / f(x - b) <= exp(alpha |a - b|)`` on a grid.

    Besides the ratio itself, the two sufficient conditions are checked on the
    grid: (i) ``f`` is nonincreasing in ``|x|`` and (ii) ``f(x) exp(alpha|x|)``
    is nondecreasing in ``|x|``.  A failure of (ii) usually means ``alpha`` is
    below the true budget of ``f``.

    Parameters
    ----------
    f : callable
        Vectorised density, positive on the grid.
    alpha : float
    shifts : (a, b)
    grid : array, optional
        Defaults to ``[-40/eps, 40/eps]`` with spacing ``0.01/eps`` where
        ``eps`` is ``epsilon`` if given, else ``alpha``.
    rtol : float
        Relative tolerance for the monotonicity checks.
    """
    alpha = check_positive(alpha, "alpha")
    a, b = (float(s) for s in shifts)
    if grid is None:
        grid = default_grid(alpha if epsilon is None else epsilon)
    x = np.asarray(grid, dtype=float)
    with np.errstate(divide="ignore"):
        num = np.log(f(x - a))
        den = np.log(f(x - b))
    if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
        raise ValueError("f must be positive on the shifted grid")
    ratio = num - den
    k = int(np.argmax(ratio))
    sup = float(ratio[k])
    bound = alpha * abs(a - b)

    half = x[x >= 0]
    fx = np.asarray(f(half), dtype=float)
    w_i = _first_violation(half, fx, increasing=False, rtol=rtol)
    w_ii = _first_violation(half, fx * np.exp(alpha * half), increasing=True, rtol=rtol)
    return ShiftRatioReport(
        sup_log_ratio=sup,
        bound=bound,
        holds=bool(sup <= bound + rtol * max(1.0, bound)),
        argmax=float(x[k]),
        condition_i=w_i is None,
        condition_ii=w_ii is None,
        witness_i=w_i,
        witness_ii=w_ii,
    )
