"""Unconstrained additive mechanisms: Laplace and Double Geometric noise.

Both mechanisms release ``s + U`` where the coordinates of ``U`` are drawn
independently.  The Double Geometric pmf is ``(1 - a)/(1 + a) * a**|u|`` on the
integers with ``a = exp(-epsilon / sensitivity)``; the Laplace density has
scale ``sensitivity / epsilon``.

Budgets are always per coordinate: a mechanism built with ``epsilon=0.5``
adds noise calibrated to 0.5 to every cell of the query.
"""

from dataclasses import dataclass
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_positive,
    check_probability_open,
    check_query,
    check_query_matrix,
    check_rng,
)

LAPLACE = "laplace"
DOUBLE_GEOMETRIC = "double_geometric"
KINDS = (LAPLACE, DOUBLE_GEOMETRIC)

# half-width of the window around 1/(1+a) where both quantile branches are tried
_BRANCH_WINDOW = 1e-12


class MechanismKindError(ValueError):
    """Raised when an operation is applied to the wrong kind of mechanism."""


@dataclass(frozen=True)
class NoiseMechanism:
    """An additive noise mechanism with a per-coordinate privacy budget.

    Parameters
    ----------
    kind : {"laplace", "double_geometric"}
    epsilon : float
        Per-coordinate privacy loss budget, strictly positive.
    sensitivity : float, default=1.0
        Global sensitivity of the query.  Counting and histogram queries on
        binary records have sensitivity 1.
    """

    kind: str
    epsilon: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "epsilon", check_positive(self.epsilon, "epsilon"))
        object.__setattr__(
            self, "sensitivity", check_positive(self.sensitivity, "sensitivity")
        )

    @classmethod
    def laplace(cls, epsilon, sensitivity=1.0):
        return cls(LAPLACE, epsilon, sensitivity)

    @classmethod
    def double_geometric(cls, epsilon, sensitivity=1.0):
        return cls(DOUBLE_GEOMETRIC, epsilon, sensitivity)

    @property
    def is_discrete(self):
        return self.kind == DOUBLE_GEOMETRIC

    @property
    def a(self):
        """Geometric decay parameter ``exp(-epsilon / sensitivity)``."""
        return math.exp(-self.epsilon / self.sensitivity)

    @property
    def scale(self):
        """Laplace scale ``sensitivity / epsilon``."""
        return self.sensitivity / self.epsilon

    def with_epsilon(self, epsilon):
        return NoiseMechanism(self.kind, epsilon, self.sensitivity)

    def log_linear(self):
        """Coefficients ``(c0, c1)`` with ``logpdf(u) = c0 + c1 * |u|``."""
        if self.is_discrete:
            a = self.a
            return math.log1p(-a) - math.log1p(a), math.log(a)
        return -math.log(2.0 * self.scale), -1.0 / self.scale

    def logpdf(self, u):
        """Log pmf (Double Geometric) or log density (Laplace) of the noise."""
        u = np.asarray(u)
        if self.is_discrete:
            a = self.a
            return math.log1p(-a) - math.log1p(a) + np.abs(u) * math.log(a)
        b = self.scale
        return -math.log(2.0 * b) - np.abs(u) / b

    def sample(self, size, rng):
        """Draw i.i.d. noise of the given shape by inverse-CDF sampling."""
        rng = check_rng(rng)
        v = open_uniform(rng, size)
        if self.is_discrete:
            return _dg_quantile(v, self.a)
        return _laplace_quantile(v, self.scale)

    def variance(self):
        if self.is_discrete:
            a = self.a
            return 2.0 * a / (1.0 - a) ** 2
        return 2.0 * self.scale**2


def open_uniform(rng, size):
    """Uniform draws on the open interval (0, 1)."""
    v = rng.random(size)
    zero = v == 0.0
    while np.any(zero):
        v[zero] = rng.random(int(np.count_nonzero(zero)))
        zero = v == 0.0
    return v


def _require_dg(mech):
    if not isinstance(mech, NoiseMechanism) or mech.kind != DOUBLE_GEOMETRIC:
        raise MechanismKindError("a Double Geometric mechanism is required")
    return mech.a


def dg_pmf(u, mech):
    """Double Geometric probability mass ``(1-a)/(1+a) * a**|u|``.

    Examples
    --------
    >>> mech = NoiseMechanism.double_geometric(math.log(2))
    >>> round(float(dg_pmf(0, mech)), 12)
    0.333333333333
    """
    a = _require_dg(mech)
    u = np.asarray(u)
    return (1.0 - a) / (1.0 + a) * np.power(a, np.abs(u).astype(float))


def _dg_log_cdf_lower(u, a):
    # log F(u) for u <= 0
    return -u * math.log(a) - math.log1p(a)


def _dg_log_sf_upper(u, a):
    # log(1 - F(u)) for u > 0
    return (u + 1) * math.log(a) - math.log1p(a)


def _dg_cdf(u, a):
    u = np.asarray(u, dtype=float)
    low = u <= 0
    out = np.empty_like(u)
    out[low] = np.exp(_dg_log_cdf_lower(u[low], a))
    out[~low] = -np.expm1(_dg_log_sf_upper(u[~low], a))
    return out


def dg_cdf(u, mech):
    """Cumulative mass ``P(U <= u)`` of the Double Geometric noise."""
    a = _require_dg(mech)
    u = np.asarray(u)
    out = _dg_cdf(np.atleast_1d(u), a)
    return out.reshape(u.shape) if u.shape else float(out[0])


def _dg_cdf_at_least(u, v, a):
    """Elementwise ``F(u) >= v`` using the same evaluation as :func:`dg_cdf`."""
    return _dg_cdf(u, a) >= v


_QUANTILE_BLOCK = 1 << 15
_EPS = float(np.finfo(float).eps)


def _dg_quantile(v, a):
    v = np.asarray(v, dtype=float)
    shape = v.shape
    v = v.reshape(-1)
    out = np.empty(v.shape, dtype=np.int64)
    # blocks keep the temporaries in cache
    for start in range(0, v.size, _QUANTILE_BLOCK):
        stop = start + _QUANTILE_BLOCK
        out[start:stop] = _dg_quantile_block(v[start:stop], a)
    return out.reshape(shape)


def _dg_quantile_block(v, a):
    log_a = math.log(a)
    log_1pa = math.log1p(a)
    boundary = 1.0 / (1.0 + a)
    lower = v <= boundary
    # both branches share y = (log w + log(1+a)) / log a with w = v below the
    # boundary and 1 - v above it; ceil(-y) = -floor(y) on the lower branch
    w = np.where(lower, v, 1.0 - v)
    y = np.log(w)
    y += log_1pa
    y *= 1.0 / log_a
    u = np.floor(y)
    np.negative(u, out=u, where=lower)
    # the closed form can only be off by one when y is within rounding of an
    # integer; 1 - v carries an absolute error of ~eps, hence the 1/w term.
    # Those entries are repaired so u is the minimal integer with F(u) >= v.
    dist = y - np.rint(y)
    np.abs(dist, out=dist)
    np.multiply(w, dist, out=dist)
    np.abs(y, out=y)
    np.maximum(y, 1.0, out=y)
    y *= 1e-9
    y *= w
    y += 4.0 * _EPS / -log_a
    fuzzy = dist <= y
    fuzzy |= np.abs(v - boundary) < _BRANCH_WINDOW
    if np.any(fuzzy):
        idx = np.flatnonzero(fuzzy)
        vf = v[idx]
        uf = _dg_exact_quantile(vf, u[idx], a)
        u[idx] = uf
    return u


def _dg_exact_quantile(v, guess, a):
    """Minimal integer with ``F(u) >= v`` near ``guess`` via the CDF itself."""
    u = guess - 1
    for _ in range(4):
        up = ~_dg_cdf_at_least(u, v, a)
        if not np.any(up):
            break
        u = np.where(up, u + 1, u)
    down = _dg_cdf_at_least(u - 1, v, a)
    while np.any(down):
        u = np.where(down, u - 1, u)
        down = _dg_cdf_at_least(u - 1, v, a)
    return u


def dg_quantile(v, mech):
    """Smallest integer ``u`` with ``F(u) >= v`` for ``v`` in (0, 1).

    Uses the closed-form ceiling branch for ``v <= 1/(1+a)`` and the floor
    branch above it.
    """
    a = _require_dg(mech)
    scalar = np.ndim(v) == 0
    v = check_probability_open(np.atleast_1d(v))
    out = _dg_quantile(v, a)
    return int(out[0]) if scalar else out


def laplace_density(u, scale):
    """Zero-mean Laplace density ``exp(-|u|/scale) / (2 scale)``."""
    scale = check_positive(scale, "scale")
    u = np.asarray(u, dtype=float)
    out = np.exp(-np.abs(u) / scale) / (2.0 * scale)
    return float(out) if out.ndim == 0 else out


def laplace_cdf(u, scale):
    scale = check_positive(scale, "scale")
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0, 0.5 * np.exp(u / scale), 1.0 - 0.5 * np.exp(-u / scale))
    return float(out) if out.ndim == 0 else out


def _laplace_quantile(v, scale):
    v = np.asarray(v, dtype=float)
    centred = v - 0.5
    return -scale * np.sign(centred) * np.log1p(-2.0 * np.abs(centred))


def laplace_quantile(v, scale):
    scale = check_positive(scale, "scale")
    scalar = np.ndim(v) == 0
    v = check_probability_open(np.atleast_1d(v))
    out = _laplace_quantile(v, scale)
    return float(out[0]) if scalar else out


def privatize(s, mech, rng):
    """Release ``s + U`` with independent noise on every coordinate.

    Integer-valued queries are required for the Double Geometric mechanism and
    the release is then integer-valued as well.
    """
    s = check_query(s, integer=mech.is_discrete)
    noise = mech.sample(s.shape, rng)
    return s + noise


class _AdditiveMechanism(TransformerMixin, BaseEstimator):
    """Shared estimator plumbing for the additive mechanisms.

    Each row of ``X`` is a confidential query vector; ``transform`` returns the
    privatized rows.
    """

    _kind = None

    def __init__(self, epsilon=1.0, sensitivity=1.0, random_state=None):
        self.epsilon = epsilon
        self.sensitivity = sensitivity
        self.random_state = random_state

    def _mechanism(self):
        return NoiseMechanism(self._kind, self.epsilon, self.sensitivity)

    def fit(self, X, y=None):
        X = check_query_matrix(X, integer=self._kind == DOUBLE_GEOMETRIC)
        self.mechanism_ = self._mechanism()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mechanism_")
        X = check_query_matrix(X, integer=self.mechanism_.is_discrete)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        rng = check_rng(self.random_state)
        return X + self.mechanism_.sample(X.shape, rng)


class LaplaceMechanism(_AdditiveMechanism):
    """Laplace mechanism with scale ``sensitivity / epsilon`` per coordinate.

    Examples
    --------
    >>> LaplaceMechanism(epsilon=1.0, random_state=0).fit_transform([[5.0, 7.0]]).shape
    (1, 2)
    """

    _kind = LAPLACE


class DoubleGeometricMechanism(_AdditiveMechanism):
    """Integer-valued Double Geometric mechanism."""

    _kind = DOUBLE_GEOMETRIC
