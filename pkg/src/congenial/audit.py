"""Brute-force privacy auditing on small enumerable database spaces.

Databases are length-``n`` records over a finite alphabet.  A mechanism is
audited through its exact release pmf on an integer lattice: the pmf is
evaluated on a window around every query value that is wide enough for the
discarded noise mass to stay below ``tail_mass`` per coordinate.  Because the
Double Geometric likelihood ratio is monotone outside the window, the sup over
singleton releases is attained inside it.

Everything here works on query classes: databases sharing a query value have
identical release laws, so neighbour pairs are reduced to pairs of distinct
query values before any pmf work is done.
"""

from dataclasses import asdict, dataclass, field
import itertools
import json
import math

import numpy as np
from scipy.special import logsumexp

from ._validation import check_positive, check_rng
from .invariants import LinearInvariantSystem
from .mechanisms import NoiseMechanism

MAX_DATABASES = 10**6
DEFAULT_TAIL_MASS = 1e-12
MIN_CELL_COUNT = 100

INTACT = "intact"
SUBSTANTIALLY_DISRUPTED = "substantially_disrupted"
DESTROYED = "destroyed"


class _Vacuous:
    """Verdict used when no neighbour pairs exist at the requested distance."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "VACUOUS"

    def __reduce__(self):
        return (_Vacuous, ())


VACUOUS = _Vacuous()


class SpaceTooLargeError(ValueError):
    pass


class InsufficientSamplesError(RuntimeError):
    pass


# ---------------------------------------------------------------- queries


class CountQuery:
    """Number of records equal to ``value``."""

    def __init__(self, value=1):
        self.value = value

    def __call__(self, X):
        return (np.asarray(X) == self.value).sum(axis=1, keepdims=True)

    def describe(self):
        return {"type": "count", "value": self.value}


class GroupCountQuery:
    """Per-group count of records equal to ``value``; ``groups`` lists positions."""

    def __init__(self, groups, value=1):
        self.groups = tuple(tuple(int(i) for i in g) for g in groups)
        self.value = value

    def __call__(self, X):
        hit = np.asarray(X) == self.value
        return np.column_stack([hit[:, list(g)].sum(axis=1) for g in self.groups])

    def describe(self):
        return {"type": "group_count", "groups": [list(g) for g in self.groups],
                "value": self.value}


class HistogramQuery:
    """Counts of each listed category."""

    def __init__(self, categories):
        self.categories = tuple(categories)

    def __call__(self, X):
        X = np.asarray(X)
        return np.column_stack([(X == c).sum(axis=1) for c in self.categories])

    def describe(self):
        return {"type": "histogram", "categories": list(self.categories)}


class CeilSumQuery:
    """``ceil(sum(x) / group_size)``: how many full-or-partial groups can be formed."""

    def __init__(self, group_size):
        self.group_size = int(group_size)

    def __call__(self, X):
        total = np.asarray(X).sum(axis=1)
        return (-(-total // self.group_size)).reshape(-1, 1)

    def describe(self):
        return {"type": "ceil_sum", "group_size": self.group_size}


_QUERY_TYPES = {
    "count": lambda d: CountQuery(d.get("value", 1)),
    "group_count": lambda d: GroupCountQuery(d["groups"], d.get("value", 1)),
    "histogram": lambda d: HistogramQuery(d["categories"]),
    "ceil_sum": lambda d: CeilSumQuery(d["group_size"]),
}


def query_from_dict(d):
    try:
        return _QUERY_TYPES[d["type"]](d)
    except KeyError as exc:
        raise ValueError(f"unknown or incomplete query description {d!r}") from exc


# ------------------------------------------------------ space and neighbours


@dataclass(frozen=True)
class DatabaseSpace:
    """All length-``n`` databases over ``alphabet``, optionally restricted to X*.

    ``predicate`` maps an ``(N, n)`` array of databases to a boolean mask
    selecting X*; ``None`` means X* = X.
    """

    alphabet: tuple
    n: int
    predicate: object = None
    label: str = ""
    max_size: int = MAX_DATABASES

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError("alphabet must be a non-empty set of distinct symbols")
        if int(self.n) < 1:
            raise ValueError("n must be positive")
        if self.size > self.max_size:
            raise SpaceTooLargeError(
                f"{len(self.alphabet)}^{self.n} databases exceed the limit {self.max_size}")

    @property
    def size(self):
        return len(self.alphabet) ** int(self.n)

    def codes(self):
        """All databases as integer codes, shape ``(|A|^n, n)``, lexicographic."""
        q, n = len(self.alphabet), int(self.n)
        idx = np.arange(q**n)
        powers = q ** np.arange(n - 1, -1, -1)
        return (idx[:, None] // powers) % q

    def databases(self):
        return np.asarray(self.alphabet)[self.codes()]

    def constrained_codes(self):
        C = self.codes()
        if self.predicate is None:
            return C
        mask = np.asarray(self.predicate(np.asarray(self.alphabet)[C]), dtype=bool)
        return C[mask]

    def constrained(self):
        """X* as an array of databases (rows)."""
        return np.asarray(self.alphabet)[self.constrained_codes()]

    def describe(self):
        return {"alphabet": list(self.alphabet), "n": int(self.n),
                "constrained": self.predicate is not None, "label": self.label}


@dataclass(frozen=True)
class NeighborRelation:
    """Hamming distance between equal-length databases (bounded neighbours)."""

    name: str = "hamming"

    @staticmethod
    def distance(x, y):
        x, y = np.asarray(x), np.asarray(y)
        if x.shape != y.shape:
            raise ValueError("databases must have equal length")
        return int(np.count_nonzero(x != y))

    def pairs(self, codes, q, k):
        """Index pairs ``i < j`` of rows of ``codes`` at distance exactly ``k``."""
        codes = np.asarray(codes, dtype=np.int64)
        N, n = codes.shape
        if k < 1 or k > n or N < 2:
            return np.empty((0, 2), dtype=np.int64)
        powers = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
        keys = codes @ powers
        order = np.argsort(keys)
        sorted_keys = keys[order]
        found = []
        for pos in itertools.combinations(range(n), k):
            pos = list(pos)
            for shift in itertools.product(range(1, q), repeat=k):
                new = (codes[:, pos] + np.asarray(shift)) % q
                key2 = keys + (new - codes[:, pos]) @ powers[pos]
                keep = key2 > keys
                loc = np.searchsorted(sorted_keys, key2[keep])
                loc = np.minimum(loc, N - 1)
                hit = sorted_keys[loc] == key2[keep]
                i = np.flatnonzero(keep)[hit]
                found.append(np.column_stack([i, order[loc[hit]]]))
        if not found:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(found)


# ---------------------------------------------------------------- mechanisms


def tail_window(mech, tail_mass=DEFAULT_TAIL_MASS):
    """Smallest ``W`` with ``P(|U| > W) < tail_mass`` for Double Geometric noise."""
    a = mech.a
    # P(|U| > W) = 2 a^(W+1) / (1 + a)
    w = math.log(tail_mass * (1.0 + a) / 2.0) / math.log(a) - 1.0
    return max(0, int(math.ceil(w)))


class LatticeMechanism:
    """Double Geometric release of ``query(x)``, optionally conditioned on S*.

    Parameters
    ----------
    query : callable
        Maps an ``(N, n)`` array of databases to ``(N, d)`` integer queries.
    mech : NoiseMechanism
        Double Geometric; ``mech.epsilon`` is the nominal budget.
    system : LinearInvariantSystem, optional
        When given, releases are conditioned on landing in it.
    tail_mass : float
        Per-coordinate noise mass allowed outside the enumeration window.
    """

    def __init__(self, query, mech, system=None, tail_mass=DEFAULT_TAIL_MASS):
        if not isinstance(mech, NoiseMechanism) or not mech.is_discrete:
            raise ValueError("a Double Geometric NoiseMechanism is required")
        self.query = query
        self.mech = mech
        self.system = system
        self.tail_mass = float(tail_mass)
        self.window = tail_window(mech, self.tail_mass)

    @property
    def epsilon(self):
        return self.mech.epsilon

    def _grid(self, S):
        lo = S.min(axis=0) - self.window
        hi = S.max(axis=0) + self.window
        axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, S.shape[1])
        if grid.shape[0] > 5 * 10**6:
            raise SpaceTooLargeError("release window too large to enumerate")
        return grid

    def _unconstrained_logp(self, S, grid):
        c0, c1 = self.mech.log_linear()
        dist = np.abs(grid[None, :, :] - S[:, None, :]).sum(axis=-1)
        return S.shape[1] * c0 + c1 * dist

    def log_mass_in_system(self, S):
        """``log P(M(s) in S*)`` for each query row, by window enumeration."""
        S = np.atleast_2d(np.asarray(S, dtype=np.int64))
        if self.system is None:
            return np.zeros(S.shape[0])
        grid = self._grid(S)
        inside = grid[self.system.contains(grid)]
        if inside.shape[0] == 0:
            return np.full(S.shape[0], -np.inf)
        return logsumexp(self._unconstrained_logp(S, inside), axis=1)

    def log_pmf_grid(self, S):
        """Shared outcome grid and ``(len(S), m)`` log-pmf matrix."""
        S = np.atleast_2d(np.asarray(S, dtype=np.int64))
        grid = self._grid(S)
        if self.system is not None:
            grid = grid[self.system.contains(grid)]
        logp = self._unconstrained_logp(S, grid)
        if self.system is not None:
            logp = logp - logsumexp(logp, axis=1, keepdims=True)
        return grid, logp

    def tolerance(self, S=None):
        """Bound on the log-probability error caused by the window."""
        d = 1 if S is None else np.atleast_2d(S).shape[1]
        lost = d * self.tail_mass
        if self.system is None or S is None:
            return lost
        zmin = float(np.exp(np.min(self.log_mass_in_system(S))))
        return lost / max(zmin - lost, np.finfo(float).tiny)

    def describe(self):
        out = {"kind": self.mech.kind, "epsilon": self.mech.epsilon,
               "sensitivity": self.mech.sensitivity, "tail_mass": self.tail_mass,
               "window": self.window}
        if hasattr(self.query, "describe"):
            out["query"] = self.query.describe()
        if self.system is not None:
            out["invariants"] = self.system.to_dict()
        return out


class TabulatedMechanism:
    """A mechanism given directly as a finite pmf per query value.

    ``pmf(s)`` returns a mapping from outcome tuples to probabilities.
    """

    def __init__(self, query, pmf, epsilon):
        self.query = query
        self.pmf = pmf
        self._epsilon = check_positive(epsilon, "epsilon")
        self.system = None
        self.tail_mass = 0.0

    @property
    def epsilon(self):
        return self._epsilon

    def log_pmf_grid(self, S):
        S = np.atleast_2d(np.asarray(S))
        tables = [dict(self.pmf(tuple(s.tolist()))) for s in S]
        outcomes = sorted({tuple(np.atleast_1d(o).tolist()) for t in tables for o in t})
        grid = np.asarray(outcomes)
        logp = np.full((S.shape[0], len(outcomes)), -np.inf)
        index = {o: j for j, o in enumerate(outcomes)}
        for i, t in enumerate(tables):
            for o, p in t.items():
                if p > 0:
                    logp[i, index[tuple(np.atleast_1d(o).tolist())]] = math.log(p)
        return grid, logp

    def log_mass_in_system(self, S):
        return np.zeros(np.atleast_2d(S).shape[0])

    def tolerance(self, S=None):
        return 0.0

    def describe(self):
        return {"kind": "tabulated", "epsilon": self._epsilon}


# ------------------------------------------------------------- pair reduction


def _query_classes(mechanism, space):
    codes = space.constrained_codes()
    X = np.asarray(space.alphabet)[codes]
    S = np.atleast_2d(np.asarray(mechanism.query(X)))
    if S.shape[0] != X.shape[0]:
        S = S.reshape(X.shape[0], -1)
    classes, labels = np.unique(S, axis=0, return_inverse=True)
    return codes, X, classes, labels.reshape(-1)


def _class_pairs(codes, labels, q, k, rel):
    pairs = rel.pairs(codes, q, k)
    if pairs.shape[0] == 0:
        return None
    cp = np.sort(labels[pairs], axis=1)
    return np.unique(cp, axis=0)


def _log_ratio_sup(lp_i, lp_j):
    """sup over singletons and upper level sets of |log P_i(B) - log P_j(B)|."""
    with np.errstate(invalid="ignore"):
        r = lp_i - lp_j
    both_zero = np.isneginf(lp_i) & np.isneginf(lp_j)
    r = np.where(both_zero, 0.0, r)
    if np.any(np.isnan(r)):
        r = np.nan_to_num(r, nan=0.0)
    best = float(np.max(np.abs(r)))
    if not np.isfinite(best):
        return math.inf
    for sign in (1.0, -1.0):
        order = np.argsort(-sign * r, kind="stable")
        ci = np.logaddexp.accumulate(lp_i[order])
        cj = np.logaddexp.accumulate(lp_j[order])
        with np.errstate(invalid="ignore"):
            lr = np.abs(ci - cj)
        lr = lr[np.isfinite(lr)]
        if lr.size:
            best = max(best, float(np.max(lr)))
    return best


def empirical_epsilon(mechanism, space, rel=None, k=1, return_witness=False):
    """Attained privacy loss over ``k``-neighbour pairs in X* (exact pmfs).

    Returns ``VACUOUS`` when X* has no pair at distance ``k``.
    """
    rel = NeighborRelation() if rel is None else rel
    codes, _, classes, labels = _query_classes(mechanism, space)
    cpairs = _class_pairs(codes, labels, len(space.alphabet), int(k), rel)
    if cpairs is None:
        return (VACUOUS, None) if return_witness else VACUOUS
    _, logp = mechanism.log_pmf_grid(classes)
    best, witness = 0.0, None
    for i, j in cpairs:
        if i == j:
            continue
        val = _log_ratio_sup(logp[i], logp[j])
        if val > best:
            best, witness = val, (classes[i].tolist(), classes[j].tolist())
    return (best, witness) if return_witness else best


def gamma_star(mechanism, space, rel=None, k=1, epsilon=None):
    """``(1/(k eps)) log max P(M(x') in S*) / P(M(x) in S*)`` over ``k``-pairs.

    ``mechanism`` is the conditioned mechanism; the truncation masses come
    from its unconstrained counterpart.  Returns ``VACUOUS`` without pairs.
    """
    rel = NeighborRelation() if rel is None else rel
    eps = mechanism.epsilon if epsilon is None else check_positive(epsilon, "epsilon")
    codes, _, classes, labels = _query_classes(mechanism, space)
    cpairs = _class_pairs(codes, labels, len(space.alphabet), int(k), rel)
    if cpairs is None:
        return VACUOUS
    logz = mechanism.log_mass_in_system(classes)
    diff = np.abs(logz[cpairs[:, 0]] - logz[cpairs[:, 1]])
    return float(np.max(diff)) / (int(k) * eps)


def classify_neighborhood(space, rel=None):
    """``(class, min_k)`` for X*; ``min_k`` is ``None`` when destroyed."""
    rel = NeighborRelation() if rel is None else rel
    codes = space.constrained_codes()
    if codes.shape[0] <= 1:
        return DESTROYED, None
    q = len(space.alphabet)
    for k in range(1, int(space.n) + 1):
        if rel.pairs(codes, q, k).shape[0]:
            return (INTACT if k == 1 else SUBSTANTIALLY_DISRUPTED), k
    return DESTROYED, None


# ---------------------------------------------------------------- posteriors


@dataclass
class PosteriorAudit:
    prior: dict
    worst_low: float
    worst_high: float
    epsilon: float
    n_events: int
    bound_ok: bool
    violations: list = field(default_factory=list)
    posterior: dict = None

    def to_dict(self):
        return asdict(self)


def _event_blocks(logp_by_symbol):
    """Singletons plus upper level sets of each symbol's likelihood ratio.

    Yields ``(joint, members)``: ``joint[w, e]`` is ``log P(x_i = w, M in B_e)``
    up to a shared constant and ``members(e)`` lists the outcomes of ``B_e``.
    Level sets come from running sums along each ordering.
    """
    m = logp_by_symbol.shape[1]
    yield logp_by_symbol, lambda e: np.array([e])
    if m < 3:
        return
    mix = logsumexp(logp_by_symbol, axis=0)
    for row in logp_by_symbol:
        with np.errstate(invalid="ignore"):
            r = np.nan_to_num(row - mix, nan=-np.inf)
        order = np.argsort(-r, kind="stable")
        cum = np.logaddexp.accumulate(logp_by_symbol[:, order], axis=1)[:, 1 : m - 1]
        yield cum, (lambda e, order=order: order[: e + 2])


def posterior_audit(mechanism, space, prior, target=0, event=None, epsilon=None,
                    atol=1e-12):
    """Exact Bayes check of ``pi(x_i = w | M(x) in B)`` against ``e^{+-eps} pi(w)``.

    The prior is the product of ``prior`` (a pmf over the alphabet) across
    records, restricted to X* and renormalised.  The reference ``pi(w)`` is the
    prior marginal of record ``target`` under that same restriction.

    Parameters
    ----------
    event : sequence of outcomes, optional
        A single release set to check.  By default every singleton and every
        upper level set of the per-symbol likelihood ratio is checked.
    epsilon : float, optional
        Band half-width on the log scale; defaults to the mechanism budget.
    """
    alphabet = space.alphabet
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (len(alphabet),) or np.any(prior <= 0):
        raise ValueError("prior must be a strictly positive pmf over the alphabet")
    prior = prior / prior.sum()
    eps = mechanism.epsilon if epsilon is None else check_positive(epsilon, "epsilon")
    codes, _, classes, labels = _query_classes(mechanism, space)
    log_prior_x = np.log(prior)[codes].sum(axis=1)
    grid, logp = mechanism.log_pmf_grid(classes)

    # per target symbol: log sum_x pi(x) p(o | x) over databases with x_i = w
    sym = codes[:, int(target)]
    q = len(alphabet)
    logp_by_symbol = np.full((q, grid.shape[0]), -np.inf)
    marg = np.full(q, -np.inf)
    for w in range(q):
        sel = sym == w
        if not np.any(sel):
            continue
        lw = log_prior_x[sel]
        marg[w] = logsumexp(lw)
        # group by query class to keep the matrix small
        cls, inv = np.unique(labels[sel], return_inverse=True)
        weights = np.array([logsumexp(lw[inv == c]) for c in range(cls.size)])
        logp_by_symbol[w] = logsumexp(logp[cls] + weights[:, None], axis=0)
    pi = np.exp(marg - logsumexp(marg))

    if event is not None:
        ev = np.atleast_2d(np.asarray(event))
        lookup = {tuple(row): j for j, row in enumerate(grid.tolist())}
        idx = np.array([lookup[tuple(np.atleast_1d(e).tolist())] for e in ev
                        if tuple(np.atleast_1d(e).tolist()) in lookup], dtype=np.int64)
        if idx.size == 0 or not np.isfinite(logsumexp(logp_by_symbol[:, idx])):
            raise ValueError("event has zero probability under every database")
        blocks = [(logsumexp(logp_by_symbol[:, idx], axis=1)[:, None], lambda e: idx)]
    else:
        blocks = _event_blocks(logp_by_symbol)

    low = (np.minimum(math.exp(-eps) * pi, 1.0) - atol)[:, None]
    high = (np.minimum(math.exp(eps) * pi, 1.0) + atol)[:, None]
    live = pi > 0
    worst_low, worst_high = math.inf, -math.inf
    violations, checked, last = [], 0, None
    for joint, members in blocks:
        total = logsumexp(joint, axis=0)
        cols = np.flatnonzero(np.isfinite(total))
        if cols.size == 0:
            continue
        post = np.exp(joint[:, cols] - total[cols])
        checked += cols.size
        last = post[:, -1]
        ratio = post[live] / pi[live, None]
        worst_low = min(worst_low, float(np.min(ratio)))
        worst_high = max(worst_high, float(np.max(ratio)))
        for w, c in zip(*np.nonzero((post < low) | (post > high))):
            violations.append({"symbol": alphabet[w], "posterior": float(post[w, c]),
                               "prior": float(pi[w]),
                               "event": grid[members(cols[c])].tolist()[:10]})
    if checked == 0:
        raise ValueError("no event with positive probability")
    return PosteriorAudit(
        prior={str(a): float(p) for a, p in zip(alphabet, pi)},
        worst_low=worst_low,
        worst_high=worst_high,
        epsilon=eps,
        n_events=checked,
        bound_ok=not violations,
        violations=violations,
        posterior={str(a): float(p) for a, p in zip(alphabet, last)},
    )


# ------------------------------------------------------------ Monte Carlo


class SamplingMechanism:
    """A mechanism known only through a sampler ``sample(s, size, rng)``.

    ``sample`` returns an array whose first axis has length ``size``; the
    scalar ``statistic`` of each release (default: first coordinate) is what
    gets binned.
    """

    def __init__(self, query, sample, statistic=None):
        self.query = query
        self.sample = sample
        self.statistic = statistic

    def draw(self, s, size, rng):
        out = np.asarray(self.sample(np.asarray(s), size, rng))
        if self.statistic is not None:
            return np.asarray(self.statistic(out), dtype=float)
        return out.reshape(size, -1)[:, 0].astype(float)


@dataclass(frozen=True)
class MCEpsilonEstimate:
    estimate: float
    num_samples: int
    n_events: int
    n_class_pairs: int
    smoothing: float
    min_cell_count: int
    note: str = "plug-in estimate from sampled frequencies; not a privacy guarantee"

    def to_dict(self):
        return asdict(self)


def empirical_epsilon_mc(mechanism, space, rel=None, k=1, num_samples=10**6, smoothing=0.5,
                         rng=None, n_bins=20, min_cell_count=MIN_CELL_COUNT):
    """Plug-in estimate of the attained privacy loss from samples.

    Events are the bins between pooled quantiles plus the lower and upper
    tails at each quantile.  Only events holding at least ``min_cell_count``
    samples under both databases enter the sup.

    Raises
    ------
    InsufficientSamplesError
        When no event reaches ``min_cell_count`` samples.
    """
    rel = NeighborRelation() if rel is None else rel
    rng = check_rng(rng)
    num_samples = int(num_samples)
    if num_samples < min_cell_count:
        raise InsufficientSamplesError(
            f"{num_samples} samples cannot fill a cell of {min_cell_count}")
    codes, _, classes, labels = _query_classes(mechanism, space)
    cpairs = _class_pairs(codes, labels, len(space.alphabet), int(k), rel)
    if cpairs is None:
        return VACUOUS
    needed = np.unique(cpairs)
    draws = {int(c): mechanism.draw(classes[c], num_samples, rng) for c in needed}

    best, n_events = 0.0, 0
    for i, j in cpairs:
        if i == j:
            continue
        xi, xj = draws[int(i)], draws[int(j)]
        pooled = np.concatenate([xi, xj])
        edges = np.unique(np.quantile(pooled, np.linspace(0, 1, n_bins + 1)[1:-1]))
        ci = [np.count_nonzero(xi <= e) for e in edges]
        cj = [np.count_nonzero(xj <= e) for e in edges]
        counts = []
        for a, b in zip(ci, cj):
            counts.append((a, b))                              # lower tail
            counts.append((num_samples - a, num_samples - b))  # upper tail
        bi = np.diff(np.concatenate([[0], ci, [num_samples]]))
        bj = np.diff(np.concatenate([[0], cj, [num_samples]]))
        counts.extend(zip(bi.tolist(), bj.tolist()))
        n_cells = len(bi)
        for a, b in counts:
            if a < min_cell_count or b < min_cell_count:
                continue
            n_events += 1
            pa = (a + smoothing) / (num_samples + smoothing * n_cells)
            pb = (b + smoothing) / (num_samples + smoothing * n_cells)
            best = max(best, abs(math.log(pa) - math.log(pb)))
    if n_events == 0 and any(i != j for i, j in cpairs):
        raise InsufficientSamplesError("no event reached the minimum cell count")
    return MCEpsilonEstimate(best, num_samples, n_events, int(cpairs.shape[0]),
                             float(smoothing), int(min_cell_count))


# -------------------------------------------------------------- scenarios


@dataclass
class AuditReport:
    scenario: str
    space: dict
    mechanism: dict
    epsilon_base: float
    k: int
    neighborhood_class: str
    attained_epsilon: object
    gamma_star: object
    empirical_gamma: object
    group_bound: object
    group_bound_holds: bool
    posterior_violations: list
    posterior_checks: list
    tail_tolerance: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        for key in ("attained_epsilon", "gamma_star", "empirical_gamma", "group_bound"):
            if d[key] is VACUOUS:
                d[key] = "vacuous"
        return d

    def to_json(self, **meta):
        payload = dict(meta)
        payload["report"] = self.to_dict()
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _system_predicate(query, system):
    return lambda X: system.contains(np.atleast_2d(query(X)))


def trivial_scenario(epsilon=1.0, n=3):
    """Unconstrained Double Geometric count of ones; X* = X."""
    space = DatabaseSpace((0, 1), n, label="trivial")
    mech = LatticeMechanism(CountQuery(1), NoiseMechanism.double_geometric(epsilon))
    return space, mech


def secrecy_singleton_scenario(epsilon=1.0, n=10, group_size=4, lo=5, hi=8):
    """Rounded count ``ceil(sum x / group_size)`` with X* = {lo <= sum x <= hi}.

    The bounds are chosen so that the query takes a single value on X*.
    """
    query = CeilSumQuery(group_size)
    values = {-(-t // group_size) for t in range(lo, hi + 1)}
    if len(values) != 1:
        raise ValueError("the sum window must map to a single query value")
    v = values.pop()
    system = LinearInvariantSystem(1, A=[[1]], a=[v])
    space = DatabaseSpace(
        (0, 1), n, predicate=lambda X: (np.sum(X, axis=1) >= lo) & (np.sum(X, axis=1) <= hi),
        label="secrecy-singleton")
    mech = LatticeMechanism(query, NoiseMechanism.double_geometric(epsilon), system)
    return space, mech


def twobin_scenario(epsilon=1.0, n=10, total=None):
    """Ones counted in two halves of a binary database, total number of ones fixed.

    Noise is Double Geometric with sensitivity 2 per cell, i.e. ``epsilon``
    is the budget of the whole two-cell release.
    """
    total = n // 2 if total is None else int(total)
    half = n // 2
    query = GroupCountQuery([range(half), range(half, n)])
    system = LinearInvariantSystem(2, A=[[1, 1]], a=[total])
    space = DatabaseSpace((0, 1), n, predicate=lambda X: np.sum(X, axis=1) == total,
                          label="twobin")
    mech = LatticeMechanism(query, NoiseMechanism.double_geometric(epsilon, sensitivity=2.0),
                            system)
    return space, mech


def scenario_from_dict(d):
    """User scenario: alphabet, n, query, epsilon, optional sensitivity and invariants.

    X* is the preimage of the invariant set under the query.
    """
    query = query_from_dict(d["query"])
    mech = NoiseMechanism.double_geometric(d.get("epsilon", 1.0), d.get("sensitivity", 1.0))
    system = None
    predicate = None
    if d.get("invariants") is not None:
        system = LinearInvariantSystem.from_dict(d["invariants"])
        predicate = _system_predicate(query, system)
    space = DatabaseSpace(tuple(d.get("alphabet", (0, 1))), int(d["n"]), predicate=predicate,
                          label=d.get("name", "custom"))
    return space, LatticeMechanism(query, mech, system, d.get("tail_mass", DEFAULT_TAIL_MASS))


BUILTIN_SCENARIOS = {
    "trivial": trivial_scenario,
    "secrecy-singleton": secrecy_singleton_scenario,
    "twobin": twobin_scenario,
}


def audit(space, mechanism, name="custom", posterior_epsilons=None, prior=None):
    """Run every exact check on one scenario and collect an :class:`AuditReport`.

    Posterior checks use the band ``(1 + gamma*) k eps`` for each ``eps`` in
    ``posterior_epsilons`` (the mechanism is rebuilt at that budget).
    """
    rel = NeighborRelation()
    cls, k = classify_neighborhood(space, rel)
    eps = mechanism.epsilon
    if k is None:
        attained = g_star = emp_gamma = bound = VACUOUS
        holds = True
    else:
        attained = empirical_epsilon(mechanism, space, rel, k)
        g_star = gamma_star(mechanism, space, rel, k)
        emp_gamma = attained / (k * eps) - 1.0
        tol = mechanism.tolerance(_query_classes(mechanism, space)[2])
        bound = (1.0 + g_star) * k * eps
        holds = bool(attained <= bound + 1e-9 + tol)

    prior = np.full(len(space.alphabet), 1.0 / len(space.alphabet)) if prior is None else prior
    checks, violations = [], []
    for e in (posterior_epsilons or [eps]):
        m_e = _with_epsilon(mechanism, e)
        if k is None:
            band = e
        else:
            g = gamma_star(m_e, space, rel, k)
            band = (1.0 + g) * k * e
        res = posterior_audit(m_e, space, prior, target=0, epsilon=band)
        checks.append({"epsilon": e, "band": band, "n_events": res.n_events,
                       "worst_low": res.worst_low, "worst_high": res.worst_high,
                       "bound_ok": res.bound_ok})
        violations.extend(dict(v, epsilon=e) for v in res.violations)
    return AuditReport(
        scenario=name,
        space=space.describe(),
        mechanism=mechanism.describe(),
        epsilon_base=eps,
        k=0 if k is None else k,
        neighborhood_class=cls,
        attained_epsilon=attained,
        gamma_star=g_star,
        empirical_gamma=emp_gamma,
        group_bound=bound,
        group_bound_holds=holds,
        posterior_violations=violations,
        posterior_checks=checks,
        tail_tolerance=mechanism.tail_mass,
    )


def _with_epsilon(mechanism, epsilon):
    if isinstance(mechanism, LatticeMechanism):
        return LatticeMechanism(mechanism.query, mechanism.mech.with_epsilon(epsilon),
                                mechanism.system, mechanism.tail_mass)
    if epsilon != mechanism.epsilon:
        raise ValueError("only lattice mechanisms can be re-budgeted")
    return mechanism


def run_scenario(name, epsilon=1.0, posterior_epsilons=(0.5, 1.0, 2.0)):
    if name not in BUILTIN_SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(BUILTIN_SCENARIOS)}")
    space, mech = BUILTIN_SCENARIOS[name](epsilon)
    return audit(space, mech, name=name, posterior_epsilons=list(posterior_epsilons))
