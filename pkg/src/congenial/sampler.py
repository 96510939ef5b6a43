"""Draws from an additive mechanism conditioned on its invariant set.

Two samplers are provided.  :func:`rejection_sample` redraws the unconstrained
mechanism until the release lands in the invariant set.  :func:`mis_chain`
runs a Metropolized independence sampler: the coordinates in a proposal index
set ``I`` are drawn around the confidential query, the remaining coordinates
are solved from the equality constraints, and the proposal is accepted with
probability

    min(1, p(s~) 1(B s~ >= b) q(s_I) / (p(s) q(s~_I)))

where ``p`` is the unconstrained mechanism and ``q`` the proposal.  The
normalising constant of the conditional distribution is never needed.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_query, check_query_matrix, check_rng, spawn_rngs
from .invariants import (
    INTEGRALITY_TOL,
    Completion,
    LinearInvariantSystem,
    auto_select_index_set,
    satisfies,
)
from .mechanisms import DOUBLE_GEOMETRIC, KINDS, NoiseMechanism

_CHUNK = 1 << 16


class RejectionSamplingError(RuntimeError):
    """Rejection sampling gave up; the invariant set has (near) zero mass."""

    def __init__(self, attempts, accepted=0):
        self.attempts = attempts
        self.accepted = accepted
        super().__init__(
            f"no draw landed in the invariant set after {attempts} attempts"
            if not accepted
            else f"only {accepted} draws accepted after {attempts} attempts"
        )


@dataclass(frozen=True)
class ProposalSpec:
    """Independence proposal on the free coordinates, centred at the
    confidential query, from the same family as the mechanism but with its own
    dispersion ``epsilon``."""

    kind: str
    epsilon: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        object.__setattr__(self, "epsilon", check_positive(self.epsilon, "epsilon"))

    @classmethod
    def like(cls, mech, epsilon=None):
        return cls(mech.kind, mech.epsilon if epsilon is None else epsilon, mech.sensitivity)

    @property
    def mechanism(self):
        return NoiseMechanism(self.kind, self.epsilon, self.sensitivity)


@dataclass
class ChainOutput:
    """States of a Metropolized independence chain.

    ``draws[t]`` is the state after iteration ``t + 1``; ``accepted[t]`` tells
    whether that iteration accepted its proposal.
    """

    draws: np.ndarray
    accepted: np.ndarray
    seed: object = None
    burn_in: int = 0
    index_set: tuple = field(default_factory=tuple)

    @property
    def nsim(self):
        return int(self.accepted.shape[0])

    @property
    def acceptance_count(self):
        return int(np.count_nonzero(self.accepted))

    @property
    def acceptance_rate(self):
        return self.acceptance_count / self.nsim

    def samples(self):
        """Draws after burn-in."""
        return self.draws[self.burn_in :]

    def to_csv(self, path, cells=None):
        """Write one row per iteration: index, selected cells, accepted flag."""
        cells = range(self.draws.shape[1]) if cells is None else list(cells)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration"] + [f"cell_{c}" for c in cells] + ["accepted"])
            for t in range(self.nsim):
                row = self.draws[t, cells]
                w.writerow([t + 1] + [_fmt(v) for v in row] + [int(self.accepted[t])])


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


class _IndependenceKernel:
    """Proposal generation and log-weights ``log p(s) - log q(s_I)`` on S*."""

    def __init__(self, mech, s_star, sys, I, proposal):
        self.mech = mech
        self.sys = sys
        self.discrete = mech.is_discrete
        self.s_star = check_query(s_star, integer=self.discrete, name="s_star")
        if self.s_star.shape[0] != sys.d:
            raise ValueError("s_star and the invariant system disagree on dimension")
        self.proposal = ProposalSpec.like(mech) if proposal is None else proposal
        if self.proposal.kind != mech.kind:
            raise ValueError("proposal must come from the same family as the mechanism")
        self.qmech = self.proposal.mechanism
        I = auto_select_index_set(sys) if I is None else I
        self.completion = Completion(sys, I)
        self.I = self.completion.I
        self.tol = sys.default_tol

    def log_weight(self, S, integral=None):
        S = np.atleast_2d(S)
        logp = self.mech.logpdf(S - self.s_star).sum(axis=-1)
        logq = self.qmech.logpdf(S[:, self.I] - self.s_star[self.I]).sum(axis=-1)
        w = logp - logq
        feasible = self.sys.inequality_slack(S) >= -self.tol if self.sys.d_B else True
        if integral is not None:
            feasible = feasible & integral
        return np.where(feasible, w, -np.inf)

    def propose(self, shape, rng):
        """Proposals of shape ``shape + (d,)`` and their log-weights."""
        parts, w = self.propose_parts(int(np.prod(shape)), rng)
        S = self.assemble(parts, slice(None))
        return S.reshape(tuple(shape) + (self.sys.d,)), w.reshape(shape)

    def propose_parts(self, n, rng):
        """Draw ``n`` proposals without materialising full vectors.

        Returns ``((S_I, S_c), logw)``; :meth:`assemble` builds full vectors
        for the rows that are actually needed.
        """
        I, Ic, d = self.I, self.completion.Ic, self.sys.d
        U = self.qmech.sample((n, I.size), rng)
        S_I = self.s_star[I] + U
        ok = np.ones(n, dtype=bool)
        S_c = np.empty((n, 0), dtype=S_I.dtype)
        if Ic.size:
            S_c = self.completion.solve_complement(S_I.astype(float))
            if self.discrete:
                rounded = np.rint(S_c)
                ok &= np.max(np.abs(S_c - rounded), axis=-1) <= INTEGRALITY_TOL
                S_c = rounded.astype(np.int64)
        # both families have log-densities c0 + c1 |u|, so the proposal part
        # of the weight only needs the noise already drawn
        p0, p1 = self.mech.log_linear()
        q0, q1 = self.qmech.log_linear()
        w = d * p0 - I.size * q0 + (p1 - q1) * np.abs(U).sum(axis=-1)
        if Ic.size:
            w += p1 * np.abs(S_c - self.s_star[Ic]).sum(axis=-1)
        if self.sys.d_B:
            if self.sys._plain_bounds:
                b = self.sys.b
                ok &= np.min(S_I - b[I], axis=-1) >= -self.tol
                if Ic.size:
                    ok &= np.min(S_c - b[Ic], axis=-1) >= -self.tol
            else:
                ok &= self.sys.inequality_slack(self.assemble((S_I, S_c), slice(None))) >= -self.tol
        w[~ok] = -np.inf
        return (S_I, S_c), w

    def assemble(self, parts, rows):
        S_I, S_c = parts[0][rows], parts[1][rows]
        out = np.empty(S_I.shape[:-1] + (self.sys.d,), dtype=S_I.dtype)
        out[..., self.I] = S_I
        out[..., self.completion.Ic] = S_c
        return out


def _initial_state(kernel, s0):
    s0 = kernel.s_star if s0 is None else check_query(s0, integer=kernel.discrete, name="s0")
    if s0.shape[0] != kernel.sys.d or not satisfies(s0, kernel.sys):
        raise ValueError("initial state must satisfy the invariant system")
    w0 = float(kernel.log_weight(s0)[0])
    if not np.isfinite(w0):
        raise ValueError("initial state has zero target probability")
    return s0, w0


def _run_independence_chain(log_u, logw, w_cur):
    """Sequential accept/reject; returns (index of state per step, accepted)."""
    n = log_u.shape[0]
    state = np.empty(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=bool)
    cur = -1
    lu = log_u.tolist()
    lw = logw.tolist()
    for t in range(n):
        wt = lw[t]
        if lu[t] < wt - w_cur:
            cur = t
            w_cur = wt
            accepted[t] = True
        state[t] = cur
    return state, accepted, w_cur


def mis_chain(mech, s_star, sys, I=None, proposal=None, s0=None, nsim=1000, rng=None,
              burn_in=None, keep_trace=True):
    """Metropolized independence sampler targeting the mechanism given S*.

    Parameters
    ----------
    mech : NoiseMechanism
        The unconstrained mechanism whose conditional law is targeted.
    s_star : array-like
        Confidential query; the mechanism and the proposal are centred here.
    sys : LinearInvariantSystem
    I : sequence of int, optional
        Proposal index set (0-based).  Chosen by column pivoting when omitted.
    proposal : ProposalSpec, optional
        Defaults to the mechanism's own family and budget.
    s0 : array-like, optional
        Initial state; defaults to ``s_star``, which is always feasible.
    nsim : int
    rng : int or numpy.random.Generator
    burn_in : int, optional
        Defaults to 10% of ``nsim``.  Only recorded; all states are returned.
    keep_trace : bool, default=True
        When False only the final state is kept in ``draws``.

    Returns
    -------
    ChainOutput
    """
    nsim = int(nsim)
    if nsim < 1:
        raise ValueError("nsim must be at least 1")
    seed = rng if not isinstance(rng, np.random.Generator) else None
    rng = check_rng(rng)
    kernel = _IndependenceKernel(mech, s_star, sys, I, proposal)
    cur_state, w_cur = _initial_state(kernel, s0)
    burn_in = nsim // 10 if burn_in is None else int(burn_in)
    dtype = np.int64 if kernel.discrete else float

    draws = np.empty((nsim if keep_trace else 1, sys.d), dtype=dtype)
    accepted = np.zeros(nsim, dtype=bool)
    for start in range(0, nsim, _CHUNK):
        n = min(_CHUNK, nsim - start)
        parts, logw = kernel.propose_parts(n, rng)
        log_u = np.log(rng.random(n))
        idx, acc, w_cur = _run_independence_chain(log_u, logw, w_cur)
        accepted[start : start + n] = acc
        hits = np.flatnonzero(acc)
        if keep_trace:
            # row 0 holds the incoming state, row k the k-th acceptance
            pool = np.vstack([cur_state[None, :], kernel.assemble(parts, hits)])
            draws[start : start + n] = pool[np.cumsum(acc)]
        if hits.size:
            cur_state = kernel.assemble(parts, hits[-1]).astype(dtype)
    if not keep_trace:
        draws[0] = cur_state
    return ChainOutput(draws, accepted, seed=seed, burn_in=burn_in,
                       index_set=tuple(int(i) for i in kernel.I))


def mis_sample(mech, s_star, sys, I=None, proposal=None, nsim=1000, n_chains=1, rng=None,
               s0=None, chunk=None):
    """Run ``n_chains`` independent chains side by side; keep final states.

    Returns
    -------
    states : ndarray, shape (n_chains, d)
    acceptance_rate : ndarray, shape (n_chains,)
    """
    nsim, n_chains = int(nsim), int(n_chains)
    if nsim < 1 or n_chains < 1:
        raise ValueError("nsim and n_chains must be positive")
    rng = check_rng(rng)
    kernel = _IndependenceKernel(mech, s_star, sys, I, proposal)
    s0, w0 = _initial_state(kernel, s0)
    dtype = np.int64 if kernel.discrete else float
    states = np.tile(s0.astype(dtype), (n_chains, 1))
    w_cur = np.full(n_chains, w0)
    n_acc = np.zeros(n_chains, dtype=np.int64)
    if chunk is None:
        chunk = max(1, _CHUNK // n_chains)
    cols = np.arange(n_chains)
    for start in range(0, nsim, chunk):
        n = min(chunk, nsim - start)
        parts, logw = kernel.propose_parts(n * n_chains, rng)
        logw = logw.reshape(n, n_chains)
        log_u = np.log(rng.random((n, n_chains)))
        last = np.full(n_chains, -1)
        for t in range(n):
            acc = log_u[t] < logw[t] - w_cur
            w_cur = np.where(acc, logw[t], w_cur)
            last = np.where(acc, t, last)
            n_acc += acc
        moved = last >= 0
        states[moved] = kernel.assemble(parts, last[moved] * n_chains + cols[moved])
    return states, n_acc / nsim


def acceptance_sweep(mech, s_star, sys, I, eps_grid, nsim, rng):
    """Acceptance rate of the chain for each proposal dispersion in the grid.

    Each grid point runs on its own substream of ``rng``.
    """
    grid = [check_positive(e, "proposal epsilon") for e in eps_grid]
    out = []
    for eps_q, sub in zip(grid, spawn_rngs(rng, len(grid))):
        chain = mis_chain(mech, s_star, sys, I=I, proposal=ProposalSpec.like(mech, eps_q),
                          nsim=nsim, rng=sub, keep_trace=False)
        out.append((eps_q, chain.acceptance_rate))
    return out


def rejection_sample(mech, s_star, sys, max_tries=10**6, rng=None, size=None, batch=4096):
    """Exact draws from the mechanism conditioned on landing in ``sys``.

    Raises :class:`RejectionSamplingError` once ``max_tries`` unconstrained
    draws have been spent without collecting ``size`` accepted draws.
    """
    rng = check_rng(rng)
    s_star = check_query(s_star, integer=mech.is_discrete, name="s_star")
    need = 1 if size is None else int(size)
    kept, n_kept, attempts = [], 0, 0
    while n_kept < need:
        if attempts >= max_tries:
            raise RejectionSamplingError(attempts, n_kept)
        n = min(batch, max_tries - attempts)
        draws = s_star + mech.sample((n, s_star.shape[0]), rng)
        ok = sys.contains(draws)
        attempts += n
        if np.any(ok):
            kept.append(draws[ok])
            n_kept += int(np.count_nonzero(ok))
    out = np.concatenate(kept)[:need]
    return out[0] if size is None else out


class CongenialMechanism(TransformerMixin, BaseEstimator):
    """Additive mechanism conditioned on the invariants of each confidential row.

    Each row of ``X`` is a confidential query ``s*``.  ``invariants`` is either
    a fixed :class:`LinearInvariantSystem` or a callable building one from
    ``s*`` (invariants are statistics of the confidential data).  Every
    transformed row is the final state of an independent chain of length
    ``n_iter`` started at ``s*``, or an exact rejection draw when
    ``method="rejection"``.

    Parameters
    ----------
    epsilon : float, default=1.0
        Per-cell budget of the unconstrained mechanism.
    kind : {"double_geometric", "laplace"}, default="double_geometric"
    sensitivity : float, default=1.0
    invariants : LinearInvariantSystem or callable
    index_set : sequence of int, optional
    epsilon_proposal : float, optional
        Proposal dispersion; defaults to ``epsilon``.
    n_iter : int, default=10000
    method : {"mis", "rejection"}, default="mis"
    max_tries : int, default=10**7
        Rejection sampling budget per row.
    random_state : int or numpy.random.Generator
    """

    def __init__(self, epsilon=1.0, kind=DOUBLE_GEOMETRIC, sensitivity=1.0, invariants=None,
                 index_set=None, epsilon_proposal=None, n_iter=10000, method="mis",
                 max_tries=10**7, random_state=None):
        self.epsilon = epsilon
        self.kind = kind
        self.sensitivity = sensitivity
        self.invariants = invariants
        self.index_set = index_set
        self.epsilon_proposal = epsilon_proposal
        self.n_iter = n_iter
        self.method = method
        self.max_tries = max_tries
        self.random_state = random_state

    def _system_for(self, s_star):
        if isinstance(self.invariants, LinearInvariantSystem):
            return self.invariants
        if callable(self.invariants):
            return self.invariants(s_star)
        raise ValueError("invariants must be a LinearInvariantSystem or a callable")

    def fit(self, X, y=None):
        if self.method not in ("mis", "rejection"):
            raise ValueError("method must be 'mis' or 'rejection'")
        self.mechanism_ = NoiseMechanism(self.kind, self.epsilon, self.sensitivity)
        X = check_query_matrix(X, integer=self.mechanism_.is_discrete)
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, s_star, n_releases, rng):
        """``n_releases`` independent releases for a single confidential query."""
        check_is_fitted(self, "mechanism_")
        s_star = check_query(s_star, integer=self.mechanism_.is_discrete)
        sys = self._system_for(s_star)
        if self.method == "rejection":
            return rejection_sample(self.mechanism_, s_star, sys, self.max_tries, rng,
                                    size=n_releases), np.ones(n_releases)
        I = self.index_set if self.index_set is not None else sys.index_set
        proposal = ProposalSpec.like(self.mechanism_, self.epsilon_proposal)
        return mis_sample(self.mechanism_, s_star, sys, I=I, proposal=proposal,
                          nsim=self.n_iter, n_chains=n_releases, rng=rng)

    def transform(self, X):
        check_is_fitted(self, "mechanism_")
        X = check_query_matrix(X, integer=self.mechanism_.is_discrete)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        rngs = spawn_rngs(check_rng(self.random_state), X.shape[0])
        out, rates = [], []
        for row, sub in zip(X, rngs):
            states, rate = self.sample(row, 1, sub)
            out.append(states[0])
            rates.append(float(rate[0]))
        self.acceptance_rate_ = np.asarray(rates)
        return np.vstack(out)

