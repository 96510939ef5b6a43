"""Linear invariant systems ``{s : A s = a, B s >= b}`` and proposal index sets.

Indices are 0-based throughout the Python API and in the JSON format.
"""

import csv
from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog

REAL_TOL = 1e-8
INTEGER_TOL = 0.0
SOLVE_TOL = 1e-10
INTEGRALITY_TOL = 1e-6


class InfeasibleSystemError(ValueError):
    """The invariant system has no feasible point."""


class IndexSetError(ValueError):
    """A proposal index set is malformed or leaves a singular complement block."""


def _as_matrix(M, d, name):
    if M is None:
        return np.zeros((0, d))
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2 or M.shape[1] != d:
        raise ValueError(f"{name} must have shape (rows, {d}), got {M.shape}")
    return M


def _as_vector(v, n, name):
    if v is None:
        v = np.zeros(0)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {v.shape}")
    return v


def _is_integral(*arrays):
    return all(np.all(arr == np.rint(arr)) for arr in arrays)


class LinearInvariantSystem:
    """The invariant set ``{s in R^d : A s = a, B s >= b}``.

    Construction checks that ``A`` has full row rank and that the system is
    consistent by solving a feasibility linear program; an infeasible system
    raises :class:`InfeasibleSystemError`.

    Parameters
    ----------
    d : int
        Dimension of the query space.
    A, a : array-like, optional
        Equality constraints.  ``A`` has shape ``(d_A, d)``.
    B, b : array-like, optional
        Inequality constraints ``B s >= b``.
    index_set : sequence of int, optional
        A preferred proposal index set (0-based) carried along with the system.
    """

    def __init__(self, d, A=None, a=None, B=None, b=None, index_set=None):
        d = int(d)
        if d < 1:
            raise ValueError("d must be a positive integer")
        self.d = d
        self.A = _as_matrix(A, d, "A")
        self.a = _as_vector(a, self.A.shape[0], "a")
        self.B = _as_matrix(B, d, "B")
        self.b = _as_vector(b, self.B.shape[0], "b")
        for arr in (self.A, self.a, self.B, self.b):
            arr.setflags(write=False)
        if self.d_A and np.linalg.matrix_rank(self.A) != self.d_A:
            raise ValueError("A must have full row rank")
        if self.d_A > d:
            raise ValueError("more equality constraints than coordinates")
        self.integer = _is_integral(self.A, self.a, self.B, self.b)
        self._bounds = self._bound_form()
        self._plain_bounds = (
            self._bounds is not None
            and np.array_equal(self._bounds[0], np.arange(d))
            and np.all(self._bounds[1] == 1)
        )
        self.index_set = None if index_set is None else tuple(int(i) for i in index_set)
        self.feasible_point = self._find_feasible_point()
        self.feasible_point.setflags(write=False)

    @property
    def d_A(self):
        return self.A.shape[0]

    @property
    def d_B(self):
        return self.B.shape[0]

    @property
    def default_tol(self):
        return INTEGER_TOL if self.integer else REAL_TOL

    def _find_feasible_point(self):
        if self.d_B == 0:
            if self.d_A == 0:
                return np.zeros(self.d)
            x, *_ = np.linalg.lstsq(self.A, self.a, rcond=None)
            if np.max(np.abs(self.A @ x - self.a)) > 1e-8 * (1 + np.max(np.abs(self.a))):
                raise InfeasibleSystemError("equality constraints are inconsistent")
            return x
        res = linprog(
            np.zeros(self.d),
            A_ub=-self.B,
            b_ub=-self.b,
            A_eq=self.A if self.d_A else None,
            b_eq=self.a if self.d_A else None,
            bounds=[(None, None)] * self.d,
            method="highs",
        )
        if res.status != 0:
            raise InfeasibleSystemError(f"invariant system is infeasible: {res.message}")
        return np.asarray(res.x, dtype=float)

    def _bound_form(self):
        # rows of B with a single nonzero entry are coordinate bounds; they
        # are checked by indexing instead of a dense product
        if self.d_B == 0:
            return None
        nz = self.B != 0
        if not np.all(nz.sum(axis=1) == 1):
            return None
        cols = np.argmax(nz, axis=1)
        return cols, self.B[np.arange(self.d_B), cols]

    def tolerance_for(self, S):
        """0 for integer vectors against an integer system, 1e-8 otherwise."""
        S = np.asarray(S)
        if self.integer and np.issubdtype(S.dtype, np.integer):
            return INTEGER_TOL
        return REAL_TOL

    def equality_residual(self, S):
        S = np.asarray(S, dtype=float)
        if self.d_A == 0:
            return np.zeros(S.shape[:-1])
        return np.max(np.abs(S @ self.A.T - self.a), axis=-1)

    def inequality_slack(self, S):
        """Smallest entry of ``B s - b`` (``+inf`` without inequality rows)."""
        S = np.asarray(S)
        if self.d_B == 0:
            return np.full(S.shape[:-1], np.inf)
        if self._bounds is not None:
            cols, coef = self._bounds
            if self._plain_bounds:
                return np.min(S - self.b, axis=-1)
            return np.min(S[..., cols] * coef - self.b, axis=-1)
        return np.min(S @ self.B.T - self.b, axis=-1)

    def contains(self, S, tol=None):
        """Vectorised membership test over the last axis of ``S``."""
        S = np.asarray(S)
        tol = self.tolerance_for(S) if tol is None else float(tol)
        if S.shape[-1] != self.d:
            raise ValueError(f"expected vectors of length {self.d}, got {S.shape[-1]}")
        return (self.equality_residual(S) <= tol) & (self.inequality_slack(S) >= -tol)

    def to_dict(self):
        def encode(arr):
            return np.rint(arr).astype(int).tolist() if self.integer else arr.tolist()

        out = {
            "d": self.d,
            "A": encode(self.A),
            "a": encode(self.a),
            "B": encode(self.B),
            "b": encode(self.b),
        }
        if self.index_set is not None:
            out["index_set"] = list(self.index_set)
        return out

    @classmethod
    def from_dict(cls, data):
        if "d" not in data:
            raise ValueError("invariant JSON requires the field 'd'")
        return cls(
            data["d"],
            A=data.get("A") or None,
            a=data.get("a") or None,
            B=data.get("B") or None,
            b=data.get("b") or None,
            index_set=data.get("index_set"),
        )

    def __repr__(self):
        return f"LinearInvariantSystem(d={self.d}, d_A={self.d_A}, d_B={self.d_B})"


@dataclass(frozen=True)
class InvariantSetDescriptor:
    """An invariant system together with a note on where it came from.

    The invariant set is computed from the confidential data, so the
    confidential query always satisfies it exactly.
    """

    system: LinearInvariantSystem
    provenance: str = "computed from the confidential query"

    def check_confidential(self, s_star):
        if not satisfies(s_star, self.system):
            raise ValueError("confidential query does not satisfy its own invariants")
        return True


def load_system(path):
    with open(path) as fh:
        return LinearInvariantSystem.from_dict(json.load(fh))


def dump_system(system, path):
    Path(path).write_text(json.dumps(system.to_dict(), indent=2) + "\n")


def satisfies(s, sys, tol=None):
    """``True`` iff ``|A s - a|_inf <= tol`` and ``B s >= b - tol``.

    ``tol`` defaults to 0 when both the system and ``s`` are integer-valued
    and to ``1e-8`` otherwise.
    """
    s = np.asarray(s)
    if s.ndim != 1 or s.shape[0] != sys.d:
        raise ValueError(f"expected a vector of length {sys.d}, got shape {s.shape}")
    return bool(sys.contains(s, tol))


def _check_index_set(I, sys):
    I = np.asarray(sorted(int(i) for i in I), dtype=np.int64)
    if I.size != sys.d - sys.d_A:
        raise IndexSetError(
            f"index set must have {sys.d - sys.d_A} elements, got {I.size}"
        )
    if I.size and (I[0] < 0 or I[-1] >= sys.d or np.unique(I).size != I.size):
        raise IndexSetError("index set must hold distinct indices in [0, d)")
    return I


def complement(I, d):
    mask = np.ones(d, dtype=bool)
    mask[np.asarray(I, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def validate_index_set(I, sys):
    """``True`` iff the columns of ``A`` outside ``I`` form a nonsingular block.

    Raises :class:`IndexSetError` when ``I`` has the wrong size.
    """
    I = _check_index_set(I, sys)
    Ic = complement(I, sys.d)
    if sys.d_A == 0:
        return True
    block = sys.A[:, Ic]
    return bool(np.linalg.matrix_rank(block) == sys.d_A)


class Completion:
    """Solve for the coordinates outside ``I`` from the equality constraints.

    The complement block is factorised once so that batches of partial
    vectors can be completed cheaply.
    """

    def __init__(self, sys, I):
        if not validate_index_set(I, sys):
            raise IndexSetError("complement block of A is singular for this index set")
        self.sys = sys
        self.I = _check_index_set(I, sys)
        self.Ic = complement(self.I, sys.d)
        self._A_I = sys.A[:, self.I]
        self._lu = lu_factor(sys.A[:, self.Ic]) if sys.d_A else None
        # small blocks: an explicit inverse turns the batch solve into one matmul
        self._solve_map = None
        if sys.d_A and sys.d_A <= 8:
            inv = lu_solve(self._lu, np.eye(sys.d_A))
            self._solve_map = (inv @ sys.a, -(inv @ self._A_I).T)

    def solve_complement(self, S_I):
        """Coordinates outside ``I`` for a 2-d batch of ``S_I`` rows."""
        if self._solve_map is not None:
            offset, M = self._solve_map
            return S_I @ M + offset
        rhs = self.sys.a[:, None] - self._A_I @ S_I.T
        return lu_solve(self._lu, rhs).T

    def complete(self, S_I):
        """Return full vectors for a batch (or single row) of ``S_I`` values."""
        S_I = np.asarray(S_I, dtype=float)
        single = S_I.ndim == 1
        S_I = np.atleast_2d(S_I)
        if S_I.shape[1] != self.I.size:
            raise ValueError(f"expected {self.I.size} free coordinates, got {S_I.shape[1]}")
        out = np.empty((S_I.shape[0], self.sys.d))
        out[:, self.I] = S_I
        if self._lu is not None:
            out[:, self.Ic] = self.solve_complement(S_I)
        return out[0] if single else out

    def complete_integer(self, S_I):
        """Complete and round; also return a mask of rows that were integral.

        Rows whose completed coordinates sit further than ``1e-6`` from an
        integer are flagged ``False`` and should be treated as density-zero.
        """
        full = self.complete(S_I)
        rounded = np.rint(full)
        ok = np.max(np.abs(full - rounded), axis=-1) <= INTEGRALITY_TOL
        return rounded.astype(np.int64), ok


def complete(s_I, I, sys):
    """Fill in the coordinates outside ``I`` so that ``A s = a``.

    Inequalities are not enforced here.

    Examples
    --------
    >>> sys = LinearInvariantSystem(2, A=[[1, 1]], a=[6])
    >>> complete([8.0], [0], sys).tolist()
    [8.0, -2.0]
    """
    return Completion(sys, I).complete(np.asarray(s_I, dtype=float).reshape(-1))


def restrict(s, I):
    return np.asarray(s)[..., np.asarray(I, dtype=np.int64)]


def auto_select_index_set(sys, tie_tol=1e-12):
    """Pick ``I`` by greedy column pivoting on ``A``.

    The ``d_A`` pivot columns with the largest residual norm go to the
    complement; ties go to the lowest column index.
    """
    d, d_A = sys.d, sys.d_A
    if d_A == 0:
        return tuple(range(d))
    R = sys.A.astype(float).copy()
    chosen = []
    for _ in range(d_A):
        norms = np.linalg.norm(R, axis=0)
        norms[chosen] = -np.inf
        best = np.max(norms)
        if best <= tie_tol:
            raise IndexSetError("no valid index set: A is rank deficient")
        j = int(np.flatnonzero(norms >= best - tie_tol * max(1.0, best))[0])
        chosen.append(j)
        q = R[:, j] / norms[j]
        R = R - np.outer(q, q @ R)
    I = tuple(int(i) for i in complement(chosen, d))
    return I


def read_table_csv(path):
    """Read a contingency table: a header of column labels and integer rows.

    A leading non-numeric field in a data row is taken as a row label.

    Returns
    -------
    labels : list of str
    row_labels : list of str
    values : ndarray of int, shape (rows, cols)
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(field.strip() for field in r)]
    if len(rows) < 2:
        raise ValueError("table CSV needs a header row and at least one data row")
    header, body = rows[0], rows[1:]
    row_labels, values = [], []
    for r in body:
        try:
            int(r[0])
            label, cells = f"row{len(values)}", r
        except ValueError:
            label, cells = r[0], r[1:]
        row_labels.append(label)
        values.append([int(c) for c in cells])
    ncols = {len(v) for v in values}
    if len(ncols) != 1:
        raise ValueError("all table rows must have the same number of cells")
    labels = header[-ncols.pop():]
    return labels, row_labels, np.asarray(values, dtype=np.int64)


def write_table_csv(path, labels, values, row_labels=None):
    values = np.asarray(values)
    if row_labels is None:
        row_labels = [f"row{i}" for i in range(values.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for label, row in zip(row_labels, values):
            w.writerow([label] + [int(v) for v in row])


def contingency_invariants(table, adult_start=4, nonnegative=True):
    """Invariants for a sex-by-age table, vectorised row-major.

    Fixes the grand total, the first row's total and the total over columns
    ``adult_start`` onward; adds ``s >= 0`` when ``nonnegative``.  The totals
    are read off ``table``, which is the confidential table.
    """
    table = np.asarray(table)
    if table.ndim != 2:
        raise ValueError("table must be 2-d")
    rows, cols = table.shape
    if not 0 <= adult_start < cols:
        raise ValueError("adult_start must index a column of the table")
    d = rows * cols
    total = np.ones(d)
    first_row = np.zeros((rows, cols))
    first_row[0] = 1
    adult = np.zeros((rows, cols))
    adult[:, adult_start:] = 1
    A = np.vstack([total, first_row.ravel(), adult.ravel()])
    s = table.ravel().astype(float)
    B = np.eye(d) if nonnegative else None
    b = np.zeros(d) if nonnegative else None
    return LinearInvariantSystem(d, A=A, a=A @ s, B=B, b=b)


def contingency_index_set(shape, adult_start=4):
    """Proposal set that leaves out the first cell, the first row's last cell
    and the last cell, whose columns of ``A`` form a unimodular block."""
    rows, cols = shape
    d = rows * cols
    excluded = {0, cols - 1, d - 1}
    return tuple(i for i in range(d) if i not in excluded)
