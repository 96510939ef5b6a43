import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from congenial.invariants import LinearInvariantSystem, contingency_invariants
from congenial.postprocess import (
    InvariantProjector,
    ProjectionConfig,
    ProjectionError,
    l1_convex_project,
    l1_convex_project_many,
    l2_project_equality,
    l2_project_sum_many,
    nnl2_project,
)


def brute_force_projection(m, A, a, B, b):
    """Euclidean projection by trying every active set (small problems only)."""
    best, best_val = None, np.inf
    for r in range(B.shape[0] + 1):
        for act in itertools.combinations(range(B.shape[0]), r):
            C = np.vstack([A, B[list(act)]]) if act else A
            c = np.concatenate([a, b[list(act)]]) if act else a
            if np.linalg.matrix_rank(C) < C.shape[0]:
                continue
            lam = np.linalg.solve(C @ C.T, C @ m - c)
            x = m - C.T @ lam
            if np.all(B @ x >= b - 1e-9):
                val = np.sum((x - m) ** 2)
                if val < best_val - 1e-12:
                    best, best_val = x, val
    return best


@given(arrays(np.float64, 5, elements=st.floats(-10, 20)), st.integers(0, 30))
def test_nnl2_matches_brute_force(m, total):
    A = np.array([[1.0, 1, 1, 1, 1], [1, 1, 0, 0, 0]])
    a = np.array([total, total / 2])
    sys = LinearInvariantSystem(5, A=A, a=a, B=np.eye(5), b=np.zeros(5))
    x = nnl2_project(m, sys)
    ref = brute_force_projection(m, A, a, np.eye(5), np.zeros(5))
    assert np.sum((x - m) ** 2) == pytest.approx(np.sum((ref - m) ** 2), rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(x, ref, atol=1e-7)
    assert sys.contains(x)


def test_nnl2_kkt_on_contingency_table():
    rng = np.random.default_rng(1)
    T = rng.negative_binomial(100, 0.95, size=(2, 23))
    sys = contingency_invariants(T)
    m = T.ravel() + rng.integers(-6, 7, size=46).astype(float)
    x = nnl2_project(m, sys)
    assert sys.contains(x) and np.all(x >= 0)
    active = x <= 1e-9
    # x - m = A^T nu + mu on the active bounds with mu >= 0
    C = np.vstack([sys.A, np.eye(46)[active]])
    coef, *_ = np.linalg.lstsq(C.T, x - m, rcond=None)
    np.testing.assert_allclose(C.T @ coef, x - m, atol=1e-8)
    assert np.all(coef[3:] >= -1e-8)


def test_nnl2_general_inequalities():
    sys = LinearInvariantSystem(3, A=[[1, 1, 1]], a=[3], B=[[1, -1, 0]], b=[1])
    x = nnl2_project([0.0, 3.0, 0.0], sys)
    ref = brute_force_projection(np.array([0.0, 3, 0]), sys.A, sys.a, sys.B, sys.b)
    np.testing.assert_allclose(x, ref, atol=1e-9)


def test_nnl2_iteration_cap():
    rng = np.random.default_rng(0)
    T = rng.negative_binomial(100, 0.95, size=(2, 23))
    sys = contingency_invariants(T)
    with pytest.raises(ProjectionError) as info:
        nnl2_project(T.ravel() - 8.0, sys, max_iterations=1)
    assert info.value.iterate.shape == (46,)


def test_l2_equality_projection():
    sys = LinearInvariantSystem(3, A=[[1, 1, 1]], a=[6])
    x = l2_project_equality([4.0, 1.0, 4.0], sys)
    np.testing.assert_allclose(x, [3, 0, 3])
    np.testing.assert_allclose(l2_project_equality(x, sys), x)
    with pytest.raises(ValueError):
        l2_project_equality([1.0, 2.0, 3.0], contingency_invariants(np.ones((1, 3), int), 1))


def test_l1_convex_endpoints_and_vectorised():
    m, n = np.array([3.0, 5.0]), 6.0
    np.testing.assert_allclose(l1_convex_project(m, n, 1.0), [3, 3])
    np.testing.assert_allclose(l1_convex_project(m, n, 0.0), [1, 5])
    M = np.array([[3.0, 5.0], [1.0, 1.0]])
    np.testing.assert_allclose(l1_convex_project_many(M, n, 0.3)[0], l1_convex_project(m, n, 0.3))
    np.testing.assert_allclose(l2_project_sum_many(M, n).sum(axis=1), [6, 6])
    with pytest.raises(ValueError):
        l1_convex_project(m, n, 1.5)


def test_projection_config_validation():
    with pytest.raises(ValueError):
        ProjectionConfig("l1_convex")
    with pytest.raises(ValueError):
        ProjectionConfig("nnl2", beta=0.5)
    with pytest.raises(ValueError):
        ProjectionConfig("linf")


def test_invariant_projector():
    sys = LinearInvariantSystem(2, A=[[1, 1]], a=[6], B=np.eye(2), b=[0, 0])
    X = np.array([[3.0, 5.0], [-2.0, 1.0], [-5.0, 4.0]])
    out = InvariantProjector(sys).fit_transform(X)
    np.testing.assert_allclose(out, [[2, 4], [1.5, 4.5], [0, 6]])
    l1 = InvariantProjector(LinearInvariantSystem(2, A=[[1, 1]], a=[6]), norm="l1_convex",
                            beta=1.0).fit_transform(X)
    np.testing.assert_allclose(l1[:, 0], X[:, 0])
    l2 = InvariantProjector(sys, norm="l2").fit_transform(X)
    np.testing.assert_allclose(l2.sum(axis=1), [6, 6, 6])
    with pytest.raises(ValueError):
        InvariantProjector(sys).fit(np.ones((2, 3)))
