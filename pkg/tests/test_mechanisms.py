import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from congenial.mechanisms import (
    DoubleGeometricMechanism,
    LaplaceMechanism,
    MechanismKindError,
    NoiseMechanism,
    dg_cdf,
    dg_pmf,
    dg_quantile,
    laplace_cdf,
    laplace_density,
    laplace_quantile,
    open_uniform,
    privatize,
)

eps_st = st.floats(0.05, 5.0)


def test_dg_pmf_closed_form():
    m = NoiseMechanism.double_geometric(math.log(2))
    # a = 1/2: (1-a)/(1+a) = 1/3
    assert dg_pmf(0, m) == pytest.approx(1 / 3, abs=1e-15)
    assert dg_pmf(-2, m) == pytest.approx(1 / 12, abs=1e-15)


@given(eps_st, st.floats(0.5, 3.0))
def test_dg_pmf_normalised(eps, sens):
    m = NoiseMechanism.double_geometric(eps, sens)
    W = int(60 * sens / eps) + 50
    u = np.arange(-W, W + 1)
    assert dg_pmf(u, m).sum() == pytest.approx(1.0, abs=1e-10)


@given(eps_st, st.integers(0, 200))
def test_dg_ratio(eps, u):
    m = NoiseMechanism.double_geometric(eps)
    if (u + 1) * eps > 600:
        return  # pmf underflows to subnormals
    assert dg_pmf(u + 1, m) / dg_pmf(u, m) == pytest.approx(math.exp(-eps), rel=1e-12)
    assert dg_pmf(-u, m) == dg_pmf(u, m)


@given(eps_st, st.integers(-300, 300))
def test_dg_cdf_matches_cumulative_sum(eps, u):
    m = NoiseMechanism.double_geometric(eps)
    a = m.a
    # independent oracle: geometric series summed in closed form from the pmf
    if u <= 0:
        ref = (1 - a) / (1 + a) * a ** (-u) / (1 - a)
    else:
        ref = 1 - (1 - a) / (1 + a) * a ** (u + 1) / (1 - a)
    assert dg_cdf(u, m) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@given(st.floats(0.05, 3.0), st.integers(-60, 60))
def test_dg_quantile_inverts_cdf(eps, u):
    m = NoiseMechanism.double_geometric(eps)
    F = dg_cdf(u, m)
    if not 0 < F < 1:
        return  # F rounds to an endpoint; nothing to invert
    assert dg_quantile(F, m) == u
    nxt = np.nextafter(F, 1.0)
    if nxt < 1 and dg_cdf(u + 1, m) >= nxt:
        assert dg_quantile(nxt, m) == u + 1


@given(st.floats(0.01, 4.0), st.floats(1e-12, 1 - 1e-12))
def test_dg_quantile_is_minimal(eps, v):
    m = NoiseMechanism.double_geometric(eps)
    u = dg_quantile(v, m)
    assert dg_cdf(u, m) >= v
    assert dg_cdf(u - 1, m) < v


def test_dg_quantile_branch_boundary():
    m = NoiseMechanism.double_geometric(math.log(2))
    # F(0) = 1/(1+a) = 2/3 sits exactly on the branch split
    assert dg_quantile(dg_cdf(0, m), m) == 0
    assert dg_quantile(np.nextafter(dg_cdf(0, m), 1), m) == 1
    assert dg_quantile(np.nextafter(dg_cdf(-1, m), 1), m) == 0


def test_dg_quantile_rejects_endpoints():
    m = NoiseMechanism.double_geometric(1.0)
    for v in (0.0, 1.0, -0.2, float("nan")):
        with pytest.raises(ValueError):
            dg_quantile(v, m)


def test_dg_functions_reject_laplace():
    with pytest.raises(MechanismKindError):
        dg_pmf(0, NoiseMechanism.laplace(1.0))


def test_dg_sampling_matches_pmf(rng):
    m = NoiseMechanism.double_geometric(0.7)
    x = m.sample(200_000, rng)
    u = np.arange(-40, 41)
    emp = np.array([(x == k).mean() for k in u])
    assert 0.5 * np.abs(emp - dg_pmf(u, m)).sum() < 0.01
    assert x.var() == pytest.approx(m.variance(), rel=0.03)


@given(st.floats(0.1, 5.0), st.floats(-30, 30))
def test_laplace_cdf_quantile_roundtrip(scale, u):
    F = laplace_cdf(u, scale)
    if 1e-12 < F < 1 - 1e-12:
        assert laplace_quantile(F, scale) == pytest.approx(u, abs=1e-7 * max(1, abs(u)))


def test_laplace_density_and_variance(rng):
    assert laplace_density(0.0, 0.5) == 1.0
    m = NoiseMechanism.laplace(2.0)
    x = m.sample(200_000, rng)
    assert x.var() == pytest.approx(m.variance(), rel=0.03)
    assert m.variance() == pytest.approx(0.5)


def test_log_linear_matches_logpdf():
    for m in (NoiseMechanism.laplace(0.8, 2.0), NoiseMechanism.double_geometric(0.8, 2.0)):
        c0, c1 = m.log_linear()
        u = np.arange(-5, 6)
        np.testing.assert_allclose(m.logpdf(u), c0 + c1 * np.abs(u), rtol=1e-14)


def test_open_uniform_is_open(rng):
    v = open_uniform(rng, 10_000)
    assert np.all((v > 0) & (v < 1))


def test_mechanism_validation():
    with pytest.raises(ValueError):
        NoiseMechanism("gaussian", 1.0)
    with pytest.raises(ValueError):
        NoiseMechanism.laplace(0.0)
    with pytest.raises(TypeError):
        NoiseMechanism.laplace("1")


def test_privatize_integer_output(rng):
    out = privatize([3, 4, 5], NoiseMechanism.double_geometric(1.0), rng)
    assert out.dtype == np.int64 and out.shape == (3,)
    with pytest.raises(ValueError):
        privatize([0.5], NoiseMechanism.double_geometric(1.0), rng)


def test_sampling_requires_explicit_stream():
    with pytest.raises(ValueError):
        NoiseMechanism.laplace(1.0).sample(3, None)


def test_estimators_follow_sklearn_conventions():
    X = np.array([[3, 4], [5, 6]])
    est = DoubleGeometricMechanism(epsilon=0.5, random_state=7)
    assert est.get_params() == {"epsilon": 0.5, "sensitivity": 1.0, "random_state": 7}
    a = est.fit_transform(X)
    b = clone(est).fit_transform(X)
    np.testing.assert_array_equal(a, b)
    pipe = Pipeline([("noise", LaplaceMechanism(epsilon=1.0, random_state=1))])
    assert pipe.fit_transform(X.astype(float)).shape == X.shape
    with pytest.raises(ValueError):
        est.transform([[1, 2, 3]])
    with pytest.raises(ValueError):
        DoubleGeometricMechanism().fit(X).transform(X)
