import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from congenial.audit import (
    DESTROYED,
    INTACT,
    SUBSTANTIALLY_DISRUPTED,
    VACUOUS,
    CeilSumQuery,
    CountQuery,
    DatabaseSpace,
    GroupCountQuery,
    HistogramQuery,
    InsufficientSamplesError,
    LatticeMechanism,
    NeighborRelation,
    SamplingMechanism,
    SpaceTooLargeError,
    TabulatedMechanism,
    audit,
    classify_neighborhood,
    empirical_epsilon,
    empirical_epsilon_mc,
    gamma_star,
    posterior_audit,
    query_from_dict,
    run_scenario,
    scenario_from_dict,
    secrecy_singleton_scenario,
    tail_window,
    trivial_scenario,
    twobin_scenario,
)
from congenial.invariants import LinearInvariantSystem
from congenial.mechanisms import NoiseMechanism, dg_pmf
from congenial.postprocess import l1_convex_project_many


def brute_pairs(X, k):
    out = set()
    for i in range(len(X)):
        for j in range(i + 1, len(X)):
            if np.count_nonzero(X[i] != X[j]) == k:
                out.add((i, j))
    return out


# ------------------------------------------------------------ spaces


def test_space_enumeration_and_guard():
    space = DatabaseSpace((0, 1, 2), 3)
    D = space.databases()
    assert D.shape == (27, 3) and len({tuple(r) for r in D}) == 27
    with pytest.raises(SpaceTooLargeError):
        DatabaseSpace((0, 1), 21)
    with pytest.raises(ValueError):
        DatabaseSpace((0, 0), 2)


@pytest.mark.parametrize("q,n,k", [(2, 4, 1), (2, 5, 2), (3, 3, 1), (3, 3, 2), (3, 4, 3)])
def test_neighbor_pairs_match_brute_force(q, n, k):
    space = DatabaseSpace(tuple(range(q)), n, predicate=lambda X: X.sum(axis=1) % 2 == 0)
    C = space.constrained_codes()
    got = {tuple(sorted(p)) for p in NeighborRelation().pairs(C, q, k).tolist()}
    assert got == brute_pairs(C, k)


def test_hamming_distance():
    assert NeighborRelation.distance([0, 1, 2], [0, 2, 2]) == 1
    with pytest.raises(ValueError):
        NeighborRelation.distance([0, 1], [0, 1, 1])


def test_classify_neighborhood():
    assert classify_neighborhood(DatabaseSpace((0, 1), 4)) == (INTACT, 1)
    summed = DatabaseSpace((0, 1), 6, predicate=lambda X: X.sum(axis=1) == 3)
    assert classify_neighborhood(summed) == (SUBSTANTIALLY_DISRUPTED, 2)
    single = DatabaseSpace((0, 1), 3, predicate=lambda X: X.sum(axis=1) == 0)
    assert classify_neighborhood(single) == (DESTROYED, None)


def test_query_round_trip():
    for q in (CountQuery(1), GroupCountQuery([[0, 1], [2]]), HistogramQuery((1, 2)),
              CeilSumQuery(4)):
        again = query_from_dict(json.loads(json.dumps(q.describe())))
        X = DatabaseSpace((0, 1, 2), 3).databases()
        np.testing.assert_array_equal(again(X), q(X))


# ------------------------------------------------------------ exact epsilon


def test_tail_window_bounds_mass():
    for eps, sens in [(1.0, 1.0), (0.5, 2.0), (2.0, 1.0)]:
        mech = NoiseMechanism.double_geometric(eps, sens)
        W = tail_window(mech, 1e-12)
        outside = 2 * mech.a ** (W + 1) / (1 + mech.a)
        assert outside < 1e-12 <= 2 * mech.a**W / (1 + mech.a)


def test_trivial_scenario_attains_nominal_epsilon():
    space, mech = trivial_scenario(1.0, n=3)
    eps, witness = empirical_epsilon(mech, space, k=1, return_witness=True)
    assert eps == pytest.approx(1.0, abs=1e-10)
    assert abs(witness[0][0] - witness[1][0]) == 1
    assert gamma_star(mech, space, k=1) == 0.0


@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
def test_secrecy_singleton_is_zero_private(eps):
    space, mech = secrecy_singleton_scenario(eps)
    assert empirical_epsilon(mech, space, k=1) == 0.0
    grid, logp = mech.log_pmf_grid(np.array([[2]]))
    assert grid.tolist() == [[2]] and logp[0, 0] == 0.0


def test_twobin_scenario_gamma_minus_half():
    space, mech = twobin_scenario(1.0)
    cls, k = classify_neighborhood(space)
    assert (cls, k) == (SUBSTANTIALLY_DISRUPTED, 2)
    attained = empirical_epsilon(mech, space, k=2)
    assert attained / (k * 1.0) - 1.0 == pytest.approx(-0.5, abs=1e-9)
    assert gamma_star(mech, space, k=2) == pytest.approx(0.0, abs=1e-12)


def test_vacuous_without_pairs():
    space, mech = twobin_scenario(1.0)
    assert empirical_epsilon(mech, space, k=1) is VACUOUS
    assert gamma_star(mech, space, k=1) is VACUOUS
    assert repr(VACUOUS) == "VACUOUS"


def asymmetric_instance(eps=1.0):
    system = LinearInvariantSystem(2, B=[[1, 0]], b=[3])
    query = HistogramQuery((1, 2))
    space = DatabaseSpace((0, 1, 2), 4, predicate=lambda X: system.contains(query(X)))
    mech = NoiseMechanism.double_geometric(eps, sensitivity=2.0)
    return space, query, mech, LatticeMechanism(query, mech, system)


def dg_upper_tail(t, a):
    # P(U >= t) for Double Geometric U
    return a**t / (1 + a) if t >= 1 else 1.0 - a ** (1 - t) / (1 + a)


def test_asymmetric_gamma_star_matches_closed_form():
    space, query, base, cond = asymmetric_instance()
    X = space.constrained()
    S = query(X)
    a = base.a
    pairs = brute_pairs(X, 1)
    assert pairs
    ratios = [abs(math.log(dg_upper_tail(3 - S[i, 0], a)) - math.log(dg_upper_tail(3 - S[j, 0], a)))
              for i, j in pairs]
    expected = max(ratios) / base.epsilon
    got = gamma_star(cond, space, k=1)
    assert got == pytest.approx(expected, rel=1e-9)
    assert 0.0 < got <= 1.0


def test_asymmetric_eq7_holds_with_gamma_star():
    space, query, base, cond = asymmetric_instance()
    g = gamma_star(cond, space, k=1)
    X = space.constrained()
    S = query(X)
    # independent oracle: singleton ratios of the truncated pmf, which bound every event
    W = 40
    o1, o2 = np.meshgrid(np.arange(-W, W + 5), np.arange(-W, W + 5), indexing="ij")
    best = 0.0
    for i, j in brute_pairs(X, 1):
        p = []
        for s in (S[i], S[j]):
            w = dg_pmf(o1 - s[0], base) * dg_pmf(o2 - s[1], base) * (o1 >= 3)
            p.append(w / w.sum())
        keep = (p[0] > 1e-200) & (p[1] > 1e-200)
        best = max(best, float(np.max(np.abs(np.log(p[0][keep]) - np.log(p[1][keep])))))
    attained = empirical_epsilon(cond, space, k=1)
    assert attained == pytest.approx(best, abs=1e-8)
    assert attained <= (1 + g) * base.epsilon + 1e-9


def test_attained_epsilon_monotone_in_budget():
    values = []
    for eps in (0.5, 1.0, 2.0):
        space, mech = trivial_scenario(eps, n=4)
        values.append(empirical_epsilon(mech, space, k=1))
    assert values == sorted(values)
    np.testing.assert_allclose(values, [0.5, 1.0, 2.0], atol=1e-10)


@settings(max_examples=15)
@given(eps=st.sampled_from([0.25, 0.5, 1.0, 2.0]), half=st.integers(2, 4),
       total=st.integers(1, 7))
def test_group_bound_on_twobin_family(eps, half, total):
    n = 2 * half
    if total >= n:
        total = n - 1
    space, mech = twobin_scenario(eps, n=n, total=total)
    cls, k = classify_neighborhood(space)
    attained = empirical_epsilon(mech, space, k=k)
    g = gamma_star(mech, space, k=k)
    assert 0.0 <= g <= 1.0
    assert attained <= (1 + g) * k * eps + 1e-9


def test_tabulated_mechanism():
    # randomised response on a single bit with p = 3/4: epsilon = log 3
    pmf = lambda s: {(s[0],): 0.75, (1 - s[0],): 0.25}
    space = DatabaseSpace((0, 1), 1)
    mech = TabulatedMechanism(CountQuery(1), pmf, math.log(3))
    assert empirical_epsilon(mech, space, k=1) == pytest.approx(math.log(3))


# ------------------------------------------------------------ posteriors


def test_posterior_within_band_eps2():
    space, mech = trivial_scenario(2.0, n=3)
    res = posterior_audit(mech, space, [0.5, 0.5])
    assert res.bound_ok and not res.violations
    assert res.worst_high <= math.exp(2) and res.worst_low >= math.exp(-2)
    res1 = posterior_audit(mech, space, [0.5, 0.5], event=[[1]])
    assert res1.n_events == 1 and res1.bound_ok


def test_posterior_converges_to_prior():
    gaps = []
    for eps in (1.0, 0.1, 0.01):
        space, mech = trivial_scenario(eps, n=3)
        res = posterior_audit(mech, space, [0.3, 0.7])
        assert res.bound_ok
        gaps.append(max(res.worst_high - 1.0, 1.0 - res.worst_low))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 0.011


def test_posterior_constrained_band():
    space, mech = twobin_scenario(1.0)
    g = gamma_star(mech, space, k=2)
    res = posterior_audit(mech, space, [0.4, 0.6], epsilon=(1 + g) * 2 * 1.0)
    assert res.bound_ok
    # conditional prior of a record given the fixed total is 1/2 regardless of the prior
    assert res.prior["1"] == pytest.approx(0.5)


def test_posterior_detects_violation():
    pmf = lambda s: {(s[0],): 0.99, (1 - s[0],): 0.01}
    space = DatabaseSpace((0, 1), 2)
    mech = TabulatedMechanism(CountQuery(1), pmf, 0.1)
    assert not posterior_audit(mech, space, [0.5, 0.5]).bound_ok


def test_posterior_errors():
    space, mech = trivial_scenario(1.0)
    with pytest.raises(ValueError):
        posterior_audit(mech, space, [1.0, 0.0])
    with pytest.raises(ValueError):
        posterior_audit(mech, space, [0.5, 0.5], event=[[10**6]])


# ------------------------------------------------------------ reports


@pytest.mark.parametrize("name", ["trivial", "secrecy-singleton", "twobin"])
def test_builtin_scenarios_pass(name):
    rep = run_scenario(name, 1.0, posterior_epsilons=(0.5, 1.0, 2.0))
    assert rep.group_bound_holds and not rep.posterior_violations
    assert all(c["bound_ok"] for c in rep.posterior_checks)
    d = json.loads(rep.to_json(seed=1))
    assert d["seed"] == 1 and d["report"]["scenario"] == name


def test_destroyed_scenario_report():
    space = DatabaseSpace((0, 1), 3, predicate=lambda X: X.sum(axis=1) == 0)
    mech = LatticeMechanism(CountQuery(1), NoiseMechanism.double_geometric(1.0),
                            LinearInvariantSystem(1, A=[[1]], a=[0]))
    rep = audit(space, mech, name="destroyed")
    assert rep.neighborhood_class == DESTROYED and rep.attained_epsilon is VACUOUS
    assert rep.to_dict()["attained_epsilon"] == "vacuous"


def test_scenario_from_dict():
    d = {"name": "hist", "alphabet": [0, 1, 2], "n": 4, "epsilon": 1.0, "sensitivity": 2,
         "query": {"type": "histogram", "categories": [1, 2]},
         "invariants": {"d": 2, "B": [[1, 0]], "b": [3]}}
    space, mech = scenario_from_dict(d)
    ref_space, _, _, ref = asymmetric_instance()
    np.testing.assert_array_equal(space.constrained(), ref_space.constrained())
    assert gamma_star(mech, space, k=1) == gamma_star(ref, ref_space, k=1)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        run_scenario("nope")


# ------------------------------------------------------------ Monte Carlo


def twobin_l1_sampler(beta, eps, total):
    def sample(s, size, rng):
        m = s + rng.laplace(0.0, 2.0 / eps, size=(size, 2))
        return l1_convex_project_many(m, total, beta)
    return sample


def test_mc_l1_convex_beta_one():
    space, lattice = twobin_scenario(1.0)
    mech = SamplingMechanism(lattice.query, twobin_l1_sampler(1.0, 1.0, 5))
    # the sup over many noisy events biases upward; 10^6 draws keep that well inside 0.05
    est = empirical_epsilon_mc(mech, space, k=2, rng=np.random.default_rng(5))
    assert est.estimate == pytest.approx(0.5, abs=0.05)
    assert "not a privacy guarantee" in est.to_dict()["note"]


def test_mc_laplace_matches_epsilon():
    space = DatabaseSpace((0, 1), 2)
    mech = SamplingMechanism(CountQuery(1),
                             lambda s, size, rng: s + rng.laplace(0.0, 1.0, size=(size, 1)))
    est = empirical_epsilon_mc(mech, space, k=1, rng=np.random.default_rng(6))
    assert est.estimate == pytest.approx(1.0, abs=0.05)


def test_mc_degenerate_is_zero():
    space, lattice = secrecy_singleton_scenario(1.0)
    mech = SamplingMechanism(lattice.query, lambda s, size, rng: np.full((size, 1), 2.0))
    est = empirical_epsilon_mc(mech, space, k=1, num_samples=1000, rng=np.random.default_rng(0))
    assert est.estimate == 0.0


def test_mc_refuses_small_samples():
    space = DatabaseSpace((0, 1), 2)
    mech = SamplingMechanism(CountQuery(1),
                             lambda s, size, rng: s + rng.laplace(0.0, 1.0, size=(size, 1)))
    with pytest.raises(InsufficientSamplesError):
        empirical_epsilon_mc(mech, space, k=1, num_samples=99, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        empirical_epsilon_mc(mech, space, k=1, num_samples=1000, rng=None)


def test_posterior_matches_hand_bayes():
    # one-bit records, two of them; release the count through a 3-outcome table
    table = {0: {(0,): 0.6, (1,): 0.3, (2,): 0.1},
             1: {(0,): 0.3, (1,): 0.4, (2,): 0.3},
             2: {(0,): 0.1, (1,): 0.3, (2,): 0.6}}
    mech = TabulatedMechanism(CountQuery(1), lambda s: table[s[0]], 2.0)
    space = DatabaseSpace((0, 1), 2)
    prior = np.array([0.3, 0.7])
    for B in ([[0]], [[2]], [[0], [1]]):
        res = posterior_audit(mech, space, prior, event=B)
        joint = np.zeros(2)
        for x0 in (0, 1):
            for x1 in (0, 1):
                pB = sum(table[x0 + x1][tuple(o)] for o in B)
                joint[x0] += prior[x0] * prior[x1] * pB
        assert res.posterior["1"] == pytest.approx(joint[1] / joint.sum(), rel=1e-12)


@settings(max_examples=10)
@given(e1=st.floats(0.1, 3.0), e2=st.floats(0.1, 3.0))
def test_attained_epsilon_monotone_property(e1, e2):
    lo, hi = sorted((e1, e2))
    space, m_lo = trivial_scenario(lo, n=3)
    _, m_hi = trivial_scenario(hi, n=3)
    assert empirical_epsilon(m_lo, space, k=1) <= empirical_epsilon(m_hi, space, k=1) + 1e-12
