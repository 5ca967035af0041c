import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import path_oracle

from nhclt.decomposition import (
    ChainLaw,
    RewardFunctionArray,
    WindowBlowupError,
    center_rewards,
    decompose,
    delta_n_l2_check,
    dobrushin_lower_bound_check,
    marginals,
    martingale_differences,
    moments_exact,
    oscillation_bound_suite,
    value_to_go,
    variance_identity_check,
)
from nhclt.kernels import KernelSequence, StateGrid, StochasticKernel
from nhclt.reference import parity_counterexample, random_instance


def zero_rewards(law):
    s = len(law.grid)
    t = np.zeros((s,) * (1 + law.m))
    return RewardFunctionArray((t,) * law.n, law.n, law.m)


def iid_law(p, n, m):
    g = StateGrid(np.arange(len(p), dtype=float))
    K = StochasticKernel(g, np.tile(p, (len(p), 1)))
    return ChainLaw(p, KernelSequence(g, (K,) * (n + m - 1), n, m))


small = st.tuples(
    st.integers(0, 10**6), st.integers(2, 4), st.integers(1, 5), st.integers(0, 1)
).filter(lambda t: t[2] + t[3] <= 6)


@given(small)
def test_engine_matches_path_enumeration(args):
    seed, s, n, m = args
    b = random_instance(seed, s, n, m)
    ref = path_oracle(b.law, b.rewards)
    mean, var = moments_exact(b.law, b.rewards)
    assert abs(mean - ref["mean"]) < 1e-12
    assert abs(var - ref["var"]) < 1e-12
    rep = decompose(b.law, b.rewards)
    assert np.abs(rep.d_second_moments - ref["e_d2"]).max() < 1e-12
    assert np.abs(rep.means - ref["means"]).max() < 1e-12


@given(small)
def test_pathwise_identity_on_enumerated_paths(args):
    seed, s, n, m = args
    b = random_instance(seed, s, n, m)
    V = value_to_go(b.law, b.rewards)
    d = martingale_differences(b.law, b.rewards)
    ref = path_oracle(b.law, b.rewards)
    for path, S in zip(ref["paths"], ref["S"]):
        total = V[0][path[m - 1]] if m else V[0][0]
        for k, i in enumerate(range(1 + m, n + m + 1)):
            x = path[i - 2] if i >= 2 else 0
            total += d[k][x, path[i - 1]]
        assert abs(total - S) < 1e-10


@given(small)
def test_martingale_property(args):
    seed, s, n, m = args
    b = random_instance(seed, s, n, m)
    rep = decompose(b.law, b.rewards)
    assert rep.max_conditional_mean < 1e-10
    assert max(path_oracle(b.law, b.rewards)["cond_mean_worst"]) < 1e-10


def test_two_state_value_to_go_formula():
    g = StateGrid([0.0, 1.0])
    K = StochasticKernel(g, [[0.7, 0.3], [0.2, 0.8]])
    law = ChainLaw([0.6, 0.4], KernelSequence(g, (K,), 2, 0))
    f1, f2 = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    rew = RewardFunctionArray((f1, f2), 2, 0)
    p2 = law.initial @ K.rows
    mu1, mu2 = law.initial @ f1, p2 @ f2
    V1 = value_to_go(law, rew)[1]
    expected = K.rows @ f2 - mu2
    assert np.allclose(V1, expected, atol=1e-14)
    # V_1 = E[Z_2 | X_1]; f_1 - mu1 is the already-realised part
    assert abs(law.initial @ (V1 + f1 - mu1)) < 1e-14


@pytest.mark.parametrize("m", [0, 1])
def test_zero_rewards_give_zero_everything(m):
    b = random_instance(1, 3, 4, m)
    rew = zero_rewards(b.law)
    assert moments_exact(b.law, rew) == (0.0, 0.0)
    rep = decompose(b.law, rew)
    assert all(np.all(v == 0) for v in rep.V)
    assert np.all(rep.d_second_moments == 0)
    assert variance_identity_check(rep).passed
    assert delta_n_l2_check(b.law, rew, rep).passed
    assert oscillation_bound_suite(b.law, rew).passed


@given(st.integers(0, 10**6), st.integers(0, 1))
def test_centering_is_idempotent(seed, m):
    b = random_instance(seed, 3, 4, m)
    once = center_rewards(b.law, b.rewards)
    twice = center_rewards(b.law, once)
    assert np.abs(once.offsets - twice.offsets).max() < 1e-12
    assert np.abs(decompose(b.law, once).means).max() < 1e-12


def test_constant_reward_centers_to_zero():
    b = random_instance(2, 3, 4, 1)
    rew = RewardFunctionArray((np.full((3, 3), 2.5),) * 4, 4, 1)
    c = center_rewards(b.law, rew)
    assert max(np.abs(c.tensor(i)).max() for i in range(1, 5)) < 1e-12


def test_window_blowup_rejected():
    g = StateGrid([0.0, 1.0])
    K = StochasticKernel(g, np.eye(2))
    law = ChainLaw([0.5, 0.5], KernelSequence(g, (K,) * 3, 2, 2))
    rew = RewardFunctionArray((np.zeros((2, 2, 2)),) * 2, 2, 2)
    with pytest.raises(WindowBlowupError, match="window blowup"):
        moments_exact(law, rew)
    with pytest.raises(WindowBlowupError):
        decompose(law, rew)


@pytest.mark.parametrize("n", [2, 3, 6, 7])
def test_parity_counterexample_variances(n):
    b = parity_counterexample(n, grid=[0.0, 1.0, 2.0])
    var_x = 2.0 / 3.0
    _, var = moments_exact(b.law, b.rewards)
    assert abs(var - (0.0 if n % 2 == 0 else var_x)) < 1e-12
    margs = marginals(b.law)
    indiv = 0.0
    for i in range(1, n + 1):
        f = b.rewards.tensor(i)
        joint = margs[i - 1][:, None] * b.law.kernel(i)
        mu = (joint * f).sum()
        indiv += (joint * (f - mu) ** 2).sum()
    assert abs(indiv - n * var_x) < 1e-12


def test_parity_rejected_by_m0_lower_bound():
    b = parity_counterexample(4)
    with pytest.raises(ValueError):
        dobrushin_lower_bound_check(b.law, b.rewards)


def test_parity_needs_spread():
    with pytest.raises(ValueError):
        parity_counterexample(3, grid=[1.0])


@given(st.integers(0, 10**6), st.integers(0, 1), st.integers(2, 8))
def test_inequality_suite_on_random_instances(seed, m, n):
    b = random_instance(seed, 3, n, m)
    rep = decompose(b.law, b.rewards)
    assert variance_identity_check(rep).passed
    suite = oscillation_bound_suite(b.law, b.rewards)
    assert suite.passed, {k: v.to_dict() for k, v in suite.results.items() if not v.passed}
    check = delta_n_l2_check(b.law, b.rewards, rep)
    assert check.passed and np.isfinite(check.detail["fitted_ratio"])


@given(st.integers(0, 10**6), st.integers(2, 8))
def test_m0_variance_lower_bound(seed, n):
    b = random_instance(seed, 3, n, 0)
    assert dobrushin_lower_bound_check(b.law, b.rewards).passed


def test_iid_chain_kills_conditioning():
    p = np.array([0.2, 0.3, 0.5])
    for m in (0, 1):
        law = iid_law(p, 5, m)
        rng = np.random.default_rng(m)
        rew = RewardFunctionArray(tuple(rng.normal(size=(3,) * (1 + m)) for _ in range(5)), 5, m)
        suite = oscillation_bound_suite(law, rew)
        assert suite.alpha_n == 1.0 and suite.passed
        for name in ("range2", "range4", "cond_mean_osc"):
            assert abs(suite.results[name].worst_lhs) < 1e-12
    law = iid_law(p, 5, 0)
    rew = RewardFunctionArray(tuple(np.arange(3.0) * k for k in range(1, 6)), 5, 0)
    chk = dobrushin_lower_bound_check(law, rew)
    assert chk.passed and abs(chk.worst_rhs - chk.detail["sum_individual_variances"]) < 1e-12


def test_report_serialises():
    b = random_instance(5, 3, 4, 1)
    rep = decompose(b.law, b.rewards)
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["lookahead"] == 1 and len(doc["V"]) == 5
    supp = [p > 0 for p in marginals(b.law)]
    lines = rep.to_csv(supp).strip().splitlines()
    assert lines[0] == "i,E_d2,V_sup" and len(lines) == 5
