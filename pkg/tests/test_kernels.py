import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nhclt import _backend
from nhclt.kernels import (
    KernelError,
    KernelSequence,
    StateGrid,
    StochasticKernel,
    compose,
    dobrushin_delta,
    dumps_sequence,
    dyadic_masses,
    loads_sequence,
    minimal_ergodic_coefficient,
    multistep,
    oscillation,
)

TOL = 1e-12


def sup_over_sets(rows):
    """delta as the sup over all subsets of |K(x, A) - K(y, A)|."""
    s = rows.shape[1]
    best = 0.0
    for mask in itertools.product([0, 1], repeat=s):
        mass = rows @ np.array(mask, dtype=float)
        best = max(best, mass.max() - mass.min())
    return best


@st.composite
def kernels(draw, states=None):
    s = states or draw(st.integers(2, 6))
    raw = draw(arrays(np.float64, (s, s), elements=st.floats(0.0, 1.0)))
    raw = raw + 1e-3 * np.eye(s)  # keep every row nonzero
    if draw(st.booleans()):
        raw[:, 0] = 0.0
        raw[0, 0] = 1.0
    return StochasticKernel(np.arange(s, dtype=float), raw / raw.sum(axis=1, keepdims=True))


def test_textbook_delta_value():
    assert dobrushin_delta(np.array([[0.5, 0.5], [0.25, 0.75]])) == 0.25


def test_identity_has_delta_one_and_constant_rows_zero():
    assert dobrushin_delta(np.eye(4)) == 1.0
    assert dobrushin_delta(np.tile([0.1, 0.2, 0.7], (3, 1))) == 0.0


@given(kernels())
def test_delta_matches_set_supremum(K):
    assert abs(dobrushin_delta(K) - sup_over_sets(K.rows)) < TOL


@given(st.integers(2, 6).flatmap(lambda s: st.tuples(kernels(s), kernels(s))))
def test_product_inequality(pair):
    K1, K2 = pair
    assert dobrushin_delta(compose(K1, K2)) <= dobrushin_delta(K1) * dobrushin_delta(K2) + TOL


@given(kernels(), st.data())
def test_oscillation_contraction(K, data):
    h = data.draw(arrays(np.float64, (len(K.grid),), elements=st.floats(-10, 10)))
    assert oscillation(K.apply(h)) <= dobrushin_delta(K) * oscillation(h) + 1e-10


@given(st.integers(2, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_multistep_bound(s, n, seed):
    rng = np.random.default_rng(seed)
    grid = StateGrid(np.arange(s, dtype=float))
    ks = tuple(StochasticKernel(grid, rng.dirichlet(np.ones(s) * 0.5, size=s)) for _ in range(n - 1))
    seq = KernelSequence(grid, ks, n)
    for i in range(1, n):
        for j in range(i + 1, n + 1):
            bound = np.prod([dobrushin_delta(seq[t]) for t in range(i, j)])
            assert dobrushin_delta(multistep(seq, i, j)) <= bound + TOL


def test_alpha_uses_first_n_minus_one_steps():
    grid = StateGrid([0.0, 1.0])
    mix = StochasticKernel(grid, [[0.5, 0.5], [0.25, 0.75]])
    ident = StochasticKernel(grid, np.eye(2))
    seq = KernelSequence(grid, (mix, mix, ident), 3, 1)
    rep = minimal_ergodic_coefficient(seq)
    assert rep.alpha_n == 0.75
    assert list(rep.per_step_delta) == [0.25, 0.25, 1.0]


def test_support_restriction_ignores_unreachable_rows():
    rows = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    assert dobrushin_delta(rows) == 1.0
    assert dobrushin_delta(rows, support=[True, True, False]) == 0.5


@pytest.mark.parametrize("bad", [
    [[0.5, 0.6], [0.5, 0.5]],
    [[1.2, -0.2], [0.5, 0.5]],
    [[np.nan, 1.0], [0.5, 0.5]],
])
def test_invalid_kernels_rejected(bad):
    with pytest.raises(KernelError):
        StochasticKernel([0.0, 1.0], bad)


def test_sequence_length_and_grid_checked():
    g = StateGrid([0.0, 1.0])
    K = StochasticKernel(g, np.eye(2))
    with pytest.raises(KernelError):
        KernelSequence(g, (K,), 3)
    with pytest.raises(KernelError):
        KernelSequence(g, (StochasticKernel([0.0, 2.0], np.eye(2)),), 2)
    with pytest.raises(KernelError):
        StateGrid([1.0, 0.0])


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1e6)))
def test_dyadic_masses_sum_exactly(w):
    if w.sum() <= 0:
        return
    q = dyadic_masses(w)
    assert q.sum() == 1.0
    assert sum(reversed(q.tolist())) == 1.0
    assert np.abs(q - w / w.sum()).max() <= 2.0**-51


def test_sequence_json_round_trip_is_exact(rng):
    g = StateGrid(np.linspace(0, 1, 4))
    A = StochasticKernel(g, rng.dirichlet(np.ones(4), size=4))
    B = StochasticKernel(g, rng.dirichlet(np.ones(4), size=4))
    seq = KernelSequence(g, (A, B, A), 4)
    back = loads_sequence(dumps_sequence(seq))
    assert back.grid == seq.grid
    for K1, K2 in zip(seq.kernels, back.kernels):
        assert np.array_equal(K1.rows, K2.rows)
    assert back.kernels[0] is back.kernels[2]


@pytest.mark.skipif(_backend.compiled_impl is None, reason="compiled backend not built")
@given(kernels())
def test_backends_agree_on_delta(K):
    rows = np.ascontiguousarray(K.rows)
    assert abs(_backend.compiled_impl.delta_rows(rows) - _backend.python_impl.delta_rows(rows)) <= 1e-15
