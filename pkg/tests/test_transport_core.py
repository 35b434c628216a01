import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lp_transport
from wproj.transport_core import (DiscreteMeasure, InsufficientCapacity, MassMismatch, SizeCapExceeded,
                                  check_duality, solve_capacitated, solve_entropic,
                                  solve_entropic_capacitated, solve_exact)


def _cloud(rng, n, d=2):
    return rng.uniform(-1, 1, (n, d))


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    n = draw(st.integers(1, 7))
    m = draw(st.integers(1, 7))
    p = draw(st.sampled_from([1.0, 1.5, 2.0, 3.0]))
    rng = np.random.default_rng(seed)
    a = rng.integers(1, 5, n).astype(float)
    b = rng.integers(1, 5, m).astype(float)
    # make the two sides balance with integer masses
    diff = a.sum() - b.sum()
    if diff > 0:
        b[0] += diff
    else:
        a[0] -= diff
    return _cloud(rng, n), _cloud(rng, m), a / 8, b / 8, p


@settings(max_examples=60, deadline=None)
@given(instances())
def test_exact_matches_lp(inst):
    X, Y, a, b, p = inst
    sol = solve_exact(DiscreteMeasure(X, a), DiscreteMeasure(Y, b), p)
    ref = lp_transport(X, Y, a, b, p)
    assert abs(sol.cost_pp - ref) <= 1e-7 * max(1.0, ref)
    assert sol.integer_primal == sol.integer_dual
    rep = check_duality(sol, DiscreteMeasure(X, a), DiscreteMeasure(Y, b), p)
    assert rep.max_violation <= 1e-8
    np.testing.assert_allclose(sol.target_marginal, b, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 2.0]))
def test_capacitated_matches_lp(seed, p):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 6), rng.integers(2, 9)
    X, Y = _cloud(rng, n), _cloud(rng, m)
    a = np.full(n, 0.25)
    b = np.full(m, 0.25 * n / m + 0.25)
    sol = solve_capacitated(DiscreteMeasure(X, a), DiscreteMeasure(Y, b), p)
    ref = lp_transport(X, Y, a, b, p, capacitated=True)
    assert abs(sol.cost_pp - ref) <= 1e-7 * max(1.0, ref)
    assert np.all(sol.target_marginal <= b * (1 + 1e-12))
    assert np.all(sol.psi <= 1e-15)
    rep = check_duality(sol, DiscreteMeasure(X, a), DiscreteMeasure(Y, b), p, capacitated=True)
    assert rep.ok or rep.max_violation <= 1e-8


def test_identical_measures_cost_nothing():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    m = DiscreteMeasure(X, [1.0, 2.0, 3.0])
    sol = solve_exact(m, m, 2.0)
    assert sol.cost_pp == 0.0
    assert sol.max_displacement == 0.0


def test_two_point_swap_by_hand():
    # unit masses at 0 and 1 sent to 0.5 and 3: monotone matching is optimal for p > 1
    src = DiscreteMeasure([[0.0], [1.0]], [1.0, 1.0])
    dst = DiscreteMeasure([[0.5], [3.0]], [1.0, 1.0])
    assert solve_exact(src, dst, 2.0).cost_pp == pytest.approx(0.25 + 4.0, rel=1e-12)
    # p = 1 on the line: cost is the L1 distance between the CDFs
    assert solve_exact(src, dst, 1.0).cost_pp == pytest.approx(0.5 + 2.0, rel=1e-12)


def test_errors():
    a = DiscreteMeasure([[0.0, 0.0]], [1.0])
    b = DiscreteMeasure([[1.0, 0.0]], [2.0])
    with pytest.raises(MassMismatch):
        solve_exact(a, b, 1.0)
    with pytest.raises(InsufficientCapacity):
        solve_capacitated(b, a, 1.0)
    big = DiscreteMeasure(np.arange(30.0)[:, None], np.ones(30))
    with pytest.raises(SizeCapExceeded):
        solve_exact(big, big, 1.0, size_cap=10)
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0], [0.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0]], [-1.0])


def test_cost_unit_does_not_change_the_answer():
    rng = np.random.default_rng(3)
    X, Y = _cloud(rng, 6), _cloud(rng, 6)
    a = b = np.full(6, 1 / 6)
    ref = lp_transport(X, Y, a, b, 2.0)
    for unit in (0.1, 1.0, 7.0):
        sol = solve_exact(DiscreteMeasure(X, a), DiscreteMeasure(Y, b), 2.0, cost_unit=unit)
        assert sol.cost_pp == pytest.approx(ref, rel=1e-7)


def test_entropic_approaches_exact():
    rng = np.random.default_rng(5)
    X, Y = _cloud(rng, 12), _cloud(rng, 15)
    a, b = np.full(12, 1 / 12), np.full(15, 1 / 15)
    exact = lp_transport(X, Y, a, b, 2.0)
    errs = []
    for eps in (1e-1, 1e-2, 1e-3):
        sol = solve_entropic(DiscreteMeasure(X, a), DiscreteMeasure(Y, b), 2.0, eps)
        assert sol.converged
        np.testing.assert_allclose(sol.mass.sum(), 1.0, rtol=1e-12)
        assert sol.cost_pp >= exact - 1e-9
        errs.append(sol.cost_pp - exact)
    assert errs[-1] <= 1e-2 * exact
    assert errs[-1] <= errs[0]


def test_entropic_capacitated_fills_nearest_sinks():
    X = np.array([[0.0, 0.0]])
    Y = np.array([[0.1, 0.0], [2.0, 0.0], [-3.0, 0.0]])
    sol = solve_entropic_capacitated(DiscreteMeasure(X, [1.0]), DiscreteMeasure(Y, [1.0, 1.0, 1.0]), 1.0, 1e-3)
    assert sol.cost_pp == pytest.approx(0.1, abs=1e-3)
    assert sol.target_marginal[0] == pytest.approx(1.0, abs=1e-3)
