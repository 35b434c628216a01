import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from wproj.analytic_ball import ball_energy
from wproj.energy_model import (EnergyParams, ansatz_energy, evaluate, evaluate_family, nball_ansatz,
                                suggest_penalty)
from wproj.lattice_geometry import GeometryError, Lattice, LatticeSet, perimeter, rasterize_ball
from wproj.projection_energy import project


def test_params_defaults_and_checks():
    P = EnergyParams()
    assert P.volume_target == pytest.approx(math.pi)
    for bad in (dict(d=1), dict(p=0.5), dict(alpha=0), dict(lam=-1), dict(perimeter_estimator="foo"),
                dict(volume_target=-1.0)):
        with pytest.raises(ValueError):
            EnergyParams(**bad)


def test_evaluate_single_disk_by_parts():
    E = rasterize_ball(Lattice.square(0.05, 1.2), None, 1.0, True)
    P = EnergyParams(lam=2.0, alpha=0.5, penalty=3.0, volume_target=3.0)
    rep = evaluate(E, P)
    w = project(E, 1.0).wpp
    assert rep.wpp_sum == w
    assert rep.perimeter == perimeter(E, "crofton")
    assert rep.transport_term == pytest.approx(2.0 * math.sqrt(w), rel=1e-15)
    assert rep.penalty_term == pytest.approx(3.0 * abs(rep.volume - 3.0), rel=1e-15)
    assert rep.total == pytest.approx(rep.perimeter + rep.transport_term + rep.penalty_term, rel=1e-15)
    assert rep.n_components == 1


def test_distant_components_are_projected_separately():
    lat = Lattice.square(0.1, 4.0)
    A = rasterize_ball(lat, (-2.5, 0.0), 0.6)
    B = rasterize_ball(lat, (2.5, 0.0), 0.8)
    P = EnergyParams(lam=1.0)
    rep = evaluate(A.union(B), P)
    fam = evaluate_family([B, A], P)
    assert rep.n_components == 2
    assert rep.wpp_sum == pytest.approx(project(A, 1.0).wpp + project(B, 1.0).wpp, rel=1e-12)
    assert fam.total == pytest.approx(rep.total, rel=1e-12)


def test_family_is_order_independent_and_rejects_overlap():
    lat = Lattice.square(0.1, 3.0)
    A = rasterize_ball(lat, (-1.5, 0.0), 0.6)
    B = rasterize_ball(lat, (1.5, 0.0), 0.6)
    P = EnergyParams(lam=1.0, p=2.0)
    assert evaluate_family([A, B], P) == evaluate_family([B, A], P)
    with pytest.raises(GeometryError):
        evaluate_family([A, A], P)
    with pytest.raises(GeometryError):
        evaluate_family([LatticeSet.empty(lat)], P)


def test_ansatz_single_ball():
    P = EnergyParams(lam=3.0, p=2.0, alpha=0.5)
    assert ansatz_energy(P, 1) == pytest.approx(2 * math.pi + 3.0 * math.sqrt(ball_energy(2, 2.0)), rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1e6), st.sampled_from([1.0, 2.0]), st.sampled_from([0.5, 1.0, 2.0]),
       st.sampled_from([2, 3]))
def test_ansatz_argmin_matches_brute_force(lam, p, alpha, d):
    P = EnergyParams(d=d, p=p, alpha=alpha, lam=lam)
    n, r, e = nball_ansatz(P)
    assume(n < 100_000)
    grid = np.arange(1, 200_001)
    vals = ansatz_energy(P, grid)
    assert e == pytest.approx(vals.min(), rel=1e-12)
    assert vals[n - 1] == pytest.approx(vals.min(), rel=1e-12)
    assert n * r**d * math.pi ** (d / 2) / math.gamma(d / 2 + 1) == pytest.approx(P.volume_target, rel=1e-12)


def test_ansatz_splits_at_large_lambda():
    assert nball_ansatz(EnergyParams(lam=0.01))[0] == 1
    assert nball_ansatz(EnergyParams(lam=1e3))[0] > 1


def test_suggest_penalty_grows_with_lambda():
    vals = [suggest_penalty(EnergyParams(lam=lam)) for lam in (0.0, 1.0, 1e3)]
    assert vals[0] == 10.0
    assert vals[0] < vals[1] < vals[2]
