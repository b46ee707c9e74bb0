import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stirlab.hydro import DensityTrajectory, SchemeParams, heat_trajectory, solve_hydro
from stirlab.lattice import ProfileGrid
from stirlab.potentials import PotentialSet
from stirlab.rate import (HilbertMetric, RieszError, TrigBasis, _slice_operator, collapse_check, dense_slice_solve,
                          evaluate_rate, linear_functional, partition_check, potential_field, riesz_rhs, riesz_solve,
                          static_cost, static_sup_form, static_sup_scan, variational_lower_bound)


def profile(M):
    u = np.arange(M) / M
    return ProfileGrid(np.vstack([0.3 + 0.1 * np.sin(2 * np.pi * u), 0.3 + 0.05 * np.cos(2 * np.pi * u)]))


H_STAR = PotentialSet.fourier([[(1, 0.0, 0.5)], [(1, 0.4, 0.0)]], Mu=1024)


@pytest.fixture(scope="module")
def manufactured():
    return solve_hydro(profile(64), H_STAR, SchemeParams(M=64), 0.1, K=128)


def test_riesz_identity_holds_exactly(manufactured):
    sol = riesz_solve(manufactured)
    assert sol.residual <= 1e-10 * max(1.0, sol.rhs_norm)
    assert np.max(np.abs(sol.H.mean(axis=2))) < 1e-12


def test_bordered_solve_matches_dense_oracle():
    rho = solve_hydro(profile(16), H_STAR, SchemeParams(M=16), 0.02, K=4)
    sol = riesz_solve(rho)
    metric = HilbertMetric(rho)
    r = riesz_rhs(rho)
    for k in (0, 2, 4):
        np.testing.assert_allclose(sol.H[k], dense_slice_solve(metric.chi[k], r[k], metric.h), atol=1e-9)
    A = _slice_operator(metric.chi[1], metric.h).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12)


def test_manufactured_potential_recovered(manufactured):
    ev = evaluate_rate(manufactured)
    target = 0.5 * HilbertMetric(manufactured).norm2(potential_field(H_STAR, manufactured))
    assert abs(ev.I0 - target) / target <= 0.05
    assert ev.variational_lb <= ev.I0 + 1e-6
    assert ev.h == 0.0 and ev.I_total == ev.I0


def test_hydrodynamic_solution_costs_nothing():
    M = 32
    u = np.arange(M) / M
    prof = ProfileGrid(np.vstack([1 / 3 + 0.1 * np.sin(2 * np.pi * u), 1 / 3 + 0 * u]))
    rho = heat_trajectory(prof, 0.02, 256)
    ev = evaluate_rate(rho)
    assert ev.I0 < 1e-6
    assert ev.variational_lb <= ev.I0 + 1e-6


def test_inner_product_symmetric_positive(manufactured):
    m = HilbertMetric(manufactured)
    rng = np.random.default_rng(0)
    G, H = rng.standard_normal((2,) + manufactured.values.shape)
    assert m.inner(G, H) == pytest.approx(m.inner(H, G), rel=1e-12)
    assert m.norm2(G) > 0
    assert m.norm2(np.ones_like(G)) == pytest.approx(0.0, abs=1e-20)


def test_linear_functional_linear(manufactured):
    rng = np.random.default_rng(1)
    G, H = rng.standard_normal((2,) + manufactured.values.shape)
    lhs = linear_functional(manufactured, 2 * G - 3 * H)
    assert lhs == pytest.approx(2 * linear_functional(manufactured, G) - 3 * linear_functional(manufactured, H),
                                rel=1e-10)


def test_lower_bound_never_exceeds_I0(manufactured):
    I0 = evaluate_rate(manufactured, basis=TrigBasis(1, 1)).I0
    for basis in (TrigBasis(1, 0), TrigBasis(2, 2), TrigBasis(4, 3)):
        assert variational_lower_bound(manufactured, basis).value <= I0 + 1e-6


def test_mass_defect_rejected():
    vals = np.full((3, 2, 16), 0.3)
    vals[2] += 0.01  # mass appears from nowhere
    with pytest.raises(RieszError):
        riesz_solve(DensityTrajectory(vals, 0.01))


def test_collapse_and_partition(manufactured):
    K1, M = manufactured.K + 1, manufactured.M
    u = np.arange(M) / M
    H = np.outer(np.linspace(1, 2, K1), np.sin(2 * np.pi * u))
    rep = collapse_check(manufactured, H)
    assert rep.difference <= 1e-10 * max(1.0, rep.single_species)
    part = partition_check(manufactured, H[:, None, :], [[0, 1]])
    assert part.difference <= 1e-12 * max(1.0, part.single_species)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45), st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_static_cost_nonnegative_and_sup_form_below(a, b, c, d):
    om, ga = ProfileGrid.constant([a, b], 8), ProfileGrid.constant([c, d], 8)
    h = static_cost(om, ga)
    assert h >= -1e-15
    assert static_cost(om, om) == pytest.approx(0.0, abs=1e-15)
    assert static_sup_scan(om, ga).max() <= h + 1e-12
    # the maximiser phi = log(omega/gamma) + log(gamma_0/omega_0) attains the cost
    opt = np.log(om.values / ga.values) + np.log(ga.holes / om.holes)
    assert static_sup_form(om, ga, opt) == pytest.approx(h, abs=1e-12)


def test_static_cost_atoms_and_zero_reference():
    om = ProfileGrid.constant([0.5, 0.2], 4)
    assert static_cost(om, om, atoms=True) == np.inf
    assert static_cost(om, ProfileGrid.constant([0.0, 0.5], 4)) == np.inf
