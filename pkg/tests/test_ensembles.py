import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from stirlab.empirical import LocalObservable, tilde_phi
from stirlab.ensembles import (CanonicalSpec, ConvergenceError, canonical_expectation, canonical_probability,
                               chebyshev_bound, dirichlet_form, ensemble_decomposition_tv, enumerate_shell,
                               equivalence_gap, exponential_moment, feynman_kac_lambda, feynman_kac_operator,
                               local_pattern_probability, one_block_gap, product_measure, symmetric_generator,
                               two_block_gap)
from stirlab.lattice import Configuration, all_configurations

PHI = LocalObservable.occupation_product([1, 1])


def dirichlet_brute(f, N, n=2):
    states = [tuple(s) for s in itertools.product(range(n + 1), repeat=N)]
    index = {s: i for i, s in enumerate(states)}
    total = 0.0
    for s in states:
        for x in range(N):
            y = (x + 1) % N
            t = list(s)
            t[x], t[y] = t[y], t[x]
            total += (np.sqrt(f[index[tuple(t)]]) - np.sqrt(f[index[s]])) ** 2
    return total / len(states) / 2


def test_gap_closed_form_at_ten():
    gap, k = equivalence_gap(PHI, 10, return_argmax=True)
    k1 = k[0]
    assert gap == pytest.approx(abs(k1 * (k1 - 1) / 90 - (k1 / 10) ** 2), abs=1e-14)
    # the closed form k1/N^2 (1 - k1/N)/(1 - 1/N) peaks at k1 = 5
    assert k1 == 5
    assert gap == pytest.approx(1 / 36, abs=1e-12)


def test_gap_decreases():
    g = [equivalence_gap(PHI, N) for N in (10, 50, 200)]
    assert g[2] < g[1] < g[0]


def test_canonical_expectation_matches_enumeration():
    N = 6
    phi = LocalObservable.from_function(lambda p: float(p[0] == 1) + 2.0 * (p[1] == 2) * (p[2] != 0), 3)
    for k in [(2, 2), (1, 3), (4, 0), (3, 3)]:
        shell = enumerate_shell(N, k)
        brute = np.mean([phi.evaluate(s, 0) for s in shell])
        assert canonical_expectation(phi, N, np.array([k]))[0] == pytest.approx(brute, abs=1e-12)


def test_local_pattern_probability():
    spec = CanonicalSpec(7, (3, 2))
    shell = enumerate_shell(7, (3, 2))
    assert len(shell) == spec.size()
    freq = np.mean([tuple(s[:2]) == (1, 2) for s in shell])
    assert local_pattern_probability(2, [1, 1], spec) == pytest.approx(freq, abs=1e-12)
    c = Configuration(shell[0])
    assert canonical_probability(spec, c) == pytest.approx(1 / len(shell))
    assert canonical_probability(spec, Configuration([0] * 7)) == 0.0


def test_local_pattern_tends_to_product():
    # P(eta_1^0 eta_2^1) -> rho_1 rho_2 along k = N rho
    spec = CanonicalSpec(4000, (2000, 1200))
    assert local_pattern_probability(2, [1, 1], spec) == pytest.approx(0.5 * 0.3, rel=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_product_measure_decomposes_into_canonical(p1, p2):
    nu = product_measure(4, [p1, p2])
    assert nu.sum() == pytest.approx(1.0)
    assert ensemble_decomposition_tv(4, [p1, p2]) <= 1e-12


def test_dirichlet_form_matches_brute_force():
    rng = np.random.default_rng(0)
    f = rng.uniform(0.1, 2.0, 27)
    assert dirichlet_form(f, 3) == pytest.approx(dirichlet_brute(f, 3), abs=1e-12)
    # quadratic-form identity with the generator
    g = np.sqrt(f)
    L = symmetric_generator(3).toarray()
    assert dirichlet_form(f, 3) == pytest.approx(-(g @ L @ g) / 27, abs=1e-12)


def test_dirichlet_form_vanishes_on_shell_functions():
    states = all_configurations(4, 2)
    counts = (states == 1).sum(axis=1) + 3 * (states == 2).sum(axis=1)
    assert dirichlet_form(counts.astype(float), 4) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        dirichlet_form(-np.ones(81), 4)


def test_feynman_kac_eigenvalue_against_dense():
    N = 4
    V = np.random.default_rng(3).uniform(0, 1, 3**N)
    K = feynman_kac_operator(0.7, V, N).toarray()
    np.testing.assert_allclose(K, K.T)
    top = np.linalg.eigvalsh(K)[-1]
    assert feynman_kac_lambda(0.7, V, N).value == pytest.approx(top, abs=1e-9)
    assert feynman_kac_lambda(0.7, V, N, method="power", tol=1e-10).value == pytest.approx(top, abs=1e-7)


def test_power_iteration_reports_non_convergence():
    V = np.random.default_rng(3).uniform(0, 1, 3**4)
    with pytest.raises(ConvergenceError):
        feynman_kac_lambda(0.7, V, 4, method="power", max_iter=3)


def test_exponential_moment_against_expm():
    N, t = 3, 0.5
    V = np.random.default_rng(4).uniform(0, 1, 27)
    K = feynman_kac_operator(1.3, V, N).toarray()
    exact = np.mean(expm(t * K) @ np.ones(27))
    assert exponential_moment(1.3, V, N, t) == pytest.approx(exact, rel=1e-10)
    lam = np.linalg.eigvalsh(K)[-1]
    assert exact <= np.exp(t * lam) * (1 + 1e-12)
    assert chebyshev_bound(1.0, 0.1, t, lam, N) == pytest.approx(np.exp(N * (t / N * lam - 0.1)))


def test_block_gaps_shrink():
    one = [one_block_gap(PHI, k) for k in (1, 2, 3)]
    assert one[0] > one[1] > one[2]
    two = [two_block_gap(k) for k in (1, 2, 3)]
    assert two[0] > two[1] > two[2]
    with pytest.raises(ValueError):
        one_block_gap(PHI, 6)


def test_one_block_gap_linear_observable_zero():
    lin = LocalObservable.from_function(lambda p: float(p[0] == 2), 1)
    assert one_block_gap(lin, 2) == pytest.approx(0.0, abs=1e-14)
