"""Acceptance suite: one PASS/FAIL line per criterion, collected at the end of the pytest run."""

import time

import numpy as np
import pytest

from stirlab.cli import HYDRO_LIMIT_POTENTIAL, HYDRO_LIMIT_PROFILE, build_profile, build_potentials, hydro_limit_sweep
from stirlab.empirical import LocalObservable, superexp_estimate
from stirlab.ensembles import chebyshev_chain, dirichlet_form, equivalence_gap, symmetric_generator
from stirlab.girsanov import check_mean_one, girsanov_weight
from stirlab.hydro import (DensityTrajectory, SchemeParams, einstein_residual, heat_mode_amplitude, simplex_grid,
                           solve_hydro)
from stirlab.lattice import ProfileGrid, sample_product_multinomial
from stirlab.potentials import PotentialSet
from stirlab.process import SimParams, run
from stirlab.rate import HilbertMetric, evaluate_rate, potential_field

PHI = LocalObservable.occupation_product([1, 1])
SMOOTH_H = PotentialSet.fourier([[(1, 0.0, 0.5, 0.3, 0.0)], [(1, 0.4, 0.0, 0.0, -0.2), (2, 0.1, 0.1)]],
                                Mu=256, times=(0.0, 0.05, 0.1))


def test_criterion_01_einstein(report):
    t0 = time.perf_counter()
    worst = max(einstein_residual(p) for p in simplex_grid(50))
    wall = time.perf_counter() - t0
    assert report(1, worst <= 1e-12 and wall < 1.0, f"max |F''chi - I| = {worst:.2e} (<= 1e-12), {wall:.2f}s")


def test_criterion_02_girsanov_pathwise(report):
    prof = ProfileGrid.constant([0.3, 0.3])
    gaps = []
    for r in range(100):
        c0 = sample_product_multinomial(prof, 16, np.random.default_rng([2, r]))
        res = run(c0, SMOOTH_H, SimParams(16, 0.1, seed=2, replica=r))
        w = girsanov_weight(res.path, SMOOTH_H)
        gaps.append(abs(w.log_rn_event - w.log_rn_martingale))
    worst = max(gaps)
    assert report(2, worst <= 1e-8, f"max |event - martingale| over 100 paths = {worst:.2e} (<= 1e-8)")


def test_criterion_03_mean_one(report):
    H = PotentialSet.fourier([[(1, 0.0, 0.25)], [(1, 0.25, 0.0)]], Mu=256)
    est = check_mean_one(SimParams(16, 0.1, seed=3), H, ProfileGrid.constant([0.3, 0.3]), 10_000)
    z = (est.mean - 1) / est.stderr
    assert report(3, est.within(4), f"E[Z] = {est.mean:.4f} +- {est.stderr:.4f} ({z:+.2f} sigma, 10^4 replicas)")


def test_criterion_04_hydro_limit_trend(report):
    T = 0.05
    prof = build_profile(HYDRO_LIMIT_PROFILE, 256)
    pots = build_potentials(HYDRO_LIMIT_POTENTIAL, 2, T)
    rows = hydro_limit_sweep(prof, pots, T, [64, 128, 256], 20, 0.05, seed=7)
    d = [r[1] for r in rows]
    ok = d[0] > d[1] > d[2]
    assert report(4, ok, "mean L1 " + " > ".join(f"{v:.4f}" for v in d) + " for N = 64, 128, 256")


def test_criterion_05_heat_decay(report):
    M, T = 256, 0.02
    u = np.arange(M) / M
    prof = ProfileGrid(np.vstack([1 / 3 + 0.1 * np.sin(2 * np.pi * u), np.full(M, 1 / 3)]))
    traj = solve_hydro(prof, None, SchemeParams(M=M), T, K=4)
    a0 = heat_mode_amplitude(traj.values[0, 0])
    rel = max(abs(heat_mode_amplitude(traj.values[k, 0]) / a0 / np.exp(-4 * np.pi**2 * t) - 1)
              for k, t in enumerate(traj.times))
    assert report(5, rel <= 0.01, f"max relative deviation from exp(-4 pi^2 t) = {rel:.2e} (<= 1%) at M = 256")


def test_criterion_06_single_species_collapse(report):
    M, T = 64, 0.05
    u = np.arange(M) / M
    prof = ProfileGrid(np.vstack([0.3 + 0.1 * np.sin(2 * np.pi * u), 0.25 + 0.1 * np.cos(2 * np.pi * u)]))
    H2 = PotentialSet.fourier([[(1, 0.3, 0.4)], [(1, 0.3, 0.4)]], Mu=512)
    H1 = PotentialSet.fourier([[(1, 0.3, 0.4)]], Mu=512)
    two = solve_hydro(prof, H2, SchemeParams(M=M), T, K=64)
    lumped = ProfileGrid(prof.values.sum(axis=0, keepdims=True))
    one = solve_hydro(lumped, H1, SchemeParams(M=M), T, K=64)
    pde_gap = float(np.max(np.abs(two.values.sum(axis=1) - one.values[:, 0])))
    # I0 of the lumped trajectory (one species) against the two-species norm of the same potential
    rho1 = DensityTrajectory(two.values.sum(axis=1, keepdims=True), two.dt)
    ev1 = evaluate_rate(rho1)
    multi = 0.5 * HilbertMetric(two).norm2(np.repeat(ev1.H_recovered, 2, axis=1))
    i0_gap = abs(multi - ev1.I0)
    ok = pde_gap <= 1e-10 and i0_gap <= 1e-8
    assert report(6, ok, f"sum rho_a vs 1-species PDE {pde_gap:.1e} (<= 1e-10); I0 {i0_gap:.1e} (<= 1e-8)")


def test_criterion_07_rate_recovery(report):
    u_prof = lambda M: ProfileGrid(np.vstack([0.3 + 0.1 * np.sin(2 * np.pi * np.arange(M) / M),
                                              0.3 + 0.05 * np.cos(2 * np.pi * np.arange(M) / M)]))
    H = PotentialSet.fourier([[(1, 0.0, 0.5)], [(1, 0.4, 0.0)]], Mu=1024)
    errs, lb_ok = [], True
    for M, K in ((128, 256), (256, 512)):
        rho = solve_hydro(u_prof(M), H, SchemeParams(M=M), 0.1, K=K)
        ev = evaluate_rate(rho)
        target = 0.5 * HilbertMetric(rho).norm2(potential_field(H, rho))
        errs.append(abs(ev.I0 - target) / target)
        lb_ok &= ev.variational_lb <= ev.I0 + 1e-6
    ok = errs[0] <= 0.05 and errs[1] <= errs[0] / 2 and lb_ok
    assert report(7, ok, f"relative error {errs[0]:.2e} (M=128) -> {errs[1]:.2e} (M=256), lower bound <= I0: {lb_ok}")


def test_criterion_08_equivalence_of_ensembles(report):
    g10, k = equivalence_gap(PHI, 10, return_argmax=True)
    k = tuple(int(v) for v in k)
    g50, g200 = equivalence_gap(PHI, 50), equivalence_gap(PHI, 200)
    target = 0.025  # required value; the closed form at k1 = 5 evaluates to 1/36
    ok = abs(g10 - target) <= 1e-12 and g200 < g50 < g10
    detail = (f"gap(10) = {g10:.6f} at k = {k} vs required 0.025 +- 1e-12; "
              f"gap(200) = {g200:.5f} < gap(50) = {g50:.5f} < gap(10): {g200 < g50 < g10}")
    report(8, ok, detail)
    assert ok, detail


def test_criterion_09_dirichlet_and_feynman_kac(report):
    f = np.random.default_rng(9).uniform(0.1, 2.0, 27)
    g = np.sqrt(f)
    oracle = -(g @ symmetric_generator(3).toarray() @ g) / 27
    err = abs(dirichlet_form(f, 3) - oracle)
    rows = chebyshev_chain(PHI, 6, 1 / 3, 1.0, [(1.0, 0.14), (2.0, 0.14), (3.0, 0.14)], replicas=2000, seed=0)
    held = [bool(row.holds()) for row in rows]
    detail = f"Dirichlet oracle {err:.1e} (<= 1e-12); bound holds for (a, delta) pairs: {held}; " + ", ".join(
        f"P={r.prob_mc:.4f} <= {r.markov_bound:.3g} <= {r.bound:.3g}" for r in rows)
    assert report(9, err <= 1e-12 and all(held), detail)


def test_criterion_10_superexponential_trend(report):
    rates = [superexp_estimate(N, PHI, 0.1, 0.05, 0.88, 1000, seed=21).log_rate for N in (16, 32, 64)]
    ok = rates[0] >= rates[1] >= rates[2]
    assert report(10, ok, "(1/N) log P = " + ", ".join(f"{v:.4f}" for v in rates) + " for N = 16, 32, 64")


def test_criterion_11_conservation(report):
    prof = ProfileGrid.constant([0.3, 0.3])
    counts_ok = True
    for r in range(50):
        N = 16 + 8 * (r % 5)
        c0 = sample_product_multinomial(prof, N, np.random.default_rng([11, r]))
        res = run(c0, SMOOTH_H, SimParams(N, 0.1, seed=11, replica=r))
        counts_ok &= bool(np.array_equal(res.final.counts, c0.counts))
        counts_ok &= all(np.array_equal(res.path.at(t).counts, c0.counts) for t in (0.025, 0.05, 0.075))
    u = np.arange(128) / 128
    gamma = ProfileGrid(np.vstack([0.3 + 0.1 * np.sin(2 * np.pi * u), 0.3 - 0.1 * np.sin(4 * np.pi * u)]))
    traj = solve_hydro(gamma, SMOOTH_H, SchemeParams(M=128), 0.1, K=10)
    drift = float(np.max(np.abs(traj.means() - traj.means()[0]))) / traj.T
    ok = counts_ok and drift <= 1e-12
    assert report(11, ok, f"counts constant on 50 paths: {counts_ok}; PDE mass drift {drift:.1e} per unit time")
