import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stirlab.hydro import (DensityTrajectory, HydroFailure, SchemeParams, currents, discrete_heat_factor,
                           einstein_residual, free_energy, heat_mode_amplitude, heat_trajectory, hessian, mobility,
                           simplex_grid, solve_hydro)
from stirlab.lattice import ProfileGrid
from stirlab.potentials import PotentialSet


def sine_profile(M, amp=0.1):
    u = np.arange(M) / M
    return ProfileGrid(np.vstack([1 / 3 + amp * np.sin(2 * np.pi * u), 1 / 3 + 0 * u]))


def test_einstein_identity_on_grid():
    pts = simplex_grid(50)
    assert len(pts) > 1000
    assert max(einstein_residual(p) for p in pts) <= 1e-12


def test_hessian_matches_finite_differences():
    rho = np.array([0.2, 0.45])
    e = 1e-5
    fd = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            di, dj = np.eye(2)[i] * e, np.eye(2)[j] * e
            fd[i, j] = (free_energy(rho + di + dj) - free_energy(rho + di - dj) - free_energy(rho - di + dj)
                        + free_energy(rho - di - dj)) / (4 * e * e)
    np.testing.assert_allclose(hessian(rho), fd, rtol=1e-5)
    assert free_energy([1 / 3, 1 / 3]) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.0, 1.0))
def test_mobility_is_psd_covariance(a, frac):
    b = (0.99 - a) * frac
    chi = mobility([a, b])
    np.testing.assert_allclose(chi, chi.T)
    assert np.linalg.eigvalsh(chi).min() >= -1e-15


def test_heat_decay_matches_exponential():
    M, T = 256, 0.01
    traj = solve_hydro(sine_profile(M), None, SchemeParams(M=M), T, K=4)
    a0 = heat_mode_amplitude(traj.values[0, 0])
    for k, t in enumerate(traj.times):
        assert heat_mode_amplitude(traj.values[k, 0]) / a0 == pytest.approx(np.exp(-4 * np.pi**2 * t), rel=1e-2)
    # and exactly equals the discrete amplification factor
    assert heat_mode_amplitude(traj.values[-1, 0]) / a0 == pytest.approx(
        discrete_heat_factor(M, T / 4 / (traj.substeps // 4), traj.substeps), rel=1e-10)


def test_heat_trajectory_exact():
    traj = heat_trajectory(sine_profile(64), 0.02, 2)
    lam = 4 * 64**2 * np.sin(np.pi / 64) ** 2
    assert heat_mode_amplitude(traj.values[-1, 0]) == pytest.approx(0.1 * np.exp(-lam * 0.02), rel=1e-12)


def test_imex_agrees_with_explicit():
    M = 64
    H = PotentialSet.fourier([[(1, 0.0, 0.5)], [(1, 0.5, 0.0)]], Mu=512)
    a = solve_hydro(sine_profile(M), H, SchemeParams(M=M), 0.02, K=2)
    b = solve_hydro(sine_profile(M), H, SchemeParams(M=M, stepper="imex", dt=1e-6), 0.02, K=2)
    assert np.max(np.abs(a.values[-1] - b.values[-1])) < 1e-4


def test_equilibrium_profile_is_stationary():
    M = 128
    u = np.arange(M) / M
    H = np.vstack([0.4 * np.sin(2 * np.pi * u), 0.3 * np.cos(2 * np.pi * u)])
    z = np.exp(2 * H)
    rho = 0.6 * z / (1 + 0.6 * z.sum(axis=0))
    _, _, J = currents(rho, H)
    assert np.max(np.abs(J)) < 1e-2
    pot = PotentialSet(H[:, :, None], [0.0])
    traj = solve_hydro(ProfileGrid(rho), pot, SchemeParams(M=M), 0.05, K=1)
    assert np.max(np.abs(traj.values[-1] - rho)) < 1e-3


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.0, 0.3))
def test_mass_conserved_and_simplex_preserved(c1, c2, amp):
    M = 64
    H = PotentialSet.fourier([[(1, c1, 0.0)], [(1, 0.0, c2)]], Mu=256)
    traj = solve_hydro(sine_profile(M, amp), H, SchemeParams(M=M), 0.02, K=4)
    drift = np.abs(traj.means() - traj.means()[0]).max()
    assert drift <= 1e-12 * traj.T + 1e-15
    assert traj.values.min() >= -1e-8 and traj.values.sum(axis=1).max() <= 1 + 1e-8


def test_sum_of_species_solves_single_species_equation():
    M = 64
    H1 = PotentialSet.fourier([[(1, 0.3, 0.2)]], Mu=512)
    H2 = PotentialSet.fourier([[(1, 0.3, 0.2)], [(1, 0.3, 0.2)]], Mu=512)
    prof = sine_profile(M)
    two = solve_hydro(prof, H2, SchemeParams(M=M), 0.02, K=2)
    one = solve_hydro(ProfileGrid(prof.values.sum(axis=0, keepdims=True)), H1, SchemeParams(M=M), 0.02, K=2)
    assert np.max(np.abs(two.values.sum(axis=1) - one.values[:, 0])) <= 1e-10


def test_scheme_validation_and_failure():
    with pytest.raises(ValueError):
        SchemeParams(M=64, dt=1.0)
    with pytest.raises(ValueError):
        SchemeParams(stepper="rk4")
    big = PotentialSet.fourier([[(1, 0.0, 400.0)], [(1, 400.0, 0.0)]], Mu=256)
    with pytest.raises(HydroFailure):
        solve_hydro(sine_profile(32, 0.3), big, SchemeParams(M=32, stepper="imex", dt=0.01, max_halvings=3), 0.02, K=1)


def test_binary_roundtrip(tmp_path):
    traj = heat_trajectory(sine_profile(16), 0.01, 3)
    traj.write_binary(tmp_path / "t.bin")
    back = DensityTrajectory.read_binary(tmp_path / "t.bin")
    np.testing.assert_array_equal(back.values, traj.values)
    assert back.dt == traj.dt
    traj.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().count("\n") == 4 * 16 + 1
