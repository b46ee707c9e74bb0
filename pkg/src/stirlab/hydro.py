"""Coupled hydrodynamic equations, currents, mobility and free energy.

Each species obeys d_t rho_a = lap rho_a - 2 div( sum_{b != a} rho_a rho_b grad H_ab ), with
b running over the hole as well (rho_0 = 1 - sum rho, H_0 = 0). The solver is a
conservative finite-volume scheme on the periodic grid u_j = j/M.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np

from .lattice import ProfileGrid, SimplexError, check_simplex
from .potentials import PotentialSet


# -- pointwise thermodynamics -------------------------------------------------------------


def diffusion_matrix(n_species: int = 2) -> np.ndarray:
    return np.eye(n_species)


def mobility(rho) -> np.ndarray:
    """chi_ab = rho_a (delta_ab - rho_b)."""
    rho = check_simplex(np.asarray(rho, dtype=float), tol=1e-12)
    return np.diag(rho) - np.outer(rho, rho)


def _interior(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or rho.sum() >= 1:
        raise SimplexError("free energy requires rho strictly inside the simplex")
    return rho


def free_energy(rho) -> float:
    """sum_{a=0..n} rho_a log rho_a + log(n+1); zero at the uniform point."""
    rho = _interior(rho)
    full = np.concatenate([[1.0 - rho.sum()], rho])
    return float(np.sum(full * np.log(full)) + np.log(full.size))


def hessian(rho) -> np.ndarray:
    """F''_ab = delta_ab / rho_a + 1 / rho_0."""
    rho = _interior(rho)
    return np.diag(1.0 / rho) + 1.0 / (1.0 - rho.sum())


def einstein_residual(rho) -> float:
    """max |F''(rho) chi(rho) - I|."""
    rho = _interior(rho)
    return float(np.max(np.abs(hessian(rho) @ mobility(rho) - np.eye(rho.size))))


def simplex_grid(n_points: int = 50, n_species: int = 2) -> np.ndarray:
    """Interior sample points of the 2-species simplex, shape (n_points*(n_points+1)/2ish, 2)."""
    if n_species != 2:
        raise ValueError("grid helper is for two species")
    s = (np.arange(n_points) + 0.5) / (n_points + 1)
    a, b = np.meshgrid(s, s, indexing="ij")
    keep = a + b < 1 - 0.5 / (n_points + 1)
    return np.column_stack([a[keep], b[keep]])


def _grad_c(f, h):
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2 * h)


def currents(rho, H):
    """Fick, drift and total currents from central differences; arrays of shape (n, M)."""
    rho = np.asarray(rho, dtype=float)
    H = np.asarray(H, dtype=float)
    if rho.shape != H.shape:
        raise ValueError("rho and H must share the grid")
    h = 1.0 / rho.shape[-1]
    JF = -_grad_c(rho, h)
    gH = _grad_c(H, h)
    # 2 chi grad H evaluated pointwise
    JD = 2 * (rho * gH - rho * np.sum(rho * gH, axis=0, keepdims=True))
    return JF, JD, JF + JD


# -- trajectory container -----------------------------------------------------------------


@dataclass(frozen=True)
class DensityTrajectory:
    """rho_a(j/M, k dt) for k = 0..K; ``values`` has shape (K+1, n, M)."""

    values: np.ndarray
    dt: float
    substeps: int = 0
    rejections: int = 0

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_species(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> int:
        return self.values.shape[2]

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    def at_time(self, k: int) -> np.ndarray:
        return self.values[k]

    def means(self) -> np.ndarray:
        """Per-species spatial means, shape (K+1, n)."""
        return self.values.mean(axis=2)

    def to_csv(self, path) -> None:
        K1, n, M = self.values.shape
        t = np.repeat(self.times, M)
        u = np.tile(self.grid, K1)
        cols = np.column_stack([t, u] + [self.values[:, a, :].ravel() for a in range(n)])
        header = ",".join(["t", "u"] + [f"rho_{a + 1}" for a in range(n)])
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")

    _HEADER = struct.Struct("<IIId")

    def write_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self._HEADER.pack(self.M, self.K, self.n_species, self.dt))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def read_binary(cls, path) -> "DensityTrajectory":
        with open(path, "rb") as fh:
            M, K, n, dt = cls._HEADER.unpack(fh.read(cls._HEADER.size))
            vals = np.frombuffer(fh.read(), dtype="<f8").reshape(K + 1, n, M).copy()
        return cls(vals, dt)


# -- solver ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemeParams:
    M: int = 128
    dt: float | None = None  # None: largest stable step for the explicit stepper
    stepper: str = "explicit"  # or "imex"
    safety: float = 0.4
    tol: float = 1e-8
    max_halvings: int = 40

    def __post_init__(self):
        if self.stepper not in ("explicit", "imex"):
            raise ValueError("stepper must be 'explicit' or 'imex'")
        if self.M < 4:
            raise ValueError("M must be at least 4")
        h = 1.0 / self.M
        if self.stepper == "explicit" and self.dt is not None and self.dt > self.safety * h * h / 2 * (1 + 1e-12):
            raise ValueError(f"explicit stepper needs dt <= {self.safety * h * h / 2:.3e}")

    def step_size(self) -> float:
        h = 1.0 / self.M
        if self.dt is not None:
            return self.dt
        if self.stepper == "explicit":
            return self.safety * h * h / 2
        return 4 * h * h


class HydroFailure(RuntimeError):
    pass


@numba.njit(cache=True)
def _flux_kernel(rho, H, h, diffusion):
    n, M = rho.shape
    F = np.zeros((n, M))
    rb = np.empty(n + 1)
    dH = np.empty(n + 1)
    for j in range(M):
        jp = (j + 1) % M
        s = 0.0
        for a in range(n):
            rb[a + 1] = 0.5 * (rho[a, j] + rho[a, jp])
            s += rb[a + 1]
            dH[a + 1] = (H[a, jp] - H[a, j]) / h
        rb[0] = 1.0 - s
        dH[0] = 0.0
        for a in range(1, n + 1):
            acc = 0.0
            for b in range(n + 1):
                if b != a:
                    acc += rb[b] * (dH[a] - dH[b])
            F[a - 1, j] = 2.0 * rb[a] * acc
            if diffusion:
                F[a - 1, j] -= (rho[a - 1, jp] - rho[a - 1, j]) / h
    return F


def face_flux(rho, H, h, diffusion=True):
    """Flux through face j+1/2 for every species; rho, H have shape (n, M).

    F_a = -D+ rho_a + 2 rho_a sum_{b != a} rho_b D+ H_ab with face-averaged densities.
    """
    return _flux_kernel(np.ascontiguousarray(rho, dtype=float), np.ascontiguousarray(H, dtype=float), float(h), bool(diffusion))


def _divergence(F, h):
    return (F - np.roll(F, 1, axis=1)) / h


class _GridPotential:
    """Potentials on the solver grid, with the time-independent case cached."""

    def __init__(self, potentials, M):
        self.p = potentials
        self.u = np.arange(M) / M
        self.static = potentials is not None and potentials.times.size == 1
        self.cache = potentials.evaluate(self.u, 0.0) if self.static else None

    def __call__(self, t):
        if self.p is None:
            return None
        if self.static:
            return self.cache
        return self.p.evaluate(self.u, t)


@numba.njit(cache=True)
def _h_at(Hn, times, linear, t):
    K = times.size
    if K == 1 or t <= times[0]:
        return Hn[0].copy()
    if t >= times[K - 1]:
        return Hn[K - 1].copy()
    i = np.searchsorted(times, t, side="right") - 1
    if not linear:
        return Hn[i].copy()
    w = (t - times[i]) / (times[i + 1] - times[i])
    return (1.0 - w) * Hn[i] + w * Hn[i + 1]


@numba.njit(cache=True)
def _explicit_interval(rho, Hn, times, linear, has_h, t0, span, nsub, h, tol):
    # nsub uniform explicit steps over [t0, t0 + span]; stops at the first simplex violation
    dt = span / nsub
    n, M = rho.shape
    H = Hn[0].copy()
    for s in range(nsub):
        t = t0 + s * dt
        if has_h:
            H = _h_at(Hn, times, linear, t)
        F = _flux_kernel(rho, H, h, True)
        new = np.empty_like(rho)
        bad = False
        for j in range(M):
            jm = (j - 1) % M
            tot = 0.0
            for a in range(n):
                v = rho[a, j] - dt * (F[a, j] - F[a, jm]) / h
                new[a, j] = v
                tot += v
                if v < -tol or v > 1.0 + tol:
                    bad = True
            if tot > 1.0 + tol:
                bad = True
        if bad:
            return rho, s
        rho = new
    return rho, nsub


def _step(rho, H, dt, h, stepper, lap_symbol):
    if stepper == "explicit":
        if H is None:
            F = -(np.roll(rho, -1, axis=1) - rho) / h
        else:
            F = face_flux(rho, H, h)
        return rho - dt * _divergence(F, h)
    rhs = rho.copy()
    if H is not None:
        rhs -= dt * _divergence(face_flux(rho, H, h, diffusion=False), h)
    # (I - dt lap_h) rho_new = rhs, periodic, diagonal in Fourier space
    return np.real(np.fft.ifft(np.fft.fft(rhs, axis=1) / (1.0 + dt * lap_symbol), axis=1))


def _violation(rho, tol):
    return rho.min() < -tol or rho.max() > 1 + tol or rho.sum(axis=0).max() > 1 + tol


def solve_hydro(gamma: ProfileGrid, potentials: PotentialSet | None, scheme: SchemeParams, T: float, K: int = 16) -> DensityTrajectory:
    """Integrate from gamma up to T, storing K+1 equally spaced slices."""
    if gamma.M != scheme.M:
        raise ValueError("profile grid and scheme grid differ")
    if potentials is not None and potentials.n_species != gamma.n_species:
        raise ValueError("species count mismatch")
    if potentials is not None and potentials.is_zero():
        potentials = None
    M = scheme.M
    h = 1.0 / M
    k = np.fft.fftfreq(M, d=1.0 / M)
    lap_symbol = (4.0 / h**2) * np.sin(np.pi * k / M) ** 2
    out_dt = T / K
    dt0 = scheme.step_size()
    nsub = max(1, int(np.ceil(out_dt / dt0 - 1e-9)))
    Hgrid = _GridPotential(potentials, M)
    if potentials is None:
        Hn, tn, linear = np.zeros((1, gamma.n_species, M)), np.zeros(1), True
    else:
        Hn = np.stack([potentials.evaluate(Hgrid.u, tt) for tt in potentials.times])
        tn, linear = np.asarray(potentials.times, dtype=float), potentials.time_interp == "linear"
    rho = np.array(gamma.values, dtype=float)
    vals = np.empty((K + 1, gamma.n_species, M))
    vals[0] = rho
    total_sub = 0
    rejections = 0
    t = 0.0
    for kk in range(K):
        t_end = (kk + 1) * out_dt
        done = 0
        if scheme.stepper == "explicit":
            rho, done = _explicit_interval(rho, Hn, tn, linear, potentials is not None, kk * out_dt, out_dt, nsub, h, scheme.tol)
            total_sub += done
            t = kk * out_dt + done * out_dt / nsub
        for s in range(done, nsub):
            target = kk * out_dt + (s + 1) * out_dt / nsub
            # advance from t to target, halving on simplex violations
            while t < target - 1e-15 * max(1.0, target):
                dt = target - t
                for _ in range(scheme.max_halvings + 1):
                    H = Hgrid(t)
                    new = _step(rho, H, dt, h, scheme.stepper, lap_symbol)
                    if not _violation(new, scheme.tol):
                        break
                    rejections += 1
                    dt *= 0.5
                else:
                    raise HydroFailure(f"simplex violation not resolved after {scheme.max_halvings} halvings at t={t:.6g}")
                rho = new
                t = t + dt if t + dt < target else target
                total_sub += 1
        t = t_end
        vals[kk + 1] = rho
    return DensityTrajectory(vals, out_dt, total_sub, rejections)


def heat_trajectory(gamma: ProfileGrid, T: float, K: int) -> DensityTrajectory:
    """Exact solution of the semi-discrete heat equation d_t rho = Lap_h rho (Fourier diagonal)."""
    M = gamma.M
    k = np.fft.fftfreq(M, d=1.0 / M)
    lam = (4.0 * M * M) * np.sin(np.pi * k / M) ** 2
    g = np.fft.fft(gamma.values, axis=1)
    times = np.arange(K + 1) * (T / K)
    vals = np.real(np.fft.ifft(g[None, :, :] * np.exp(-lam[None, None, :] * times[:, None, None]), axis=2))
    return DensityTrajectory(vals, T / K)


def heat_mode_amplitude(rho_slice, mode: int = 1) -> float:
    """Amplitude of sin(2 pi mode u) in a periodic grid function."""
    M = rho_slice.size
    u = np.arange(M) / M
    return float(2.0 / M * np.sum(rho_slice * np.sin(2 * np.pi * mode * u)))


def discrete_heat_factor(M: int, dt: float, steps: int, stepper: str = "explicit", mode: int = 1) -> float:
    """Exact amplification of the discrete scheme for one Fourier mode (H = 0)."""
    lam = (4 * M * M) * np.sin(np.pi * mode / M) ** 2
    if stepper == "explicit":
        return float((1 - dt * lam) ** steps)
    return float((1 / (1 + dt * lam)) ** steps)
