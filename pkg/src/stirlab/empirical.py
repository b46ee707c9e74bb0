"""Empirical density fields, block averages and the replacement statistic V_{N,eps}."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .lattice import Configuration, ProfileGrid, all_configurations, check_simplex, sample_product_multinomial
from .process import Path, SimParams, run


@dataclass(frozen=True)
class EmpiricalField:
    """Mass 1/N at x/N for every particle; ``mass`` has shape (n_species, N)."""

    mass: np.ndarray

    @property
    def N(self) -> int:
        return self.mass.shape[1]

    @property
    def n_species(self) -> int:
        return self.mass.shape[0]

    def totals(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def hole_mass(self) -> float:
        return 1.0 - float(self.mass.sum())

    def density(self) -> np.ndarray:
        """Per-site densities, i.e. N * mass."""
        return self.mass * self.N

    def to_csv(self, path) -> None:
        u = np.arange(self.N) / self.N
        cols = np.column_stack([u, self.density().T])
        header = ",".join(["u"] + [f"rho_{a + 1}" for a in range(self.n_species)])
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")


def empirical_density(config: Configuration) -> EmpiricalField:
    labels = np.arange(1, config.n_species + 1)
    mass = (config.sites[None, :] == labels[:, None]).astype(float) / config.N
    return EmpiricalField(mass)


def pair(field: EmpiricalField, G) -> float:
    """Riemann pairing sum_a sum_x G_a(x/N) mass_a(x)."""
    G = np.asarray(G, dtype=float)
    if G.shape != field.mass.shape:
        raise ValueError(f"G has shape {G.shape}, expected {field.mass.shape}")
    return float(np.sum(G * field.mass))


def block_average(config: Configuration, x: int, k: int) -> np.ndarray:
    """Fraction of each species label in the periodic window {x-k, ..., x+k}."""
    N = config.N
    if 2 * k + 1 > N:
        raise ValueError("window 2k+1 exceeds N")
    idx = (x + np.arange(-k, k + 1)) % N
    w = config.sites[idx]
    return np.array([np.mean(w == a) for a in range(1, config.n_species + 1)])


def smooth(field: EmpiricalField, eps: float) -> EmpiricalField:
    """Periodic moving average over 2*floor(N eps)+1 sites (the kernel (1/2eps) 1_[-eps,eps])."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    k = int(np.floor(field.N * eps))
    out = np.zeros_like(field.mass)
    for s in range(-k, k + 1):
        out += np.roll(field.mass, s, axis=1)
    return EmpiricalField(out / (2 * k + 1))


# -- local observables ------------------------------------------------------------------


@dataclass(frozen=True)
class LocalObservable:
    """phi on patterns of ``ell`` consecutive sites; pattern code = sum label_i (n+1)^(ell-1-i)."""

    ell: int
    table: np.ndarray
    n_species: int = 2

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float).ravel()
        if t.size != (self.n_species + 1) ** self.ell:
            raise ValueError("table must cover every local pattern exactly once")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_function(cls, f, ell: int, n_species: int = 2) -> "LocalObservable":
        pats = all_configurations(ell, n_species)
        return cls(ell, np.array([f(p) for p in pats], dtype=float), n_species)

    @classmethod
    def occupation_product(cls, labels, n_species: int = 2) -> "LocalObservable":
        """prod_i eta_{labels[i]}^i, e.g. (1, 1) for eta_1^0 eta_1^1."""
        labels = tuple(int(a) for a in labels)
        return cls.from_function(lambda p: float(all(p[i] == a for i, a in enumerate(labels))), len(labels), n_species)

    @property
    def patterns(self) -> np.ndarray:
        return all_configurations(self.ell, self.n_species)

    def evaluate(self, sites, y: int = 0) -> float:
        """(tau_y phi)(eta): phi applied to sites y, ..., y+ell-1 (periodic)."""
        sites = np.asarray(sites)
        q = self.n_species + 1
        code = 0
        for i in range(self.ell):
            code = code * q + int(sites[(y + i) % sites.size])
        return float(self.table[code])

    def is_linear(self) -> bool:
        """True if phi is an affine function of single-site occupations."""
        pats = self.patterns
        X = np.column_stack([np.ones(len(pats))] + [(pats[:, i] == a).astype(float) for i in range(self.ell) for a in range(1, self.n_species + 1)])
        coef, *_ = np.linalg.lstsq(X, self.table, rcond=None)
        return bool(np.allclose(X @ coef, self.table, atol=1e-12))


def tilde_phi(phi: LocalObservable, p) -> np.ndarray:
    """Expectation of phi under the product multinomial with densities p.

    ``p`` has shape (n,) or (n, K); the result is a scalar or shape (K,).
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = p.reshape(phi.n_species, -1)
    check_simplex(p, tol=1e-12)
    full = np.vstack([1.0 - p.sum(axis=0), p])  # (n+1, K)
    pats = phi.patterns  # (P, ell)
    probs = np.ones((pats.shape[0], p.shape[1]))
    for i in range(phi.ell):
        probs *= full[pats[:, i]]
    out = phi.table @ probs
    return float(out[0]) if single else out


def window_half_width(N: int, eps: float) -> int:
    return int(np.floor(N * eps))


def tilde_table(phi: LocalObservable, m: int) -> np.ndarray:
    """phi-tilde at every block density vector c/m, c in {0..m}^n (entries outside the simplex unused)."""
    n = phi.n_species
    grids = np.indices((m + 1,) * n).reshape(n, -1)
    ok = grids.sum(axis=0) <= m
    vals = np.zeros(grids.shape[1])
    vals[ok] = tilde_phi(phi, grids[:, ok] / m)
    return vals.reshape((m + 1,) * n)


@numba.njit(cache=True)
def _v_value(sites, table, ell, q, k, tilde_flat, m):
    N = sites.size
    n = q - 1
    phiv = np.empty(N)
    for y in range(N):
        code = 0
        for i in range(ell):
            code = code * q + sites[(y + i) % N]
        phiv[y] = table[code]
    total = 0.0
    cnt = np.zeros(n, dtype=np.int64)
    for x in range(N):
        s = 0.0
        for a in range(n):
            cnt[a] = 0
        for d in range(-k, k + 1):
            y = (x + d) % N
            s += phiv[y]
            lab = sites[y]
            if lab > 0:
                cnt[lab - 1] += 1
        idx = 0
        for a in range(n):
            idx = idx * (m + 1) + cnt[a]
        total += abs(s / m - tilde_flat[idx])
    return total


@numba.njit(cache=True)
def _circ_dist(a, b, N):
    d = abs(a - b) % N
    return min(d, N - d)


@numba.njit(cache=True)
def _v_integral(sites, ev_t, ev_x, T, table, ell, q, k, tilde_flat, m):
    # incremental bookkeeping: a swap at (x, x+1) only touches the phi values starting at
    # x-ell+1..x+1 and the windows centred within k of those sites
    N = sites.size
    n = q - 1
    if 2 * k + ell + 2 > N:
        acc = 0.0
        t_prev = 0.0
        for i in range(ev_t.size):
            acc += (ev_t[i] - t_prev) * _v_value(sites, table, ell, q, k, tilde_flat, m)
            x = ev_x[i]
            y = (x + 1) % N
            tmp = sites[x]
            sites[x] = sites[y]
            sites[y] = tmp
            t_prev = ev_t[i]
        return acc + (T - t_prev) * _v_value(sites, table, ell, q, k, tilde_flat, m)

    phiv = np.empty(N)
    for y in range(N):
        code = 0
        for i in range(ell):
            code = code * q + sites[(y + i) % N]
        phiv[y] = table[code]
    S = np.zeros(N)
    cnt = np.zeros((N, n), dtype=np.int64)
    term = np.empty(N)
    V = 0.0
    for c in range(N):
        for d in range(-k, k + 1):
            y = (c + d) % N
            S[c] += phiv[y]
            if sites[y] > 0:
                cnt[c, sites[y] - 1] += 1
        idx = 0
        for a in range(n):
            idx = idx * (m + 1) + cnt[c, a]
        term[c] = abs(S[c] / m - tilde_flat[idx])
        V += term[c]

    acc = 0.0
    t_prev = 0.0
    for i in range(ev_t.size):
        acc += (ev_t[i] - t_prev) * V
        x = ev_x[i]
        x1 = (x + 1) % N
        la = sites[x]
        lb = sites[x1]
        sites[x] = lb
        sites[x1] = la
        t_prev = ev_t[i]
        # phi values that change
        for j in range(ell + 1):
            y = (x - ell + 1 + j) % N
            code = 0
            for r in range(ell):
                code = code * q + sites[(y + r) % N]
            dphi = table[code] - phiv[y]
            if dphi != 0.0:
                phiv[y] += dphi
                for d in range(-k, k + 1):
                    S[(y + d) % N] += dphi
        for j in range(2 * k + ell + 2):
            c = (x - ell + 1 - k + j) % N
            dx = _circ_dist(c, x, N) <= k
            dx1 = _circ_dist(c, x1, N) <= k
            if dx and not dx1:
                if la > 0:
                    cnt[c, la - 1] -= 1
                if lb > 0:
                    cnt[c, lb - 1] += 1
            elif dx1 and not dx:
                if lb > 0:
                    cnt[c, lb - 1] -= 1
                if la > 0:
                    cnt[c, la - 1] += 1
            idx = 0
            for a in range(n):
                idx = idx * (m + 1) + cnt[c, a]
            new = abs(S[c] / m - tilde_flat[idx])
            V += new - term[c]
            term[c] = new
    return acc + (T - t_prev) * V


def _check_window(N, phi, eps):
    k = window_half_width(N, eps)
    if k < phi.ell - 1:
        raise ValueError("floor(N eps) must be at least the range ell-1 of phi")
    if 2 * k + 1 > N:
        raise ValueError("window exceeds the torus")
    return k


def v_statistic(config: Configuration, phi: LocalObservable, eps: float) -> float:
    """V = sum_x | block average of tau_y phi - phi-tilde(block densities) | (no 1/N prefactor)."""
    k = _check_window(config.N, phi, eps)
    m = 2 * k + 1
    tt = tilde_table(phi, m).ravel()
    return float(_v_value(config.sites.astype(np.int64), phi.table, phi.ell, phi.n_species + 1, k, tt, m))


@dataclass(frozen=True)
class VPathStatistic:
    integral: float  # int_0^T V dt
    scaled_integral: float  # (1/N) int_0^T V dt
    scaled_time_average: float  # (1/(N T)) int_0^T V dt


def v_path_statistic(path: Path, phi: LocalObservable, eps: float) -> VPathStatistic:
    N = path.config0.N
    k = _check_window(N, phi, eps)
    m = 2 * k + 1
    tt = tilde_table(phi, m).ravel()
    I = float(
        _v_integral(path.config0.sites.astype(np.int64), path.log.t, path.log.x.astype(np.int64), path.T,
                    phi.table, phi.ell, phi.n_species + 1, k, tt, m)
    )
    return VPathStatistic(I, I / N, I / (N * path.T))


@dataclass(frozen=True)
class SuperexpEstimate:
    N: int
    probability: float
    stderr: float
    log_rate: float  # (1/N) log probability, -inf if no hit
    hits: int
    replicas: int


def superexp_estimate(N: int, phi: LocalObservable, eps: float, delta: float, T: float, replicas: int,
                      seed: int = 0, p=(1 / 3, 1 / 3)) -> SuperexpEstimate:
    """Monte-Carlo estimate of P((1/N) int_0^T V dt >= delta) for the symmetric process from nu^p."""
    prof = ProfileGrid.constant(p)
    ss = np.random.SeedSequence(seed)
    hits = 0
    for r in range(replicas):
        init_seed, = ss.spawn(1)
        c0 = sample_product_multinomial(prof, N, np.random.default_rng(init_seed))
        res = run(c0, None, SimParams(N, T, seed=seed, replica=r))
        if v_path_statistic(res.path, phi, eps).scaled_integral >= delta:
            hits += 1
    prob = hits / replicas
    se = np.sqrt(prob * (1 - prob) / replicas)
    return SuperexpEstimate(N, prob, float(se), float(np.log(prob) / N) if hits else -np.inf, hits, replicas)
