"""Path weights between the tilted and the symmetric stirring dynamics.

Both forms walk the path piece by piece: between consecutive events and time-cell
boundaries the configuration is frozen and the potential is linear in t, so every
time integral only has to deal with the explicit time dependence of H.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .lattice import Configuration, ProfileGrid, sample_product_multinomial
from .potentials import PotentialSet
from .process import Path, SimParams, run

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class PathInconsistency(RuntimeError):
    """An event does not match the labels of the replayed configuration."""


@numba.njit(cache=True)
def _phi1(z):
    # expm1(z)/z, stable near 0
    if abs(z) < 1e-8:
        return 1.0 + 0.5 * z
    return np.expm1(z) / z


@numba.njit(cache=True)
def _event_kernel(sites, ev_t, ev_x, ev_a, ev_b, bounds, H):
    """Jump sum and exact compensator integral sum_x int (exp(grad H_ab) - 1)."""
    N = sites.size
    C = bounds.size - 1
    jump = 0.0
    comp = 0.0
    ie = 0
    nev = ev_t.size
    for c in range(C):
        tc0 = bounds[c]
        tc1 = bounds[c + 1]
        L = tc1 - tc0
        s0 = tc0
        while True:
            last = not (ie < nev and ev_t[ie] < tc1)
            s1 = tc1 if last else ev_t[ie]
            d = s1 - s0
            if d > 0.0:
                w0 = (s0 - tc0) / L
                for x in range(N):
                    y = (x + 1) % N
                    a = sites[x]
                    b = sites[y]
                    if a == b:
                        continue
                    g0 = (H[c, 0, a, y] - H[c, 0, a, x]) - (H[c, 0, b, y] - H[c, 0, b, x])
                    g1 = (H[c, 1, a, y] - H[c, 1, a, x]) - (H[c, 1, b, y] - H[c, 1, b, x])
                    A = g0 + w0 * (g1 - g0)
                    beta = (g1 - g0) / L
                    # int_0^d (exp(A + beta s) - 1) ds
                    comp += d * (np.exp(A) * _phi1(beta * d) - 1.0)
            if last:
                break
            x = ev_x[ie]
            y = (x + 1) % N
            a = sites[x]
            b = sites[y]
            if a != ev_a[ie] or b != ev_b[ie] or a == b:
                return jump, comp, ie + 1
            w = (s1 - tc0) / L
            jump += (1.0 - w) * ((H[c, 0, a, y] - H[c, 0, a, x]) - (H[c, 0, b, y] - H[c, 0, b, x])) + w * (
                (H[c, 1, a, y] - H[c, 1, a, x]) - (H[c, 1, b, y] - H[c, 1, b, x])
            )
            sites[x] = b
            sites[y] = a
            ie += 1
            s0 = s1
    return jump, comp, 0


@numba.njit(cache=True)
def _pairing(sites, Hs):
    # N <mu, H> = sum_x H_{eta(x)}(x), hole row is zero
    acc = 0.0
    for x in range(sites.size):
        acc += Hs[sites[x], x]
    return acc


@numba.njit(cache=True)
def _mart_integrand(sites, Hs, dHs, N2):
    N = sites.size
    gen = 0.0
    for x in range(N):
        y = (x + 1) % N
        a = sites[x]
        b = sites[y]
        if a == b:
            continue
        # energy change of the swap, evaluated directly on the two sites
        dF = (Hs[b, x] + Hs[a, y]) - (Hs[a, x] + Hs[b, y])
        gen += np.expm1(dF)
    return N2 * gen + _pairing(sites, dHs)


@numba.njit(cache=True)
def _gl_piece(sites, Hc0, Hc1, tc0, L, s0, s1, N2, glx, glw, nsub):
    dH = (Hc1 - Hc0) / L
    acc = 0.0
    h = (s1 - s0) / nsub
    for k in range(nsub):
        a0 = s0 + k * h
        for i in range(glx.size):
            t = a0 + 0.5 * h * (glx[i] + 1.0)
            w = (t - tc0) / L
            Hs = (1.0 - w) * Hc0 + w * Hc1
            acc += 0.5 * h * glw[i] * _mart_integrand(sites, Hs, dH, N2)
    return acc


@numba.njit(cache=True)
def _martingale_kernel(sites, ev_t, ev_x, bounds, H, glx, glw, rtol):
    """Boundary pairings minus the time integral of the exponential-martingale drift."""
    N = sites.size
    N2 = float(N) * float(N)
    C = bounds.size - 1
    boundary = 0.0
    integral = 0.0
    ie = 0
    nev = ev_t.size
    for c in range(C):
        tc0 = bounds[c]
        tc1 = bounds[c + 1]
        L = tc1 - tc0
        boundary -= _pairing(sites, H[c, 0])
        s0 = tc0
        while True:
            last = not (ie < nev and ev_t[ie] < tc1)
            s1 = tc1 if last else ev_t[ie]
            if s1 > s0:
                nsub = 1
                coarse = _gl_piece(sites, H[c, 0], H[c, 1], tc0, L, s0, s1, N2, glx, glw, nsub)
                while True:
                    nsub *= 2
                    fine = _gl_piece(sites, H[c, 0], H[c, 1], tc0, L, s0, s1, N2, glx, glw, nsub)
                    if abs(fine - coarse) <= rtol * (1.0 + abs(fine)) or nsub >= 64:
                        break
                    coarse = fine
                integral += fine
            if last:
                break
            x = ev_x[ie]
            y = (x + 1) % N
            tmp = sites[x]
            sites[x] = sites[y]
            sites[y] = tmp
            ie += 1
            s0 = s1
        boundary += _pairing(sites, H[c, 1])
    return boundary, integral


@dataclass(frozen=True)
class GirsanovWeight:
    log_rn_event: float
    log_rn_martingale: float
    jump_term: float
    compensator: float
    boundary_terms: float
    drift_integral: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _cells(path: Path, potentials: PotentialSet | None):
    n = path.config0.n_species
    if potentials is None:
        potentials = PotentialSet.zero(n)
    return potentials.cells(path.config0.N, path.T)


def event_terms(path: Path, potentials: PotentialSet | None):
    """(jump sum, N^2 * compensator integral)."""
    bounds, H = _cells(path, potentials)
    log = path.log
    jump, comp, bad = _event_kernel(
        path.config0.sites.astype(np.int64), log.t, log.x.astype(np.int64), log.a.astype(np.int64),
        log.b.astype(np.int64), bounds, np.ascontiguousarray(H)
    )
    if bad:
        raise PathInconsistency(f"event {bad - 1} does not match the replayed configuration")
    N = path.config0.N
    return float(jump), float(N * N * comp)


def log_rn_event_form(path: Path, potentials: PotentialSet | None) -> float:
    """sum over events of grad_N H_ab - N^2 int sum_x (exp(grad_N H_ab) - 1) ds."""
    jump, comp = event_terms(path, potentials)
    return jump - comp


def martingale_terms(path: Path, potentials: PotentialSet | None, rtol: float = 1e-13):
    bounds, H = _cells(path, potentials)
    boundary, integral = _martingale_kernel(
        path.config0.sites.astype(np.int64), path.log.t, path.log.x.astype(np.int64), bounds,
        np.ascontiguousarray(H), _GL_X, _GL_W, rtol
    )
    return float(boundary), float(integral)


def log_rn_martingale_form(path: Path, potentials: PotentialSet | None) -> float:
    """N<mu_T, H_T> - N<mu_0, H_0> - int [N^2 sum_x (exp(grad_N H_ab) - 1) + N<mu_s, d_s H>] ds."""
    boundary, integral = martingale_terms(path, potentials)
    return boundary - integral


def girsanov_weight(path: Path, potentials: PotentialSet | None) -> GirsanovWeight:
    jump, comp = event_terms(path, potentials)
    boundary, integral = martingale_terms(path, potentials)
    return GirsanovWeight(jump - comp, boundary - integral, jump, comp, boundary, integral)


def exponential_bound(potentials: PotentialSet, T: float) -> float:
    """c = 2T max|grad H| (1 + max|grad H|) + 2 max|H|, bounding (1/N) log Z."""
    g = potentials.max_gradient()
    return 2 * T * g * (1 + g) + 2 * potentials.max_abs()


# -- generator diagnostics ---------------------------------------------------------------------


def exact_generator_term(config: Configuration, potentials: PotentialSet, t: float) -> float:
    """N^2 sum_x (exp(grad_N H_ab(x)) - 1): exp(-N<mu,H>) L exp(N<mu,H>)."""
    N = config.N
    Hs = potentials.lattice_at(N, t)
    s = config.sites.astype(np.int64)
    a, b = s, np.roll(s, -1)
    idx = np.arange(N)
    g = np.roll(Hs, -1, axis=1) - Hs
    dF = g[a, idx] - g[b, idx]
    return float(N * N * np.sum(np.expm1(dF)))


def taylor_generator_term(config: Configuration, potentials: PotentialSet, t: float) -> float:
    """Second-order expansion of :func:`exact_generator_term`.

    sum_x sum_a eta_a^x Lap_N H_a + 1/2 sum_x sum_a [eta_a^x (1 - eta_a^{x+1}) + eta_a^{x+1}(1 - eta_a^x)] (grad_N H_a)^2
    - sum_x sum_{a != b >= 1} eta_a^x eta_b^{x+1} grad_N H_a grad_N H_b, with grad_N and Lap_N the rescaled differences.
    """
    N = config.N
    n = config.n_species
    H = potentials.lattice_at(N, t)[1:]
    grad = N * (np.roll(H, -1, axis=1) - H)
    lap = N * N * (np.roll(H, -1, axis=1) - 2 * H + np.roll(H, 1, axis=1))
    eta = np.stack([config.sites == a for a in range(1, n + 1)]).astype(float)
    eta1 = np.roll(eta, -1, axis=1)
    first = np.sum(eta * lap)
    second = 0.5 * np.sum((eta * (1 - eta1) + eta1 * (1 - eta)) * grad**2)
    cross = 0.0
    for a in range(n):
        for b in range(n):
            if a != b:
                cross += np.sum(eta[a] * eta1[b] * grad[a] * grad[b])
    return float(first + second - cross)


# -- Monte-Carlo checks -------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanOneEstimate:
    mean: float
    stderr: float
    replicas: int
    max_scaled_log: float  # max over replicas of (1/N) log Z

    def within(self, k: float = 4.0) -> bool:
        if self.stderr == 0:
            return abs(self.mean - 1) < 1e-12
        return abs(self.mean - 1) <= k * self.stderr


def check_mean_one(params: SimParams, potentials: PotentialSet, profile: ProfileGrid, replicas: int,
                   reverse: bool = False) -> MeanOneEstimate:
    """E[Z] under the symmetric dynamics, or E[1/Z] under the tilted one when ``reverse``."""
    if replicas < 100:
        raise ValueError("use at least 100 replicas")
    N = params.N
    vals = np.empty(replicas)
    ss = np.random.SeedSequence([params.seed, 1])
    init = ss.spawn(replicas)
    for r in range(replicas):
        c0 = sample_product_multinomial(profile, N, np.random.default_rng(init[r]))
        sim_pot = potentials if reverse else None
        res = run(c0, sim_pot, SimParams(N, params.T, params.seed, params.thinning_bound_margin, replica=r))
        vals[r] = log_rn_event_form(res.path, potentials)
    w = np.exp(-vals if reverse else vals)
    return MeanOneEstimate(float(w.mean()), float(w.std(ddof=1) / np.sqrt(replicas)), replicas,
                           float(np.max(np.abs(vals)) / N))


# -- Dynkin martingale and carre du champ --------------------------------------------------------


@numba.njit(cache=True)
def _dynkin_integrand(sites, Hs, Gs, dGs, Nf):
    # <mu, d_s G> + N sum_x c^{ab} (grad G_a - grad G_b)
    N = sites.size
    acc = 0.0
    for x in range(N):
        acc += dGs[sites[x], x] / Nf
        y = (x + 1) % N
        a = sites[x]
        b = sites[y]
        if a == b:
            continue
        c = np.exp((Hs[a, y] - Hs[a, x]) - (Hs[b, y] - Hs[b, x]))
        acc += Nf * c * ((Gs[a, y] - Gs[a, x]) - (Gs[b, y] - Gs[b, x]))
    return acc


@numba.njit(cache=True)
def _dynkin_kernel(sites, ev_t, ev_x, bounds, H, G, glx, glw, t_stop):
    N = sites.size
    Nf = float(N)
    C = bounds.size - 1
    integral = 0.0
    ie = 0
    nev = ev_t.size
    start = _pairing(sites, G[0, 0]) / Nf
    for c in range(C):
        tc0 = bounds[c]
        tc1 = min(bounds[c + 1], t_stop)
        if tc1 <= tc0:
            break
        L = bounds[c + 1] - tc0
        dH = (H[c, 1] - H[c, 0]) / L
        dG = (G[c, 1] - G[c, 0]) / L
        s0 = tc0
        while True:
            last = not (ie < nev and ev_t[ie] < tc1)
            s1 = tc1 if last else ev_t[ie]
            h = s1 - s0
            if h > 0:
                for i in range(glx.size):
                    t = s0 + 0.5 * h * (glx[i] + 1.0)
                    w = (t - tc0) / L
                    integral += 0.5 * h * glw[i] * _dynkin_integrand(
                        sites, H[c, 0] + w * (H[c, 1] - H[c, 0]), G[c, 0] + w * (G[c, 1] - G[c, 0]), dG, Nf
                    )
            if last:
                break
            x = ev_x[ie]
            y = (x + 1) % N
            tmp = sites[x]
            sites[x] = sites[y]
            sites[y] = tmp
            ie += 1
            s0 = s1
        end_w = (tc1 - tc0) / L
        end = G[c, 0] + end_w * (G[c, 1] - G[c, 0])
        if tc1 >= t_stop:
            return _pairing(sites, end) / Nf - start - integral
    # unreachable for t_stop within the cells
    return np.nan


def _joint_cells(N, T, potentials, G):
    """Cells shared by the tilting potential and the test function."""
    n = G.n_species
    if potentials is None:
        potentials = PotentialSet.zero(n)
    nodes = np.union1d(potentials.times, G.times)
    inner = nodes[(nodes > 0) & (nodes < T)]
    bounds = np.concatenate([[0.0], inner, [T]])
    C = bounds.size - 1
    Hc = np.empty((C, 2, n + 1, N))
    Gc = np.empty((C, 2, n + 1, N))
    for c in range(C):
        for e, tt in enumerate((bounds[c], bounds[c + 1])):
            # one-sided evaluation so piecewise-constant data are read inside the cell
            te = tt if e == 0 else np.nextafter(tt, -np.inf)
            Hc[c, e] = potentials.lattice_at(N, te)
            Gc[c, e] = G.lattice_at(N, te)
    return bounds, Hc, Gc


def dynkin_martingale(path: Path, G: PotentialSet, t: float | None = None, potentials: PotentialSet | None = None) -> float:
    """M^G(t) = <mu_t, G_t> - <mu_0, G_0> - int_0^t (<mu_s, d_s G> + N sum_x c^{ab} grad_N G_ab) ds.

    ``potentials`` are the ones the path was simulated with (None for the symmetric dynamics).
    """
    t = path.T if t is None else t
    if not 0.0 <= t <= path.T:
        raise ValueError("t must lie in [0, T]")
    if t == 0.0:
        return 0.0
    N = path.config0.N
    bounds, Hc, Gc = _joint_cells(N, path.T, potentials, G)
    return float(
        _dynkin_kernel(path.config0.sites.astype(np.int64), path.log.t, path.log.x.astype(np.int64), bounds, Hc, Gc,
                       _GL_X, _GL_W, float(t))
    )


def carre_du_champ(config: Configuration, G: PotentialSet, potentials: PotentialSet | None = None, t: float = 0.0) -> float:
    """Gamma = sum_x c^{ab}(x) (grad_N G_a - grad_N G_b)^2 with plain forward differences."""
    N = config.N
    n = config.n_species
    if potentials is None:
        potentials = PotentialSet.zero(n)
    Hs = potentials.lattice_at(N, t)
    Gs = G.lattice_at(N, t)
    s = config.sites.astype(np.int64)
    a, b = s, np.roll(s, -1)
    idx = np.arange(N)
    gH = np.roll(Hs, -1, axis=1) - Hs
    gG = np.roll(Gs, -1, axis=1) - Gs
    c = np.exp(gH[a, idx] - gH[b, idx])
    return float(np.sum(c * (gG[a, idx] - gG[b, idx]) ** 2))
