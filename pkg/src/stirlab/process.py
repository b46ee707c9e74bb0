"""Weakly asymmetric multispecies stirring on Z/NZ under diffusive scaling.

An ordered pair (a at x, b at x+1) exchanges at microscopic rate
exp(grad_N H_ab(x/N, t)) with grad_N the forward difference, and the chain runs at
N^2 times that rate. Time-dependent rates are sampled exactly by Poisson thinning
against a per-cell constant majorant.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numba
import numpy as np

from .lattice import Configuration, all_configurations, state_index
from .potentials import PotentialSet


class BoundViolation(RuntimeError):
    """The thinning majorant was below an encountered rate."""


@dataclass(frozen=True)
class SimParams:
    N: int
    T: float
    seed: int = 0
    thinning_bound_margin: float = 1.0
    replica: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.thinning_bound_margin < 1.0:
            raise ValueError("thinning_bound_margin must be >= 1")


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based stream for one replica."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica,))))


# -- single-bond operations ------------------------------------------------------------


def bond_rate(config: Configuration, x: int, potentials: PotentialSet, t: float, N: int | None = None) -> float:
    """Microscopic exchange rate of the bond (x, x+1) for the labels currently on it."""
    N = config.N if N is None else N
    y = (x + 1) % config.N
    a, b = int(config.sites[x]), int(config.sites[y])
    return pair_rate(a, b, x, potentials, t, N)


def pair_rate(a: int, b: int, x: int, potentials: PotentialSet, t: float, N: int) -> float:
    """exp(H_ab((x+1)/N, t) - H_ab(x/N, t)) for label a at x and b at x+1."""
    u = np.array([x / N, (x + 1) / N])
    h = potentials.pair(a, b, u, t)
    return float(np.exp(h[1] - h[0]))


def apply_exchange(config: Configuration, x: int, a: int, b: int) -> Configuration:
    """Swap the labels of x and x+1 if they read (a, b); identity otherwise."""
    y = (x + 1) % config.N
    if a == b or config.sites[x] != a or config.sites[y] != b:
        return config
    s = config.sites.copy()
    s[x], s[y] = b, a
    return Configuration(s, n_species=config.n_species)


# -- thinning kernel --------------------------------------------------------------------


@numba.njit(cache=True)
def _cell_bound(Hc, margin):
    # g[a, x] = H_a(x+1) - H_a(x); the pair gradient g_a - g_b is linear in t, so its
    # max over the cell is attained at an endpoint
    n1, N = Hc.shape[1], Hc.shape[2]
    best = 0.0
    for e in range(2):
        for x in range(N):
            y = (x + 1) % N
            gmax = -1e300
            gmin = 1e300
            for a in range(n1):
                g = Hc[e, a, y] - Hc[e, a, x]
                if g > gmax:
                    gmax = g
                if g < gmin:
                    gmin = g
            if gmax - gmin > best:
                best = gmax - gmin
    return margin * np.exp(best)


@numba.njit(cache=True)
def _set_active(x, flag, active, pos, nact):
    if flag and pos[x] < 0:
        active[nact] = x
        pos[x] = nact
        nact += 1
    elif (not flag) and pos[x] >= 0:
        i = pos[x]
        last = active[nact - 1]
        active[i] = last
        pos[last] = i
        pos[x] = -1
        nact -= 1
    return nact


@numba.njit(cache=True)
def _simulate_kernel(sites, bounds, H, margin, rng, record):
    N = sites.size
    scale = float(N) * float(N)
    active = np.empty(N, dtype=np.int64)
    pos = -np.ones(N, dtype=np.int64)
    nact = 0
    for x in range(N):
        if sites[x] != sites[(x + 1) % N]:
            nact = _set_active(x, True, active, pos, nact)

    cap = 1024
    ev_t = np.empty(cap)
    ev_x = np.empty(cap, dtype=np.uint32)
    ev_a = np.empty(cap, dtype=np.uint8)
    ev_b = np.empty(cap, dtype=np.uint8)
    nev = 0
    nprop = 0
    status = 0

    for c in range(bounds.size - 1):
        t0 = bounds[c]
        t1 = bounds[c + 1]
        B = _cell_bound(H[c], margin)
        span = t1 - t0
        t = t0
        while nact > 0:
            t += rng.exponential(1.0) / (scale * B * nact)
            if t >= t1:
                break
            nprop += 1
            x = active[rng.integers(0, nact)]
            y = (x + 1) % N
            a = sites[x]
            b = sites[y]
            w = (t - t0) / span
            ga = (1.0 - w) * (H[c, 0, a, y] - H[c, 0, a, x]) + w * (H[c, 1, a, y] - H[c, 1, a, x])
            gb = (1.0 - w) * (H[c, 0, b, y] - H[c, 0, b, x]) + w * (H[c, 1, b, y] - H[c, 1, b, x])
            r = np.exp(ga - gb)
            if r > B * (1.0 + 1e-12):
                status = 1
                return sites, ev_t[:nev], ev_x[:nev], ev_a[:nev], ev_b[:nev], nprop, status
            if rng.random() * B < r:
                sites[x] = b
                sites[y] = a
                xm = (x - 1) % N
                nact = _set_active(xm, sites[xm] != sites[x], active, pos, nact)
                nact = _set_active(y, sites[y] != sites[(y + 1) % N], active, pos, nact)
                if record:
                    if nev == cap:
                        cap *= 2
                        nt = np.empty(cap)
                        nx = np.empty(cap, dtype=np.uint32)
                        na = np.empty(cap, dtype=np.uint8)
                        nb = np.empty(cap, dtype=np.uint8)
                        nt[:nev] = ev_t[:nev]
                        nx[:nev] = ev_x[:nev]
                        na[:nev] = ev_a[:nev]
                        nb[:nev] = ev_b[:nev]
                        ev_t, ev_x, ev_a, ev_b = nt, nx, na, nb
                    ev_t[nev] = t
                    ev_x[nev] = x
                    ev_a[nev] = a
                    ev_b[nev] = b
                    nev += 1
    return sites, ev_t[:nev], ev_x[:nev], ev_a[:nev], ev_b[:nev], nprop, status


@numba.njit(cache=True)
def _replay(sites, ev_x, upto):
    N = sites.size
    for i in range(upto):
        x = ev_x[i]
        y = (x + 1) % N
        tmp = sites[x]
        sites[x] = sites[y]
        sites[y] = tmp
    return sites


# -- event log and path ------------------------------------------------------------------

EVENT_DTYPE = np.dtype([("t", "<f8"), ("x", "<u4"), ("a", "u1"), ("b", "u1")])
_HEADER = struct.Struct("<4sHIBdQ")
_MAGIC = b"STIR"
_VERSION = 1


@dataclass(frozen=True)
class EventLog:
    """Accepted exchanges in increasing macroscopic time; (a, b) are the labels at (x, x+1) before the swap."""

    N: int
    n_species: int
    T: float
    seed: int
    t: np.ndarray
    x: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __len__(self):
        return int(self.t.size)

    def records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["t"], rec["x"], rec["a"], rec["b"] = self.t, self.x, self.a, self.b
        return rec

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, _VERSION, self.N, self.n_species, self.T, self.seed & (2**64 - 1)))
            fh.write(self.records().tobytes())

    @classmethod
    def read(cls, path) -> "EventLog":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            magic, version, N, n, T, seed = _HEADER.unpack(head)
            if magic != _MAGIC or version != _VERSION:
                raise ValueError("not an event log (bad magic or version)")
            rec = np.frombuffer(fh.read(), dtype=EVENT_DTYPE)
        return cls(N, n, T, seed, rec["t"].copy(), rec["x"].copy(), rec["a"].copy(), rec["b"].copy())

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"N": self.N, "n_species": self.n_species, "T": self.T, "seed": self.seed}) + "\n")
            for t, x, a, b in zip(self.t.tolist(), self.x.tolist(), self.a.tolist(), self.b.tolist()):
                fh.write(json.dumps({"t": t, "x": x, "alpha": a, "beta": b}) + "\n")


@dataclass(frozen=True)
class Path:
    """Initial configuration plus event log; reconstructs the configuration at any time."""

    config0: Configuration
    log: EventLog

    @property
    def T(self) -> float:
        return self.log.T

    def at(self, t: float) -> Configuration:
        k = int(np.searchsorted(self.log.t, t, side="right"))
        s = _replay(self.config0.sites.copy(), self.log.x, k)
        return Configuration(s, n_species=self.config0.n_species)

    def final(self) -> Configuration:
        return self.at(self.T)

    def segments(self):
        """Yield (t_start, t_end, sites) over the intervals where the configuration is frozen."""
        s = self.config0.sites.copy()
        t_prev = 0.0
        N = s.size
        for t, x in zip(self.log.t, self.log.x):
            yield t_prev, float(t), s.copy()
            y = (int(x) + 1) % N
            s[x], s[y] = s[y], s[x]
            t_prev = float(t)
        yield t_prev, self.T, s.copy()


@dataclass(frozen=True)
class SimResult:
    path: Path
    final: Configuration
    proposals: int


def simulate(config0: Configuration, potentials: PotentialSet | None, params: SimParams, record: bool = True, rng=None):
    """Run one replica; returns (EventLog, Path).

    With ``record=False`` the event log is empty and only :func:`simulate_final` is meaningful.
    """
    res = run(config0, potentials, params, record=record, rng=rng)
    return res.path.log, res.path


def run(config0: Configuration, potentials: PotentialSet | None, params: SimParams, record: bool = True, rng=None) -> SimResult:
    n = config0.n_species
    N = config0.N
    if params.N != N:
        raise ValueError("params.N does not match the configuration size")
    if potentials is None:
        potentials = PotentialSet.zero(n)
    if potentials.n_species != n:
        raise ValueError("potential species count does not match the configuration")
    bounds, H = potentials.cells(N, params.T)
    if rng is None:
        rng = make_rng(params.seed, params.replica)
    sites, t, x, a, b, nprop, status = _simulate_kernel(
        config0.sites.copy(), bounds, np.ascontiguousarray(H), float(params.thinning_bound_margin), rng, record
    )
    if status:
        raise BoundViolation("encountered a rate above the thinning majorant")
    log = EventLog(N, n, float(params.T), int(params.seed), t.copy(), x.copy(), a.copy(), b.copy())
    final = Configuration(sites, n_species=n)
    return SimResult(Path(config0, log), final, int(nprop))


def simulate_final(config0, potentials, params, rng=None) -> Configuration:
    """Configuration at time T without storing events."""
    return run(config0, potentials, params, record=False, rng=rng).final


# -- explicit generator for small N ----------------------------------------------------------


def generator_matrix(N: int, n_species: int = 2, H_lattice=None, scale: float | None = None) -> np.ndarray:
    """Dense generator on all (n+1)^N configurations for a frozen lattice potential.

    ``H_lattice`` has shape (n+1, N) with a zero hole row (None means H = 0).
    Rows index the current state; diagonal holds minus the total exit rate.
    """
    q = n_species + 1
    if H_lattice is None:
        H_lattice = np.zeros((q, N))
    scale = float(N * N) if scale is None else scale
    states = all_configurations(N, n_species)
    S = states.shape[0]
    L = np.zeros((S, S))
    g = np.roll(H_lattice, -1, axis=1) - H_lattice
    src = np.arange(S)
    for x in range(N):
        y = (x + 1) % N
        a = states[:, x].astype(np.int64)
        b = states[:, y].astype(np.int64)
        move = a != b
        swapped = states[move].copy()
        swapped[:, x], swapped[:, y] = states[move, y], states[move, x]
        dst = state_index(swapped, n_species)
        r = scale * np.exp(g[a[move], x] - g[b[move], x])
        np.add.at(L, (src[move], dst), r)
    L[src, src] -= L.sum(axis=1)
    return L
