"""Configurations on the discrete torus and product-multinomial profiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SimplexError(ValueError):
    """A density vector leaves the closed simplex."""


@dataclass(frozen=True)
class Configuration:
    """Occupancy of every site of the torus Z/NZ by a label in {0, ..., n_species}.

    Label 0 is the hole, so the exclusion constraint holds by construction.
    """

    sites: np.ndarray
    n_species: int = 2
    counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sites = np.ascontiguousarray(self.sites, dtype=np.uint8)
        if sites.ndim != 1 or sites.size < 2:
            raise ValueError("sites must be a 1-d sequence of length >= 2")
        if self.n_species < 1:
            raise ValueError("n_species must be positive")
        if sites.max(initial=0) > self.n_species:
            raise ValueError(f"labels must lie in 0..{self.n_species}")
        sites.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        counts = np.bincount(sites, minlength=self.n_species + 1)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def N(self) -> int:
        return self.sites.size

    def occupation(self, label: int) -> np.ndarray:
        """Indicator vector eta_label^x, x = 0..N-1."""
        return (self.sites == label).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.n_species == other.n_species and np.array_equal(self.sites, other.sites)

    def __hash__(self):
        return hash((self.n_species, self.sites.tobytes()))


def check_simplex(p, tol: float = 0.0) -> np.ndarray:
    """Validate that the columns of ``p`` (shape (n, ...)) are in the closed simplex."""
    p = np.asarray(p, dtype=float)
    if np.any(p < -tol) or np.any(p > 1 + tol) or np.any(p.sum(axis=0) > 1 + tol):
        raise SimplexError("densities must satisfy p_a in [0,1] and sum_a p_a <= 1")
    return p


@dataclass(frozen=True)
class ProfileGrid:
    """Per-species density profile gamma_a(j/M), j = 0..M-1, on the torus [0,1)."""

    values: np.ndarray  # shape (n_species, M)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        check_simplex(v, tol=1e-12)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_species(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    @property
    def holes(self) -> np.ndarray:
        return 1.0 - self.values.sum(axis=0)

    def with_holes(self) -> np.ndarray:
        """Stacked (gamma_0, gamma_1, ..., gamma_n), shape (n+1, M)."""
        return np.vstack([self.holes, self.values])

    def at_sites(self, N: int) -> np.ndarray:
        """Nearest-grid-point lookup of the profile at x/N, shape (n, N)."""
        j = np.rint(np.arange(N) * self.M / N).astype(np.int64) % self.M
        return self.values[:, j]

    @classmethod
    def constant(cls, p, M: int = 1) -> "ProfileGrid":
        p = np.asarray(p, dtype=float).reshape(-1, 1)
        return cls(np.repeat(p, M, axis=1))

    @classmethod
    def from_function(cls, f, n_species: int, M: int) -> "ProfileGrid":
        """Sample ``f(u) -> array (n_species, len(u))`` on the grid j/M."""
        u = np.arange(M) / M
        return cls(np.asarray(f(u), dtype=float).reshape(n_species, M))


def sample_product_multinomial(profile: ProfileGrid, N: int, seed=None) -> Configuration:
    """Draw independent site labels with P(x = a) = gamma_a(x/N), P(x = 0) = 1 - sum gamma."""
    rng = np.random.default_rng(seed)
    n = profile.n_species
    cum = np.cumsum(profile.at_sites(N), axis=0)
    u = rng.random(N)
    # idx = a-1 selects species a; idx = n is the hole
    idx = np.sum(u[None, :] >= cum, axis=0)
    labels = ((idx + 1) % (n + 1)).astype(np.uint8)
    return Configuration(labels, n_species=n)


def all_configurations(N: int, n_species: int = 2) -> np.ndarray:
    """Every configuration of (n+1)^N, row i has the base-(n+1) digits of i (site 0 first)."""
    q = n_species + 1
    idx = np.arange(q**N, dtype=np.int64)
    powers = q ** np.arange(N - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % q).astype(np.uint8)


def state_index(sites, n_species: int = 2) -> np.ndarray:
    """Inverse of :func:`all_configurations` (works on a batch of rows)."""
    sites = np.asarray(sites, dtype=np.int64)
    q = n_species + 1
    N = sites.shape[-1]
    powers = q ** np.arange(N - 1, -1, -1, dtype=np.int64)
    return sites @ powers
