"""Per-species space-time potentials and the derived antisymmetric pair potentials.

Potentials are stored on a periodic grid u_j = j/Mu times a time grid t_0 < ... < t_{K-1}.
Evaluation is linear in u between neighbouring grid points (periodic) and, in time,
either linear between nodes (default) or piecewise constant from the left node
(``time_interp="previous"``). Values are held constant outside [t_0, t_{K-1}].
The hole carries the zero potential, so H_{a0} = H_a, H_{0a} = -H_a and
H_{ab} = H_a - H_b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PotentialSet:
    values: np.ndarray  # (n_species, Mu, Kt)
    times: np.ndarray  # (Kt,)
    time_interp: str = "linear"

    def __post_init__(self):
        if self.time_interp not in ("linear", "previous"):
            raise ValueError("time_interp must be 'linear' or 'previous'")
        v = np.array(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        t = np.atleast_1d(np.array(self.times, dtype=float))
        if v.ndim != 3 or v.shape[2] != t.size:
            raise ValueError("values must have shape (n_species, Mu, len(times))")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)

    @property
    def n_species(self) -> int:
        return self.values.shape[0]

    @property
    def Mu(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zero(cls, n_species: int = 2, Mu: int = 1) -> "PotentialSet":
        return cls(np.zeros((n_species, Mu, 1)), np.zeros(1))

    @classmethod
    def from_function(cls, f, n_species: int, Mu: int, times, time_interp="linear") -> "PotentialSet":
        """Sample ``f(u, t) -> (n_species, len(u))`` at u_j = j/Mu for each time node."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        u = np.arange(Mu) / Mu
        vals = np.stack([np.asarray(f(u, t), dtype=float).reshape(n_species, Mu) for t in times], axis=2)
        return cls(vals, times, time_interp)

    @classmethod
    def fourier(cls, coefficients, Mu: int = 512, times=(0.0,)) -> "PotentialSet":
        """Trigonometric potentials.

        ``coefficients[a]`` is a list of terms ``(k, a_k, b_k)`` or
        ``(k, a_k, b_k, da_k, db_k)`` giving
        H_a(u, t) = sum (a_k + da_k t) cos(2 pi k u) + (b_k + db_k t) sin(2 pi k u).
        Linear time dependence is reproduced exactly by the time interpolation.
        """

        def f(u, t):
            out = np.zeros((len(coefficients), u.size))
            for a, terms in enumerate(coefficients):
                for term in terms:
                    k, ca, cb = term[:3]
                    da, db = (term[3], term[4]) if len(term) > 3 else (0.0, 0.0)
                    out[a] += (ca + da * t) * np.cos(2 * np.pi * k * u) + (cb + db * t) * np.sin(2 * np.pi * k * u)
            return out

        return cls.from_function(f, len(coefficients), Mu, times)

    # -- evaluation -----------------------------------------------------------------

    def _time_weights(self, t: float):
        times = self.times
        if times.size == 1:
            return 0, 0, 0.0
        if t <= times[0]:
            return 0, 1, 0.0
        if t >= times[-1]:
            return times.size - 2, times.size - 1, 1.0
        i = int(np.searchsorted(times, t, side="right")) - 1
        if self.time_interp == "previous":
            return i, i + 1, 0.0
        w = (t - times[i]) / (times[i + 1] - times[i])
        return i, i + 1, w

    def _space_interp(self, u) -> np.ndarray:
        """Values at arbitrary u for every time node, shape (n, len(u), Kt)."""
        u = np.mod(np.asarray(u, dtype=float), 1.0)
        s = u * self.Mu
        j0 = np.floor(s).astype(np.int64) % self.Mu
        w = s - np.floor(s)
        j1 = (j0 + 1) % self.Mu
        return self.values[:, j0, :] * (1 - w)[None, :, None] + self.values[:, j1, :] * w[None, :, None]

    def evaluate(self, u, t: float) -> np.ndarray:
        """H_a(u, t) for a = 1..n, shape (n, len(u))."""
        nodes = self._space_interp(np.atleast_1d(u))
        i, j, w = self._time_weights(t)
        return (1 - w) * nodes[:, :, i] + w * nodes[:, :, j]

    def time_derivative(self, u, t: float) -> np.ndarray:
        """d/dt of the interpolant (piecewise constant in t; right derivative at nodes)."""
        u = np.atleast_1d(u)
        if self.time_interp == "previous" or self.times.size == 1 or t < self.times[0] or t >= self.times[-1]:
            return np.zeros((self.n_species, u.size))
        i, j, _ = self._time_weights(t)
        nodes = self._space_interp(u)
        return (nodes[:, :, j] - nodes[:, :, i]) / (self.times[j] - self.times[i])

    def with_hole(self, u, t: float) -> np.ndarray:
        """(H_0 = 0, H_1, ..., H_n) at (u, t), shape (n+1, len(u))."""
        h = self.evaluate(u, t)
        return np.vstack([np.zeros((1, h.shape[1])), h])

    def pair(self, a: int, b: int, u, t: float) -> np.ndarray:
        """Derived pair potential H_{ab} = H_a - H_b with H_0 = 0."""
        h = self.with_hole(u, t)
        return h[a] - h[b]

    def lattice_nodes(self, N: int) -> np.ndarray:
        """(H_0, ..., H_n) at sites x/N for every time node, shape (Kt, n+1, N)."""
        nodes = self._space_interp(np.arange(N) / N)  # (n, N, Kt)
        out = np.zeros((self.times.size, self.n_species + 1, N))
        out[:, 1:, :] = np.transpose(nodes, (2, 0, 1))
        return out

    def lattice_at(self, N: int, t: float) -> np.ndarray:
        """(H_0, ..., H_n) at sites x/N and time t, shape (n+1, N)."""
        return self.with_hole(np.arange(N) / N, t)

    def cells(self, N: int, T: float):
        """Split [0, T] at the interior time nodes.

        Returns ``bounds`` (C+1,) and ``H`` (C, 2, n+1, N) holding the lattice values at the
        start and end of every cell; inside a cell the potential is linear in t between them.
        """
        inner = self.times[(self.times > 0.0) & (self.times < T)]
        bounds = np.concatenate([[0.0], inner, [T]])
        C = bounds.size - 1
        H = np.empty((C, 2, self.n_species + 1, N))
        for c in range(C):
            if self.time_interp == "previous":
                mid = self.lattice_at(N, 0.5 * (bounds[c] + bounds[c + 1]))
                H[c, 0] = mid
                H[c, 1] = mid
            else:
                H[c, 0] = self.lattice_at(N, bounds[c])
                H[c, 1] = self.lattice_at(N, bounds[c + 1])
        return bounds, H

    # -- bounds used by diagnostics ----------------------------------------------------

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def max_gradient(self) -> float:
        """Max over species, nodes of |dH/du| from grid differences."""
        d = (np.roll(self.values, -1, axis=1) - self.values) * self.Mu
        return float(np.max(np.abs(d)))

    def is_zero(self) -> bool:
        return not np.any(self.values)
