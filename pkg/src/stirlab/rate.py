"""Large-deviation rate functional I = h + I0 on a discrete space-time grid.

Everything is discretised consistently so that the Riesz identity holds exactly at
the discrete level:

* spatial gradients are forward differences D+ living on faces j+1/2 (central
  differences about the face), with the face mobility chi(rho-bar) built from the
  arithmetic face average of rho;
* <G, H> = sum_k w_k sum_j h 2 sum_ab chi_ab D+G_a D+H_b with trapezoid weights w_k;
* l(rho; G) = <rho_K, G_K> - <rho_0, G_0> - sum_k w_k <rho_k, (D_t + Lap_h) G_k>,
  D_t central inside and one-sided at the two ends. Summation by parts turns this
  into sum_k w_k <G_k, D_t rho_k - Lap_h rho_k>, so each slice is an independent
  weighted elliptic problem.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .hydro import DensityTrajectory
from .lattice import ProfileGrid


class RieszError(ValueError):
    pass


# -- grid helpers --------------------------------------------------------------------------


def trapezoid_weights(K: int, dt: float) -> np.ndarray:
    w = np.full(K + 1, dt)
    w[0] = w[-1] = dt / 2
    return w


def _dplus(f, h):
    return (np.roll(f, -1, axis=-1) - f) / h


def _lap(f, h):
    return (np.roll(f, -1, axis=-1) - 2 * f + np.roll(f, 1, axis=-1)) / (h * h)


def _dt(f, dt):
    """Time derivative along axis 0: central inside, one-sided at the ends."""
    out = np.empty_like(f)
    if f.shape[0] < 2:
        raise ValueError("need at least two time slices")
    out[1:-1] = (f[2:] - f[:-2]) / (2 * dt)
    out[0] = (f[1] - f[0]) / dt
    out[-1] = (f[-1] - f[-2]) / dt
    return out


def clip_interior(rho, delta: float = 1e-6):
    """Project densities to [delta, 1 - delta] with hole density >= delta; returns (rho, max shift)."""
    r = np.clip(rho, delta, 1 - delta)
    tot = r.sum(axis=-2, keepdims=True)
    over = tot > 1 - delta
    if np.any(over):
        r = np.where(over, r * (1 - delta) / tot, r)
    return r, float(np.max(np.abs(r - rho)))


def face_mobility(rho, delta: float = 1e-6):
    """chi(rho-bar) at faces for every slice: rho (K+1, n, M) -> (K+1, n, n, M), plus clip size."""
    rb = 0.5 * (rho + np.roll(rho, -1, axis=-1))
    rb, shift = clip_interior(rb, delta)
    n = rho.shape[1]
    chi = -rb[:, :, None, :] * rb[:, None, :, :]
    idx = np.arange(n)
    chi[:, idx, idx, :] += rb
    return chi, shift


@dataclass(frozen=True)
class HilbertMetric:
    """Discrete H(rho) inner product attached to a trajectory."""

    rho: DensityTrajectory
    delta: float = 1e-6
    chi: np.ndarray = field(init=False, repr=False)
    clip: float = field(init=False)

    def __post_init__(self):
        chi, shift = face_mobility(self.rho.values, self.delta)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "clip", shift)

    @property
    def h(self) -> float:
        return 1.0 / self.rho.M

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.rho.K, self.rho.dt)

    def _check(self, G):
        G = np.asarray(G, dtype=float)
        if G.shape != self.rho.values.shape:
            raise ValueError(f"field shape {G.shape} does not match trajectory {self.rho.values.shape}")
        return G

    def slice_products(self, G, H) -> np.ndarray:
        """h * sum_j 2 chi D+G . D+H for each time slice."""
        G, H = self._check(G), self._check(H)
        dG, dH = _dplus(G, self.h), _dplus(H, self.h)
        return 2 * self.h * np.einsum("kabj,kaj,kbj->k", self.chi, dG, dH)

    def inner(self, G, H) -> float:
        return float(self.weights @ self.slice_products(G, H))

    def norm2(self, G) -> float:
        return self.inner(G, G)


def inner_product(G, H, rho: DensityTrajectory, delta: float = 1e-6) -> float:
    return HilbertMetric(rho, delta).inner(G, H)


def linear_functional(rho: DensityTrajectory, G) -> float:
    """l(rho; G) = <rho_T, G_T> - <rho_0, G_0> - int <rho, (d_t + Lap) G> dt."""
    G = np.asarray(G, dtype=float)
    R = rho.values
    if G.shape != R.shape:
        raise ValueError("test function grid does not match the trajectory")
    h = 1.0 / rho.M
    w = trapezoid_weights(rho.K, rho.dt)
    boundary = h * (np.sum(R[-1] * G[-1]) - np.sum(R[0] * G[0]))
    bulk = h * np.einsum("k,kaj,kaj->", w, R, _dt(G, rho.dt) + _lap(G, h))
    return float(boundary - bulk)


def riesz_rhs(rho: DensityTrajectory) -> np.ndarray:
    """Per-slice defect D_t rho - Lap_h rho, shape (K+1, n, M)."""
    return _dt(rho.values, rho.dt) - _lap(rho.values, 1.0 / rho.M)


# -- Riesz representation --------------------------------------------------------------------


def _slice_operator(chi_k, h):
    """Sparse D+^T (2 chi) D+ for one slice; unknowns ordered species-major."""
    n, _, M = chi_k.shape
    I = sp.identity(M, format="csr")
    Dp = (sp.diags([np.ones(M - 1)], [1], shape=(M, M)) + sp.csr_matrix(([1.0], ([M - 1], [0])), shape=(M, M)) - I) / h
    blocks = [[Dp.T @ sp.diags(2 * chi_k[a, b]) @ Dp * h for b in range(n)] for a in range(n)]
    return sp.bmat(blocks, format="csr")


def _bordered_solve(A, rhs, n, M):
    E = sp.kron(sp.identity(n), np.ones((1, M))).tocsr()
    Z = sp.csr_matrix((n, n))
    big = sp.bmat([[A, E.T], [E, Z]], format="csc")
    sol = spsolve(big, np.concatenate([rhs, np.zeros(n)]))
    return sol[: n * M]


@dataclass(frozen=True)
class RieszSolution:
    H: np.ndarray  # (K+1, n, M), zero spatial mean per species and slice
    residual: float
    rhs_norm: float
    clip: float
    mean_defect: float


def riesz_solve(rho: DensityTrajectory, delta: float = 1e-6, mean_tol: float = 1e-8, n_test: int = 8,
                seed: int = 0) -> RieszSolution:
    """Find H with l(rho; G) = <G, H>_{H(rho)} for every grid G (zero-mean gauge)."""
    metric = HilbertMetric(rho, delta)
    h = metric.h
    r = riesz_rhs(rho)
    mean_defect = float(np.max(np.abs(r.mean(axis=2))))
    if mean_defect > mean_tol:
        raise RieszError(f"defect has spatial mean {mean_defect:.3e}; mass is not conserved")
    r = r - r.mean(axis=2, keepdims=True)
    K1, n, M = r.shape
    H = np.empty_like(r)
    for k in range(K1):
        A = _slice_operator(metric.chi[k], h)
        H[k] = _bordered_solve(A, h * r[k].ravel(), n, M).reshape(n, M)
    # residual against a random batch of test functions
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_test):
        G = rng.standard_normal(r.shape)
        worst = max(worst, abs(linear_functional(rho, G) - metric.inner(G, H)))
    return RieszSolution(H, worst, float(np.sqrt(np.sum(r**2) * h * rho.dt)), metric.clip, mean_defect)


def dense_slice_solve(chi_k, r_k, h):
    """Least-squares oracle for one slice using a dense pseudo-inverse (small M only)."""
    n, _, M = chi_k.shape
    A = _slice_operator(chi_k, h).toarray()
    b = h * (r_k - r_k.mean(axis=1, keepdims=True)).ravel()
    x = np.linalg.pinv(A) @ b
    x = x.reshape(n, M)
    return x - x.mean(axis=1, keepdims=True)


# -- dynamic and static costs ---------------------------------------------------------------------


def dynamic_cost(rho: DensityTrajectory, delta: float = 1e-6, solution: RieszSolution | None = None) -> float:
    sol = riesz_solve(rho, delta) if solution is None else solution
    return 0.5 * HilbertMetric(rho, delta).norm2(sol.H)


@dataclass(frozen=True)
class TrigBasis:
    """cos/sin(2 pi k u), k = 1..n_space, times cos(pi m t / T), m = 0..n_time, per species."""

    n_space: int = 3
    n_time: int = 3

    def fields(self, rho: DensityTrajectory) -> np.ndarray:
        u = rho.grid
        t = rho.times
        T = rho.T
        space = []
        for k in range(1, self.n_space + 1):
            space.append(np.cos(2 * np.pi * k * u))
            space.append(np.sin(2 * np.pi * k * u))
        time = [np.cos(np.pi * m * t / T) for m in range(self.n_time + 1)]
        out = []
        for a in range(rho.n_species):
            for s in space:
                for tm in time:
                    G = np.zeros(rho.values.shape)
                    G[:, a, :] = tm[:, None] * s[None, :]
                    out.append(G)
        return np.array(out)


@dataclass(frozen=True)
class LowerBound:
    value: float
    ridge_used: bool
    size: int


def variational_lower_bound(rho: DensityTrajectory, basis: TrigBasis | None = None, delta: float = 1e-6,
                            ridge: float = 1e-12) -> LowerBound:
    """max_c  b.c - 1/2 c.A c over the span of the basis = 1/2 b.A^{-1} b."""
    basis = TrigBasis() if basis is None else basis
    metric = HilbertMetric(rho, delta)
    F = basis.fields(rho)
    b = np.array([linear_functional(rho, G) for G in F])
    dF = _dplus(F, metric.h)  # (P, K+1, n, M)
    W = 2 * metric.h * metric.weights[:, None, None, None] * metric.chi  # (K+1, n, n, M)
    A = np.einsum("pkaj,kabj,qkbj->pq", dF, W, dF)
    A = 0.5 * (A + A.T)
    used = False
    try:
        L = np.linalg.cholesky(A)
        if np.min(np.diag(L)) ** 2 < ridge * max(1.0, np.max(np.diag(A))):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        used = True
        A = A + ridge * np.eye(A.shape[0])
        L = np.linalg.cholesky(A)
    y = np.linalg.solve(L, b)
    return LowerBound(float(0.5 * y @ y), used, len(b))


def static_cost(omega: ProfileGrid, gamma: ProfileGrid, atoms: bool = False) -> float:
    """Riemann mean over the grid of sum_{a=0..n} omega_a log(omega_a / gamma_a); +inf for atoms."""
    if atoms:
        return float("inf")
    if omega.M != gamma.M or omega.n_species != gamma.n_species:
        raise ValueError("profiles live on different grids")
    w = omega.with_holes()
    g = gamma.with_holes()
    pos = w > 0
    if np.any(pos & (g <= 0)):
        return float("inf")
    terms = np.zeros_like(w)
    terms[pos] = w[pos] * np.log(w[pos] / g[pos])
    return float(terms.sum(axis=0).mean())


def static_sup_form(omega: ProfileGrid, gamma: ProfileGrid, phi) -> float:
    """<omega, phi> - int log(gamma_0 + sum_a gamma_a exp(phi_a)), a lower bound for the static cost."""
    phi = np.asarray(phi, dtype=float)
    lin = np.sum(omega.values * phi, axis=0)
    lz = np.log(gamma.holes + np.sum(gamma.values * np.exp(phi), axis=0))
    return float(np.mean(lin - lz))


def static_sup_scan(omega: ProfileGrid, gamma: ProfileGrid, shifts=None) -> np.ndarray:
    """Sup form along phi = log(omega/gamma) + L over a grid of shifts L (zero densities sent to -40)."""
    shifts = np.linspace(-5, 20, 101) if shifts is None else np.asarray(shifts)
    with np.errstate(divide="ignore"):
        base = np.where(omega.values > 0, np.log(omega.values / gamma.values), -40.0)
    return np.array([static_sup_form(omega, gamma, base + L) for L in shifts])


# -- reports and collapse checks ---------------------------------------------------------------


@dataclass(frozen=True)
class RateEvaluation:
    h: float
    I0: float
    I_total: float
    residual: float
    variational_lb: float
    delta_clip: float
    grid: dict
    H_recovered: np.ndarray | None = field(default=None, repr=False)
    gauge: str = "zero-mean"
    ridge_flag: bool = False
    smoothness: dict = field(default_factory=dict)  # max |D+ H| and |Lap H| over slices

    def report(self) -> dict:
        d = asdict(self)
        d.pop("H_recovered")
        return d

    def to_json(self) -> str:
        return json.dumps(self.report())


def evaluate_rate(rho: DensityTrajectory, gamma: ProfileGrid | None = None, basis: TrigBasis | None = None,
                  delta: float = 1e-6) -> RateEvaluation:
    sol = riesz_solve(rho, delta)
    I0 = 0.5 * HilbertMetric(rho, delta).norm2(sol.H)
    lb = variational_lower_bound(rho, basis, delta)
    omega = ProfileGrid(np.clip(rho.values[0], 0, None))
    h = 0.0 if gamma is None else static_cost(omega, gamma)
    hs = 1.0 / rho.M
    smooth = {"max_grad": float(np.max(np.abs(_dplus(sol.H, hs)))), "max_lap": float(np.max(np.abs(_lap(sol.H, hs))))}
    return RateEvaluation(h, I0, h + I0, sol.residual, lb.value, sol.clip,
                          {"M": rho.M, "K": rho.K, "dt": rho.dt}, sol.H, ridge_flag=lb.ridge_used, smoothness=smooth)


def single_species_norm(rho1: DensityTrajectory, H, delta: float = 1e-6) -> float:
    """int <rho(1-rho), (grad H)^2> dt on the same discrete grid (H has shape (K+1, M))."""
    H = np.asarray(H, dtype=float)
    chi, _ = face_mobility(rho1.values, delta)
    h = 1.0 / rho1.M
    w = trapezoid_weights(rho1.K, rho1.dt)
    dH = _dplus(H, h)
    return float(np.einsum("k,kj,kj->", w, chi[:, 0, 0, :], dH * dH) * h)


@dataclass(frozen=True)
class CollapseReport:
    multi_species: float
    single_species: float
    difference: float


def collapse_check(rho: DensityTrajectory, H, delta: float = 1e-6) -> CollapseReport:
    """Equal potentials on every species: the n-species I0 of (H,...,H) against the formula in rho_1+...+rho_n."""
    H = np.asarray(H, dtype=float)  # (K+1, M)
    full = np.repeat(H[:, None, :], rho.n_species, axis=1)
    multi = 0.5 * HilbertMetric(rho, delta).norm2(full)
    lumped = DensityTrajectory(rho.values.sum(axis=1, keepdims=True), rho.dt)
    single = single_species_norm(lumped, H, delta)
    return CollapseReport(multi, single, abs(multi - single))


def partition_check(rho: DensityTrajectory, H, groups, delta: float = 1e-6) -> CollapseReport:
    """Potentials constant on each block of ``groups``: compare with the lumped-species functional.

    ``H`` has one row per group, shape (K+1, len(groups), M).
    """
    H = np.asarray(H, dtype=float)
    full = np.zeros(rho.values.shape)
    lumped = np.zeros((rho.K + 1, len(groups), rho.M))
    for g, members in enumerate(groups):
        for a in members:
            full[:, a, :] = H[:, g, :]
            lumped[:, g, :] += rho.values[:, a, :]
    multi = 0.5 * HilbertMetric(rho, delta).norm2(full)
    coarse = 0.5 * HilbertMetric(DensityTrajectory(lumped, rho.dt), delta).norm2(H)
    return CollapseReport(multi, coarse, abs(multi - coarse))


def potential_field(potentials, rho: DensityTrajectory) -> np.ndarray:
    """Sample a PotentialSet on the trajectory grid, shape (K+1, n, M)."""
    u = rho.grid
    return np.stack([potentials.evaluate(u, t) for t in rho.times])
