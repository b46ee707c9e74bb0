"""Exact finite-size oracles: canonical measures, equivalence of ensembles, Dirichlet
forms, the Feynman-Kac eigenvalue and one/two-block gaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammaln

from .empirical import LocalObservable, tilde_phi
from .lattice import Configuration, all_configurations, state_index


@dataclass(frozen=True)
class CanonicalSpec:
    N: int
    k: tuple

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        if any(v < 0 for v in k) or sum(k) > self.N:
            raise ValueError("counts must be nonnegative with sum <= N")
        object.__setattr__(self, "k", k)

    @property
    def n_species(self) -> int:
        return len(self.k)

    def log_size(self) -> float:
        return log_multinomial(self.N, self.k)

    def size(self) -> int:
        return int(round(np.exp(self.log_size())))


def log_multinomial(N, k) -> np.ndarray:
    """log N! / (prod k_a! (N - sum k)!), vectorised over the last axis of k."""
    k = np.asarray(k, dtype=float)
    rest = N - k.sum(axis=-1)
    return gammaln(np.asarray(N, dtype=float) + 1) - gammaln(k + 1).sum(axis=-1) - gammaln(rest + 1)


def canonical_probability(spec: CanonicalSpec, config: Configuration) -> float:
    if config.N != spec.N or config.n_species != spec.n_species:
        raise ValueError("configuration does not match the spec")
    if tuple(int(c) for c in config.counts[1:]) != spec.k:
        return 0.0
    return float(np.exp(-spec.log_size()))


def local_pattern_probability(ell: int, m, spec: CanonicalSpec) -> np.ndarray:
    """Probability of one fixed pattern on ell sites with m_a particles of species a."""
    m = np.asarray(m, dtype=float)
    k = np.asarray(spec.k, dtype=float)
    N = spec.N
    ok = np.all(m <= k, axis=-1) & np.all(m >= 0, axis=-1) & (ell - m.sum(axis=-1) <= N - k.sum()) & (ell <= N)
    with np.errstate(invalid="ignore"):
        val = np.exp(log_multinomial(N - ell, np.where(ok[..., None], k - m, 0)) - log_multinomial(N, k))
    out = np.where(ok, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _pattern_counts(phi: LocalObservable) -> np.ndarray:
    pats = phi.patterns
    return np.stack([(pats == a).sum(axis=1) for a in range(1, phi.n_species + 1)], axis=1)


def admissible_counts(N: int, n_species: int = 2) -> np.ndarray:
    grids = np.indices((N + 1,) * n_species).reshape(n_species, -1).T
    return grids[grids.sum(axis=1) <= N]


def canonical_expectation(phi: LocalObservable, N: int, k_all: np.ndarray) -> np.ndarray:
    """E under the uniform measure on configurations with counts k, for every row of k_all."""
    m = _pattern_counts(phi)  # (P, n)
    k = k_all.astype(float)[:, None, :]  # (K, 1, n)
    mm = m[None, :, :].astype(float)
    ell = phi.ell
    ok = np.all(mm <= k, axis=-1) & (ell - mm.sum(-1) <= N - k.sum(-1))
    km = np.where(ok[..., None], k - mm, 0.0)
    logp = log_multinomial(N - ell, km) - log_multinomial(N, k[:, 0, :])[:, None]
    probs = np.where(ok, np.exp(logp), 0.0)
    return probs @ phi.table


def equivalence_gap(phi: LocalObservable, N: int, return_argmax: bool = False):
    """sup over admissible counts of |E_canonical[phi] - phi-tilde(k/N)|."""
    if phi.ell > N:
        raise ValueError("support larger than the torus")
    k_all = admissible_counts(N, phi.n_species)
    can = canonical_expectation(phi, N, k_all)
    gc = tilde_phi(phi, (k_all / N).T)
    gaps = np.abs(can - gc)
    i = int(np.argmax(gaps))
    return (float(gaps[i]), tuple(k_all[i])) if return_argmax else float(gaps[i])


def product_measure(N: int, p, n_species: int = 2) -> np.ndarray:
    """nu^p on every configuration, in the :func:`all_configurations` order."""
    p = np.asarray(p, dtype=float)
    full = np.concatenate([[1 - p.sum()], p])
    states = all_configurations(N, n_species)
    return np.prod(full[states], axis=1)


def ensemble_decomposition_tv(N: int, p, n_species: int = 2) -> float:
    """TV distance between nu^p and sum_k nu(counts = k) * canonical_k (should vanish)."""
    nu = product_measure(N, p, n_species)
    states = all_configurations(N, n_species)
    counts = np.stack([(states == a).sum(axis=1) for a in range(1, n_species + 1)], axis=1)
    keys, inv = np.unique(counts, axis=0, return_inverse=True)
    inv = inv.ravel()
    mass = np.bincount(inv, weights=nu)
    sizes = np.exp(log_multinomial(N, keys))
    mix = mass[inv] / sizes[inv]
    return float(0.5 * np.abs(mix - nu).sum())


# -- Dirichlet form and Feynman-Kac ------------------------------------------------------------


def _bond_swaps(N: int, n_species: int):
    """For each bond, index of the swapped state and a mask of non-null swaps."""
    states = all_configurations(N, n_species)
    out = []
    for x in range(N):
        y = (x + 1) % N
        sw = states.copy()
        sw[:, x], sw[:, y] = states[:, y], states[:, x]
        out.append((state_index(sw, n_species), states[:, x] != states[:, y]))
    return out


def dirichlet_form(f, N: int, n_species: int = 2) -> float:
    """((n+1)^-N / 2) sum_eta sum_x (sqrt f(eta^{x,x+1}) - sqrt f(eta))^2 over non-null swaps."""
    f = np.asarray(f, dtype=float)
    q = n_species + 1
    if f.size != q**N:
        raise ValueError("density must cover all configurations")
    if np.any(f < 0):
        raise ValueError("density must be nonnegative")
    s = np.sqrt(f)
    total = 0.0
    for dst, move in _bond_swaps(N, n_species):
        total += np.sum((s[dst][move] - s[move]) ** 2)
    return float(total * q ** (-float(N)) / 2)


def symmetric_generator(N: int, n_species: int = 2, scale: float = 1.0) -> sp.csr_matrix:
    """Sparse generator of the unit-rate stirring dynamics, multiplied by ``scale``."""
    S = (n_species + 1) ** N
    rows, cols = [], []
    for dst, move in _bond_swaps(N, n_species):
        src = np.nonzero(move)[0]
        rows.append(src)
        cols.append(dst[move])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    L = sp.csr_matrix((np.full(rows.size, scale), (rows, cols)), shape=(S, S))
    L = L - sp.diags(np.asarray(L.sum(axis=1)).ravel())
    return L.tocsr()


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int


def feynman_kac_operator(a: float, V, N: int, n_species: int = 2) -> sp.csr_matrix:
    """K = N^2 L + a V, symmetric in l2(nu) for the uniform product measure."""
    V = np.asarray(V, dtype=float)
    L = symmetric_generator(N, n_species, scale=float(N * N))
    return (L + sp.diags(a * V)).tocsr()


def feynman_kac_lambda(a: float, V, N: int, n_species: int = 2, tol: float = 1e-12,
                       max_iter: int = 100_000, method: str = "lanczos") -> EigenResult:
    """Largest eigenvalue of K = N^2 L + a V.

    ``method="power"`` runs a shifted power iteration with a residual stopping rule; its
    speed depends on the gap between the top eigenvalues, which is tiny when several
    count shells compete. ``"lanczos"`` (default) is the Krylov-accelerated version.
    """
    K = feynman_kac_operator(a, V, N, n_species)
    S = K.shape[0]
    if method == "lanczos":
        from scipy.sparse.linalg import ArpackNoConvergence, eigsh

        if S <= 16:
            w, U = np.linalg.eigh(K.toarray())
            return EigenResult(float(w[-1]), U[:, -1], 0)
        try:
            v0 = np.random.default_rng(0).uniform(0.5, 1.5, S)
            w, U = eigsh(K, k=1, which="LA", tol=tol, maxiter=max_iter, v0=v0)
        except ArpackNoConvergence as exc:
            raise ConvergenceError(str(exc)) from exc
        return EigenResult(float(w[0]), U[:, 0], 0)
    if method != "power":
        raise ValueError("method must be 'lanczos' or 'power'")
    # spectrum lies in [-2 N^3 - |a| max|V|, |a| max|V|]; shift to make the top dominant
    diag = -K.diagonal()
    shift = float(np.max(diag)) + abs(a) * float(np.max(np.abs(V))) + 1.0
    v = np.ones(S) / np.sqrt(S)
    for it in range(1, max_iter + 1):
        w = K @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(1.0, abs(lam)):
            return EigenResult(lam, v, it)
        w += shift * v
        v = w / np.linalg.norm(w)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def exponential_moment(a: float, V, N: int, t: float, n_species: int = 2) -> float:
    """E_nu[exp(a int_0^t V(eta_s) ds)] under the N^2-accelerated dynamics started from uniform nu."""
    K = feynman_kac_operator(a, V, N, n_species).tocsc()
    ones = np.ones(K.shape[0])
    return float(np.mean(expm_multiply(t * K, ones)))


def chebyshev_bound(a: float, delta: float, t: float, lam: float, N: int) -> float:
    """exp(N ((t/N) lam - delta a)), bounding P((1/N) int_0^t V >= delta)."""
    return float(np.exp(N * ((t / N) * lam - delta * a)))


def state_function(N: int, fn, n_species: int = 2) -> np.ndarray:
    """Evaluate ``fn(Configuration)`` on every configuration."""
    states = all_configurations(N, n_species)
    return np.array([fn(Configuration(s, n_species)) for s in states])


# -- block estimates ----------------------------------------------------------------------------


MAX_BLOCK = 12


def one_block_gap(phi: LocalObservable, k: int) -> float:
    """sup over shells of E_uniform |block average of tau_y phi - phi-tilde(block density)|.

    The block has 2k+1 sites and tau_y phi wraps around inside the block.
    """
    m = 2 * k + 1
    if m > MAX_BLOCK:
        raise ValueError(f"block 2k+1 = {m} exceeds the enumeration range {MAX_BLOCK}")
    if phi.ell > m:
        raise ValueError("observable longer than the block")
    n = phi.n_species
    q = n + 1
    states = all_configurations(m, n).astype(np.int64)
    avg = np.zeros(states.shape[0])
    for y in range(m):
        code = np.zeros(states.shape[0], dtype=np.int64)
        for i in range(phi.ell):
            code = code * q + states[:, (y + i) % m]
        avg += phi.table[code]
    avg /= m
    counts = np.stack([(states == a).sum(axis=1) for a in range(1, n + 1)], axis=1)
    keys, inv = np.unique(counts, axis=0, return_inverse=True)
    inv = inv.ravel()
    tild = tilde_phi(phi, (keys / m).T)
    dev = np.abs(avg - tild[inv])
    shell_mean = np.bincount(inv, weights=dev) / np.bincount(inv)
    return float(shell_mean.max())


def two_block_gap(k: int, n_species: int = 2) -> float:
    """sup over joint shells of E|| rho(block 1) - rho(block 2) ||_2 for the uniform measure on two blocks."""
    m = 2 * k + 1
    if m > MAX_BLOCK:
        raise ValueError(f"block 2k+1 = {m} exceeds the enumeration range {MAX_BLOCK}")
    best = 0.0
    for Ktot in admissible_counts(2 * m, n_species):
        val = two_block_summand(k, Ktot)
        best = max(best, val)
    return best


def two_block_summand(k: int, Ktot) -> float:
    """E || j/m - (K-j)/m ||_2 with j the block-1 counts, hypergeometric on the joint shell."""
    m = 2 * k + 1
    Ktot = np.asarray(Ktot, dtype=int)
    n = Ktot.size
    js = admissible_counts(m, n)
    ok = np.all(js <= Ktot, axis=1) & ((m - js.sum(axis=1)) <= (2 * m - Ktot.sum()))
    ok &= np.all(Ktot - js <= m, axis=1) & ((Ktot - js).sum(axis=1) <= m)
    js = js[ok]
    logp = log_multinomial(m, js) + log_multinomial(m, Ktot - js) - log_multinomial(2 * m, Ktot)
    d = np.linalg.norm((2 * js - Ktot) / m, axis=1)
    return float(np.sum(np.exp(logp) * d))


def block_gap_statistics(phi: LocalObservable, k: int):
    return one_block_gap(phi, k), two_block_gap(k, phi.n_species)


def enumerate_shell(N: int, k) -> np.ndarray:
    """All configurations with species counts k (small N)."""
    states = all_configurations(N, len(k))
    counts = np.stack([(states == a).sum(axis=1) for a in range(1, len(k) + 1)], axis=1)
    return states[np.all(counts == np.asarray(k), axis=1)]





@dataclass(frozen=True)
class ChebyshevRow:
    a: float
    delta: float
    t: float
    lam: float
    prob_mc: float
    prob_se: float
    moment_exact: float
    moment_mc: float
    moment_mc_se: float
    markov_bound: float  # exp(-a N delta) E[exp(a int V)]
    bound: float  # exp(N((t/N) lam - delta a))

    def holds(self, k: float = 4.0) -> bool:
        return (self.prob_mc - k * self.prob_se <= self.markov_bound * (1 + 1e-12)
                and self.markov_bound <= self.bound * (1 + 1e-12)
                and self.moment_exact <= np.exp(self.t * self.lam) * (1 + 1e-12))


def chebyshev_chain(phi: LocalObservable, N: int, eps: float, t: float, pairs, replicas: int = 2000,
                    seed: int = 0) -> list:
    """P((1/N) int_0^t V >= delta) <= exp(-a N delta) E exp(a int V) <= exp(N((t/N) lam - delta a)).

    The eigenvalue and the exponential moment are exact; the probability is Monte Carlo
    from the stationary uniform product measure.
    """
    from .empirical import v_path_statistic, v_statistic
    from .lattice import ProfileGrid, sample_product_multinomial
    from .process import SimParams, run

    V = state_function(N, lambda c: v_statistic(c, phi, eps), phi.n_species)
    p = np.full(phi.n_species, 1.0 / (phi.n_species + 1))
    prof = ProfileGrid.constant(p)
    ints = np.empty(replicas)
    init = np.random.SeedSequence([seed, 2]).spawn(replicas)
    for r in range(replicas):
        c0 = sample_product_multinomial(prof, N, np.random.default_rng(init[r]))
        res = run(c0, None, SimParams(N, t, seed=seed, replica=r))
        ints[r] = v_path_statistic(res.path, phi, eps).integral
    rows = []
    for a, delta in pairs:
        lam = feynman_kac_lambda(a, V, N, phi.n_species).value
        hit = (ints / N >= delta).astype(float)
        e = np.exp(a * ints)
        mom = exponential_moment(a, V, N, t, phi.n_species)
        rows.append(ChebyshevRow(
            a, delta, t, lam, float(hit.mean()), float(hit.std(ddof=1) / np.sqrt(replicas)), mom,
            float(e.mean()), float(e.std(ddof=1) / np.sqrt(replicas)), float(np.exp(-a * N * delta) * mom),
            chebyshev_bound(a, delta, t, lam, N),
        ))
    return rows
