"""Experiment runner: ``stirlab <command> --config run.yaml --out results/``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath

import jsonschema
import numpy as np
import scipy
import yaml

from . import __version__
from .lattice import ProfileGrid, sample_product_multinomial

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 1}
_TERM = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 5}
_FOURIER = {"type": "array", "items": {"type": "array", "items": _TERM}}

PROFILE_SCHEMA = {
    "type": "object",
    "properties": {
        "constant": {"type": "array", "items": _NUM},
        "mean": {"type": "array", "items": _NUM},
        "fourier": _FOURIER,
        "M": _INT,
    },
    "additionalProperties": False,
}
POTENTIAL_SCHEMA = {
    "type": "object",
    "properties": {"fourier": _FOURIER, "Mu": _INT, "times": {"type": "array", "items": _NUM}},
    "required": ["fourier"],
    "additionalProperties": False,
}
PHI_SCHEMA = {
    "type": "object",
    "properties": {"product": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}},
    "required": ["product"],
    "additionalProperties": False,
}
_COMMON = {
    "n_species": _INT,
    "T": {"type": "number", "exclusiveMinimum": 0},
    "profile": PROFILE_SCHEMA,
    "potentials": POTENTIAL_SCHEMA,
    "seed": {"type": "integer", "minimum": 0},
}


def _section(extra):
    return {"type": "object", "properties": {**_COMMON, **extra}, "additionalProperties": False}


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "simulate": _section({"N": _INT, "replicas": _INT, "epsilon": _NUM, "margin": _NUM, "events": {"type": "boolean"}}),
        "hydro": _section({"M": _INT, "K": _INT, "stepper": {"enum": ["explicit", "imex"]}, "safety": _NUM, "dt": _NUM}),
        "rate": _section({"M": _INT, "K": _INT, "delta": _NUM, "basis": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2},
                          "reference": PROFILE_SCHEMA}),
        "girsanov": _section({"N": _INT, "replicas": _INT}),
        "blocks": _section({"phi": PHI_SCHEMA, "k": {"type": "array", "items": _INT}, "N": {"type": "array", "items": _INT}}),
        "sweep": _section({"kind": {"enum": ["hydro-limit", "superexp", "equivalence"]}, "N": {"type": "array", "items": _INT},
                           "replicas": _INT, "epsilon": _NUM, "delta": _NUM, "M": _INT, "phi": PHI_SCHEMA}),
        "verify": {"type": "object"},
    },
    "additionalProperties": False,
}

DEFAULT_POTENTIAL = {"fourier": [[[1, 0.0, 0.5]], [[1, 0.5, 0.0]]]}
DEFAULT_PROFILE = {"mean": [0.3, 0.3], "fourier": [[[1, 0.0, 0.1]], [[1, 0.1, 0.0]]]}


class ConfigError(ValueError):
    pass


# -- config helpers ----------------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config: {exc.message} at {'/'.join(map(str, exc.absolute_path))}") from exc
    return cfg


def build_profile(spec: dict | None, M: int, n: int = 2) -> ProfileGrid:
    spec = spec or {"constant": [1.0 / (n + 1)] * n}
    M = spec.get("M", M)
    if "constant" in spec:
        if len(spec["constant"]) != n:
            raise ConfigError("profile.constant must list one density per species")
        return ProfileGrid.constant(spec["constant"], M)
    u = np.arange(M) / M
    mean = np.asarray(spec.get("mean", [1.0 / (n + 1)] * n), dtype=float)
    vals = np.repeat(mean[:, None], M, axis=1)
    for a, terms in enumerate(spec.get("fourier", [])):
        for k, ca, cb, *_ in terms:
            vals[a] += ca * np.cos(2 * np.pi * k * u) + cb * np.sin(2 * np.pi * k * u)
    try:
        return ProfileGrid(vals)
    except ValueError as exc:
        raise ConfigError(f"profile leaves the simplex: {exc}") from exc


def build_potentials(spec: dict | None, n: int = 2, T: float = 1.0):
    from .potentials import PotentialSet

    if spec is None:
        return None
    coeffs = spec["fourier"]
    if len(coeffs) != n:
        raise ConfigError("potentials.fourier must have one term list per species")
    times = spec.get("times", [0.0, T] if any(len(t) > 3 for terms in coeffs for t in terms) else [0.0])
    return PotentialSet.fourier(coeffs, Mu=spec.get("Mu", 512), times=times)


def build_phi(spec: dict | None, n: int = 2):
    from .empirical import LocalObservable

    labels = (spec or {"product": [1, 1]})["product"]
    return LocalObservable.occupation_product(labels, n)


# -- output helpers ------------------------------------------------------------------------------


def write_table(out: FsPath, name: str, columns: list, rows: list, fmt: str) -> FsPath:
    if fmt == "json":
        path = out / f"{name}.json"
        path.write_text(json.dumps([dict(zip(columns, r)) for r in rows], indent=1, default=float) + "\n")
        return path
    path = out / f"{name}.csv"
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")
    if len(columns) >= 2:
        plot = [f"set datafile separator ','", f"set key autotitle columnhead", f"set xlabel '{columns[0]}'"]
        series = ", ".join(f"'{path.name}' using 1:{i + 1} with linespoints" for i in range(1, len(columns)))
        plot.append(f"plot {series}")
        (out / f"{name}.gp").write_text("\n".join(plot) + "\n")
    return path


def _hash_inputs(command, cfg, seed) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(out: FsPath, command: str, cfg: dict, seed: int, artifacts: list, wall: float, extra=None):
    manifest = {
        "command": command,
        "inputs_sha256": _hash_inputs(command, cfg, seed),
        "seed": seed,
        "versions": {"stirlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "artifacts": sorted(str(FsPath(a).name) for a in artifacts),
        "wall_time_s": round(wall, 3),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _pool(threads: int):
    return ProcessPoolExecutor(max_workers=threads) if threads > 1 else None


def _map(threads, fn, items):
    pool = _pool(threads)
    if pool is None:
        return [fn(i) for i in items]
    with pool:
        return list(pool.map(fn, items))


# -- commands --------------------------------------------------------------------------------------


def cmd_simulate(cfg, seed, out, fmt, threads):
    from .empirical import empirical_density, smooth
    from .process import SimParams, run

    c = cfg.get("simulate", {})
    n = c.get("n_species", 2)
    N, T = c.get("N", 64), c.get("T", 0.05)
    prof = build_profile(c.get("profile"), 256, n)
    pots = build_potentials(c.get("potentials"), n, T)
    arts = []
    summary = []
    for r in range(c.get("replicas", 1)):
        c0 = sample_product_multinomial(prof, N, np.random.default_rng([seed, r]))
        res = run(c0, pots, SimParams(N, T, seed=seed, thinning_bound_margin=c.get("margin", 1.0), replica=r))
        if not np.array_equal(res.final.counts, c0.counts):
            raise RuntimeError("species counts changed along the path")
        log_path = out / f"events_{r:03d}.stir"
        res.path.log.write(log_path)
        arts.append(log_path)
        if c.get("events", False):
            jl = out / f"events_{r:03d}.jsonl"
            res.path.log.write_jsonl(jl)
            arts.append(jl)
        field = empirical_density(res.final)
        if "epsilon" in c:
            field = smooth(field, c["epsilon"])
        dens = field.density()
        u = np.arange(N) / N
        arts.append(write_table(out, f"density_{r:03d}", ["u"] + [f"rho_{a + 1}" for a in range(n)],
                                [[u[x]] + list(dens[:, x]) for x in range(N)], fmt))
        summary.append([r, len(res.path.log), res.proposals] + [int(v) for v in res.final.counts[1:]])
    arts.append(write_table(out, "summary", ["replica", "events", "proposals"] + [f"count_{a + 1}" for a in range(n)],
                            summary, fmt))
    return arts, {}


def cmd_hydro(cfg, seed, out, fmt, threads):
    from .hydro import SchemeParams, solve_hydro

    c = cfg.get("hydro", {})
    n = c.get("n_species", 2)
    M, T, K = c.get("M", 128), c.get("T", 0.05), c.get("K", 10)
    prof = build_profile(c.get("profile", DEFAULT_PROFILE if n == 2 else None), M, n)
    pots = build_potentials(c.get("potentials"), n, T)
    scheme = SchemeParams(M=M, stepper=c.get("stepper", "explicit"), safety=c.get("safety", 0.4), dt=c.get("dt"))
    traj = solve_hydro(prof, pots, scheme, T, K)
    traj.write_binary(out / "trajectory.bin")
    rows = []
    for k in range(K + 1):
        for j in range(M):
            rows.append([traj.times[k], traj.grid[j]] + list(traj.values[k, :, j]))
    arts = [out / "trajectory.bin", write_table(out, "trajectory", ["t", "u"] + [f"rho_{a + 1}" for a in range(n)], rows, fmt)]
    drift = float(np.max(np.abs(traj.means() - traj.means()[0])))
    return arts, {"mass_drift": drift, "substeps": traj.substeps, "rejections": traj.rejections}


def cmd_rate(cfg, seed, out, fmt, threads):
    from .hydro import SchemeParams, solve_hydro
    from .rate import HilbertMetric, TrigBasis, evaluate_rate, potential_field

    c = cfg.get("rate", {})
    n = c.get("n_species", 2)
    M, T, K = c.get("M", 64), c.get("T", 0.05), c.get("K", 64)
    prof = build_profile(c.get("profile", DEFAULT_PROFILE if n == 2 else None), M, n)
    pots = build_potentials(c.get("potentials", DEFAULT_POTENTIAL if n == 2 else None), n, T)
    rho = solve_hydro(prof, pots, SchemeParams(M=M), T, K)
    basis = TrigBasis(*c.get("basis", [3, 3]))
    gamma = build_profile(c["reference"], M, n) if "reference" in c else None
    ev = evaluate_rate(rho, gamma, basis, c.get("delta", 1e-6))
    rep = ev.report()
    if pots is not None:
        rep["I0_manufactured"] = 0.5 * HilbertMetric(rho, c.get("delta", 1e-6)).norm2(potential_field(pots, rho))
    path = out / "rate.json"
    path.write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n")
    return [path], {"residual": ev.residual}


def _girsanov_replica(args):
    from .girsanov import girsanov_weight
    from .process import SimParams, run

    r, seed, N, T, prof, pots = args
    c0 = sample_product_multinomial(prof, N, np.random.default_rng([seed, r]))
    res = run(c0, pots, SimParams(N, T, seed=seed, replica=r))
    return girsanov_weight(res.path, pots)


def cmd_girsanov(cfg, seed, out, fmt, threads):
    from .girsanov import exponential_bound

    c = cfg.get("girsanov", {})
    n = c.get("n_species", 2)
    N, T, R = c.get("N", 16), c.get("T", 0.1), c.get("replicas", 20)
    prof = build_profile(c.get("profile"), 256, n)
    pots = build_potentials(c.get("potentials", DEFAULT_POTENTIAL if n == 2 else None), n, T)
    weights = _map(threads, _girsanov_replica, [(r, seed, N, T, prof, pots) for r in range(R)])
    cols = ["replica", "log_rn_event", "log_rn_martingale", "jump_term", "compensator", "boundary_terms", "drift_integral"]
    rows = [[r, w.log_rn_event, w.log_rn_martingale, w.jump_term, w.compensator, w.boundary_terms, w.drift_integral]
            for r, w in enumerate(weights)]
    gap = max(abs(w.log_rn_event - w.log_rn_martingale) for w in weights)
    bound = exponential_bound(pots, T) if pots is not None else 0.0
    return [write_table(out, "weights", cols, rows, fmt)], {"max_form_gap": gap, "bound_c": bound}


def cmd_blocks(cfg, seed, out, fmt, threads):
    from .ensembles import equivalence_gap, one_block_gap, two_block_gap

    c = cfg.get("blocks", {})
    phi = build_phi(c.get("phi"), c.get("n_species", 2))
    rows = [[k, one_block_gap(phi, k), two_block_gap(k, phi.n_species)] for k in c.get("k", [1, 2, 3])]
    arts = [write_table(out, "block_gaps", ["k", "one_block_gap", "two_block_gap"], rows, fmt)]
    eq = [[N, equivalence_gap(phi, N)] for N in c.get("N", [10, 20, 50, 100, 200])]
    arts.append(write_table(out, "equivalence_gap", ["N", "gap"], eq, fmt))
    return arts, {}


def _hydro_limit_point(args):
    from .empirical import empirical_density, smooth
    from .process import SimParams, simulate_final

    N, r, seed, T, eps, prof, pots, ref = args
    c0 = sample_product_multinomial(prof, N, np.random.default_rng([seed, N, r]))
    fin = simulate_final(c0, pots, SimParams(N, T, seed=seed, replica=r))
    sm = smooth(empirical_density(fin), eps).density()
    M = ref.shape[1]
    return float(np.abs(sm - ref[:, (np.arange(N) * M) // N]).sum() / N)


def hydro_limit_sweep(prof, pots, T, Ns, replicas, eps, seed, threads=1):
    from .hydro import SchemeParams, solve_hydro

    ref = solve_hydro(prof, pots, SchemeParams(M=prof.M), T, K=1).values[-1]
    rows = []
    for N in Ns:
        if prof.M % N and N % prof.M:
            raise ConfigError("lattice sizes must divide the PDE grid (or vice versa)")
        d = _map(threads, _hydro_limit_point, [(N, r, seed, T, eps, prof, pots, ref) for r in range(replicas)])
        rows.append([N, float(np.mean(d)), float(np.std(d, ddof=1) / np.sqrt(len(d)))])
    return rows


def _superexp_point(args):
    from .empirical import superexp_estimate

    N, phi, eps, delta, T, R, seed = args
    e = superexp_estimate(N, phi, eps, delta, T, R, seed=seed)
    return [N, e.probability, e.stderr, e.log_rate]


def cmd_sweep(cfg, seed, out, fmt, threads):
    c = cfg.get("sweep", {})
    kind = c.get("kind", "hydro-limit")
    n = c.get("n_species", 2)
    if kind == "hydro-limit":
        T = c.get("T", 0.05)
        prof = build_profile(c.get("profile", HYDRO_LIMIT_PROFILE), c.get("M", 256), n)
        pots = build_potentials(c.get("potentials", HYDRO_LIMIT_POTENTIAL), n, T)
        rows = hydro_limit_sweep(prof, pots, T, c.get("N", [64, 128, 256]), c.get("replicas", 20), c.get("epsilon", 0.05), seed, threads)
        cols = ["N", "mean_L1", "stderr"]
    elif kind == "superexp":
        phi = build_phi(c.get("phi"), n)
        pts = [(N, phi, c.get("epsilon", 0.1), c.get("delta", 0.05), c.get("T", 0.88), c.get("replicas", 200), seed)
               for N in c.get("N", [16, 32, 64])]
        rows = _map(threads, _superexp_point, pts)
        cols = ["N", "probability", "stderr", "log_rate"]
    else:
        from .ensembles import equivalence_gap

        phi = build_phi(c.get("phi"), n)
        rows = [[N, equivalence_gap(phi, N)] for N in c.get("N", [10, 50, 200])]
        cols = ["N", "gap"]
    return [write_table(out, f"sweep_{kind}", cols, rows, fmt)], {}


HYDRO_LIMIT_PROFILE = {"mean": [0.3, 0.3], "fourier": [[[1, 0.0, 0.15]], [[1, 0.0, -0.15]]], "M": 256}
HYDRO_LIMIT_POTENTIAL = {"fourier": [[[1, 0.8, 0.0]], [[1, 0.0, -0.8]]]}


def cmd_verify(cfg, seed, out, fmt, threads, what):
    if what == "einstein":
        from .hydro import einstein_residual, simplex_grid

        pts = simplex_grid(50)
        res = [einstein_residual(p) for p in pts]
        rows = [[p[0], p[1], r] for p, r in zip(pts, res)]
        worst = max(res)
        return [write_table(out, "einstein", ["rho_1", "rho_2", "residual"], rows, fmt)], {"max_residual": worst, "passed": worst <= 1e-12}
    if what == "martingale":
        from .girsanov import check_mean_one
        from .process import SimParams

        c = cfg.get("girsanov", {})
        N, T = c.get("N", 16), c.get("T", 0.1)
        pots = build_potentials(c.get("potentials", DEFAULT_POTENTIAL), 2, T)
        prof = build_profile(c.get("profile"), 256, 2)
        est = check_mean_one(SimParams(N, T, seed=seed), pots, prof, c.get("replicas", 1000))
        rows = [[N, est.mean, est.stderr, est.replicas]]
        return [write_table(out, "mean_one", ["N", "mean", "stderr", "replicas"], rows, fmt)], {"passed": est.within()}
    if what == "hydro-limit":
        c = cfg.get("sweep", {})
        T = c.get("T", 0.05)
        prof = build_profile(c.get("profile", HYDRO_LIMIT_PROFILE), c.get("M", 256), 2)
        pots = build_potentials(c.get("potentials", HYDRO_LIMIT_POTENTIAL), 2, T)
        rows = hydro_limit_sweep(prof, pots, T, c.get("N", [64, 128, 256]), c.get("replicas", 20), c.get("epsilon", 0.05), seed, threads)
        d = [r[1] for r in rows]
        ok = all(a > b for a, b in zip(d, d[1:]))
        return [write_table(out, "hydro_limit", ["N", "mean_L1", "stderr"], rows, fmt)], {"passed": ok}
    if what == "equivalence":
        from .ensembles import equivalence_gap

        phi = build_phi(None)
        rows = [[N, equivalence_gap(phi, N)] for N in (10, 50, 200)]
        ok = rows[2][1] < rows[1][1] < rows[0][1]
        return [write_table(out, "equivalence", ["N", "gap"], rows, fmt)], {"passed": ok, "gap_10": rows[0][1]}
    raise ConfigError(f"unknown verify target {what}")


COMMANDS = {
    "simulate": cmd_simulate,
    "hydro": cmd_hydro,
    "rate": cmd_rate,
    "girsanov": cmd_girsanov,
    "blocks": cmd_blocks,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stirlab", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="stirlab_out")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    v = sub.add_parser("verify", parents=[common])
    v.add_argument("target", choices=["einstein", "martingale", "hydro-limit", "equivalence"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = FsPath(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = args.threads or int(os.environ.get("STIRLAB_THREADS", "1"))
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if args.command == "verify":
            arts, extra = cmd_verify(cfg, seed, out, args.format, threads, args.target)
        else:
            arts, extra = COMMANDS[args.command](cfg, seed, out, args.format, threads)
        write_manifest(out, args.command if args.command != "verify" else f"verify {args.target}", cfg, seed, arts,
                       time.perf_counter() - t0, extra)
    except Exception as exc:  # every failure becomes a JSON record and a nonzero exit
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        (out / "error.json").write_text(json.dumps(record, indent=1) + "\n")
        print(json.dumps(record), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    if extra.get("passed") is False:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
