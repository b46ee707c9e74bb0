"""L1 distance between smoothed empirical densities and the PDE solution as N grows."""

import argparse
import time

from stirlab.cli import HYDRO_LIMIT_POTENTIAL, HYDRO_LIMIT_PROFILE, build_potentials, build_profile, hydro_limit_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--replicas", type=int, default=20)
    ap.add_argument("--T", type=float, default=0.05)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    prof = build_profile(HYDRO_LIMIT_PROFILE, 256)
    pots = build_potentials(HYDRO_LIMIT_POTENTIAL, 2, args.T)
    t0 = time.perf_counter()
    rows = hydro_limit_sweep(prof, pots, args.T, args.N, args.replicas, args.eps, args.seed, args.threads)
    print("N,mean_L1,stderr")
    for N, d, se in rows:
        print(f"{N},{d:.6f},{se:.6f}")
    print(f"# {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
