"""Check P((1/N) int V >= delta) <= exp(-aN delta) E exp(a int V) <= exp(N((t/N) lam - a delta)) at small N."""

import argparse

from stirlab.empirical import LocalObservable
from stirlab.ensembles import chebyshev_chain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=6)
    ap.add_argument("--eps", type=float, default=1 / 3)
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--a", type=float, nargs="+", default=[1.0, 2.0, 3.0])
    ap.add_argument("--delta", type=float, default=0.14)
    ap.add_argument("--replicas", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    phi = LocalObservable.occupation_product([1, 1])
    rows = chebyshev_chain(phi, args.N, args.eps, args.t, [(a, args.delta) for a in args.a], args.replicas, args.seed)
    print("a,delta,lambda,P_mc,P_se,markov,bound,moment_exact,moment_mc,holds")
    for r in rows:
        print(f"{r.a},{r.delta},{r.lam:.6f},{r.prob_mc:.5f},{r.prob_se:.5f},{r.markov_bound:.5g},{r.bound:.5g},"
              f"{r.moment_exact:.5f},{r.moment_mc:.5f},{r.holds()}")


if __name__ == "__main__":
    main()
