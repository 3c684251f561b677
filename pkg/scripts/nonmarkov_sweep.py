"""N_{n,m,0} and the confusion probability as a function of n - m."""
import argparse

import numpy as np

from memkernel.mttm import three_time_tensors
from memkernel.observables import non_markovianity_sweep, reports_to_csv
from memkernel.sysenv import ModelSpec, Oracle
from memkernel.ttm import MapFamily


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--kT", type=float, default=0.1)
    p.add_argument("--fock", type=int, default=4)
    p.add_argument("--damping", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("-m", type=int, default=5)
    p.add_argument("--max-gap", type=int, default=40)
    p.add_argument("--lam", type=float, default=1.0, help="number of repetitions lambda")
    p.add_argument("--out", default="nonmarkov_sweep.csv")
    args = p.parse_args()

    oracle = Oracle(ModelSpec(alpha=args.alpha, kT=args.kT, num_modes=1, fock_cutoff=args.fock,
                              mode_damping=args.damping), args.dt)
    total = args.m + args.max_gap
    e3 = three_time_tensors(oracle, total)
    maps = MapFamily(args.dt, oracle.maps(total))
    reports = non_markovianity_sweep(e3, maps, args.m, range(1, args.max_gap + 1),
                                     np.diag([0.7, 0.3]), args.lam)
    for r in reports:
        print(f"n-m={r.n - r.m:3d}  N={r.value:.6f}  confusion={r.confusion:.6f}")
    reports_to_csv(reports, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
