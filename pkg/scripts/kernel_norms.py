"""Table of ||T_n||_F and the truncation bound for a few cutoffs."""
import argparse

from memkernel.sysenv import ModelSpec, Oracle
from memkernel.ttm import MapFamily, error_bound, reconstruct_kernels


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--kT", type=float, default=0.1)
    p.add_argument("--modes", type=int, default=2)
    p.add_argument("--fock", type=int, default=3)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--horizon", type=int, default=30)
    args = p.parse_args()

    spec = ModelSpec(alpha=args.alpha, omega_c=10.0, kT=args.kT, num_modes=args.modes,
                     fock_cutoff=args.fock, omega_max=20.0, mode_damping=args.damping)
    kernels = reconstruct_kernels(MapFamily(args.dt, Oracle(spec, args.dt).maps(args.horizon)))
    cutoffs = [l for l in (2, 5, 10, 20) if l < args.horizon]
    print("n     ||T_n||    " + "".join(f"bound(l={l})  " for l in cutoffs))
    for n, norm in enumerate(kernels.norms(), start=1):
        bounds = "".join(f"{error_bound(kernels, n, l):11.3e}  " for l in cutoffs)
        print(f"{n:<4d} {norm:10.3e}  {bounds}")


if __name__ == "__main__":
    main()
