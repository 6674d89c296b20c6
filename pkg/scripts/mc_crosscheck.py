"""Cross-check the lattice start value against regression Monte Carlo.

Prints the lattice y0, the MC estimate with its bootstrap standard
error, and the z-score of the gap for each catalog instance.

Usage: python3 scripts/mc_crosscheck.py [--n-steps 50] [--n-paths 100000]
       [--seed 20260825] [--basis pwlinear] [--degree 8]
"""

import argparse
import time

from rbsvie import mc
from rbsvie.instances import CATALOG_NAMES, catalog_instance
from rbsvie.volterra import PicardConfig, solve_global


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-steps", type=int, default=50)
    ap.add_argument("--n-paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=20260825)
    ap.add_argument("--basis", choices=("pwlinear", "polynomial"), default="pwlinear")
    ap.add_argument("--degree", type=int, default=8)
    args = ap.parse_args()

    basis = mc.RegressionBasis(args.basis, args.degree)
    print(f"{'instance':24s} {'lattice y0':>12s} {'mc y0':>12s} "
          f"{'se':>10s} {'z':>6s} {'secs':>6s}")
    for name in CATALOG_NAMES:
        spec = catalog_instance(name)
        lat = spec.lattice(args.n_steps)
        y0 = float(solve_global(lat, spec, PicardConfig()).y_diag[0][0])
        t0 = time.time()
        bundle = mc.simulate(lat.grid, spec, args.n_paths, seed=args.seed)
        est = mc.solve_mc(bundle, spec, basis)
        el = time.time() - t0
        z = abs(est.y0 - y0) / est.y0_se
        print(f"{name:24s} {y0:12.6f} {est.y0:12.6f} "
              f"{est.y0_se:10.2e} {z:6.2f} {el:6.1f}")


if __name__ == "__main__":
    main()
