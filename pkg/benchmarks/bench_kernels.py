"""Benchmark the compiled Lennard-Jones kernel against the numpy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py [--batch 256] [--repeats 5]

The two backends are also cross-checked for agreement on every timed
input, so this doubles as a consistency smoke test.
"""

import argparse
import time

import numpy as np

from structsearch import kernels
from structsearch.kernels import lj_numpy
from structsearch.structures import SeedSpec, random_seed_structure


def make_batch(n_atoms, batch, seed):
    spec = SeedSpec(composition={"A": n_atoms},
                    volume_per_atom_range=(12.0, 30.0),
                    min_separation=1.8, rng_seed=seed)
    seeds = [random_seed_structure(spec, i) for i in range(batch)]
    frac = np.stack([s.frac for s in seeds])
    lattice = np.stack([s.lattice for s in seeds])
    return frac, lattice


def time_backend(fn, frac, lattice, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(frac, lattice, 1.0, 2.2, 3.3, True, 0.1)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if kernels.BACKEND != "compiled":
        print("warning: compiled backend unavailable, comparing numpy "
              "against itself")

    print(f"active backend: {kernels.BACKEND}; batch={args.batch}")
    print(f"{'n_atoms':>8} {'compiled (ms)':>14} {'numpy (ms)':>12} "
          f"{'speedup':>8} {'max |dE|':>10}")
    for n_atoms in (4, 8, 16, 32):
        frac, lattice = make_batch(n_atoms, args.batch, args.seed)
        t_fast, out_fast = time_backend(kernels.lj_periodic_batch,
                                        frac, lattice, args.repeats)
        t_ref, out_ref = time_backend(lj_numpy.lj_periodic_batch,
                                      frac, lattice, args.repeats)
        d_e = float(np.abs(out_fast[0] - out_ref[0]).max())
        print(f"{n_atoms:>8} {1e3 * t_fast:>14.2f} {1e3 * t_ref:>12.2f} "
              f"{t_ref / t_fast:>8.2f} {d_e:>10.2e}")


if __name__ == "__main__":
    main()
