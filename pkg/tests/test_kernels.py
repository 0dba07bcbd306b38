import subprocess
import sys

import numpy as np

from structsearch import kernels
from structsearch.kernels import lj_numpy
from structsearch.structures import SeedSpec, random_seed_structure


def _random_batch(n_atoms, batch, seed):
    spec = SeedSpec(composition={"A": n_atoms},
                    volume_per_atom_range=(12.0, 30.0),
                    min_separation=1.8, rng_seed=seed)
    seeds = [random_seed_structure(spec, i) for i in range(batch)]
    return (np.stack([s.frac for s in seeds]),
            np.stack([s.lattice for s in seeds]))


def test_backends_agree_periodic():
    frac, lattice = _random_batch(6, 16, 2)
    a = kernels.lj_periodic_batch(frac, lattice, 1.0, 2.2, 3.3, True, 0.1)
    b = lj_numpy.lj_periodic_batch(frac, lattice, 1.0, 2.2, 3.3, True, 0.1)
    assert np.abs(a[0] - b[0]).max() < 1e-10          # energies
    assert np.abs(a[1] - b[1]).max() < 1e-10          # forces
    assert np.abs(a[2] - b[2]).max() < 1e-10          # virial stress
    assert np.array_equal(a[3], b[3])                 # overlap flags


def test_backends_agree_cluster():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 5.0, (8, 3, 3))
    a = kernels.lj_cluster_batch(coords, 0.2, 2.2, np.inf, False, 0.1)
    b = lj_numpy.lj_cluster_batch(coords, 0.2, 2.2, np.inf, False, 0.1)
    assert np.abs(a[0] - b[0]).max() < 1e-10
    assert np.abs(a[1] - b[1]).max() < 1e-10


def test_min_pair_distance_agrees():
    frac, lattice = _random_batch(5, 8, 4)
    a = kernels.min_pair_distance(frac, lattice)
    b = lj_numpy.min_pair_distance(frac, lattice)
    assert np.abs(np.asarray(a) - np.asarray(b)).max() < 1e-10


def test_pure_python_env_selects_numpy():
    out = subprocess.run(
        [sys.executable, "-c",
         "from structsearch import kernels; print(kernels.BACKEND)"],
        env={"STRUCTSEARCH_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
