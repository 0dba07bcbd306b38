"""Pure-numpy reference kernels for the Lennard-Jones hot loops.

Semantics are shared with the compiled extension in ``_ljcore.pyx``; the
compiled module is preferred at import time and this file is both the
fallback and the correctness reference for the benchmark.

Virial convention: sigma_virial = -(1/V) * sum_pairs (V'(r)/r) * r (x) r,
chosen so that grad_L E = -det(L) * L^-T * sigma_virial at fixed
fractional coordinates.
"""

from __future__ import annotations

import numpy as np


def _lj_pair(r, eps, sigma):
    sr6 = (sigma / r) ** 6
    v = 4.0 * eps * (sr6 * sr6 - sr6)
    dv = 4.0 * eps * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r
    return v, dv


def _image_shifts(lattice, rcut):
    inv_norms = np.linalg.norm(np.linalg.inv(lattice), axis=0)
    nmax = np.floor(inv_norms * rcut).astype(int) + 1
    ranges = [np.arange(-m, m + 1) for m in nmax]
    return np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T.astype(float)


def lj_periodic_batch(frac, lattice, eps, sigma, rcut, shift=True, floor=0.1):
    """Periodic LJ with explicit image enumeration inside rcut.

    Returns (energy (B,), forces (B,n,3) cartesian, virial (B,3,3),
    overlap (B,) bool). Pairs closer than `floor` are clamped to `floor`
    and flagged instead of raising.
    """
    frac = np.asarray(frac, dtype=float)
    lattice = np.asarray(lattice, dtype=float)
    B, n, _ = frac.shape
    energy = np.zeros(B)
    forces = np.zeros((B, n, 3))
    virial = np.zeros((B, 3, 3))
    overlap = np.zeros(B, dtype=bool)
    vshift = _lj_pair(rcut, eps, sigma)[0] if shift else 0.0

    for b in range(B):
        lat = lattice[b]
        vol = float(np.linalg.det(lat))
        shifts = _image_shifts(lat, rcut)
        for j in range(n):
            for k in range(j, n):
                d = frac[b, k] - frac[b, j]
                u = d + shifts
                if j == k:
                    # self-image pairs: count each once via lexicographic half-space
                    keep = (
                        (shifts[:, 0] > 0)
                        | ((shifts[:, 0] == 0) & (shifts[:, 1] > 0))
                        | ((shifts[:, 0] == 0) & (shifts[:, 1] == 0) & (shifts[:, 2] > 0))
                    )
                    u = u[keep]
                rvec = u @ lat
                r = np.linalg.norm(rvec, axis=1)
                mask = (r < rcut) & (r > 1e-12)
                if not np.any(mask):
                    continue
                rvec = rvec[mask]
                r = r[mask]
                if np.any(r < floor):
                    overlap[b] = True
                    rvec = rvec * (np.maximum(r, floor) / r)[:, None]
                    r = np.maximum(r, floor)
                v, dv = _lj_pair(r, eps, sigma)
                energy[b] += np.sum(v - vshift)
                c = dv / r
                fpair = -c[:, None] * rvec
                if j != k:
                    forces[b, k] += fpair.sum(axis=0)
                    forces[b, j] -= fpair.sum(axis=0)
                virial[b] -= (c[:, None, None] * rvec[:, :, None] * rvec[:, None, :]).sum(axis=0) / vol
    return energy, forces, virial, overlap


def lj_cluster_batch(coords, eps, sigma, rcut=np.inf, shift=False, floor=0.1):
    """Non-periodic all-pairs LJ. Returns (energy, forces, overlap)."""
    coords = np.asarray(coords, dtype=float)
    B, n, _ = coords.shape
    energy = np.zeros(B)
    forces = np.zeros((B, n, 3))
    overlap = np.zeros(B, dtype=bool)
    vshift = _lj_pair(rcut, eps, sigma)[0] if (shift and np.isfinite(rcut)) else 0.0

    for b in range(B):
        for j in range(n):
            for k in range(j + 1, n):
                rvec = coords[b, k] - coords[b, j]
                r = float(np.linalg.norm(rvec))
                if r >= rcut:
                    continue
                if r < floor:
                    overlap[b] = True
                    rvec = rvec * (floor / r) if r > 1e-12 else rvec
                    r = floor
                v, dv = _lj_pair(r, eps, sigma)
                energy[b] += v - vshift
                fpair = -(dv / r) * rvec
                forces[b, k] += fpair
                forces[b, j] -= fpair
    return energy, forces, overlap


def min_pair_distance(frac, lattice):
    """Per-chain minimum periodic distance over distinct atom pairs.

    Chains with a single atom report inf (no pair constraint).
    """
    frac = np.asarray(frac, dtype=float)
    lattice = np.asarray(lattice, dtype=float)
    B, n, _ = frac.shape
    out = np.full(B, np.inf)
    if n < 2:
        return out
    for b in range(B):
        lat = lattice[b]
        inv_norms = np.linalg.norm(np.linalg.inv(lat), axis=0)
        for j in range(n):
            for k in range(j + 1, n):
                d = frac[b, k] - frac[b, j]
                d -= np.round(d)
                best = float(np.linalg.norm(d @ lat))
                nmax = np.floor(inv_norms * best).astype(int) + 1
                ranges = [np.arange(-m, m + 1) for m in nmax]
                shifts = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T
                dist = np.linalg.norm((d + shifts) @ lat, axis=1)
                out[b] = min(out[b], float(dist.min()))
    return out
