# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Lennard-Jones kernels (see lj_numpy.py for the reference semantics)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor as c_floor, sqrt, INFINITY

cnp.import_array()


cdef inline double _lj_v(double r, double eps, double sigma) nogil:
    cdef double sr6 = (sigma / r) ** 6
    return 4.0 * eps * (sr6 * sr6 - sr6)


cdef inline double _lj_dv(double r, double eps, double sigma) nogil:
    cdef double sr6 = (sigma / r) ** 6
    return 4.0 * eps * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r


cdef inline void _invert3(const double[:, ::1] a, double* out) nogil:
    cdef double det
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    out[0] = (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]) / det
    out[1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) / det
    out[2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) / det
    out[3] = (a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]) / det
    out[4] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) / det
    out[5] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) / det
    out[6] = (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]) / det
    out[7] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) / det
    out[8] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) / det


cdef inline double _det3(const double[:, ::1] a) nogil:
    return (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))


def lj_periodic_batch(frac_in, lattice_in, double eps, double sigma, double rcut,
                      shift=True, double floor=0.1):
    frac_arr = np.ascontiguousarray(frac_in, dtype=np.float64)
    lat_arr = np.ascontiguousarray(lattice_in, dtype=np.float64)
    cdef const double[:, :, ::1] frac = frac_arr
    cdef const double[:, :, ::1] lattice = lat_arr
    cdef Py_ssize_t B = frac.shape[0], n = frac.shape[1]

    energy_arr = np.zeros(B)
    forces_arr = np.zeros((B, n, 3))
    virial_arr = np.zeros((B, 3, 3))
    overlap_arr = np.zeros(B, dtype=np.uint8)
    cdef double[::1] energy = energy_arr
    cdef double[:, :, ::1] forces = forces_arr
    cdef double[:, :, ::1] virial = virial_arr
    cdef cnp.uint8_t[::1] overlap = overlap_arr

    cdef double vshift = _lj_v(rcut, eps, sigma) if shift else 0.0
    cdef Py_ssize_t b, j, k, a, c
    cdef int mx, my, mz, n0, n1, n2
    cdef double inv[9]
    cdef double lat00, lat01, lat02, lat10, lat11, lat12, lat20, lat21, lat22
    cdef double d0, d1, d2, u0, u1, u2, rx, ry, rz, r2, r, vol, scale
    cdef double v, dv, cc, fx, fy, fz, rc2 = rcut * rcut
    cdef double inorm0, inorm1, inorm2

    for b in range(B):
        vol = _det3(lattice[b])
        _invert3(lattice[b], inv)
        inorm0 = sqrt(inv[0] * inv[0] + inv[3] * inv[3] + inv[6] * inv[6])
        inorm1 = sqrt(inv[1] * inv[1] + inv[4] * inv[4] + inv[7] * inv[7])
        inorm2 = sqrt(inv[2] * inv[2] + inv[5] * inv[5] + inv[8] * inv[8])
        n0 = <int>c_floor(inorm0 * rcut) + 1
        n1 = <int>c_floor(inorm1 * rcut) + 1
        n2 = <int>c_floor(inorm2 * rcut) + 1
        lat00 = lattice[b, 0, 0]; lat01 = lattice[b, 0, 1]; lat02 = lattice[b, 0, 2]
        lat10 = lattice[b, 1, 0]; lat11 = lattice[b, 1, 1]; lat12 = lattice[b, 1, 2]
        lat20 = lattice[b, 2, 0]; lat21 = lattice[b, 2, 1]; lat22 = lattice[b, 2, 2]
        for j in range(n):
            for k in range(j, n):
                d0 = frac[b, k, 0] - frac[b, j, 0]
                d1 = frac[b, k, 1] - frac[b, j, 1]
                d2 = frac[b, k, 2] - frac[b, j, 2]
                for mx in range(-n0, n0 + 1):
                    for my in range(-n1, n1 + 1):
                        for mz in range(-n2, n2 + 1):
                            if j == k:
                                # half-space: count each self-image pair once
                                if not (mx > 0 or (mx == 0 and (my > 0 or (my == 0 and mz > 0)))):
                                    continue
                            u0 = d0 + mx; u1 = d1 + my; u2 = d2 + mz
                            rx = u0 * lat00 + u1 * lat10 + u2 * lat20
                            ry = u0 * lat01 + u1 * lat11 + u2 * lat21
                            rz = u0 * lat02 + u1 * lat12 + u2 * lat22
                            r2 = rx * rx + ry * ry + rz * rz
                            if r2 >= rc2 or r2 < 1e-24:
                                continue
                            r = sqrt(r2)
                            if r < floor:
                                overlap[b] = 1
                                scale = floor / r
                                rx *= scale; ry *= scale; rz *= scale
                                r = floor
                            v = _lj_v(r, eps, sigma)
                            dv = _lj_dv(r, eps, sigma)
                            energy[b] += v - vshift
                            cc = dv / r
                            if j != k:
                                fx = -cc * rx; fy = -cc * ry; fz = -cc * rz
                                forces[b, k, 0] += fx; forces[b, k, 1] += fy; forces[b, k, 2] += fz
                                forces[b, j, 0] -= fx; forces[b, j, 1] -= fy; forces[b, j, 2] -= fz
                            virial[b, 0, 0] -= cc * rx * rx / vol
                            virial[b, 0, 1] -= cc * rx * ry / vol
                            virial[b, 0, 2] -= cc * rx * rz / vol
                            virial[b, 1, 0] -= cc * ry * rx / vol
                            virial[b, 1, 1] -= cc * ry * ry / vol
                            virial[b, 1, 2] -= cc * ry * rz / vol
                            virial[b, 2, 0] -= cc * rz * rx / vol
                            virial[b, 2, 1] -= cc * rz * ry / vol
                            virial[b, 2, 2] -= cc * rz * rz / vol
    return energy_arr, forces_arr, virial_arr, overlap_arr.astype(bool)


def lj_cluster_batch(coords_in, double eps, double sigma, double rcut=INFINITY,
                     shift=False, double floor=0.1):
    coords_arr = np.ascontiguousarray(coords_in, dtype=np.float64)
    cdef const double[:, :, ::1] coords = coords_arr
    cdef Py_ssize_t B = coords.shape[0], n = coords.shape[1]

    energy_arr = np.zeros(B)
    forces_arr = np.zeros((B, n, 3))
    overlap_arr = np.zeros(B, dtype=np.uint8)
    cdef double[::1] energy = energy_arr
    cdef double[:, :, ::1] forces = forces_arr
    cdef cnp.uint8_t[::1] overlap = overlap_arr

    cdef double vshift = _lj_v(rcut, eps, sigma) if (shift and rcut != INFINITY) else 0.0
    cdef Py_ssize_t b, j, k
    cdef double rx, ry, rz, r, v, dv, cc, scale

    for b in range(B):
        for j in range(n):
            for k in range(j + 1, n):
                rx = coords[b, k, 0] - coords[b, j, 0]
                ry = coords[b, k, 1] - coords[b, j, 1]
                rz = coords[b, k, 2] - coords[b, j, 2]
                r = sqrt(rx * rx + ry * ry + rz * rz)
                if r >= rcut:
                    continue
                if r < floor:
                    overlap[b] = 1
                    if r > 1e-12:
                        scale = floor / r
                        rx *= scale; ry *= scale; rz *= scale
                    r = floor
                v = _lj_v(r, eps, sigma)
                dv = _lj_dv(r, eps, sigma)
                energy[b] += v - vshift
                cc = dv / r
                forces[b, k, 0] -= cc * rx; forces[b, k, 1] -= cc * ry; forces[b, k, 2] -= cc * rz
                forces[b, j, 0] += cc * rx; forces[b, j, 1] += cc * ry; forces[b, j, 2] += cc * rz
    return energy_arr, forces_arr, overlap_arr.astype(bool)


def min_pair_distance(frac_in, lattice_in):
    frac_arr = np.ascontiguousarray(frac_in, dtype=np.float64)
    lat_arr = np.ascontiguousarray(lattice_in, dtype=np.float64)
    cdef const double[:, :, ::1] frac = frac_arr
    cdef const double[:, :, ::1] lattice = lat_arr
    cdef Py_ssize_t B = frac.shape[0], n = frac.shape[1]
    out_arr = np.full(B, np.inf)
    cdef double[::1] out = out_arr
    if n < 2:
        return out_arr

    cdef Py_ssize_t b, j, k
    cdef int mx, my, mz, n0, n1, n2
    cdef double inv[9]
    cdef double inorm0, inorm1, inorm2
    cdef double d0, d1, d2, u0, u1, u2, rx, ry, rz, r2, best

    for b in range(B):
        _invert3(lattice[b], inv)
        inorm0 = sqrt(inv[0] * inv[0] + inv[3] * inv[3] + inv[6] * inv[6])
        inorm1 = sqrt(inv[1] * inv[1] + inv[4] * inv[4] + inv[7] * inv[7])
        inorm2 = sqrt(inv[2] * inv[2] + inv[5] * inv[5] + inv[8] * inv[8])
        for j in range(n):
            for k in range(j + 1, n):
                d0 = frac[b, k, 0] - frac[b, j, 0]; d0 -= c_floor(d0 + 0.5)
                d1 = frac[b, k, 1] - frac[b, j, 1]; d1 -= c_floor(d1 + 0.5)
                d2 = frac[b, k, 2] - frac[b, j, 2]; d2 -= c_floor(d2 + 0.5)
                rx = d0 * lattice[b, 0, 0] + d1 * lattice[b, 1, 0] + d2 * lattice[b, 2, 0]
                ry = d0 * lattice[b, 0, 1] + d1 * lattice[b, 1, 1] + d2 * lattice[b, 2, 1]
                rz = d0 * lattice[b, 0, 2] + d1 * lattice[b, 1, 2] + d2 * lattice[b, 2, 2]
                best = sqrt(rx * rx + ry * ry + rz * rz)
                n0 = <int>c_floor(inorm0 * best) + 1
                n1 = <int>c_floor(inorm1 * best) + 1
                n2 = <int>c_floor(inorm2 * best) + 1
                for mx in range(-n0, n0 + 1):
                    for my in range(-n1, n1 + 1):
                        for mz in range(-n2, n2 + 1):
                            u0 = d0 + mx; u1 = d1 + my; u2 = d2 + mz
                            rx = u0 * lattice[b, 0, 0] + u1 * lattice[b, 1, 0] + u2 * lattice[b, 2, 0]
                            ry = u0 * lattice[b, 0, 1] + u1 * lattice[b, 1, 1] + u2 * lattice[b, 2, 1]
                            rz = u0 * lattice[b, 0, 2] + u1 * lattice[b, 1, 2] + u2 * lattice[b, 2, 2]
                            r2 = rx * rx + ry * ry + rz * rz
                            if r2 < best * best:
                                best = sqrt(r2)
                if best < out[b]:
                    out[b] = best
    return out_arr
