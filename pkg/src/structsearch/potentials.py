"""Analytic potential-energy surfaces with forces and virial stress.

Shipped surfaces: Lennard-Jones (periodic with explicit image sums, or
non-periodic cluster), 1-D/2-D double wells acting per atom, and a
two-dihedral torsion model on a rigid backbone. All gradients are
analytic; ``finite_difference_oracle`` provides the independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .structures import NonPeriodicStructure, PeriodicStructure, to_cartesian

KB_EV = 8.617333262e-5  # Boltzmann constant, eV/K


class OverlapError(RuntimeError):
    """An atom pair fell below the hard distance floor (0.1 A)."""


@dataclass(frozen=True)
class PotentialReport:
    energy: float
    forces_cart: np.ndarray
    virial_stress: Optional[np.ndarray] = None


class LennardJones:
    """Pair Lennard-Jones, element-blind (single epsilon/sigma).

    Periodic cells sum over all image pairs with distance < cutoff; the
    energy is shifted so V(cutoff) = 0. Non-periodic structures use plain
    all-pairs summation (no cutoff unless one is given).
    """

    def __init__(self, epsilon=1.0, sigma=1.0, cutoff=None, shift=True, floor=0.1):
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.cutoff = float(cutoff) if cutoff is not None else 2.5 * self.sigma
        self.shift = bool(shift)
        self.floor = float(floor)

    def pair_energy(self, r):
        sr6 = (self.sigma / np.asarray(r, dtype=float)) ** 6
        return 4.0 * self.epsilon * (sr6 * sr6 - sr6)

    def batch_periodic(self, frac, lattice):
        return kernels.lj_periodic_batch(
            frac, lattice, self.epsilon, self.sigma, self.cutoff, self.shift, self.floor
        )

    def batch_cluster(self, coords, use_cutoff=True):
        rcut = self.cutoff if use_cutoff else np.inf
        return kernels.lj_cluster_batch(
            coords, self.epsilon, self.sigma, rcut, self.shift and use_cutoff, self.floor
        )

    def evaluate(self, s) -> PotentialReport:
        if isinstance(s, PeriodicStructure):
            e, f, vir, bad = self.batch_periodic(s.frac[None], s.lattice[None])
            if bad[0]:
                raise OverlapError(f"pair distance below {self.floor} A in periodic LJ cell")
            return PotentialReport(float(e[0]), f[0], vir[0])
        e, f, bad = self.batch_cluster(s.coords[None])
        if bad[0]:
            raise OverlapError(f"pair distance below {self.floor} A in LJ cluster")
        return PotentialReport(float(e[0]), f[0], None)


class DoubleWell1D:
    """V = sum_j scale * (x_j^2 - 1)^2 acting on the x coordinate of each atom.

    Atoms do not interact, so an n-atom structure is n independent 1-D
    systems (used to run many scalar chains in one vectorized pass).
    """

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def energy_1d(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * (x * x - 1.0) ** 2

    def batch_cluster(self, coords):
        coords = np.asarray(coords, dtype=float)
        x = coords[..., 0]
        energy = self.scale * ((x * x - 1.0) ** 2).sum(axis=-1)
        forces = np.zeros_like(coords)
        forces[..., 0] = -self.scale * 4.0 * x * (x * x - 1.0)
        return energy, forces, np.zeros(coords.shape[0], dtype=bool)

    def evaluate(self, s) -> PotentialReport:
        e, f, _ = self.batch_cluster(s.coords[None])
        return PotentialReport(float(e[0]), f[0], None)


class QuadWell2D:
    """Separable quartic double well in x and y: four minima at (+-1, +-1)."""

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def batch_cluster(self, coords):
        coords = np.asarray(coords, dtype=float)
        x, y = coords[..., 0], coords[..., 1]
        energy = self.scale * (((x * x - 1.0) ** 2) + ((y * y - 1.0) ** 2)).sum(axis=-1)
        forces = np.zeros_like(coords)
        forces[..., 0] = -self.scale * 4.0 * x * (x * x - 1.0)
        forces[..., 1] = -self.scale * 4.0 * y * (y * y - 1.0)
        return energy, forces, np.zeros(coords.shape[0], dtype=bool)

    def evaluate(self, s) -> PotentialReport:
        e, f, _ = self.batch_cluster(s.coords[None])
        return PotentialReport(float(e[0]), f[0], None)


# ---------------------------------------------------------------------------
# Torsion model


def _place_atom(p1, p2, p3, bond, angle, dihedral):
    """NERF atom placement: position with given bond to p3, angle p2-p3-new,
    dihedral p1-p2-p3-new."""
    b1 = p2 - p1
    b2 = p3 - p2
    b2h = b2 / np.linalg.norm(b2)
    n = np.cross(b1, b2)
    n /= np.linalg.norm(n)
    m = np.cross(n, b2h)
    # sign of the n-component chosen so the placed atom realizes `dihedral`
    # under the dihedral_angle sign convention below
    d = np.array(
        [
            -bond * np.cos(angle),
            bond * np.sin(angle) * np.cos(dihedral),
            -bond * np.sin(angle) * np.sin(dihedral),
        ]
    )
    return p3 + d[0] * b2h + d[1] * m + d[2] * n


def dihedral_angle(p0, p1, p2, p3):
    """Signed dihedral of the p1-p2 bond, in (-pi, pi]."""
    b1 = p1 - p0
    b2 = p2 - p1
    b3 = p3 - p2
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    m = np.cross(n1, b2 / np.linalg.norm(b2))
    return float(np.arctan2(np.dot(m, n2), np.dot(n1, n2)))


def dihedral_gradient(p0, p1, p2, p3):
    """Gradients of the dihedral w.r.t. the four atom positions."""
    b1 = p1 - p0
    b2 = p2 - p1
    b3 = p3 - p2
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    nb2 = np.linalg.norm(b2)
    g0 = nb2 / np.dot(n1, n1) * n1
    g3 = -nb2 / np.dot(n2, n2) * n2
    c12 = np.dot(b1, b2) / (nb2 * nb2)
    c32 = np.dot(b3, b2) / (nb2 * nb2)
    g1 = -(1.0 + c12) * g0 + c32 * g3
    g2 = c12 * g0 - (1.0 + c32) * g3
    return g0, g1, g2, g3


@dataclass(frozen=True)
class TorsionModel:
    """Two-dihedral model molecule: a rigid 5-atom chain u-a-b-c-w.

    The energy depends only on the dihedrals phi = (u,a,b,c) and
    psi = (a,b,c,w):

        V = A (1 - cos 2(phi - phi0)) + B (1 - cos 2(psi - psi0))
            + C cos(phi) cos(psi)
            + Dp (1 - cos(phi - phi0)) + Dq (1 - cos(psi - psi0))

    The one-fold Dp/Dq terms break the exact (phi, psi) -> (phi+pi, psi+pi)
    symmetry of the two-fold-plus-coupling surface; without them the four
    minima come in degenerate pairs. The defaults give four non-degenerate
    minima (energies about -0.016, 0.014, 0.045, 0.135 eV).
    """

    amp_phi: float = 0.15
    amp_psi: float = 0.15
    coupling: float = 0.05
    sym_phi: float = 0.015
    sym_psi: float = 0.03
    phi0: float = 0.3
    psi0: float = 0.3
    bond: float = 1.5
    bond_angle: float = np.radians(111.0)
    species: tuple = ("C", "C", "C", "C", "C")

    # atom indices of the two dihedrals in the built structure
    PHI_ATOMS = (0, 1, 2, 3)
    PSI_ATOMS = (1, 2, 3, 4)

    def energy_angles(self, phi, psi):
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        return (
            self.amp_phi * (1.0 - np.cos(2.0 * (phi - self.phi0)))
            + self.amp_psi * (1.0 - np.cos(2.0 * (psi - self.psi0)))
            + self.coupling * np.cos(phi) * np.cos(psi)
            + self.sym_phi * (1.0 - np.cos(phi - self.phi0))
            + self.sym_psi * (1.0 - np.cos(psi - self.psi0))
        )

    def grad_angles(self, phi, psi):
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        dphi = (
            2.0 * self.amp_phi * np.sin(2.0 * (phi - self.phi0))
            - self.coupling * np.sin(phi) * np.cos(psi)
            + self.sym_phi * np.sin(phi - self.phi0)
        )
        dpsi = (
            2.0 * self.amp_psi * np.sin(2.0 * (psi - self.psi0))
            - self.coupling * np.cos(phi) * np.sin(psi)
            + self.sym_psi * np.sin(psi - self.psi0)
        )
        return dphi, dpsi

    def build_structure(self, phi, psi) -> NonPeriodicStructure:
        """Construct the 3-D molecule with the backbone template fixed."""
        a = np.zeros(3)
        b = np.array([self.bond, 0.0, 0.0])
        c = _place_atom(np.array([0.0, 1.0, 0.0]), a, b, self.bond, self.bond_angle, np.pi)
        u = _place_atom(c, b, a, self.bond, self.bond_angle, float(phi))
        w = _place_atom(a, b, c, self.bond, self.bond_angle, float(psi))
        return NonPeriodicStructure(self.species, np.stack([u, a, b, c, w]))

    def angles_from_structure(self, s: NonPeriodicStructure):
        p = s.coords
        phi = dihedral_angle(*(p[i] for i in self.PHI_ATOMS))
        psi = dihedral_angle(*(p[i] for i in self.PSI_ATOMS))
        return phi, psi

    def evaluate(self, s: NonPeriodicStructure) -> PotentialReport:
        p = s.coords
        phi, psi = self.angles_from_structure(s)
        dphi, dpsi = self.grad_angles(phi, psi)
        forces = np.zeros_like(p)
        for grad_val, idxs in ((dphi, self.PHI_ATOMS), (dpsi, self.PSI_ATOMS)):
            grads = dihedral_gradient(*(p[i] for i in idxs))
            for i, g in zip(idxs, grads):
                forces[i] -= grad_val * g
        return PotentialReport(float(self.energy_angles(phi, psi)), forces, None)


# ---------------------------------------------------------------------------
# Gradient conversions (periodic cells)


def frac_gradient(s: PeriodicStructure, report: PotentialReport) -> np.ndarray:
    """Energy gradient w.r.t. fractional coordinates: row j = -L F_j."""
    return -report.forces_cart @ s.lattice.T


def lattice_gradient_from_virial(s: PeriodicStructure, virial) -> np.ndarray:
    """Energy gradient w.r.t. lattice entries: -|det L| L^-T sigma_virial."""
    det = np.linalg.det(s.lattice)
    if abs(det) < 1e-300:
        raise np.linalg.LinAlgError("singular lattice")
    return -det * np.linalg.inv(s.lattice).T @ np.asarray(virial, dtype=float)


def virial_to_total_stress(s: PeriodicStructure, report: PotentialReport) -> np.ndarray:
    """Total stress: sigma_virial + (1/V) sum_j R_j (x) F_j.

    The outer-product order (position first) is the one under which the
    lattice gradient computed from the total stress,
    -|det L| L^-T sigma_total + X^T F, agrees with the virial route.
    """
    vol = s.volume
    R = to_cartesian(s)
    correction = R.T @ report.forces_cart  # sum_j R_j F_j^T
    return np.asarray(report.virial_stress, dtype=float) + correction / vol


def lattice_gradient_from_total_stress(s: PeriodicStructure, total_stress, forces_cart):
    """Cross-check route: -|det L| L^-T sigma_total + X^T F_cart."""
    det = np.linalg.det(s.lattice)
    return -det * np.linalg.inv(s.lattice).T @ np.asarray(total_stress, dtype=float) + (
        s.frac.T @ forces_cart
    )


# ---------------------------------------------------------------------------
# Finite-difference oracle


@dataclass(frozen=True)
class FDReport:
    forces_cart: np.ndarray
    grad_frac: Optional[np.ndarray] = None
    grad_lattice: Optional[np.ndarray] = None


def finite_difference_oracle(potential, s, h=1e-5) -> FDReport:
    """Central finite differences of the energy along every coordinate.

    For periodic structures also differentiates w.r.t. fractional
    coordinates (perturbed on the torus) and lattice entries at fixed
    fractional coordinates.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")

    def energy(struct):
        return potential.evaluate(struct).energy

    if isinstance(s, NonPeriodicStructure):
        forces = np.zeros_like(s.coords)
        for j in range(s.n_atoms):
            for a in range(3):
                for sign in (+1, -1):
                    c = s.coords.copy()
                    c[j, a] += sign * h
                    forces[j, a] -= sign * energy(NonPeriodicStructure(s.species, c))
        return FDReport(forces / (2 * h))

    # periodic: Cartesian forces via frac perturbation of L^-T-converted step
    forces = np.zeros_like(s.frac)
    grad_frac = np.zeros_like(s.frac)
    inv_lat = np.linalg.inv(s.lattice)
    for j in range(s.n_atoms):
        for a in range(3):
            for sign in (+1, -1):
                f = s.frac.copy()
                f[j, a] += sign * h
                e = energy(PeriodicStructure(s.species, f, s.lattice))
                grad_frac[j, a] += sign * e
    grad_frac /= 2 * h
    # forces are minus the Cartesian gradient; grad_R = L^-1 grad_X per atom
    forces = -grad_frac @ inv_lat.T

    grad_lattice = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            for sign in (+1, -1):
                lat = s.lattice.copy()
                lat[a, b] += sign * h
                e = energy(PeriodicStructure(s.species, s.frac, lat))
                grad_lattice[a, b] += sign * e
    grad_lattice /= 2 * h
    return FDReport(forces, grad_frac, grad_lattice)
