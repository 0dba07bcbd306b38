"""Structure representations, periodic geometry and deterministic seeding.

Conventions: the lattice matrix ``L`` is stored row-major with rows as
lattice vectors, and Cartesian positions are ``R = L^T X`` for fractional
coordinates ``X`` (one atom per row).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


class ValidationError(ValueError):
    """Raised when a structure or spec violates its invariants."""


class SeedRejectionError(RuntimeError):
    """Raised when random seeding cannot satisfy the separation constraint."""


def wrap_fractional(frac):
    """Map fractional coordinates to their canonical torus representative in [0,1)."""
    frac = np.asarray(frac, dtype=float)
    if not np.all(np.isfinite(frac)):
        raise ValidationError("fractional coordinates must be finite")
    return frac - np.floor(frac)


@dataclass(frozen=True, eq=False)
class NonPeriodicStructure:
    """A finite set of atoms in Cartesian space (coordinates in Angstrom)."""

    species: tuple
    coords: np.ndarray

    def __post_init__(self):
        species = tuple(self.species)
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValidationError(f"coords must be n x 3, got shape {coords.shape}")
        if coords.shape[0] < 1:
            raise ValidationError("structure needs at least one atom")
        if len(species) != coords.shape[0]:
            raise ValidationError("species/coords length mismatch")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "coords", coords)

    @property
    def n_atoms(self):
        return len(self.species)


@dataclass(frozen=True, eq=False)
class PeriodicStructure:
    """A periodic cell: fractional coordinates plus a 3x3 lattice matrix.

    Fractional coordinates are wrapped to [0,1) on construction; the
    lattice must be right-handed (det L > 0).
    """

    species: tuple
    frac: np.ndarray
    lattice: np.ndarray

    def __post_init__(self):
        species = tuple(self.species)
        frac = np.array(self.frac, dtype=float)
        lattice = np.array(self.lattice, dtype=float)
        if frac.ndim != 2 or frac.shape[1] != 3:
            raise ValidationError(f"frac must be n x 3, got shape {frac.shape}")
        if frac.shape[0] < 1:
            raise ValidationError("structure needs at least one atom")
        if len(species) != frac.shape[0]:
            raise ValidationError("species/frac length mismatch")
        if lattice.shape != (3, 3):
            raise ValidationError("lattice must be 3 x 3")
        if not (np.all(np.isfinite(frac)) and np.all(np.isfinite(lattice))):
            raise ValidationError("coordinates and lattice must be finite")
        if np.linalg.det(lattice) <= 0:
            raise ValidationError("lattice must be right-handed with det(L) > 0")
        frac = wrap_fractional(frac)
        frac.setflags(write=False)
        lattice.setflags(write=False)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "frac", frac)
        object.__setattr__(self, "lattice", lattice)

    @property
    def n_atoms(self):
        return len(self.species)

    @property
    def volume(self):
        return float(np.linalg.det(self.lattice))


Structure = (NonPeriodicStructure, PeriodicStructure)


def to_cartesian(s: PeriodicStructure) -> np.ndarray:
    """Cartesian positions, row j = L^T x_j."""
    return s.frac @ s.lattice


def from_cartesian(coords, lattice) -> np.ndarray:
    """Fractional coordinates (unwrapped) for Cartesian rows under lattice L."""
    return np.asarray(coords, dtype=float) @ np.linalg.inv(lattice)


@dataclass(frozen=True)
class SeedSpec:
    """Parameters for AIRSS-style random seed structures."""

    composition: dict
    volume_per_atom_range: tuple = (8.0, 30.0)
    angle_range_deg: tuple = (60.0, 120.0)
    min_separation: float = 1.6
    rng_seed: int = 0

    def __post_init__(self):
        v_min, v_max = self.volume_per_atom_range
        t_min, t_max = self.angle_range_deg
        if not (0 < v_min <= v_max):
            raise ValidationError("volume range must satisfy 0 < v_min <= v_max")
        if not (0 < t_min <= t_max < 180):
            raise ValidationError("angle range must satisfy 0 < min <= max < 180 deg")
        if self.min_separation <= 0:
            raise ValidationError("min_separation must be positive")
        if not self.composition or any(c < 1 for c in self.composition.values()):
            raise ValidationError("composition must contain positive counts")

    @property
    def species(self):
        out = []
        for el in sorted(self.composition):
            out.extend([el] * int(self.composition[el]))
        return tuple(out)

    @property
    def n_atoms(self):
        return sum(int(c) for c in self.composition.values())


def lattice_from_parameters(a, b, c, alpha, beta, gamma):
    """Build a row-major lattice matrix from lengths (A) and angles (deg).

    Returns None if the angle triple is geometrically invalid.
    """
    al, be, ga = np.radians([alpha, beta, gamma])
    cx = np.cos(be)
    cy = (np.cos(al) - np.cos(be) * np.cos(ga)) / np.sin(ga)
    czsq = 1.0 - cx * cx - cy * cy
    if czsq <= 1e-10:
        return None
    cz = np.sqrt(czsq)
    lat = np.array(
        [
            [a, 0.0, 0.0],
            [b * np.cos(ga), b * np.sin(ga), 0.0],
            [c * cx, c * cy, c * cz],
        ]
    )
    return lat


def min_periodic_distance(s: PeriodicStructure, j: int, k: int) -> float:
    """Minimum distance between atoms j and k over all lattice translations.

    For j == k the zero translation is excluded (distance to the nearest
    periodic self-image).
    """
    d = s.frac[k] - s.frac[j]
    d -= np.round(d)
    lat = s.lattice
    inv_norms = np.linalg.norm(np.linalg.inv(lat), axis=0)
    # initial candidate: minimum-image guess (j != k) or shortest cell vector (j == k)
    if j == k:
        best = float(min(np.linalg.norm(lat, axis=1)))
    else:
        best = float(np.linalg.norm(d @ lat))
    # search radius guaranteed to contain the true minimum: a translation with
    # |m_i + d_i| > |row_i(L^-1)| * best along any axis already exceeds `best`
    ranges = [np.arange(-m, m + 1) for m in (np.ceil(inv_norms * best).astype(int) + 1)]
    shifts = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T
    if j == k:
        shifts = shifts[np.any(shifts != 0, axis=1)]
    dist = np.linalg.norm((d + shifts) @ lat, axis=1)
    return float(dist.min())


def _min_separation_ok(frac, lattice, min_sep):
    from .kernels import min_pair_distance

    return min_pair_distance(frac[None], lattice[None])[0] >= min_sep


def random_seed_structure(spec: SeedSpec, index: int) -> PeriodicStructure:
    """Draw a random periodic seed, deterministic in (spec.rng_seed, index).

    Cell parameters are resampled until valid; atoms are placed one at a
    time, redrawing any position that lands within spec.min_separation of
    an already placed atom (under periodic images). A cell that cannot
    host all atoms after 200 per-atom tries is discarded.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed, spawn_key=(int(index),)))
    n = spec.n_atoms
    v_min, v_max = spec.volume_per_atom_range
    t_min, t_max = spec.angle_range_deg
    for _ in range(1000):
        vol = n * rng.uniform(v_min, v_max)
        angles = rng.uniform(t_min, t_max, size=3)
        lengths = rng.uniform(0.5, 1.0, size=3)
        lat = lattice_from_parameters(*lengths, *angles)
        if lat is None:
            continue
        lat *= (vol / np.linalg.det(lat)) ** (1.0 / 3.0)
        probe = PeriodicStructure(spec.species[:1], np.zeros((1, 3)), lat)
        if n > 1 and min_periodic_distance(probe, 0, 0) < spec.min_separation:
            continue  # a cell vector this short can never host two atoms
        frac = np.empty((n, 3))
        placed = 0
        tries = 0
        while placed < n and tries < 200:
            frac[placed] = rng.uniform(0.0, 1.0, size=3)
            tries += 1
            if placed == 0 or _min_separation_ok(frac[: placed + 1], lat, spec.min_separation):
                placed += 1
        if placed == n:
            return PeriodicStructure(spec.species, frac, lat)
    raise SeedRejectionError(
        f"could not place {n} atoms with min_separation={spec.min_separation} A "
        f"(seed={spec.rng_seed}, index={index})"
    )


# ---------------------------------------------------------------------------
# JSONL persistence

def reduce_cell(s: PeriodicStructure) -> PeriodicStructure:
    """Return the same crystal in an LLL-reduced cell.

    The reduced basis rows are short and close to orthogonal, which
    gives a canonical-looking cell regardless of how skewed the cell
    was when the structure was found. The transform is unimodular, so
    the crystal itself (and any periodic property) is unchanged.
    """
    basis = np.array(s.lattice, dtype=float)
    trans = np.eye(3)

    def mu(i, j, b):
        gs = _gram_schmidt(b)
        return float(np.dot(b[i], gs[j]) / np.dot(gs[j], gs[j]))

    k = 1
    guard = 0
    while k < 3 and guard < 200:
        guard += 1
        for j in range(k - 1, -1, -1):
            q = round(mu(k, j, basis))
            if q != 0:
                basis[k] -= q * basis[j]
                trans[k] -= q * trans[j]
        gs = _gram_schmidt(basis)
        lhs = np.dot(gs[k], gs[k])
        rhs = (0.75 - mu(k, k - 1, basis) ** 2) * np.dot(gs[k - 1], gs[k - 1])
        if lhs >= rhs:
            k += 1
        else:
            basis[[k - 1, k]] = basis[[k, k - 1]]
            trans[[k - 1, k]] = trans[[k, k - 1]]
            k = max(k - 1, 1)

    if np.linalg.det(basis) < 0:
        basis[2] *= -1.0
        trans[2] *= -1.0
    frac = s.frac @ np.linalg.inv(trans)
    return PeriodicStructure(s.species, frac, basis)


def _gram_schmidt(b):
    gs = np.array(b, dtype=float)
    for i in range(1, 3):
        for j in range(i):
            gs[i] -= (np.dot(b[i], gs[j]) / np.dot(gs[j], gs[j])) * gs[j]
    return gs


def structure_to_record(s, energy_per_atom=None, meta=None) -> dict:
    if isinstance(s, PeriodicStructure):
        rec = {
            "species": list(s.species),
            "frac": s.frac.tolist(),
            "lattice": s.lattice.tolist(),
        }
    else:
        rec = {
            "species": list(s.species),
            "coords": s.coords.tolist(),
            "lattice": None,
        }
    rec["energy_per_atom"] = None if energy_per_atom is None else float(energy_per_atom)
    rec["meta"] = dict(meta or {})
    return rec


def record_to_structure(rec: dict):
    """Rebuild (structure, energy_per_atom, meta) from a JSONL record dict."""
    if rec.get("lattice") is not None:
        s = PeriodicStructure(rec["species"], np.array(rec["frac"]), np.array(rec["lattice"]))
    else:
        s = NonPeriodicStructure(rec["species"], np.array(rec["coords"]))
    return s, rec.get("energy_per_atom"), rec.get("meta", {})


def save_jsonl(path, records: Iterable[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
