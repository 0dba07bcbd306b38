"""Named toy systems wiring potentials, sampling spaces, seed
generation, relaxation and training data together for the campaign
drivers.

Each system exposes the same small surface:

- space: the block layout sampled by the reverse chain;
- random_states / seed structures for the random-search baseline;
- batch_energy, grad_fn: batched energies (eV/atom) and energy
  gradients in the sampling coordinates;
- relax_states: batched local relaxation;
- to_records-ready structure conversion.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffusion
from .diffusion import BlockSpec, NoiseSchedule, ScoreField
from .evaluate import MatcherConfig
from .potentials import KB_EV, DoubleWell1D, LennardJones, TorsionModel
from .relax import RelaxConfig, fire_relax_batch
from .structures import (
    PeriodicStructure,
    SeedSpec,
    random_seed_structure,
    wrap_fractional,
)

TWO_PI = 2.0 * np.pi


class PeriodicLJSystem:
    """n identical Lennard-Jones atoms in a fully flexible periodic cell."""

    def __init__(self, name, n_atoms, epsilon=1.0, sigma=2.2, cutoff=3.3,
                 volume_per_atom_range=(12.0, 40.0), min_separation=1.8):
        self.name = name
        self.n_atoms = n_atoms
        self.species = ("A",) * n_atoms
        self.potential = LennardJones(epsilon=epsilon, sigma=sigma, cutoff=cutoff)
        self.volume_per_atom_range = volume_per_atom_range
        self.min_separation = min_separation
        self.periodic = True
        self.space = (
            BlockSpec("frac", (n_atoms, 3), "torus"),
            BlockSpec("lattice", (3, 3), "vp",
                      scale=diffusion.lattice_noise_scale(n_atoms)),
        )
        self.matcher = MatcherConfig(cutoff=2.0 * self.potential.cutoff)
        self.stability_window = 0.35
        # energy guidance per block. Fractional coordinates get the
        # Boltzmann-matched multiplier. The lattice gets none: noisy
        # mid-chain configurations almost always overlap somewhere, so an
        # energy term on the cell pushes "expand" every single step and
        # the accumulated drift blows the box apart long before the score
        # can pin it back. Cell diversity comes from the final relaxation
        # instead.
        lam0 = 1.0 / (2.0 * KB_EV * 400.0)
        self.guidance_lam = {"frac": lam0, "lattice": 0.0}

    def seed_spec(self, rng_seed) -> SeedSpec:
        return SeedSpec(
            composition={"A": self.n_atoms},
            volume_per_atom_range=self.volume_per_atom_range,
            min_separation=self.min_separation,
            rng_seed=rng_seed,
        )

    def random_states(self, trials, rng_seed) -> Dict[str, np.ndarray]:
        spec = self.seed_spec(rng_seed)
        seeds = [random_seed_structure(spec, i) for i in range(trials)]
        return {
            "frac": np.stack([s.frac for s in seeds]),
            "lattice": np.stack([s.lattice for s in seeds]),
        }

    def _valid(self, state, min_vol_per_atom=1.0, max_images=512):
        """Chains whose cell is well-formed enough to evaluate the potential.

        Rejects tiny or inverted cells and ones so skewed that the
        periodic image enumeration inside the kernel would blow up.
        """
        lat = state["lattice"]
        det = np.linalg.det(lat)
        ok = det > min_vol_per_atom * self.n_atoms * 0.1
        if ok.any():
            inv = np.linalg.inv(lat[ok])
            nmax = np.floor(np.linalg.norm(inv, axis=1) * self.potential.cutoff).astype(int) + 1
            ok[np.where(ok)[0]] = np.prod(2 * nmax + 1, axis=1) <= max_images
        return ok

    def batch_energy(self, state) -> np.ndarray:
        """Energy per atom; nan for chains with a degenerate cell."""
        B = state["frac"].shape[0]
        out = np.full(B, np.nan)
        ok = self._valid(state)
        if ok.any():
            e, _, _, _ = self.potential.batch_periodic(
                wrap_fractional(state["frac"][ok]), state["lattice"][ok])
            out[ok] = e / self.n_atoms
        return out

    def grad_fn(self, state) -> Dict[str, np.ndarray]:
        """Energy gradients w.r.t. fractional coordinates and lattice.

        Degenerate cells contribute zero gradient: the score term alone
        steers those chains back toward sane geometry.
        """
        frac = state["frac"]
        lattice = state["lattice"]
        B = frac.shape[0]
        g_frac = np.zeros_like(frac)
        g_lat = np.zeros(lattice.shape)
        ok = self._valid(state)
        if ok.any():
            lat = lattice[ok]
            _, forces, virial, _ = self.potential.batch_periodic(wrap_fractional(frac[ok]), lat)
            g_frac[ok] = -np.einsum("bij,bkj->bik", forces, lat)
            det = np.linalg.det(lat)
            inv_t = np.linalg.inv(lat).transpose(0, 2, 1)
            g_lat[ok] = -det[:, None, None] * np.einsum("bij,bjk->bik", inv_t, virial)
        return {"frac": g_frac, "lattice": g_lat}

    def relax_states(self, state, cfg: RelaxConfig):
        """Batched FIRE; chains with degenerate cells are flagged failed."""
        B = state["frac"].shape[0]
        ok = self._valid(state)
        out = {
            "frac": wrap_fractional(np.array(state["frac"], dtype=float)),
            "lattice": np.array(state["lattice"], dtype=float),
        }
        energy = np.full(B, np.nan)
        converged = np.zeros(B, dtype=bool)
        steps = np.zeros(B, dtype=int)
        max_force = np.full(B, np.nan)
        failed = ~ok
        if ok.any():
            res = fire_relax_batch(self.potential, frac=out["frac"][ok],
                                   lattice=out["lattice"][ok], cfg=cfg)
            out["frac"][ok] = res["frac"]
            out["lattice"][ok] = res["lattice"]
            energy[ok] = res["energy"] / self.n_atoms
            converged[ok] = res["converged"]
            steps[ok] = res["steps_used"]
            max_force[ok] = res["max_force"]
            failed[ok] = res["failed"]
        return out, energy, converged, steps, max_force, failed

    def to_structures(self, state) -> List[Optional[PeriodicStructure]]:
        out = []
        for b in range(state["frac"].shape[0]):
            lat = state["lattice"][b]
            if not np.all(np.isfinite(lat)) or np.linalg.det(lat) <= 0 \
                    or not np.all(np.isfinite(state["frac"][b])):
                out.append(None)
                continue
            out.append(PeriodicStructure(self.species, wrap_fractional(state["frac"][b]), lat))
        return out

    def training_structures(self, references) -> List[PeriodicStructure]:
        """Lowest-energy reference only: a deliberately narrow training
        set that reproduces the distributional bias of a score model fit
        to a thin slice of the landscape."""
        from .evaluate import _unpack

        pairs = [_unpack(r) for r in references]
        e_min = min(e for _, e in pairs)
        # Take the first entry within degeneracy tolerance of the best
        # energy, so reference lists that canonicalize the order of exact
        # ties keep control over which member trains the model.
        best = next(s for s, e in pairs if e <= e_min + 1e-6)
        return [best]


TORSION_MODES = (
    (-2.864108605678, 0.278975211363),
    (0.278494766049, -2.864660114424),
    (0.324589484766, 0.323952828339),
    (-2.815661392155, -2.814912277711),
)
TORSION_MODE_ENERGIES = (
    -0.015940750930,
    0.014051962900,
    0.045290708055,
    0.135261972942,
)


class TorsionSystem:
    """Five-atom chain with two coupled torsion angles, sampled on the
    2-torus of scaled angles u = angle / 2 pi."""

    name = "torsion"
    periodic = False

    def __init__(self, model: TorsionModel = TorsionModel()):
        self.model = model
        self.species = model.species
        self.n_atoms = len(model.species)
        self.space = (BlockSpec("angles", (2,), "torus"),)
        self.modes = TORSION_MODES
        self.matcher = MatcherConfig(cutoff=10.0)

    def _angles(self, state):
        return state["angles"] * TWO_PI - np.pi

    def random_states(self, trials, rng_seed):
        rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
        return {"angles": rng.random((trials, 2))}

    def batch_energy(self, state) -> np.ndarray:
        ang = self._angles(state)
        return self.model.energy_angles(ang[:, 0], ang[:, 1]) / self.n_atoms

    def grad_fn(self, state) -> Dict[str, np.ndarray]:
        ang = self._angles(state)
        gp, gq = self.model.grad_angles(ang[:, 0], ang[:, 1])
        return {"angles": np.stack([gp, gq], axis=1) * TWO_PI}

    def relax_states(self, state, cfg: RelaxConfig):
        """Fixed-step gradient descent on the smooth angle surface."""
        u = np.array(state["angles"], dtype=float)
        B = u.shape[0]
        ang = u * TWO_PI - np.pi
        step = 0.5
        gnorm = np.full(B, np.inf)
        steps = np.zeros(B, dtype=int)
        for _ in range(2000):
            gp, gq = self.model.grad_angles(ang[:, 0], ang[:, 1])
            g = np.stack([gp, gq], axis=1)
            gnorm = np.abs(g).max(axis=1)
            active = gnorm > 1e-9
            if not active.any():
                break
            ang[active] -= step * g[active]
            steps[active] += 1
        out = {"angles": np.mod((ang + np.pi) / TWO_PI, 1.0)}
        energy = self.model.energy_angles(ang[:, 0], ang[:, 1]) / self.n_atoms
        converged = gnorm <= 1e-6
        failed = ~np.isfinite(energy)
        return out, energy, converged, steps, gnorm, failed

    def to_structures(self, state):
        ang = self._angles(state)
        out = []
        for b in range(ang.shape[0]):
            if np.all(np.isfinite(ang[b])):
                out.append(self.model.build_structure(ang[b, 0], ang[b, 1]))
            else:
                out.append(None)
        return out

    def angles_of(self, state):
        """(B, 2) array of (phi, psi) in radians."""
        return self._angles(state)

    def training_structures(self, references=None, mode: int = 0):
        del references
        return [self.model.build_structure(*self.modes[mode])]

    def training_means(self, mode: int = 0) -> Dict[str, np.ndarray]:
        phi, psi = self.modes[mode]
        u = np.mod((np.array([phi, psi]) + np.pi) / TWO_PI, 1.0)
        return {"angles": u[None, :]}


class DoubleWell1DSystem:
    """Independent quartic double wells, one scalar coordinate per atom.

    Exists for annealed-Langevin statistics: n atoms give n independent
    chains per batch element, so long stationary runs stay vectorized.
    """

    name = "dw1d"
    periodic = False

    def __init__(self, n_atoms=1, scale=0.05):
        self.n_atoms = n_atoms
        self.scale = scale
        self.space = (BlockSpec("x", (n_atoms,), "ve"),)

    def energy_values(self, x):
        return self.scale * (x * x - 1.0) ** 2

    def batch_energy(self, state):
        return self.energy_values(state["x"]).sum(axis=1) / self.n_atoms

    def grad_fn(self, state):
        x = state["x"]
        return {"x": 4.0 * self.scale * x * (x * x - 1.0)}

    def random_states(self, trials, rng_seed):
        rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
        return {"x": rng.uniform(-2.0, 2.0, (trials, self.n_atoms))}


class ClusterLJSystem:
    """A small Lennard-Jones cluster in free space (no periodic cell)."""

    periodic = False

    def __init__(self, name, n_atoms, epsilon=0.2, sigma=2.2,
                 box=6.0, min_separation=1.8):
        self.name = name
        self.n_atoms = n_atoms
        self.species = ("A",) * n_atoms
        self.potential = LennardJones(epsilon=epsilon, sigma=sigma,
                                      cutoff=2.5 * sigma, shift=False)
        self.box = box
        self.min_separation = min_separation
        self.space = (BlockSpec("coords", (n_atoms, 3), "vp", scale=self.box / 2.0),)
        self.matcher = MatcherConfig(cutoff=2.0 * self.potential.cutoff)
        # A shallow 0.05 eV window keeps dissociated states (which relax to
        # zero energy and zero force) out of the reference set.
        self.stability_window = 0.05
        lam0 = 1.0 / (2.0 * KB_EV * 400.0)
        self.guidance_lam = {"coords": lam0 / (self.space[0].scale ** 2)}

    def random_states(self, trials, rng_seed):
        rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
        out = np.empty((trials, self.n_atoms, 3))
        for b in range(trials):
            for _ in range(1000):
                c = rng.uniform(-self.box / 2.0, self.box / 2.0, (self.n_atoms, 3))
                d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
                iu = np.triu_indices(self.n_atoms, k=1)
                if self.n_atoms < 2 or d[iu].min() >= self.min_separation:
                    out[b] = c
                    break
            else:
                raise RuntimeError("could not place a cluster seed")
        return {"coords": out}

    def batch_energy(self, state):
        e, _, _ = self.potential.batch_cluster(state["coords"], use_cutoff=False)
        return e / self.n_atoms

    def grad_fn(self, state):
        _, forces, _ = self.potential.batch_cluster(state["coords"], use_cutoff=False)
        return {"coords": -forces}

    def relax_states(self, state, cfg: RelaxConfig):
        res = fire_relax_batch(self.potential, coords=np.array(state["coords"], dtype=float), cfg=cfg)
        out = {"coords": res["coords"]}
        return (out, res["energy"] / self.n_atoms, res["converged"],
                res["steps_used"], res["max_force"], res["failed"])

    def to_structures(self, state):
        from .structures import NonPeriodicStructure
        out = []
        for b in range(state["coords"].shape[0]):
            c = state["coords"][b]
            if np.all(np.isfinite(c)):
                out.append(NonPeriodicStructure(self.species, c - c.mean(axis=0)))
            else:
                out.append(None)
        return out

    def training_structures(self, references):
        from .evaluate import _unpack

        pairs = [_unpack(r) for r in references]
        e_min = min(e for _, e in pairs)
        # Take the first entry within degeneracy tolerance of the best
        # energy, so reference lists that canonicalize the order of exact
        # ties keep control over which member trains the model.
        best = next(s for s, e in pairs if e <= e_min + 1e-6)
        return [best]


def lj_system(name: str) -> PeriodicLJSystem:
    counts = {"lj4": 4, "lj8": 8}
    sysx = PeriodicLJSystem(name, counts[name])
    if name == "lj8":
        # The eight-atom cell has a long tail of shallow minima whose
        # basins shrink quickly; the reference set stops above the
        # near-degenerate ground pair.
        sysx.stability_window = 0.15
    return sysx


def get_system(name: str):
    if name == "lj_dimer":
        return ClusterLJSystem("lj_dimer", 2)
    if name in ("lj4", "lj8"):
        return lj_system(name)
    if name == "torsion":
        return TorsionSystem()
    if name == "dw1d":
        return DoubleWell1DSystem()
    raise KeyError("unknown system %r" % name)


SYSTEM_NAMES = ("lj_dimer", "lj4", "lj8", "torsion", "dw1d")


def score_field_for(system, schedule: NoiseSchedule, references=None,
                    training=None, **kwargs) -> ScoreField:
    """Empirical score field from a training set.

    For the torsion system training lives directly in angle space; for
    periodic systems the training structures map to frac/lattice blocks.
    """
    if isinstance(system, TorsionSystem):
        means = training if training is not None else system.training_means(**kwargs)
        return ScoreField(system.space, means, schedule)
    if training is None:
        training = system.training_structures(references)
    if isinstance(system, ClusterLJSystem):
        means = {"coords": np.stack([s.coords for s in training])}
    else:
        means = {
            "frac": np.stack([s.frac for s in training]),
            "lattice": np.stack([s.lattice for s in training]),
        }
    return ScoreField(system.space, means, schedule)
