"""Energy minimization (FIRE, steepest descent) and the RSS pipeline.

FIRE runs batched: many independent structures are relaxed in one
vectorized pass with per-chain adaptive state, which keeps the campaign
loops out of Python.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .potentials import frac_gradient, lattice_gradient_from_virial
from .structures import (
    NonPeriodicStructure,
    PeriodicStructure,
    SeedSpec,
    random_seed_structure,
    wrap_fractional,
)


class DivergedError(RuntimeError):
    """Relaxation produced a non-finite energy."""


@dataclass(frozen=True)
class RelaxConfig:
    f_max: float = 0.01
    max_steps: int = 1000
    dt_initial: float = 0.02
    dt_max: float = 0.2
    method: str = "fire"
    step_size: float = 1e-3  # steepest descent only
    relax_cell: bool = True

    # FIRE parameters (standard published defaults)
    n_min: int = 5
    f_inc: float = 1.1
    f_dec: float = 0.5
    alpha_start: float = 0.1
    f_alpha: float = 0.99

    def __post_init__(self):
        if self.f_max <= 0 or self.max_steps < 1:
            raise ValueError("f_max must be positive and max_steps >= 1")
        if not (0 < self.dt_initial <= self.dt_max):
            raise ValueError("need 0 < dt_initial <= dt_max")


@dataclass(frozen=True)
class RelaxResult:
    structure: object
    energy_per_atom: float
    converged: bool
    steps_used: int
    max_force_final: float


def steepest_descent_step(s, potential, h, relax_cell=True):
    """One explicit gradient step: M - h * grad E(M) (Eq.-(2)-style update)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    report = potential.evaluate(s)
    if isinstance(s, NonPeriodicStructure):
        return NonPeriodicStructure(s.species, s.coords + h * report.forces_cart)
    grad_x = frac_gradient(s, report)
    frac = wrap_fractional(s.frac - h * grad_x)
    lattice = s.lattice
    if relax_cell and report.virial_stress is not None:
        lattice = lattice - h * lattice_gradient_from_virial(s, report.virial_stress)
    return PeriodicStructure(s.species, frac, lattice)


# ---------------------------------------------------------------------------
# Batched FIRE


def _batch_forces_periodic(potential, frac, lattice, relax_cell):
    energy, forces, virial, _ = potential.batch_periodic(frac, lattice)
    if relax_cell:
        det = np.linalg.det(lattice)
        inv_t = np.linalg.inv(lattice).transpose(0, 2, 1)
        f_lat = det[:, None, None] * np.einsum("bij,bjk->bik", inv_t, virial)
    else:
        f_lat = np.zeros_like(lattice)
    return energy, forces, f_lat


def fire_relax_batch(potential, frac=None, lattice=None, coords=None, cfg=RelaxConfig()):
    """Vectorized FIRE over a batch of independent structures.

    Periodic mode (frac+lattice given): atoms move along Cartesian forces,
    the cell along -grad_L E (simultaneously coupled when cfg.relax_cell).
    Cluster mode (coords given): Cartesian coordinates only.

    Returns a dict with final arrays plus per-chain energy, converged,
    steps_used, max_force and failed flags.
    """
    periodic = frac is not None
    if periodic:
        frac = np.array(frac, dtype=float)
        lattice = np.array(lattice, dtype=float)
        B, n, _ = frac.shape
    else:
        coords = np.array(coords, dtype=float)
        B, n, _ = coords.shape

    ndof = 3 * n + (9 if periodic else 0)
    v = np.zeros((B, ndof))
    dt = np.full(B, cfg.dt_initial)
    alpha = np.full(B, cfg.alpha_start)
    npos = np.zeros(B, dtype=int)
    steps_used = np.zeros(B, dtype=int)
    failed = np.zeros(B, dtype=bool)

    def forces_and_metric():
        if periodic:
            energy, f_cart, f_lat = _batch_forces_periodic(potential, frac, lattice, cfg.relax_cell)
            f = np.concatenate([f_cart.reshape(B, -1), f_lat.reshape(B, -1)], axis=1)
            max_atomic = np.linalg.norm(f_cart, axis=2).max(axis=1)
            conv_metric = max_atomic
            if cfg.relax_cell:
                conv_metric = np.maximum(max_atomic, np.abs(f_lat).reshape(B, -1).max(axis=1))
        else:
            energy, f_cart, _ = potential.batch_cluster(coords)
            f = f_cart.reshape(B, -1)
            max_atomic = np.linalg.norm(f_cart, axis=2).max(axis=1)
            conv_metric = max_atomic
        return energy, f, max_atomic, conv_metric

    energy, f, max_atomic, conv_metric = forces_and_metric()
    converged = conv_metric <= cfg.f_max
    active = ~converged

    for _ in range(cfg.max_steps):
        if not active.any():
            break
        a = active
        power = (f[a] * v[a]).sum(axis=1)
        uphill = power <= 0

        # velocity mixing toward the force direction for downhill chains
        fnorm = np.linalg.norm(f[a], axis=1)
        vnorm = np.linalg.norm(v[a], axis=1)
        mix = np.where(fnorm > 0, vnorm / np.where(fnorm > 0, fnorm, 1.0), 0.0)
        v_a = (1.0 - alpha[a, None]) * v[a] + alpha[a, None] * mix[:, None] * f[a]

        grow = (~uphill) & (npos[a] > cfg.n_min)
        dt_a = dt[a]
        dt_a = np.where(grow, np.minimum(dt_a * cfg.f_inc, cfg.dt_max), dt_a)
        alpha_a = np.where(grow, alpha[a] * cfg.f_alpha, alpha[a])
        npos_a = np.where(uphill, 0, npos[a] + 1)
        v_a = np.where(uphill[:, None], 0.0, v_a)
        dt_a = np.where(uphill, dt_a * cfg.f_dec, dt_a)
        alpha_a = np.where(uphill, cfg.alpha_start, alpha_a)

        # semi-implicit Euler
        v_a = v_a + dt_a[:, None] * f[a]
        dx = dt_a[:, None] * v_a

        v[a] = v_a
        dt[a] = dt_a
        alpha[a] = alpha_a
        npos[a] = npos_a
        steps_used[a] += 1

        if periodic:
            d_cart = dx[:, : 3 * n].reshape(-1, n, 3)
            inv_lat = np.linalg.inv(lattice[a])
            frac[a] = frac[a] + np.einsum("bij,bjk->bik", d_cart, inv_lat)
            frac[a] -= np.floor(frac[a])
            if cfg.relax_cell:
                lattice[a] = lattice[a] + dx[:, 3 * n :].reshape(-1, 3, 3)
        else:
            coords[a] = coords[a] + dx.reshape(-1, n, 3)

        energy_new, f, max_atomic, conv_metric = forces_and_metric()
        bad = ~np.isfinite(energy_new)
        if periodic:
            bad |= np.linalg.det(lattice) <= 1e-8
        newly_failed = active & bad
        failed |= newly_failed
        energy = energy_new
        converged = (~failed) & (conv_metric <= cfg.f_max)
        active = (~converged) & (~failed) & (steps_used < cfg.max_steps)

    out = {
        "energy": energy,
        "converged": converged,
        "steps_used": steps_used,
        "max_force": max_atomic,
        "failed": failed,
    }
    if periodic:
        out["frac"] = frac
        out["lattice"] = lattice
    else:
        out["coords"] = coords
    return out


def fire_relax(s, potential, cfg: RelaxConfig = RelaxConfig()) -> RelaxResult:
    """Relax a single structure with FIRE until max force <= cfg.f_max."""
    if isinstance(s, PeriodicStructure):
        res = fire_relax_batch(potential, frac=s.frac[None].copy(), lattice=s.lattice[None].copy(), cfg=cfg)
        structure = PeriodicStructure(s.species, res["frac"][0], res["lattice"][0])
    else:
        res = fire_relax_batch(potential, coords=s.coords[None].copy(), cfg=cfg)
        structure = NonPeriodicStructure(s.species, res["coords"][0])
    if res["failed"][0]:
        raise DivergedError("non-finite energy during relaxation")
    n = len(s.species)
    return RelaxResult(
        structure=structure,
        energy_per_atom=float(res["energy"][0]) / n,
        converged=bool(res["converged"][0]),
        steps_used=int(res["steps_used"][0]),
        max_force_final=float(res["max_force"][0]),
    )


# ---------------------------------------------------------------------------
# RSS campaign


def rss_campaign(
    seed_spec: SeedSpec,
    potential,
    cfg: RelaxConfig = RelaxConfig(),
    trials: int = 128,
    matcher=None,
    e_hull_cutoff: float = 1.0,
):
    """Seed -> relax -> filter -> de-duplicate.

    Keeps converged trials, drops structures more than e_hull_cutoff above
    the campaign minimum energy per atom, and de-duplicates with `matcher`
    (a callable (result_a, result_b) -> bool). Deterministic in
    seed_spec.rng_seed; trial i uses RNG substream i.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [random_seed_structure(seed_spec, i) for i in range(trials)]
    frac = np.stack([s.frac for s in seeds])
    lattice = np.stack([s.lattice for s in seeds])
    res = fire_relax_batch(potential, frac=frac, lattice=lattice, cfg=cfg)

    n = seed_spec.n_atoms
    results = []
    for i in range(trials):
        if res["failed"][i] or not res["converged"][i]:
            continue
        results.append(
            RelaxResult(
                structure=PeriodicStructure(seed_spec.species, res["frac"][i], res["lattice"][i]),
                energy_per_atom=float(res["energy"][i]) / n,
                converged=True,
                steps_used=int(res["steps_used"][i]),
                max_force_final=float(res["max_force"][i]),
            )
        )
    if not results:
        return []

    e_min = min(r.energy_per_atom for r in results)
    results = [r for r in results if r.energy_per_atom - e_min <= e_hull_cutoff]
    results.sort(key=lambda r: r.energy_per_atom)

    if matcher is None:
        return results
    kept = []
    for r in results:
        if not any(matcher(r, k) for k in kept):
            kept.append(r)
    return kept
