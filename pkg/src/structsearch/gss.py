"""Guided sampling: blend the empirical score with a scaled negative
energy gradient inside the same reverse chain the plain sampler uses.

The blend weight follows a sigmoid in the step index. With alpha pinned
at 1 the chain is exactly the unguided sampler; with alpha pinned at 0
and the noise turned off each step is a preconditioned gradient descent
move. Everything in between anneals from score-driven exploration at
high noise to energy-driven refinement near the end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional

import numpy as np

from .diffusion import ScoreField, sample_chains
from .potentials import KB_EV


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs for the guided sampler.

    t_mid / t_scale default to 0.6 N and 0.05 N when left as None.
    anchor_end switches the sigmoid argument from the raw step index to
    its distance from the data end, which keeps the data end of the chain
    energy-dominated; this is the behavior the sampler needs, since the
    raw index convention would hand the final steps to the score term.
    lam scales the energy gradient per block (a float applies to all
    blocks); the default 1/(2 kB T_ref) makes a noise-matched pure-energy
    chain target the Boltzmann density at T_ref kelvin.
    """

    t_mid: Optional[float] = None
    t_scale: Optional[float] = None
    lam: object = None
    t_ref: float = 400.0
    force_clip: float = 50.0
    alpha_override: Optional[float] = None
    anchor_end: bool = True
    noise_scale: float = 1.0

    def resolved(self, steps: int) -> "GuidanceConfig":
        upd = {}
        if self.t_mid is None:
            upd["t_mid"] = 0.6 * steps
        if self.t_scale is None:
            upd["t_scale"] = 0.05 * steps
        if self.lam is None:
            upd["lam"] = 1.0 / (2.0 * KB_EV * self.t_ref)
        return replace(self, **upd) if upd else self

    def lam_for(self, name: str) -> float:
        if isinstance(self.lam, dict):
            return float(self.lam[name])
        return float(self.lam)


def alpha(i: float, cfg: GuidanceConfig) -> float:
    """Sigmoid blend weight at step index i: 1 / (1 + exp((t_mid - i)/t_scale))."""
    if cfg.t_mid is None or cfg.t_scale is None:
        raise ValueError("resolve the config against a schedule first")
    z = (cfg.t_mid - i) / cfg.t_scale
    z = min(max(z, -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(z))


def clip_rows(g: np.ndarray, limit: float) -> np.ndarray:
    """Scale each length-3 row down to at most `limit` in Euclidean norm."""
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    factor = np.where(norms > limit, limit / np.where(norms > 0, norms, 1.0), 1.0)
    return g * factor


def guided_score(
    state: Dict[str, np.ndarray],
    i: int,
    field: ScoreField,
    grad_fn: Callable[[Dict[str, np.ndarray]], Dict[str, np.ndarray]],
    cfg: GuidanceConfig,
) -> Dict[str, np.ndarray]:
    """alpha_i * (empirical score) - (1 - alpha_i) * lam * grad E, per block.

    grad_fn maps a batched state to energy gradients with matching keys
    (already in the sampling coordinates, e.g. fractional gradients for a
    torus block). When alpha_i is exactly 1 the energy term is skipped
    entirely, so no potential evaluations happen.
    """
    N = field.schedule.steps
    cfg = cfg.resolved(N)
    if cfg.alpha_override is not None:
        a = float(cfg.alpha_override)
    else:
        a = alpha(N - i if cfg.anchor_end else i, cfg)
    score = field.score(state, i)
    if a >= 1.0:
        return score
    grads = grad_fn(state)
    out = {}
    for b in field.space:
        lam = cfg.lam_for(b.name)
        if lam == 0.0 and cfg.alpha_override is None:
            # A zero guidance weight marks the block as unguided. Keeping its
            # full score (instead of annealing it toward nothing) preserves the
            # restoring drift of the plain reverse process; otherwise the block
            # would random-walk once alpha decays.
            out[b.name] = score[b.name]
            continue
        g = np.asarray(grads[b.name], dtype=float)
        if g.ndim >= 2 and g.shape[-1] == 3:
            g = clip_rows(g, cfg.force_clip)
        else:
            g = np.clip(g, -cfg.force_clip, cfg.force_clip)
        out[b.name] = a * score[b.name] - (1.0 - a) * lam * g
    return out


def gss_sample_chains(
    field: ScoreField,
    grad_fn,
    batch: int,
    rng: np.random.Generator,
    cfg: GuidanceConfig = GuidanceConfig(),
    **kwargs,
):
    """Batched guided reverse sampling. Same contract as sample_chains."""
    cfg = cfg.resolved(field.schedule.steps)

    def fn(state, i):
        return guided_score(state, i, field, grad_fn, cfg)

    return sample_chains(field.space, field.schedule, fn, batch, rng,
                         noise_scale=cfg.noise_scale, **kwargs)


@dataclass(frozen=True)
class SearchRecord:
    """One finished trial of any search method."""

    structure: object
    energy_per_atom: float
    converged: bool
    failed: bool
    method: str
    root_seed: int
    chain_id: int
    meta: dict


def batch_campaign(
    method: str,
    system,
    trials: int,
    root_seed: int,
    schedule=None,
    cfg: GuidanceConfig = GuidanceConfig(),
    relax_cfg=None,
    final_relax: bool = True,
    references=None,
    training=None,
):
    """Run `trials` independent samples of one method on one system.

    All three methods share the record format so the evaluation layer
    does not care how a structure was produced. Deterministic in
    root_seed. For rss, final_relax is the method itself and is always
    on.
    """
    from .diffusion import NoiseSchedule
    from .relax import RelaxConfig
    from .systems import score_field_for

    if trials < 1:
        raise ValueError("trials must be >= 1")
    if method not in ("rss", "diffusion", "gss"):
        raise ValueError("method must be rss, diffusion or gss")
    if schedule is None:
        schedule = NoiseSchedule()
    if relax_cfg is None:
        relax_cfg = RelaxConfig()
    rng = np.random.default_rng(np.random.SeedSequence(root_seed))
    meta = {"method": method}

    if method == "rss":
        state = system.random_states(trials, root_seed)
        sample_failed = np.zeros(trials, dtype=bool)
        do_relax = True
    else:
        field = score_field_for(system, schedule, references=references, training=training)
        if method == "diffusion":
            state, sample_failed = sample_chains(field.space, schedule, field.score, trials, rng)
        else:
            if cfg.lam is None and hasattr(system, "guidance_lam"):
                cfg = replace(cfg, lam=dict(system.guidance_lam))
            cfg = cfg.resolved(schedule.steps)
            state, sample_failed = gss_sample_chains(field, system.grad_fn, trials, rng, cfg)
            meta["alpha_schedule"] = {"t_mid": cfg.t_mid, "t_scale": cfg.t_scale}
        do_relax = final_relax

    if do_relax:
        state, energy, converged, steps, max_force, relax_failed = \
            system.relax_states(state, relax_cfg)
        failed = sample_failed | relax_failed
    else:
        energy = system.batch_energy(state)
        converged = np.zeros(trials, dtype=bool)
        steps = np.zeros(trials, dtype=int)
        max_force = np.full(trials, np.nan)
        failed = sample_failed | ~np.isfinite(energy)

    structures = system.to_structures(state)
    records = []
    for b in range(trials):
        records.append(
            SearchRecord(
                structure=None if failed[b] else structures[b],
                energy_per_atom=float(energy[b]) if not failed[b] else float("nan"),
                converged=bool(converged[b]) and not failed[b],
                failed=bool(failed[b]),
                method=method,
                root_seed=root_seed,
                chain_id=b,
                meta=dict(meta, steps=int(steps[b]), max_force=float(max_force[b])),
            )
        )
    return records


def gss_sample(field: ScoreField, grad_fn, rng: np.random.Generator,
               cfg: GuidanceConfig = GuidanceConfig(), record_trajectory: bool = False):
    """Single-chain guided sampling; returns the final state dict."""
    out = gss_sample_chains(field, grad_fn, 1, rng, cfg,
                            record_trajectory=record_trajectory)
    if record_trajectory:
        state, failed, traj = out
        return {k: v[0] for k, v in state.items()}, [{k: v[0] for k, v in t.items()} for t in traj]
    state, failed = out
    return {k: v[0] for k, v in state.items()}
