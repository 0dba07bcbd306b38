"""Noise schedules, wrapped-normal statistics, exact empirical score
fields, and the reverse-time annealed sampler.

The sampler operates on batched block states: a dict mapping block names
to arrays with a leading batch axis. Blocks come in three kinds:

- "torus": variance-exploding noise on fractional/angular coordinates,
  wrapped to [0, 1) after every update (wrapped-normal transition kernel);
- "vp": variance-preserving Gaussian noise (lattices, molecular coords);
- "ve": variance-exploding Gaussian noise without wrapping, used for
  unbounded coordinates and for constant-rate annealed Langevin runs.

Step index runs from 0 (pure noise) to N (clean data).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np


class DivergedError(RuntimeError):
    """Sampling produced a non-finite state."""


# ---------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete noise levels for the reverse chain.

    sigmas has length steps+1 with sigmas[steps] = 0 (clean data end);
    for i < steps the levels decay geometrically from sigma_max to
    sigma_min. betas has length steps, decaying linearly from beta_max at
    the noise end to beta_min; alpha_bar[i] = prod_{k>=i} (1 - betas[k])
    with alpha_bar[steps] = 1.
    """

    steps: int = 1000
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    sigmas: np.ndarray = field(default=None, repr=False)
    betas: np.ndarray = field(default=None, repr=False)
    alpha_bar: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.sigmas is None:
            sig = np.zeros(self.steps + 1)
            sig[: self.steps] = np.geomspace(self.sigma_max, self.sigma_min, self.steps)
            object.__setattr__(self, "sigmas", sig)
        if self.betas is None:
            object.__setattr__(self, "betas", np.linspace(self.beta_max, self.beta_min, self.steps))
        if self.alpha_bar is None:
            ab = np.ones(self.steps + 1)
            ab[: self.steps] = np.cumprod((1.0 - self.betas)[::-1])[::-1]
            object.__setattr__(self, "alpha_bar", ab)
        self.sigmas.setflags(write=False)
        self.betas.setflags(write=False)
        self.alpha_bar.setflags(write=False)

    @classmethod
    def langevin(cls, steps: int, step_sigma: float) -> "NoiseSchedule":
        """Constant-rate annealed schedule: sigma_i^2 = (steps - i) * c so
        every reverse step injects the same noise variance step_sigma^2.
        Used for unadjusted Langevin stationarity runs."""
        sig = np.sqrt(np.arange(steps, -1, -1, dtype=float)) * step_sigma
        return cls(
            steps=steps,
            sigma_min=float(step_sigma),
            sigma_max=float(sig[0]),
            sigmas=sig,
        )


# ---------------------------------------------------------------------------
# Wrapped normal on the unit torus


def _wrap_offsets(sigma: float, K: Optional[int] = None) -> np.ndarray:
    if K is None:
        K = min(int(np.ceil(6.0 * sigma)) + 1, 40)
    return np.arange(-K, K + 1, dtype=float)


def wrapped_normal_log_density(x, mu, sigma, K: Optional[int] = None):
    """log of the wrapped normal density on [0, 1), elementwise.

    The sum over periodic images is truncated at K terms per side;
    by default K = ceil(6 sigma) + 1 capped at 40, enough for 1e-12
    absolute accuracy at the sigmas used here.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = x - mu
    d = d - np.round(d)
    ks = _wrap_offsets(sigma, K)
    z = (d[..., None] + ks) / sigma
    log_terms = -0.5 * z * z - 0.5 * np.log(2.0 * np.pi) - np.log(sigma)
    m = log_terms.max(axis=-1)
    return m + np.log(np.exp(log_terms - m[..., None]).sum(axis=-1))


def wrapped_normal_score(x, mu, sigma, K: Optional[int] = None):
    """d/dx log p_wn(x; mu, sigma): ratio of truncated weighted sums,
    not numeric differentiation."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = x - mu
    d = d - np.round(d)
    ks = _wrap_offsets(sigma, K)
    z = (d[..., None] + ks) / sigma
    log_terms = -0.5 * z * z
    m = log_terms.max(axis=-1)
    w = np.exp(log_terms - m[..., None])
    num = (w * (-(d[..., None] + ks) / (sigma * sigma))).sum(axis=-1)
    return num / w.sum(axis=-1)


# ---------------------------------------------------------------------------
# Block spaces and empirical score fields


@dataclass(frozen=True)
class BlockSpec:
    """One named coordinate block of the state.

    shape is the per-sample shape; kind selects the noise process; scale
    multiplies the noise std for vp/ve blocks (e.g. the lattice noise
    scale 2 n^{1/3}).
    """

    name: str
    shape: Tuple[int, ...]
    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("torus", "vp", "ve"):
            raise ValueError("kind must be torus, vp or ve")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def lattice_noise_scale(n_atoms: int, coeff: float = 2.0) -> float:
    """Noise std for lattice entries, growing with system size."""
    return coeff * float(n_atoms) ** (1.0 / 3.0)


class ScoreField:
    """Exact score of a finite mixture smoothed by the forward process.

    Each training point contributes one mixture component; at step i the
    component for a torus block is a wrapped normal with std sigma_i, for
    a vp block a Gaussian N(sqrt(alpha_bar_i) mu, (1-alpha_bar_i) scale^2),
    for a ve block a Gaussian N(mu, sigma_i^2 scale^2). Works on batched
    states; this stands in for a trained score model, and is exact rather
    than learned.
    """

    def __init__(self, space: Sequence[BlockSpec], means: Dict[str, np.ndarray],
                 schedule: NoiseSchedule, weights=None):
        self.space = tuple(space)
        names = [b.name for b in self.space]
        if sorted(means) != sorted(names):
            raise ValueError("means must have one entry per block")
        sizes = {means[k].shape[0] for k in means}
        if len(sizes) != 1:
            raise ValueError("inconsistent component counts across blocks")
        self.n_components = sizes.pop()
        if self.n_components < 1:
            raise ValueError("need at least one component")
        self.means = {k: np.array(v, dtype=float) for k, v in means.items()}
        for b in self.space:
            if self.means[b.name].shape[1:] != b.shape:
                raise ValueError("mean shape mismatch for block %r" % b.name)
        self.schedule = schedule
        if weights is None:
            weights = np.full(self.n_components, 1.0 / self.n_components)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n_components,) or (weights < 0).any():
            raise ValueError("bad component weights")
        self.log_weights = np.log(weights / weights.sum())

    def _component_stats(self, block: BlockSpec, i: int):
        """(mean array (M, *shape), std or None). None std marks torus."""
        mu = self.means[block.name]
        if block.kind == "torus":
            return mu, None
        if block.kind == "vp":
            ab = self.schedule.alpha_bar[i]
            std = np.sqrt(max(1.0 - ab, 0.0)) * block.scale
            return np.sqrt(ab) * mu, std
        std = self.schedule.sigmas[i] * block.scale
        return mu, std

    def log_responsibilities(self, state: Dict[str, np.ndarray], i: int) -> np.ndarray:
        """(B, M) log posterior over components given the state at step i."""
        B = next(iter(state.values())).shape[0]
        ll = np.tile(self.log_weights, (B, 1))
        sigma_i = self.schedule.sigmas[i]
        for b in self.space:
            x = np.asarray(state[b.name], dtype=float).reshape(B, 1, -1)
            mu, std = self._component_stats(b, i)
            mu = mu.reshape(1, self.n_components, -1)
            if std is None:
                ll += wrapped_normal_log_density(x, mu, sigma_i).sum(axis=-1)
            else:
                z = (x - mu) / std
                ll += (-0.5 * z * z - 0.5 * np.log(2.0 * np.pi) - np.log(std)).sum(axis=-1)
        ll -= ll.max(axis=1, keepdims=True)
        ll -= np.log(np.exp(ll).sum(axis=1, keepdims=True))
        return ll

    def score(self, state: Dict[str, np.ndarray], i: int) -> Dict[str, np.ndarray]:
        """Gradients of log p_i with respect to every block, batched."""
        if not (0 <= i < self.schedule.steps):
            raise ValueError("step index out of range")
        resp = np.exp(self.log_responsibilities(state, i))  # (B, M)
        sigma_i = self.schedule.sigmas[i]
        out = {}
        for b in self.space:
            x = np.asarray(state[b.name], dtype=float)
            B = x.shape[0]
            xf = x.reshape(B, 1, -1)
            mu, std = self._component_stats(b, i)
            mu = mu.reshape(1, self.n_components, -1)
            if std is None:
                comp = wrapped_normal_score(xf, mu, sigma_i)
            else:
                comp = (mu - xf) / (std * std)
            out[b.name] = (resp[:, :, None] * comp).sum(axis=1).reshape(x.shape)
        return out


def score_field_from_structures(structures, schedule: NoiseSchedule,
                                lattice_coeff: float = 2.0, weights=None) -> ScoreField:
    """Build an exact empirical score field from reference structures.

    Periodic structures map to a torus block "frac" and a vp block
    "lattice" with size-dependent noise scale; non-periodic ones to a
    single vp block "coords".
    """
    if not structures:
        raise ValueError("need at least one structure")
    first = structures[0]
    periodic = hasattr(first, "lattice")
    n = len(first.species)
    for s in structures:
        if len(s.species) != n or hasattr(s, "lattice") != periodic:
            raise ValueError("training structures must share type and size")
    if periodic:
        space = (
            BlockSpec("frac", (n, 3), "torus"),
            BlockSpec("lattice", (3, 3), "vp", scale=lattice_noise_scale(n, lattice_coeff)),
        )
        means = {
            "frac": np.stack([s.frac for s in structures]),
            "lattice": np.stack([s.lattice for s in structures]),
        }
    else:
        space = (BlockSpec("coords", (n, 3), "vp"),)
        means = {"coords": np.stack([s.coords for s in structures])}
    return ScoreField(space, means, schedule, weights=weights)


# ---------------------------------------------------------------------------
# Forward corruption (one-shot, for tests and priors)


def forward_noise(state: Dict[str, np.ndarray], space: Sequence[BlockSpec],
                  schedule: NoiseSchedule, i: int, rng: np.random.Generator):
    """Sample the forward transition kernel q(state_i | state_N) blockwise."""
    out = {}
    sigma_i = schedule.sigmas[i]
    ab = schedule.alpha_bar[i]
    for b in space:
        x = np.asarray(state[b.name], dtype=float)
        eps = rng.standard_normal(x.shape)
        if b.kind == "torus":
            y = x + sigma_i * eps
            out[b.name] = y - np.floor(y)
        elif b.kind == "vp":
            out[b.name] = np.sqrt(ab) * x + np.sqrt(max(1.0 - ab, 0.0)) * b.scale * eps
        else:
            out[b.name] = x + sigma_i * b.scale * eps
    return out


def sample_prior(space: Sequence[BlockSpec], schedule: NoiseSchedule,
                 batch: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Draw the step-0 reference state: uniform on torus blocks, the
    stationary Gaussian on vp blocks, N(0, sigma_0^2 scale^2) on ve."""
    out = {}
    for b in space:
        shape = (batch,) + b.shape
        if b.kind == "torus":
            out[b.name] = rng.random(shape)
        elif b.kind == "vp":
            out[b.name] = b.scale * rng.standard_normal(shape)
        else:
            out[b.name] = schedule.sigmas[0] * b.scale * rng.standard_normal(shape)
    return out


# ---------------------------------------------------------------------------
# Reverse sampler


def sample_chains(
    space: Sequence[BlockSpec],
    schedule: NoiseSchedule,
    score_fn: Callable[[Dict[str, np.ndarray], int], Dict[str, np.ndarray]],
    batch: int,
    rng: np.random.Generator,
    init_state: Optional[Dict[str, np.ndarray]] = None,
    noise_scale: float = 1.0,
    denoise_last: bool = True,
    record_trajectory: bool = False,
    start_step: int = 0,
    stop_step: Optional[int] = None,
):
    """Run the reverse update from pure noise (step 0) toward data (step N).

    Per step, torus/ve blocks take an annealed Langevin move with variance
    increment g^2 = sigma_i^2 - sigma_{i+1}^2 and vp blocks the standard
    reverse of the variance-preserving chain. The final step omits noise
    when denoise_last is set. Noise draws happen for every block every
    step in space order, so two runs sharing an rng state and schedule
    see identical randomness regardless of the score function.

    Returns (final_state, failed_mask) or, with record_trajectory, a third
    element listing the state after every step.
    """
    N = schedule.steps
    stop = N if stop_step is None else stop_step
    if not (0 <= start_step < stop <= N):
        raise ValueError("bad step range")
    if init_state is None:
        if start_step != 0:
            raise ValueError("init_state required when start_step > 0")
        state = sample_prior(space, schedule, batch, rng)
    else:
        state = {k: np.array(v, dtype=float) for k, v in init_state.items()}
    failed = np.zeros(batch, dtype=bool)
    traj = []

    for i in range(start_step, stop):
        sc = score_fn(state, i)
        last = denoise_last and (i == N - 1)
        noisy = (noise_scale != 0.0) and not last
        new = {}
        for b in space:
            x = state[b.name]
            eps = rng.standard_normal(x.shape) if noisy else 0.0
            if b.kind == "vp":
                g2 = schedule.betas[i] * b.scale * b.scale
                drift = -0.5 * schedule.betas[i] * x
                x = x - (drift - g2 * sc[b.name])
                if noisy:
                    x = x + noise_scale * np.sqrt(g2) * eps
            else:
                g2 = schedule.sigmas[i] ** 2 - schedule.sigmas[i + 1] ** 2
                g2 *= b.scale * b.scale
                x = x + g2 * sc[b.name]
                if noisy:
                    x = x + noise_scale * np.sqrt(g2) * eps
                if b.kind == "torus":
                    x = x - np.floor(x)
            new[b.name] = x
        state = new
        for b in space:
            failed |= ~np.isfinite(state[b.name].reshape(batch, -1)).all(axis=1)
        if record_trajectory:
            traj.append({k: v.copy() for k, v in state.items()})

    if record_trajectory:
        return state, failed, traj
    return state, failed


def reverse_sample(field: ScoreField, rng: np.random.Generator,
                   noise_scale: float = 1.0, record_trajectory: bool = False):
    """Single-chain reverse diffusion under an empirical score field.

    Raises DivergedError if the state leaves the finite domain.
    """
    out = sample_chains(field.space, field.schedule, field.score, 1, rng,
                        noise_scale=noise_scale, record_trajectory=record_trajectory)
    if record_trajectory:
        state, failed, traj = out
    else:
        state, failed = out
    if failed[0]:
        raise DivergedError("non-finite state during reverse sampling")
    final = {k: v[0] for k, v in state.items()}
    if record_trajectory:
        return final, [{k: v[0] for k, v in t.items()} for t in traj]
    return final
