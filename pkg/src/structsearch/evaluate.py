"""Structure matching, campaign metrics, and the torsion-angle
Boltzmann analysis.

Matching is deliberately simple: same composition, energies per atom
within a tolerance, and the same sorted multiset of interatomic
distances (over periodic images for crystals). That is enough to
separate the local minima of the shipped toy systems; it makes no
attempt at symmetry analysis.
"""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .potentials import KB_EV
from .structures import NonPeriodicStructure, PeriodicStructure, reduce_cell


@dataclass(frozen=True)
class MatcherConfig:
    energy_tol: float = 1e-3       # eV/atom
    fingerprint_tol: float = 0.05  # Angstrom, RMS over sorted distance lists
    cutoff: float = 11.0           # Angstrom, pair distance fingerprint range

    def __post_init__(self):
        if min(self.energy_tol, self.fingerprint_tol, self.cutoff) <= 0:
            raise ValueError("matcher tolerances must be positive")


_FINGERPRINT_CACHE = weakref.WeakKeyDictionary()


def _fingerprint_uncached(s, cutoff: float) -> np.ndarray:
    if isinstance(s, NonPeriodicStructure):
        d = np.linalg.norm(s.coords[:, None, :] - s.coords[None, :, :], axis=-1)
        iu = np.triu_indices(len(s.species), k=1)
        return np.sort(d[iu])
    lattice = s.lattice
    inv = np.linalg.inv(lattice)
    nmax = np.floor(np.linalg.norm(inv, axis=0) * cutoff).astype(int) + 1
    grids = np.meshgrid(*(np.arange(-m, m + 1) for m in nmax), indexing="ij")
    shifts = np.stack([g.ravel() for g in grids], axis=1).astype(float)
    # half-space of image vectors, origin excluded: counts each
    # unordered self-image pair once
    half = (
        (shifts[:, 0] > 0)
        | ((shifts[:, 0] == 0) & (shifts[:, 1] > 0))
        | ((shifts[:, 0] == 0) & (shifts[:, 1] == 0) & (shifts[:, 2] > 0))
    )
    cart = s.frac @ lattice
    sh_cart = shifts @ lattice
    n = len(s.species)
    # distinct pairs over all images, self pairs over the half space
    diff = cart[None, :, :] - cart[:, None, :]  # (n, n, 3)
    r = np.linalg.norm(diff[:, :, None, :] + sh_cart[None, None, :, :], axis=-1)
    ij = np.triu_indices(n, k=1)
    vals = [r[ij].ravel(), r[np.arange(n), np.arange(n)][:, half].ravel()]
    v = np.concatenate(vals)
    return np.sort(v[(v > 0) & (v <= cutoff)])


def distance_fingerprint(s, cutoff: float) -> np.ndarray:
    """Sorted multiset of interatomic distances up to `cutoff`.

    Periodic structures count every pair once per periodic image inside
    the cutoff; molecular structures use all pairs regardless of cutoff.
    Invariant to rigid motions, coordinate wrapping, and atom order.
    Cached per structure object: structures are immutable.
    """
    try:
        per_struct = _FINGERPRINT_CACHE.setdefault(s, {})
    except TypeError:
        return _fingerprint_uncached(s, cutoff)
    if cutoff not in per_struct:
        per_struct[cutoff] = _fingerprint_uncached(s, cutoff)
    return per_struct[cutoff]


def _unpack(x):
    """Accept a SearchRecord-like object or a (structure, energy) pair."""
    if hasattr(x, "structure") and hasattr(x, "energy_per_atom"):
        return x.structure, float(x.energy_per_atom)
    s, e = x
    return s, float(e)


def structures_match(a, b, cfg: MatcherConfig = MatcherConfig()) -> bool:
    """Energy + distance-multiset equivalence at the configured tolerances.

    Composition mismatch is an ordinary False, not an error.
    """
    sa, ea = _unpack(a)
    sb, eb = _unpack(b)
    if sa is None or sb is None:
        return False
    if sorted(sa.species) != sorted(sb.species):
        return False
    if abs(ea - eb) > cfg.energy_tol:
        return False
    fa = distance_fingerprint(sa, cfg.cutoff)
    fb = distance_fingerprint(sb, cfg.cutoff)
    if fa.shape != fb.shape:
        return False
    if fa.size == 0:
        return True
    return float(np.sqrt(np.mean((fa - fb) ** 2))) <= cfg.fingerprint_tol


def coverage(samples, references, cfg: MatcherConfig = MatcherConfig()) -> float:
    """Fraction of reference structures matched by at least one sample."""
    if not references:
        raise ValueError("reference set must be non-empty")
    hit = 0
    for r in references:
        if any(structures_match(s, r, cfg) for s in samples):
            hit += 1
    return hit / len(references)


def efficiency(samples, references, threshold: float = 0.1):
    """(mean energy per atom, fraction within `threshold` of the best
    reference energy). Failed samples (nan energy) count against the
    fraction but are excluded from the mean."""
    if not references:
        raise ValueError("reference set must be non-empty")
    e_min = min(_unpack(r)[1] for r in references)
    energies = np.array([_unpack(s)[1] for s in samples], dtype=float)
    ok = np.isfinite(energies)
    mean_e = float(energies[ok].mean()) if ok.any() else float("nan")
    frac = float((energies[ok] <= e_min + threshold).sum()) / max(len(samples), 1)
    return mean_e, frac


def budget_to_solve(records, references, cfg: MatcherConfig = MatcherConfig()) -> float:
    """Trials needed to match every reference, normalized by the
    reference count; math.inf when the stream never covers them all."""
    if not references:
        raise ValueError("reference set must be non-empty")
    remaining = set(range(len(references)))
    for t, rec in enumerate(records, start=1):
        for j in list(remaining):
            if structures_match(rec, references[j], cfg):
                remaining.discard(j)
        if not remaining:
            return t / len(references)
    return math.inf


def solved_fraction_curve(budgets: Sequence[float]):
    """Step curve (budget, fraction of systems solved) from per-system
    budget costs; infinite budgets never contribute a step."""
    finite = sorted(b for b in budgets if math.isfinite(b))
    n = len(budgets)
    if n == 0:
        raise ValueError("need at least one system")
    xs, ys = [], []
    for b in finite:
        xs.append(b)
        ys.append((np.array(finite) <= b).sum() / n)
    return np.array(xs), np.array(ys)


@dataclass(frozen=True)
class EvalSummary:
    system: str
    method: str
    seed: int
    trials: int
    coverage: float
    mean_energy: float
    low_energy_fraction: float
    budget_cost: float
    solved: bool


def summarize_campaign(system, method, seed, records, references,
                       cfg: MatcherConfig = MatcherConfig(),
                       threshold: float = 0.1) -> EvalSummary:
    cov = coverage(records, references, cfg)
    mean_e, frac = efficiency(records, references, threshold)
    budget = budget_to_solve(records, references, cfg)
    return EvalSummary(
        system=system, method=method, seed=seed, trials=len(records),
        coverage=cov, mean_energy=mean_e, low_energy_fraction=frac,
        budget_cost=budget, solved=(cov == 1.0),
    )


# ---------------------------------------------------------------------------
# Torsion-angle analysis


def boltzmann_grid(model, T: float, resolution: int = 64):
    """Normalized Boltzmann weights of the torsion surface on a uniform
    (phi, psi) grid over [-pi, pi). Returns (phi_vals, psi_vals, grid)
    with grid summing to 1."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    if resolution < 16:
        raise ValueError("resolution too coarse")
    vals = np.linspace(-np.pi, np.pi, resolution, endpoint=False)
    pp, qq = np.meshgrid(vals, vals, indexing="ij")
    v = model.energy_angles(pp, qq)
    w = np.exp(-(v - v.min()) / (KB_EV * T))
    return vals, vals, w / w.sum()


def wrapped_angle_distance(a, b):
    """Shortest distance between angles in radians, in [0, pi]."""
    d = np.mod(np.asarray(a) - np.asarray(b) + np.pi, 2.0 * np.pi) - np.pi
    return np.abs(d)


def assign_mode(sample: Tuple[float, float], modes: Sequence[Tuple[float, float]]) -> int:
    """Index of the nearest mode under wrapped angular distance; ties go
    to the lowest index."""
    if not modes:
        raise ValueError("modes must be non-empty")
    phi, psi = sample
    best, best_d = 0, None
    for k, (mp, mq) in enumerate(modes):
        d = float(wrapped_angle_distance(phi, mp) ** 2 + wrapped_angle_distance(psi, mq) ** 2)
        if best_d is None or d < best_d - 1e-15:
            best, best_d = k, d
    return best


def mode_counts(samples: Sequence[Tuple[float, float]], modes) -> Dict[int, int]:
    counts = {k: 0 for k in range(len(modes))}
    for s in samples:
        counts[assign_mode(s, modes)] += 1
    return counts


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return repr(x)
    return str(x)


def write_metrics_csv(rows: Sequence[EvalSummary], path):
    cols = ["system", "method", "seed", "trials", "coverage", "mean_energy",
            "low_energy_fraction", "budget_cost", "solved"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def write_mode_counts_csv(counts: Dict[int, int], path):
    total = sum(counts.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "count", "fraction"])
        for mode in sorted(counts):
            frac = counts[mode] / total if total else 0.0
            w.writerow([mode, counts[mode], _fmt(float(frac))])


def write_boltzmann_csv(phi_vals, psi_vals, grid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phi", "psi", "density"])
        for i, p in enumerate(phi_vals):
            for j, q in enumerate(psi_vals):
                w.writerow([_fmt(float(p)), _fmt(float(q)), _fmt(float(grid[i, j]))])


def build_references(system, trials: int = 8192, seed: int = 12345,
                     stability_window: Optional[float] = None, relax_cfg=None):
    """Oracle reference set for a system: an oversized random-search
    campaign relaxed to tight tolerances, deduplicated, and cut at
    stability_window eV per atom above the best minimum found.

    Returns a list of (structure, energy_per_atom) pairs sorted by
    energy. Deterministic in seed.
    """
    from .gss import batch_campaign
    from .relax import RelaxConfig

    if stability_window is None:
        stability_window = getattr(system, "stability_window", 0.35)
    if relax_cfg is None:
        relax_cfg = RelaxConfig(f_max=1e-3, max_steps=2000)
    records = batch_campaign("rss", system, trials, seed, relax_cfg=relax_cfg)
    ok = sorted((r for r in records if r.converged and not r.failed),
                key=lambda r: r.energy_per_atom)
    if not ok:
        raise RuntimeError("reference campaign produced no converged minima")
    e_min = ok[0].energy_per_atom
    refs = []
    for r in ok:
        if r.energy_per_atom > e_min + stability_window:
            break
        if not any(structures_match(r, ref, system.matcher) for ref in refs):
            s = r.structure
            if isinstance(s, PeriodicStructure):
                s = reduce_cell(s)
            refs.append((s, r.energy_per_atom))
    # Near-degenerate minima come out of the relaxer in arbitrary order;
    # break ties on the distance fingerprint so the list (and therefore
    # the training set drawn from it) is reproducible.
    refs.sort(key=lambda t: (round(t[1], 6),
                             tuple(distance_fingerprint(t[0], system.matcher.cutoff))))
    return refs


def save_references(refs, path):
    from .structures import save_jsonl, structure_to_record

    save_jsonl(path, [structure_to_record(s, energy_per_atom=e)
                      for s, e in refs])


def load_references(name_or_path):
    """Load a reference set, either from an explicit path or from the
    fixtures shipped with the package (keyed by system name)."""
    import os

    from .structures import load_jsonl, record_to_structure

    path = str(name_or_path)
    if not os.path.exists(path):
        path = os.path.join(os.path.dirname(__file__), "data", path + ".jsonl")
    recs = load_jsonl(path)
    return [(record_to_structure(r)[0], float(r["energy_per_atom"]))
            for r in recs]


def save_records(records, path):
    """Persist campaign records as JSONL, one record per line."""
    from .structures import save_jsonl, structure_to_record

    rows = []
    for r in records:
        meta = dict(r.meta)
        meta.update(method=r.method, root_seed=r.root_seed, chain_id=r.chain_id,
                    converged=bool(r.converged), failed=bool(r.failed))
        if r.structure is None:
            rows.append({"species": None, "frac": None, "coords": None,
                         "lattice": None, "energy_per_atom": None, "meta": meta})
        else:
            rows.append(structure_to_record(
                r.structure, energy_per_atom=r.energy_per_atom, meta=meta))
    save_jsonl(path, rows)


def load_records(path):
    """Inverse of save_records; failed records come back with a None
    structure and NaN energy."""
    from .gss import SearchRecord
    from .structures import load_jsonl, record_to_structure

    out = []
    for rec in load_jsonl(path):
        meta = dict(rec.get("meta", {}))
        method = meta.pop("method", "unknown")
        root_seed = meta.pop("root_seed", 0)
        chain_id = meta.pop("chain_id", 0)
        converged = meta.pop("converged", False)
        failed = meta.pop("failed", False)
        if rec.get("species") is None:
            s, e = None, float("nan")
        else:
            s, e, _ = record_to_structure(rec)
            e = float("nan") if e is None else float(e)
        out.append(SearchRecord(structure=s, energy_per_atom=e,
                                converged=converged, failed=failed,
                                method=method, root_seed=root_seed,
                                chain_id=chain_id, meta=meta))
    return out
