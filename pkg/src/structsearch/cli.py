"""Command line entry points: sample, reference, evaluate, experiment.

Every command is deterministic given its config and seed; nothing here
reads the clock or OS entropy, so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import os
import sys

import click
import numpy as np
import yaml

from .diffusion import NoiseSchedule, sample_chains
from .evaluate import (
    MatcherConfig,
    boltzmann_grid,
    budget_to_solve,
    build_references,
    load_records,
    load_references,
    mode_counts,
    save_records,
    save_references,
    structures_match,
    summarize_campaign,
    write_boltzmann_csv,
    write_metrics_csv,
    write_mode_counts_csv,
)
from .gss import GuidanceConfig, batch_campaign, gss_sample_chains
from .potentials import (
    LennardJones,
    finite_difference_oracle,
    frac_gradient,
    lattice_gradient_from_total_stress,
    lattice_gradient_from_virial,
    virial_to_total_stress,
)
from .relax import RelaxConfig
from .structures import SeedSpec, random_seed_structure
from .systems import SYSTEM_NAMES, get_system, score_field_for

CONFIG_VERSION = 1
SUITES = ("pareto_toy", "budget_toy", "torsion_fig4", "gradient_checks",
          "limit_checks")

_SCHEDULE_KEYS = ("steps", "sigma_min", "sigma_max", "beta_min", "beta_max")
_GUIDANCE_KEYS = ("t_mid", "t_scale", "lam", "t_ref", "force_clip",
                  "alpha_override", "anchor_end", "noise_scale")
_TOP_KEYS = ("version", "system", "method", "trials", "seed", "out",
             "schedule", "guidance", "final_relax", "threshold")


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise click.ClickException(f"{path}: config must be a mapping")
    if "version" not in cfg:
        raise click.ClickException(f"{path}: missing required key 'version'")
    if cfg["version"] != CONFIG_VERSION:
        raise click.ClickException(
            f"{path}: unsupported config version {cfg['version']!r}")
    for key in cfg:
        if key not in _TOP_KEYS:
            raise click.ClickException(f"{path}: unknown config key '{key}'")
    for section, allowed in (("schedule", _SCHEDULE_KEYS),
                             ("guidance", _GUIDANCE_KEYS)):
        for key in cfg.get(section) or {}:
            if key not in allowed:
                raise click.ClickException(
                    f"{path}: unknown {section} key '{key}'")
    return cfg


def _merge(cfg, **flags):
    out = dict(cfg)
    for key, val in flags.items():
        if val is not None:
            out[key] = val
    return out


def _schedule_from(cfg):
    overrides = cfg.get("schedule") or {}
    return NoiseSchedule(**overrides) if overrides else NoiseSchedule()


def _guidance_from(cfg):
    overrides = cfg.get("guidance") or {}
    return GuidanceConfig(**overrides) if overrides else GuidanceConfig()


def _resolve_system(cfg):
    name = cfg.get("system")
    if name is None:
        raise click.ClickException("a system is required (--system or config)")
    if name not in SYSTEM_NAMES:
        raise click.ClickException(
            f"unknown system '{name}' (choose from {', '.join(SYSTEM_NAMES)})")
    return get_system(name)


def _references_for(system):
    try:
        return load_references(system.name)
    except FileNotFoundError:
        return None


@click.group()
def main():
    """Structure search over toy potentials: random search, diffusion
    sampling, and guided sampling, with a shared evaluation harness."""


@main.command()
@click.option("--system", type=str, default=None)
@click.option("--method", type=click.Choice(["rss", "diffusion", "gss"]),
              default=None)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", type=click.Path(), default=None)
def sample(system, method, trials, seed, config_path, out):
    """Run one search campaign and write its records as JSONL."""
    cfg = _merge(_load_config(config_path), system=system, method=method,
                 trials=trials, seed=seed, out=out)
    sysx = _resolve_system(cfg)
    method = cfg.get("method", "rss")
    trials = int(cfg.get("trials", 128))
    seed = int(cfg.get("seed", 0))
    if trials < 1:
        raise click.ClickException("trials must be >= 1")
    records = batch_campaign(
        method, sysx, trials, seed,
        schedule=_schedule_from(cfg), cfg=_guidance_from(cfg),
        final_relax=bool(cfg.get("final_relax", True)),
        references=_references_for(sysx))
    path = cfg.get("out", f"{sysx.name}_{method}_seed{seed}.jsonl")
    save_records(records, path)
    good = [r.energy_per_atom for r in records if not r.failed]
    n_failed = sum(1 for r in records if r.failed)
    mean_e = float(np.mean(good)) if good else float("nan")
    click.echo(f"{path}: {len(records)} records, mean energy "
               f"{mean_e:.4f} eV/atom, {n_failed} failed")


@main.command()
@click.option("--system", type=str, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", type=click.Path(), default=None)
def reference(system, trials, seed, config_path, out):
    """Build an oracle reference set by exhaustive random search."""
    cfg = _merge(_load_config(config_path), system=system, trials=trials,
                 seed=seed, out=out)
    sysx = _resolve_system(cfg)
    trials = int(cfg.get("trials", 8192))
    seed = int(cfg.get("seed", 12345))
    try:
        refs = build_references(sysx, trials=trials, seed=seed)
    except RuntimeError as exc:
        raise click.ClickException(str(exc))
    path = cfg.get("out", f"{sysx.name}_references.jsonl")
    save_references(refs, path)
    click.echo(f"{path}: {len(refs)} references, lowest "
               f"{refs[0][1]:.4f} eV/atom")


@main.command()
@click.option("--samples", "samples_path", type=click.Path(exists=True),
              required=True)
@click.option("--references", "references_path", type=str, required=True)
@click.option("--system", type=str, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", type=click.Path(), default=None)
def evaluate(samples_path, references_path, system, config_path, out):
    """Score a sample file against a reference set; write a metrics CSV."""
    cfg = _merge(_load_config(config_path), system=system, out=out)
    records = load_records(samples_path)
    refs = load_references(references_path)
    if not refs:
        raise click.ClickException(f"{references_path}: empty reference set")
    comp = {tuple(sorted(r.structure.species))
            for r in records if r.structure is not None}
    ref_comp = {tuple(sorted(s.species)) for s, _ in refs}
    if comp and comp != ref_comp:
        raise click.ClickException(
            "composition mismatch between samples and references")
    name = cfg.get("system") or (records[0].method and
                                 os.path.basename(samples_path).split("_")[0])
    method = records[0].method if records else "unknown"
    seed = records[0].root_seed if records else 0
    threshold = float(cfg.get("threshold", 0.1))
    summary = summarize_campaign(name, method, seed, records, refs,
                                 threshold=threshold)
    path = cfg.get("out", "metrics.csv")
    write_metrics_csv([summary], path)
    click.echo(f"{path}: coverage {summary.coverage:.3f}, "
               f"low-energy fraction {summary.low_energy_fraction:.3f}")


@main.command()
@click.argument("suite", type=click.Choice(SUITES))
@click.option("--seed", type=int, default=0, show_default=True,
              help="Base root seed for the suite's campaigns.")
@click.option("--trials", type=int, default=None,
              help="Override the suite's per-campaign trial count.")
@click.option("--out", type=click.Path(), default=None,
              help="Output directory (default: the suite name).")
def experiment(suite, seed, trials, out):
    """Run a pre-registered experiment suite and write its artifacts."""
    outdir = out or suite
    os.makedirs(outdir, exist_ok=True)
    runner = {"pareto_toy": _run_pareto_toy,
              "budget_toy": _run_budget_toy,
              "torsion_fig4": _run_torsion_fig4,
              "gradient_checks": _run_gradient_checks,
              "limit_checks": _run_limit_checks}[suite]
    try:
        lines = runner(outdir, seed, trials)
    except Exception as exc:
        raise click.ClickException(f"{suite} failed: {exc}")
    for line in lines:
        click.echo(line)


def _run_pareto_toy(outdir, base_seed, trials):
    trials = trials or 1024
    rows, lines = [], []
    for name in ("lj4", "lj8"):
        sysx = get_system(name)
        refs = load_references(name)
        medians = {}
        for method in ("rss", "diffusion", "gss"):
            covs, lefs = [], []
            for k in range(3):
                records = batch_campaign(method, sysx, trials, base_seed + k,
                                         references=refs)
                s = summarize_campaign(name, method, base_seed + k, records,
                                       refs)
                rows.append(s)
                covs.append(s.coverage)
                lefs.append(s.low_energy_fraction)
            medians[method] = (float(np.median(covs)), float(np.median(lefs)))
        lines.append(
            f"{name}: coverage gss {medians['gss'][0]:.3f} vs diffusion "
            f"{medians['diffusion'][0]:.3f}; low-energy fraction gss "
            f"{medians['gss'][1]:.3f} vs rss {medians['rss'][1]:.3f}")
    write_metrics_csv(rows, os.path.join(outdir, "metrics.csv"))
    return lines


def _run_budget_toy(outdir, base_seed, trials):
    trials = trials or 256
    rows, lines = [], []
    for name in ("lj4", "lj8"):
        sysx = get_system(name)
        refs = load_references(name)
        e_min = min(e for _, e in refs)
        targets = [r for r in refs if r[1] <= e_min + 0.05]
        medians = {}
        for method in ("gss", "rss"):
            budgets = []
            for k in range(5):
                records = batch_campaign(method, sysx, trials, base_seed + k,
                                         references=refs)
                s = summarize_campaign(name, method, base_seed + k, records,
                                       targets)
                rows.append(s)
                budgets.append(s.budget_cost)
            medians[method] = float(np.median(budgets))
        lines.append(f"{name}: median budget gss {medians['gss']:.2f} vs "
                     f"rss {medians['rss']:.2f}")
    write_metrics_csv(rows, os.path.join(outdir, "metrics.csv"))
    return lines


def _run_torsion_fig4(outdir, base_seed, trials):
    trials = trials or 1024
    sysx = get_system("torsion")
    schedule = NoiseSchedule()
    field = score_field_for(sysx, schedule)
    write_boltzmann_csv(*boltzmann_grid(sysx.model, 400.0),
                        path=os.path.join(outdir, "boltzmann.csv"))
    lines = []
    for method in ("diffusion", "gss"):
        covered = 0
        for k in range(5):
            rng = np.random.default_rng(
                np.random.SeedSequence(base_seed + k))
            if method == "diffusion":
                state, _ = sample_chains(field.space, schedule, field.score,
                                         trials, rng)
            else:
                state, _ = gss_sample_chains(field, sysx.grad_fn, trials, rng,
                                             GuidanceConfig())
            state, _, _, _, _, _ = sysx.relax_states(state, RelaxConfig())
            angles = sysx.angles_of(state)
            counts = mode_counts([tuple(a) for a in angles], sysx.modes)
            write_mode_counts_csv(
                counts,
                os.path.join(outdir, f"mode_counts_{method}_seed{k}.csv"))
            if all(counts.get(m, 0) > 0 for m in range(len(sysx.modes))):
                covered += 1
        lines.append(f"{method}: all 4 modes covered in {covered}/5 seeds")
    return lines


def _run_gradient_checks(outdir, base_seed, trials):
    n_configs = trials or 50
    rng_master = np.random.SeedSequence(base_seed)
    potential = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    rows = []
    worst_frac = worst_lat = worst_cross = 0.0
    for idx in range(n_configs):
        n = 4 + idx % 9
        spec = SeedSpec(composition={"A": n},
                        volume_per_atom_range=(12.0, 30.0),
                        min_separation=1.9,
                        rng_seed=base_seed + 1000 + idx)
        s = random_seed_structure(spec, 0)
        report = potential.evaluate(s)
        fd = finite_difference_oracle(potential, s)
        gf = frac_gradient(s, report)
        gl = lattice_gradient_from_virial(s, report.virial_stress)
        rel_f = np.abs(gf - fd.grad_frac).max() / max(np.abs(fd.grad_frac).max(), 1e-12)
        rel_l = np.abs(gl - fd.grad_lattice).max() / max(np.abs(fd.grad_lattice).max(), 1e-12)
        total = virial_to_total_stress(s, report)
        gl2 = lattice_gradient_from_total_stress(s, total, report.forces_cart)
        cross = np.abs(gl - gl2).max()
        rows.append((idx, n, rel_f, rel_l, cross))
        worst_frac = max(worst_frac, rel_f)
        worst_lat = max(worst_lat, rel_l)
        worst_cross = max(worst_cross, cross)
    with open(os.path.join(outdir, "gradient_checks.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "n_atoms", "rel_err_frac", "rel_err_lattice",
                    "stress_cross_check"])
        for row in rows:
            w.writerow([row[0], row[1], repr(float(row[2])),
                        repr(float(row[3])), repr(float(row[4]))])
    ok = worst_frac <= 1e-6 and worst_lat <= 1e-6 and worst_cross <= 1e-10
    line = (f"max rel. err {max(worst_frac, worst_lat):.3e} "
            f"(cross-check {worst_cross:.3e}) over {n_configs} configs")
    if not ok:
        raise RuntimeError(line)
    return [line]


def _run_limit_checks(outdir, base_seed, trials):
    trials = trials or 32
    sysx = get_system("torsion")
    schedule = NoiseSchedule()
    field = score_field_for(sysx, schedule)

    st_diff, _ = sample_chains(field.space, schedule, field.score, trials,
                               np.random.default_rng(base_seed))
    st_gss, _ = gss_sample_chains(field, sysx.grad_fn, trials,
                                  np.random.default_rng(base_seed),
                                  GuidanceConfig(alpha_override=1.0))
    bitwise = all(np.array_equal(st_diff[k], st_gss[k]) for k in st_diff)

    lam = 2.0
    cfg0 = GuidanceConfig(alpha_override=0.0, lam=lam,
                          noise_scale=0.0).resolved(schedule.steps)
    rng = np.random.default_rng(base_seed + 1)
    state = {"angles": rng.uniform(0.0, 1.0, (trials, 2))}
    gss_state = {k: v.copy() for k, v in state.items()}
    sd_state = {k: v.copy() for k, v in state.items()}
    max_step_diff = 0.0
    for i in range(schedule.steps):
        gss_state, _ = gss_sample_chains(
            field, sysx.grad_fn, trials, np.random.default_rng(0), cfg0,
            init_state=gss_state, start_step=i, stop_step=i + 1,
            denoise_last=False)
        g2 = schedule.sigmas[i] ** 2 - schedule.sigmas[i + 1] ** 2
        grad = np.clip(sysx.grad_fn(sd_state)["angles"],
                       -cfg0.force_clip, cfg0.force_clip)
        stepped = sd_state["angles"] - g2 * lam * grad
        sd_state = {"angles": stepped - np.floor(stepped)}
        max_step_diff = max(max_step_diff,
                            float(np.abs(gss_state["angles"]
                                         - sd_state["angles"]).max()))
    descent_ok = max_step_diff <= 1e-10

    with open(os.path.join(outdir, "limit_checks.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "tolerance", "passed"])
        w.writerow(["alpha1_bitwise", 0.0 if bitwise else 1.0, 0.0,
                    str(bitwise).lower()])
        w.writerow(["alpha0_descent", repr(max_step_diff), repr(1e-10),
                    str(descent_ok).lower()])
    if not (bitwise and descent_ok):
        raise RuntimeError(
            f"bitwise={bitwise}, descent max step diff={max_step_diff:.3e}")
    return [f"alpha=1 bitwise match: {bitwise}; alpha=0 descent max step "
            f"diff {max_step_diff:.3e}"]


if __name__ == "__main__":
    main()
