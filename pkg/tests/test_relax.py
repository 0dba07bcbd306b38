"""Tests for FIRE relaxation and the random-search campaign."""

import numpy as np
import pytest

from structsearch.potentials import LennardJones
from structsearch.relax import (
    RelaxConfig,
    fire_relax,
    fire_relax_batch,
    rss_campaign,
    steepest_descent_step,
)
from structsearch.structures import (
    NonPeriodicStructure,
    PeriodicStructure,
    SeedSpec,
    random_seed_structure,
)


def test_relax_config_validation():
    with pytest.raises(ValueError):
        RelaxConfig(f_max=0.0)
    with pytest.raises(ValueError):
        RelaxConfig(max_steps=0)
    with pytest.raises(ValueError):
        RelaxConfig(dt_initial=0.5, dt_max=0.2)


def test_fire_converges_dimer_to_minimum():
    pot = LennardJones(epsilon=0.2, sigma=2.2, shift=False)
    s = NonPeriodicStructure(("A", "A"), np.array([[0.0, 0.0, 0.0],
                                                   [2.9, 0.0, 0.0]]))
    res = fire_relax(s, pot, RelaxConfig(f_max=1e-4))
    assert res.converged
    assert res.max_force_final <= 1e-4
    r = np.linalg.norm(res.structure.coords[1] - res.structure.coords[0])
    assert r == pytest.approx(2.2 * 2 ** (1 / 6), abs=1e-3)
    assert res.energy_per_atom == pytest.approx(-0.1, abs=1e-6)


def test_fire_periodic_reaches_force_tolerance():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    spec = SeedSpec(composition={"A": 4}, volume_per_atom_range=(12.0, 25.0),
                    min_separation=1.9, rng_seed=3)
    s = random_seed_structure(spec, 0)
    res = fire_relax(s, pot, RelaxConfig(f_max=0.01, max_steps=1000))
    assert res.converged
    assert res.max_force_final <= 0.01
    assert res.steps_used <= 1000
    assert np.isfinite(res.energy_per_atom)


def test_fire_batch_matches_single():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    spec = SeedSpec(composition={"A": 4}, rng_seed=5)
    seeds = [random_seed_structure(spec, i) for i in range(3)]
    cfg = RelaxConfig(f_max=0.01)
    batch = fire_relax_batch(
        pot,
        frac=np.stack([s.frac for s in seeds]),
        lattice=np.stack([s.lattice for s in seeds]),
        cfg=cfg,
    )
    for i, s in enumerate(seeds):
        single = fire_relax(s, pot, cfg)
        assert batch["energy"][i] / 4 == pytest.approx(single.energy_per_atom,
                                                       rel=1e-12, abs=1e-12)
        assert bool(batch["converged"][i]) == single.converged


def test_steepest_descent_lowers_energy():
    pot = LennardJones(epsilon=0.2, sigma=2.2, shift=False)
    s = NonPeriodicStructure(("A", "A"), np.array([[0.0, 0.0, 0.0],
                                                   [2.9, 0.0, 0.0]]))
    e0 = pot.evaluate(s).energy
    s1 = steepest_descent_step(s, pot, 0.05)
    assert pot.evaluate(s1).energy < e0
    with pytest.raises(ValueError):
        steepest_descent_step(s, pot, 0.0)


def _campaign(seed=7, trials=24, **kwargs):
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    spec = SeedSpec(composition={"A": 4}, volume_per_atom_range=(12.0, 25.0),
                    min_separation=1.9, rng_seed=seed)
    return rss_campaign(spec, pot, trials=trials, **kwargs)


def test_rss_campaign_deterministic():
    a = _campaign()
    b = _campaign()
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.energy_per_atom == rb.energy_per_atom
        assert np.array_equal(ra.structure.frac, rb.structure.frac)
        assert np.array_equal(ra.structure.lattice, rb.structure.lattice)


def test_rss_campaign_filters_and_sorting():
    results = _campaign(cfg=RelaxConfig(f_max=0.01, max_steps=1000))
    assert results
    energies = [r.energy_per_atom for r in results]
    assert energies == sorted(energies)
    e_min = energies[0]
    for r in results:
        assert r.converged
        assert r.max_force_final <= 0.01
        assert r.steps_used <= 1000
        assert r.energy_per_atom - e_min <= 1.0


def test_rss_campaign_dedup_shrinks_output():
    from structsearch.evaluate import MatcherConfig, structures_match

    cfg = MatcherConfig(cutoff=6.6)
    plain = _campaign(trials=32)
    deduped = _campaign(trials=32,
                        matcher=lambda a, b: structures_match(a, b, cfg))
    assert len(deduped) <= len(plain)
    for i in range(len(deduped)):
        for j in range(i + 1, len(deduped)):
            assert not structures_match(deduped[i], deduped[j], cfg)


def test_rss_campaign_rejects_bad_trials():
    with pytest.raises(ValueError):
        _campaign(trials=0)
