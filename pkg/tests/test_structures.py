import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structsearch.structures import (
    PeriodicStructure,
    SeedSpec,
    ValidationError,
    lattice_from_parameters,
    min_periodic_distance,
    random_seed_structure,
    record_to_structure,
    reduce_cell,
    structure_to_record,
    to_cartesian,
    wrap_fractional,
)


def test_wrap_fractional_range():
    frac = np.array([[1.25, -0.25, 3.0], [0.0, 0.999, -7.5]])
    w = wrap_fractional(frac)
    assert np.all(w >= 0.0) and np.all(w < 1.0)
    assert np.allclose(w[0], [0.25, 0.75, 0.0])


def test_periodic_structure_validation():
    lat = 4.0 * np.eye(3)
    with pytest.raises(ValidationError):
        PeriodicStructure(("A",), np.zeros((1, 2)), lat)
    with pytest.raises(ValidationError):
        PeriodicStructure(("A", "B"), np.zeros((1, 3)), lat)
    with pytest.raises(ValidationError):
        PeriodicStructure(("A",), np.zeros((1, 3)), -lat)
    with pytest.raises(ValidationError):
        PeriodicStructure(("A",), np.full((1, 3), np.nan), lat)


def test_lattice_from_parameters_orthorhombic():
    lat = lattice_from_parameters(2.0, 3.0, 4.0, 90.0, 90.0, 90.0)
    assert np.allclose(np.abs(np.linalg.det(lat)), 24.0)
    assert np.allclose(lat @ lat.T, np.diag([4.0, 9.0, 16.0]), atol=1e-10)


def test_min_periodic_distance_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lat = 4.0 * np.eye(3) + rng.normal(0, 1.2, (3, 3))
        if np.linalg.det(lat) < 8.0:
            continue
        frac = rng.uniform(0, 1, (3, 3))
        s = PeriodicStructure(("A",) * 3, frac, lat)
        d = min_periodic_distance(s, 0, 1)
        cart = to_cartesian(s)
        best = np.inf
        for i in range(-4, 5):
            for j in range(-4, 5):
                for k in range(-4, 5):
                    shift = np.array([i, j, k], dtype=float) @ lat
                    best = min(best, np.linalg.norm(cart[1] + shift - cart[0]))
        assert d == pytest.approx(best, rel=1e-10)


def test_random_seed_structure_deterministic_and_separated():
    spec = SeedSpec(composition={"A": 6}, min_separation=1.8, rng_seed=11)
    a = random_seed_structure(spec, 4)
    b = random_seed_structure(spec, 4)
    assert np.array_equal(a.frac, b.frac)
    assert np.array_equal(a.lattice, b.lattice)
    for j in range(a.n_atoms):
        for k in range(j, a.n_atoms):
            assert min_periodic_distance(a, j, k) >= spec.min_separation - 1e-9


def test_record_round_trip():
    spec = SeedSpec(composition={"A": 4}, rng_seed=0)
    s = random_seed_structure(spec, 0)
    rec = structure_to_record(s, energy_per_atom=-1.25, meta={"tag": 3})
    rec2 = json.loads(json.dumps(rec))
    s2, e, meta = record_to_structure(rec2)
    assert np.array_equal(s.frac, s2.frac)
    assert np.array_equal(s.lattice, s2.lattice)
    assert e == -1.25 and meta == {"tag": 3}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_reduce_cell_preserves_crystal(seed):
    rng = np.random.default_rng(seed)
    lat = 4.0 * np.eye(3) + rng.normal(0, 1.0, (3, 3))
    if np.linalg.det(lat) < 10.0:
        lat = 4.0 * np.eye(3)
    shear = np.eye(3)
    shear[0] += rng.integers(-3, 4) * shear[1]
    shear[2] += rng.integers(-3, 4) * shear[0]
    s = PeriodicStructure(("A",) * 3, rng.uniform(0, 1, (3, 3)), shear @ lat)
    r = reduce_cell(s)
    assert r.volume == pytest.approx(s.volume, rel=1e-9)
    # the reduced basis should never be longer than what it replaced
    assert np.linalg.norm(r.lattice, axis=1).max() \
        <= np.linalg.norm(s.lattice, axis=1).max() + 1e-9
