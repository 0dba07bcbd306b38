import numpy as np
import pytest

from structsearch.potentials import (
    KB_EV,
    DoubleWell1D,
    LennardJones,
    OverlapError,
    TorsionModel,
    finite_difference_oracle,
    frac_gradient,
    lattice_gradient_from_total_stress,
    lattice_gradient_from_virial,
    virial_to_total_stress,
)
from structsearch.structures import NonPeriodicStructure, PeriodicStructure


def test_lj_pair_minimum():
    pot = LennardJones(epsilon=0.7, sigma=2.0, cutoff=50.0, shift=False)
    r_min = 2.0 ** (1.0 / 6.0) * 2.0
    assert pot.pair_energy(r_min) == pytest.approx(-0.7, rel=1e-12)
    assert pot.pair_energy(2.0) == pytest.approx(0.0, abs=1e-12)


def test_lj_cluster_dimer_energy():
    pot = LennardJones(epsilon=0.2, sigma=2.2, shift=False)
    r_min = 2.0 ** (1.0 / 6.0) * 2.2
    s = NonPeriodicStructure(("A", "A"),
                             np.array([[0.0, 0.0, 0.0], [r_min, 0.0, 0.0]]))
    rep = pot.evaluate(s)
    assert rep.energy == pytest.approx(-0.2, rel=1e-10)
    assert np.abs(rep.forces_cart).max() < 1e-10


def test_lj_periodic_matches_brute_force():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    rng = np.random.default_rng(5)
    for _ in range(5):
        lat = 4.5 * np.eye(3) + rng.normal(0, 1.0, (3, 3))
        if np.linalg.det(lat) < 30.0:
            continue
        shear = np.eye(3)
        shear[0] += 3.0 * shear[1]
        s = PeriodicStructure(("A",) * 4, rng.uniform(0, 1, (4, 3)),
                              shear @ lat)
        cart = s.frac @ s.lattice
        shift_e = pot.pair_energy(pot.cutoff)
        grid = np.arange(-6, 7)
        ijk = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"),
                       axis=-1).reshape(-1, 3).astype(float)
        shifts = ijk @ s.lattice
        e_ref = 0.0
        for j in range(4):
            for k in range(4):
                d = np.linalg.norm(cart[k] + shifts - cart[j], axis=1)
                if j == k:
                    d = d[np.abs(ijk).sum(axis=1) > 0]
                d = d[d < pot.cutoff]
                e_ref += 0.5 * float((pot.pair_energy(d) - shift_e).sum())
        assert pot.evaluate(s).energy == pytest.approx(e_ref, rel=1e-10,
                                                       abs=1e-10)


def test_lj_overlap_error():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3, floor=0.5)
    s = PeriodicStructure(("A", "A"),
                          np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]),
                          5.0 * np.eye(3))
    with pytest.raises(OverlapError):
        pot.evaluate(s)


def test_gradient_conversions_against_fd():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    rng = np.random.default_rng(7)
    lat = np.array([[4.6, 0.3, -0.2], [0.5, 5.1, 0.1], [-0.4, 0.2, 4.8]])
    s = PeriodicStructure(("A",) * 4,
                          np.array([[0.1, 0.1, 0.1], [0.6, 0.15, 0.2],
                                    [0.2, 0.55, 0.6], [0.7, 0.7, 0.15]]),
                          lat)
    del rng
    rep = pot.evaluate(s)
    fd = finite_difference_oracle(pot, s)
    gf = frac_gradient(s, rep)
    gl = lattice_gradient_from_virial(s, rep.virial_stress)
    assert np.abs(gf - fd.grad_frac).max() <= 1e-6 * np.abs(fd.grad_frac).max()
    assert np.abs(gl - fd.grad_lattice).max() \
        <= 1e-6 * np.abs(fd.grad_lattice).max()


def test_stress_identity_cross_check():
    pot = LennardJones(epsilon=1.0, sigma=2.2, cutoff=3.3)
    s = PeriodicStructure(("A",) * 4,
                          np.array([[0.05, 0.2, 0.1], [0.55, 0.1, 0.25],
                                    [0.25, 0.6, 0.65], [0.75, 0.65, 0.2]]),
                          4.8 * np.eye(3) + 0.3)
    rep = pot.evaluate(s)
    gl = lattice_gradient_from_virial(s, rep.virial_stress)
    total = virial_to_total_stress(s, rep)
    gl2 = lattice_gradient_from_total_stress(s, total, rep.forces_cart)
    assert np.abs(gl - gl2).max() <= 1e-10


def test_torsion_angle_round_trip():
    model = TorsionModel()
    for phi, psi in ((0.4, -1.2), (-2.8, 0.3), (3.0, -3.0)):
        s = model.build_structure(phi, psi)
        p, q = model.angles_from_structure(s)
        assert p == pytest.approx(phi, abs=1e-9)
        assert q == pytest.approx(psi, abs=1e-9)


def test_torsion_forces_match_fd():
    model = TorsionModel()
    s = model.build_structure(0.7, -0.9)
    rep = model.evaluate(s)
    fd = finite_difference_oracle(model, s)
    assert np.abs(rep.forces_cart - fd.forces_cart).max() <= 1e-7


def test_torsion_minima_distinct():
    from structsearch.systems import TORSION_MODE_ENERGIES, TORSION_MODES

    model = TorsionModel()
    for (phi, psi), e_ref in zip(TORSION_MODES, TORSION_MODE_ENERGIES):
        gp, gq = model.grad_angles(phi, psi)
        assert abs(gp) < 1e-8 and abs(gq) < 1e-8
        assert model.energy_angles(phi, psi) == pytest.approx(e_ref, abs=1e-9)
    energies = sorted(TORSION_MODE_ENERGIES)
    assert min(b - a for a, b in zip(energies, energies[1:])) > 0.02


def test_double_well_shape():
    dw = DoubleWell1D(scale=0.05)
    assert dw.energy_1d(np.array([1.0]))[0] == pytest.approx(0.0)
    assert dw.energy_1d(np.array([0.0]))[0] == pytest.approx(0.05)


def test_boltzmann_constant():
    assert KB_EV == pytest.approx(8.617333262e-5, rel=1e-9)
