"""Tests for the named toy systems: gradients, determinism, training
set selection."""

import numpy as np
import pytest

from structsearch.diffusion import NoiseSchedule
from structsearch.evaluate import load_references
from structsearch.potentials import TorsionModel
from structsearch.systems import (
    SYSTEM_NAMES,
    TORSION_MODE_ENERGIES,
    TORSION_MODES,
    get_system,
    score_field_for,
)


def test_get_system_names():
    for name in SYSTEM_NAMES:
        sysx = get_system(name)
        assert sysx.name == name
        assert sysx.space
    with pytest.raises(KeyError):
        get_system("lj999")


def test_random_states_deterministic():
    for name in SYSTEM_NAMES:
        sysx = get_system(name)
        a = sysx.random_states(6, 13)
        b = sysx.random_states(6, 13)
        c = sysx.random_states(6, 14)
        for k in a:
            assert np.array_equal(a[k], b[k])
            assert not np.array_equal(a[k], c[k])


def _fd_grad(energy_fn, state, key, h=1e-6):
    x = state[key]
    g = np.zeros_like(x)
    flat = x.reshape(x.shape[0], -1)
    gf = g.reshape(x.shape[0], -1)
    for j in range(flat.shape[1]):
        for sign in (+1, -1):
            pert = {k: v.copy() for k, v in state.items()}
            pf = pert[key].reshape(x.shape[0], -1)
            pf[:, j] += sign * h
            gf[:, j] += sign * energy_fn(pert) / (2 * h)
    return g


@pytest.mark.parametrize("name", ["torsion", "dw1d", "lj_dimer"])
def test_grad_fn_matches_finite_differences(name):
    sysx = get_system(name)
    state = sysx.random_states(3, 21)
    n = sysx.n_atoms

    for key in state:
        fd = _fd_grad(lambda st: sysx.batch_energy(st) * n, state, key)
        got = sysx.grad_fn(state)[key]
        assert np.allclose(got, fd, rtol=1e-5, atol=1e-7)


def test_periodic_grad_fn_matches_finite_differences():
    sysx = get_system("lj4")
    state = sysx.random_states(2, 4)
    n = sysx.n_atoms
    for key in ("frac", "lattice"):
        fd = _fd_grad(lambda st: sysx.batch_energy(st) * n, state, key, h=1e-6)
        got = sysx.grad_fn(state)[key]
        scale = max(np.abs(fd).max(), 1.0)
        assert np.abs(got - fd).max() / scale < 1e-5


def test_degenerate_cell_energy_is_nan_and_grad_zero():
    sysx = get_system("lj4")
    state = sysx.random_states(2, 4)
    state["lattice"][1] = np.zeros((3, 3))
    e = sysx.batch_energy(state)
    assert np.isfinite(e[0])
    assert np.isnan(e[1])
    g = sysx.grad_fn(state)
    assert np.all(g["frac"][1] == 0.0)
    assert np.all(g["lattice"][1] == 0.0)


def test_torsion_modes_are_stationary():
    model = TorsionModel()
    for (phi, psi), e_ref in zip(TORSION_MODES, TORSION_MODE_ENERGIES):
        gp, gq = model.grad_angles(phi, psi)
        assert abs(gp) < 1e-8 and abs(gq) < 1e-8
        assert model.energy_angles(phi, psi) == pytest.approx(e_ref, abs=1e-9)


def test_training_structures_take_first_tie():
    sysx = get_system("lj4")
    refs = load_references("lj4")
    train = sysx.training_structures(refs)
    assert len(train) == 1
    assert np.array_equal(train[0].frac, refs[0][0].frac)
    # reversing the list flips which degenerate member wins
    train_rev = sysx.training_structures(list(reversed(refs)))
    assert not np.array_equal(train_rev[0].frac, train[0].frac)


def test_score_field_shapes():
    schedule = NoiseSchedule(steps=20)
    for name in ("lj4", "torsion", "lj_dimer"):
        sysx = get_system(name)
        refs = load_references(name) if name != "torsion" else None
        field = score_field_for(sysx, schedule, references=refs)
        state = sysx.random_states(5, 2)
        s = field.score(state, 3)
        for b in sysx.space:
            assert s[b.name].shape == (5,) + b.shape


def test_relax_states_shared_contract():
    for name in ("lj4", "lj_dimer", "torsion"):
        sysx = get_system(name)
        from structsearch.relax import RelaxConfig

        state = sysx.random_states(4, 1)
        out, energy, converged, steps, resid, failed = \
            sysx.relax_states(state, RelaxConfig(max_steps=200))
        assert energy.shape == (4,)
        assert converged.dtype == bool and failed.dtype == bool
        for b in sysx.space:
            assert out[b.name].shape == state[b.name].shape
        assert np.all(energy[~failed] <= sysx.batch_energy(state)[~failed] + 1e-9)
