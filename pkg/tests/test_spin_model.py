import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from entsense_app.errors import IndexOutOfRange, InvalidInput, NonHermitianInput
from entsense_app.spin_model import (
    MagneticField,
    SpinSpecies,
    axes_from_z,
    build_hamiltonian,
    dipole_expectation,
    eigensystem,
    field_sweep,
    resonance_frequencies,
    spin_expectations,
    spin_operators,
)


@pytest.mark.parametrize("multiplicity", [2, 3])
def test_spin_operators_commute_like_angular_momentum(multiplicity):
    sx, sy, sz = spin_operators(multiplicity)
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-12)
    s = (multiplicity - 1) / 2
    np.testing.assert_allclose(sx @ sx + sy @ sy + sz @ sz, s * (s + 1) * np.eye(multiplicity), atol=1e-12)


def test_zero_field_spin_half_hamiltonian_is_zero(electron):
    h = build_hamiltonian(electron, MagneticField((0, 0, 0)))
    np.testing.assert_array_equal(h, np.zeros((2, 2)))
    system = eigensystem(h)
    np.testing.assert_array_equal(system.energies, [0.0, 0.0])
    np.testing.assert_allclose(system.states, np.eye(2))


def test_spin_half_at_89_gauss():
    species = SpinSpecies.electron()
    field = MagneticField((0, 0, 89.0))
    energies = eigensystem(build_hamiltonian(species, field)).energies
    np.testing.assert_allclose(energies, [-124.6, 124.6], atol=1e-9)
    (transition,) = resonance_frequencies(species, field)
    assert (transition.lower, transition.upper) == (0, 1)
    assert transition.frequency == pytest.approx(249.2, abs=0.5)


def test_spin_half_zeeman_is_isotropic():
    species = SpinSpecies.electron(axis=(0.3, -0.2, 0.9))
    rng = np.random.default_rng(4)
    for _ in range(10):
        vector = rng.normal(size=3) * 50
        (transition,) = resonance_frequencies(species, MagneticField(vector))
        assert transition.frequency == pytest.approx(2.8 * np.linalg.norm(vector), rel=1e-10)


def test_spin_one_zero_field_levels(ds2):
    h = build_hamiltonian(ds2, MagneticField((0, 0, 0)))
    assert np.trace(h).real == pytest.approx(2 * ds2.D)
    energies = eigensystem(h).energies
    np.testing.assert_allclose(energies, [-3.7, 0.0, 596.9], atol=1e-9)
    frequencies = [t.frequency for t in resonance_frequencies(ds2, MagneticField((0, 0, 0)))]
    np.testing.assert_allclose(frequencies, [3.7, 596.9, 600.6], atol=1e-9)


def test_eigensystem_of_diagonal_matrix():
    system = eigensystem(np.diag([596.9, -3.7, 0.0]))
    np.testing.assert_allclose(system.energies, [-3.7, 0.0, 596.9])
    np.testing.assert_allclose(np.abs(system.states), np.eye(3)[:, [1, 2, 0]])


def test_eigensystem_reconstructs_and_fixes_phase(ds2):
    field = MagneticField((40.0, -25.0, 70.0))
    h = build_hamiltonian(ds2, field)
    np.testing.assert_array_equal(h, h.conj().T)
    system = eigensystem(h)
    u = system.states
    assert np.all(np.diff(system.energies) >= 0)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(3), atol=1e-9)
    assert np.linalg.norm(h - u @ np.diag(system.energies) @ u.conj().T) <= 1e-9 * np.linalg.norm(h)
    pivots = u[np.argmax(np.abs(u), axis=0), np.arange(3)]
    np.testing.assert_allclose(pivots.imag, 0.0, atol=1e-12)
    assert np.all(pivots.real > 0)


def test_eigensystem_rejects_non_hermitian():
    with pytest.raises(NonHermitianInput):
        eigensystem(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_species_validation():
    with pytest.raises(InvalidInput):
        SpinSpecies(name="bad", multiplicity=4)
    with pytest.raises(InvalidInput):
        SpinSpecies(name="bad", multiplicity=2, D=10.0)
    with pytest.raises(InvalidInput):
        SpinSpecies(name="bad", multiplicity=3, principal_axes=np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(InvalidInput):
        SpinSpecies(name="bad", multiplicity=3, principal_axes=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidInput):
        MagneticField((0.0, np.nan, 1.0))


def test_axes_from_z_is_right_handed():
    axes = axes_from_z((1, 1, 1))
    np.testing.assert_allclose(axes @ axes.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(axes) == pytest.approx(1.0)
    np.testing.assert_allclose(axes[2], np.ones(3) / np.sqrt(3))


def test_spin_half_dipoles_follow_the_field():
    species = SpinSpecies.electron()
    field = MagneticField((0, 0, 50.0))
    np.testing.assert_allclose(dipole_expectation(species, field, 1), [0, 0, 0.5], atol=1e-12)
    rng = np.random.default_rng(11)
    for _ in range(5):
        field = MagneticField(rng.normal(size=3) * 30)
        b_hat = field.vector / field.magnitude
        phis = spin_expectations(SpinSpecies.electron(axis=rng.normal(size=3)), field)
        np.testing.assert_allclose(phis[0], -0.5 * b_hat, atol=1e-9)
        np.testing.assert_allclose(phis[1], 0.5 * b_hat, atol=1e-9)


def test_nv_levels_on_axis(nv1, axial_field):
    axis = np.ones(3) / np.sqrt(3)
    phis = spin_expectations(nv1, axial_field)
    np.testing.assert_allclose(phis[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(phis[1], -axis, atol=1e-12)
    np.testing.assert_allclose(phis[2], axis, atol=1e-12)


def test_dipole_expectation_index_checked(electron):
    with pytest.raises(IndexOutOfRange):
        dipole_expectation(electron, MagneticField((0, 0, 1.0)), 2)
    with pytest.raises(IndexError):
        dipole_expectation(electron, MagneticField((0, 0, 1.0)), -1)


def test_dipole_expectation_matches_dense_oracle(ds2, axial_field):
    # explicit spin-1 matrices in the |+1>, |0>, |-1> basis
    r = 1 / np.sqrt(2)
    sx = np.array([[0, r, 0], [r, 0, r], [0, r, 0]], dtype=complex)
    sy = np.array([[0, -1j * r, 0], [1j * r, 0, -1j * r], [0, 1j * r, 0]])
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    b = axial_field.vector
    h = ds2.D * sz @ sz + ds2.E * (sx @ sx - sy @ sy) + 2.8 * (b[0] * sx + b[1] * sy + b[2] * sz)
    _, vectors = np.linalg.eigh(h)
    ground = vectors[:, 0]
    expected = [np.real(ground.conj() @ op @ ground) for op in (sx, sy, sz)]
    np.testing.assert_allclose(dipole_expectation(ds2, axial_field, 0), expected, atol=1e-9)


def test_joint_rotation_keeps_levels_and_rotates_dipoles():
    species = SpinSpecies(name="S1", multiplicity=3, D=500.0, E=40.0, principal_axes=axes_from_z((0.2, 0.4, 1.0)))
    field = MagneticField((30.0, -12.0, 55.0))
    rotation = Rotation.from_euler("zyx", [0.7, -0.3, 1.1]).as_matrix()
    rotated = SpinSpecies(
        name="S1", multiplicity=3, D=500.0, E=40.0, principal_axes=species.principal_axes @ rotation.T
    )
    rotated_field = MagneticField(rotation @ field.vector)
    before = eigensystem(build_hamiltonian(species, field)).energies
    after = eigensystem(build_hamiltonian(rotated, rotated_field)).energies
    np.testing.assert_allclose(before, after, atol=1e-9)
    np.testing.assert_allclose(
        spin_expectations(rotated, rotated_field),
        spin_expectations(species, field) @ rotation.T,
        atol=1e-9,
    )


def test_field_sweep_traces_every_branch(ds2):
    frame = field_sweep(ds2, (0, 0, 1), [0.0, 100.0, 200.0, 300.0])
    assert list(frame.columns) == ["B_G", "transition", "f_MHz"]
    assert len(frame) == 12
    at_zero = frame[frame["B_G"] == 0.0]["f_MHz"].to_numpy()
    np.testing.assert_allclose(at_zero, [3.7, 596.9, 600.6], atol=1e-9)
    assert isinstance(frame, pd.DataFrame)
