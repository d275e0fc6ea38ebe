"""
Spin Hamiltonians for spin-1/2 and spin-1 species in static fields.

Units are MHz, Gauss and dimensionless spin projections. The Hamiltonian is
written in the species' principal frame

    H = D Sz^2 + E (Sx^2 - Sy^2) + gamma B.S

with the lab field rotated into that frame.
"""
import logging
from dataclasses import dataclass, field as dataclass_field
from typing import NamedTuple

import numpy as np
import pandas as pd

from entsense_app.errors import IndexOutOfRange, InvalidInput, NonHermitianInput

logger = logging.getLogger(__name__)

ELECTRON_GAMMA = 2.8  # MHz/Gauss
NV_ZERO_FIELD_SPLITTING = 2870.0  # MHz
AXES_TOLERANCE = 1e-10
HERMITIAN_TOLERANCE = 1e-9


def axes_from_z(z_axis) -> np.ndarray:
    """
    Right-handed orthonormal triad (rows Dx, Dy, Dz) whose z row is `z_axis`.
    The x row is the lab axis least aligned with z, orthogonalized.
    """
    z = np.asarray(z_axis, dtype=float)
    norm = np.linalg.norm(z)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidInput(f"Cannot build principal axes from {z_axis!r}")
    z = z / norm
    seed_axis = np.eye(3)[int(np.argmin(np.abs(z)))]
    x = seed_axis - np.dot(seed_axis, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


@dataclass(frozen=True, eq=False)
class SpinSpecies:
    name: str
    multiplicity: int
    D: float = 0.0
    E: float = 0.0
    principal_axes: np.ndarray = dataclass_field(default_factory=lambda: np.eye(3))
    gamma: float = ELECTRON_GAMMA

    def __post_init__(self):
        axes = np.asarray(self.principal_axes, dtype=float)
        object.__setattr__(self, "principal_axes", axes)
        if self.multiplicity not in (2, 3):
            raise InvalidInput(f"{self.name}: multiplicity must be 2 or 3, got {self.multiplicity}")
        if self.multiplicity == 2 and (self.D != 0.0 or self.E != 0.0):
            raise InvalidInput(f"{self.name}: spin-1/2 species cannot carry D or E")
        if not self.gamma > 0:
            raise InvalidInput(f"{self.name}: gamma must be positive")
        if axes.shape != (3, 3):
            raise InvalidInput(f"{self.name}: principal_axes must be a 3x3 triad")
        if np.max(np.abs(axes @ axes.T - np.eye(3))) > AXES_TOLERANCE:
            raise InvalidInput(f"{self.name}: principal_axes are not orthonormal")
        if np.linalg.det(axes) < 0:
            raise InvalidInput(f"{self.name}: principal_axes must be right-handed")

    @property
    def spin(self) -> float:
        return (self.multiplicity - 1) / 2

    @classmethod
    def electron(cls, name: str = "electron", axis=(0.0, 0.0, 1.0), gamma: float = ELECTRON_GAMMA):
        return cls(name=name, multiplicity=2, principal_axes=axes_from_z(axis), gamma=gamma)

    @classmethod
    def nv(cls, name: str = "NV", axis=(1.0, 1.0, 1.0), D: float = NV_ZERO_FIELD_SPLITTING, E: float = 0.0):
        return cls(name=name, multiplicity=3, D=D, E=E, principal_axes=axes_from_z(axis))


@dataclass(frozen=True, eq=False)
class MagneticField:
    vector: np.ndarray

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=float).reshape(3)
        if not np.all(np.isfinite(vector)):
            raise InvalidInput(f"Field components must be finite, got {vector}")
        object.__setattr__(self, "vector", vector)

    @classmethod
    def along(cls, direction, magnitude: float):
        direction = np.asarray(direction, dtype=float)
        return cls(magnitude * direction / np.linalg.norm(direction))

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    energies: np.ndarray
    states: np.ndarray


class Transition(NamedTuple):
    lower: int
    upper: int
    frequency: float


def spin_operators(multiplicity: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sx, Sy, Sz in the basis |+S>, ..., |-S>."""
    s = (multiplicity - 1) / 2
    m = s - np.arange(multiplicity)
    # <m+1|S+|m> on the superdiagonal
    raising = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    lowering = raising.conj().T
    sx = (raising + lowering) / 2
    sy = (raising - lowering) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


def build_hamiltonian(species: SpinSpecies, field: MagneticField) -> np.ndarray:
    sx, sy, sz = spin_operators(species.multiplicity)
    bx, by, bz = species.principal_axes @ field.vector
    h = (
        species.D * (sz @ sz)
        + species.E * (sx @ sx - sy @ sy)
        + species.gamma * (bx * sx + by * sy + bz * sz)
    )
    return (h + h.conj().T) / 2


def eigensystem(h: np.ndarray) -> EigenSystem:
    h = np.asarray(h, dtype=complex)
    scale = np.linalg.norm(h)
    if np.linalg.norm(h - h.conj().T) > HERMITIAN_TOLERANCE * scale:
        raise NonHermitianInput("Matrix is not Hermitian within tolerance")
    energies, states = np.linalg.eigh((h + h.conj().T) / 2)
    # largest-magnitude component of each eigenvector made real-positive
    pivots = np.argmax(np.abs(states), axis=0)
    pivot_values = states[pivots, np.arange(states.shape[1])]
    states = states * (pivot_values.conj() / np.abs(pivot_values))
    return EigenSystem(energies=energies, states=states)


def resonance_frequencies(species: SpinSpecies, field: MagneticField) -> list[Transition]:
    energies = eigensystem(build_hamiltonian(species, field)).energies
    transitions = [
        Transition(j, jp, float(abs(energies[jp] - energies[j])))
        for j in range(len(energies))
        for jp in range(j + 1, len(energies))
    ]
    return sorted(transitions, key=lambda t: t.frequency)


def spin_expectations(species: SpinSpecies, field: MagneticField) -> np.ndarray:
    """Lab-frame dipole vectors of every eigenstate, shape (multiplicity, 3)."""
    states = eigensystem(build_hamiltonian(species, field)).states
    ops = spin_operators(species.multiplicity)
    principal = np.stack(
        [np.real(np.einsum("ij,ik,kj->j", states.conj(), op, states)) for op in ops],
        axis=1,
    )
    return principal @ species.principal_axes


def dipole_expectation(species: SpinSpecies, field: MagneticField, j: int) -> np.ndarray:
    if not 0 <= j < species.multiplicity:
        raise IndexOutOfRange(f"Eigenstate {j} out of range for {species.name} (multiplicity {species.multiplicity})")
    return spin_expectations(species, field)[j]


def field_sweep(species: SpinSpecies, direction, magnitudes) -> pd.DataFrame:
    """Resonance branches versus field magnitude along a fixed direction."""
    rows = []
    for magnitude in magnitudes:
        field = MagneticField.along(direction, magnitude)
        for transition in resonance_frequencies(species, field):
            rows.append({
                "B_G": float(magnitude),
                "transition": f"{transition.lower}->{transition.upper}",
                "f_MHz": transition.frequency,
            })
    logger.debug("Swept %s over %d field values", species.name, len(rows))
    return pd.DataFrame(rows, columns=["B_G", "transition", "f_MHz"])
