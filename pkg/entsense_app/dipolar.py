"""
Secular magnetic dipole-dipole couplings between spin eigenstates.

nu = (a / r^3) [Phi1.Phi2 - 3 (Phi1.r)(Phi2.r) / r^2]

The measurable coupling of a sensor transition j1->j1' against a target
transition j2->j2' is bilinear in the state dipoles, so it equals nu
evaluated on the dipole differences Phi_j - Phi_j'.
"""
import logging
from dataclasses import dataclass

import numpy as np

from entsense_app.errors import DegenerateGeometry, IndexOutOfRange, InvalidInput
from entsense_app.spin_model import (
    MagneticField,
    SpinSpecies,
    eigensystem,
    spin_expectations,
    spin_operators,
)

logger = logging.getLogger(__name__)

# mu0/(4 pi) (g muB)^2 / h for two g = 2 electrons, MHz nm^3
DIPOLE_PREFACTOR = 52.04
MIN_SEPARATION = 0.05  # nm


@dataclass(frozen=True)
class TransitionPair:
    sensor: tuple[int, int]
    target: tuple[int, int]

    def __post_init__(self):
        for label, (j, jp) in (("sensor", self.sensor), ("target", self.target)):
            if j == jp:
                raise InvalidInput(f"{label} transition must join two different eigenstates, got ({j}, {jp})")

    def swapped_target(self) -> "TransitionPair":
        return TransitionPair(self.sensor, (self.target[1], self.target[0]))


def _check_separation(r_vec) -> np.ndarray:
    r_vec = np.asarray(r_vec, dtype=float)
    r = np.linalg.norm(r_vec, axis=-1)
    if np.any(r < MIN_SEPARATION):
        raise DegenerateGeometry(f"Spins closer than {MIN_SEPARATION} nm")
    return r


def pair_interaction_nu(phi1, phi2, r_vec, a: float = DIPOLE_PREFACTOR):
    """
    Interaction strength in MHz. `r_vec` may be a single displacement or an
    (..., 3) stack; the result has the matching leading shape.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    r_vec = np.asarray(r_vec, dtype=float)
    r = _check_separation(r_vec)
    r_hat = r_vec / r[..., None]
    angular = (
        np.sum(phi1 * phi2, axis=-1)
        - 3.0 * np.sum(phi1 * r_hat, axis=-1) * np.sum(phi2 * r_hat, axis=-1)
    )
    nu = a * angular / r**3
    return float(nu) if np.ndim(nu) == 0 else nu


def transition_dipole(species: SpinSpecies, field: MagneticField, transition: tuple[int, int]) -> np.ndarray:
    """Phi_j - Phi_j' for one transition of a species."""
    j, jp = transition
    for index in (j, jp):
        if not 0 <= index < species.multiplicity:
            raise IndexOutOfRange(f"Eigenstate {index} out of range for {species.name}")
    phis = spin_expectations(species, field)
    return phis[j] - phis[jp]


def measurable_coupling(
    sensor: SpinSpecies,
    target: SpinSpecies,
    trans: TransitionPair,
    field: MagneticField,
    r_vec,
    a: float = DIPOLE_PREFACTOR,
):
    """
    Signed A = (nu_{j1,j2} - nu_{j1,j2'}) - (nu_{j1',j2} - nu_{j1',j2'}).
    The observable oscillation frequency is |A|.
    """
    d_sensor = transition_dipole(sensor, field, trans.sensor)
    d_target = transition_dipole(target, field, trans.target)
    return pair_interaction_nu(d_sensor, d_target, r_vec, a)


def distance_from_coupling(A: float, angular_factor: float, a: float = DIPOLE_PREFACTOR) -> float:
    if not A > 0:
        raise InvalidInput(f"Coupling must be positive, got {A}")
    if angular_factor == 0:
        raise InvalidInput("Angular factor must be nonzero")
    return float((a * abs(angular_factor) / A) ** (1.0 / 3.0))


def two_spin_secular_splitting(
    sensor: SpinSpecies,
    target: SpinSpecies,
    field: MagneticField,
    r_vec,
    a: float = DIPOLE_PREFACTOR,
) -> float:
    """
    Coupling of two spin-1/2 species read off the full 4x4 two-spin
    Hamiltonian: the sensor transition frequency with the target up minus
    the same with the target down. Needs distinct gyromagnetic ratios and a
    strong field so that eigen-ordering follows the product basis.
    """
    if sensor.multiplicity != 2 or target.multiplicity != 2:
        raise InvalidInput("Brute-force splitting is defined for spin-1/2 pairs only")
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(_check_separation(r_vec))
    r_hat = r_vec / r
    ops1 = [np.kron(op, np.eye(2)) for op in spin_operators(2)]
    ops2 = [np.kron(np.eye(2), op) for op in spin_operators(2)]
    h = sum(sensor.gamma * b * op for b, op in zip(field.vector, ops1))
    h = h + sum(target.gamma * b * op for b, op in zip(field.vector, ops2))
    s1_r = sum(c * op for c, op in zip(r_hat, ops1))
    s2_r = sum(c * op for c, op in zip(r_hat, ops2))
    h = h + a / r**3 * (sum(o1 @ o2 for o1, o2 in zip(ops1, ops2)) - 3.0 * s1_r @ s2_r)
    energies = eigensystem(h).energies
    # ascending order (-,-), (-,+), (+,-), (+,+) when sensor gamma > target gamma
    return float((energies[3] - energies[1]) - (energies[2] - energies[0]))
