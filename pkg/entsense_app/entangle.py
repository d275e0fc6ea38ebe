"""
Entangled two-sensor states, their effective target couplings, spatial
coupling maps and the effective-sensing-area resolution metric.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import pandas as pd

from entsense_app.dipolar import DIPOLE_PREFACTOR, transition_dipole, pair_interaction_nu
from entsense_app.errors import EmptyInput, InvalidInput
from entsense_app.spin_model import MagneticField, SpinSpecies
from entsense_app.workers import parallel_map

logger = logging.getLogger(__name__)

SENSING_THRESHOLD = 0.70
RESOLUTION_COLUMNS = [
    "d", "s", "area_single", "area_psi2", "ratio", "area_single_pooled", "area_psi2_pooled", "ratio_pooled",
]
SQ_TRANSITION = (0, 1)
DQ_TRANSITION = (1, 2)

_STATE_TABLE = {
    # name: (weights, sensor-1 transition)
    "psi1": ((1, 1), SQ_TRANSITION),
    "psi2": ((1, -1), SQ_TRANSITION),
    "phi_SQ": ((1, -1), SQ_TRANSITION),
    "phi_DQ": ((1, -1), DQ_TRANSITION),
    "single": ((1, 0), SQ_TRANSITION),
}


@dataclass(frozen=True)
class EntangledState:
    name: str
    weights: tuple[int, int]
    sensor_transitions: tuple[tuple[int, int], tuple[int, int]] = (SQ_TRANSITION, SQ_TRANSITION)

    def __post_init__(self):
        if self.name not in _STATE_TABLE:
            raise InvalidInput(f"Unknown entangled state {self.name!r}; expected one of {sorted(_STATE_TABLE)}")
        if any(w not in (-1, 0, 1) for w in self.weights):
            raise InvalidInput(f"Weights must be in {{-1, 0, +1}}, got {self.weights}")

    @classmethod
    def named(cls, name: str, sensor: int = 1) -> "EntangledState":
        """
        Canonical state by name. `sensor` picks which sensor a "single"
        state reads out.
        """
        if name not in _STATE_TABLE:
            raise InvalidInput(f"Unknown entangled state {name!r}; expected one of {sorted(_STATE_TABLE)}")
        weights, transition = _STATE_TABLE[name]
        if name == "single" and sensor == 2:
            weights = (0, 1)
        return cls(name=name, weights=weights, sensor_transitions=(transition, SQ_TRANSITION))


@dataclass(frozen=True, eq=False)
class SensorPairGeometry:
    """
    Two sensors below the z = 0 interface, `separation` apart horizontally
    along azimuth `azimuth` (rad), centered on the origin.
    """
    depth: float
    separation: float
    sensor1: SpinSpecies
    sensor2: SpinSpecies
    field: MagneticField
    azimuth: float = 0.0
    depth2: float | None = None

    def __post_init__(self):
        if not self.depth > 0:
            raise InvalidInput(f"Sensor depth must be positive, got {self.depth}")
        if self.depth2 is not None and not self.depth2 > 0:
            raise InvalidInput(f"Second sensor depth must be positive, got {self.depth2}")
        if self.separation < 0:
            raise InvalidInput(f"Separation must be nonnegative, got {self.separation}")

    @property
    def positions(self) -> np.ndarray:
        half = self.separation / 2
        dx, dy = half * np.cos(self.azimuth), half * np.sin(self.azimuth)
        depth2 = self.depth if self.depth2 is None else self.depth2
        return np.array([[-dx, -dy, -self.depth], [dx, dy, -depth2]])

    def with_separation(self, depth: float, separation: float) -> "SensorPairGeometry":
        offset = 0.0 if self.depth2 is None else self.depth2 - self.depth
        return SensorPairGeometry(
            depth=depth,
            separation=separation,
            sensor1=self.sensor1,
            sensor2=self.sensor2,
            field=self.field,
            azimuth=self.azimuth,
            depth2=None if self.depth2 is None else depth + offset,
        )


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    pitch: float

    def __post_init__(self):
        if not self.pitch > 0:
            raise InvalidInput(f"Grid pitch must be positive, got {self.pitch}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise InvalidInput("Grid bounds are inverted")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(round((self.x_max - self.x_min) / self.pitch)) + 1
        ny = int(round((self.y_max - self.y_min) / self.pitch)) + 1
        return self.x_min + self.pitch * np.arange(nx), self.y_min + self.pitch * np.arange(ny)


@dataclass(frozen=True, eq=False)
class CouplingMap:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # shape (len(y), len(x)), MHz
    pitch: float = dataclass_field(default=1.0)

    def to_frame(self) -> pd.DataFrame:
        xx, yy = np.meshgrid(self.x, self.y)
        return pd.DataFrame({"x": xx.ravel(), "y": yy.ravel(), "value": self.values.ravel()})


def effective_coupling(state: EntangledState, A1, A2):
    w1, w2 = state.weights
    result = np.abs(w1 * np.asarray(A1, dtype=float) + w2 * np.asarray(A2, dtype=float))
    return float(result) if np.ndim(result) == 0 else result


def sensor_couplings(
    geom: SensorPairGeometry,
    state: EntangledState,
    target_species: SpinSpecies,
    field: MagneticField,
    points,
    target_transition: tuple[int, int] = (0, 1),
    a: float = DIPOLE_PREFACTOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Signed couplings (A1, A2) of both sensors to targets at `points` (n, 3)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d_target = transition_dipole(target_species, field, target_transition)
    couplings = []
    for sensor, position, transition in zip(
        (geom.sensor1, geom.sensor2), geom.positions, state.sensor_transitions
    ):
        d_sensor = transition_dipole(sensor, field, transition)
        couplings.append(np.atleast_1d(pair_interaction_nu(d_sensor, d_target, points - position, a)))
    return couplings[0], couplings[1]


def coupling_map(
    geom: SensorPairGeometry,
    state: EntangledState,
    target_species: SpinSpecies,
    field: MagneticField,
    grid_spec: GridSpec,
) -> CouplingMap:
    xs, ys = grid_spec.axes()
    xx, yy = np.meshgrid(xs, ys)
    points = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    A1, A2 = sensor_couplings(geom, state, target_species, field, points)
    values = np.asarray(effective_coupling(state, A1, A2)).reshape(xx.shape)
    logger.debug("Coupling map %s: %d points", state.name, values.size)
    return CouplingMap(x=xs, y=ys, values=values, pitch=grid_spec.pitch)


def effective_sensing_area(couplings, threshold: float = SENSING_THRESHOLD) -> tuple[int, float]:
    """
    Smallest N such that the quadrature sum of the N largest couplings
    reaches `threshold` of the total. Returns (N_eff, S_total).
    """
    couplings = np.abs(np.asarray(couplings, dtype=float).ravel())
    if couplings.size == 0:
        raise EmptyInput("Sensing area needs at least one coupling")
    if not 0 < threshold < 1:
        raise InvalidInput(f"Threshold must lie in (0, 1), got {threshold}")
    ordered = couplings[np.argsort(-couplings, kind="stable")]
    cumulative = np.cumsum(ordered**2)
    total = cumulative[-1]
    if total == 0:
        return 1, 0.0
    target = threshold**2 * total * (1 - 1e-12)
    n_eff = int(np.searchsorted(cumulative, target, side="left")) + 1
    return min(n_eff, couplings.size), float(np.sqrt(total))


def map_sensing_area(cmap: CouplingMap, threshold: float = SENSING_THRESHOLD) -> float:
    """Geometric sensing area of a map: counted cells times cell area, nm^2."""
    n_eff, _ = effective_sensing_area(cmap.values, threshold)
    return n_eff * cmap.pitch**2


def resolution_scan(
    depths,
    separations,
    density: float,
    realizations: int,
    base_geometry: SensorPairGeometry,
    seed: int = 0,
    bath_species: SpinSpecies | None = None,
    threshold: float = SENSING_THRESHOLD,
    extent: float | None = None,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Sensing area of a single sensor and of psi2 for every (d, s).

    `area_*` is N_eff / density averaged over the nonempty bath realizations.
    `area_*_pooled` takes N_eff once over the couplings of all realizations,
    area = N_eff / (density * realizations), which is not quantized by the
    one or two spins that dominate a single sparse bath.
    """
    from entsense_app.bath import BathConfig, bath_couplings, derive_seed, resolve_extent, sample_bath

    if realizations < 1:
        raise InvalidInput("At least one realization is required")
    if not density > 0:
        raise InvalidInput("Resolution scans need a positive bath density")
    single = EntangledState.named("single")
    psi2 = EntangledState.named("psi2")
    rows = [(d, s) for d in depths for s in separations]
    if any(d <= 0 or s < 0 for d, s in rows):
        raise InvalidInput("Depths must be positive and separations nonnegative")

    def _row(indexed_row):
        index, (d, s) = indexed_row
        geom = base_geometry.with_separation(d, s)
        config = BathConfig(
            density=density,
            extent=extent if extent is not None else 5 * d,
            seed=derive_seed(seed, index),
            realizations=realizations,
            species=bath_species,
        )
        config = resolve_extent(geom, single, config)
        couplings = {"single": [], "psi2": []}
        for k in range(realizations):
            bath = sample_bath(config, k)
            if len(bath) == 0:
                continue
            couplings["single"].append(bath_couplings(geom, single, config, bath))
            couplings["psi2"].append(bath_couplings(geom, psi2, config, bath))
        row = {"d": d, "s": s}
        if not couplings["single"]:
            return row
        for name, per_bath in couplings.items():
            # empty baths carry no sensing area and are left out of the average
            counts = [effective_sensing_area(values, threshold)[0] for values in per_bath]
            row[f"area_{name}"] = math.fsum(counts) / len(counts) / density
            row[f"area_{name}_pooled"] = (
                effective_sensing_area(np.concatenate(per_bath), threshold)[0] / (density * realizations)
            )
        row["ratio"] = row["area_single"] / row["area_psi2"]
        row["ratio_pooled"] = row["area_single_pooled"] / row["area_psi2_pooled"]
        logger.info(
            "d=%.2f s=%.2f: ratio %.3f averaged, %.3f pooled over %d baths",
            d, s, row["ratio"], row["ratio_pooled"], len(couplings["single"]),
        )
        return row

    results = parallel_map(_row, list(enumerate(rows)), threads)
    return pd.DataFrame(results, columns=RESOLUTION_COLUMNS)
