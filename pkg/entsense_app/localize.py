"""
Three-dimensional localization of a target spin from couplings measured
under several field orientations: coarse chi-square grid, Nelder-Mead
refinement, Gauss-Newton covariance.
"""
import logging
from dataclasses import dataclass, field as dataclass_field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import minimum_filter
from scipy.optimize import minimize
from scipy.stats import chi2 as chi2_distribution

from entsense_app.dipolar import DIPOLE_PREFACTOR, MIN_SEPARATION, TransitionPair, pair_interaction_nu, transition_dipole
from entsense_app.errors import DegenerateGeometry, InsufficientData, InvalidInput, NoConvergence
from entsense_app.spin_model import MagneticField, SpinSpecies

logger = logging.getLogger(__name__)

GRID_PITCH = 0.5  # nm
SEARCH_HALF_WIDTH = 15.0  # nm
CANDIDATE_DELTA_CHI2 = 9.0
REFINE_XATOL = 1e-5
REFINE_MAXITER = 20000
MAX_REFINED_MINIMA = 12
MIN_ORIENTATIONS = 3
CHI2_TIE_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class CouplingMeasurement:
    field: MagneticField
    transitions: TransitionPair
    A_measured: float  # MHz, signed
    sigma: float  # MHz

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInput(f"Measurement sigma must be positive, got {self.sigma}")
        if not np.isfinite(self.A_measured):
            raise InvalidInput("Measured coupling must be finite")


@dataclass(frozen=True)
class SearchRegion:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    pitch: float = GRID_PITCH

    def __post_init__(self):
        if not np.all(np.asarray(self.upper, float) > np.asarray(self.lower, float)):
            raise InvalidInput(f"Search box needs upper > lower on every axis, got {self.lower} .. {self.upper}")
        if not self.pitch > 0:
            raise InvalidInput("Search pitch must be positive")

    @classmethod
    def cube(cls, center, half_width: float = SEARCH_HALF_WIDTH, pitch: float = GRID_PITCH) -> "SearchRegion":
        center = np.asarray(center, dtype=float)
        return cls(tuple(center - half_width), tuple(center + half_width), pitch)

    def grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            count = int(np.floor((hi - lo) / self.pitch + 1e-9)) + 1
            axes.append(lo + self.pitch * np.arange(count))
        return tuple(axes)


class Candidate(NamedTuple):
    position: np.ndarray
    chi2: float


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    position: np.ndarray
    covariance: np.ndarray
    residual: float
    candidates: list[Candidate] = dataclass_field(default_factory=list)
    rank: int = 3

    def to_dict(self) -> dict:
        return {
            "position_nm": self.position.tolist(),
            "covariance_nm2": self.covariance.tolist(),
            "residual_chi2": self.residual,
            "rank": self.rank,
            "candidates": [{"position_nm": c.position.tolist(), "chi2": c.chi2} for c in self.candidates],
        }


class Ellipsoid(NamedTuple):
    semi_axes: np.ndarray
    axes: np.ndarray  # rows are principal directions
    degenerate: np.ndarray


class _ForwardModel:
    """Pre-computed transition dipoles for every measurement."""

    def __init__(self, measurements, sensor: SpinSpecies, target: SpinSpecies, sensor_position, a: float):
        self.sensor_position = np.asarray(sensor_position, dtype=float)
        self.a = a
        self.d_sensor = np.array([transition_dipole(sensor, m.field, m.transitions.sensor) for m in measurements])
        self.d_target = np.array([transition_dipole(target, m.field, m.transitions.target) for m in measurements])

    def predict(self, points: np.ndarray) -> np.ndarray:
        """(n, 3) candidate positions -> (n, m) signed couplings; NaN near the sensor."""
        r_vec = np.atleast_2d(points) - self.sensor_position
        r = np.linalg.norm(r_vec, axis=1)
        valid = r >= MIN_SEPARATION
        out = np.full((r_vec.shape[0], len(self.d_sensor)), np.nan)
        if np.any(valid):
            for k, (ds, dt) in enumerate(zip(self.d_sensor, self.d_target)):
                out[valid, k] = pair_interaction_nu(ds, dt, r_vec[valid], self.a)
        return out


def forward_couplings(
    candidate,
    measurements: list[CouplingMeasurement],
    sensor: SpinSpecies,
    target: SpinSpecies,
    sensor_position=(0.0, 0.0, 0.0),
    a: float = DIPOLE_PREFACTOR,
) -> np.ndarray:
    candidate = np.asarray(candidate, dtype=float)
    if np.linalg.norm(candidate - np.asarray(sensor_position, dtype=float)) < MIN_SEPARATION:
        raise DegenerateGeometry("Candidate coincides with the sensor")
    return _ForwardModel(measurements, sensor, target, sensor_position, a).predict(candidate[None, :])[0]


def _orientation_count(measurements) -> int:
    lines = []
    for m in measurements:
        magnitude = m.field.magnitude
        if magnitude == 0:
            continue
        direction = m.field.vector / magnitude
        if all(np.linalg.norm(np.cross(direction, seen)) > 1e-6 for seen in lines):
            lines.append(direction)
    return len(lines)


def _chi2(predicted: np.ndarray, measured: np.ndarray, sigma: np.ndarray, use_magnitude: bool) -> np.ndarray:
    if use_magnitude:
        predicted, measured = np.abs(predicted), np.abs(measured)
    chi2 = np.sum(((predicted - measured) / sigma) ** 2, axis=-1)
    return np.where(np.isnan(chi2), np.inf, chi2)


def localize(
    measurements: list[CouplingMeasurement],
    sensor: SpinSpecies,
    target: SpinSpecies,
    search_region: SearchRegion | None = None,
    sensor_position=(0.0, 0.0, 0.0),
    a: float = DIPOLE_PREFACTOR,
    use_magnitude: bool = False,
) -> LocalizationResult:
    """
    Position minimizing chi^2 = sum((A_pred - A_meas) / sigma)^2 over all
    field orientations jointly.
    """
    if len(measurements) < MIN_ORIENTATIONS or _orientation_count(measurements) < MIN_ORIENTATIONS:
        raise InsufficientData(
            f"Localization needs at least {MIN_ORIENTATIONS} non-collinear field orientations"
        )
    if search_region is None:
        search_region = SearchRegion.cube(sensor_position)
    model = _ForwardModel(measurements, sensor, target, sensor_position, a)
    measured = np.array([m.A_measured for m in measurements])
    sigma = np.array([m.sigma for m in measurements])

    xs, ys, zs = search_region.grid()
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    chi2_grid = _chi2(model.predict(grid), measured, sigma, use_magnitude).reshape(len(xs), len(ys), len(zs))
    logger.info("Localization grid: %d points, best chi2 %.4g", chi2_grid.size, np.min(chi2_grid))

    finite = np.isfinite(chi2_grid)
    local = (minimum_filter(np.where(finite, chi2_grid, np.inf), size=3, mode="nearest") == chi2_grid) & finite
    minima = np.argwhere(local)
    order = np.argsort(chi2_grid[local], kind="stable")[:MAX_REFINED_MINIMA]

    def objective(x):
        return float(_chi2(model.predict(x[None, :])[0], measured, sigma, use_magnitude))

    lower, upper = np.asarray(search_region.lower, float), np.asarray(search_region.upper, float)
    refined, starts = [], []
    for index in minima[order]:
        start = np.array([xs[index[0]], ys[index[1]], zs[index[2]]])
        result = minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=list(zip(lower, upper)),
            options={
                "xatol": REFINE_XATOL,
                "fatol": 1e-12,
                "maxiter": REFINE_MAXITER,
                "initial_simplex": _inward_simplex(start, search_region.pitch / 2, lower, upper),
            },
        )
        if not result.success and result.nit >= REFINE_MAXITER:
            raise NoConvergence(f"Refinement from {start} hit the iteration cap")
        refined.append(Candidate(np.clip(result.x, lower, upper), float(result.fun)))
        starts.append(tuple(int(i) for i in index))

    best = _best(refined, starts)
    candidates = _distinct(
        [best] + sorted(
            (c for c in refined if c is not best and c.chi2 - best.chi2 <= CANDIDATE_DELTA_CHI2),
            key=lambda c: c.chi2,
        ),
        search_region.pitch,
    )
    covariance, rank = _covariance(objective_residuals(model, measured, sigma, use_magnitude), best.position)
    logger.info("Localized at %s (chi2 %.4g, %d candidates)", np.round(best.position, 4), best.chi2, len(candidates))
    return LocalizationResult(
        position=best.position,
        covariance=covariance,
        residual=best.chi2,
        candidates=candidates,
        rank=rank,
    )


def objective_residuals(model: _ForwardModel, measured, sigma, use_magnitude: bool):
    def residuals(x):
        predicted = model.predict(np.asarray(x)[None, :])[0]
        if use_magnitude:
            return (np.abs(predicted) - np.abs(measured)) / sigma
        return (predicted - measured) / sigma
    return residuals


def _inward_simplex(start: np.ndarray, step: float, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Initial simplex whose vertices step away from the nearest box face."""
    direction = np.where(start + step <= upper, 1.0, -1.0)
    vertices = [start]
    for axis in range(3):
        vertex = start.copy()
        vertex[axis] = np.clip(start[axis] + direction[axis] * step, lower[axis], upper[axis])
        vertices.append(vertex)
    return np.vstack(vertices)


def _best(refined: list[Candidate], starts: list[tuple[int, int, int]]) -> Candidate:
    """Lowest chi^2; refinements tied within rounding go to the lowest grid index."""
    lowest = min(c.chi2 for c in refined)
    tolerance = CHI2_TIE_TOLERANCE * max(1.0, lowest)
    tied = [(start, c) for start, c in zip(starts, refined) if c.chi2 - lowest <= tolerance]
    return min(tied, key=lambda pair: pair[0])[1]


def _distinct(candidates: list[Candidate], pitch: float) -> list[Candidate]:
    kept = []
    for candidate in candidates:
        if all(np.linalg.norm(candidate.position - k.position) > pitch for k in kept):
            kept.append(candidate)
    return kept


def _covariance(residuals, position: np.ndarray, step: float = 1e-4) -> tuple[np.ndarray, int]:
    jacobian = np.column_stack([
        (residuals(position + step * e) - residuals(position - step * e)) / (2 * step)
        for e in np.eye(3)
    ])
    fisher = jacobian.T @ jacobian
    rank = int(np.linalg.matrix_rank(fisher))
    covariance = np.linalg.pinv(fisher)
    return (covariance + covariance.T) / 2, rank


def uncertainty_ellipsoid(result: LocalizationResult, confidence: float = 0.6827) -> Ellipsoid:
    if not 0 < confidence < 1:
        raise InvalidInput(f"Confidence must lie in (0, 1), got {confidence}")
    quantile = chi2_distribution.ppf(confidence, df=3)
    values, vectors = np.linalg.eigh(result.covariance)
    degenerate = values <= 1e-12 * max(float(np.max(np.abs(values))), 1e-300)
    semi_axes = np.where(degenerate, np.inf, np.sqrt(np.clip(values, 0, None) * quantile))
    return Ellipsoid(semi_axes=semi_axes, axes=vectors.T, degenerate=degenerate)


def mahalanobis_squared(result: LocalizationResult, point) -> float:
    delta = np.asarray(point, dtype=float) - result.position
    return float(delta @ np.linalg.pinv(result.covariance) @ delta)
