"""
Experiment configuration: one TOML or JSON file per experiment, validated by
pydantic models. Species are declared once and referenced by name.
"""
import hashlib
import json
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

import dotenv
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from entsense_app.bath import MIN_FIT_POINTS
from entsense_app.entangle import EntangledState, GridSpec, SensorPairGeometry
from entsense_app.errors import ConfigError
from entsense_app.localize import SearchRegion
from entsense_app.spin_model import ELECTRON_GAMMA, MagneticField, SpinSpecies, axes_from_z

logger = logging.getLogger(__name__)

ENV_OUT = "ENTSENSE_OUT"
ENV_THREADS = "ENTSENSE_THREADS"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpeciesModel(_Strict):
    name: str
    multiplicity: Literal[2, 3]
    D: float = 0.0
    E: float = 0.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    gamma: float = Field(default=ELECTRON_GAMMA, gt=0)

    @model_validator(mode="after")
    def _physical(self):
        # InvalidInput is a ValueError, so pydantic reports it as a validation error
        self.build()
        return self

    def build(self) -> SpinSpecies:
        return SpinSpecies(
            name=self.name,
            multiplicity=self.multiplicity,
            D=self.D,
            E=self.E,
            principal_axes=axes_from_z(self.axis),
            gamma=self.gamma,
        )


class FieldModel(_Strict):
    """Either an explicit lab vector or a direction with a magnitude, Gauss."""
    vector: tuple[float, float, float] | None = None
    direction: tuple[float, float, float] | None = None
    magnitude: float | None = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.vector is None) == (self.direction is None):
            raise ValueError("field needs exactly one of 'vector' or 'direction'")
        if self.direction is not None and self.magnitude is None:
            raise ValueError("field 'direction' needs a 'magnitude'")
        if self.direction is not None and not np.linalg.norm(self.direction) > 0:
            raise ValueError("field 'direction' must be nonzero")
        return self

    def build(self) -> MagneticField:
        if self.vector is not None:
            return MagneticField(self.vector)
        return MagneticField.along(self.direction, self.magnitude)


class GeometryModel(_Strict):
    sensor1: str
    sensor2: str
    depth: float = Field(gt=0)
    separation: float = Field(ge=0)
    azimuth: float = 0.0
    depth2: float | None = Field(default=None, gt=0)


class StateModel(_Strict):
    name: Literal["psi1", "psi2", "phi_SQ", "phi_DQ", "single"] = "psi2"
    sensor: Literal[1, 2] = 1

    def build(self) -> EntangledState:
        return EntangledState.named(self.name, sensor=self.sensor)


class BathModel(_Strict):
    density: float = Field(ge=0)
    extent: float = Field(default=45.0, gt=0)
    realizations: int = Field(default=1000, ge=1)
    species: str | None = None
    flip_rate: float = Field(default=0.0, ge=0)
    coupling_scale: float = Field(default=1.0, gt=0)


class DarkSpinModel(_Strict):
    species: str
    position: tuple[float, float, float]


class TimeGridModel(_Strict):
    t_max: float = Field(gt=0)
    dt: float = Field(gt=0)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(int(round(self.t_max / self.dt)) + 1)


class SweepModel(_Strict):
    species: str
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    B_min: float = Field(default=0.0, ge=0)
    B_max: float = Field(gt=0)
    B_step: float = Field(gt=0)


class SpectrumModel(_Strict):
    f_min: float
    f_max: float
    f_step: float = Field(gt=0)
    evolution_time: float = Field(default=2.0, gt=0)
    sweep: SweepModel | None = None

    @model_validator(mode="after")
    def _non_empty(self):
        if not self.f_max > self.f_min:
            raise ValueError(f"empty scan range [{self.f_min}, {self.f_max}]")
        return self


class TelegraphModel(_Strict):
    rate_on_off: float = Field(ge=0)
    rate_off_on: float = Field(ge=0)
    initial: Literal["on", "off"] = "on"


class DeerModel(_Strict):
    A_eff: float | None = None
    target: int | None = Field(default=None, ge=0)
    target_transition: tuple[int, int] = (0, 1)
    T2: float = Field(gt=0)
    p: float = Field(default=1.0, gt=0)
    times: TimeGridModel
    regimes: list[Literal["on", "off", "switching"]] = ["on"]
    telegraph: TelegraphModel | None = None
    trajectories: int = Field(default=10000, ge=1)
    fft: bool = True

    @model_validator(mode="after")
    def _coupling_source(self):
        if (self.A_eff is None) == (self.target is None):
            raise ValueError("deer needs exactly one of 'A_eff' or 'target'")
        if "switching" in self.regimes and self.telegraph is None:
            raise ValueError("switching regime needs a 'telegraph' table")
        return self


class TrackModel(_Strict):
    duration: float = Field(gt=0)
    window: float = Field(gt=0)


class GridModel(_Strict):
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    pitch: float = Field(gt=0)

    def build(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.pitch)


class ResolutionModel(_Strict):
    depths: list[float] = Field(min_length=1)
    separations: list[float] = Field(min_length=1)
    threshold: float = Field(default=0.70, gt=0, lt=1)


class MapModel(_Strict):
    target_species: str | None = None
    grid: GridModel | None = None
    resolution: ResolutionModel | None = None


class CoherenceModel(_Strict):
    protocol: Literal["fid", "echo"] = "fid"
    states: list[Literal["psi1", "psi2", "phi_SQ", "phi_DQ", "single"]] = ["psi2"]
    times: TimeGridModel
    fit: bool = True
    export_baths: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _fit_has_points(self):
        count = self.times.times().size
        if self.fit and count < MIN_FIT_POINTS:
            raise ValueError(f"decay fit needs at least {MIN_FIT_POINTS} time points, the grid has {count}")
        return self


class SearchModel(_Strict):
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    pitch: float = Field(default=0.5, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        self.build()
        return self

    def build(self) -> SearchRegion:
        return SearchRegion(self.lower, self.upper, self.pitch)


class LocalizeModel(_Strict):
    measurements: str | None = None
    sensor: str
    target: str
    sensor_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    search: SearchModel | None = None
    use_magnitude: bool = False
    confidence: float = Field(default=0.6827, gt=0, lt=1)


class SensitivityModel(_Strict):
    A_eff: float = Field(gt=0)
    T2: float = Field(gt=0)
    p: float = Field(default=1.0, gt=0)
    C: float = Field(default=0.3, gt=0, le=1)
    n_avg: float = Field(default=0.06, gt=0)
    t_I: float = Field(default=2.0, ge=0)
    t_R: float = Field(default=1.0, ge=0)
    t_other: float = Field(default=2.0, ge=0)
    t_deer: float | None = Field(default=None, gt=0)


class SensitivityRunModel(_Strict):
    reference: SensitivityModel
    entangled: SensitivityModel


class OutputModel(_Strict):
    dir: str | None = None
    prefix: str = ""


class ExperimentConfig(_Strict):
    name: str = "experiment"
    seed: int = Field(default=0, ge=0, lt=2**64)
    species: list[SpeciesModel] = []
    field: FieldModel | None = None
    fields: list[FieldModel] = []
    geometry: GeometryModel | None = None
    state: StateModel = StateModel()
    bath: BathModel | None = None
    dark_spins: list[DarkSpinModel] = []
    spectrum: SpectrumModel | None = None
    deer: DeerModel | None = None
    track: TrackModel | None = None
    maps: MapModel | None = None
    coherence: CoherenceModel | None = None
    localize: LocalizeModel | None = None
    sensitivity: SensitivityRunModel | None = None
    output: OutputModel = OutputModel()

    @model_validator(mode="after")
    def _references_resolve(self):
        names = [s.name for s in self.species]
        duplicates = {n for n in names if names.count(n) > 1}
        if duplicates:
            raise ValueError(f"species declared more than once: {sorted(duplicates)}")
        referenced = []
        if self.geometry is not None:
            referenced += [self.geometry.sensor1, self.geometry.sensor2]
        if self.bath is not None and self.bath.species is not None:
            referenced.append(self.bath.species)
        referenced += [d.species for d in self.dark_spins]
        if self.spectrum is not None and self.spectrum.sweep is not None:
            referenced.append(self.spectrum.sweep.species)
        if self.maps is not None and self.maps.target_species is not None:
            referenced.append(self.maps.target_species)
        if self.localize is not None:
            referenced += [self.localize.sensor, self.localize.target]
        missing = sorted({r for r in referenced if r not in names})
        if missing:
            raise ValueError(f"unresolved species names: {missing}")
        if self.deer is not None and self.deer.target is not None and self.deer.target >= len(self.dark_spins):
            raise ValueError(f"deer target {self.deer.target} has no matching dark spin")
        return self

    def species_named(self, name: str) -> SpinSpecies:
        for species in self.species:
            if species.name == name:
                return species.build()
        raise ConfigError(f"Unknown species {name!r}")

    def require(self, section: str):
        value = getattr(self, section)
        if value is None or value == []:
            raise ConfigError(f"Config section '{section}' is required for this command")
        return value

    def main_field(self) -> MagneticField:
        return self.require("field").build()

    def sensor_geometry(self) -> SensorPairGeometry:
        geometry = self.require("geometry")
        return SensorPairGeometry(
            depth=geometry.depth,
            separation=geometry.separation,
            sensor1=self.species_named(geometry.sensor1),
            sensor2=self.species_named(geometry.sensor2),
            field=self.main_field(),
            azimuth=geometry.azimuth,
            depth2=geometry.depth2,
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _parse(path: Path) -> dict:
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = _parse(path)
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot parse config {path}: {exc}") from exc
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"Invalid config {path}: {exc}") from exc
    logger.debug("Loaded config %s (%s)", path, config.config_hash()[:12])
    return config


def runtime_defaults(env_file: str | os.PathLike = ".env") -> dict:
    """Output dir and thread count from the environment, then `.env`."""
    values = {**dotenv.dotenv_values(env_file), **os.environ}
    defaults = {"out": values.get(ENV_OUT) or "out", "threads": 1}
    if values.get(ENV_THREADS):
        try:
            defaults["threads"] = max(1, int(values[ENV_THREADS]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {values[ENV_THREADS]!r}") from exc
    return defaults
