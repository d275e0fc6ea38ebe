"""
DEER traces and spectra, Fourier peak extraction, and detection sensitivity
with readout overheads.
"""
import logging
from dataclasses import dataclass, field as dataclass_field, replace
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from entsense_app.entangle import EntangledState, SensorPairGeometry, effective_coupling, sensor_couplings
from entsense_app.errors import InvalidInput, InvalidParams, NonUniformGrid
from entsense_app.spin_model import MagneticField, SpinSpecies, resonance_frequencies

logger = logging.getLogger(__name__)

DEFAULT_CONTRAST = 0.3
DEFAULT_EVOLUTION_TIME = 2.0  # us
MIN_FFT_SAMPLES = 16
NULL_COUPLING = 1e-12  # MHz


@dataclass(frozen=True, eq=False)
class DeerTrace:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise InvalidInput("Trace times and values differ in length")
        if np.any(np.diff(times) <= 0):
            raise InvalidInput("Trace times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t_us": self.times, "value": self.values})


@dataclass(frozen=True, eq=False)
class Spectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    peaks: pd.DataFrame | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"f_MHz": self.frequencies, "amplitude": self.amplitudes})


class FFTPeak(NamedTuple):
    spectrum: Spectrum
    frequency: float
    resolution: float
    oscillating: bool


@dataclass(frozen=True)
class DarkSpin:
    species: SpinSpecies
    position: tuple[float, float, float]


@dataclass(frozen=True)
class SensitivityParams:
    A_eff: float
    T2: float
    p: float = 1.0
    C: float = DEFAULT_CONTRAST
    n_avg: float = 0.06
    t_I: float = 2.0
    t_R: float = 1.0
    t_other: float = 2.0
    t_deer: float | None = None

    def __post_init__(self):
        for name in ("A_eff", "T2", "p", "n_avg"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.C <= 1:
            raise InvalidParams(f"Contrast must lie in (0, 1], got {self.C}")
        for name in ("t_I", "t_R", "t_other"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.t_deer is not None and not self.t_deer > 0:
            raise InvalidParams(f"t_deer must be positive, got {self.t_deer}")

    @property
    def t_ext(self) -> float:
        return self.t_I + self.t_R + self.t_other


def stretched_envelope(times, T2: float, p: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return np.exp(-((times / T2) ** p))


def entangling_time(A: float) -> float:
    """Optimal entangling evolution 1/(8A), us for A in MHz."""
    if not A > 0:
        raise InvalidInput(f"Coupling must be positive, got {A}")
    return 1.0 / (8.0 * A)


def deer_trace(A_eff: float, T2: float, p: float, times, metadata: dict | None = None) -> DeerTrace:
    if not T2 > 0 or not p > 0:
        raise InvalidParams("T2 and p must be positive")
    times = np.asarray(times, dtype=float)
    values = stretched_envelope(times, T2, p) * np.cos(2 * np.pi * A_eff * times)
    return DeerTrace(times=times, values=values, metadata=dict(metadata or {}, A_eff=A_eff, T2=T2, p=p))


def deer_spectrum(
    geom: SensorPairGeometry,
    state: EntangledState,
    dark_spins: list[DarkSpin],
    field: MagneticField,
    f_range: tuple[float, float],
    f_step: float,
    evolution_time: float = DEFAULT_EVOLUTION_TIME,
) -> Spectrum:
    """
    Frequency scan of the target pi pulse. Each target resonance in range
    registers 1 - cos(2 pi A_eff t) on a flat baseline at its nearest bin.
    """
    f_min, f_max = f_range
    if not f_step > 0 or not f_max > f_min:
        raise InvalidInput(f"Empty scan range {f_range} with step {f_step}")
    n_bins = int(np.floor((f_max - f_min) / f_step + 1e-9)) + 1
    frequencies = f_min + f_step * np.arange(n_bins)
    amplitudes = np.zeros(n_bins)
    peaks = []
    for index, spin in enumerate(dark_spins):
        for transition in resonance_frequencies(spin.species, field):
            if not f_min <= transition.frequency <= f_max:
                continue
            A1, A2 = sensor_couplings(
                geom, state, spin.species, field, [spin.position],
                target_transition=(transition.lower, transition.upper),
            )
            a_eff = float(effective_coupling(state, A1[0], A2[0]))
            if a_eff < NULL_COUPLING:
                continue
            # may be 0 when A_eff t is an integer; the line is still listed
            amplitude = 1.0 - np.cos(2 * np.pi * a_eff * evolution_time)
            bin_index = min(int(round((transition.frequency - f_min) / f_step)), n_bins - 1)
            amplitudes[bin_index] += amplitude
            peaks.append({
                "target": index,
                "species": spin.species.name,
                "transition": f"{transition.lower}->{transition.upper}",
                "f_MHz": transition.frequency,
                "amplitude": amplitude,
                "A_eff_MHz": a_eff,
            })
    logger.info("Spectrum %s: %d peaks in [%.1f, %.1f] MHz", state.name, len(peaks), f_min, f_max)
    table = pd.DataFrame(peaks, columns=["target", "species", "transition", "f_MHz", "amplitude", "A_eff_MHz"])
    return Spectrum(frequencies=frequencies, amplitudes=amplitudes, peaks=table)


def fft_peaks(trace: DeerTrace) -> FFTPeak:
    n = trace.times.size
    if n < MIN_FFT_SAMPLES:
        raise InvalidInput(f"FFT needs at least {MIN_FFT_SAMPLES} samples, got {n}")
    steps = np.diff(trace.times)
    dt = steps[0]
    if not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise NonUniformGrid("FFT needs a uniform time grid")
    magnitudes = np.abs(np.fft.rfft(trace.values))
    frequencies = np.fft.rfftfreq(n, dt)
    dominant = int(np.argmax(magnitudes))
    resolution = 1.0 / (n * dt)
    if dominant == 0:
        logger.debug("No oscillation found in trace")
    return FFTPeak(
        spectrum=Spectrum(frequencies=frequencies, amplitudes=magnitudes),
        frequency=float(frequencies[dominant]),
        resolution=resolution,
        oscillating=dominant != 0,
    )


def _eta(params: SensitivityParams, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    signal = np.pi * params.A_eff * np.sqrt(t) * np.exp(-((t / params.T2) ** params.p))
    readout = np.sqrt(1.0 + 1.0 / (params.C**2 * params.n_avg))
    overhead = np.sqrt(1.0 + params.t_ext / t)
    return readout * overhead / signal


def sensitivity(params: SensitivityParams) -> float:
    if params.t_deer is None:
        raise InvalidParams("t_deer is required to evaluate the sensitivity")
    return float(_eta(params, params.t_deer))


def optimal_deer_time(params: SensitivityParams, grid_points: int = 256) -> tuple[float, float]:
    """
    argmin over (0, 10 T2] of eta(t): log-spaced scan to bracket, then a
    golden-section refinement.
    """
    upper = 10.0 * params.T2
    grid = np.geomspace(upper * 1e-5, upper, grid_points)
    etas = _eta(params, grid)
    best = int(np.argmin(etas))
    if best == 0 or best == grid_points - 1:
        t_star = float(grid[best])
    else:
        result = minimize_scalar(
            lambda t: float(_eta(params, t)),
            bracket=(grid[best - 1], grid[best], grid[best + 1]),
            method="golden",
            options={"xtol": 1e-9},
        )
        t_star = float(np.clip(result.x, grid[best - 1], grid[best + 1]))
    return t_star, sensitivity(replace(params, t_deer=t_star))


def gain_db(eta_ref: float, eta_new: float) -> float:
    if not eta_ref > 0 or not eta_new > 0:
        raise InvalidInput("Sensitivities must be positive")
    return float(10.0 * np.log10(eta_ref / eta_new))
