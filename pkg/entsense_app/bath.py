"""
Random interface spin baths, Monte-Carlo free-induction and Hahn-echo decay
of single and entangled sensors, envelope fitting, and metastable
(telegraph) target spins.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.optimize import curve_fit

from entsense_app.entangle import EntangledState, SensorPairGeometry, effective_coupling, sensor_couplings
from entsense_app.errors import FitDiverged, InvalidInput
from entsense_app.protocols import DeerTrace, stretched_envelope
from entsense_app.spin_model import SpinSpecies
from entsense_app.workers import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_REALIZATIONS = 1000
EXTENT_DEPTH_FACTOR = 5.0
EXTENT_TOLERANCE = 0.01
FIT_RESIDUAL_LIMIT = 0.05
OSCILLATION_POWER_LIMIT = 0.20
P_BOUNDS = (0.5, 3.0)
MIN_FIT_POINTS = 8


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit substream seed for task `index` of a master seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class BathConfig:
    density: float  # spins per nm^2
    extent: float  # half-width of the sampled square, nm
    seed: int = 0
    realizations: int = DEFAULT_REALIZATIONS
    depth: float | None = None
    species: SpinSpecies | None = None
    flip_rate: float = 0.0  # 1/us
    coupling_scale: float = 1.0  # multiplies every bath coupling

    def __post_init__(self):
        if self.density < 0:
            raise InvalidInput(f"Bath density must be nonnegative, got {self.density}")
        if not self.extent > 0:
            raise InvalidInput(f"Bath extent must be positive, got {self.extent}")
        if self.realizations < 1:
            raise InvalidInput("At least one realization is required")
        if self.flip_rate < 0:
            raise InvalidInput(f"Flip rate must be nonnegative, got {self.flip_rate}")
        if not self.coupling_scale > 0:
            raise InvalidInput(f"Coupling scale must be positive, got {self.coupling_scale}")
        if self.species is None:
            object.__setattr__(self, "species", SpinSpecies.electron("bath"))


@dataclass(frozen=True, eq=False)
class SurfaceBath:
    positions: np.ndarray  # (n, 3) nm, all on z = 0
    states: np.ndarray  # (n,) eigenstate index
    species: SpinSpecies

    def __len__(self):
        return len(self.states)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.positions[:, 0],
            "y": self.positions[:, 1],
            "species": self.species.name,
            "state": self.states,
        })


@dataclass(frozen=True, eq=False)
class CoherenceCurve:
    times: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t_us": self.times, "signal": self.signal, "stderr": self.stderr})


class DecayFit(NamedTuple):
    T2: float
    p: float
    residual: float


@dataclass(frozen=True)
class TelegraphConfig:
    rate_on_off: float  # 1/us
    rate_off_on: float  # 1/us
    initial: str = "on"

    def __post_init__(self):
        if self.rate_on_off < 0 or self.rate_off_on < 0:
            raise InvalidInput("Telegraph rates must be nonnegative")
        if self.initial not in ("on", "off"):
            raise InvalidInput(f"Initial telegraph state must be 'on' or 'off', got {self.initial!r}")


def sample_bath(config: BathConfig, realization_index: int) -> SurfaceBath:
    rng = np.random.default_rng([config.seed, realization_index])
    count = rng.poisson(config.density * (2 * config.extent) ** 2)
    xy = rng.uniform(-config.extent, config.extent, size=(count, 2))
    positions = np.column_stack([xy, np.zeros(count)])
    states = rng.integers(0, config.species.multiplicity, size=count)
    return SurfaceBath(positions=positions, states=states, species=config.species)


def bath_couplings(geom: SensorPairGeometry, state: EntangledState, config: BathConfig, bath: SurfaceBath) -> np.ndarray:
    """Effective coupling |A_eff,i| of every bath spin, MHz."""
    if len(bath) == 0:
        return np.zeros(0)
    A1, A2 = sensor_couplings(geom, state, config.species, geom.field, bath.positions)
    return config.coupling_scale * np.atleast_1d(effective_coupling(state, A1, A2))


def _continuum_signal(geom: SensorPairGeometry, state: EntangledState, species: SpinSpecies, extent: float, pitch: float) -> float:
    axis = np.arange(-extent + pitch / 2, extent, pitch)
    xx, yy = np.meshgrid(axis, axis)
    points = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    A1, A2 = sensor_couplings(geom, state, species, geom.field, points)
    return float(np.sqrt(np.sum(np.asarray(effective_coupling(state, A1, A2)) ** 2) * pitch**2))


def resolve_extent(geom: SensorPairGeometry, state: EntangledState, config: BathConfig, max_steps: int = 12) -> BathConfig:
    """
    Grow the sampled square until a further 1.5x growth changes the
    continuum S_total by less than 1%. Never below 5x the sensor depth.
    """
    depth = config.depth if config.depth is not None else float(-geom.positions[:, 2].min())
    extent = max(config.extent, EXTENT_DEPTH_FACTOR * depth)
    pitch = depth / 4
    current = _continuum_signal(geom, state, config.species, extent, pitch)
    for _ in range(max_steps):
        grown = _continuum_signal(geom, state, config.species, 1.5 * extent, pitch)
        if grown == 0 or abs(grown - current) / grown < EXTENT_TOLERANCE:
            break
        extent, current = 1.5 * extent, grown
    if extent != config.extent:
        logger.debug("Bath extent resolved to %.1f nm", extent)
    return replace(config, extent=extent, depth=depth)


def _ensemble_average(curves: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stack = np.vstack(curves)
    count = stack.shape[0]
    mean = np.array([math.fsum(column) / count for column in stack.T])
    if count == 1:
        return mean, np.zeros_like(mean)
    deviations = stack - mean
    variance = np.array([math.fsum(column) for column in (deviations**2).T]) / (count - 1)
    return mean, np.sqrt(variance / count)


def _simulate(geom, state, config, times, per_spin, threads) -> CoherenceCurve:
    times = np.asarray(times, dtype=float)
    config = resolve_extent(geom, state, config)

    def _realization(index: int) -> np.ndarray:
        couplings = bath_couplings(geom, state, config, sample_bath(config, index))
        if couplings.size == 0:
            return np.ones_like(times)
        return np.prod(per_spin(couplings[:, None], times[None, :]), axis=0)

    curves = parallel_map(_realization, range(config.realizations), threads)
    signal, stderr = _ensemble_average(curves)
    return CoherenceCurve(times=times, signal=signal, stderr=stderr)


def fid_signal(geom: SensorPairGeometry, state: EntangledState, config: BathConfig, times, threads: int = 1) -> CoherenceCurve:
    """Quasi-static bath: each spin contributes cos(pi A_eff t)."""
    logger.info("FID %s: %d realizations", state.name, config.realizations)
    return _simulate(geom, state, config, times, lambda a, t: np.cos(np.pi * a * t), threads)


def telegraph_echo(amplitude, rate: float, times) -> np.ndarray:
    """
    Hahn echo of a sensor detuned by +-amplitude (rad/us) by a symmetric
    random telegraph fluctuator switching at `rate` (1/us).
    """
    b = np.asarray(amplitude, dtype=float)
    t = np.asarray(times, dtype=float)
    mu = np.sqrt((rate**2 - b**2).astype(complex))
    z = mu * t
    small = np.abs(z) < 1e-6
    safe_z = np.where(small, 1.0, z)
    sinh_term = np.where(small, 1.0, np.sinh(safe_z) / safe_z) * t
    cosh_term = np.where(small, 0.5, (np.cosh(safe_z) - 1.0) / safe_z**2) * t**2
    echo = np.exp(-rate * t) * (1.0 + rate * sinh_term + rate**2 * cosh_term)
    return np.clip(echo.real, -1.0, 1.0)


def hahn_echo_signal(
    geom: SensorPairGeometry,
    state: EntangledState,
    config: BathConfig,
    times,
    threads: int = 1,
) -> CoherenceCurve:
    """Echo decay with every bath spin flipping at `config.flip_rate`."""
    logger.info("Hahn echo %s: %d realizations, flip rate %.3g/us", state.name, config.realizations, config.flip_rate)
    rate = config.flip_rate
    return _simulate(geom, state, config, times, lambda a, t: telegraph_echo(np.pi * a, rate, t), threads)


def coherence_time(times, signal) -> float:
    """First 1/e crossing, linearly interpolated; inf when never reached."""
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    below = np.nonzero(signal < np.exp(-1))[0]
    if below.size == 0:
        return math.inf
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1, s0, s1 = times[k - 1], times[k], signal[k - 1], signal[k]
    return float(t0 + (s0 - np.exp(-1)) * (t1 - t0) / (s0 - s1))


def envelope_time(times, signal) -> float:
    """1/e time of the running-maximum envelope of |signal|."""
    envelope = np.maximum.accumulate(np.abs(np.asarray(signal, dtype=float))[::-1])[::-1]
    return coherence_time(times, envelope)


def _stretched_model(t, T2, p):
    return np.exp(-((t / T2) ** p))


def fit_decay(times, signal) -> DecayFit:
    """
    Least-squares stretched-exponential fit exp(-(t/T2)^p), p in [0.5, 3].
    Oscillating or non-decaying curves raise FitDiverged.
    """
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if times.size < MIN_FIT_POINTS:
        raise InvalidInput(f"Decay fit needs at least {MIN_FIT_POINTS} points, got {times.size}")
    if signal[0] - np.min(signal) < 1e-3:
        raise FitDiverged("Curve shows no decay")
    guess = coherence_time(times, signal)
    if not math.isfinite(guess) or guess <= 0:
        guess = float(times[-1])
    try:
        (T2, p), _ = curve_fit(
            _stretched_model,
            times,
            signal,
            p0=(guess, 1.0),
            bounds=([1e-9, P_BOUNDS[0]], [np.inf, P_BOUNDS[1]]),
            maxfev=10000,
        )
    except RuntimeError as exc:
        raise FitDiverged(f"Decay fit did not converge: {exc}") from exc
    residual_curve = signal - _stretched_model(times, T2, p)
    residual = float(np.sqrt(np.mean(residual_curve**2)))
    if residual > FIT_RESIDUAL_LIMIT:
        raise FitDiverged(f"Fit residual {residual:.3g} above {FIT_RESIDUAL_LIMIT}")
    steps = np.diff(times)
    if np.allclose(steps, steps[0], rtol=1e-9):
        residual_power = np.abs(np.fft.rfft(residual_curve))[1:] ** 2
        signal_power = np.sum(np.abs(np.fft.rfft(signal))[1:] ** 2)
        if signal_power > 0 and residual_power.max(initial=0.0) > OSCILLATION_POWER_LIMIT * signal_power:
            raise FitDiverged("Residual carries a coherent oscillation")
    return DecayFit(T2=float(T2), p=float(p), residual=residual)


def telegraph_trajectory(config: TelegraphConfig, duration: float, seed: int) -> np.ndarray:
    """Switching times in (0, duration) with exponential holding times."""
    if not duration > 0:
        raise InvalidInput(f"Duration must be positive, got {duration}")
    rng = np.random.default_rng(seed)
    switches = []
    on = config.initial == "on"
    now = 0.0
    while True:
        rate = config.rate_on_off if on else config.rate_off_on
        if rate == 0:
            break
        now += rng.exponential(1.0 / rate)
        if now >= duration:
            break
        switches.append(now)
        on = not on
    return np.asarray(switches)


def _switching_phase(switches: np.ndarray, initial_on: bool, times: np.ndarray, rng) -> np.ndarray:
    """
    Accumulated target-on time with a fresh random spin projection (+-1) on
    every return to the magnetic configuration. The first interval is +1.
    """
    horizon = times[-1]
    bounds = np.concatenate([[0.0], switches[switches < horizon], [horizon]])
    n_intervals = bounds.size - 1
    on = (np.arange(n_intervals) % 2 == 0) == initial_on
    signs = rng.choice((-1.0, 1.0), size=n_intervals)
    if initial_on:
        signs[0] = 1.0
    rates = np.where(on, signs, 0.0)
    cumulative = np.concatenate([[0.0], np.cumsum(rates * np.diff(bounds))])
    return np.interp(times, bounds, cumulative)


def metastable_deer_trace(
    regime: str,
    A: float,
    T2: float,
    p: float,
    times,
    telegraph: TelegraphConfig | None = None,
    trajectories: int = 10000,
    seed: int = 0,
) -> DeerTrace:
    times = np.asarray(times, dtype=float)
    envelope = stretched_envelope(times, T2, p)
    metadata = {"regime": regime, "A": A, "T2": T2, "p": p}
    if regime == "on":
        return DeerTrace(times, envelope * np.cos(2 * np.pi * A * times), metadata)
    if regime == "off":
        return DeerTrace(times, envelope, metadata)
    if regime != "switching":
        raise InvalidInput(f"Unknown regime {regime!r}; expected 'on', 'off' or 'switching'")
    if telegraph is None:
        raise InvalidInput("Switching regime needs a telegraph configuration")
    initial_on = telegraph.initial == "on"
    rng = np.random.default_rng([seed, 1])
    total = np.zeros_like(times)
    for k in range(trajectories):
        switches = telegraph_trajectory(telegraph, times[-1] if times[-1] > 0 else 1.0, derive_seed(seed, k))
        total += np.cos(2 * np.pi * A * _switching_phase(switches, initial_on, times, rng))
    return DeerTrace(times, envelope * total / trajectories, metadata)


def t2_track(
    telegraph: TelegraphConfig,
    A: float,
    T2: float,
    p: float,
    times,
    duration: float,
    window: float,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Real-time coherence-time track: the metastable spin's state at the start
    of every window selects the on/off trace whose envelope time is recorded.
    """
    if not window > 0 or not duration >= window:
        raise InvalidInput("Track needs 0 < window <= duration")
    switches = telegraph_trajectory(telegraph, duration, seed)
    initial_on = telegraph.initial == "on"
    starts = np.arange(0.0, duration - window + 1e-12, window)
    t2_on = envelope_time(times, metastable_deer_trace("on", A, T2, p, times).values)
    t2_off = envelope_time(times, metastable_deer_trace("off", A, T2, p, times).values)
    rows = []
    for start in starts:
        flips = int(np.searchsorted(switches, start, side="right"))
        on = (flips % 2 == 0) == initial_on
        rows.append({"window_start": start, "state": "on" if on else "off", "T2_us": t2_on if on else t2_off})
    return pd.DataFrame(rows, columns=["window_start", "state", "T2_us"])
