import logging

from entsense_app.bath import TelegraphConfig, coherence_time, envelope_time, metastable_deer_trace, t2_track
from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig
from entsense_app.entangle import effective_coupling, sensor_couplings
from entsense_app.errors import ConfigError
from entsense_app.protocols import entangling_time, fft_peaks

logger = logging.getLogger(__name__)


def _coupling(config: ExperimentConfig) -> float:
    deer = config.deer
    if deer.A_eff is not None:
        return deer.A_eff
    dark = config.dark_spins[deer.target]
    state = config.state.build()
    A1, A2 = sensor_couplings(
        config.sensor_geometry(),
        state,
        config.species_named(dark.species),
        config.main_field(),
        [dark.position],
        target_transition=deer.target_transition,
    )
    return float(effective_coupling(state, A1[0], A2[0]))


def cmd_deer(config: ExperimentConfig, ctx: RunContext):
    deer = config.require("deer")
    A = _coupling(config)
    times = deer.times.times()
    telegraph = TelegraphConfig(**deer.telegraph.model_dump()) if deer.telegraph is not None else None
    written = []
    summary = {"A_eff_MHz": A, "T2_us": deer.T2, "p": deer.p, "regimes": {}}
    if A > 0:
        summary["entangling_time_us"] = entangling_time(A)
    for regime in deer.regimes:
        trace = metastable_deer_trace(
            regime, A, deer.T2, deer.p, times,
            telegraph=telegraph, trajectories=deer.trajectories, seed=ctx.seed,
        )
        written.append(ctx.writer.write_csv(f"deer_{regime}.csv", trace.to_frame()))
        entry = {
            "envelope_time_us": envelope_time(trace.times, trace.values),
            "coherence_time_us": coherence_time(trace.times, trace.values),
        }
        if deer.fft:
            peak = fft_peaks(trace)
            entry.update(fft_frequency_MHz=peak.frequency, fft_resolution_MHz=peak.resolution, oscillating=peak.oscillating)
            written.append(ctx.writer.write_csv(f"fft_{regime}.csv", peak.spectrum.to_frame()))
        summary["regimes"][regime] = entry
    if config.track is not None:
        if telegraph is None:
            raise ConfigError("a T2 track needs 'deer.telegraph'")
        track = t2_track(telegraph, A, deer.T2, deer.p, times, config.track.duration, config.track.window, seed=ctx.seed)
        written.append(ctx.writer.write_csv("t2_track.csv", track))
    written.append(ctx.writer.write_json("deer.json", summary))
    return written


def register(subparsers):
    parser = subparsers.add_parser("deer", parents=[common_parser()], help="DEER traces, FFT peaks, metastable regimes")
    parser.set_defaults(run=cmd_deer)
