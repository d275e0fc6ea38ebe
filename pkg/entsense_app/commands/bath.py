import logging

from entsense_app.bath import (
    BathConfig,
    coherence_time,
    fid_signal,
    fit_decay,
    hahn_echo_signal,
    resolve_extent,
    sample_bath,
)
from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig
from entsense_app.entangle import EntangledState
from entsense_app.errors import FitDiverged

logger = logging.getLogger(__name__)


def _bath_config(config: ExperimentConfig, seed: int) -> BathConfig:
    bath = config.require("bath")
    return BathConfig(
        density=bath.density,
        extent=bath.extent,
        seed=seed,
        realizations=bath.realizations,
        species=config.species_named(bath.species) if bath.species is not None else None,
        flip_rate=bath.flip_rate,
        coupling_scale=bath.coupling_scale,
    )


def cmd_bath(config: ExperimentConfig, ctx: RunContext):
    """FID or Hahn-echo decay of every configured state against a random surface bath."""
    coherence = config.require("coherence")
    geometry = config.sensor_geometry()
    bath_config = _bath_config(config, ctx.seed)
    times = coherence.times.times()
    simulate = fid_signal if coherence.protocol == "fid" else hahn_echo_signal
    written = []
    summary = {"protocol": coherence.protocol, "states": {}}
    for name in coherence.states:
        state = EntangledState.named(name, sensor=config.state.sensor)
        curve = simulate(geometry, state, bath_config, times, threads=ctx.threads)
        written.append(ctx.writer.write_csv(f"{coherence.protocol}_{name}.csv", curve.to_frame()))
        entry = {"coherence_time_us": coherence_time(curve.times, curve.signal)}
        if coherence.fit:
            try:
                fit = fit_decay(curve.times, curve.signal)
                entry.update(T2_us=fit.T2, p=fit.p, fit_residual=fit.residual)
            except FitDiverged as exc:
                logger.warning("Decay fit for %s failed: %s", name, exc)
                entry["fit_error"] = str(exc)
        summary["states"][name] = entry
    if coherence.export_baths:
        resolved = resolve_extent(geometry, EntangledState.named("single"), bath_config)
        for index in range(min(coherence.export_baths, resolved.realizations)):
            written.append(ctx.writer.write_csv(f"bath_{index:04d}.csv", sample_bath(resolved, index).to_frame()))
    written.append(ctx.writer.write_json(f"{coherence.protocol}.json", summary))
    return written


def register(subparsers):
    parser = subparsers.add_parser("bath", parents=[common_parser()], help="bath-induced FID and Hahn-echo decay")
    parser.set_defaults(run=cmd_bath)
