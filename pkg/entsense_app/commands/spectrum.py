import logging

import numpy as np

from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig
from entsense_app.errors import ConfigError
from entsense_app.protocols import DarkSpin, deer_spectrum
from entsense_app.spin_model import field_sweep

logger = logging.getLogger(__name__)


def cmd_spectrum(config: ExperimentConfig, ctx: RunContext):
    """Target frequency scan with the configured state, plus an optional field sweep."""
    scan = config.require("spectrum")
    if not config.dark_spins and scan.sweep is None:
        raise ConfigError("spectrum needs 'dark_spins' or a 'spectrum.sweep' table")
    written = []
    if config.dark_spins:
        dark_spins = [DarkSpin(config.species_named(d.species), d.position) for d in config.dark_spins]
        state = config.state.build()
        spectrum = deer_spectrum(
            config.sensor_geometry(),
            state,
            dark_spins,
            config.main_field(),
            (scan.f_min, scan.f_max),
            scan.f_step,
            evolution_time=scan.evolution_time,
        )
        written.append(ctx.writer.write_csv("spectrum.csv", spectrum.to_frame()))
        written.append(ctx.writer.write_json("peaks.json", {
            "state": state.name,
            "field_G": config.main_field().vector,
            "peaks": spectrum.peaks.to_dict(orient="records"),
        }))
    if scan.sweep is not None:
        sweep = scan.sweep
        magnitudes = sweep.B_min + sweep.B_step * np.arange(int(np.floor((sweep.B_max - sweep.B_min) / sweep.B_step + 1e-9)) + 1)
        frame = field_sweep(config.species_named(sweep.species), sweep.direction, magnitudes)
        written.append(ctx.writer.write_csv("sweep.csv", frame))
    return written


def register(subparsers):
    parser = subparsers.add_parser("spectrum", parents=[common_parser()], help="DEER frequency scan and field sweep")
    parser.set_defaults(run=cmd_spectrum)
