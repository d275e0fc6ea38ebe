import logging

from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig
from entsense_app.entangle import SENSING_THRESHOLD, coupling_map, map_sensing_area, resolution_scan
from entsense_app.errors import ConfigError
from entsense_app.spin_model import SpinSpecies

logger = logging.getLogger(__name__)


def _target_species(config: ExperimentConfig) -> SpinSpecies:
    maps = config.maps
    if maps.target_species is not None:
        return config.species_named(maps.target_species)
    if config.bath is not None and config.bath.species is not None:
        return config.species_named(config.bath.species)
    return SpinSpecies.electron("bath")


def cmd_map_resolution(config: ExperimentConfig, ctx: RunContext):
    """Coupling maps on the interface plane and effective-sensing-area scans."""
    maps = config.require("maps")
    if maps.grid is None and maps.resolution is None:
        raise ConfigError("maps needs a 'grid' or a 'resolution' table")
    geometry = config.sensor_geometry()
    target = _target_species(config)
    written = []
    if maps.grid is not None:
        state = config.state.build()
        cmap = coupling_map(geometry, state, target, config.main_field(), maps.grid.build())
        threshold = maps.resolution.threshold if maps.resolution is not None else SENSING_THRESHOLD
        written.append(ctx.writer.write_csv(f"map_{state.name}.csv", cmap.to_frame()))
        written.append(ctx.writer.write_json(f"map_{state.name}.json", {
            "state": state.name,
            "threshold": threshold,
            "sensing_area_nm2": map_sensing_area(cmap, threshold),
        }))
    if maps.resolution is not None:
        bath = config.require("bath")
        table = resolution_scan(
            maps.resolution.depths,
            maps.resolution.separations,
            density=bath.density,
            realizations=bath.realizations,
            base_geometry=geometry,
            seed=ctx.seed,
            bath_species=target,
            threshold=maps.resolution.threshold,
            extent=bath.extent,
            threads=ctx.threads,
        )
        written.append(ctx.writer.write_csv("resolution.csv", table))
    return written


def register(subparsers):
    parser = subparsers.add_parser("map-resolution", parents=[common_parser()], help="coupling maps and sensing-area scans")
    parser.set_defaults(run=cmd_map_resolution)
