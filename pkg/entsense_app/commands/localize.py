import logging

from entsense_app.commands.base import RunContext, common_parser
from entsense_app.config import ExperimentConfig
from entsense_app.dataio import read_measurements
from entsense_app.errors import ConfigError
from entsense_app.localize import localize, uncertainty_ellipsoid

logger = logging.getLogger(__name__)


def cmd_localize(config: ExperimentConfig, ctx: RunContext):
    settings = config.require("localize")
    source = ctx.args.measurements or settings.measurements
    if source is None:
        raise ConfigError("localize needs a measurement CSV (--measurements or 'localize.measurements')")
    path = ctx.resolve(source) if ctx.args.measurements is None else source
    measurements = read_measurements(path)
    search = None
    if settings.search is not None:
        search = settings.search.build()
    result = localize(
        measurements,
        config.species_named(settings.sensor),
        config.species_named(settings.target),
        search_region=search,
        sensor_position=settings.sensor_position,
        use_magnitude=settings.use_magnitude,
    )
    ellipsoid = uncertainty_ellipsoid(result, settings.confidence)
    return [ctx.writer.write_json("localize.json", {
        **result.to_dict(),
        "measurements": len(measurements),
        "ellipsoid": {
            "confidence": settings.confidence,
            "semi_axes_nm": ellipsoid.semi_axes,
            "axes": ellipsoid.axes,
            "degenerate": ellipsoid.degenerate,
        },
    })]


def register(subparsers):
    parser = subparsers.add_parser("localize", parents=[common_parser()], help="3D target position from couplings")
    parser.add_argument("--measurements", default=None, help="measurement CSV, overrides the config")
    parser.set_defaults(run=cmd_localize)
