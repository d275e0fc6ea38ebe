import argparse
import json
import logging
import sys
from pathlib import Path

from entsense_app import __version__
from entsense_app.commands import register_commands
from entsense_app.commands.base import RunContext
from entsense_app.config import load_config, runtime_defaults
from entsense_app.dataio import OutputWriter
from entsense_app.errors import ConfigError, EntsenseError, error_payload

logger = logging.getLogger("entsense_app")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entsense", description="Entangled spin-sensor simulation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers)
    return parser


def _report(exc: Exception) -> None:
    sys.stderr.write(json.dumps(error_payload(exc)) + "\n")


def main(argv: list[str] | None = None) -> int:
    """
    Parse flags, load the experiment config and run one command.
    Exit codes: 0 ok, 2 config error, 3 compute error.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        defaults = runtime_defaults()
        config = load_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        if args.validate_only:
            logger.info("Config %s is valid (%s)", args.config, config.config_hash()[:12])
            return EXIT_OK
        out_dir = args.out or config.output.dir or defaults["out"]
        writer = OutputWriter(out_dir, config.config_hash(), config.seed, config.output.prefix)
        ctx = RunContext(
            seed=config.seed,
            threads=args.threads or defaults["threads"],
            writer=writer,
            config_dir=Path(args.config).resolve().parent,
            args=args,
        )
        written = args.run(config, ctx)
    except ConfigError as exc:
        logger.error("Config error: %s", exc)
        _report(exc)
        return EXIT_CONFIG
    except EntsenseError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _report(exc)
        return EXIT_COMPUTE
    logger.info("%s finished, %d files in %s", args.command, len(written), writer.out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
