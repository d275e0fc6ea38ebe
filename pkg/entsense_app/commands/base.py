import argparse
import logging
from dataclasses import dataclass
from pathlib import Path

from entsense_app.dataio import OutputWriter

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    seed: int
    threads: int
    writer: OutputWriter
    config_dir: Path
    args: argparse.Namespace

    def resolve(self, path: str | Path) -> Path:
        """Paths in a config file are relative to that file."""
        path = Path(path)
        return path if path.is_absolute() else self.config_dir / path


def seed_value(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def thread_count(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"thread count must be at least 1, got {text}")
    return value


def common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", required=True, help="experiment config (.toml or .json)")
    parser.add_argument("--seed", type=seed_value, default=None, help="master seed, overrides the config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=thread_count, default=None, help="worker threads")
    parser.add_argument("--validate-only", action="store_true", help="check the config and exit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser
