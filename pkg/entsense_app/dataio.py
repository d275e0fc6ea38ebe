"""
Output files with provenance, and measurement ingest.
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from entsense_app import __version__
from entsense_app.dipolar import TransitionPair
from entsense_app.errors import ConfigError, EmptyInput, InvalidInput
from entsense_app.localize import CouplingMeasurement
from entsense_app.spin_model import MagneticField

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = [
    "Bx_G", "By_G", "Bz_G", "sensor_j", "sensor_jp", "target_j", "target_jp", "A_MHz", "sigma_MHz",
]
FLOAT_FORMAT = "%.10g"


def _to_builtin(value):
    """JSON-ready copy: arrays to lists, numpy scalars unboxed, inf and nan to null."""
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class OutputWriter:
    """
    Writes CSV and JSON files into one directory. CSV files start with a
    '#' header; JSON files carry the same fields under "provenance".
    """

    def __init__(self, out_dir: str | Path, config_hash: str, seed: int, prefix: str = ""):
        self.out_dir = Path(out_dir)
        self.prefix = prefix
        self.provenance = {"version": __version__, "config_sha256": config_hash, "seed": seed}
        self.written: list[Path] = []

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{self.prefix}{name}"
        self.written.append(path)
        return path

    def header(self) -> str:
        return "".join(f"# {key}: {value}\n" for key, value in self.provenance.items())

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        with open(path, "w", newline="") as f:
            f.write(self.header())
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info("Wrote %s (%d rows)", path, len(frame))
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self._path(name)
        document = _to_builtin({"provenance": self.provenance, **payload})
        path.write_text(json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + "\n")
        logger.info("Wrote %s", path)
        return path


def read_table(path: str | Path) -> pd.DataFrame:
    """CSV written by `OutputWriter`, header comments skipped."""
    return pd.read_csv(path, comment="#")


def read_measurements(path: str | Path) -> list[CouplingMeasurement]:
    try:
        frame = read_table(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"Measurement file not found: {path}") from exc
    missing = [c for c in MEASUREMENT_COLUMNS if c not in frame.columns]
    if missing:
        raise InvalidInput(f"Measurement file {path} lacks columns {missing}")
    if frame.empty:
        raise EmptyInput(f"Measurement file {path} has no rows")
    measurements = []
    for row in frame.itertuples(index=False):
        measurements.append(CouplingMeasurement(
            field=MagneticField((row.Bx_G, row.By_G, row.Bz_G)),
            transitions=TransitionPair((int(row.sensor_j), int(row.sensor_jp)), (int(row.target_j), int(row.target_jp))),
            A_measured=float(row.A_MHz),
            sigma=float(row.sigma_MHz),
        ))
    logger.info("Read %d measurements from %s", len(measurements), path)
    return measurements


def measurements_frame(measurements: list[CouplingMeasurement]) -> pd.DataFrame:
    rows = []
    for m in measurements:
        bx, by, bz = m.field.vector
        rows.append({
            "Bx_G": bx, "By_G": by, "Bz_G": bz,
            "sensor_j": m.transitions.sensor[0], "sensor_jp": m.transitions.sensor[1],
            "target_j": m.transitions.target[0], "target_jp": m.transitions.target[1],
            "A_MHz": m.A_measured, "sigma_MHz": m.sigma,
        })
    return pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS)
