"""Pipelines for validating scenario input and exporting run results."""

import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
from pydantic import ValidationError

from delaywalk import settings
from delaywalk.exceptions import ConfigurationError
from delaywalk.items import Scenario
from delaywalk.lattice import LatticeLaw
from delaywalk.simulator import EnsembleResult, Trajectory

logger = logging.getLogger(__name__)


class ValidationPipeline:
    """
    Validates scenario documents using Pydantic models.

    Ensures every document conforms to the Scenario schema.
    """

    def process(self, payload: Dict[str, Any]) -> Scenario:
        """
        Validate a scenario payload.

        Args:
            payload: Parsed JSON document

        Returns:
            Validated Scenario

        Raises:
            ConfigurationError: If validation fails
        """
        try:
            return Scenario(**payload)
        except ValidationError as e:
            logger.error(f"Scenario validation failed: {e}")
            raise ConfigurationError(f"Invalid scenario: {e}")
        except TypeError as e:
            raise ConfigurationError(f"Invalid scenario: {e}")


def round_significant(value: Any, digits: int = settings.JSON_SIGNIFICANT_DIGITS) -> Any:
    """Round every float in a nested structure to `digits` significant digits."""
    if isinstance(value, dict):
        return {k: round_significant(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_significant(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return round_significant(value.tolist(), digits)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.{digits}g}")
    return value


def format_number(value: float, digits: int = settings.JSON_SIGNIFICANT_DIGITS) -> str:
    """Plain `.`-decimal text for CSV cells."""
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return f"{float(value):.{digits}g}"


class ExportPipeline:
    """
    Writes JSON and CSV outputs atomically (temporary file, then rename).

    Every file carries the scenario hash, seed and tool version.
    """

    def __init__(self, metadata: Dict[str, Any]):
        """
        Initialize the pipeline.

        Args:
            metadata: Identity block (scenario hash, seed, version)
        """
        self.metadata = metadata
        self.written: List[Path] = []

    def _atomic_write(self, path: Path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(handle, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(temp_name, path)
        except BaseException:
            if os.path.exists(temp_name):
                os.unlink(temp_name)
            raise
        self.written.append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, path: Path, payload: Dict[str, Any]) -> Path:
        document = {"metadata": self.metadata, **payload}
        text = json.dumps(round_significant(document), indent=2, sort_keys=True) + "\n"
        return self._atomic_write(path, text)

    def _write_csv(self, path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        buffer.write(
            f"# scenario_hash={self.metadata['scenario_hash']} seed={self.metadata['seed']} "
            f"version={self.metadata['version']}\n"
        )
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) if isinstance(v, (float, int, np.number)) else v for v in row])
        return self._atomic_write(path, buffer.getvalue())

    def write_ensemble_csv(self, path: Path, ensemble: EnsembleResult) -> Path:
        """One row per trajectory; one column per probe time and coordinate."""
        header = ["trajectory"]
        for t in ensemble.probes:
            if ensemble.dimension == 1:
                header.append(f"t={format_number(t)}")
            else:
                header.extend(f"t={format_number(t)}:x{k}" for k in range(ensemble.dimension))
        rows = (
            [i, *ensemble.values[i].ravel().tolist()]
            for i in range(ensemble.n)
        )
        return self._write_csv(path, header, rows)

    def write_paths_csv(self, path: Path, trajectories: Sequence[Trajectory]) -> Path:
        """
        Event log per trajectory: the value U(0) at t=0, one row per jump
        and a closing row at the horizon.
        """
        if not trajectories:
            raise ConfigurationError("No trajectories to write")
        dimension = trajectories[0].history.dimension
        header = ["trajectory", "t"] + [f"x{k}" for k in range(dimension)]

        def rows():
            for index, trajectory in enumerate(trajectories):
                yield [index, 0.0, *trajectory.evaluate(0.0).tolist()]
                for t, value in zip(trajectory.times, trajectory.values):
                    yield [index, t, *np.asarray(value).tolist()]
                yield [index, trajectory.horizon, *trajectory.evaluate(trajectory.horizon).tolist()]

        return self._write_csv(path, header, rows())

    def write_law_csv(self, path: Path, law: LatticeLaw) -> Path:
        """Offsets per coordinate, then mass."""
        header = [f"x{k}" for k in range(law.dimension)] + ["mass"]
        rows = ([*offset, float(mass)] for offset, mass in zip(law.offsets.tolist(), law.masses))
        return self._write_csv(path, header, rows)

    def write_samples_csv(self, path: Path, t: float, samples: np.ndarray) -> Path:
        """Rescaled Z-samples at probe t, for external plotting."""
        samples = np.atleast_2d(samples)
        header = ["t"] + [f"z{k}" for k in range(samples.shape[1])]
        rows = ([t, *row] for row in samples.tolist())
        return self._write_csv(path, header, rows)

