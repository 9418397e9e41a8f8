"""Artifact persistence module.

This module writes and reads the JSON and CSV files produced by each command.
"""

import csv
import json
import logging
import math
import os
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from ergodic_inventory.errors import ConfigError

logger = logging.getLogger(__name__)

OPTIMUM_FILE = "optimum.json"
EVALUATIONS_FILE = "evaluations.csv"
CERTIFICATE_FILE = "certificate.json"
RESIDUALS_FILE = "residuals.csv"
SIMULATION_FILE = "simulation.json"
TRACE_FILE = "trace.csv"
HISTOGRAM_FILE = "histogram.csv"
COMPARE_FILE = "compare.csv"
SUMMARY_FILE = "summary.md"
PLOT_FILE = "value_function.png"
# optimum.json key holding the digest of the settings that produced it
FINGERPRINT_KEY = "fingerprint"

EVALUATIONS_HEADER = ("stage", "objective", "s", "S", "value")
TRACE_HEADER = ("time", "state", "cumulative_order", "cumulative_cost")
HISTOGRAM_HEADER = ("bin_left", "bin_right", "mass")
COMPARE_HEADER = (
    "j", "base_cost", "truncated_cost", "gap", "gap_ci", "bound", "within_bound"
)
RESIDUALS_HEADER = ("z", "residual")


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays, and non-finite floats, for JSON."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class ArtifactStore:
    """Reads and writes the artifacts of one output directory."""

    def __init__(self, directory: str):
        """Initialize the store.

        Args:
            directory: Output directory, created on first write
        """
        self.directory = directory

    def path(self, name: str) -> str:
        """Return the full path of an artifact."""
        return os.path.join(self.directory, name)

    def exists(self, name: str) -> bool:
        """Check whether an artifact has been written."""
        return os.path.exists(self.path(name))

    def _ensure_directory(self) -> None:
        os.makedirs(self.directory, exist_ok=True)

    def write_json(self, name: str, data: Dict[str, Any]) -> str:
        """Write a JSON artifact with sorted keys.

        Returns:
            Path of the written file
        """
        self._ensure_directory()
        target = self.path(name)
        with open(target, "w") as f:
            json.dump(_plain(data), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.debug(f"Wrote {target}")
        return target

    def read_json(self, name: str) -> Dict[str, Any]:
        """Read a JSON artifact.

        Raises:
            ConfigError: If the file is missing or corrupted
        """
        target = self.path(name)
        if not os.path.exists(target):
            raise ConfigError(f"Artifact not found: {target}")
        try:
            with open(target) as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error loading artifact {target}: {e}")
            raise ConfigError(f"Could not read artifact {target}: {e}") from e

    def write_csv(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> str:
        """Write a CSV artifact with a fixed header.

        Returns:
            Path of the written file
        """
        self._ensure_directory()
        target = self.path(name)
        count = 0
        with open(target, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
                count += 1
        logger.debug(f"Wrote {count} row(s) to {target}")
        return target

    def read_csv(self, name: str) -> Dict[str, list]:
        """Read a CSV artifact into columns of strings."""
        target = self.path(name)
        if not os.path.exists(target):
            raise ConfigError(f"Artifact not found: {target}")
        with open(target, newline="") as f:
            reader = csv.DictReader(f)
            columns: Dict[str, list] = {k: [] for k in reader.fieldnames or []}
            for row in reader:
                for key, value in row.items():
                    columns[key].append(value)
        return columns

    def write_text(self, name: str, text: str) -> str:
        """Write a text artifact."""
        self._ensure_directory()
        target = self.path(name)
        with open(target, "w") as f:
            f.write(text)
        return target

    def read_optional_json(self, name: str) -> Optional[Dict[str, Any]]:
        """Read a JSON artifact, or return None if it does not exist."""
        return self.read_json(name) if self.exists(name) else None
