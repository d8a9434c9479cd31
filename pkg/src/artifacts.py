"""
Artifact writers for experiment outputs.

CSV files start with ``#`` metadata lines (tool version, config hash, seed,
RNG) followed by a header row and the data, written by pandas with a fixed
dialect. Nothing time-dependent goes into these files; the wall-clock
timestamp lives in the ``run_metadata.json`` sidecar only.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

from model import SystemState
from sim import RNG_NAME

logger = logging.getLogger(__name__)

TOOL_NAME = "offload-dp"
TOOL_VERSION = "1.0.0"
FLOAT_FORMAT = "%.12g"
SIDECAR_NAME = "run_metadata.json"


def state_columns(N: int) -> List[str]:
    return [f"n_{i}" for i in range(1, N + 1)]


def state_record(state: SystemState) -> Dict[str, int]:
    return {f"n_{i}": value for i, value in enumerate(state.counts, 1)}


class ArtifactWriter:
    """Writes the files of one experiment run and remembers them for cleanup."""

    def __init__(
        self,
        out_dir: Union[str, Path],
        kind: str,
        config_sha256: str,
        seed: int,
        rng: str = RNG_NAME,
    ):
        """
        Initialize the writer.

        Args:
            out_dir: Directory receiving the artifacts (created if missing)
            kind: Experiment kind, recorded in every header
            config_sha256: Hash of the canonical config
            seed: Effective base seed
            rng: Name of the random generator used
        """
        self.out_dir = Path(out_dir)
        self.kind = kind
        self.config_sha256 = config_sha256
        self.seed = seed
        self.rng = rng
        self.written: List[Path] = []
        self._created_dir = not self.out_dir.exists()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def metadata(self) -> Dict[str, Any]:
        return {
            "tool": TOOL_NAME,
            "tool_version": TOOL_VERSION,
            "kind": self.kind,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "rng": self.rng,
        }

    def _track(self, name: str) -> Path:
        path = self.out_dir / name
        if path not in self.written:
            self.written.append(path)
        return path

    def write_csv(
        self,
        name: str,
        rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]],
        columns: Optional[Sequence[str]] = None,
    ) -> Path:
        """
        Write a CSV artifact with its metadata header.

        Args:
            name: File name inside the output directory
            rows: DataFrame or iterable of row dictionaries
            columns: Column order; required when rows may be empty

        Returns:
            Path of the written file
        """
        if isinstance(rows, pd.DataFrame):
            frame = rows
        else:
            frame = pd.DataFrame(list(rows), columns=columns)
        if columns is not None:
            frame = frame[list(columns)]
        path = self._track(name)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            for key, value in self.metadata().items():
                handle.write(f"# {key}: {value}\n")
            frame.to_csv(handle, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
        logger.debug("wrote %s (%d rows)", path, len(frame))
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._track(name)
        document = {"metadata": self.metadata(), **payload}
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(json.dumps(document, indent=2, sort_keys=True, allow_nan=True))
            handle.write("\n")
        logger.debug("wrote %s", path)
        return path

    def write_sidecar(self, extra: Optional[Dict[str, Any]] = None) -> Path:
        """Run metadata that may differ between identical runs (timestamp, file list)."""
        path = self._track(SIDECAR_NAME)
        document = {
            **self.metadata(),
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": sorted(p.name for p in self.written if p.name != SIDECAR_NAME),
            **(extra or {}),
        }
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(json.dumps(document, indent=2, sort_keys=True))
            handle.write("\n")
        return path

    def cleanup(self) -> None:
        """Delete everything written so far, and the directory if this run created it."""
        for path in self.written:
            try:
                path.unlink()
            except FileNotFoundError:
                pass
        self.written.clear()
        if self._created_dir:
            try:
                self.out_dir.rmdir()
            except OSError:
                logger.warning("left non-empty output directory %s in place", self.out_dir)


def read_artifact(path: Union[str, Path]) -> pd.DataFrame:
    """Load a CSV artifact, skipping its metadata lines."""
    return pd.read_csv(path, comment="#")


def read_metadata(path: Union[str, Path]) -> Dict[str, str]:
    metadata = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            metadata[key] = value
    return metadata
