# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
"""Report and data file output.

Reports are JSON, series are CSV with 17 significant digits. Every file written
through an `OutputDirectory` is listed with its SHA-256 digest in the run
manifest.
"""
import csv
import json
import math
import time
from collections.abc import Iterable
from collections.abc import Sequence
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Field

from .integrate import Trajectory
from .utils import file_digest
from .utils import format_float


logger = structlog.get_logger()

MANIFEST = "manifest.json"


def tool_version() -> str:
    try:
        return version("sfdreduce")
    except PackageNotFoundError:
        return "unknown"


def jsonable(value: Any) -> Any:
    """Plain JSON value of numpy containers and scalars; non-finite floats -> None."""
    if isinstance(value, BaseModel):
        return jsonable(value.dict())
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return [[float(item.real), float(item.imag)] for item in value.ravel()]
        return jsonable(value.tolist())
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def dumps(document: Any) -> str:
    return json.dumps(jsonable(document), indent=2, sort_keys=True, allow_nan=False)


def trajectory_header(s: int, f: int = 0) -> list[str]:
    """`t,x1..xs,dx1..dxs,y1..yf,dy1..dyf`; f = 0 for reduced trajectories."""
    header = ["t"]
    header += [f"x{i}" for i in range(1, s + 1)]
    header += [f"dx{i}" for i in range(1, s + 1)]
    header += [f"y{i}" for i in range(1, f + 1)]
    header += [f"dy{i}" for i in range(1, f + 1)]
    return header


class ManifestEntry(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Record of one CLI run."""

    command: str
    config_path: str | None = None
    parameters: dict[str, Any] = Field(
        default_factory=dict, description="Resolved run options and preset report"
    )
    out: str
    wall_time: float = 0.0
    version: str = Field(default_factory=tool_version)
    verdicts: dict[str, Any] = Field(default_factory=dict)
    files: list[ManifestEntry] = Field(default_factory=list)
    exit_code: int = 0
    error: dict[str, Any] | None = None


class OutputDirectory:
    """Output directory of a run, tracking the files written into it."""

    def __init__(self, out: Path, command: str, config_path: Path | None = None):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.monotonic()
        self.manifest = RunManifest(
            command=command,
            config_path=None if config_path is None else str(config_path),
            out=str(self.out),
        )

    def _record(self, path: Path) -> Path:
        self.manifest.files.append(
            ManifestEntry(path=path.name, sha256=file_digest(path))
        )
        logger.debug("File written", path=str(path))
        return path

    def json(self, name: str, document: Any) -> Path:
        path = self.out / name
        path.write_text(dumps(document) + "\n", encoding="utf-8")
        return self._record(path)

    def csv(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence[float]]
    ) -> Path:
        path = self.out / name
        with path.open("w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(float(value)) for value in row])
        return self._record(path)

    def trajectory(self, name: str, trajectory: Trajectory, s: int, f: int = 0) -> Path:
        rows = np.column_stack([trajectory.times, trajectory.states])
        return self.csv(name, trajectory_header(s, f), rows)

    def verdict(self, stage: str, verdict: Any) -> None:
        self.manifest.verdicts[stage] = jsonable(verdict)

    def write_manifest(
        self, exit_code: int, error: dict[str, Any] | None = None
    ) -> Path:
        """Write the manifest; it is not listed in itself."""
        self.manifest.exit_code = exit_code
        self.manifest.error = None if error is None else jsonable(error)
        self.manifest.wall_time = time.monotonic() - self.started
        path = self.out / MANIFEST
        path.write_text(dumps(self.manifest) + "\n", encoding="utf-8")
        logger.info("Manifest written", path=str(path), exit_code=exit_code)
        return path


def read_manifest(out: Path) -> RunManifest:
    return RunManifest.parse_file(Path(out) / MANIFEST)
