# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-few-public-methods
"""Settings handling.

Run options come from `RunSettings`, a pydantic settings model reading the
environment with prefix SFD_. A configuration document is a flat list of
`key = value` statements separated by newlines or semicolons, values written
as JSON (strings quoted), `#` starting a comment. Keys naming a run option
are run options, all other keys override parameters of the preset.
"""
import json
import os
import re
from collections.abc import Iterator
from pathlib import Path
from typing import Any
from typing import Literal
from typing import NamedTuple

import structlog
from pydantic import BaseSettings
from pydantic import Field

from .exceptions import ConfigError
from .exceptions import UnknownParameter
from .exceptions import UnknownPreset
from .presets import PRESETS


logger = structlog.get_logger()

Method = Literal["adaptive-explicit", "adaptive-implicit", "fixed-reference"]
Form = Literal["mass-normalized", "mass-multiplied"]


class RunSettings(BaseSettings):
    """Options of a single run."""

    class Config:
        """Settings are frozen."""

        frozen = True
        env_prefix = "SFD_"

    system: str = Field("linear-coupled", description="Preset to run")
    mode: str | None = Field(None, description="Sub-mode of the preset")
    eps: float | None = Field(
        None, ge=0.0, description="Small parameter, preset nominal value if unset"
    )
    order: int = Field(0, ge=0, le=1, description="Truncation order of the chart")
    form: Form = Field("mass-normalized", description="Form of the reduced model")
    seed: int = Field(42, description="Seed of all random samplers")
    jobs: int = Field(
        default_factory=lambda: os.cpu_count() or 1,
        ge=1,
        description="Number of concurrent workers, defaults to logical cores",
    )
    out: Path = Field(Path("out"), description="Output directory")
    snap_tol: float = Field(
        1e-5, gt=0.0, description="Manifold distance at which trajectories snap"
    )
    newton_tol: float = Field(
        1e-10, gt=0.0, description="Relative residual of the critical point solver"
    )
    fold_tol: float = Field(
        1e-8, gt=0.0, description="Tolerance of the scaled fold indicator"
    )
    eps_sequence: list[float] | None = Field(
        None, description="Epsilon sequence of the extension check"
    )
    t_span: tuple[float, float] | None = Field(
        None, description="Integration span, a system specific default if unset"
    )
    method: Method = Field(
        "adaptive-implicit", description="Integrator of the full system"
    )
    rtol: float = Field(1e-8, gt=0.0, description="Relative integrator tolerance")
    atol: float = Field(1e-10, gt=0.0, description="Absolute integrator tolerance")
    grid_points: int = Field(9, ge=1, description="Grid points per dimension")
    random_points: int = Field(100, ge=0, description="Random domain samples")
    rays: int = Field(20, ge=1, description="Number of paths searched for folds")
    force: bool = Field(False, description="Continue when verification fails")
    log_level: str = Field("INFO", description="Minimum log level")
    initial_state: list[float] | None = Field(
        None, description="Full initial state (x, x', y, y') of simulations"
    )
    branch_guess: list[float] | None = Field(
        None, description="Initial guess selecting the critical manifold branch"
    )
    k2_sweep: list[float] | None = Field(
        None, description="Fast stiffness values of the local reduction sweep"
    )


RUN_OPTIONS = frozenset(RunSettings.__fields__)

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ParsedConfig(NamedTuple):
    """Configuration document split into preset, overrides and run options."""

    preset: str | None
    overrides: dict[str, Any]
    options: dict[str, Any]


def _statements(text: str) -> Iterator[tuple[int, str]]:
    """Yield (line number, statement) with comments stripped."""
    for number, line in enumerate(text.splitlines(), start=1):
        current: list[str] = []
        quoted = False
        escaped = False
        depth = 0
        for char in line:
            if quoted:
                current.append(char)
                if escaped:
                    escaped = False
                elif char == "\\":
                    escaped = True
                elif char == '"':
                    quoted = False
                continue
            if char == "#":
                break
            if char == '"':
                quoted = True
            elif char in "[{":
                depth += 1
            elif char in "]}":
                depth -= 1
            elif char == ";" and depth == 0:
                yield number, "".join(current)
                current = []
                continue
            current.append(char)
        if quoted:
            raise ConfigError("unterminated string", line=number)
        yield number, "".join(current)


def _value(raw: str, line: int) -> Any:
    raw = raw.strip()
    if not raw:
        raise ConfigError("missing value", line=line)
    if raw in ("none", "None"):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    try:
        return float(raw)
    except ValueError:
        message = f"cannot parse value {raw!r}, strings must be quoted"
        raise ConfigError(message, line=line) from None


def _validated(model: Any, key: str, value: Any, line: int) -> Any:
    field = model.__fields__[key]
    validated, errors = field.validate(value, {}, loc=key)
    if errors:
        raise ConfigError(f"type mismatch for {key}: {value!r}", line=line)
    return validated


def parse_config(text: str) -> ParsedConfig:
    """Parse a configuration document.

    Args:
        text: The document.

    Raises:
        ConfigError: Malformed statement, duplicate key or type mismatch, the
            message carrying the line number.

    Returns:
        Preset id (None if not given), parameter overrides and run options.
    """
    overrides: dict[str, Any] = {}
    options: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for line, statement in _statements(text):
        if not statement.strip():
            continue
        key, separator, raw = statement.partition("=")
        key = key.strip()
        if not separator:
            message = f"expected 'key = value', got {statement.strip()!r}"
            raise ConfigError(message, line=line)
        if not _KEY.fullmatch(key):
            raise ConfigError(f"invalid key {key!r}", line=line)
        if key in lines:
            raise ConfigError(
                f"duplicate key {key}, first set on line {lines[key]}", line=line
            )
        lines[key] = line
        value = _value(raw, line)
        if key in RUN_OPTIONS:
            options[key] = _validated(RunSettings, key, value, line)
        else:
            overrides[key] = value

    preset = options.get("system")
    if preset is not None:
        if preset not in PRESETS:
            raise UnknownPreset(
                f"Unknown preset: {preset}", line=lines["system"], preset=preset
            )
        parameters = PRESETS[preset].parameters
        for key, value in overrides.items():
            if key not in parameters.__fields__:
                raise UnknownParameter(
                    f"Unknown parameter for {preset}: {key}",
                    line=lines[key],
                    unknown=[key],
                )
            overrides[key] = _validated(parameters, key, value, lines[key])
    logger.debug(
        "Configuration parsed",
        preset=preset,
        overrides=sorted(overrides),
        options=sorted(options),
    )
    return ParsedConfig(preset, overrides, options)


def resolve_settings(
    parsed: ParsedConfig, flags: dict[str, Any] | None = None
) -> RunSettings:
    """Merge run options, flags win over the document, which wins over the environment.

    Flags set to None count as not given.
    """
    given = {key: value for key, value in (flags or {}).items() if value is not None}
    return RunSettings(**{**parsed.options, **given})
