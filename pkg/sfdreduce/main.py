# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-locals
"""Command line front end.

    sfdreduce [--config PATH] [--out DIR] [--jobs N] [--order {0,1}] [--eps EPS]
              [--seed SEED] [--force] [--log-level LEVEL]
              {verify,reduce,simulate,fold,compare-local}

Exit codes: 0 success, 1 domain, assumption or numerical failure, 2 usage or
configuration error. The run manifest is written in every case.
"""
import argparse
import asyncio
import logging
from collections.abc import Callable
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import ValidationError

from .config import parse_config
from .config import ParsedConfig
from .config import resolve_settings
from .config import RunSettings
from .critical import spectral_gap_concurrently
from .critical import StabilityCertificate
from .decomposition import A1Verdict
from .decomposition import check_A1
from .exceptions import ConfigError
from .exceptions import DegenerateFold
from .exceptions import NoConvergence
from .exceptions import NoSignChange
from .exceptions import SFDError
from .exceptions import SingularJacobian
from .exceptions import UnstableSample
from .fold import default_rays
from .fold import locate_fold
from .fold import Segment
from .local import compare_reductions
from .local import resonance_sweep
from .local import sweep_entry
from .presets import load_preset
from .presets import Pendulum3
from .presets import TwoDofSSM
from .reduced import build_reduced
from .reduced import ReducedModel
from .reduced import synchronize
from .reduced import SyncVerdict
from .reports import OutputDirectory
from .slow_manifold import SlowManifoldChart
from .systems import DomainSampler
from .systems import make_point
from .systems import MechanicalSystem
from .systems import random_states
from .utils import map_in_threads


logger = structlog.get_logger()

Command = Callable[[MechanicalSystem, RunSettings, OutputDirectory], int]

#: Number of random points of the extension check.
A1_SAMPLES = 25
#: Simulated span of the pendulum runs in seconds.
PENDULUM_SECONDS = 20.0


def configure_logging(level: str) -> None:
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level.upper())
        )
    )


def _sampler(settings: RunSettings) -> DomainSampler:
    return DomainSampler(
        grid_points=settings.grid_points,
        random_points=settings.random_points,
        seed=settings.seed,
    )


def _chart(system: MechanicalSystem, settings: RunSettings) -> SlowManifoldChart:
    return SlowManifoldChart(
        system,
        order=settings.order,
        branch_guess=settings.branch_guess,
        tol=settings.newton_tol,
    )


def run_checks(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> tuple[bool, StabilityCertificate | None]:
    """Extension check, critical points and stability on the domain sample.

    Writes a1.json, a2.json and a3.json and records the verdicts.
    """
    states = random_states(system, A1_SAMPLES, settings.seed)
    points = [make_point(x, xdot, y, ydot, t) for x, xdot, y, ydot, t in states]
    a1 = check_A1(system, points, settings.eps_sequence)
    output.json("a1.json", a1.export())
    output.verdict("A1", a1.verdict.value)

    certificate = None
    try:
        certificate, solved = asyncio.run(
            spectral_gap_concurrently(
                system,
                _sampler(settings),
                settings.branch_guess,
                settings.newton_tol,
                settings.jobs,
            )
        )
    except NoConvergence as error:
        output.json("a2.json", {"verdict": "fail", **error.to_dict()})
        output.verdict("A2", "fail")
        output.verdict("A3", None)
    except UnstableSample as error:
        output.json("a2.json", {"verdict": "pass"})
        output.json("a3.json", {"verdict": "fail", **error.to_dict()})
        output.verdict("A2", "pass")
        output.verdict("A3", "fail")
    else:
        output.json(
            "a2.json",
            {
                "verdict": "pass",
                "n_samples": len(solved),
                "max_residual": max(point.residual for point in solved),
            },
        )
        output.json("a3.json", {"verdict": "pass", **certificate.export()})
        output.verdict("A2", "pass")
        output.verdict("A3", "pass")
    passed = a1.verdict == A1Verdict.EXTENDS and certificate is not None
    logger.info("Assumptions checked", system=system.name, passed=passed)
    return passed, certificate


def cmd_verify(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> int:
    passed, _ = run_checks(system, settings, output)
    return 0 if passed else 1


def _prepare(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> tuple[ReducedModel, StabilityCertificate | None] | None:
    passed, certificate = run_checks(system, settings, output)
    if not passed and not settings.force:
        logger.warn("Assumptions failed, use --force to reduce anyway")
        return None
    chart = _chart(system, settings)
    reduced = build_reduced(system, chart, settings.order, settings.form)
    output.json("reduced.json", reduced.describe())
    return reduced, certificate


def chart_row(
    reduced: ReducedModel, sample: tuple[np.ndarray, np.ndarray, float]
) -> list[float]:
    x, xdot, t = sample
    chart = reduced.chart
    terms = chart.terms(x, xdot, t)
    return [
        *x,
        *xdot,
        t,
        *terms.point.eta,
        *terms.H0,
        *terms.G1,
        *chart.H1(x, xdot, t),
        *reduced.acceleration(x, xdot, t),
    ]


def chart_header(s: int, f: int) -> list[str]:
    header = [f"x{i}" for i in range(1, s + 1)]
    header += [f"dx{i}" for i in range(1, s + 1)]
    header.append("t")
    for name in ("G0", "H0", "G1", "H1"):
        header += [f"{name}_{i}" for i in range(1, f + 1)]
    header += [f"rhs{i}" for i in range(1, s + 1)]
    return header


def cmd_reduce(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> int:
    prepared = _prepare(system, settings, output)
    if prepared is None:
        return 1
    reduced, _ = prepared
    samples = _sampler(settings).samples(system)
    rows = asyncio.run(
        map_in_threads(settings.jobs, partial(chart_row, reduced), samples)
    )
    output.csv("chart.csv", chart_header(system.s, system.f), rows)
    output.verdict("reduce", "pass")
    return 0


def default_initial_state(
    system: MechanicalSystem, chart: SlowManifoldChart, t0: float
) -> np.ndarray:
    """Pendulum: the printed initial condition; otherwise a state off the chart."""
    if isinstance(system, Pendulum3):
        return system.initial_condition()
    box = system.domain
    state = chart.lift(0.5 * box.x * np.ones(system.s), np.zeros(system.s), t0)
    state[2 * system.s : 2 * system.s + system.f] += 0.5 * box.y
    return state


def default_span(system: MechanicalSystem) -> tuple[float, float]:
    if isinstance(system, Pendulum3):
        return 0.0, system.to_scaled_time(PENDULUM_SECONDS)
    start, _ = system.time_dependence.window()
    return start, start + system.time_dependence.horizon()


def cmd_simulate(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> int:
    prepared = _prepare(system, settings, output)
    if prepared is None:
        return 1
    reduced, certificate = prepared
    t_span = settings.t_span or default_span(system)
    if settings.initial_state is not None:
        initial = np.asarray(settings.initial_state, dtype=float)
        if initial.size != 2 * system.n:
            raise ConfigError(f"initial_state needs {2 * system.n} values")
    else:
        initial = default_initial_state(system, reduced.chart, t_span[0])
    report = synchronize(
        system,
        reduced,
        initial,
        t_span,
        snap_tol=settings.snap_tol,
        gap=None if certificate is None else certificate.gap,
        rtol=settings.rtol,
        atol=settings.atol,
        method=settings.method,
    )
    output.trajectory("full.csv", report.full, system.s, system.f)
    output.trajectory("reduced.csv", report.reduced, system.s)
    output.csv(
        "distance.csv",
        ["t", "distance"],
        zip(report.distance_times, report.distance),
    )
    output.csv("error.csv", ["t", "error"], zip(report.times, report.error))
    output.json("sync.json", report.export())
    output.verdict("synchronization", report.verdict.value)
    return 1 if report.verdict == SyncVerdict.FAIL else 0


def fold_entry(
    system: MechanicalSystem, settings: RunSettings, ray: Segment
) -> dict[str, Any]:
    """Search one ray; absence of a fold is a valid outcome."""
    entry: dict[str, Any] = {"start": ray.start.tolist(), "end": ray.end.tolist()}
    try:
        fold = locate_fold(
            system,
            ray,
            settings.branch_guess,
            fold_tol=settings.fold_tol,
            tol=settings.newton_tol,
        )
    except NoSignChange:
        return {**entry, "status": "no-sign-change"}
    except DegenerateFold as error:
        return {**entry, "status": "degenerate", **error.to_dict()}
    except (NoConvergence, SingularJacobian) as error:
        return {**entry, "status": "failed", **error.to_dict()}
    return {**entry, "status": "fold", "fold": fold.export()}


def cmd_fold(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> int:
    rays = default_rays(system, settings.rays, settings.seed)
    entries = asyncio.run(
        map_in_threads(settings.jobs, partial(fold_entry, system, settings), rays)
    )
    folds = [entry["fold"] for entry in entries if entry["status"] == "fold"]
    output.json("fold.json", {"rays": entries, "boundary": folds})
    output.csv(
        "boundary.csv",
        [*chart_header(system.s, 0)[: 2 * system.s + 1], "det"],
        [[*fold["point"], fold["det"]] for fold in folds],
    )
    output.verdict("fold", {"rays": len(rays), "folds": len(folds)})
    return 0


def cmd_compare_local(
    system: MechanicalSystem, settings: RunSettings, output: OutputDirectory
) -> int:
    if not isinstance(system, TwoDofSSM):
        raise ConfigError("compare-local requires the twodof-ssm preset")
    parameters = system.parameters
    initial = (0.1, 0.0)
    if settings.initial_state is not None:
        initial = (settings.initial_state[0], settings.initial_state[1])
    k2_values = settings.k2_sweep or resonance_sweep(parameters.k1)
    sweep = asyncio.run(
        map_in_threads(settings.jobs, partial(sweep_entry, parameters), k2_values)
    )
    report = compare_reductions(
        parameters,
        initial=initial,
        t_span=settings.t_span or (0.0, 50.0),
        k2_sweep=[],
        rtol=settings.rtol,
        atol=settings.atol,
    )
    report = report.copy(update={"sweep": sweep})
    output.json("compare.json", report.export())
    trajectories = report.trajectories
    output.csv(
        "compare.csv",
        ["t", "x_sc", "dx_sc", "x_md", "dx_md", "x_ssm", "dx_ssm"],
        np.column_stack(
            [report.times, trajectories["sc"], trajectories["md"], trajectories["ssm"]]
        ),
    )
    output.verdict("compare-local", {"gap": report.gap})
    return 0


COMMANDS: dict[str, Command] = {
    "verify": cmd_verify,
    "reduce": cmd_reduce,
    "simulate": cmd_simulate,
    "fold": cmd_fold,
    "compare-local": cmd_compare_local,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfdreduce",
        description="Model reduction of mechanical systems by slow-fast decomposition",
    )
    parser.add_argument("--config", type=Path, help="Configuration document")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--jobs", type=int, help="Number of concurrent workers")
    parser.add_argument("--order", type=int, choices=(0, 1), help="Chart order")
    parser.add_argument("--eps", type=float, help="Small parameter")
    parser.add_argument("--seed", type=int, help="Seed of the random samplers")
    parser.add_argument(
        "--force",
        action="store_true",
        default=None,
        help="Reduce and simulate even when the assumptions fail",
    )
    parser.add_argument("--log-level", help="Minimum log level, default INFO")
    parser.add_argument("command", choices=sorted(COMMANDS))
    return parser


def load_settings(args: argparse.Namespace) -> tuple[RunSettings, ParsedConfig]:
    text = "" if args.config is None else Path(args.config).read_text(encoding="utf-8")
    parsed = parse_config(text)
    flags = {
        "out": args.out,
        "jobs": args.jobs,
        "order": args.order,
        "eps": args.eps,
        "seed": args.seed,
        "force": args.force,
        "log_level": args.log_level,
    }
    return resolve_settings(parsed, flags), parsed


def main(argv: list[str] | None = None) -> int:
    """Run one command; returns the exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or "INFO")
    output: OutputDirectory | None = None
    error: dict[str, Any] | None = None
    try:
        settings, parsed = load_settings(args)
        configure_logging(settings.log_level)
        output = OutputDirectory(settings.out, args.command, args.config)
        system = load_preset(
            settings.system, parsed.overrides, settings.mode, settings.eps
        )
        output.manifest.parameters = {
            "settings": settings.dict(),
            **system.parameter_report(),
        }
        exit_code = COMMANDS[args.command](system, settings, output)
    except (ConfigError, ValidationError, OSError) as exc:
        logger.error("Configuration error", error=str(exc))
        exit_code = 2
        error = {"error": type(exc).__name__, "message": str(exc)}
    except SFDError as exc:
        logger.error("Run failed", **exc.to_dict())
        exit_code = 1
        error = exc.to_dict()
    except ValueError as exc:
        logger.error("Invalid input", error=str(exc))
        exit_code = 2
        error = {"error": type(exc).__name__, "message": str(exc)}
    if output is None:
        output = OutputDirectory(args.out or Path("out"), args.command, args.config)
    output.write_manifest(exit_code, error)
    return exit_code
