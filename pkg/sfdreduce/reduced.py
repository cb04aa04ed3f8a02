# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-arguments,too-many-locals
"""Reduced-order models on the slow manifold and synchronization checks."""
from enum import Enum
from typing import Any
from typing import Literal

import numpy as np
import structlog
from more_itertools import pairwise
from pydantic import BaseModel
from pydantic import Field

from .critical import spectral_gap
from .decomposition import A1Verdict
from .decomposition import forcing
from .decomposition import forcing_jacobian
from .decomposition import inertial_decouple
from .decomposition import validate_eps_sequence
from .exceptions import M1NotSmooth
from .exceptions import NoApproach
from .exceptions import SingularBlock
from .integrate import integrate
from .integrate import Method
from .integrate import Trajectory
from .slow_manifold import manifold_distance
from .slow_manifold import SlowManifoldChart
from .systems import MechanicalSystem


logger = structlog.get_logger()

Form = Literal["mass-normalized", "mass-multiplied"]


def check_mass_extension(
    system: MechanicalSystem,
    chart: SlowManifoldChart,
    x: np.ndarray,
    t: float,
    eps_sequence: tuple[float, ...] | None = None,
    contraction: float = 1.8,
) -> A1Verdict:
    """Extension test of the slow Schur complement M1(x, G0, t; eps) to eps = 0.

    Successive differences along the geometric sequence must contract by
    `contraction`, and M1 must not grow tenfold.
    """
    eps_sequence = tuple(eps_sequence or system.eps_sequence())
    validate_eps_sequence(eps_sequence)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    zeros = np.zeros(system.s)
    eta = chart.G0(x, zeros, t)
    values = np.array(
        [
            inertial_decouple(system, x, zeros, eta, np.zeros(system.f), t, eps).M1
            for eps in eps_sequence
        ]
    ).reshape(len(eps_sequence), -1)
    floor = 1e-12 * (1.0 + np.max(np.abs(values)))
    first = np.max(np.abs(values[0]))
    if first > floor and np.max(np.abs(values[-1])) >= 10.0 * first:
        return A1Verdict.DIVERGES
    differences = np.max(np.abs(np.diff(values, axis=0)), axis=1)
    for current, following in pairwise(differences):
        if current > floor and following > floor:
            if current / following < contraction:
                return A1Verdict.INCONCLUSIVE
    return A1Verdict.EXTENDS


class ReducedModel:
    """Second order reduced model x'' = rhs(x, x', t) over the slow variables.

    Order 0 is x'' = P1(x, x', G0, 0, t; 0). Order 1 adds
    eps [dP1/deta G1 + dP1/dy' H0 + dP1/deps] in mass-normalized form; in
    mass-multiplied form the decoupled slow equation M1 x'' = Q1 is evaluated
    on the chart point of the requested order instead.
    """

    def __init__(
        self,
        system: MechanicalSystem,
        chart: SlowManifoldChart,
        order: int,
        form: Form = "mass-normalized",
    ) -> None:
        self.system = system
        self.chart = chart
        self.order = order
        self.form = form
        self.eps = chart.eps

    def _mass_normalized(self, x: np.ndarray, xdot: np.ndarray, t: float) -> np.ndarray:
        s = self.system.s
        terms = self.chart.terms(x, xdot, t)
        point = terms.point.point
        acceleration = forcing(self.system, point, 0.0)[:s]
        if self.order == 0:
            return acceleration
        correction = (
            forcing_jacobian(self.system, point, 0.0, "eta")[:s] @ terms.G1
            + forcing_jacobian(self.system, point, 0.0, "ydot")[:s] @ terms.H0
            + forcing_jacobian(self.system, point, 0.0, "eps")[:s, 0]
        )
        return acceleration + self.eps * correction

    def mass_and_force(
        self, x: Any, xdot: Any, t: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """M1 and Q1 of the decoupled slow equation on the chart."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
        terms = self.chart.terms(x, xdot, t)
        if self.order == 0:
            eta, ydot, eps = terms.point.eta, np.zeros(self.system.f), 0.0
        else:
            y, ydot = self.chart.fast_state(x, xdot, t)
            eta, eps = y / self.eps, self.eps
        form = inertial_decouple(self.system, x, xdot, eta, ydot, t, eps)
        return form.M1, form.Q1

    def acceleration(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        """x'' of the reduced model."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
        if self.form == "mass-multiplied":
            mass, force = self.mass_and_force(x, xdot, t)
            try:
                return np.linalg.solve(mass, force)
            except np.linalg.LinAlgError:
                message = "Slow mass matrix of the reduced model is singular"
                condition = float(np.linalg.cond(mass))
                logger.warn(message, x=x.tolist(), t=t, condition=condition)
                raise SingularBlock(message, block="M1", condition=condition) from None
        return self._mass_normalized(x, xdot, t)

    def vector_field(self, t: float, state: np.ndarray) -> np.ndarray:
        """First order field in (x, x')."""
        s = self.system.s
        x, xdot = state[:s], state[s:]
        return np.concatenate([xdot, self.acceleration(x, xdot, t)])

    def describe(self) -> dict[str, Any]:
        return {
            "system": self.system.name,
            "mode": self.system.mode,
            "order": self.order,
            "form": self.form,
            "eps": self.eps,
            "s": self.system.s,
            "f": self.system.f,
        }


def build_reduced(
    system: MechanicalSystem,
    chart: SlowManifoldChart,
    order: int | None = None,
    form: Form = "mass-normalized",
) -> ReducedModel:
    """Assemble the reduced model of the given order, the chart's by default.

    Raises:
        M1NotSmooth: The mass-multiplied form was requested but the slow Schur
            complement fails the extension test at the domain centre.
    """
    order = chart.order if order is None else order
    if order not in (0, 1):
        raise ValueError(f"Reduced model order must be 0 or 1, got {order}")
    if order > chart.order:
        chart = SlowManifoldChart(
            system, chart.eps, order, chart.branch_guess, chart.tol, chart.memoize
        )
    if form == "mass-multiplied":
        start, _ = system.time_dependence.window()
        verdict = check_mass_extension(system, chart, np.zeros(system.s), start)
        if verdict != A1Verdict.EXTENDS:
            message = "Slow mass matrix does not extend smoothly to eps = 0"
            logger.warn(message, system=system.name, verdict=verdict.value)
            raise M1NotSmooth(message, verdict=verdict.value)
    logger.info("Reduced model built", system=system.name, order=order, form=form)
    return ReducedModel(system, chart, order, form)


def lift_initial(chart: SlowManifoldChart, x: Any, xdot: Any, t: float) -> np.ndarray:
    """Full state (x, x', eps G0 + eps^2 G1, eps H0 + eps^2 H1) on the chart."""
    return chart.lift(x, xdot, t)


class SyncVerdict(str, Enum):
    """Outcome of the synchronization check."""

    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class SyncReport(BaseModel):
    """Decay of the slow-coordinate error between full and reduced trajectories."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True

    times: np.ndarray = Field(..., description="Sample times of the error series")
    error: np.ndarray = Field(..., description="|(x - x_R, x' - x'_R)|")
    distance_times: np.ndarray
    distance: np.ndarray = Field(..., description="Manifold distance of the full run")
    snap_time: float
    rate: float | None = Field(None, description="Fitted exponential decay rate")
    bound: float = Field(..., description="Theoretical rate gap / eps")
    window: tuple[float, float] | None = None
    verdict: SyncVerdict
    full: Any = Field(None, description="Full trajectory")
    reduced: Any = Field(None, description="Reduced trajectory over the error window")

    def export(self) -> dict[str, Any]:
        """JSON document {rate, bound, verdict, window}."""
        return {
            "rate": self.rate,
            "bound": self.bound,
            "verdict": self.verdict.value,
            "window": list(self.window) if self.window is not None else None,
            "snap_time": self.snap_time,
        }


def fit_decay_rate(
    times: np.ndarray, error: np.ndarray, floor: float
) -> tuple[float, tuple[float, float]] | None:
    """Least squares decay rate of the decreasing upper envelope of the error.

    The window runs up to the minimum of the error. Only record points, values
    above every later value of the window, lying above 1e2 floor are used, and
    the first and last 10 % of the window are dropped.
    """
    end = int(np.argmin(error)) + 1
    error, times = error[:end], times[:end]
    envelope = np.maximum.accumulate(error[::-1])[::-1]
    records = np.flatnonzero((error >= envelope) & (error > 1e2 * floor))
    if records.size < 2:
        return None
    start, stop = times[records[0]], times[records[-1]]
    span = stop - start
    records = records[
        (times[records] >= start + 0.1 * span) & (times[records] <= stop - 0.1 * span)
    ]
    if records.size < 5:
        return None
    slope, _ = np.polyfit(times[records], np.log(error[records]), 1)
    return float(-slope), (float(times[records[0]]), float(times[records[-1]]))


def synchronize(
    system: MechanicalSystem,
    reduced: ReducedModel,
    full_initial: Any,
    t_span: tuple[float, float],
    snap_tol: float = 1e-5,
    gap: float | None = None,
    samples: int = 2001,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: Method = "adaptive-implicit",
) -> SyncReport:
    """Check that the full slow coordinates synchronize with a reduced trajectory.

    The full system is integrated until its manifold distance falls below
    `snap_tol`; the reduced model is seeded with the slow coordinates at that
    instant and integrated forward to the end of the span and backward to at
    most one slow period before the snap. The decay rate of the slow error is
    fitted and compared with gap / eps.

    Args:
        system: The system, integrated at the chart's eps.
        reduced: The reduced model.
        full_initial: Full initial state (x, x', y, y').
        t_span: Start and end time.
        snap_tol: Manifold distance at which the reduced model is seeded.
        gap: Spectral gap, certified on the default domain sample when omitted.
        samples: Number of output times.
        rtol: Relative integrator tolerance.
        atol: Absolute integrator tolerance.
        method: Integrator of the full system.

    Raises:
        NoApproach: The manifold distance never fell below `snap_tol`.
    """
    chart = reduced.chart
    eps = chart.eps
    s = system.s
    t0, t1 = float(t_span[0]), float(t_span[1])
    logger_ = logger.bind(system=system.name, eps=eps)
    if gap is None:
        gap = spectral_gap(system, eta_guess=chart.branch_guess).gap
    bound = gap / eps if eps > 0.0 else float("inf")

    grid = np.linspace(t0, t1, samples)
    full = integrate(
        system.full_vector_field(eps),
        full_initial,
        (t0, t1),
        rtol=rtol,
        atol=atol,
        method=method,
        t_eval=grid,
        time_dependence=system.time_dependence,
    )
    distance = np.array(
        [
            manifold_distance(chart, state, t)
            for t, state in zip(full.times, full.states)
        ]
    )
    below = np.flatnonzero(distance < snap_tol)
    if below.size == 0:
        message = "Full trajectory never approached the slow manifold"
        logger_.warn(message, min_distance=float(np.min(distance)))
        raise NoApproach(message, min_distance=float(np.min(distance)))
    snap = int(below[0])
    t_snap = float(full.times[snap])
    seed = full.states[snap, : 2 * s]
    logger_.info("Snapped to slow manifold", t=t_snap, distance=float(distance[snap]))

    t_back = max(t0, t_snap - system.time_dependence.horizon())
    pieces = []
    if t_snap > t_back:
        backward_grid = grid[(grid >= t_back) & (grid <= t_snap)][::-1]
        backward = integrate(
            reduced.vector_field,
            seed,
            (t_snap, t_back),
            rtol=rtol,
            atol=atol,
            t_eval=backward_grid,
        )
        pieces.append((backward.times[::-1], backward.states[::-1]))
    if t1 > t_snap:
        forward_grid = grid[grid >= t_snap]
        forward = integrate(
            reduced.vector_field,
            seed,
            (t_snap, t1),
            rtol=rtol,
            atol=atol,
            t_eval=forward_grid,
        )
        start = 1 if pieces else 0
        pieces.append((forward.times[start:], forward.states[start:]))
    times = np.concatenate([piece[0] for piece in pieces])
    reduced_states = np.vstack([piece[1] for piece in pieces])
    reduced_trajectory = Trajectory(
        times=times, states=reduced_states, method="adaptive-explicit"
    )

    full_slow = full.states[grid >= t_back, : 2 * s]
    error = np.linalg.norm(full_slow - reduced_states, axis=1)
    floor = max(atol, rtol * (1.0 + float(np.max(np.abs(full_slow)))))

    rate: float | None = None
    window: tuple[float, float] | None = None
    if np.max(error) <= 1e2 * floor:
        verdict = SyncVerdict.PASS
    else:
        fitted = fit_decay_rate(times, error, floor)
        if fitted is None:
            verdict = SyncVerdict.INCONCLUSIVE
        else:
            rate, window = fitted
            verdict = SyncVerdict.PASS if rate >= 0.8 * bound else SyncVerdict.FAIL
    logger_.info(
        "Synchronization checked", rate=rate, bound=bound, verdict=verdict.value
    )
    return SyncReport(
        times=times,
        error=error,
        distance_times=full.times,
        distance=distance,
        snap_time=t_snap,
        rate=rate,
        bound=bound,
        window=window,
        verdict=verdict,
        full=full,
        reduced=reduced_trajectory,
    )
