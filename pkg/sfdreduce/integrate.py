# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-arguments
"""Time integration of full and reduced systems.

Adaptive integration is delegated to scipy: the embedded 4(5) Dormand-Prince
pair for "adaptive-explicit" and the 3-stage Radau IIA method for the stiff
"adaptive-implicit" case. "fixed-reference" runs the eighth order
Dormand-Prince method of DOP853 with its step pinned to a fixed length, used
as an oracle.
"""
from collections.abc import Callable
from typing import Any
from typing import Literal

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Field
from scipy.integrate import solve_ivp

from .exceptions import RhsFailure
from .exceptions import StepSizeUnderflow
from .systems import TimeDependence


logger = structlog.get_logger()

Method = Literal["adaptive-explicit", "adaptive-implicit", "fixed-reference"]
Rhs = Callable[[float, np.ndarray], np.ndarray]

_SCIPY_METHODS = {"adaptive-explicit": "RK45", "adaptive-implicit": "Radau"}
#: Number of steps of the fixed step scheme when no step is given.
REFERENCE_STEPS = 10_000
#: Tolerance of the fixed step scheme, loose enough that no step is rejected.
REFERENCE_TOL = 1e6


class Trajectory(BaseModel):
    """Sampled solution of an initial value problem."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True
        frozen = True

    times: np.ndarray = Field(..., description="Strictly monotone sample times")
    states: np.ndarray = Field(..., description="States, one row per time")
    method: str
    rtol: float | None = None
    atol: float | None = None
    n_steps: int = Field(
        0, description="Accepted steps, output intervals when times were requested"
    )
    n_evaluations: int = Field(0, description="Right-hand side evaluations")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        """State at t by linear interpolation between samples."""
        order = np.argsort(self.times)
        times = self.times[order]
        states = self.states[order]
        return np.array(
            [np.interp(t, times, states[:, k]) for k in range(states.shape[1])]
        )


def _checked_rhs(rhs: Rhs, counter: list[int]) -> Rhs:
    def wrapped(t: float, state: np.ndarray) -> np.ndarray:
        counter[0] += 1
        if not np.all(np.isfinite(state)):
            message = "Integrator state is not finite"
            logger.warn(message, t=t)
            raise RhsFailure(message, t=t)
        value = np.asarray(rhs(t, state), dtype=float)
        if not np.all(np.isfinite(value)):
            message = "Right-hand side returned non-finite values"
            logger.warn(message, t=t)
            raise RhsFailure(message, t=t, state=state.tolist())
        return value

    return wrapped


def integrate(
    rhs: Rhs,
    initial_state: Any,
    t_span: tuple[float, float],
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: Method = "adaptive-explicit",
    t_eval: Any = None,
    max_step: float = np.inf,
    time_dependence: TimeDependence | None = None,
    jac: Callable[[float, np.ndarray], np.ndarray] | None = None,
) -> Trajectory:
    """Integrate a first order system over t_span, forward or backward.

    Args:
        rhs: Vector field f(t, z).
        initial_state: z(t_span[0]).
        t_span: Start and end time; t_span[1] < t_span[0] integrates backward.
        rtol: Relative local error tolerance.
        atol: Absolute local error tolerance.
        method: One of "adaptive-explicit", "adaptive-implicit", "fixed-reference".
        t_eval: Output times, the accepted steps when omitted.
        max_step: Largest step; the step of the fixed step scheme when finite.
        time_dependence: Time class of the system, aperiodic spans are checked.
        jac: Optional Jacobian for the implicit method.

    Raises:
        TimeDomainViolation: The span leaves the interval of an aperiodic system.
        StepSizeUnderflow: The step size collapsed, the problem is probably stiff.
        RhsFailure: The right-hand side produced non-finite values.

    Returns:
        The trajectory.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise ValueError("Integration span is empty")
    if time_dependence is not None:
        time_dependence.check_span(t0, t1)
    state = np.atleast_1d(np.asarray(initial_state, dtype=float))
    counter = [0]
    checked = _checked_rhs(rhs, counter)
    checked(t0, state)
    logger_ = logger.bind(method=method, t_span=(t0, t1))

    if method == "fixed-reference":
        step = max_step if np.isfinite(max_step) else abs(t1 - t0) / REFERENCE_STEPS
        step = min(step, abs(t1 - t0))
        solution = solve_ivp(
            checked,
            (t0, t1),
            state,
            method="DOP853",
            t_eval=t_eval,
            first_step=step,
            max_step=step,
            rtol=REFERENCE_TOL,
            atol=REFERENCE_TOL,
        )
        n_steps = max(1, int(np.ceil(abs(t1 - t0) / step)))
        logger_.debug("Integrated", n_steps=n_steps)
        return Trajectory(
            times=solution.t,
            states=solution.y.T,
            method=method,
            n_steps=n_steps,
            n_evaluations=counter[0],
        )

    try:
        scipy_method = _SCIPY_METHODS[method]
    except KeyError:
        raise ValueError(f"Unknown integration method: {method}") from None
    options: dict[str, Any] = {}
    if jac is not None and scipy_method == "Radau":
        options["jac"] = jac
    solution = solve_ivp(
        checked,
        (t0, t1),
        state,
        method=scipy_method,
        t_eval=t_eval,
        rtol=rtol,
        atol=atol,
        max_step=max_step,
        **options,
    )
    if solution.status == -1:
        last_t = float(solution.t[-1]) if solution.t.size else t0
        last_state = solution.y[:, -1] if solution.y.size else state
        message = f"Integration failed, stiffness suspected: {solution.message}"
        logger_.warn(message, t=last_t)
        raise StepSizeUnderflow(message, t=last_t, state=last_state)
    logger_.debug("Integrated", n_steps=solution.t.size, nfev=solution.nfev)
    return Trajectory(
        times=solution.t,
        states=solution.y.T,
        method=method,
        rtol=rtol,
        atol=atol,
        n_steps=solution.t.size - 1,
        n_evaluations=counter[0],
    )
