# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-arguments
"""Slow manifold expansion.

The slow manifold is the graph

    y  = eps G0(x, x', t) + eps^2 G1(x, x', t)
    y' = eps H0(x, x', t) + eps^2 H1(x, x', t)

where, with J = dP2/deta and everything evaluated at (x, x', G0, 0, t; 0),

    H0 = dG0/dx x' + dG0/dx' P1 + dG0/dt
    G1 = -J^-1 [dP2/dy' H0 + dP2/deps]
    H1 = dG1/dx x' + dG1/dx' P1 + dG1/dt
"""
import threading
from collections import OrderedDict
from typing import Any
from typing import NamedTuple

import numpy as np
import structlog

from .critical import CriticalPoint
from .critical import fast_jacobian
from .critical import JACOBIAN_CONDITION_LIMIT
from .critical import solve_critical_point
from .decomposition import equilibrated_condition
from .decomposition import equilibrated_solve
from .decomposition import forcing
from .decomposition import forcing_jacobian
from .exceptions import SingularJacobian
from .integrate import integrate
from .integrate import Method
from .systems import MechanicalSystem
from .utils import richardson_jacobian
from .utils import round_key


logger = structlog.get_logger()

#: Default number of memoized chart base points.
MEMO_SIZE = 4096


class ImplicitJacobians(NamedTuple):
    """Derivatives of G0 by the implicit function theorem."""

    dx: np.ndarray
    dxdot: np.ndarray
    dt: np.ndarray


def _solve_fast(point: CriticalPoint, jacobian: np.ndarray, rhs: np.ndarray) -> Any:
    condition = equilibrated_condition(jacobian)
    if not np.isfinite(condition) or condition > JACOBIAN_CONDITION_LIMIT:
        message = "Fast Jacobian is singular"
        logger.warn(message, eta=point.eta.tolist(), condition=condition)
        raise SingularJacobian(message, eta=point.eta, condition=condition)
    return equilibrated_solve(jacobian, rhs)


def implicit_jacobians(
    system: MechanicalSystem, point: CriticalPoint
) -> ImplicitJacobians:
    """dG0/dx, dG0/dx' and dG0/dt, shapes f x s, f x s and f x 1.

    Raises:
        SingularJacobian: dP2/deta is singular, the point is close to a fold.
    """
    s = system.s
    base = point.point
    jacobian = fast_jacobian(system, base)
    rhs = np.hstack(
        [
            forcing_jacobian(system, base, 0.0, "x")[s:],
            forcing_jacobian(system, base, 0.0, "xdot")[s:],
            forcing_jacobian(system, base, 0.0, "t")[s:],
        ]
    )
    derivatives = -_solve_fast(point, jacobian, rhs)
    return ImplicitJacobians(
        dx=derivatives[:, :s],
        dxdot=derivatives[:, s : 2 * s],
        dt=derivatives[:, 2 * s :],
    )


def slow_acceleration(system: MechanicalSystem, point: CriticalPoint) -> np.ndarray:
    """P1(x, x', G0, 0, t; 0)."""
    return forcing(system, point.point, 0.0)[: system.s]


def _h0(system: MechanicalSystem, point: CriticalPoint) -> np.ndarray:
    jacobians = implicit_jacobians(system, point)
    return (
        jacobians.dx @ point.xdot
        + jacobians.dxdot @ slow_acceleration(system, point)
        + jacobians.dt[:, 0]
    )


def _g1(system: MechanicalSystem, point: CriticalPoint, h0: np.ndarray) -> np.ndarray:
    s = system.s
    base = point.point
    rhs = (
        forcing_jacobian(system, base, 0.0, "ydot")[s:] @ h0
        + forcing_jacobian(system, base, 0.0, "eps")[s:, 0]
    )
    return -_solve_fast(point, fast_jacobian(system, base), rhs)


def _along_flow(
    system: MechanicalSystem,
    point: CriticalPoint,
    func: Any,
) -> np.ndarray:
    """Derivative of func(x, x', t) along x' and P1 by extrapolated differences."""
    s = system.s

    def stacked(value: np.ndarray) -> np.ndarray:
        return func(value[:s], value[s : 2 * s], float(value[-1]))

    base = np.concatenate([point.x, point.xdot, [point.t]])
    derivative = richardson_jacobian(stacked, base)
    return (
        derivative[:, :s] @ point.xdot
        + derivative[:, s : 2 * s] @ slow_acceleration(system, point)
        + derivative[:, -1]
    )


def eval_H0(
    system: MechanicalSystem, x: Any, xdot: Any, t: float, eta_guess: Any = None
) -> np.ndarray:
    """H0, the derivative of G0 along the leading order slow flow."""
    point = solve_critical_point(system, x, xdot, t, eta_guess)
    return _h0(system, point)


def eval_G1(
    system: MechanicalSystem, x: Any, xdot: Any, t: float, eta_guess: Any = None
) -> np.ndarray:
    """First order correction G1 of the fast positions."""
    point = solve_critical_point(system, x, xdot, t, eta_guess)
    return _g1(system, point, _h0(system, point))


def eval_H1(
    system: MechanicalSystem, x: Any, xdot: Any, t: float, eta_guess: Any = None
) -> np.ndarray:
    """First order correction H1 of the fast velocities.

    The derivatives of G1 come from central differences with steps
    1e-5 (1 + |v|), improved once by Richardson extrapolation; neighbouring
    critical points are solved from the central one.
    """
    point = solve_critical_point(system, x, xdot, t, eta_guess)
    return _along_flow(
        system,
        point,
        lambda x_, xdot_, t_: eval_G1(system, x_, xdot_, t_, point.eta),
    )


class ChartTerms(NamedTuple):
    """Expansion terms of the chart at one base point."""

    point: CriticalPoint
    H0: np.ndarray
    G1: np.ndarray


class SlowManifoldChart:
    """Local chart of the slow manifold over the slow variables.

    Critical points are memoized on (x, x', t) rounded to 12 significant
    digits, the memo is shared between threads under a lock and keeps the
    `memo_size` most recently used entries. Queries reuse the last solution
    as Newton guess unless the system knows its critical manifold in closed
    form.

    Args:
        system: The system.
        eps: Small parameter, the system's nominal value when omitted.
        order: Truncation order, 0 or 1.
        branch_guess: Guess selecting a branch of the critical manifold.
        tol: Relative residual tolerance of the critical point solver.
        memoize: Whether to memoize chart terms.
        memo_size: Largest number of memoized base points.
    """

    def __init__(
        self,
        system: MechanicalSystem,
        eps: float | None = None,
        order: int = 0,
        branch_guess: Any = None,
        tol: float = 1e-10,
        memoize: bool = True,
        memo_size: int = MEMO_SIZE,
    ) -> None:
        if order not in (0, 1):
            raise ValueError(f"Chart order must be 0 or 1, got {order}")
        self.system = system
        self.eps = system.eps if eps is None else float(eps)
        self.order = order
        self.branch_guess = (
            None if branch_guess is None else np.atleast_1d(np.asarray(branch_guess))
        )
        self.tol = tol
        self.memoize = memoize
        self._lock = threading.Lock()
        self.memo_size = memo_size
        self._memo: OrderedDict[tuple[float, ...], ChartTerms] = OrderedDict()
        self._last_eta: np.ndarray | None = None

    def _guess(self, x: np.ndarray, xdot: np.ndarray, t: float) -> np.ndarray | None:
        with self._lock:
            last = self._last_eta
        if self.branch_guess is None:
            closed = self.system.closed_form_critical(x, xdot, t)
            if closed is not None:
                return closed
        return last if last is not None else self.branch_guess

    def terms(self, x: Any, xdot: Any, t: float) -> ChartTerms:
        """Critical point, H0 and G1 at a base point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
        key = round_key(x, xdot, t)
        if self.memoize:
            with self._lock:
                cached = self._memo.get(key)
                if cached is not None:
                    self._memo.move_to_end(key)
            if cached is not None:
                return cached
        point = solve_critical_point(
            self.system, x, xdot, t, self._guess(x, xdot, t), tol=self.tol
        )
        h0 = _h0(self.system, point)
        g1 = _g1(self.system, point, h0)
        terms = ChartTerms(point, h0, g1)
        with self._lock:
            self._last_eta = point.eta
            if self.memoize:
                self._memo[key] = terms
                while len(self._memo) > self.memo_size:
                    self._memo.popitem(last=False)
        return terms

    def critical(self, x: Any, xdot: Any, t: float) -> CriticalPoint:
        return self.terms(x, xdot, t).point

    def G0(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        return self.terms(x, xdot, t).point.eta

    def H0(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        return self.terms(x, xdot, t).H0

    def G1(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        return self.terms(x, xdot, t).G1

    def H1(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        point = self.critical(x, xdot, t)
        return _along_flow(self.system, point, self.G1)

    def fast_state(self, x: Any, xdot: Any, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(y, y') on the chart, truncated at the chart's order."""
        terms = self.terms(x, xdot, t)
        eps = self.eps
        y = eps * terms.point.eta
        ydot = eps * terms.H0
        if self.order == 1:
            y = y + eps**2 * terms.G1
            ydot = ydot + eps**2 * self.H1(x, xdot, t)
        return y, ydot

    def lift(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        """Full state (x, x', y, y') on the chart."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
        y, ydot = self.fast_state(x, xdot, t)
        return np.concatenate([x, xdot, y, ydot])

    def clear(self) -> None:
        with self._lock:
            self._memo.clear()
            self._last_eta = None


def manifold_distance(
    chart: SlowManifoldChart, state: Any, t: float, velocity_weight: float = 1.0
) -> float:
    """Euclidean distance of the fast part of (x, x', y, y') from the chart.

    The fast velocity error is multiplied by `velocity_weight`; a weight of eps
    measures it in the fast time t / eps.
    """
    state = np.asarray(state, dtype=float)
    s, f = chart.system.s, chart.system.f
    x, xdot = state[:s], state[s : 2 * s]
    y, ydot = state[2 * s : 2 * s + f], state[2 * s + f :]
    chart_y, chart_ydot = chart.fast_state(x, xdot, t)
    velocity_error = velocity_weight * (ydot - chart_ydot)
    return float(np.linalg.norm(np.concatenate([y - chart_y, velocity_error])))


def invariance_residual(
    chart: SlowManifoldChart,
    x: Any,
    xdot: Any,
    t_span: tuple[float, float],
    samples: int = 1001,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    method: Method = "adaptive-explicit",
) -> float:
    """Largest distance from the chart of the full trajectory started on it.

    The full system is integrated at the chart's eps from the lift of
    (x, x') and the distance is sampled on `samples` equidistant times, with
    fast velocities measured in fast time. An order k chart leaves a residual
    of order eps^(k + 2).
    """
    system = chart.system
    t0, t1 = float(t_span[0]), float(t_span[1])
    grid = np.linspace(t0, t1, samples)
    trajectory = integrate(
        system.full_vector_field(chart.eps),
        chart.lift(x, xdot, t0),
        (t0, t1),
        rtol=rtol,
        atol=atol,
        method=method,
        t_eval=grid,
        time_dependence=system.time_dependence,
    )
    residual = max(
        manifold_distance(chart, state, t, velocity_weight=chart.eps)
        for t, state in zip(trajectory.times, trajectory.states)
    )
    logger.info(
        "Invariance residual computed",
        system=system.name,
        eps=chart.eps,
        order=chart.order,
        residual=residual,
    )
    return residual
