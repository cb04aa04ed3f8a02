# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-arguments,too-many-locals
"""Fold boundary of the reduction domain.

The critical manifold stops being a graph over the slow variables where
det dP2/deta vanishes. Along a path in (x, x', t) a branch is continued from
its guess until the scaled determinant changes sign or Newton fails; the fold
is then bracketed by bisection and refined by Newton iteration on the
extended system (P2 = 0, det dP2/deta = 0). When Newton in the path parameter
gives out before the indicator is small, the branch is carried across the
turning point by pseudo-arclength continuation first.
"""
from typing import Any
from typing import NamedTuple

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Field
from scipy.optimize import root

from .critical import CriticalPoint
from .critical import fast_jacobian
from .critical import solve_critical_point
from .critical import tangent_matrices
from .decomposition import forcing
from .decomposition import forcing_jacobian
from .exceptions import DegenerateFold
from .exceptions import EvaluatorFailure
from .exceptions import NoConvergence
from .exceptions import NoSignChange
from .exceptions import SingularBlock
from .exceptions import SingularJacobian
from .systems import make_point
from .systems import MechanicalSystem
from .systems import Point


logger = structlog.get_logger()

#: Offset into the domain at which the adjacent branches are solved.
BRANCH_OFFSET = 1e-3
#: Threshold on the nondegeneracy scalar.
NONDEGENERACY_TOL = 1e-8
#: Initial arclength step, relative to 1 + |(s, eta)|.
ARCLENGTH_STEP = 1e-3


class Segment(NamedTuple):
    """Straight path s -> start + s (end - start), s in [0, 1], in (x, x', t)."""

    start: np.ndarray
    end: np.ndarray

    def __call__(self, s: float) -> np.ndarray:
        return self.start + s * (self.end - self.start)

    @classmethod
    def between(cls, start: Any, end: Any) -> "Segment":
        return cls(np.asarray(start, dtype=float), np.asarray(end, dtype=float))


def _split(
    system: MechanicalSystem, base: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    s = system.s
    return base[:s], base[s : 2 * s], float(base[-1])


def _as_point(system: MechanicalSystem, point: "CriticalPoint | Point") -> Point:
    if isinstance(point, CriticalPoint):
        return point.point
    return point._replace(ydot=np.zeros(system.f))


def _row_scale(system: MechanicalSystem, point: Point) -> float:
    s = system.s
    rows = np.hstack(
        [fast_jacobian(system, point), forcing_jacobian(system, point, 0.0, "ydot")[s:]]
    )
    return float(np.prod(np.maximum(1.0, np.linalg.norm(rows, axis=1))))


def fold_indicator(system: MechanicalSystem, point: "CriticalPoint | Point") -> float:
    """det dP2/deta divided by the product of the row norms of [dP2/deta, dP2/dy'].

    Row norms below one are not scaled, so the sign and the zero set are those
    of the determinant.
    """
    point = _as_point(system, point)
    determinant = float(np.linalg.det(fast_jacobian(system, point)))
    return determinant / _row_scale(system, point)


class FoldPoint(BaseModel):
    """A located fold of the critical manifold."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True

    parameter: float = Field(..., description="Path parameter of the fold")
    x: np.ndarray
    xdot: np.ndarray
    t: float
    eta: np.ndarray
    det: float = Field(..., description="Scaled fold indicator at the fold")
    rank: int
    singular_values: list[float]
    nondegeneracy: float = Field(
        ..., description="Derivative of det dP2/deta along its kernel"
    )
    kernel: np.ndarray
    plus_stable: bool | None = None
    minus_stable: bool | None = None
    crossings: int | None = Field(
        None, description="Real eigenvalues of B changing sign between branches"
    )

    def export(self) -> dict[str, Any]:
        """JSON document {point, eta, det, rank, nondegeneracy, branches}."""

        def label(stable: bool | None) -> str | None:
            if stable is None:
                return None
            return "stable" if stable else "unstable"

        return {
            "point": np.concatenate([self.x, self.xdot, [self.t]]).tolist(),
            "eta": self.eta.tolist(),
            "det": self.det,
            "rank": self.rank,
            "nondegeneracy": self.nondegeneracy,
            "branches": {
                "plus": label(self.plus_stable),
                "minus": label(self.minus_stable),
            },
        }


def _try_solve(
    system: MechanicalSystem, base: np.ndarray, guess: np.ndarray, tol: float
) -> CriticalPoint | None:
    x, xdot, t = _split(system, base)
    try:
        return solve_critical_point(system, x, xdot, t, guess, tol=tol)
    except (NoConvergence, SingularJacobian, EvaluatorFailure, SingularBlock):
        return None


def _path_point(
    system: MechanicalSystem, path: Segment, unknowns: np.ndarray
) -> Point:
    x, xdot, t = _split(system, path(unknowns[0]))
    return make_point(x, xdot, unknowns[1:], np.zeros(system.f), t)


def _path_jacobian(
    system: MechanicalSystem, path: Segment, unknowns: np.ndarray
) -> np.ndarray:
    """[dP2/ds, dP2/deta], f x (1 + f)."""
    s = system.s
    point = _path_point(system, path, unknowns)
    dx, dxdot, dt = _split(system, path.end - path.start)
    along = (
        forcing_jacobian(system, point, 0.0, "x")[s:] @ dx
        + forcing_jacobian(system, point, 0.0, "xdot")[s:] @ dxdot
        + forcing_jacobian(system, point, 0.0, "t")[s:, 0] * dt
    )
    return np.column_stack([along, fast_jacobian(system, point)])


def _tangent(jacobian: np.ndarray, previous: np.ndarray | None) -> np.ndarray:
    """Unit null vector of the path Jacobian, oriented along `previous`.

    Without a previous tangent the orientation is forward in the path parameter.
    """
    tangent = np.linalg.svd(jacobian)[2][-1]
    reference = tangent[0] if previous is None else float(tangent @ previous)
    if reference < 0.0:
        tangent = -tangent
    return tangent


def _arclength_crossing(
    system: MechanicalSystem,
    path: Segment,
    parameter: float,
    eta: np.ndarray,
    step: float = ARCLENGTH_STEP,
    max_steps: int = 100,
) -> tuple[float, np.ndarray]:
    """Continue the branch in arclength until the fold indicator changes sign.

    Each step predicts along the tangent of P2(s, eta) = 0 and corrects on the
    hyperplane orthogonal to it, so the continuation passes the turning point
    in s. The step doubles after a converged corrector up to 100 times its
    initial value and is halved on failure.

    Returns:
        (s, eta) interpolated linearly in the indicator between the two points
        enclosing the sign change.
    """
    s = system.s
    scale = 1.0 + float(np.linalg.norm(np.append(parameter, eta)))
    length, longest = step * scale, 100.0 * step * scale
    current = np.append(parameter, eta)
    indicator = fold_indicator(system, _path_point(system, path, current))
    tangent = _tangent(_path_jacobian(system, path, current), None)
    for _ in range(max_steps):
        predicted = current + length * tangent

        def corrector(
            unknowns: np.ndarray,
            predicted: np.ndarray = predicted,
            tangent: np.ndarray = tangent,
        ) -> np.ndarray:
            p2 = forcing(system, _path_point(system, path, unknowns), 0.0)[s:]
            return np.append(p2, tangent @ (unknowns - predicted))

        result = root(corrector, predicted, method="hybr", tol=1e-14)
        if not result.success and np.max(np.abs(result.fun)) > 1e-10:
            length /= 2.0
            if length < 1e-12 * scale:
                break
            continue
        following = result.x
        next_indicator = fold_indicator(
            system, _path_point(system, path, following)
        )
        if np.sign(next_indicator) != np.sign(indicator):
            weight = indicator / (indicator - next_indicator)
            crossing = current + weight * (following - current)
            return float(crossing[0]), crossing[1:]
        tangent = _tangent(_path_jacobian(system, path, following), tangent)
        current, indicator = following, next_indicator
        length = min(2.0 * length, longest)
    message = "Arclength continuation did not reach the fold"
    logger.warn(message, parameter=float(current[0]))
    raise NoConvergence(message, best=current, residual=float(abs(indicator)))


def _refine(
    system: MechanicalSystem,
    path: Segment,
    parameter: float,
    eta: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Newton iteration on (P2, det dP2/deta) in (s, eta)."""
    s = system.s

    def extended(unknowns: np.ndarray) -> np.ndarray:
        point = _path_point(system, path, unknowns)
        p2 = forcing(system, point, 0.0)[s:]
        return np.append(p2, np.linalg.det(fast_jacobian(system, point)))

    result = root(extended, np.append(parameter, eta), method="hybr", tol=1e-14)
    if not result.success:
        message = "Fold refinement did not converge"
        logger.warn(message, parameter=parameter, reason=result.message)
        raise NoConvergence(
            message, best=result.x, residual=float(np.max(np.abs(result.fun)))
        )
    return float(result.x[0]), result.x[1:]


def _kernel(jacobian: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, singular_values, vh = np.linalg.svd(jacobian)
    kernel = vh[-1]
    if kernel[np.argmax(np.abs(kernel))] < 0.0:
        kernel = -kernel
    return singular_values, kernel


def _nondegeneracy(
    system: MechanicalSystem, point: Point, kernel: np.ndarray, step: float = 1e-5
) -> float:
    def determinant(offset: float) -> float:
        shifted = point._replace(eta=point.eta + offset * kernel)
        return float(np.linalg.det(fast_jacobian(system, shifted)))

    return (determinant(step) - determinant(-step)) / (2.0 * step)


def _march(
    system: MechanicalSystem,
    path: Segment,
    start: CriticalPoint,
    steps: int,
    tol: float,
) -> tuple[float, CriticalPoint, float, bool] | None:
    """Continue the branch along the path until a sign change or a failure.

    Returns:
        The last good parameter and point, the first bad parameter and whether
        Newton failed there.
    """
    previous_s, previous = 0.0, start
    previous_indicator = fold_indicator(system, start)
    for s in np.linspace(0.0, 1.0, steps + 1)[1:]:
        current = _try_solve(system, path(s), previous.eta, tol)
        if current is None:
            return previous_s, previous, float(s), True
        indicator = fold_indicator(system, current)
        if np.sign(indicator) != np.sign(previous_indicator):
            return previous_s, previous, float(s), False
        previous_s, previous, previous_indicator = float(s), current, indicator
    return None


def locate_fold(
    system: MechanicalSystem,
    path: Segment,
    branch_guess: Any = None,
    fold_tol: float = 1e-8,
    steps: int = 64,
    tol: float = 1e-10,
    classify: bool = True,
) -> FoldPoint:
    """Locate the fold of a critical manifold branch along a path.

    Args:
        system: The system.
        path: Path in (x, x', t), starting inside the reduction domain.
        branch_guess: Guess of eta at the start selecting the branch.
        fold_tol: Tolerance on the scaled fold indicator.
        steps: Number of continuation steps along the path.
        tol: Relative residual tolerance of the critical point solver.
        classify: Whether to classify the adjacent branches.

    Raises:
        NoSignChange: The branch continues across the whole path.
        DegenerateFold: The nondegeneracy scalar is below 1e-8.
    """
    logger_ = logger.bind(system=system.name)
    x, xdot, t = _split(system, path(0.0))
    start = solve_critical_point(system, x, xdot, t, branch_guess, tol=tol)
    bracket = _march(system, path, start, steps, tol)
    if bracket is None:
        message = "Fold indicator keeps its sign along the path"
        logger_.info(message)
        raise NoSignChange(message, start=path.start, end=path.end)
    good_s, good, bad_s, failed = bracket

    # bisection down to 10 fold_tol in the path parameter
    while abs(bad_s - good_s) > 10.0 * fold_tol:
        middle = 0.5 * (good_s + bad_s)
        current = _try_solve(system, path(middle), good.eta, tol)
        if current is None:
            failed = True
            bad_s = middle
        elif np.sign(fold_indicator(system, current)) != np.sign(
            fold_indicator(system, good)
        ):
            bad_s = middle
        else:
            good_s, good = middle, current
        if abs(fold_indicator(system, good)) <= fold_tol:
            break

    start_s, start_eta = good_s, good.eta
    if failed and abs(fold_indicator(system, good)) > fold_tol:
        # natural parameter Newton gave out short of the fold
        start_s, start_eta = _arclength_crossing(system, path, good_s, good.eta)
        logger_.info(
            "Fold approached by arclength continuation",
            parameter=start_s,
            last_natural=good_s,
        )
    parameter, eta = _refine(system, path, start_s, start_eta)
    x, xdot, t = _split(system, path(parameter))
    point = make_point(x, xdot, eta, np.zeros(system.f), t)
    jacobian = fast_jacobian(system, point)
    singular_values, kernel = _kernel(jacobian)
    scale = max(1.0, float(singular_values[0]))
    rank = int(np.sum(singular_values > fold_tol * scale))
    indicator = fold_indicator(system, point)
    nondegeneracy = _nondegeneracy(system, point, kernel)
    fold = FoldPoint(
        parameter=parameter,
        x=x,
        xdot=xdot,
        t=t,
        eta=eta,
        det=indicator,
        rank=rank,
        singular_values=singular_values.tolist(),
        nondegeneracy=nondegeneracy,
        kernel=kernel,
    )
    if abs(nondegeneracy) < NONDEGENERACY_TOL:
        message = "Fold is degenerate"
        logger_.warn(message, nondegeneracy=nondegeneracy, **fold.export())
        raise DegenerateFold(message, **fold.export())
    logger_.info(
        "Fold located", parameter=parameter, det=indicator, rank=rank, t=t
    )
    if classify:
        fold = classify_branches(system, fold, path)
    return fold


def classify_branches(
    system: MechanicalSystem,
    fold: FoldPoint,
    path: Segment | None = None,
    offset: float = BRANCH_OFFSET,
    tol: float = 1e-10,
) -> FoldPoint:
    """Formal stability of the two branches meeting at a fold.

    Both branches are solved at `offset` path units back into the domain (or
    shifted in x against the kernel direction when no path is known), starting
    from eta +- sqrt(offset) along the kernel of dP2/deta; the offset is halved
    when Newton fails. The plus branch lies on the side the kernel, oriented
    by its largest component, points to.
    """
    logger_ = logger.bind(system=system.name)
    if path is None:
        direction = np.concatenate([fold.x, fold.xdot, [fold.t]])
        path = Segment(np.zeros_like(direction), direction)
        parameter = 1.0
    else:
        parameter = fold.parameter
    for _ in range(10):
        inside = path(parameter - offset if parameter > 0.0 else parameter + offset)
        spread = np.sqrt(offset) * fold.kernel
        plus = _try_solve(system, inside, fold.eta + spread, tol)
        minus = _try_solve(system, inside, fold.eta - spread, tol)
        if (
            plus is not None
            and minus is not None
            and np.linalg.norm(plus.eta - minus.eta) > 1e-3 * np.sqrt(offset)
        ):
            break
        offset /= 2.0
    else:
        message = "Branches next to the fold could not be solved"
        logger_.warn(message, parameter=parameter)
        raise NoConvergence(message, best=fold.eta, residual=float("nan"))

    if float((plus.eta - minus.eta) @ fold.kernel) < 0.0:
        plus, minus = minus, plus
    crossings = _crossings(system, plus, minus)
    if crossings != 1:
        logger_.warn("Unexpected eigenvalue crossings at fold", crossings=crossings)
    logger_.info(
        "Branches classified", plus=plus.stable, minus=minus.stable, offset=offset
    )
    return fold.copy(
        update={
            "plus_stable": plus.stable,
            "minus_stable": minus.stable,
            "crossings": crossings,
        }
    )


def _crossings(
    system: MechanicalSystem, plus: CriticalPoint, minus: CriticalPoint
) -> int:
    def negative(point: CriticalPoint) -> int:
        _, B = tangent_matrices(system, point)
        eigenvalues = np.linalg.eigvals(B)
        is_real = np.abs(eigenvalues.imag) <= 1e-12 * (1.0 + np.abs(eigenvalues))
        real = eigenvalues[is_real]
        return int(np.sum(real.real < 0.0))

    return abs(negative(plus) - negative(minus))


def default_rays(
    system: MechanicalSystem, count: int, seed: int = 42
) -> list[Segment]:
    """Random straight rays in x from the domain centre to the box boundary.

    The slow velocity is zero and the time random in the sampling window; rays
    whose start lies outside the reduction domain are redrawn.
    """
    rng = np.random.default_rng(seed)
    start_t, end_t = system.time_dependence.window()
    rays: list[Segment] = []
    attempts = 0
    while len(rays) < count and attempts < 100 * count:
        attempts += 1
        t = float(rng.uniform(start_t, end_t)) if end_t > start_t else start_t
        direction = rng.normal(size=system.s)
        direction /= np.linalg.norm(direction)
        x0 = np.zeros(system.s)
        xdot0 = np.zeros(system.s)
        if not system.in_domain(x0, xdot0, t):
            continue
        end = np.concatenate([system.domain.x * direction, xdot0, [t]])
        rays.append(Segment(np.concatenate([x0, xdot0, [t]]), end))
    return rays

