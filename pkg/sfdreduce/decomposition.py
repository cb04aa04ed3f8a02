# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-few-public-methods
"""Inertial decoupling, mass-normalized forcing and the extension check.

The decoupled form eliminates the off-diagonal mass blocks by Schur
complements:

    M1 = M11 - M12 M22^-1 M21,   Q1 = F1 - M12 M22^-1 F2,
    M2 = M22 - M21 M11^-1 M12,   Q2 = F2 - M21 M11^-1 F1,

so that M1 x'' = Q1 and M2 y'' = Q2. Evaluated on the scaled block form this
gives the normalized forcings P1 = M1^-1 Q1 and P2 = M2^-1 Q2, the latter
already carrying the factor eps of the unscaled system.
"""
from enum import Enum
from functools import partial
from typing import Any
from typing import NamedTuple

import numpy as np
import scipy.linalg
import structlog
from more_itertools import pairwise
from pydantic import BaseModel
from pydantic import Field

from .exceptions import EvaluatorFailure
from .exceptions import SingularBlock
from .systems import make_point
from .systems import MechanicalSystem
from .systems import Point
from .systems import Variable
from .utils import CBRT_EPS
from .utils import central_jacobian
from .utils import fd_steps
from .utils import one_sided_derivative


logger = structlog.get_logger()

#: Condition number (after equilibration) above which a block is singular.
CONDITION_LIMIT = 1e13


def _equilibrators(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    row = np.max(np.abs(block), axis=1)
    if np.any(row == 0.0):
        return row, np.zeros(block.shape[1])
    col = np.max(np.abs(block / row[:, None]), axis=0)
    return row, col


def equilibrated_condition(block: np.ndarray) -> float:
    """2-norm condition number of a block after row and column equilibration."""
    if block.size == 0:
        return 1.0
    row, col = _equilibrators(block)
    if np.any(row == 0.0) or np.any(col == 0.0):
        return float("inf")
    return float(np.linalg.cond(block / row[:, None] / col))


def equilibrated_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve matrix a = rhs after scaling rows and columns to unit max.

    Rows of the scaled block forms may differ by many orders of magnitude,
    which plain partial pivoting does not survive.
    """
    row, col = _equilibrators(matrix)
    if np.any(row == 0.0) or np.any(col == 0.0):
        raise np.linalg.LinAlgError("Matrix has a zero row or column")
    scaled_rhs = rhs / (row[:, None] if rhs.ndim == 2 else row)
    solution = scipy.linalg.solve(
        matrix / row[:, None] / col, scaled_rhs, check_finite=False
    )
    return solution / (col[:, None] if solution.ndim == 2 else col)


class _Factorization(NamedTuple):
    lu: tuple[np.ndarray, np.ndarray]
    row: np.ndarray
    col: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        scaled_rhs = rhs / (self.row[:, None] if rhs.ndim == 2 else self.row)
        solution = scipy.linalg.lu_solve(self.lu, scaled_rhs)
        return solution / (self.col[:, None] if solution.ndim == 2 else self.col)


def _factorize(block: np.ndarray, name: str) -> _Factorization:
    condition = equilibrated_condition(block)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        message = "Mass block is singular"
        logger.warn(message, block=name, condition=condition)
        raise SingularBlock(message, block=name, condition=condition)
    row, col = _equilibrators(block)
    return _Factorization(
        scipy.linalg.lu_factor(block / row[:, None] / col), row, col
    )


class DecoupledForm(BaseModel):
    """Schur complements and decoupled forces at one evaluation point."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True
        frozen = True

    M1: np.ndarray = Field(..., description="Slow Schur complement, s x s")
    M2: np.ndarray = Field(..., description="Fast Schur complement, f x f")
    Q1: np.ndarray = Field(..., description="Decoupled slow forces")
    Q2: np.ndarray = Field(..., description="Decoupled fast forces")
    eps: float | None = Field(None, description="Small parameter of the evaluation")

    def accelerations(self) -> np.ndarray:
        """Solutions of M1 a1 = Q1 and M2 a2 = Q2, stacked."""
        first = _factorize(self.M1, "M1").solve(self.Q1)
        second = _factorize(self.M2, "M2").solve(self.Q2)
        return np.concatenate([first, second])


def schur_decouple(mass: np.ndarray, force: np.ndarray, s: int) -> DecoupledForm:
    """Decouple a block system M a = F with an s-dimensional leading block.

    Args:
        mass: n x n matrix.
        force: n vector.
        s: Size of the leading block.

    Returns:
        The decoupled form, built from LU factorizations of the diagonal blocks.
    """
    m11, m12 = mass[:s, :s], mass[:s, s:]
    m21, m22 = mass[s:, :s], mass[s:, s:]
    f1, f2 = force[:s], force[s:]
    lu22 = _factorize(m22, "M22")
    lu11 = _factorize(m11, "M11")
    return DecoupledForm(
        M1=m11 - m12 @ lu22.solve(m21),
        M2=m22 - m21 @ lu11.solve(m12),
        Q1=f1 - m12 @ lu22.solve(f2),
        Q2=f2 - m21 @ lu11.solve(f1),
    )


def inertial_decouple(
    system: MechanicalSystem,
    x: np.ndarray,
    xdot: np.ndarray,
    eta: np.ndarray,
    ydot: np.ndarray,
    t: float,
    eps: float,
) -> DecoupledForm:
    """Decoupled form of the scaled block system at (x, x', eta, y', t; eps)."""
    point = make_point(x, xdot, eta, ydot, t)
    mass, force = system.evaluate_scaled(point, eps)
    form = schur_decouple(mass, force, system.s)
    return form.copy(update={"eps": eps})


class NormalizedForcing(BaseModel):
    """Mass-normalized forcings P1, P2 at an evaluation point."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True
        frozen = True

    P1: np.ndarray
    P2: np.ndarray
    point: Any = Field(..., description="Evaluation point, a Point")
    eps: float


def normalized_forcing(
    system: MechanicalSystem, point: Point, eps: float
) -> NormalizedForcing:
    """P1 = M1^-1 Q1 and P2 = eps M2^-1 Q2 through the decoupled form.

    At eps = 0 the scaled evaluators are used directly, which requires the
    preset to define its scaled block form there.
    """
    form = inertial_decouple(system, *point, eps)
    accelerations = form.accelerations()
    return NormalizedForcing(
        P1=accelerations[: system.s],
        P2=accelerations[system.s :],
        point=point,
        eps=eps,
    )


def forcing(system: MechanicalSystem, point: Point, eps: float) -> np.ndarray:
    """Stacked (P1, P2) by a single dense solve of the scaled block system.

    Equal to `normalized_forcing` up to round-off; used on hot paths.
    """
    mass, force = system.evaluate_scaled(point, eps)
    try:
        return equilibrated_solve(mass, force)
    except (np.linalg.LinAlgError, ValueError) as error:
        condition = equilibrated_condition(mass)
        message = "Scaled mass matrix is singular"
        logger.warn(message, system=system.name, eps=eps, condition=condition)
        raise SingularBlock(message, block="M", condition=condition) from error


def _along(
    system: MechanicalSystem,
    point: Point,
    eps: float,
    variable: Variable,
    value: np.ndarray,
) -> np.ndarray:
    if variable == "eps":
        return forcing(system, point, float(value[0]))
    return forcing(system, point.replace(variable, value), eps)


def forcing_jacobian(
    system: MechanicalSystem, point: Point, eps: float, variable: Variable
) -> np.ndarray:
    """Jacobian of the stacked (P1, P2) with respect to one argument.

    Analytic force derivatives are used when the system provides them and the
    scaled mass does not depend on the argument; otherwise central differences
    with steps cbrt(machine eps) * max(1, |v|). Derivatives in eps stay on the
    side eps >= 0.

    Returns:
        n x k matrix, k the size of the argument.
    """
    analytic = system.force_derivative(variable, point, eps)
    if analytic is not None and not system.mass_varies(variable):
        mass, _ = system.evaluate_scaled(point, eps)
        analytic = np.asarray(analytic, dtype=float).reshape(system.n, -1)
        return equilibrated_solve(mass, analytic)

    func = partial(_along, system, point, eps, variable)
    if variable == "eps":
        step = CBRT_EPS * max(1.0, eps)
        if eps - step < 0.0:
            return one_sided_derivative(func, eps, step).reshape(system.n, 1)
        return central_jacobian(func, np.array([eps]), np.array([step]))
    value = point.vector(variable)
    return central_jacobian(func, value, fd_steps(value))


class A1Verdict(str, Enum):
    """Outcome of the extension check."""

    EXTENDS = "extends"
    DIVERGES = "diverges"
    INCONCLUSIVE = "inconclusive"


class A1Sample(BaseModel):
    """Extension diagnostics at one sample."""

    point: list[float]
    differences: list[float]
    ratios: list[float]
    growth: float
    limit: list[float] = Field(..., description="Extrapolated P(.; 0)")
    verdict: A1Verdict


class A1Report(BaseModel):
    """Result of checking that P1, P2 extend smoothly to eps = 0."""

    verdict: A1Verdict
    eps_sequence: list[float]
    contraction: float
    samples: list[A1Sample]

    def export(self) -> dict:
        """JSON document {verdict, samples: [{point, ratios}]}."""
        return {
            "verdict": self.verdict.value,
            "samples": [
                {"point": sample.point, "ratios": sample.ratios}
                for sample in self.samples
            ],
        }


def validate_eps_sequence(eps_sequence: tuple[float, ...] | list[float]) -> None:
    """Require a strictly decreasing geometric sequence of at least four terms."""
    values = np.asarray(eps_sequence, dtype=float)
    if values.size < 4:
        raise ValueError("eps sequence needs at least 4 terms")
    if np.any(values <= 0.0) or np.any(np.diff(values) >= 0.0):
        raise ValueError("eps sequence must be positive and strictly decreasing")
    quotients = values[1:] / values[:-1]
    if not np.allclose(quotients, quotients[0], rtol=1e-9, atol=0.0):
        raise ValueError("eps sequence must be geometric")


def _sample_extension(
    system: MechanicalSystem,
    point: Point,
    eps_sequence: tuple[float, ...],
    contraction: float,
    noise: float,
) -> A1Sample:
    values = []
    for eps in eps_sequence:
        try:
            values.append(forcing(system, point, eps))
        except (EvaluatorFailure, SingularBlock) as error:
            message = "Evaluator failed during extension check"
            logger.warn(message, system=system.name, eps=eps, t=point.t)
            raise EvaluatorFailure(message, eps=eps, point=list(point)) from error
    stacked = np.array(values)
    floor = noise * (1.0 + np.max(np.abs(stacked)))
    differences = np.max(np.abs(np.diff(stacked, axis=0)), axis=1)
    ratios = [
        float(current / following) if following > floor else float("inf")
        for current, following in pairwise(differences)
    ]

    growth = 1.0
    for block in (slice(0, system.s), slice(system.s, system.n)):
        first = np.max(np.abs(stacked[0, block]))
        last = np.max(np.abs(stacked[-1, block]))
        if first > floor:
            growth = max(growth, float(last / first))

    if growth >= 10.0:
        verdict = A1Verdict.DIVERGES
    elif all(
        ratio >= contraction or difference <= floor
        for ratio, difference in zip(ratios, differences[:-1])
    ):
        verdict = A1Verdict.EXTENDS
    else:
        verdict = A1Verdict.INCONCLUSIVE

    # Linear extrapolation of the last two terms to eps = 0
    eps_a, eps_b = eps_sequence[-2], eps_sequence[-1]
    limit = (eps_a * stacked[-1] - eps_b * stacked[-2]) / (eps_a - eps_b)
    return A1Sample(
        point=np.concatenate(
            [point.x, point.xdot, point.eta, point.ydot, [point.t]]
        ).tolist(),
        differences=differences.tolist(),
        ratios=ratios,
        growth=growth,
        limit=limit.tolist(),
        verdict=verdict,
    )


def check_A1(
    system: MechanicalSystem,
    samples: list[Point],
    eps_sequence: tuple[float, ...] | None = None,
    contraction: float = 1.8,
    noise: float = 1e-12,
) -> A1Report:
    """Check numerically that P1 and P2 extend smoothly to eps = 0.

    Args:
        system: System to check.
        samples: Points (x, x', eta, y', t), eta held fixed along the sequence.
        eps_sequence: Strictly decreasing geometric sequence, defaults to the
            sequence declared by the system.
        contraction: Required contraction of successive differences.
        noise: Relative round-off floor below which differences count as zero.

    Returns:
        The report; "diverges" when some block grows tenfold along the sequence.
    """
    if eps_sequence is None:
        eps_sequence = system.eps_sequence()
    validate_eps_sequence(eps_sequence)
    eps_sequence = tuple(eps_sequence)
    logger_ = logger.bind(system=system.name)
    results = [
        _sample_extension(system, point, eps_sequence, contraction, noise)
        for point in samples
    ]
    verdicts = {result.verdict for result in results}
    if A1Verdict.DIVERGES in verdicts:
        verdict = A1Verdict.DIVERGES
    elif verdicts == {A1Verdict.EXTENDS}:
        verdict = A1Verdict.EXTENDS
    else:
        verdict = A1Verdict.INCONCLUSIVE
    logger_.info("Extension checked", verdict=verdict.value, n_samples=len(results))
    return A1Report(
        verdict=verdict,
        eps_sequence=list(eps_sequence),
        contraction=contraction,
        samples=results,
    )
