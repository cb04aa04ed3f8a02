# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-few-public-methods,too-many-arguments
"""Critical manifold, tangent matrices and formal stability.

At eps = 0 the fast equations reduce to the algebraic condition
Q2(x, x', eta, 0, t; 0) = 0, solved pointwise for eta = G0(x, x', t) by a
damped Newton iteration on P2. Linearizing the fast equations about a solution
gives the frozen oscillator eta'' + A eta' + B eta = 0 with A = -dP2/dy' and
B = -dP2/deta, whose companion spectrum decides formal stability.
"""
from collections.abc import Callable
from functools import partial
from typing import Any

import numpy as np
import scipy.linalg
import structlog
from pydantic import BaseModel
from pydantic import Field

from .decomposition import equilibrated_condition
from .decomposition import equilibrated_solve
from .decomposition import forcing
from .decomposition import forcing_jacobian
from .decomposition import inertial_decouple
from .exceptions import EvaluatorFailure
from .exceptions import NoConvergence
from .exceptions import SingularBlock
from .exceptions import SingularJacobian
from .exceptions import UnstableSample
from .systems import DomainSampler
from .systems import make_point
from .systems import MechanicalSystem
from .systems import Point
from .systems import SlowSample
from .utils import central_jacobian
from .utils import map_in_threads


logger = structlog.get_logger()

#: Equilibrated condition number above which dP2/deta counts as singular.
JACOBIAN_CONDITION_LIMIT = 1e12
#: Fraction of the worst real part used as spectral gap.
GAP_SAFETY = 0.95


class CriticalPoint(BaseModel):
    """Solved point eta = G0(x, x', t) with its frozen linearization."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True
        frozen = True

    x: np.ndarray
    xdot: np.ndarray
    t: float
    eta: np.ndarray
    A: np.ndarray = Field(..., description="-dP2/dy' at the point")
    B: np.ndarray = Field(..., description="-dP2/deta at the point")
    spectrum: np.ndarray = Field(..., description="Companion eigenvalues")
    stable: bool
    residual: float = Field(..., description="max-norm of Q2 at the solution")
    iterations: int = 0

    @property
    def point(self) -> Point:
        """Evaluation point (x, x', eta, 0, t) of the scaled block form."""
        return make_point(self.x, self.xdot, self.eta, np.zeros(self.eta.size), self.t)

    @property
    def max_real(self) -> float:
        return float(np.max(self.spectrum.real))

    def export(self) -> dict[str, Any]:
        return {
            "x": self.x.tolist(),
            "xdot": self.xdot.tolist(),
            "t": self.t,
            "eta": self.eta.tolist(),
            "residual": self.residual,
            "stable": self.stable,
            "max_real": self.max_real,
        }


def _fast_balance(
    system: MechanicalSystem,
    x: np.ndarray,
    xdot: np.ndarray,
    eta: np.ndarray,
    t: float,
) -> tuple[np.ndarray, float]:
    """P2 and the max-norm of Q2 at (x, x', eta, 0, t; 0)."""
    form = inertial_decouple(system, x, xdot, eta, np.zeros(system.f), t, 0.0)
    p2 = form.accelerations()[system.s :]
    return p2, float(np.max(np.abs(form.Q2)))


def fast_jacobian(system: MechanicalSystem, point: Point) -> np.ndarray:
    """dP2/deta at eps = 0."""
    return forcing_jacobian(system, point, 0.0, "eta")[system.s :]


def check_formal_stability(
    A: np.ndarray, B: np.ndarray
) -> tuple[np.ndarray, bool]:
    """Spectrum of eta'' + A eta' + B eta = 0 and its asymptotic stability.

    The eigenvalues are those of the companion matrix [[0, I], [-B, -A]].
    Marginal spectra, real parts above -1e-12 (1 + |A| + |B|), count as
    unstable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("Tangent matrices must be finite")
    size = A.shape[0]
    companion = np.block(
        [[np.zeros((size, size)), np.eye(size)], [-B, -A]]
    )
    try:
        spectrum = scipy.linalg.eigvals(companion)
    except (scipy.linalg.LinAlgError, ValueError) as error:
        message = "Eigenvalue solver failed"
        logger.warn(message, size=size)
        raise EvaluatorFailure(message, size=size) from error
    scale = 1.0 + np.linalg.norm(A) + np.linalg.norm(B)
    stable = bool(np.max(spectrum.real) < -1e-12 * scale)
    return spectrum, stable


def tangent_matrices(
    system: MechanicalSystem, point: "CriticalPoint | Point"
) -> tuple[np.ndarray, np.ndarray]:
    """A = -dP2/dy' and B = -dP2/deta at (x, x', eta, 0, t; 0)."""
    if isinstance(point, CriticalPoint):
        point = point.point
    else:
        point = point._replace(ydot=np.zeros(system.f))
    s = system.s
    A = -forcing_jacobian(system, point, 0.0, "ydot")[s:]
    B = -forcing_jacobian(system, point, 0.0, "eta")[s:]
    return A, B


def _initial_guess(
    system: MechanicalSystem,
    x: np.ndarray,
    xdot: np.ndarray,
    t: float,
    eta_guess: np.ndarray | None,
) -> np.ndarray:
    if eta_guess is not None:
        return np.atleast_1d(np.asarray(eta_guess, dtype=float)).copy()
    closed = system.closed_form_critical(x, xdot, t)
    if closed is not None:
        return np.atleast_1d(np.asarray(closed, dtype=float)).copy()
    return np.zeros(system.f)


def solve_critical_point(
    system: MechanicalSystem,
    x: Any,
    xdot: Any,
    t: float,
    eta_guess: Any = None,
    tol: float = 1e-10,
    max_iterations: int = 50,
) -> CriticalPoint:
    """Solve Q2(x, x', eta, 0, t; 0) = 0 for eta by damped Newton iteration.

    Steps are halved until the residual decreases; once the residual is below
    tol * (1 + |Q2(guess)|) up to three further full steps are taken while they
    keep decreasing it.

    Args:
        system: The system.
        x: Slow positions.
        xdot: Slow velocities.
        t: Time.
        eta_guess: Initial guess selecting the branch, defaults to the system's
            closed form critical manifold or zero.
        tol: Relative residual tolerance.
        max_iterations: Iteration cap.

    Raises:
        NoConvergence: The cap was hit, carries the best iterate.
        SingularJacobian: dP2/deta became singular, the point is close to a fold.

    Returns:
        The critical point with tangent matrices and spectrum.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
    t = float(t)
    logger_ = logger.bind(system=system.name, t=t)
    eta = _initial_guess(system, x, xdot, t, eta_guess)
    balance = partial(_fast_balance, system, x, xdot, t=t)

    p2, residual = balance(eta=eta)
    target = tol * (1.0 + residual)
    best_eta, best_residual = eta, residual

    def newton_step(eta: np.ndarray, p2: np.ndarray) -> np.ndarray:
        point = make_point(x, xdot, eta, np.zeros(system.f), t)
        jacobian = fast_jacobian(system, point)
        condition = equilibrated_condition(jacobian)
        if not np.isfinite(condition) or condition > JACOBIAN_CONDITION_LIMIT:
            message = "Fast Jacobian is singular"
            logger_.warn(message, eta=eta.tolist(), condition=condition)
            raise SingularJacobian(message, eta=eta, condition=condition)
        return -equilibrated_solve(jacobian, p2)

    iterations = 0
    while residual > target:
        if iterations >= max_iterations:
            message = "Newton did not converge"
            logger_.warn(message, residual=best_residual, iterations=iterations)
            raise NoConvergence(message, best=best_eta, residual=best_residual)
        iterations += 1
        step = newton_step(eta, p2)
        damping = 1.0
        while True:
            trial = eta + damping * step
            try:
                trial_p2, trial_residual = balance(eta=trial)
            except (EvaluatorFailure, SingularBlock):
                trial_residual = float("inf")
            if trial_residual < residual or damping < 2.0**-20:
                break
            damping /= 2.0
        if not np.isfinite(trial_residual):
            message = "Newton did not converge"
            logger_.warn(message, residual=best_residual, iterations=iterations)
            raise NoConvergence(message, best=best_eta, residual=best_residual)
        eta, p2, residual = trial, trial_p2, trial_residual
        if residual < best_residual:
            best_eta, best_residual = eta, residual
        logger_.debug("Newton step", iteration=iterations, residual=residual)

    for _ in range(3):
        trial = eta + newton_step(eta, p2)
        trial_p2, trial_residual = balance(eta=trial)
        if not trial_residual < residual:
            break
        eta, p2, residual = trial, trial_p2, trial_residual

    A, B = tangent_matrices(system, make_point(x, xdot, eta, np.zeros(system.f), t))
    spectrum, stable = check_formal_stability(A, B)
    logger_.debug(
        "Critical point solved",
        eta=eta.tolist(),
        residual=residual,
        iterations=iterations,
        stable=stable,
    )
    return CriticalPoint(
        x=x,
        xdot=xdot,
        t=t,
        eta=eta,
        A=A,
        B=B,
        spectrum=spectrum,
        stable=stable,
        residual=residual,
        iterations=iterations,
    )


class StabilityCertificate(BaseModel):
    """Sample based spectral gap over the reduction domain.

    The certificate is not exhaustive, it only covers the sampled points.
    """

    class Config:
        """Serialize the gap as `lambda`."""

        allow_population_by_field_name = True
        frozen = True

    gap: float = Field(..., alias="lambda", gt=0.0, description="Spectral gap")
    margin: float = Field(..., description="Distance of -gap to the worst real part")
    worst_point: list[float] = Field(..., description="Sample (x, x', t) of max Re")
    n_samples: int

    def export(self) -> dict[str, Any]:
        """JSON document {lambda, margin, worst_point, n_samples}."""
        return self.dict(by_alias=True)


def certify_sample(
    system: MechanicalSystem,
    sample: SlowSample,
    eta_guess: Any = None,
    tol: float = 1e-10,
) -> CriticalPoint:
    """Solve one domain sample and require formal stability there."""
    x, xdot, t = sample
    base = np.concatenate([x, xdot, [t]])
    try:
        point = solve_critical_point(system, x, xdot, t, eta_guess, tol=tol)
    except SingularJacobian as error:
        message = "No isolated critical point at sample"
        logger.warn(message, system=system.name, point=base.tolist())
        raise UnstableSample(message, point=base) from error
    if not point.stable:
        message = "Critical point is not formally asymptotically stable"
        logger.warn(message, system=system.name, point=base.tolist())
        raise UnstableSample(message, point=base, spectrum=point.spectrum)
    return point


def certificate_from_points(points: list[CriticalPoint]) -> StabilityCertificate:
    """Spectral gap 0.95 |max Re| over solved, stable critical points."""
    if not points:
        raise ValueError("No samples to certify")
    worst = max(points, key=lambda point: point.max_real)
    worst_real = worst.max_real
    gap = GAP_SAFETY * abs(worst_real)
    return StabilityCertificate(
        gap=gap,
        margin=abs(worst_real) - gap,
        worst_point=np.concatenate([worst.x, worst.xdot, [worst.t]]).tolist(),
        n_samples=len(points),
    )


def spectral_gap(
    system: MechanicalSystem,
    sampler: DomainSampler | None = None,
    eta_guess: Any = None,
    tol: float = 1e-10,
) -> StabilityCertificate:
    """Certify formal stability on domain samples and return the gap.

    Raises:
        UnstableSample: Some sample is unstable or has no isolated critical
            point; the domain has to be shrunk.
    """
    sampler = sampler or DomainSampler()
    samples = sampler.samples(system)
    points = [certify_sample(system, sample, eta_guess, tol) for sample in samples]
    certificate = certificate_from_points(points)
    logger.info(
        "Spectral gap certified",
        system=system.name,
        gap=certificate.gap,
        n_samples=certificate.n_samples,
    )
    return certificate


async def spectral_gap_concurrently(
    system: MechanicalSystem,
    sampler: DomainSampler | None = None,
    eta_guess: Any = None,
    tol: float = 1e-10,
    jobs: int = 1,
) -> tuple[StabilityCertificate, list[CriticalPoint]]:
    """`spectral_gap` with samples solved on worker threads.

    Returns:
        The certificate and the solved points in sample order.
    """
    sampler = sampler or DomainSampler()
    samples = sampler.samples(system)
    solve = partial(certify_sample, system, eta_guess=eta_guess, tol=tol)
    points = await map_in_threads(jobs, solve, samples)
    certificate = certificate_from_points(points)
    logger.info(
        "Spectral gap certified",
        system=system.name,
        gap=certificate.gap,
        n_samples=certificate.n_samples,
        jobs=jobs,
    )
    return certificate, points


def first_order_field(
    system: MechanicalSystem, eps: float
) -> Callable[[float, np.ndarray], np.ndarray]:
    """Autonomous first order field in z = (x, x', eta, y'), eps > 0.

    x' and x'' = P1 are slow, the fast part (eta', y'') = (y', P2) / eps.
    """
    if eps <= 0.0:
        raise ValueError("The first order field requires eps > 0")
    s, f = system.s, system.f

    def field(t: float, state: np.ndarray) -> np.ndarray:
        x, xdot = state[:s], state[s : 2 * s]
        eta, ydot = state[2 * s : 2 * s + f], state[2 * s + f :]
        accelerations = forcing(system, make_point(x, xdot, eta, ydot, t), eps)
        return np.concatenate(
            [xdot, accelerations[:s], ydot / eps, accelerations[s:] / eps]
        )

    return field


def first_order_jacobian(
    system: MechanicalSystem, point: CriticalPoint, eps: float
) -> np.ndarray:
    """Jacobian of `first_order_field` at (x, x', G0, 0, t).

    Its fast block tends to the companion matrix divided by eps as eps -> 0.
    """
    field = first_order_field(system, eps)
    state = np.concatenate([point.x, point.xdot, point.eta, np.zeros(system.f)])
    return central_jacobian(partial(field, point.t), state)
