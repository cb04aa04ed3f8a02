# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-many-arguments,too-many-locals,invalid-name
"""Equilibrium local reductions and the two degree of freedom SSM oracle.

Near an unforced fixed point of the critical manifold G0 has the Taylor
expansion eta = Gamma + Phi x + (Theta x) x + O(|x|^3). Static condensation
keeps the flat part, modal derivatives the quadratic one. For the two degree
of freedom example the exact reduced model on the slow spectral submanifold is
known in closed form up to cubic order and serves as reference.
"""
from functools import partial
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Field

from .critical import solve_critical_point
from .decomposition import forcing
from .decomposition import inertial_decouple
from .exceptions import A4Violated
from .exceptions import A5Violated
from .exceptions import NearResonance
from .exceptions import NoConvergence
from .exceptions import SingularJacobian
from .integrate import integrate
from .integrate import Method
from .presets import TwoDofParameters
from .presets import TwoDofSSM
from .slow_manifold import implicit_jacobians
from .systems import make_point
from .systems import MechanicalSystem
from .systems import random_states
from .utils import central_hessian
from .utils import central_jacobian


logger = structlog.get_logger()

#: Threshold on |D| below which the SSM coefficients are undefined.
RESONANCE_TOL = 1e-8
STATIC_CONDENSATION = "static-condensation"
MODAL_DERIVATIVES = "modal-derivatives"


class LocalExpansion(BaseModel):
    """Quadratic Taylor expansion of G0 about x = 0 at time t."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True
        frozen = True

    Gamma: np.ndarray = Field(..., description="Equilibrium offset, shape f")
    Phi: np.ndarray = Field(..., description="Linear part, shape f x s")
    Theta: np.ndarray = Field(..., description="Modal derivative tensor, f x s x s")
    t: float = 0.0

    def eta(self, x: Any, quadratic: bool = True) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        eta = self.Gamma + self.Phi @ x
        if quadratic:
            eta = eta + np.einsum("ijk,j,k->i", self.Theta, x, x)
        return eta

    def export(self) -> dict[str, Any]:
        return {
            "Gamma": self.Gamma.tolist(),
            "Phi": self.Phi.tolist(),
            "Theta": self.Theta.tolist(),
            "t": self.t,
        }


def _fast_force(
    system: MechanicalSystem,
    x: np.ndarray,
    y: np.ndarray,
    ydot: np.ndarray,
    t: float,
    xdot: np.ndarray,
) -> np.ndarray:
    return inertial_decouple(system, x, xdot, y, ydot, t, 0.0).Q2


def check_A4(
    system: MechanicalSystem, samples: int = 20, seed: int = 42, tol: float = 1e-8
) -> float:
    """Largest |dQ2/dx'| over random states, eps = 0.

    Raises:
        A4Violated: Q2 depends on the slow velocities.
    """
    worst = 0.0
    for x, xdot, y, ydot, t in random_states(system, samples, seed):
        fast_force = partial(_fast_force, system, x, y, ydot, t)
        derivative = central_jacobian(fast_force, xdot)
        scale = 1.0 + float(np.max(np.abs(fast_force(xdot))))
        worst = max(worst, float(np.max(np.abs(derivative))) / scale)
    if worst > tol:
        message = "Fast forces depend on the slow velocities"
        logger.warn(message, system=system.name, derivative=worst)
        raise A4Violated(message, derivative=worst)
    return worst


def local_expansion(
    system: MechanicalSystem, t: float = 0.0, check: bool = True
) -> LocalExpansion:
    """Gamma, Phi and Theta of the critical manifold at x = 0, x' = 0.

    Theta = -1/2 J^-1 [P2_xx + (2 P2_xeta + P2_etaeta Phi) Phi] with J = dP2/deta,
    symmetrized in its last two indices.

    Raises:
        A4Violated: Q2 depends on x'.
        A5Violated: Newton from eta = 0 at the origin fails.
        SingularJacobian: dP2/deta is singular at the fixed point.
    """
    s, f = system.s, system.f
    if check:
        check_A4(system)
    zeros = np.zeros(s)
    try:
        point = solve_critical_point(system, zeros, zeros, t, np.zeros(f))
    except (NoConvergence, SingularJacobian) as error:
        message = "No unforced fixed point on the critical manifold"
        logger.warn(message, system=system.name, t=t)
        raise A5Violated(message, t=t) from error
    Gamma = point.eta
    Phi = implicit_jacobians(system, point).dx

    def fast_acceleration(value: np.ndarray) -> np.ndarray:
        candidate = make_point(value[:s], zeros, value[s:], np.zeros(f), t)
        return forcing(system, candidate, 0.0)[s:]

    hessian = central_hessian(fast_acceleration, np.concatenate([zeros, Gamma]))
    H_xx = hessian[:, :s, :s]
    H_xeta = hessian[:, :s, s:]
    H_etaeta = hessian[:, s:, s:]
    bracket = (
        H_xx
        + 2.0 * np.einsum("ijl,lk->ijk", H_xeta, Phi)
        + np.einsum("ilm,lj,mk->ijk", H_etaeta, Phi, Phi)
    )
    jacobian = -point.B
    Theta = -0.5 * np.linalg.solve(jacobian, bracket.reshape(f, s * s))
    Theta = Theta.reshape(f, s, s)
    Theta = 0.5 * (Theta + Theta.transpose(0, 2, 1))
    logger.debug("Local expansion", system=system.name, t=t, Theta=Theta.tolist())
    return LocalExpansion(Gamma=Gamma, Phi=Phi, Theta=Theta, t=t)


def hypothesis_warnings(
    system: MechanicalSystem, expansion: LocalExpansion, tol: float = 1e-8
) -> list[str]:
    """Violated hypotheses of the equilibrium local reductions at the origin."""
    s, f = system.s, system.f
    zeros = np.zeros(s)
    warnings = []

    def fast_acceleration(value: np.ndarray) -> np.ndarray:
        candidate = make_point(
            value[:s], zeros, value[s:-1], np.zeros(f), float(value[-1])
        )
        return forcing(system, candidate, 0.0)[s:]

    base = np.concatenate([zeros, expansion.Gamma, [expansion.t]])
    time_derivative = central_jacobian(fast_acceleration, base)[:, -1]
    if np.max(np.abs(time_derivative)) > tol:
        warnings.append("P2 depends explicitly on time")
    mixed = central_hessian(fast_acceleration, base)[:, :s, s : s + f]
    if np.max(np.abs(mixed)) > np.sqrt(tol):
        warnings.append("P2 has mixed x-eta second derivatives at the origin")
    if np.max(np.abs(expansion.Gamma), initial=0.0) > tol:
        warnings.append("Critical manifold is offset from the origin")
    if np.max(np.abs(expansion.Phi), initial=0.0) > tol:
        warnings.append("Critical manifold is not tangent to the slow subspace")
    for warning in warnings:
        logger.warn(warning, system=system.name)
    return warnings


class LocalReducedModel:
    """x'' = P1(x, x', eta(x), 0, t; 0) for a local graph eta(x).

    The model is expected to hold on a neighbourhood of size
    eps^validity_exponent; the size is reported, not enforced.
    """

    def __init__(
        self,
        system: MechanicalSystem,
        expansion: LocalExpansion,
        name: str,
        quadratic: bool,
        validity_exponent: float,
        warnings: list[str],
    ) -> None:
        self.system = system
        self.expansion = expansion
        self.name = name
        self.quadratic = quadratic
        self.validity_exponent = validity_exponent
        self.warnings = warnings

    def acceleration(self, x: Any, xdot: Any, t: float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xdot = np.atleast_1d(np.asarray(xdot, dtype=float))
        eta = self.expansion.eta(x, self.quadratic)
        point = make_point(x, xdot, eta, np.zeros(self.system.f), t)
        return forcing(self.system, point, 0.0)[: self.system.s]

    def vector_field(self, t: float, state: np.ndarray) -> np.ndarray:
        s = self.system.s
        x, xdot = state[:s], state[s:]
        return np.concatenate([xdot, self.acceleration(x, xdot, t)])

    def describe(self) -> dict[str, Any]:
        return {
            "system": self.system.name,
            "model": self.name,
            "validity_exponent": self.validity_exponent,
            "neighbourhood": self.system.eps**self.validity_exponent,
            "warnings": self.warnings,
            **self.expansion.export(),
        }


def static_condensation_model(
    system: MechanicalSystem, expansion: LocalExpansion
) -> LocalReducedModel:
    """Flat graph eta = Gamma + Phi x, valid on an eps^(1/3) neighbourhood."""
    return LocalReducedModel(
        system,
        expansion,
        STATIC_CONDENSATION,
        quadratic=False,
        validity_exponent=1.0 / 3.0,
        warnings=hypothesis_warnings(system, expansion),
    )


def modal_derivatives_model(
    system: MechanicalSystem, expansion: LocalExpansion
) -> LocalReducedModel:
    """Quadratic graph with the modal derivative tensor, eps^(1/4) neighbourhood."""
    return LocalReducedModel(
        system,
        expansion,
        MODAL_DERIVATIVES,
        quadratic=True,
        validity_exponent=0.25,
        warnings=hypothesis_warnings(system, expansion),
    )


def ssm_matrix(parameters: TwoDofParameters) -> np.ndarray:
    """Linear system for (alpha, beta, gamma) with right-hand side -(c, 0, 0)."""
    c1, c2, k1, k2 = parameters.c1, parameters.c2, parameters.k1, parameters.k2
    return np.array(
        [
            [k2 - 2.0 * k1, k1 * (c1 - c2), 2.0 * k1**2],
            [
                2.0 * (c2 - c1),
                k2 - 4.0 * k1 + c1**2 - c1 * c2,
                2.0 * k1 * (3.0 * c1 - c2),
            ],
            [2.0, c2 - 3.0 * c1, k2 - 2.0 * k1 + 4.0 * c1**2 - 2.0 * c1 * c2],
        ]
    )


def ssm_denominator(parameters: TwoDofParameters) -> float:
    c1, c2, k1, k2 = parameters.c1, parameters.c2, parameters.k1, parameters.k2
    return (c1**2 - c1 * c2 + k2) * (
        4.0 * c1**2 * k2
        - 8.0 * c1 * c2 * k1
        - 2.0 * c1 * c2 * k2
        + 4.0 * c2**2 * k1
        + (k2 - 4.0 * k1) ** 2
    )


def ssm_closed_form(parameters: TwoDofParameters) -> tuple[float, float, float]:
    """Closed form (alpha, beta, gamma); requires a nonzero denominator."""
    p = parameters
    c1, c2, k1, k2, c = p.c1, p.c2, p.k1, p.k2, p.c
    D = ssm_denominator(p)
    alpha = (
        -c
        / D
        * (
            4.0 * c1**4
            - 6.0 * c1**3 * c2
            + 2.0 * c1**2 * c2**2
            + 5.0 * c1**2 * k2
            - c1 * c2 * (2.0 * k1 + 3.0 * k2)
            + 2.0 * c2**2 * k1
            + (k2 - 2.0 * k1) * (k2 - 4.0 * k1)
        )
    )
    beta = (
        -2.0
        * c
        / D
        * (
            4.0 * c1 * k1
            + k2 * (c1 - c2)
            + 2.0 * c1 * c2**2
            - 6.0 * c1**2 * c2
            + 4.0 * c1**3
        )
    )
    gamma = (
        -2.0 * c / D * (2.0 * c1**2 - 3.0 * c1 * c2 + c2**2 + 4.0 * k1 - k2)
    )
    return alpha, beta, gamma


class SSMCubicModel(BaseModel):
    """Reduced model on the slow spectral submanifold up to cubic order.

    x'' + [c1 + (mu1 + a beta) x^2] x' + (k1 + a gamma x'^2) x + (b + a alpha) x^3 = 0
    on the graph y = alpha x^2 + beta x x' + gamma x'^2.
    """

    class Config:
        """Frozen."""

        frozen = True

    alpha: float
    beta: float
    gamma: float
    D: float = Field(..., description="Denominator of the closed form coefficients")
    residual: float = Field(..., description="Residual of the 3 x 3 linear solve")
    closed_form: tuple[float, float, float]
    parameters: TwoDofParameters

    @property
    def damping(self) -> float:
        """Coefficient of x^2 x'."""
        return self.parameters.mu1 + self.parameters.a * self.beta

    @property
    def velocity_stiffness(self) -> float:
        """Coefficient of x'^2 x."""
        return self.parameters.a * self.gamma

    @property
    def cubic(self) -> float:
        return self.parameters.b + self.parameters.a * self.alpha

    def graph(self, x: float, xdot: float) -> float:
        return self.alpha * x**2 + self.beta * x * xdot + self.gamma * xdot**2

    def lift(self, x: float, xdot: float) -> np.ndarray:
        """Full state (x, x', y, y') on the graph, y' to second order."""
        p = self.parameters
        xddot = -p.c1 * xdot - p.k1 * x
        ydot = (2.0 * self.alpha * x + self.beta * xdot) * xdot + (
            self.beta * x + 2.0 * self.gamma * xdot
        ) * xddot
        return np.array([x, xdot, self.graph(x, xdot), ydot])

    def acceleration(self, x: float, xdot: float) -> float:
        p = self.parameters
        return -(
            (p.c1 + self.damping * x**2) * xdot
            + (p.k1 + self.velocity_stiffness * xdot**2) * x
            + self.cubic * x**3
        )

    def vector_field(self, t: float, state: np.ndarray) -> np.ndarray:
        x, xdot = state
        return np.array([xdot, self.acceleration(x, xdot)])

    def export(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "D": self.D,
            "damping": self.damping,
            "velocity_stiffness": self.velocity_stiffness,
            "cubic": self.cubic,
        }


def ssm_cubic(parameters: TwoDofParameters) -> SSMCubicModel:
    """Solve for the SSM coefficients and assemble the cubic reduced model.

    Raises:
        NearResonance: |D| <= 1e-8, close to the 2:1 resonance k2 = 4 k1.
    """
    D = ssm_denominator(parameters)
    if abs(D) <= RESONANCE_TOL:
        message = "No spectral submanifold near 2:1 resonance"
        logger.warn(message, denominator=D, k1=parameters.k1, k2=parameters.k2)
        raise NearResonance(message, denominator=D)
    matrix = ssm_matrix(parameters)
    rhs = np.array([-parameters.c, 0.0, 0.0])
    coefficients = np.linalg.solve(matrix, rhs)
    residual = float(np.max(np.abs(matrix @ coefficients - rhs)))
    closed_form = ssm_closed_form(parameters)
    mismatch = np.max(
        np.abs(coefficients - closed_form) / np.maximum(1.0, np.abs(coefficients))
    )
    if mismatch > 1e-10:
        logger.warn("SSM closed form disagrees with linear solve", mismatch=mismatch)
    alpha, beta, gamma = coefficients
    return SSMCubicModel(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        D=D,
        residual=residual,
        closed_form=closed_form,
        parameters=parameters,
    )


def md_cubic(parameters: TwoDofParameters) -> float:
    """Cubic coefficient of the modal derivatives model, b - a c / k2."""
    return parameters.b - parameters.a * parameters.c / parameters.k2


def coefficient_gap(parameters: TwoDofParameters) -> float:
    """|cubic(SSM) - cubic(MD)|."""
    return abs(ssm_cubic(parameters).cubic - md_cubic(parameters))


def slow_fast_scaled(parameters: TwoDofParameters, eps: float) -> TwoDofParameters:
    """Parameters with c2 -> c2 / eps and k2 -> k2 / eps^2."""
    return parameters.copy(
        update={"c2": parameters.c2 / eps, "k2": parameters.k2 / eps**2}
    )


def resonance_sweep(k1: float, points: int = 9) -> list[float]:
    """k2 values approaching 4 k1 from 8 k1: 4 k1 (1 + 2^-j)."""
    return [4.0 * k1 * (1.0 + 2.0**-j) for j in range(points)]


def sweep_entry(parameters: TwoDofParameters, k2: float) -> dict[str, Any]:
    """Coefficient gap at one k2, None at resonance."""
    try:
        gap: float | None = coefficient_gap(parameters.copy(update={"k2": k2}))
    except NearResonance:
        gap = None
    return {"k2": k2, "gap": gap}


class ComparisonReport(BaseModel):
    """SC, MD and SSM reduced models of the two degree of freedom example."""

    class Config:
        """Arbitrary types need to be allowed to have numpy members."""

        arbitrary_types_allowed = True

    coeffs: dict[str, float]
    gap: float
    ssm: SSMCubicModel
    divergence: dict[str, float] = Field(
        ..., description="Largest distance of SC and MD trajectories from SSM"
    )
    sweep: list[dict[str, Any]]
    scaled: list[dict[str, float]]
    times: np.ndarray
    trajectories: dict[str, np.ndarray]

    def export(self) -> dict[str, Any]:
        """JSON document {coeffs:{sc, md, ssm}, gap, sweep, scaled, divergence}."""
        return {
            "coeffs": self.coeffs,
            "gap": self.gap,
            "ssm": self.ssm.export(),
            "divergence": self.divergence,
            "sweep": self.sweep,
            "scaled": self.scaled,
        }


def compare_reductions(
    parameters: TwoDofParameters,
    initial: tuple[float, float] = (0.1, 0.0),
    t_span: tuple[float, float] = (0.0, 50.0),
    k2_sweep: list[float] | None = None,
    scaled_eps: tuple[float, ...] = (0.1, 0.05, 0.025),
    samples: int = 1001,
    method: Method = "adaptive-explicit",
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> ComparisonReport:
    """Integrate the SC, MD and SSM cubic models from one state and compare.

    Raises:
        NearResonance: The SSM model is undefined for the parameters.
    """
    ssm = ssm_cubic(parameters)
    system = TwoDofSSM(parameters)
    expansion = local_expansion(system, 0.0)
    models = {
        "sc": static_condensation_model(system, expansion).vector_field,
        "md": modal_derivatives_model(system, expansion).vector_field,
        "ssm": ssm.vector_field,
    }
    times = np.linspace(t_span[0], t_span[1], samples)
    trajectories = {
        name: integrate(
            field,
            np.array(initial, dtype=float),
            t_span,
            rtol=rtol,
            atol=atol,
            method=method,
            t_eval=times,
        ).states
        for name, field in models.items()
    }
    reference = trajectories["ssm"]
    divergence = {
        name: float(np.max(np.linalg.norm(trajectories[name] - reference, axis=1)))
        for name in ("sc", "md")
    }
    coeffs = {"sc": parameters.b, "md": md_cubic(parameters), "ssm": ssm.cubic}
    k2_sweep = k2_sweep if k2_sweep is not None else resonance_sweep(parameters.k1)
    sweep = [sweep_entry(parameters, k2) for k2 in k2_sweep]
    scaled = [
        {"eps": eps, "gap": coefficient_gap(slow_fast_scaled(parameters, eps))}
        for eps in scaled_eps
    ]
    gap = abs(coeffs["ssm"] - coeffs["md"])
    logger.info("Reductions compared", gap=gap, **divergence)
    return ComparisonReport(
        coeffs=coeffs,
        gap=gap,
        ssm=ssm,
        divergence=divergence,
        sweep=sweep,
        scaled=scaled,
        times=times,
        trajectories=trajectories,
    )
