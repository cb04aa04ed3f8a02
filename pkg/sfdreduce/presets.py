# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-few-public-methods,invalid-name,too-many-locals
"""Built-in example systems.

Every preset is a `MechanicalSystem` implementing both the unscaled and the
epsilon-scaled evaluators, with its parameters held in a frozen pydantic model.
Presets are created by name through `load_preset`.
"""
from collections.abc import Callable
from math import asinh
from math import sinh
from math import sqrt
from typing import Any
from typing import NamedTuple

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Extra
from pydantic import Field
from pydantic import root_validator
from pydantic import ValidationError

from .decomposition import equilibrated_solve
from .exceptions import InvalidParameter
from .exceptions import UnknownParameter
from .exceptions import UnknownPreset
from .systems import DomainBox
from .systems import MechanicalSystem
from .systems import Point
from .systems import TimeDependence
from .systems import Variable


logger = structlog.get_logger()


class PresetParameters(BaseModel):
    """Base of preset parameter models."""

    class Config:
        """Parameters are frozen and closed."""

        frozen = True
        extra = Extra.forbid


def _quadratic(tensor: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.einsum("kij,i,j->k", tensor, z, z)


def _quadratic_gradient(tensor: np.ndarray, z: np.ndarray) -> np.ndarray:
    return (tensor + tensor.transpose(0, 2, 1)) @ z


class QuadraticParameters(PresetParameters):
    """Linear structure with quadratic couplings and harmonic forcing.

    The slow equations read M1 x'' + C1 x' + K1 x + S1(x, .) = f1(t), the fast
    ones eps^p M2 y'' + C2 y' + K2 y / eps^r + S2(x, .) = f2(t). A coupling is
    stiff when it is evaluated at y/eps and non-stiff when evaluated at y.
    """

    M1: list[list[float]] = Field([[1.0]], description="Slow mass matrix")
    C1: list[list[float]] = Field([[0.1]], description="Slow damping matrix")
    K1: list[list[float]] = Field([[1.0]], description="Slow stiffness matrix")
    M2: list[list[float]] = Field([[1.0]], description="Fast mass matrix")
    C2: list[list[float]] = Field([[1.0]], description="Fast damping matrix")
    K2: list[list[float]] = Field([[1.0]], description="Fast stiffness matrix")
    S1: list[list[list[float]]] = Field(
        [[[0.0, 0.5], [0.5, 0.0]]],
        description="Slow coupling tensor, S1_k(z) = sum_ij S1[k][i][j] z_i z_j",
    )
    S2: list[list[list[float]]] = Field(
        [[[-1.0, 0.0], [0.0, 0.0]]], description="Fast coupling tensor"
    )
    f1_amp: list[float] = Field([0.0], description="Slow forcing amplitudes")
    f2_amp: list[float] = Field([0.5], description="Fast forcing amplitudes")
    omega: float = Field(1.0, gt=0.0, description="Forcing frequency")
    fast_mass_order: int = Field(1, ge=0, le=2, description="p in eps^p M2")
    fast_stiffness_order: int = Field(1, ge=0, le=1, description="r in K2/eps^r")
    s1_stiff: bool = Field(True, description="S1 evaluated at y/eps")
    s2_stiff: bool = Field(False, description="S2 evaluated at y/eps")

    @root_validator(skip_on_failure=True)
    def check_shapes(cls, values: dict[str, Any]) -> dict[str, Any]:
        """Block sizes must agree, masses must be positive definite."""
        s = len(values["M1"])
        f = len(values["M2"])
        n = s + f
        expected = {
            "M1": (s, s),
            "C1": (s, s),
            "K1": (s, s),
            "M2": (f, f),
            "C2": (f, f),
            "K2": (f, f),
            "S1": (s, n, n),
            "S2": (f, n, n),
            "f1_amp": (s,),
            "f2_amp": (f,),
        }
        for name, shape in expected.items():
            if np.shape(values[name]) != shape:
                raise ValueError(f"{name} must have shape {shape}")
        for name in ("M1", "M2"):
            matrix = np.array(values[name])
            if np.min(np.linalg.eigvalsh((matrix + matrix.T) / 2.0)) <= 0.0:
                raise ValueError(f"non-positive mass matrix {name}")
        for name in ("K1", "K2"):
            matrix = np.array(values[name])
            if np.min(np.linalg.eigvalsh((matrix + matrix.T) / 2.0)) < 0.0:
                raise ValueError(f"non-positive stiffness matrix {name}")
        return values


class QuadraticSystem(MechanicalSystem):
    """Quadratically coupled slow-fast system.

    The scaled block form multiplies the fast rows by rho = eps^max(0, 1-p),
    which keeps the scaled mass eps^max(p-1, 0) M2 finite at eps = 0.
    """

    def __init__(
        self,
        parameters: QuadraticParameters,
        eps: float,
        name: str = "quadratic",
        mode: str | None = None,
        domain: DomainBox | None = None,
    ) -> None:
        self.parameters = parameters
        self.M1 = np.array(parameters.M1)
        self.C1 = np.array(parameters.C1)
        self.K1 = np.array(parameters.K1)
        self.M2 = np.array(parameters.M2)
        self.C2 = np.array(parameters.C2)
        self.K2 = np.array(parameters.K2)
        self.S1 = np.array(parameters.S1)
        self.S2 = np.array(parameters.S2)
        self.f1_amp = np.array(parameters.f1_amp)
        self.f2_amp = np.array(parameters.f2_amp)
        self.p = parameters.fast_mass_order
        self.r = parameters.fast_stiffness_order
        forced = bool(np.any(self.f1_amp) or np.any(self.f2_amp))
        super().__init__(
            n=len(self.M1) + len(self.M2),
            s=len(self.M1),
            eps=eps,
            time_dependence=TimeDependence.from_frequencies(
                [parameters.omega] if forced else []
            ),
            domain=domain,
            name=name,
            mode=mode,
        )

    def forcing(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        phase = np.sin(self.parameters.omega * t)
        return self.f1_amp * phase, self.f2_amp * phase

    def forcing_rate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        omega = self.parameters.omega
        rate = omega * np.cos(omega * t)
        return self.f1_amp * rate, self.f2_amp * rate

    def _row_factor(self, eps: float) -> float:
        return eps ** max(0, 1 - self.p)

    def _couplings(
        self, x: np.ndarray, eta: np.ndarray, eps: float
    ) -> tuple[np.ndarray, np.ndarray]:
        z1 = np.concatenate([x, eta if self.parameters.s1_stiff else eps * eta])
        z2 = np.concatenate([x, eta if self.parameters.s2_stiff else eps * eta])
        return z1, z2

    def mass(self, q: np.ndarray, t: float, eps: float) -> np.ndarray:
        mass = np.zeros((self.n, self.n))
        mass[: self.s, : self.s] = self.M1
        mass[self.s :, self.s :] = eps**self.p * self.M2
        return mass

    def force(
        self, q: np.ndarray, qdot: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        x, y = self.split(q)
        xdot, ydot = self.split(qdot)
        f1, f2 = self.forcing(t)
        y1 = y / eps if self.parameters.s1_stiff else y
        y2 = y / eps if self.parameters.s2_stiff else y
        slow = f1 - self.C1 @ xdot - self.K1 @ x - _quadratic(
            self.S1, np.concatenate([x, y1])
        )
        fast = (
            f2
            - self.C2 @ ydot
            - self.K2 @ y / eps**self.r
            - _quadratic(self.S2, np.concatenate([x, y2]))
        )
        return np.concatenate([slow, fast])

    def scaled_mass(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        mass = np.zeros((self.n, self.n))
        mass[: self.s, : self.s] = self.M1
        mass[self.s :, self.s :] = eps ** max(self.p - 1, 0) * self.M2
        return mass

    def scaled_force(
        self,
        x: np.ndarray,
        xdot: np.ndarray,
        eta: np.ndarray,
        ydot: np.ndarray,
        t: float,
        eps: float,
    ) -> np.ndarray:
        f1, f2 = self.forcing(t)
        z1, z2 = self._couplings(x, eta, eps)
        slow = f1 - self.C1 @ xdot - self.K1 @ x - _quadratic(self.S1, z1)
        fast = (
            f2
            - self.C2 @ ydot
            - eps ** (1 - self.r) * self.K2 @ eta
            - _quadratic(self.S2, z2)
        )
        return np.concatenate([slow, self._row_factor(eps) * fast])

    def row_scale(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        return np.concatenate(
            [np.ones(self.s), np.full(self.f, self._row_factor(eps))]
        )

    def mass_varies(self, variable: Variable) -> bool:
        return variable == "eps" and self.p == 2

    def force_derivative(
        self, variable: Variable, point: Point, eps: float
    ) -> np.ndarray | None:
        s, f = self.s, self.f
        rho = self._row_factor(eps)
        z1, z2 = self._couplings(point.x, point.eta, eps)
        grad1 = _quadratic_gradient(self.S1, z1)
        grad2 = _quadratic_gradient(self.S2, z2)
        match variable:
            case "x":
                return np.vstack(
                    [-self.K1 - grad1[:, :s], -rho * grad2[:, :s]]
                )
            case "xdot":
                return np.vstack([-self.C1, np.zeros((f, s))])
            case "eta":
                inner1 = 1.0 if self.parameters.s1_stiff else eps
                inner2 = 1.0 if self.parameters.s2_stiff else eps
                return np.vstack(
                    [
                        -inner1 * grad1[:, s:],
                        -rho
                        * (eps ** (1 - self.r) * self.K2 + inner2 * grad2[:, s:]),
                    ]
                )
            case "ydot":
                return np.vstack([np.zeros((s, f)), -rho * self.C2])
            case "t":
                rate1, rate2 = self.forcing_rate(point.t)
                return np.concatenate([rate1, rho * rate2]).reshape(self.n, 1)
        return None

    def closed_form_critical(
        self, x: np.ndarray, xdot: np.ndarray, t: float
    ) -> np.ndarray | None:
        """eta = K2^-1 [f2(t) - S2(x, 0)] when S2 is non-stiff and p = r = 1."""
        if self.parameters.s2_stiff or self.p != 1 or self.r != 1:
            return None
        _, f2 = self.forcing(t)
        z = np.concatenate([x, np.zeros(self.f)])
        try:
            return np.linalg.solve(self.K2, f2 - _quadratic(self.S2, z))
        except np.linalg.LinAlgError:
            return None


class FoldDemo(QuadraticSystem):
    """Scalar system whose critical manifold 4 eta^2 + 4 eta + x^2 = sin t folds.

    The two branches are G0 = (-1 +- sqrt(1 - (x^2 - sin t))) / 2 and meet on
    x^2 = 1 + sin t.
    """

    boundary_margin = 0.05

    def branch(self, x: np.ndarray, t: float, sign: float = 1.0) -> np.ndarray:
        """Closed form branch G0 (plus for sign > 0, minus otherwise)."""
        k2 = self.K2[0, 0]
        a = self.S2[0, 1, 1]
        c = self.S2[0, 0, 0]
        _, f2 = self.forcing(t)
        # a eta^2 + k2 eta + c x^2 - f2 = 0
        discriminant = k2**2 - 4.0 * a * (c * x[0] ** 2 - f2[0])
        root = np.sqrt(max(discriminant, 0.0))
        return np.array([(-k2 + (root if sign > 0 else -root)) / (2.0 * a)])

    def closed_form_critical(
        self, x: np.ndarray, xdot: np.ndarray, t: float
    ) -> np.ndarray | None:
        return self.branch(x, t, 1.0)

    def boundary_gap(self, x: np.ndarray, t: float) -> float:
        """1 + sin t - x^2 for the default parameters, positive inside D0."""
        k2 = self.K2[0, 0]
        a = self.S2[0, 1, 1]
        c = self.S2[0, 0, 0]
        _, f2 = self.forcing(t)
        return float((k2**2 / (4.0 * a) + f2[0] - c * x[0] ** 2) / c)

    def in_domain(self, x: np.ndarray, xdot: np.ndarray, t: float) -> bool:
        return self.boundary_gap(x, t) > self.boundary_margin


class TwoDofParameters(PresetParameters):
    """Two coupled oscillators in modal coordinates.

    x'' + (c1 + mu1 x^2) x' + k1 x + a x y + b x^3 = 0
    y'' + c2 y' + k2 y + c x^2 = 0
    """

    c1: float = Field(0.0, ge=0.0, description="Slow linear damping")
    c2: float = Field(0.0, ge=0.0, description="Fast linear damping")
    k1: float = Field(1.0, gt=0.0, description="Slow stiffness")
    k2: float = Field(9.0, gt=0.0, description="Fast stiffness")
    a: float = Field(1.0, description="Coupling a x y")
    b: float = Field(1.0, description="Cubic stiffness b x^3")
    c: float = Field(1.0, description="Coupling c x^2")
    mu1: float = Field(0.0, description="Nonlinear damping mu1 x^2 x'")


class TwoDofSSM(MechanicalSystem):
    """Two degree of freedom example with y = eps eta, eps = 1 nominal.

    The fast mass is eps, the fast stiffness k2/eps and the coupling a x y/eps,
    so that the physical equations are recovered at eps = 1.
    """

    def __init__(
        self, parameters: TwoDofParameters, eps: float = 1.0, mode: str | None = None
    ) -> None:
        self.parameters = parameters
        super().__init__(
            n=2,
            s=1,
            eps=eps,
            time_dependence=TimeDependence.autonomous(),
            domain=DomainBox(x=0.5, xdot=0.5, y=0.25, ydot=0.25),
            name="twodof-ssm",
            mode=mode,
        )

    def _slow(self, x: float, xdot: float, coupling: float) -> float:
        p = self.parameters
        damping = (p.c1 + p.mu1 * x**2) * xdot
        return -damping - p.k1 * x - p.a * x * coupling - p.b * x**3

    def mass(self, q: np.ndarray, t: float, eps: float) -> np.ndarray:
        return np.diag([1.0, eps])

    def force(
        self, q: np.ndarray, qdot: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        p = self.parameters
        x, y = q
        xdot, ydot = qdot
        return np.array(
            [
                self._slow(x, xdot, y / eps),
                -(p.c2 * ydot + p.k2 * y / eps + p.c * x**2),
            ]
        )

    def scaled_mass(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        return np.eye(2)

    def scaled_force(
        self,
        x: np.ndarray,
        xdot: np.ndarray,
        eta: np.ndarray,
        ydot: np.ndarray,
        t: float,
        eps: float,
    ) -> np.ndarray:
        p = self.parameters
        return np.array(
            [
                self._slow(x[0], xdot[0], eta[0]),
                -(p.c2 * ydot[0] + p.k2 * eta[0] + p.c * x[0] ** 2),
            ]
        )

    def mass_varies(self, variable: Variable) -> bool:
        return False

    def eps_sequence(self) -> tuple[float, ...]:
        return (1.0, 0.5, 0.25, 0.125, 0.0625)


SOFT_MODE = "soft-soft-stiff"
STIFF_MODE = "stiff-stiff-soft"


class PendulumParameters(PresetParameters):
    """Physical parameters of the pendulum damper (SI units).

    Damping coefficients are given as ratios: C_d = c_d_ratio w_p M,
    C_h = c_h_ratio w_p M and c_p = c_p_ratio w_p m L^2 with w_p = sqrt(g/l).
    Forcing frequencies of None mean w_p.
    """

    l: float = Field(6.0, gt=0.0, description="Pendulum length [m]")
    L: float = Field(1.0, gt=0.0, description="Vertical reference length [m]")
    D: float = Field(6.0, gt=0.0, description="Horizontal spring length [m]")
    M: float = Field(1.0, gt=0.0, description="Carrier mass [kg]")
    m: float = Field(1.0, gt=0.0, description="Pendulum mass [kg]")
    K_h: float = Field(600.0, gt=0.0, description="Vertical stiffness [N/m]")
    Gamma_h: float = Field(0.5, ge=0.0, description="Cubic stiffness [N/m^3]")
    K_d: float = Field(2.0, gt=0.0, description="Horizontal stiffness [N/m]")
    c_d_ratio: float = Field(0.33, ge=0.0, description="C_d / (w_p M)")
    c_h_ratio: float = Field(3.0, ge=0.0, description="C_h / (w_p M)")
    c_p_ratio: float = Field(0.33, ge=0.0, description="c_p / (w_p m L^2)")
    g: float = Field(9.81, gt=0.0, description="Gravity [m/s^2]")
    fp_amp: float = Field(0.5, description="Pendulum forcing amplitude [N]")
    fp_omega: float | None = Field(1.0, gt=0.0, description="Pendulum [rad/s]")
    fh_amp: float = Field(0.5, description="Vertical forcing amplitude [N]")
    fh_omega: float | None = Field(3.0, gt=0.0, description="Vertical [rad/s]")
    fd_amp: float = Field(0.5, description="Horizontal forcing amplitude [N]")
    fd_omega: float | None = Field(3.0, gt=0.0, description="Horizontal [rad/s]")

    @property
    def omega_p(self) -> float:
        return sqrt(self.g / self.l)


class Nondimensional(NamedTuple):
    """Nondimensional groups of the pendulum equations."""

    Delta: float
    rho: float
    beta: float
    pi_h: float
    pi_d: float
    pi_p: float
    q_h: float
    q_d: float
    a_h: float


class Scaled(NamedTuple):
    """Epsilon-scaled groups, fixed at the nominal epsilon."""

    delta: float
    rho: float
    beta: float
    mu_h: float
    mu_d: float
    mu_p: float
    Omega_h2: float
    Omega_d2: float
    alpha_h: float


def nondimensionalize(parameters: PendulumParameters) -> Nondimensional:
    """Nondimensional groups, time measured in units of 1/w_p."""
    p = parameters
    wp2 = p.omega_p**2
    return Nondimensional(
        Delta=p.l / p.L,
        rho=p.D / p.L,
        beta=p.m / p.M,
        pi_h=p.c_h_ratio,
        pi_d=p.c_d_ratio,
        pi_p=p.c_p_ratio,
        q_h=p.K_h / (p.M * wp2),
        q_d=p.K_d / (p.M * wp2),
        a_h=p.Gamma_h * p.L**2 / (p.M * wp2),
    )


def spring_factor(d: float, h: float, rho: float) -> float:
    """Q(d, h) = 1 - rho / sqrt(rho^2 (1 + d)^2 + h^2) without cancellation."""
    span = sqrt(rho**2 * (1.0 + d) ** 2 + h**2)
    return (rho**2 * (2.0 * d + d**2) + h**2) / ((span + rho) * span)


def cubic_root(alpha: float, stiffness: float, load: float) -> float:
    """Real root of alpha eta^3 + stiffness eta = load, alpha >= 0 < stiffness."""
    if alpha <= 0.0:
        return load / stiffness
    scale = sqrt(stiffness / (3.0 * alpha))
    argument = 1.5 * load / stiffness * sqrt(3.0 * alpha / stiffness)
    return 2.0 * scale * sinh(asinh(argument) / 3.0)


# Physical slot scales of the state (x, x', y, y') in each mode; the state
# order equals the order in which initial conditions are printed.
_SLOTS = {
    SOFT_MODE: ("gamma", "d", "gamma_dot", "d_dot", "h", "h_dot"),
    STIFF_MODE: ("gamma", "gamma_dot", "h", "d", "h_dot", "d_dot"),
}
_INITIAL = {
    SOFT_MODE: (1.000, 1.200, 0.000, 0.000, 0.08182, 0.005301),
    STIFF_MODE: (1.000, 0.000, 0.002842, 0.02296, 0.0005551, -0.002546),
}
#: Time in seconds after which the full trajectory is close to the manifold.
SNAP_TIME = 15.6


class Pendulum3(MechanicalSystem):
    """Three degree of freedom pendulum damper (gamma, d, h).

    In soft-soft-stiff mode x = (gamma, d) and y = h; in stiff-stiff-soft mode
    x = gamma and y = (h, d). The scaled groups are computed once from the
    physical parameters at the nominal epsilon; the unscaled evaluators at
    the nominal epsilon therefore integrate the physical system.
    """

    def __init__(
        self, parameters: PendulumParameters, eps: float, mode: str = SOFT_MODE
    ) -> None:
        if mode not in _SLOTS:
            raise UnknownPreset(f"Unknown pendulum3 mode: {mode}", mode=mode)
        self.parameters = parameters
        self.groups = nondimensionalize(parameters)
        g = self.groups
        soft = mode == SOFT_MODE
        self.scaled = Scaled(
            delta=eps * g.Delta,
            rho=eps * g.rho if soft else g.rho,
            beta=g.beta,
            mu_h=eps * g.pi_h,
            mu_d=g.pi_d if soft else eps * g.pi_d,
            mu_p=eps**2 * g.pi_p,
            Omega_h2=eps**2 * g.q_h,
            Omega_d2=g.q_d if soft else eps**2 * g.q_d,
            alpha_h=eps**4 * g.a_h,
        )
        wp = parameters.omega_p
        self._frequencies = {
            name: (omega if omega is not None else wp) / wp
            for name, omega in (
                ("p", parameters.fp_omega),
                ("h", parameters.fh_omega),
                ("d", parameters.fd_omega),
            )
        }
        amplitudes = {
            "p": parameters.fp_amp,
            "h": parameters.fh_amp,
            "d": parameters.fd_amp,
        }
        active = [self._frequencies[k] for k, amp in amplitudes.items() if amp]
        super().__init__(
            n=3,
            s=2 if soft else 1,
            eps=eps,
            time_dependence=TimeDependence.from_frequencies(active),
            domain=(
                DomainBox(x=1.2, xdot=1.0, y=0.1, ydot=0.1)
                if soft
                else DomainBox(x=1.2, xdot=1.0, y=0.05, ydot=0.01)
            ),
            name="pendulum3",
            mode=mode,
        )

    # Forcing in nondimensional time
    def loads(self, t: float) -> tuple[float, float, float, float]:
        """(G_p, F_p, F_h, F_d) at nondimensional time t."""
        p = self.parameters
        freq = self._frequencies
        phase_p = np.sin(freq["p"] * t)
        return (
            p.fp_amp / (p.m * p.g) * phase_p,
            p.fp_amp / (p.M * p.g) * phase_p,
            p.fh_amp / (p.M * p.g) * np.sin(freq["h"] * t),
            p.fd_amp / (p.M * p.g) * np.sin(freq["d"] * t),
        )

    def _unscaled_groups(self, eps: float) -> Nondimensional:
        c = self.scaled
        if self.mode == SOFT_MODE:
            return Nondimensional(
                Delta=c.delta / eps,
                rho=c.rho / eps,
                beta=c.beta,
                pi_h=c.mu_h / eps,
                pi_d=c.mu_d,
                pi_p=c.mu_p / eps**2,
                q_h=c.Omega_h2 / eps**2,
                q_d=c.Omega_d2,
                a_h=c.alpha_h / eps**4,
            )
        return Nondimensional(
            Delta=c.delta / eps,
            rho=c.rho,
            beta=c.beta,
            pi_h=c.mu_h / eps,
            pi_d=c.mu_d / eps,
            pi_p=c.mu_p / eps**2,
            q_h=c.Omega_h2 / eps**2,
            q_d=c.Omega_d2 / eps**2,
            a_h=c.alpha_h / eps**4,
        )

    def _order(self) -> list[int]:
        # canonical rows are (gamma, d, h)
        return [0, 1, 2] if self.mode == SOFT_MODE else [0, 2, 1]

    def _coordinates(self, q: np.ndarray) -> tuple[float, float, float]:
        if self.mode == SOFT_MODE:
            return q[0], q[1], q[2]
        return q[0], q[2], q[1]

    def mass(self, q: np.ndarray, t: float, eps: float) -> np.ndarray:
        g = self._unscaled_groups(eps)
        gamma = self._coordinates(q)[0]
        sin, cos = np.sin(gamma), np.cos(gamma)
        canonical = np.array(
            [
                [g.Delta**2, g.rho * g.Delta * cos, -g.Delta * sin],
                [g.beta * g.Delta * cos / g.rho, 1.0 + g.beta, 0.0],
                [-g.beta * g.Delta * sin, 0.0, 1.0 + g.beta],
            ]
        )
        order = self._order()
        return canonical[np.ix_(order, order)]

    def force(
        self, q: np.ndarray, qdot: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        g = self._unscaled_groups(eps)
        gamma, d, h = self._coordinates(q)
        gamma_dot, d_dot, h_dot = self._coordinates(qdot)
        sin, cos = np.sin(gamma), np.cos(gamma)
        G_p, F_p, F_h, F_d = self.loads(t)
        Q = spring_factor(d, h, g.rho)
        ratio = g.Delta / g.rho
        canonical = np.array(
            [
                -g.pi_p * gamma_dot - g.Delta**2 * sin + g.Delta**2 * G_p,
                g.beta * ratio * sin * gamma_dot**2
                - g.pi_d * d_dot
                - g.q_d * (1.0 + d) * Q
                + F_d * ratio
                + F_p * ratio * cos,
                g.beta * g.Delta * cos * gamma_dot**2
                - g.pi_h * h_dot
                - g.q_h * h
                - g.q_d * h * Q
                - g.a_h * h**3
                + (1.0 + g.beta) * g.Delta
                + F_h * g.Delta
                - F_p * g.Delta * sin,
            ]
        )
        return canonical[self._order()]

    def scaled_mass(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        c = self.scaled
        sin, cos = np.sin(x[0]), np.cos(x[0])
        if self.mode == SOFT_MODE:
            return np.array(
                [
                    [c.delta**2, c.rho * c.delta * cos, -c.delta * sin],
                    [c.beta * c.delta * cos / c.rho, 1.0 + c.beta, 0.0],
                    [-c.beta * c.delta * sin, 0.0, 1.0 + c.beta],
                ]
            )
        return np.array(
            [
                [c.delta**2, -c.delta * sin, c.rho * c.delta * cos],
                [-c.beta * c.delta * sin, 1.0 + c.beta, 0.0],
                [c.beta * c.delta * cos / c.rho, 0.0, 1.0 + c.beta],
            ]
        )

    def scaled_force(
        self,
        x: np.ndarray,
        xdot: np.ndarray,
        eta: np.ndarray,
        ydot: np.ndarray,
        t: float,
        eps: float,
    ) -> np.ndarray:
        c = self.scaled
        gamma, gamma_dot = x[0], xdot[0]
        sin, cos = np.sin(gamma), np.cos(gamma)
        G_p, F_p, F_h, F_d = self.loads(t)
        ratio = c.delta / c.rho
        pendulum = -c.mu_p * gamma_dot - c.delta**2 * sin + c.delta**2 * G_p
        vertical_load = (
            c.beta * c.delta * cos * gamma_dot**2
            + (1.0 + c.beta) * c.delta
            + F_h * c.delta
            - F_p * c.delta * sin
        )
        horizontal_load = (
            c.beta * ratio * sin * gamma_dot**2 + F_d * ratio + F_p * ratio * cos
        )
        if self.mode == SOFT_MODE:
            d, d_dot = x[1], xdot[1]
            eta_h, h_dot = eta[0], ydot[0]
            Q = spring_factor(d, eps**2 * eta_h, c.rho)
            return np.array(
                [
                    pendulum,
                    horizontal_load - c.mu_d * d_dot - c.Omega_d2 * (1.0 + d) * Q,
                    vertical_load
                    - c.mu_h * h_dot
                    - c.Omega_h2 * eta_h
                    - eps**2 * c.Omega_d2 * eta_h * Q
                    - c.alpha_h * eta_h**3,
                ]
            )
        eta_h, eta_d = eta
        h_dot, d_dot = ydot
        span = sqrt(c.rho**2 * (1.0 + eps * eta_d) ** 2 + (eps * eta_h) ** 2)
        # Q(eps eta_d, eps eta_h) / eps, finite at eps = 0
        Q_over_eps = (
            c.rho**2 * (2.0 * eta_d + eps * eta_d**2) + eps * eta_h**2
        ) / ((span + c.rho) * span)
        return np.array(
            [
                pendulum,
                vertical_load
                - c.mu_h * h_dot
                - c.Omega_h2 * eta_h
                - eps * c.Omega_d2 * eta_h * Q_over_eps
                - c.alpha_h * eta_h**3,
                horizontal_load
                - c.mu_d * d_dot
                - c.Omega_d2 * (1.0 + eps * eta_d) * Q_over_eps,
            ]
        )

    def row_scale(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        if self.mode == SOFT_MODE:
            return np.array([eps**2, 1.0, eps])
        return np.array([eps**2, eps, eps])

    def mass_varies(self, variable: Variable) -> bool:
        return variable == "x"

    def eps_sequence(self) -> tuple[float, ...]:
        return tuple(self.eps * factor for factor in (16.0, 8.0, 4.0, 2.0, 1.0))

    def closed_form_critical(
        self, x: np.ndarray, xdot: np.ndarray, t: float
    ) -> np.ndarray:
        """Critical manifold from the cubic formula (and a linear d equation).

        The fast forces at eps = 0 read T - (Omega_h^2 eta_h + alpha_h eta_h^3)
        and T - Omega_d^2 eta_d, with T collecting everything else.
        """
        c = self.scaled
        zero = np.zeros(self.f)
        mass = self.scaled_mass(x, zero, t, 0.0)
        force = self.scaled_force(x, xdot, zero, zero, t, 0.0)
        s = self.s
        slow = equilibrated_solve(mass[:s, :s], force[:s])
        load = force[s:] - mass[s:, :s] @ slow
        eta_h = cubic_root(c.alpha_h, c.Omega_h2, float(load[0]))
        if self.mode == SOFT_MODE:
            return np.array([eta_h])
        return np.array([eta_h, float(load[1]) / c.Omega_d2])

    # Physical unit map
    def slot_scales(self) -> np.ndarray:
        """Factors taking physical slots to nondimensional state entries."""
        p = self.parameters
        wp = p.omega_p
        factors = {
            "gamma": 1.0,
            "gamma_dot": 1.0 / wp,
            "d": 1.0 / p.D,
            "d_dot": 1.0 / (p.D * wp),
            "h": 1.0 / p.L,
            "h_dot": 1.0 / (p.L * wp),
        }
        return np.array([factors[slot] for slot in _SLOTS[self.mode]])

    def to_state(self, physical: Any) -> np.ndarray:
        """Physical state, in the printed slot order, to (x, x', y, y')."""
        return np.asarray(physical, dtype=float) * self.slot_scales()

    def to_physical(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=float) / self.slot_scales()

    def to_scaled_time(self, seconds: float) -> float:
        return seconds * self.parameters.omega_p

    def to_seconds(self, t: float) -> float:
        return t / self.parameters.omega_p

    def initial_condition(self) -> np.ndarray:
        """The printed off-manifold initial condition of the mode."""
        return self.to_state(_INITIAL[self.mode])

    def snap_time(self) -> float:
        return self.to_scaled_time(SNAP_TIME)


class Preset(NamedTuple):
    """Registry entry of a built-in system."""

    parameters: type[PresetParameters]
    build: Callable[[Any, float, str | None], MechanicalSystem]
    defaults: dict[str | None, dict[str, Any]]
    eps: dict[str | None, float]

    @property
    def modes(self) -> list[str | None]:
        return list(self.defaults)


def _quadratic_builder(
    name: str, system: type[QuadraticSystem] = QuadraticSystem
) -> Callable[[Any, float, str | None], MechanicalSystem]:
    def build(parameters: Any, eps: float, mode: str | None) -> MechanicalSystem:
        return system(parameters, eps, name=name, mode=mode)

    return build


PRESETS: dict[str, Preset] = {
    "linear-coupled": Preset(
        QuadraticParameters,
        _quadratic_builder("linear-coupled"),
        {None: {}},
        {None: 1e-2},
    ),
    "tet-demo": Preset(
        QuadraticParameters,
        _quadratic_builder("tet-demo"),
        {
            None: {
                "K2": [[0.0]],
                "S2": [[[1.0, 0.0], [0.0, 0.0]]],
                "f2_amp": [0.0],
                "s1_stiff": False,
            }
        },
        {None: 1e-2},
    ),
    "fold-demo": Preset(
        QuadraticParameters,
        _quadratic_builder("fold-demo", FoldDemo),
        {
            None: {
                "C1": [[0.2]],
                "K2": [[4.0]],
                "S2": [[[1.0, 0.0], [0.0, 4.0]]],
                "f2_amp": [1.0],
                "s2_stiff": True,
            }
        },
        {None: 1e-2},
    ),
    "weakly-nonlinear": Preset(
        QuadraticParameters,
        _quadratic_builder("weakly-nonlinear"),
        {
            None: {
                "fast_mass_order": 0,
                "fast_stiffness_order": 0,
                "s1_stiff": False,
            }
        },
        {None: 1e-2},
    ),
    "stiff-inertia": Preset(
        QuadraticParameters,
        _quadratic_builder("stiff-inertia"),
        {None: {"fast_mass_order": 2, "s1_stiff": False}},
        {None: 1e-2},
    ),
    "twodof-ssm": Preset(
        TwoDofParameters,
        lambda parameters, eps, mode: TwoDofSSM(parameters, eps, mode),
        {None: {}},
        {None: 1.0},
    ),
    "pendulum3": Preset(
        PendulumParameters,
        lambda parameters, eps, mode: Pendulum3(parameters, eps, mode or SOFT_MODE),
        {
            SOFT_MODE: {},
            STIFF_MODE: {
                "L": 3.0,
                "D": 3.0,
                "M": 0.25,
                "m": 0.5,
                "K_h": 2000.0,
                "K_d": 280.0,
                "c_d_ratio": 3.0,
                "c_h_ratio": 3.0,
                "c_p_ratio": 1.0,
                "fp_amp": 0.6,
                "fp_omega": None,
                "fh_amp": 0.0,
                "fd_amp": 0.0,
            },
        },
        {SOFT_MODE: 1e-8, STIFF_MODE: 1e-8},
    ),
}

PRESET_IDS = tuple(PRESETS)


def load_preset(
    preset_id: str,
    overrides: dict[str, Any] | None = None,
    mode: str | None = None,
    eps: float | None = None,
) -> MechanicalSystem:
    """Build a preset system.

    Args:
        preset_id: Name of the preset, one of `PRESET_IDS`.
        overrides: Parameter values replacing the defaults of the mode.
        mode: Sub-mode of the preset, its first mode when omitted.
        eps: Small parameter, the preset's nominal value when omitted.

    Raises:
        UnknownPreset: The preset or mode does not exist.
        UnknownParameter: An override names an undeclared parameter.
        InvalidParameter: A value is outside its admissible range.

    Returns:
        The configured system.
    """
    overrides = overrides or {}
    logger_ = logger.bind(preset=preset_id, mode=mode)
    try:
        preset = PRESETS[preset_id]
    except KeyError:
        message = f"Unknown preset: {preset_id}"
        logger_.warn(message, known=PRESET_IDS)
        raise UnknownPreset(message, preset=preset_id, known=list(PRESET_IDS))
    if mode is None:
        mode = preset.modes[0]
    if mode not in preset.defaults:
        message = f"Unknown mode for {preset_id}: {mode}"
        logger_.warn(message, known=preset.modes)
        raise UnknownPreset(message, preset=preset_id, mode=mode)

    declared = set(preset.parameters.__fields__)
    unknown = sorted(set(overrides) - declared)
    if unknown:
        message = f"Unknown parameter for {preset_id}: {', '.join(unknown)}"
        logger_.warn(message, unknown=unknown)
        raise UnknownParameter(message, preset=preset_id, unknown=unknown)

    try:
        parameters = preset.parameters(**{**preset.defaults[mode], **overrides})
    except ValidationError as error:
        message = f"Invalid parameters for {preset_id}: {error}"
        logger_.warn(message)
        raise InvalidParameter(message, preset=preset_id) from error

    eps = preset.eps[mode] if eps is None else eps
    if eps < 0.0:
        message = "eps must be non-negative"
        logger_.warn(message, eps=eps)
        raise InvalidParameter(message, eps=eps)
    system = preset.build(parameters, eps, mode)
    logger_.debug("Preset loaded", eps=eps, n=system.n, s=system.s)
    return system
