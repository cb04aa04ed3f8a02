# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=too-few-public-methods
"""Mechanical system abstraction.

A system is M(q, t) q'' = F(q, q', t) with q = (x, y) split into s slow and
f fast coordinates. Besides the unscaled evaluators every system provides an
epsilon-scaled block form in the variables (x, x', eta, y', t) with eta = y/eps.

The scaled block form is written for the accelerations (x'', eps y''), and each
equation may be multiplied by a row factor returned by `row_scale`, i.e. for
eps > 0

    scaled_mass  = R . M . diag(I_s, I_f / eps)
    scaled_force = R . F

Solving the scaled block form therefore returns P1 = M1^-1 Q1 and
P2 = eps M2^-1 Q2 directly, and a preset can choose R such that both matrices
stay finite as eps goes to zero.
"""
from abc import ABC
from abc import abstractmethod
from collections.abc import Callable
from enum import Enum
from math import pi
from typing import Any
from typing import Literal
from typing import NamedTuple

import numpy as np
import structlog
from pydantic import BaseModel
from pydantic import Field
from pydantic import root_validator
from scipy.stats import qmc

from .exceptions import EvaluatorFailure
from .exceptions import SingularMass
from .exceptions import TimeDomainViolation
from .utils import remove_duplicates
from .utils import round_key


logger = structlog.get_logger()

Variable = Literal["x", "xdot", "eta", "ydot", "t", "eps"]
VARIABLES: tuple[Variable, ...] = ("x", "xdot", "eta", "ydot", "t", "eps")
DEFAULT_EPS_SEQUENCE = (1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3)


class TimeClass(str, Enum):
    """Admissible time dependence of the equations of motion."""

    AUTONOMOUS = "autonomous"
    PERIODIC = "periodic"
    QUASIPERIODIC = "quasiperiodic"
    APERIODIC = "aperiodic"


class TimeDependence(BaseModel):
    """Time class of a system together with its period, frequencies or interval.

    Rational independence of quasiperiodic frequencies is declared, not checked.
    """

    class Config:
        """Settings are frozen."""

        frozen = True

    kind: TimeClass = Field(TimeClass.AUTONOMOUS, description="Time class")
    period: float | None = Field(None, gt=0.0, description="Period if periodic")
    frequencies: tuple[float, ...] | None = Field(
        None, description="Frequency vector if quasiperiodic"
    )
    interval: tuple[float, float] | None = Field(
        None, description="Interval [a, b] if aperiodic"
    )

    @root_validator(skip_on_failure=True)
    def check_kind_data(cls, values: dict[str, Any]) -> dict[str, Any]:
        """Ensure that the data required by the time class is present."""
        kind = values["kind"]
        if kind == TimeClass.PERIODIC and values.get("period") is None:
            raise ValueError("periodic time dependence requires a period")
        if kind == TimeClass.QUASIPERIODIC and not values.get("frequencies"):
            raise ValueError("quasiperiodic time dependence requires frequencies")
        if kind == TimeClass.APERIODIC:
            interval = values.get("interval")
            if interval is None:
                raise ValueError("aperiodic time dependence requires an interval")
            if not interval[0] < interval[1]:
                raise ValueError("aperiodic interval must satisfy a < b")
        return values

    @classmethod
    def autonomous(cls) -> "TimeDependence":
        return cls(kind=TimeClass.AUTONOMOUS)

    @classmethod
    def periodic(cls, period: float) -> "TimeDependence":
        return cls(kind=TimeClass.PERIODIC, period=period)

    @classmethod
    def quasiperiodic(cls, frequencies: tuple[float, ...]) -> "TimeDependence":
        return cls(kind=TimeClass.QUASIPERIODIC, frequencies=frequencies)

    @classmethod
    def aperiodic(cls, start: float, end: float) -> "TimeDependence":
        return cls(kind=TimeClass.APERIODIC, interval=(start, end))

    @classmethod
    def from_frequencies(cls, frequencies: list[float]) -> "TimeDependence":
        """Time class of a sum of harmonics with the given angular frequencies.

        Commensurate frequencies (integer multiples of the smallest one) give a
        periodic system, anything else is declared quasiperiodic.
        """
        active = sorted(remove_duplicates(w for w in frequencies if w > 0.0))
        if not active:
            return cls.autonomous()
        base = active[0]
        ratios = np.array(active) / base
        if np.allclose(ratios, np.round(ratios), rtol=0.0, atol=1e-9):
            return cls.periodic(2.0 * pi / base)
        return cls.quasiperiodic(tuple(active))

    def window(self) -> tuple[float, float]:
        """Time window sampled when building domain grids."""
        match self.kind:
            case TimeClass.PERIODIC:
                assert self.period is not None
                return 0.0, self.period
            case TimeClass.QUASIPERIODIC:
                assert self.frequencies is not None
                return 0.0, 2.0 * pi / min(self.frequencies)
            case TimeClass.APERIODIC:
                assert self.interval is not None
                return self.interval
        return 0.0, 0.0

    def horizon(self) -> float:
        """A characteristic slow time, one period or one window length."""
        start, end = self.window()
        return end - start if end > start else 2.0 * pi

    def check_span(self, t0: float, t1: float) -> None:
        """Reject integration spans leaving the interval of aperiodic systems."""
        if self.kind != TimeClass.APERIODIC:
            return
        assert self.interval is not None
        start, end = self.interval
        low, high = min(t0, t1), max(t0, t1)
        if low < start or high > end:
            message = "Integration span leaves the interval of definition"
            logger.warn(message, span=(t0, t1), interval=self.interval)
            raise TimeDomainViolation(message, span=(t0, t1), interval=self.interval)


class DomainBox(BaseModel):
    """Half widths of the sampling box around the origin."""

    class Config:
        """Settings are frozen."""

        frozen = True

    x: float = Field(2.0, gt=0.0, description="Bound on |x|")
    xdot: float = Field(2.0, gt=0.0, description="Bound on |x'|")
    y: float = Field(1.0, gt=0.0, description="Bound on |y|")
    ydot: float = Field(1.0, gt=0.0, description="Bound on |y'|")


class Point(NamedTuple):
    """Evaluation point of the scaled block form."""

    x: np.ndarray
    xdot: np.ndarray
    eta: np.ndarray
    ydot: np.ndarray
    t: float

    def replace(self, variable: Variable, value: np.ndarray) -> "Point":
        """Copy of the point with one argument replaced (eps is not part of it)."""
        if variable == "t":
            return self._replace(t=float(np.atleast_1d(value)[0]))
        return self._replace(**{variable: np.asarray(value, dtype=float)})

    def vector(self, variable: Variable) -> np.ndarray:
        if variable == "t":
            return np.array([self.t])
        return np.atleast_1d(getattr(self, variable))


def make_point(
    x: Any, xdot: Any, eta: Any, ydot: Any, t: float
) -> Point:
    """Construct a point with float arrays."""
    return Point(
        np.atleast_1d(np.asarray(x, dtype=float)),
        np.atleast_1d(np.asarray(xdot, dtype=float)),
        np.atleast_1d(np.asarray(eta, dtype=float)),
        np.atleast_1d(np.asarray(ydot, dtype=float)),
        float(t),
    )


def _checked(values: np.ndarray, what: str, **context: Any) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        message = "Evaluator returned non-finite values"
        logger.warn(message, evaluator=what, **context)
        raise EvaluatorFailure(message, evaluator=what)
    return values


class MechanicalSystem(ABC):
    """Second order mechanical system with a slow/fast partition.

    Args:
        n: Total number of degrees of freedom.
        s: Number of slow degrees of freedom, 1 <= s < n.
        eps: Nominal value of the small parameter.
        time_dependence: Time class of the equations.
        domain: Sampling box.
        name: Human readable system name.
        mode: Optional sub-mode of the system.
    """

    def __init__(
        self,
        n: int,
        s: int,
        eps: float,
        time_dependence: TimeDependence,
        domain: DomainBox | None = None,
        name: str = "custom",
        mode: str | None = None,
    ) -> None:
        if not 1 <= s < n:
            raise ValueError(f"Slow dimension must satisfy 1 <= s < n, got s={s} n={n}")
        if eps < 0.0:
            raise ValueError("eps must be non-negative")
        self.n = n
        self.s = s
        self.eps = eps
        self.time_dependence = time_dependence
        self.domain = domain or DomainBox()
        self.name = name
        self.mode = mode

    @property
    def f(self) -> int:
        return self.n - self.s

    # Unscaled evaluators
    @abstractmethod
    def mass(self, q: np.ndarray, t: float, eps: float) -> np.ndarray:
        """Mass matrix M(q, t) of the system at parameter value eps."""

    @abstractmethod
    def force(
        self, q: np.ndarray, qdot: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        """Force vector F(q, q', t) of the system at parameter value eps."""

    # Scaled evaluators
    @abstractmethod
    def scaled_mass(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        """Scaled block mass matrix, finite at eps = 0 where the preset allows."""

    @abstractmethod
    def scaled_force(
        self,
        x: np.ndarray,
        xdot: np.ndarray,
        eta: np.ndarray,
        ydot: np.ndarray,
        t: float,
        eps: float,
    ) -> np.ndarray:
        """Scaled force vector, same row scaling as `scaled_mass`."""

    def row_scale(
        self, x: np.ndarray, eta: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        """Row factors R of the scaled block form, identity unless overridden."""
        return np.ones(self.n)

    def force_derivative(
        self, variable: Variable, point: Point, eps: float
    ) -> np.ndarray | None:
        """Analytic derivative of `scaled_force` with respect to `variable`.

        Returns None when no analytic expression is available.
        """
        return None

    def mass_varies(self, variable: Variable) -> bool:
        """Whether `scaled_mass` depends on `variable`."""
        return variable in ("x", "eta", "t", "eps")

    def in_domain(self, x: np.ndarray, xdot: np.ndarray, t: float) -> bool:
        """Predicate restricting the reduction domain inside the sampling box."""
        return True

    def closed_form_critical(
        self, x: np.ndarray, xdot: np.ndarray, t: float
    ) -> np.ndarray | None:
        """Known solution eta = G0(x, x', t), used as Newton guess and oracle."""
        return None

    def eps_sequence(self) -> tuple[float, ...]:
        """Geometric epsilon sequence used by the extension check."""
        return DEFAULT_EPS_SEQUENCE

    def parameter_report(self) -> dict[str, Any]:
        """JSON report {system, mode, parameters, eps}."""
        parameters = getattr(self, "parameters", None)
        return {
            "system": self.name,
            "mode": self.mode,
            "parameters": parameters.dict() if parameters is not None else {},
            "eps": self.eps,
        }

    def split(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return q[: self.s], q[self.s :]

    def evaluate_scaled(
        self, point: Point, eps: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Scaled mass and force at a point, checked for finiteness."""
        try:
            mass = self.scaled_mass(point.x, point.eta, point.t, eps)
            force = self.scaled_force(
                point.x, point.xdot, point.eta, point.ydot, point.t, eps
            )
        except (ArithmeticError, ValueError, FloatingPointError) as error:
            if isinstance(error, EvaluatorFailure):
                raise
            message = "Scaled evaluator failed"
            logger.warn(message, system=self.name, error=str(error))
            raise EvaluatorFailure(message, system=self.name) from error
        return (
            _checked(np.atleast_2d(mass), "scaled_mass", eps=eps),
            _checked(np.atleast_1d(force), "scaled_force", eps=eps),
        )

    def full_accelerations(
        self, q: np.ndarray, qdot: np.ndarray, t: float, eps: float
    ) -> np.ndarray:
        """Accelerations of the unscaled system by a direct dense solve."""
        mass = _checked(np.atleast_2d(self.mass(q, t, eps)), "mass")
        force = _checked(np.atleast_1d(self.force(q, qdot, t, eps)), "force")
        try:
            return np.linalg.solve(mass, force)
        except np.linalg.LinAlgError as error:
            message = "Mass matrix is singular"
            logger.warn(message, system=self.name, t=t)
            raise SingularMass(message, q=q, t=t) from error

    def full_vector_field(
        self, eps: float | None = None
    ) -> Callable[[float, np.ndarray], np.ndarray]:
        """First order field of the unscaled system in the state (x, x', y, y')."""
        eps = self.eps if eps is None else eps
        s, f = self.s, self.f

        def field(t: float, state: np.ndarray) -> np.ndarray:
            x, xdot = state[:s], state[s : 2 * s]
            y, ydot = state[2 * s : 2 * s + f], state[2 * s + f :]
            q = np.concatenate([x, y])
            qdot = np.concatenate([xdot, ydot])
            acc = self.full_accelerations(q, qdot, t, eps)
            return np.concatenate([xdot, acc[:s], ydot, acc[s:]])

        return field


class ConsistencyReport(BaseModel):
    """Outcome of comparing scaled and unscaled evaluators."""

    eps: float
    n_samples: int
    max_discrepancy: float
    worst_sample: list[float]
    passed: bool


def consistency_check(
    system: MechanicalSystem,
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]],
    eps: float,
    tolerance: float = 1e-12,
) -> ConsistencyReport:
    """Compare the scaled evaluators at eta = y/eps with the unscaled ones.

    Args:
        system: The system to check.
        samples: Points (x, x', y, y', t).
        eps: Positive value of the small parameter.
        tolerance: Relative tolerance of the comparison.

    Returns:
        Report listing the worst sample.
    """
    if eps <= 0.0:
        raise ValueError("consistency_check requires eps > 0")
    logger_ = logger.bind(system=system.name, eps=eps)
    column_scale = np.concatenate([np.ones(system.s), np.full(system.f, eps)])
    worst = -1.0
    worst_sample: list[float] = []
    for x, xdot, y, ydot, t in samples:
        q = np.concatenate([x, y])
        qdot = np.concatenate([xdot, ydot])
        mass = np.atleast_2d(system.mass(q, t, eps))
        norm = np.linalg.norm(mass, 2)
        if abs(np.linalg.det(mass)) <= 1e-12 * norm**system.n:
            message = "Mass matrix is singular"
            logger_.warn(message, t=t)
            raise SingularMass(message, q=q, t=t)
        force = np.atleast_1d(system.force(q, qdot, t, eps))
        eta = y / eps
        rows = system.row_scale(x, eta, t, eps)
        rebuilt_mass = system.scaled_mass(x, eta, t, eps) * column_scale / rows[:, None]
        rebuilt_force = system.scaled_force(x, xdot, eta, ydot, t, eps) / rows
        discrepancy = max(
            np.max(np.abs(rebuilt_mass - mass)) / (1.0 + np.max(np.abs(mass))),
            np.max(np.abs(rebuilt_force - force)) / (1.0 + np.max(np.abs(force))),
        )
        if discrepancy > worst:
            worst = float(discrepancy)
            worst_sample = np.concatenate([x, xdot, y, ydot, [t]]).tolist()
    passed = worst <= tolerance
    logger_.info(
        "Consistency checked", n_samples=len(samples), max_discrepancy=worst
    )
    return ConsistencyReport(
        eps=eps,
        n_samples=len(samples),
        max_discrepancy=max(worst, 0.0),
        worst_sample=worst_sample,
        passed=passed,
    )


SlowSample = tuple[np.ndarray, np.ndarray, float]


class DomainSampler(BaseModel):
    """Sampler of slow base points (x, x', t) inside the declared domain.

    A tensor grid of `grid_points` per dimension is used for up to four
    dimensions; larger problems get the same number of points from a Latin
    hypercube. Uniform random points are added on top.
    """

    class Config:
        """Settings are frozen."""

        frozen = True

    grid_points: int = Field(9, ge=1, description="Grid points per dimension")
    random_points: int = Field(100, ge=0, description="Additional random points")
    seed: int = Field(42, description="Seed of the random points")
    shrink: float = Field(
        1.0, gt=0.0, le=1.0, description="Fraction of the domain box to sample"
    )

    def bounds(self, system: MechanicalSystem) -> tuple[np.ndarray, np.ndarray]:
        box = system.domain
        half = np.concatenate(
            [np.full(system.s, box.x), np.full(system.s, box.xdot)]
        ) * self.shrink
        start, end = system.time_dependence.window()
        return np.append(-half, start), np.append(half, end)

    def unit_points(self, dimension: int) -> np.ndarray:
        if dimension <= 4:
            axis = np.linspace(0.0, 1.0, self.grid_points)
            mesh = np.meshgrid(*([axis] * dimension), indexing="ij")
            grid = np.stack([m.ravel() for m in mesh], axis=-1)
        else:
            sampler = qmc.LatinHypercube(d=dimension, seed=self.seed)
            grid = sampler.random(self.grid_points**4)
        rng = np.random.default_rng(self.seed)
        extra = rng.uniform(size=(self.random_points, dimension))
        return np.vstack([grid, extra])

    def samples(self, system: MechanicalSystem) -> list[SlowSample]:
        """Deduplicated base points inside the system's domain."""
        low, high = self.bounds(system)
        unit = self.unit_points(low.size)
        points = low + unit * (high - low)
        s = system.s
        keyed = {round_key(p): p for p in points}
        chosen = []
        for key in remove_duplicates(keyed):
            point = keyed[key]
            x, xdot, t = point[:s], point[s : 2 * s], float(point[-1])
            if system.in_domain(x, xdot, t):
                chosen.append((x, xdot, t))
        return chosen


def random_states(
    system: MechanicalSystem, count: int, seed: int = 42
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]]:
    """Uniform random full states (x, x', y, y', t) from the domain box."""
    rng = np.random.default_rng(seed)
    box = system.domain
    start, end = system.time_dependence.window()
    states = []
    for _ in range(count):
        x = rng.uniform(-box.x, box.x, system.s)
        xdot = rng.uniform(-box.xdot, box.xdot, system.s)
        y = rng.uniform(-box.y, box.y, system.f)
        ydot = rng.uniform(-box.ydot, box.ydot, system.f)
        t = float(rng.uniform(start, end)) if end > start else start
        states.append((x, xdot, y, ydot, t))
    return states
