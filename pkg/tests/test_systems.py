# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=redefined-outer-name
"""Test the mechanical system abstraction."""
from math import pi
from math import sqrt

import numpy as np
import pytest
from pydantic import ValidationError
from structlog.testing import capture_logs

from sfdreduce.exceptions import EvaluatorFailure
from sfdreduce.exceptions import SingularMass
from sfdreduce.exceptions import TimeDomainViolation
from sfdreduce.presets import load_preset
from sfdreduce.presets import STIFF_MODE
from sfdreduce.systems import consistency_check
from sfdreduce.systems import DomainSampler
from sfdreduce.systems import make_point
from sfdreduce.systems import MechanicalSystem
from sfdreduce.systems import random_states
from sfdreduce.systems import TimeClass
from sfdreduce.systems import TimeDependence


@pytest.mark.parametrize(
    "frequencies,kind,period",
    [
        ([], TimeClass.AUTONOMOUS, None),
        ([0.0], TimeClass.AUTONOMOUS, None),
        ([1.0], TimeClass.PERIODIC, 2 * pi),
        ([3.0, 1.0, 3.0], TimeClass.PERIODIC, 2 * pi),
        ([2.0, 4.0], TimeClass.PERIODIC, pi),
        ([1.0, sqrt(2.0)], TimeClass.QUASIPERIODIC, None),
    ],
)
def test_from_frequencies(
    frequencies: list[float], kind: TimeClass, period: float | None
) -> None:
    time_dependence = TimeDependence.from_frequencies(frequencies)
    assert time_dependence.kind == kind
    if period is None:
        assert time_dependence.period is None
    else:
        assert time_dependence.period == pytest.approx(period)


@pytest.mark.parametrize(
    "arguments,expected",
    [
        ({"kind": "periodic"}, "periodic time dependence requires a period"),
        ({"kind": "quasiperiodic"}, "requires frequencies"),
        ({"kind": "aperiodic"}, "aperiodic time dependence requires an interval"),
        ({"kind": "aperiodic", "interval": (1.0, 0.0)}, "must satisfy a < b"),
        ({"kind": "periodic", "period": -1.0}, "period"),
    ],
)
def test_time_dependence_validation(arguments: dict, expected: str) -> None:
    with pytest.raises(ValidationError) as excinfo:
        TimeDependence(**arguments)
    assert expected in str(excinfo.value)


def test_windows() -> None:
    """Test the sampling windows and horizons of every time class."""
    assert TimeDependence.autonomous().window() == (0.0, 0.0)
    assert TimeDependence.autonomous().horizon() == pytest.approx(2 * pi)
    assert TimeDependence.periodic(3.0).window() == (0.0, 3.0)
    quasi = TimeDependence.quasiperiodic((2.0, sqrt(5.0)))
    assert quasi.window() == (0.0, pytest.approx(pi))
    aperiodic = TimeDependence.aperiodic(-1.0, 4.0)
    assert aperiodic.window() == (-1.0, 4.0)
    assert aperiodic.horizon() == 5.0


def test_check_span() -> None:
    aperiodic = TimeDependence.aperiodic(0.0, 10.0)
    aperiodic.check_span(0.0, 10.0)
    aperiodic.check_span(10.0, 2.0)
    TimeDependence.periodic(1.0).check_span(-100.0, 100.0)
    with capture_logs() as cap_logs:
        with pytest.raises(TimeDomainViolation) as excinfo:
            aperiodic.check_span(5.0, 11.0)
    assert "Integration span leaves the interval of definition" in str(excinfo.value)
    assert [log["event"] for log in cap_logs] == [
        "Integration span leaves the interval of definition"
    ]


class _Bare(MechanicalSystem):
    def mass(self, q, t, eps):  # type: ignore[no-untyped-def]
        return np.eye(self.n)

    def force(self, q, qdot, t, eps):  # type: ignore[no-untyped-def]
        return np.zeros(self.n)

    def scaled_mass(self, x, eta, t, eps):  # type: ignore[no-untyped-def]
        return np.eye(self.n)

    def scaled_force(self, x, xdot, eta, ydot, t, eps):  # type: ignore[no-untyped-def]
        return np.zeros(self.n)


@pytest.mark.parametrize(
    "n,s,eps,expected",
    [
        (2, 2, 1.0, "Slow dimension must satisfy 1 <= s < n, got s=2 n=2"),
        (3, 0, 1.0, "Slow dimension must satisfy 1 <= s < n, got s=0 n=3"),
        (2, 1, -1.0, "eps must be non-negative"),
    ],
)
def test_system_dimensions(n: int, s: int, eps: float, expected: str) -> None:
    with pytest.raises(ValueError) as excinfo:
        _Bare(n, s, eps, TimeDependence.autonomous())
    assert expected in str(excinfo.value)


def test_system_defaults() -> None:
    system = _Bare(3, 1, 0.5, TimeDependence.autonomous())
    assert system.f == 2
    np.testing.assert_array_equal(system.row_scale(None, None, 0.0, 0.5), np.ones(3))
    point = make_point(0.0, 0.0, [0.0, 0.0], [0.0, 0.0], 0.0)
    assert system.force_derivative("x", point, 0.5) is None
    assert system.closed_form_critical(np.zeros(1), np.zeros(1), 0.0) is None
    assert system.mass_varies("eta") and not system.mass_varies("ydot")
    assert system.parameter_report()["parameters"] == {}


def test_point_replace() -> None:
    point = make_point(1.0, [2.0], 3.0, 4.0, 0.5)
    assert point.x.shape == (1,)
    moved = point.replace("t", np.array([2.5]))
    assert moved.t == 2.5
    moved = point.replace("eta", [7.0])
    np.testing.assert_array_equal(moved.eta, [7.0])
    np.testing.assert_array_equal(point.eta, [3.0])
    np.testing.assert_array_equal(point.vector("t"), [0.5])
    np.testing.assert_array_equal(point.vector("xdot"), [2.0])


@pytest.mark.parametrize(
    "preset,mode,eps,tolerance",
    [
        ("linear-coupled", None, 1e-2, 1e-12),
        ("linear-coupled", None, 0.3, 1e-12),
        ("tet-demo", None, 1e-2, 1e-12),
        ("fold-demo", None, 1e-2, 1e-12),
        ("weakly-nonlinear", None, 1e-2, 1e-12),
        ("stiff-inertia", None, 1e-2, 1e-12),
        ("twodof-ssm", None, 1.0, 1e-12),
        ("twodof-ssm", None, 0.1, 1e-12),
        ("pendulum3", None, 1e-2, 1e-10),
        ("pendulum3", STIFF_MODE, 1e-2, 1e-10),
    ],
)
def test_consistency(
    preset: str, mode: str | None, eps: float, tolerance: float
) -> None:
    """Test that the scaled block form rebuilds the unscaled equations."""
    system = load_preset(preset, mode=mode)
    report = consistency_check(system, random_states(system, 20), eps, tolerance)
    assert report.passed, report
    assert report.n_samples == 20


def test_consistency_requires_positive_eps(linear_coupled) -> None:
    with pytest.raises(ValueError) as excinfo:
        consistency_check(linear_coupled, random_states(linear_coupled, 1), 0.0)
    assert "consistency_check requires eps > 0" in str(excinfo.value)


def test_consistency_singular_mass(linear_coupled) -> None:
    """The unscaled mass of linear-coupled loses its fast block at eps = 0."""
    state = random_states(linear_coupled, 1)[0]
    q = np.concatenate([state[0], state[2]])
    qdot = np.concatenate([state[1], state[3]])
    with pytest.raises(SingularMass) as excinfo:
        linear_coupled.full_accelerations(q, qdot, 0.0, 0.0)
    assert "Mass matrix is singular" in str(excinfo.value)


def test_evaluate_scaled_non_finite(fold_demo) -> None:
    point = make_point(np.nan, 0.0, 0.0, 0.0, 0.0)
    with capture_logs() as cap_logs:
        with pytest.raises(EvaluatorFailure) as excinfo:
            fold_demo.evaluate_scaled(point, 1e-2)
    assert "Evaluator returned non-finite values" in str(excinfo.value)
    assert cap_logs[0]["evaluator"] == "scaled_force"


def test_full_vector_field(twodof) -> None:
    """x'' = -k1 x - a x y - b x^3 and y'' = -k2 y - c x^2 at eps = 1."""
    field = twodof.full_vector_field()
    state = np.array([0.5, 0.1, 0.2, -0.3])
    derivative = field(0.0, state)
    np.testing.assert_allclose(
        derivative,
        [0.1, -0.5 - 0.5 * 0.2 - 0.125, -0.3, -9.0 * 0.2 - 0.25],
        rtol=1e-14,
    )


def test_domain_sampler_autonomous(twodof) -> None:
    """Autonomous windows collapse the time axis of the grid."""
    samples = DomainSampler().samples(twodof)
    assert len(samples) == 9 * 9 + 100
    assert all(t == 0.0 for _, _, t in samples)
    assert all(abs(x[0]) <= 0.5 and abs(xdot[0]) <= 0.5 for x, xdot, _ in samples)


def test_domain_sampler_restricts_domain(fold_demo) -> None:
    sampler = DomainSampler(grid_points=5, random_points=20, seed=3)
    samples = sampler.samples(fold_demo)
    assert samples
    assert all(fold_demo.in_domain(x, xdot, t) for x, xdot, t in samples)
    assert len(samples) < 5**3 + 20
    again = sampler.samples(fold_demo)
    assert all(
        np.array_equal(a[0], b[0]) and a[2] == b[2] for a, b in zip(samples, again)
    )


def test_domain_sampler_shrink(linear_coupled) -> None:
    low, high = DomainSampler(shrink=0.5).bounds(linear_coupled)
    np.testing.assert_allclose(low, [-1.0, -1.0, 0.0])
    np.testing.assert_allclose(high, [1.0, 1.0, 2 * pi])


def test_random_states(pendulum_soft) -> None:
    states = random_states(pendulum_soft, 10, seed=1)
    assert len(states) == 10
    box = pendulum_soft.domain
    start, end = pendulum_soft.time_dependence.window()
    for x, xdot, y, ydot, t in states:
        assert x.shape == (2,) and y.shape == (1,)
        assert np.all(np.abs(x) <= box.x) and np.all(np.abs(ydot) <= box.ydot)
        assert start <= t <= end
    assert all(
        np.array_equal(a[0], b[0])
        for a, b in zip(states, random_states(pendulum_soft, 10, seed=1))
    )


def test_parameter_report(twodof) -> None:
    report = twodof.parameter_report()
    assert report["system"] == "twodof-ssm"
    assert report["mode"] is None
    assert report["eps"] == 1.0
    assert report["parameters"]["k2"] == 9.0
