# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
"""Test the time integrators."""
import numpy as np
import pytest
from structlog.testing import capture_logs

from sfdreduce.exceptions import RhsFailure
from sfdreduce.exceptions import TimeDomainViolation
from sfdreduce.integrate import integrate
from sfdreduce.integrate import Trajectory
from sfdreduce.systems import TimeDependence


def oscillator(t: float, state: np.ndarray) -> np.ndarray:
    """x'' = -x with solution (cos t, -sin t) from (1, 0)."""
    return np.array([state[1], -state[0]])


def exact(times: np.ndarray) -> np.ndarray:
    return np.column_stack([np.cos(times), -np.sin(times)])


@pytest.mark.parametrize(
    "method,tolerance",
    [
        ("adaptive-explicit", 1e-6),
        ("adaptive-implicit", 1e-5),
        ("fixed-reference", 1e-10),
    ],
)
def test_oscillator(method: str, tolerance: float) -> None:
    grid = np.linspace(0.0, 10.0, 101)
    trajectory = integrate(
        oscillator, [1.0, 0.0], (0.0, 10.0), method=method, t_eval=grid
    )
    np.testing.assert_allclose(trajectory.times, grid)
    np.testing.assert_allclose(trajectory.states, exact(grid), atol=tolerance)
    assert trajectory.method == method
    assert trajectory.n_evaluations > 0


def test_backward() -> None:
    """Integrating backward from t = 3 recovers the initial state."""
    start = exact(np.array([3.0]))[0]
    trajectory = integrate(oscillator, start, (3.0, 0.0))
    assert trajectory.times[0] == 3.0
    assert trajectory.times[-1] == 0.0
    np.testing.assert_allclose(trajectory.final, [1.0, 0.0], atol=1e-6)


def test_fixed_reference_steps() -> None:
    trajectory = integrate(
        oscillator, [1.0, 0.0], (0.0, 1.0), method="fixed-reference", max_step=0.25
    )
    assert trajectory.n_steps == 4
    np.testing.assert_allclose(trajectory.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    # twelve stages per step
    assert trajectory.n_evaluations >= 1 + 4 * 12


def test_fixed_reference_order() -> None:
    """Ten steps of the eighth order scheme are accurate far beyond fourth order."""
    trajectory = integrate(
        oscillator, [1.0, 0.0], (0.0, 1.0), method="fixed-reference", max_step=0.1
    )
    assert trajectory.n_steps == 10
    assert trajectory.times[-1] == 1.0
    np.testing.assert_allclose(trajectory.final, exact(np.array([1.0]))[0], atol=1e-11)


def test_trajectory_at() -> None:
    trajectory = Trajectory(
        times=np.array([2.0, 1.0, 0.0]),
        states=np.array([[4.0, 0.0], [2.0, 1.0], [0.0, 2.0]]),
        method="fixed-reference",
    )
    np.testing.assert_allclose(trajectory.at(0.5), [1.0, 1.5])
    np.testing.assert_array_equal(trajectory.final, [0.0, 2.0])


def test_empty_span() -> None:
    with pytest.raises(ValueError) as excinfo:
        integrate(oscillator, [1.0, 0.0], (1.0, 1.0))
    assert "Integration span is empty" in str(excinfo.value)


def test_unknown_method() -> None:
    with pytest.raises(ValueError) as excinfo:
        integrate(oscillator, [1.0, 0.0], (0.0, 1.0), method="euler")  # type: ignore
    assert "Unknown integration method: euler" in str(excinfo.value)


def test_non_finite_rhs() -> None:
    def blow_up(t: float, state: np.ndarray) -> np.ndarray:
        return np.array([np.inf if t > 0.5 else 1.0])

    with capture_logs() as cap_logs:
        with pytest.raises(RhsFailure) as excinfo:
            integrate(blow_up, [0.0], (0.0, 1.0))
    assert "Right-hand side returned non-finite values" in str(excinfo.value)
    assert cap_logs[-1]["log_level"] == "warning"


def test_aperiodic_span() -> None:
    time_dependence = TimeDependence.aperiodic(0.0, 5.0)
    trajectory = integrate(
        oscillator, [1.0, 0.0], (0.0, 5.0), time_dependence=time_dependence
    )
    assert trajectory.times[-1] == 5.0
    with pytest.raises(TimeDomainViolation):
        integrate(oscillator, [1.0, 0.0], (0.0, 6.0), time_dependence=time_dependence)


def test_implicit_with_jacobian() -> None:
    """A stiff linear decay solved with the analytic Jacobian."""
    rate = 1e4

    def decay(t: float, state: np.ndarray) -> np.ndarray:
        return -rate * (state - np.cos(t))

    def jacobian(t: float, state: np.ndarray) -> np.ndarray:
        return np.array([[-rate]])

    trajectory = integrate(
        decay, [0.0], (0.0, 1.0), method="adaptive-implicit", jac=jacobian
    )
    assert trajectory.final[0] == pytest.approx(np.cos(1.0), abs=1e-3)
    assert trajectory.n_steps < 1000
