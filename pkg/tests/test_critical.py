# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=redefined-outer-name
"""Test the critical manifold solver and formal stability."""
from itertools import product

import numpy as np
import pytest
from structlog.testing import capture_logs

from sfdreduce.critical import certificate_from_points
from sfdreduce.critical import check_formal_stability
from sfdreduce.critical import first_order_field
from sfdreduce.critical import first_order_jacobian
from sfdreduce.critical import solve_critical_point
from sfdreduce.critical import spectral_gap
from sfdreduce.critical import spectral_gap_concurrently
from sfdreduce.critical import tangent_matrices
from sfdreduce.exceptions import NoConvergence
from sfdreduce.exceptions import SingularJacobian
from sfdreduce.exceptions import UnstableSample
from sfdreduce.presets import load_preset
from sfdreduce.systems import DomainSampler
from sfdreduce.systems import make_point


SMALL = DomainSampler(grid_points=3, random_points=5)


@pytest.mark.parametrize(
    "x,xdot,t",
    [(0.0, 0.0, 0.0), (0.7, -1.0, 1.2), (-1.9, 2.0, 6.0), (1.3, 0.4, 3.0)],
)
def test_linear_coupled_critical_point(linear_coupled, x, xdot, t) -> None:
    """G0 = x^2 + 0.5 sin t, found by Newton from eta = 0."""
    point = solve_critical_point(linear_coupled, x, xdot, t, eta_guess=[0.0])
    np.testing.assert_allclose(point.eta, [x**2 + 0.5 * np.sin(t)], atol=1e-10)
    assert point.residual <= 1e-10 * (1.0 + abs(x**2 + 0.5 * np.sin(t)))
    assert point.stable
    np.testing.assert_allclose(point.A, [[1.0]], atol=1e-8)
    np.testing.assert_allclose(point.B, [[1.0]], atol=1e-8)
    assert point.max_real == pytest.approx(-0.5)


def test_linear_coupled_critical_grid(linear_coupled) -> None:
    """G0 = x^2 + 0.5 sin t over a 9 x 9 x 9 grid."""
    axis = np.linspace(-2.0, 2.0, 9)
    times = np.linspace(0.0, 2.0 * np.pi, 9)
    found = []
    expected = []
    for x, xdot, t in product(axis, axis, times):
        point = solve_critical_point(linear_coupled, x, xdot, t, eta_guess=[0.0])
        found.append(point.eta[0])
        expected.append(x**2 + 0.5 * np.sin(t))
        assert point.stable
    np.testing.assert_allclose(found, expected, rtol=1e-10, atol=1e-10)


def test_closed_form_guess_needs_no_iteration(linear_coupled) -> None:
    point = solve_critical_point(linear_coupled, 0.5, 0.0, 0.3)
    assert point.iterations == 0


def test_fold_demo_branch_selection(fold_demo) -> None:
    """The guess selects the branch, the lower one is unstable."""
    x = np.array([0.5])
    upper = solve_critical_point(fold_demo, x, 0.0, 0.0, eta_guess=[0.0])
    lower = solve_critical_point(fold_demo, x, 0.0, 0.0, eta_guess=[-1.0])
    np.testing.assert_allclose(upper.eta, fold_demo.branch(x, 0.0, 1.0), atol=1e-10)
    np.testing.assert_allclose(lower.eta, fold_demo.branch(x, 0.0, -1.0), atol=1e-10)
    assert upper.stable
    assert not lower.stable
    # B = 4 + 8 eta
    np.testing.assert_allclose(upper.B, [[4.0 + 8.0 * upper.eta[0]]], atol=1e-7)


def test_no_critical_point_beyond_fold(fold_demo) -> None:
    """x^2 > 1 + sin t leaves no real solution."""
    with capture_logs() as cap_logs:
        with pytest.raises((NoConvergence, SingularJacobian)):
            solve_critical_point(fold_demo, 1.5, 0.0, 0.0, eta_guess=[0.0])
    assert cap_logs[-1]["log_level"] == "warning"


def test_no_convergence_carries_best_iterate(fold_demo) -> None:
    with pytest.raises(NoConvergence) as excinfo:
        solve_critical_point(
            fold_demo, 0.5, 0.0, 0.0, eta_guess=[3.0], max_iterations=1
        )
    assert "Newton did not converge" in str(excinfo.value)
    assert excinfo.value.best.shape == (1,)
    assert excinfo.value.residual > 0.0


@pytest.mark.parametrize(
    "A,B,stable,max_real",
    [
        ([[1.0]], [[1.0]], True, -0.5),
        ([[3.0]], [[2.0]], True, -1.0),
        ([[1.0]], [[0.0]], False, 0.0),
        ([[0.0]], [[1.0]], False, 0.0),
        ([[1.0]], [[-1.0]], False, (-1.0 + np.sqrt(5.0)) / 2.0),
        (np.eye(2), np.diag([1.0, 2.0]), True, -0.5),
    ],
)
def test_check_formal_stability(A, B, stable: bool, max_real: float) -> None:
    spectrum, result = check_formal_stability(np.array(A), np.array(B))
    assert result == stable
    assert spectrum.size == 2 * np.atleast_2d(A).shape[0]
    assert np.max(spectrum.real) == pytest.approx(max_real, abs=1e-12)


def test_check_formal_stability_non_finite() -> None:
    with pytest.raises(ValueError) as excinfo:
        check_formal_stability(np.array([[np.nan]]), np.array([[1.0]]))
    assert "Tangent matrices must be finite" in str(excinfo.value)


def test_tangent_matrices_ignore_ydot(linear_coupled) -> None:
    point = make_point(0.3, 0.1, 0.5, 9.0, 0.0)
    A, B = tangent_matrices(linear_coupled, point)
    np.testing.assert_allclose(A, [[1.0]], atol=1e-8)
    np.testing.assert_allclose(B, [[1.0]], atol=1e-8)


def test_spectral_gap(linear_coupled) -> None:
    """lambda^2 + lambda + 1 gives max Re = -1/2 and gap 0.95 * 0.5."""
    with capture_logs() as cap_logs:
        certificate = spectral_gap(linear_coupled, SMALL)
    assert certificate.gap == pytest.approx(0.475)
    assert certificate.margin == pytest.approx(0.025)
    assert certificate.n_samples == 3**3 + 5
    assert certificate.export()["lambda"] == certificate.gap
    assert cap_logs[-1]["event"] == "Spectral gap certified"


def test_spectral_gap_tet_demo() -> None:
    """B vanishes identically, no sample is asymptotically stable."""
    system = load_preset("tet-demo")
    with pytest.raises(UnstableSample) as excinfo:
        spectral_gap(system, SMALL)
    assert excinfo.value.point.shape == (3,)


def test_spectral_gap_fold_demo(fold_demo) -> None:
    """B = 4 sqrt(1 + sin t - x^2) > 1/4 keeps the companion pair complex."""
    certificate = spectral_gap(fold_demo, SMALL)
    assert certificate.gap == pytest.approx(0.475)


async def test_spectral_gap_concurrently(linear_coupled) -> None:
    certificate, points = await spectral_gap_concurrently(
        linear_coupled, SMALL, jobs=4
    )
    samples = SMALL.samples(linear_coupled)
    assert certificate == spectral_gap(linear_coupled, SMALL)
    assert [point.t for point in points] == [t for _, _, t in samples]


def test_certificate_requires_points() -> None:
    with pytest.raises(ValueError) as excinfo:
        certificate_from_points([])
    assert "No samples to certify" in str(excinfo.value)


def test_first_order_field_requires_eps(linear_coupled) -> None:
    with pytest.raises(ValueError) as excinfo:
        first_order_field(linear_coupled, 0.0)
    assert "requires eps > 0" in str(excinfo.value)


def test_first_order_jacobian_companion(linear_coupled) -> None:
    """eps times the fast block is the companion matrix [[0, 1], [-B, -A]]."""
    point = solve_critical_point(linear_coupled, 0.4, 0.1, 0.2)
    eps = 1e-3
    jacobian = first_order_jacobian(linear_coupled, point, eps)
    assert jacobian.shape == (4, 4)
    np.testing.assert_allclose(
        eps * jacobian[2:, 2:], [[0.0, 1.0], [-1.0, -1.0]], atol=1e-6
    )
