# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=redefined-outer-name
"""Test the built-in example systems."""
from math import pi
from math import sqrt
from pathlib import Path
from typing import Any

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from structlog.testing import capture_logs

from sfdreduce.decomposition import inertial_decouple
from sfdreduce.exceptions import InvalidParameter
from sfdreduce.exceptions import UnknownParameter
from sfdreduce.exceptions import UnknownPreset
from sfdreduce.presets import cubic_root
from sfdreduce.presets import load_preset
from sfdreduce.presets import nondimensionalize
from sfdreduce.presets import PendulumParameters
from sfdreduce.presets import PRESET_IDS
from sfdreduce.presets import PRESETS
from sfdreduce.presets import SOFT_MODE
from sfdreduce.presets import spring_factor
from sfdreduce.presets import STIFF_MODE
from sfdreduce.reports import dumps
from sfdreduce.systems import TimeClass

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize(
    "preset_id,n,s,eps",
    [
        ("linear-coupled", 2, 1, 1e-2),
        ("tet-demo", 2, 1, 1e-2),
        ("fold-demo", 2, 1, 1e-2),
        ("weakly-nonlinear", 2, 1, 1e-2),
        ("stiff-inertia", 2, 1, 1e-2),
        ("twodof-ssm", 2, 1, 1.0),
        ("pendulum3", 3, 2, 1e-8),
    ],
)
def test_load_preset(preset_id: str, n: int, s: int, eps: float) -> None:
    system = load_preset(preset_id)
    assert system.name == preset_id
    assert (system.n, system.s, system.eps) == (n, s, eps)


def test_preset_ids() -> None:
    assert set(PRESET_IDS) == set(PRESETS)
    assert PRESETS["pendulum3"].modes == [SOFT_MODE, STIFF_MODE]
    assert PRESETS["linear-coupled"].modes == [None]


def test_load_preset_logs() -> None:
    with capture_logs() as cap_logs:
        load_preset("fold-demo", eps=0.5)
    assert cap_logs == [
        {
            "event": "Preset loaded",
            "log_level": "debug",
            "preset": "fold-demo",
            "mode": None,
            "eps": 0.5,
            "n": 2,
            "s": 1,
        }
    ]


@pytest.mark.parametrize(
    "arguments,exception,expected",
    [
        ({"preset_id": "example-9"}, UnknownPreset, "Unknown preset: example-9"),
        (
            {"preset_id": "pendulum3", "mode": "soft"},
            UnknownPreset,
            "Unknown mode for pendulum3: soft",
        ),
        (
            {"preset_id": "linear-coupled", "overrides": {"k9": 1.0, "K0": 2.0}},
            UnknownParameter,
            "Unknown parameter for linear-coupled: K0, k9",
        ),
        (
            {"preset_id": "linear-coupled", "overrides": {"M1": [[-1.0]]}},
            InvalidParameter,
            "non-positive mass matrix M1",
        ),
        (
            {"preset_id": "linear-coupled", "overrides": {"K2": [[1.0, 0.0]]}},
            InvalidParameter,
            "K2 must have shape (1, 1)",
        ),
        (
            {"preset_id": "twodof-ssm", "overrides": {"k2": 0.0}},
            InvalidParameter,
            "Invalid parameters for twodof-ssm",
        ),
        ({"preset_id": "fold-demo", "eps": -1.0}, InvalidParameter, "non-negative"),
    ],
)
def test_load_preset_errors(
    arguments: dict[str, Any], exception: type[Exception], expected: str
) -> None:
    with pytest.raises(exception) as excinfo:
        load_preset(**arguments)
    assert expected in str(excinfo.value)


def test_overrides_replace_mode_defaults() -> None:
    system = load_preset("pendulum3", {"m": 2.0}, mode=STIFF_MODE)
    parameters = system.parameters  # type: ignore[attr-defined]
    assert parameters.m == 2.0
    assert parameters.M == 0.25
    assert parameters.fp_omega is None


def test_linear_coupled_closed_form(linear_coupled) -> None:
    """G0 = x^2 + 0.5 sin t for the default coupling and forcing."""
    x, xdot = np.array([0.7]), np.array([0.3])
    eta = linear_coupled.closed_form_critical(x, xdot, 1.2)
    np.testing.assert_allclose(eta, [0.49 + 0.5 * np.sin(1.2)], rtol=1e-14)
    assert linear_coupled.time_dependence.kind == TimeClass.PERIODIC
    assert linear_coupled.time_dependence.period == pytest.approx(2 * pi)


def test_unforced_is_autonomous(unforced_linear_coupled) -> None:
    assert unforced_linear_coupled.time_dependence.kind == TimeClass.AUTONOMOUS


def test_no_closed_form_when_stiff() -> None:
    system = load_preset("linear-coupled", {"s2_stiff": True})
    assert system.closed_form_critical(np.zeros(1), np.zeros(1), 0.0) is None


@pytest.mark.parametrize(
    "x,t",
    [(0.0, 0.0), (0.5, 0.0), (0.9, 1.0), (-0.3, -0.5), (1.2, 1.4)],
)
def test_fold_demo_branches(fold_demo, x: float, t: float) -> None:
    """Both branches solve 4 eta^2 + 4 eta + x^2 = sin t."""
    point = np.array([x])
    for sign in (1.0, -1.0):
        eta = fold_demo.branch(point, t, sign)[0]
        assert 4 * eta**2 + 4 * eta + x**2 == pytest.approx(np.sin(t), abs=1e-12)
    assert fold_demo.boundary_gap(point, t) == pytest.approx(1 + np.sin(t) - x**2)
    np.testing.assert_array_equal(
        fold_demo.closed_form_critical(point, point, t), fold_demo.branch(point, t)
    )


def test_fold_demo_domain(fold_demo) -> None:
    assert fold_demo.in_domain(np.array([0.0]), np.array([0.0]), 0.0)
    assert not fold_demo.in_domain(np.array([0.99]), np.array([0.0]), 0.0)
    assert not fold_demo.in_domain(np.array([1.5]), np.array([0.0]), 0.0)


def test_nondimensionalize() -> None:
    parameters = PendulumParameters()
    groups = nondimensionalize(parameters)
    assert parameters.omega_p == pytest.approx(sqrt(9.81 / 6.0))
    assert groups.Delta == 6.0
    assert groups.rho == 6.0
    assert groups.beta == 1.0
    assert groups.q_h == pytest.approx(600.0 * 6.0 / 9.81)
    assert groups.q_d == pytest.approx(2.0 * 6.0 / 9.81)
    assert groups.a_h == pytest.approx(0.5 * 6.0 / 9.81)
    assert (groups.pi_h, groups.pi_d, groups.pi_p) == (3.0, 0.33, 0.33)


@given(
    st.floats(-0.9, 5.0),
    st.floats(-5.0, 5.0),
    st.floats(0.1, 10.0),
)
def test_spring_factor(d: float, h: float, rho: float) -> None:
    """Test the cancellation free form against the textbook expression."""
    naive = 1.0 - rho / sqrt(rho**2 * (1.0 + d) ** 2 + h**2)
    assert spring_factor(d, h, rho) == pytest.approx(naive, abs=1e-12)


def test_spring_factor_small() -> None:
    """Q(d, 0) ~ d for small d, where the naive form loses every digit."""
    assert spring_factor(1e-12, 0.0, 6.0) == pytest.approx(1e-12, rel=1e-9)


@given(
    st.one_of(st.just(0.0), st.floats(1e-6, 1e3)),
    st.floats(1e-3, 1e3),
    st.floats(-1e3, 1e3),
)
def test_cubic_root(alpha: float, stiffness: float, load: float) -> None:
    root = cubic_root(alpha, stiffness, load)
    residual = alpha * root**3 + stiffness * root - load
    assert abs(residual) <= 1e-9 * (1.0 + abs(load))


@pytest.mark.parametrize("mode", [SOFT_MODE, STIFF_MODE])
def test_pendulum_units(mode: str) -> None:
    system = load_preset("pendulum3", mode=mode)
    physical = np.array([1.0, 1.2, 0.3, -0.2, 0.08, 0.005])
    state = system.to_state(physical)  # type: ignore[attr-defined]
    np.testing.assert_allclose(system.to_physical(state), physical)  # type: ignore
    assert system.to_seconds(system.to_scaled_time(15.6)) == pytest.approx(15.6)
    assert system.snap_time() == pytest.approx(15.6 * sqrt(9.81 / 6.0))


def test_pendulum_initial_conditions(pendulum_soft, pendulum_stiff) -> None:
    soft = pendulum_soft.initial_condition()
    wp = sqrt(9.81 / 6.0)
    np.testing.assert_allclose(
        soft, [1.0, 1.2 / 6.0, 0.0, 0.0, 0.08182, 0.005301 / wp]
    )
    stiff = pendulum_stiff.initial_condition()
    scale = np.array([1.0, 1.0 / wp, 1.0, 1.0, 1.0 / wp, 1.0 / wp]) / [1, 1, 3, 3, 3, 3]
    np.testing.assert_allclose(
        stiff, np.array([1.0, 0.0, 0.002842, 0.02296, 0.0005551, -0.002546]) * scale
    )


def test_pendulum_time_dependence(pendulum_soft, pendulum_stiff) -> None:
    """Forcing at 1 and 3 rad/s is periodic in 1/w_p units; w_p forcing is 2 pi."""
    wp = sqrt(9.81 / 6.0)
    assert pendulum_soft.time_dependence.kind == TimeClass.PERIODIC
    assert pendulum_soft.time_dependence.period == pytest.approx(2 * pi * wp)
    assert pendulum_stiff.time_dependence.period == pytest.approx(2 * pi)


@pytest.mark.parametrize("mode", [SOFT_MODE, STIFF_MODE])
def test_pendulum_closed_form_critical(mode: str) -> None:
    """The closed form cancels the fast rows of the decoupled form at eps = 0."""
    system = load_preset("pendulum3", mode=mode)
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, system.s)
        xdot = rng.uniform(-1.0, 1.0, system.s)
        t = float(rng.uniform(0.0, 5.0))
        eta = system.closed_form_critical(x, xdot, t)
        form = inertial_decouple(system, x, xdot, eta, np.zeros(system.f), t, 0.0)
        scale = 1.0 + np.max(np.abs(form.Q1))
        assert np.max(np.abs(form.Q2)) <= 1e-10 * scale


@pytest.mark.parametrize(
    "preset_id,mode,golden",
    [
        ("pendulum3", SOFT_MODE, "pendulum3-soft-soft-stiff.json"),
        ("pendulum3", STIFF_MODE, "pendulum3-stiff-stiff-soft.json"),
        ("twodof-ssm", None, "twodof-ssm.json"),
    ],
)
def test_parameter_report_golden(preset_id: str, mode: str | None, golden: str) -> None:
    """The emitted parameter report matches the reviewed file byte for byte."""
    system = load_preset(preset_id, mode=mode)
    expected = (GOLDEN / golden).read_text(encoding="utf-8")
    assert dumps(system.parameter_report()) + "\n" == expected
