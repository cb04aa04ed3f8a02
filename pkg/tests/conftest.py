# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=redefined-outer-name
# pylint: disable=unused-argument
"""This module contains pytest specific code, fixtures and helpers."""
import os
from collections.abc import Iterator

import pytest
import structlog

from sfdreduce.presets import FoldDemo
from sfdreduce.presets import load_preset
from sfdreduce.presets import Pendulum3
from sfdreduce.presets import QuadraticSystem
from sfdreduce.presets import STIFF_MODE
from sfdreduce.presets import TwoDofSSM


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Remove SFD_ variables so settings only see what a test sets."""
    for key in list(os.environ):
        if key.startswith("SFD_"):
            monkeypatch.delenv(key)
    yield


@pytest.fixture(autouse=True)
def reset_logging() -> Iterator[None]:
    """Undo logging configuration done by the command line tests."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def linear_coupled() -> Iterator[QuadraticSystem]:
    """The linear-coupled preset at its nominal eps = 1e-2."""
    system = load_preset("linear-coupled")
    assert isinstance(system, QuadraticSystem)
    yield system


@pytest.fixture
def unforced_linear_coupled() -> Iterator[QuadraticSystem]:
    """linear-coupled with f2 = 0, an unforced fixed point at the origin."""
    system = load_preset("linear-coupled", {"f2_amp": [0.0]})
    assert isinstance(system, QuadraticSystem)
    yield system


@pytest.fixture
def fold_demo() -> Iterator[FoldDemo]:
    system = load_preset("fold-demo")
    assert isinstance(system, FoldDemo)
    yield system


@pytest.fixture
def twodof() -> Iterator[TwoDofSSM]:
    system = load_preset("twodof-ssm")
    assert isinstance(system, TwoDofSSM)
    yield system


@pytest.fixture
def pendulum_soft() -> Iterator[Pendulum3]:
    system = load_preset("pendulum3")
    assert isinstance(system, Pendulum3)
    yield system


@pytest.fixture
def pendulum_stiff() -> Iterator[Pendulum3]:
    system = load_preset("pendulum3", mode=STIFF_MODE)
    assert isinstance(system, Pendulum3)
    yield system
