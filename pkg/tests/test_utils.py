# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
"""Testing various utilities."""
import threading
import time
from collections import Counter
from collections.abc import Iterable
from collections.abc import Iterator
from itertools import tee
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfdreduce.utils import central_hessian
from sfdreduce.utils import central_jacobian
from sfdreduce.utils import file_digest
from sfdreduce.utils import format_float
from sfdreduce.utils import map_in_threads
from sfdreduce.utils import one_sided_derivative
from sfdreduce.utils import remove_duplicates
from sfdreduce.utils import richardson_jacobian
from sfdreduce.utils import round_key


@pytest.mark.parametrize(
    "iterator,expected",
    [
        # Empty lists are handled nicely
        ([], []),
        # One element lists are handled nicely
        ([1], [1]),
        ([2], [2]),
        # Two element lists are handled nicely, perserving order
        ([1, 2], [1, 2]),
        ([2, 1], [2, 1]),
        # Duplicates are removed
        ([1, 1], [1]),
        ([2, 2], [2]),
        # Duplicates are removed, while perserving order
        ([1, 1, 2], [1, 2]),
        ([2, 1, 2], [2, 1]),
        ([2, 2, 1], [2, 1]),
    ],
)
def test_remove_duplicates_fixpoint(iterator: list[int], expected: list[int]) -> None:
    """Ensure that the output of remove_duplicates is as expected."""
    assert remove_duplicates(iterator) == expected


@given(...)
def test_remove_duplicates_count(iterator: Iterable[int] | Iterator[int]) -> None:
    """Ensure that the output has no duplicates."""
    counter = Counter(remove_duplicates(iterator))
    assert all(count == 1 for _, count in counter.most_common())


@given(...)
def test_remove_duplicates_elements(iterator: Iterable[int] | Iterator[int]) -> None:
    """Ensure that the output has the same elements as the input."""
    it1, it2 = tee(iterator, 2)
    assert set(remove_duplicates(it1)) == set(it2)


def test_central_jacobian() -> None:
    def func(v: np.ndarray) -> np.ndarray:
        return np.array([v[0] ** 2 * v[1], np.sin(v[1])])

    value = np.array([1.5, 0.3])
    expected = np.array([[2 * 1.5 * 0.3, 1.5**2], [0.0, np.cos(0.3)]])
    np.testing.assert_allclose(central_jacobian(func, value), expected, atol=1e-9)
    np.testing.assert_allclose(richardson_jacobian(func, value), expected, atol=1e-9)


def test_one_sided_derivative() -> None:
    """The forward difference never evaluates below the base point."""
    seen: list[float] = []

    def func(v: np.ndarray) -> np.ndarray:
        seen.append(float(v[0]))
        assert v[0] >= 0.0
        return np.array([np.sqrt(1.0 + v[0]) + v[0] ** 2])

    derivative = one_sided_derivative(func, 0.0, 1e-4)
    np.testing.assert_allclose(derivative, [0.5], atol=1e-7)
    assert min(seen) == 0.0


def test_central_hessian() -> None:
    def func(v: np.ndarray) -> np.ndarray:
        return np.array([v[0] ** 2 * v[1], v[0] * v[1] + v[1] ** 3])

    hessian = central_hessian(func, np.array([0.7, -0.4]))
    expected = np.array(
        [
            [[2 * -0.4, 2 * 0.7], [2 * 0.7, 0.0]],
            [[0.0, 1.0], [1.0, 6 * -0.4]],
        ]
    )
    assert hessian.shape == (2, 2, 2)
    np.testing.assert_allclose(hessian, expected, atol=1e-6)
    np.testing.assert_array_equal(hessian, hessian.transpose(0, 2, 1))


def test_round_key() -> None:
    assert round_key(np.array([1.0, 2.0]), 0.5) == (1.0, 2.0, 0.5)
    assert round_key(1.0) == round_key(1.0 + 1e-15)
    assert round_key(1.0) != round_key(1.0 + 1e-9)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips(value: float) -> None:
    """Ensure that 17 significant digits reproduce every double exactly."""
    assert float(format_float(value)) == value


def test_file_digest(tmp_path: Path) -> None:
    path = tmp_path / "empty.csv"
    path.write_bytes(b"")
    assert file_digest(path) == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


async def test_map_in_threads_order() -> None:
    """Ensure that results keep the input order whatever the finishing order."""

    def work(delay: float) -> float:
        time.sleep(delay)
        return delay * 10

    result = await map_in_threads(3, work, [0.03, 0.0, 0.01])
    assert result == [0.3, 0.0, 0.1]


async def test_map_in_threads_concurrency() -> None:
    """Ensure that at most `jobs` items run at the same time."""
    lock = threading.Lock()
    running = [0]
    peak = [0]

    def work(item: int) -> int:
        with lock:
            running[0] += 1
            peak[0] = max(peak[0], running[0])
        time.sleep(0.01)
        with lock:
            running[0] -= 1
        return item

    result = await map_in_threads(2, work, range(8))
    assert result == list(range(8))
    assert peak[0] <= 2
