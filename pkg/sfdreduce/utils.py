# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
"""Various utilities."""
import asyncio
import hashlib
from collections.abc import Callable
from collections.abc import Iterable
from collections.abc import Iterator
from pathlib import Path
from typing import TypeVar

import numpy as np
from ra_utils.asyncio_utils import gather_with_concurrency


T = TypeVar("T")
R = TypeVar("R")

Vector = np.ndarray
VectorFunction = Callable[[np.ndarray], np.ndarray]

#: Relative step of central differences, cube root of machine epsilon.
CBRT_EPS = float(np.cbrt(np.finfo(float).eps))
#: Relative step of central second differences.
QUARTIC_EPS = float(np.finfo(float).eps ** 0.25)


def remove_duplicates(iterator: Iterable[T] | Iterator[T]) -> list[T]:
    """Remove duplicates from the input and return the result as a list.

    Args:
        iterator: Input to remove duplicated elements from.

    Return:
        Deduplicated list of results.
    """
    return list(dict.fromkeys(iterator))


def fd_steps(value: np.ndarray, relative: float = CBRT_EPS) -> np.ndarray:
    """Per-coordinate finite difference steps, `relative * max(1, |v|)`."""
    return relative * np.maximum(1.0, np.abs(np.atleast_1d(value)))


def central_jacobian(
    func: VectorFunction, value: np.ndarray, steps: np.ndarray | None = None
) -> np.ndarray:
    """Central difference Jacobian of `func` at `value`.

    Args:
        func: Function from real[k] to real[m].
        value: Point to differentiate at.
        steps: Optional per-coordinate steps, defaults to `fd_steps(value)`.

    Returns:
        The m x k Jacobian.
    """
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if steps is None:
        steps = fd_steps(value)
    columns = []
    for index, step in enumerate(steps):
        offset = np.zeros_like(value)
        offset[index] = step
        forward = np.atleast_1d(func(value + offset))
        backward = np.atleast_1d(func(value - offset))
        columns.append((forward - backward) / (2.0 * step))
    return np.stack(columns, axis=-1)


def richardson_jacobian(
    func: VectorFunction, value: np.ndarray, base: float = 1e-5
) -> np.ndarray:
    """Central difference Jacobian improved by one Richardson extrapolation.

    The step of each coordinate is `base * (1 + |v|)`; the estimates at h and h/2
    are combined as (4 D(h/2) - D(h)) / 3.
    """
    value = np.atleast_1d(np.asarray(value, dtype=float))
    steps = base * (1.0 + np.abs(value))
    coarse = central_jacobian(func, value, steps)
    fine = central_jacobian(func, value, steps / 2.0)
    return (4.0 * fine - coarse) / 3.0


def one_sided_derivative(func: VectorFunction, value: float, step: float) -> np.ndarray:
    """Second order forward difference, for arguments that must stay >= value."""
    start = np.atleast_1d(func(np.array([value])))
    middle = np.atleast_1d(func(np.array([value + step])))
    end = np.atleast_1d(func(np.array([value + 2.0 * step])))
    return (-3.0 * start + 4.0 * middle - end) / (2.0 * step)


def central_hessian(func: VectorFunction, value: np.ndarray) -> np.ndarray:
    """Central difference second derivatives of a vector function.

    Returns:
        Tensor of shape (m, k, k), symmetric in its last two indices.
    """
    value = np.atleast_1d(np.asarray(value, dtype=float))
    steps = fd_steps(value, QUARTIC_EPS)
    size = value.size
    centre = np.atleast_1d(func(value))
    hessian = np.zeros((centre.size, size, size))
    basis = np.eye(size)
    for i in range(size):
        ei = basis[i] * steps[i]
        hessian[:, i, i] = (
            np.atleast_1d(func(value + ei)) - 2.0 * centre + func(value - ei)
        ) / steps[i] ** 2
        for j in range(i + 1, size):
            ej = basis[j] * steps[j]
            mixed = (
                np.atleast_1d(func(value + ei + ej))
                - func(value + ei - ej)
                - func(value - ei + ej)
                + func(value - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hessian[:, i, j] = mixed
            hessian[:, j, i] = mixed
    return hessian


def round_key(*arrays: np.ndarray | float, digits: int = 12) -> tuple[float, ...]:
    """Hashable key of the arguments rounded to `digits` significant digits."""
    flat = np.concatenate([np.atleast_1d(np.asarray(a, dtype=float)) for a in arrays])
    return tuple(float(f"{value:.{digits - 1}e}") for value in flat)


def format_float(value: float) -> str:
    """Round-trip decimal formatting, 17 significant digits."""
    return f"{value:.17g}"


def file_digest(path: Path) -> str:
    """SHA-256 hex digest of a file."""
    return hashlib.sha256(path.read_bytes()).hexdigest()


async def map_in_threads(
    jobs: int, func: Callable[[T], R], items: Iterable[T]
) -> list[R]:
    """Apply `func` to every item on worker threads, at most `jobs` at a time.

    Results are returned in input order.
    """
    tasks = [asyncio.to_thread(func, item) for item in items]
    return await gather_with_concurrency(jobs, *tasks)
