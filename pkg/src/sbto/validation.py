"""Input validation helpers shared by constructors and estimators."""

from __future__ import annotations

import numpy as np

UNIT_QUAT_TOL = 1e-9


def as_float_array(x, name, ndim=None, shape=None, copy=True):
    """Convert ``x`` to a finite float64 array, raising ``ValueError`` otherwise.

    The returned array is flagged read-only so that frozen containers stay immutable.
    """
    arr = np.array(x, dtype=np.float64, copy=copy)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise ValueError(
                    f"{name} has length {got} along axis {axis}, expected {want}"
                )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value


def check_fraction(value, name, low_open=False):
    value = float(value)
    ok = (0.0 < value <= 1.0) if low_open else (0.0 <= value <= 1.0)
    if not ok:
        interval = "(0, 1]" if low_open else "[0, 1]"
        raise ValueError(f"{name} must lie in {interval}, got {value}")
    return value


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_unit_quaternions(q, name, tol=UNIT_QUAT_TOL):
    """Raise ``ValueError`` unless every quaternion along the last axis is unit-norm."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValueError(f"{name} must have 4 components on its last axis, got {q.shape}")
    err = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if err.size and np.max(err) > tol:
        raise ValueError(f"{name} is not unit-norm (deviation {np.max(err):.3e})")
    return q


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a sequence of ints (mixed by ``SeedSequence``) or an
    existing Generator, which is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
