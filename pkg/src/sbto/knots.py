"""Mapping between flat knot vectors and full-resolution control sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .types import KnotSchedule

KINDS = ("linear", "zoh")


@dataclass(frozen=True)
class Interpolator:
    kind: str
    schedule: KnotSchedule

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"interpolation kind must be one of {KINDS}, got {self.kind!r}")

    def __call__(self, values, horizon=None):
        return interpolate_values(values, self.schedule, horizon, self.kind)


@lru_cache(maxsize=256)
def _segments(tau, horizon):
    """Segment index and blend factor for steps 0..horizon-1."""
    tau_arr = np.asarray(tau)
    t = np.arange(horizon)
    j = np.searchsorted(tau_arr, t, side="right") - 1
    last = len(tau) - 1
    nxt = np.minimum(j + 1, last)
    span = np.where(nxt > j, tau_arr[nxt] - tau_arr[j], 1)
    alpha = (t - tau_arr[j]) / span
    j.setflags(write=False)
    nxt.setflags(write=False)
    alpha.setflags(write=False)
    return j, nxt, alpha


def interpolate_values(values, schedule, horizon=None, kind="linear"):
    """Interpolate flat knot vectors into control sequences.

    ``values`` has shape (..., K*n_u) (or a prefix of whole knots); the result
    has shape (..., horizon, n_u). Only knots up to the one bracketing
    step ``horizon - 1`` are read, so a shorter horizon yields a prefix.
    """
    if kind not in KINDS:
        raise ValueError(f"interpolation kind must be one of {KINDS}, got {kind!r}")
    horizon = schedule.T if horizon is None else int(horizon)
    if not 1 <= horizon <= schedule.T:
        raise ValueError(
            f"horizon {horizon} exceeds the knot schedule (last knot at step {schedule.tau[-1]})"
        )
    values = np.asarray(values, dtype=np.float64)
    n_u = schedule.n_u
    if values.shape[-1] != schedule.dim:
        raise ValueError(f"knot vector length {values.shape[-1]} != K*n_u = {schedule.dim}")
    mat = values.reshape(values.shape[:-1] + (schedule.K, n_u))
    j, nxt, alpha = _segments(schedule.tau, horizon)
    left = mat[..., j, :]
    if kind == "zoh":
        return left.copy()
    right = mat[..., nxt, :]
    out = left + alpha[:, None] * (right - left)
    # guard the convex-hull property against rounding
    return np.clip(out, np.minimum(left, right), np.maximum(left, right))


def interpolate(knots, interp, horizon=None):
    """Control sequence of length ``horizon`` from a :class:`ControlKnots`."""
    if knots.schedule != interp.schedule:
        raise ValueError("knots and interpolator use different schedules")
    return interpolate_values(knots.values, knots.schedule, horizon, interp.kind)


def _round_half_up(x):
    return math.floor(x + Fraction(1, 2))


def build_schedule(grid, knot_spacing, n_u=1):
    """Knot steps ``round(j * spacing / dt)`` clamped to ``0 .. T-1``.

    The last interval may be shorter than the spacing.
    """
    if knot_spacing < grid.dt:
        raise ValueError(f"knot spacing {knot_spacing} is shorter than dt {grid.dt}")
    ratio = Fraction(repr(float(knot_spacing))) / Fraction(repr(float(grid.dt)))
    last = grid.T - 1
    tau = []
    j = 0
    while True:
        step = _round_half_up(j * ratio)
        if step >= last:
            break
        if not tau or step > tau[-1]:
            tau.append(step)
        j += 1
    tau.append(last)
    return KnotSchedule(tuple(tau), n_u)


def init_mean_from_reference(ref, schedule, actuated, control_scale=1.0):
    """Knot-major flat vector of the actuated reference positions at each knot step.

    Positions are divided by ``control_scale`` so the vector is in control units.
    """
    actuated = tuple(int(i) for i in actuated)
    n_q = ref.q.shape[1]
    if any(not 0 <= i < n_q for i in actuated):
        raise ValueError(f"actuated map {actuated} references coordinates outside n_q={n_q}")
    if len(actuated) != schedule.n_u:
        raise ValueError(f"actuated map has {len(actuated)} entries, schedule expects {schedule.n_u}")
    if schedule.tau[-1] > ref.grid.T:
        raise ValueError("knot schedule extends past the reference")
    rows = ref.q[np.asarray(schedule.tau)][:, actuated]
    return (rows / np.asarray(control_scale, dtype=np.float64)).reshape(-1)

