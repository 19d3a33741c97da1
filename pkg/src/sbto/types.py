"""Shared data model: time grids, trajectories, references, knot layouts,
sampling distributions and run logs.

All containers are frozen and hold read-only arrays, so they can be handed to
rollout workers without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .rotations import canonicalize
from .validation import (
    as_float_array,
    check_int,
    check_positive,
    check_unit_quaternions,
)

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``T`` control steps of length ``dt`` (states 0..T)."""

    dt: float
    T: int

    def __post_init__(self):
        object.__setattr__(self, "dt", check_positive(self.dt, "dt"))
        object.__setattr__(self, "T", check_int(self.T, "T", minimum=2))

    @property
    def duration(self):
        return self.T * self.dt

    @property
    def times(self):
        return np.arange(self.T + 1) * self.dt


@dataclass(frozen=True, eq=False)
class State:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_float_array(self.q, "q", ndim=1))
        object.__setattr__(self, "v", as_float_array(self.v, "v", ndim=1))


@dataclass(frozen=True, eq=False)
class PoseSeries:
    """Time series of a named frame or object: positions, optional orientations and velocities."""

    position: np.ndarray
    orientation: Optional[np.ndarray] = None
    linear_velocity: Optional[np.ndarray] = None
    angular_velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = as_float_array(self.position, "position", ndim=2, shape=(None, 3))
        n = pos.shape[0]
        object.__setattr__(self, "position", pos)
        if self.orientation is not None:
            quat = np.asarray(self.orientation, dtype=np.float64)
            check_unit_quaternions(quat, "orientation")
            quat = as_float_array(canonicalize(quat), "orientation", ndim=2, shape=(n, 4))
            object.__setattr__(self, "orientation", quat)
        for name in ("linear_velocity", "angular_velocity"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, as_float_array(value, name, ndim=2, shape=(n, 3)))

    def __len__(self):
        return self.position.shape[0]

    def slice(self, start, stop):
        def cut(a):
            return None if a is None else a[start:stop]

        return PoseSeries(
            cut(self.position),
            cut(self.orientation),
            cut(self.linear_velocity),
            cut(self.angular_velocity),
        )


@dataclass(frozen=True)
class DivergedRollout:
    """Marker returned instead of a trajectory when a rollout left the magnitude bound."""

    step: int
    horizon: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``q, v`` for steps 0..h and controls ``u`` for steps 0..h-1.

    ``frames``/``object`` carry task-space channels reported by the dynamics
    model and ``contacts`` maps a contact class to per-step event counts.
    """

    dt: float
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    frames: Mapping[str, PoseSeries] = field(default_factory=dict)
    object: Optional[PoseSeries] = None
    contacts: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dt", check_positive(self.dt, "dt"))
        q = as_float_array(self.q, "q", ndim=2)
        n_states = q.shape[0]
        if n_states < 2:
            raise ValueError("a trajectory needs at least two states")
        v = as_float_array(self.v, "v", ndim=2, shape=(n_states, None))
        u = as_float_array(self.u, "u", ndim=2, shape=(n_states - 1, None))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)
        for name, series in self.frames.items():
            if len(series) != n_states:
                raise ValueError(f"frame {name!r} has {len(series)} samples, expected {n_states}")
        if self.object is not None and len(self.object) != n_states:
            raise ValueError("object series length does not match the states")
        contacts = {}
        for cls, counts in self.contacts.items():
            counts = np.array(counts, dtype=np.int64)
            if counts.shape != (n_states,):
                raise ValueError(f"contact counts for {cls!r} must have shape ({n_states},)")
            counts.setflags(write=False)
            contacts[cls] = counts
        object.__setattr__(self, "frames", dict(self.frames))
        object.__setattr__(self, "contacts", contacts)

    @property
    def horizon(self):
        return self.u.shape[0]

    @property
    def grid(self):
        return TimeGrid(self.dt, self.horizon)

    @property
    def states(self):
        return [State(q, v) for q, v in zip(self.q, self.v)]

    def state(self, t):
        return State(self.q[t], self.v[t])


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Kinematic reference on a time grid.

    ``v`` may be omitted; consumers then finite-difference ``q`` (see
    :meth:`velocities`).
    """

    grid: TimeGrid
    q: np.ndarray
    v: Optional[np.ndarray] = None
    frames: Mapping[str, PoseSeries] = field(default_factory=dict)
    object: Optional[PoseSeries] = None

    def __post_init__(self):
        n = self.grid.T + 1
        object.__setattr__(self, "q", as_float_array(self.q, "q", ndim=2, shape=(n, None)))
        if self.v is not None:
            object.__setattr__(self, "v", as_float_array(self.v, "v", ndim=2, shape=(n, None)))
        for name, series in self.frames.items():
            if len(series) != n:
                raise ValueError(f"reference frame {name!r} has {len(series)} samples, expected {n}")
        if self.object is not None:
            if len(self.object) != n:
                raise ValueError("reference object series length does not match the grid")
            if self.object.orientation is None:
                raise ValueError("reference object targets need orientations")
        object.__setattr__(self, "frames", dict(self.frames))

    @property
    def states(self):
        v = self.velocities()
        return [State(q, vv) for q, vv in zip(self.q, v)]

    def velocities(self):
        if self.v is not None:
            return self.v
        return np.gradient(self.q, self.grid.dt, axis=0)


@dataclass(frozen=True, eq=False)
class KnotSchedule:
    """Knot step indices ``tau`` with ``tau[0] = 0`` and ``tau[-1] = T - 1``."""

    tau: tuple
    n_u: int

    def __post_init__(self):
        tau = tuple(check_int(t, "tau") for t in self.tau)
        if len(tau) < 2:
            raise ValueError("a knot schedule needs at least two knots")
        if tau[0] != 0:
            raise ValueError("tau[0] must be 0")
        if any(b <= a for a, b in zip(tau, tau[1:])):
            raise ValueError(f"tau must be strictly increasing, got {tau}")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "n_u", check_int(self.n_u, "n_u", minimum=1))

    @property
    def K(self):
        return len(self.tau)

    @property
    def dim(self):
        return self.K * self.n_u

    @property
    def T(self):
        """Number of control steps covered by the schedule."""
        return self.tau[-1] + 1

    def prefix(self, k):
        """Schedule of knots 0..k."""
        return KnotSchedule(self.tau[: k + 1], self.n_u)

    def __eq__(self, other):
        return isinstance(other, KnotSchedule) and self.tau == other.tau and self.n_u == other.n_u

    def __hash__(self):
        return hash((self.tau, self.n_u))


@dataclass(frozen=True, eq=False)
class ControlKnots:
    """Flat knot vector, knot-major: knot j occupies ``[j*n_u, (j+1)*n_u)``."""

    schedule: KnotSchedule
    values: np.ndarray

    def __post_init__(self):
        vals = as_float_array(self.values, "knot values", ndim=1, shape=(self.schedule.dim,))
        object.__setattr__(self, "values", vals)

    def as_matrix(self):
        return self.values.reshape(self.schedule.K, self.schedule.n_u)


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Full-covariance Gaussian over flat knot vectors."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_float_array(self.mean, "mean", ndim=1)
        d = mean.shape[0]
        cov = as_float_array(self.cov, "cov", ndim=2, shape=(d, d))
        if d == 0:
            raise ValueError("distribution must have at least one coordinate")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
            raise ValueError("cov is not symmetric")
        lam_min = np.linalg.eigvalsh(cov)[0]
        if lam_min < -PSD_TOL:
            raise ValueError(f"cov is not positive semidefinite (eigenvalue {lam_min:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, mean, sigma0):
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean, sigma0 ** 2 * np.eye(mean.shape[0]))

    @classmethod
    def _trusted(cls, mean, cov):
        # Skips the eigenvalue check for arrays produced by the update rules.
        obj = object.__new__(cls)
        mean = np.array(mean, dtype=np.float64)
        cov = np.array(cov, dtype=np.float64)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(obj, "mean", mean)
        object.__setattr__(obj, "cov", cov)
        return obj

    @property
    def dim(self):
        return self.mean.shape[0]


def kappa_index(k, n_u):
    """Index of the last flat coordinate belonging to knot ``k``: (k+1)*n_u - 1."""
    k = check_int(k, "k", minimum=0)
    n_u = check_int(n_u, "n_u", minimum=1)
    return (k + 1) * n_u - 1


def truncate_distribution(d, kappa):
    """Marginal of ``d`` over coordinates 0..kappa."""
    kappa = check_int(kappa, "kappa")
    if not 0 <= kappa < d.dim:
        raise ValueError(f"kappa={kappa} out of range for a {d.dim}-dimensional distribution")
    m = kappa + 1
    return SamplingDistribution._trusted(d.mean[:m], d.cov[:m, :m])


def embed_distribution(full, block):
    """Write ``block`` over the leading coordinates of ``full``.

    The inactive block and the cross-covariance keep the values of ``full``.
    """
    m = block.dim
    if m > full.dim:
        raise ValueError("block is larger than the distribution it is embedded into")
    mean = full.mean.copy()
    cov = full.cov.copy()
    mean[:m] = block.mean
    cov[:m, :m] = block.cov
    return SamplingDistribution._trusted(mean, cov)


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    k: int
    tau_k: int
    best_cost: float
    max_variance: float
    n_sim: int
    snapshot: Optional[Trajectory] = None
    flags: tuple = ()


class RunRecord:
    """Append-only per-iteration log of one optimizer run.

    Enforces non-decreasing cumulative simulation steps and active knot count.
    """

    def __init__(self, algorithm=""):
        self.algorithm = algorithm
        self.entries = []
        self.flags = []
        self.final_knots = None
        self.final_trajectory = None
        self.final_cost = float("inf")

    def append(self, entry):
        if self.entries:
            last = self.entries[-1]
            if entry.n_sim < last.n_sim:
                raise ValueError("cumulative n_sim must be non-decreasing")
            if entry.k < last.k:
                raise ValueError("active knot index must be non-decreasing")
        self.entries.append(entry)

    def flag(self, message):
        self.flags.append(message)

    @property
    def n_sim(self):
        return self.entries[-1].n_sim if self.entries else 0

    @property
    def n_iterations(self):
        return len(self.entries)

    def column(self, name):
        return np.array([getattr(e, name) for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)
