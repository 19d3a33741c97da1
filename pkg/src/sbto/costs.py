"""Trajectory cost: weighted sum of tracking and regularization terms over
a full or partial rollout, summed over time steps 0..horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .rotations import quat_conj, quat_log_diff, quat_mul, quat_to_rotvec
from .types import DivergedRollout, Trajectory

__all__ = [
    "TERM_KINDS",
    "CostSpec",
    "CostTerm",
    "evaluate_cost",
    "evaluate_costs",
    "quat_log_diff",
]

TERM_KINDS = (
    "joint-position",
    "joint-velocity",
    "frame-position",
    "frame-orientation",
    "frame-linear-velocity",
    "frame-angular-velocity",
    "object-position",
    "object-orientation",
    "object-linear-velocity",
    "collision-count",
)

_FRAME_KINDS = {
    "frame-position": 0,
    "frame-orientation": 1,
    "frame-linear-velocity": 2,
    "frame-angular-velocity": 3,
}
_OBJECT_KINDS = {"object-position": 0, "object-orientation": 1, "object-linear-velocity": 2}


@dataclass(frozen=True)
class CostTerm:
    """One weighted term.

    ``channel`` names the frame for ``frame-*`` kinds and the contact class for
    ``collision-count``. ``indices`` selects coordinates for the joint kinds
    (all coordinates when None).
    """

    kind: str
    weight: float
    channel: Optional[str] = None
    indices: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ConfigError(f"unknown cost term kind {self.kind!r}")
        weight = float(self.weight)
        if not (weight >= 0 and math.isfinite(weight)):
            raise ConfigError(f"cost weight must be a finite number >= 0, got {self.weight}")
        object.__setattr__(self, "weight", weight)
        if self.kind.startswith("frame-") or self.kind == "collision-count":
            if not self.channel:
                raise ConfigError(f"{self.kind} term needs a channel")
        if self.indices is not None:
            object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def label(self):
        return f"{self.kind}[{self.channel}]" if self.channel else self.kind


@dataclass(frozen=True)
class CostSpec:
    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ConfigError("a cost spec needs at least one term")
        object.__setattr__(self, "terms", terms)

    def scaled(self, factor):
        return CostSpec(tuple(CostTerm(t.kind, t.weight * factor, t.channel, t.indices) for t in self.terms))

    def validate(self, ref, model=None):
        """Raise :class:`ConfigError` if a term's reference channel is missing."""
        n_q = ref.q.shape[1]
        for term in self.terms:
            if term.kind.startswith("joint-") and term.indices is not None:
                n = n_q if term.kind == "joint-position" else (ref.v.shape[1] if ref.v is not None else n_q)
                if any(not 0 <= i < n for i in term.indices):
                    raise ConfigError(f"{term.label}: indices {term.indices} out of range")
            if term.kind.startswith("frame-"):
                if term.channel not in ref.frames:
                    raise ConfigError(f"{term.label}: reference has no frame {term.channel!r}")
                if term.kind == "frame-orientation" and ref.frames[term.channel].orientation is None:
                    raise ConfigError(f"{term.label}: reference frame has no orientations")
                if term.kind == "frame-angular-velocity" and ref.frames[term.channel].orientation is None \
                        and ref.frames[term.channel].angular_velocity is None:
                    raise ConfigError(f"{term.label}: reference frame has no orientations")
                if model is not None and term.channel not in model.frame_names:
                    raise ConfigError(f"{term.label}: model has no frame {term.channel!r}")
            if term.kind.startswith("object-"):
                if ref.object is None:
                    raise ConfigError(f"{term.label}: reference has no object channel")
                if model is not None and not model.has_object:
                    raise ConfigError(f"{term.label}: model has no object")
            if term.kind == "collision-count" and model is not None:
                if term.channel not in model.contact_classes:
                    raise ConfigError(f"{term.label}: model has no contact class {term.channel!r}")
        return self

    def bind(self, ref, model=None):
        self.validate(ref, model)
        return BoundCost(self, ref)


def _angular_velocity_from_quats(quat, dt):
    """World-frame angular velocity by central differences of orientations."""
    n = quat.shape[0]
    out = np.zeros((n, 3))
    if n < 2:
        return out
    idx = np.arange(n)
    hi = np.minimum(idx + 1, n - 1)
    lo = np.maximum(idx - 1, 0)
    span = (hi - lo) * dt
    rel = quat_mul(quat[hi], quat_conj(quat[lo]))
    return quat_to_rotvec(rel) / span[:, None]


class BoundCost:
    """A cost spec with its reference channels prepared for repeated evaluation."""

    def __init__(self, spec, ref):
        self.spec = spec
        self.ref = ref
        dt = ref.grid.dt
        self._targets = []
        for term in spec.terms:
            kind = term.kind
            if kind == "joint-position":
                target = ref.q
            elif kind == "joint-velocity":
                target = ref.velocities()
            elif kind in _FRAME_KINDS:
                series = ref.frames[term.channel]
                target = self._series_target(series, _FRAME_KINDS[kind], dt)
            elif kind in _OBJECT_KINDS:
                target = self._series_target(ref.object, _OBJECT_KINDS[kind], dt)
            else:
                target = None
            if target is not None and term.indices is not None:
                target = target[:, list(term.indices)]
            self._targets.append(target)

    @staticmethod
    def _series_target(series, slot, dt):
        if slot == 0:
            return series.position
        if slot == 1:
            return series.orientation
        if slot == 2:
            if series.linear_velocity is not None:
                return series.linear_velocity
            return np.gradient(series.position, dt, axis=0)
        if series.angular_velocity is not None:
            return series.angular_velocity
        return _angular_velocity_from_quats(series.orientation, dt)

    def __call__(self, rollouts, horizon=None, offset=0):
        """Costs of a :class:`RolloutBatch` (array) or single trajectory (float)."""
        if isinstance(rollouts, DivergedRollout):
            return math.inf
        single = isinstance(rollouts, Trajectory)
        view = _View(rollouts)
        h = view.horizon if horizon is None else int(horizon)
        if h > view.horizon:
            raise ValueError(f"horizon {h} exceeds the rollout length {view.horizon}")
        if offset + h > self.ref.grid.T:
            raise ValueError(f"horizon {h} at offset {offset} exceeds the reference length")
        window = slice(offset, offset + h + 1)
        total = np.zeros(view.n)
        for term, target in zip(self.spec.terms, self._targets):
            if term.weight == 0.0:
                continue
            total += term.weight * self._term(view, term, target, h, window)
        total[view.diverged] = np.inf
        return float(total[0]) if single else total

    def _term(self, view, term, target, h, window):
        kind = term.kind
        if kind == "collision-count":
            counts = view.contacts.get(term.channel)
            if counts is None:
                return np.zeros(view.n)
            return counts[:, : h + 1].sum(axis=1).astype(np.float64)
        if kind == "joint-position":
            value = view.q[:, : h + 1]
        elif kind == "joint-velocity":
            value = view.v[:, : h + 1]
        elif kind in _FRAME_KINDS:
            value = view.frames[term.channel][_FRAME_KINDS[kind]][:, : h + 1]
        else:
            value = view.object[_OBJECT_KINDS[kind]][:, : h + 1]
        if term.indices is not None:
            value = value[..., list(term.indices)]
        ref = target[window]
        if kind.endswith("orientation"):
            err = quat_to_rotvec(quat_mul(quat_conj(value), ref[None]))
        else:
            err = value - ref[None]
        return np.sum(err * err, axis=(1, 2))


class _View:
    """Uniform (N, steps, dim) access to a rollout batch or a single trajectory."""

    def __init__(self, r):
        if isinstance(r, Trajectory):
            self.n = 1
            self.q = r.q[None]
            self.v = r.v[None]
            self.horizon = r.horizon
            self.diverged = np.zeros(1, dtype=bool)
            self._frames = {
                k: (s.position[None], _opt(s.orientation), _opt(s.linear_velocity), _opt(s.angular_velocity))
                for k, s in r.frames.items()
            }
            self.object = None if r.object is None else (
                r.object.position[None], _opt(r.object.orientation), _opt(r.object.linear_velocity))
            self.contacts = {k: c[None] for k, c in r.contacts.items()}
        else:
            self.n = len(r)
            self.q = r.q
            self.v = r.v
            self.horizon = r.horizon
            self.diverged = r.diverged
            self._frames = r.frames
            self.object = r.object
            self.contacts = r.contacts

    @property
    def frames(self):
        return self._frames


def _opt(a):
    return None if a is None else a[None]


def evaluate_cost(traj, ref, spec, horizon=None, model=None, offset=0):
    """Cost of one trajectory against ``ref``; +inf for a diverged rollout."""
    if isinstance(traj, DivergedRollout):
        return math.inf
    return spec.bind(ref, model)(traj, horizon, offset)


def evaluate_costs(batch, ref, spec, horizon=None, offset=0):
    """Vector of costs for a :class:`~sbto.dynamics.RolloutBatch`."""
    return spec.bind(ref, batch.model)(batch, horizon, offset)
