"""Black-box dynamics interface and PD-target actuation.

Models integrate with semi-implicit Euler inside numba kernels. A kernel
handles one sample at a time with scalar code, so a sample's result does not
depend on how many other samples share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..types import State
from ..validation import as_float_array

DIVERGENCE_BOUND = 1e6

# contact detection
CONTACT_ENTER_DEPTH = 1e-4
CONTACT_HYSTERESIS = 2e-5

CONTACT_CLASSES = ("robot-object", "self", "robot-ground")


@dataclass(frozen=True, eq=False)
class PdGains:
    """Per-actuator proportional/derivative gains and symmetric torque bound."""

    kp: np.ndarray
    kd: np.ndarray
    torque_limit: np.ndarray

    def __post_init__(self):
        kp = as_float_array(np.atleast_1d(self.kp), "kp", ndim=1)
        n = kp.shape[0]
        kd = as_float_array(np.broadcast_to(self.kd, (n,)), "kd", ndim=1)
        lim = as_float_array(np.broadcast_to(self.torque_limit, (n,)), "torque_limit", ndim=1)
        if np.any(kp <= 0):
            raise ValueError("kp must be > 0")
        if np.any(kd < 0):
            raise ValueError("kd must be >= 0")
        if np.any(lim <= 0):
            raise ValueError("torque_limit must be > 0")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)
        object.__setattr__(self, "torque_limit", lim)

    @classmethod
    def uniform(cls, n, kp, kd, torque_limit):
        return cls(np.full(n, float(kp)), np.full(n, float(kd)), np.full(n, float(torque_limit)))

    def __len__(self):
        return self.kp.shape[0]


def pd_torque(gains, target, q_act, v_act):
    """clip(kp * (target - q_act) - kd * v_act, -limit, limit)."""
    tau = gains.kp * (np.asarray(target) - np.asarray(q_act)) - gains.kd * np.asarray(v_act)
    return np.clip(tau, -gains.torque_limit, gains.torque_limit)


class DynamicsModel:
    """Base class for deterministic, immutable dynamics models.

    Subclasses set the dimensions, ``actuated`` (indices of the actuated
    coordinates of ``q``, one per control), ``frame_names`` and
    ``contact_pairs``, and implement ``_kernel_params`` plus the numpy-side
    geometry queries. ``step`` advances one control step of length ``dt``;
    internally the model may take ``substeps`` smaller integration steps.

    Controls are PD targets expressed in units of ``control_scale`` (the
    physical target is ``control_scale * u``), optionally clipped to
    ``[control_low, control_high]`` in physical units.
    """

    n_q = n_v = n_u = 0
    frame_names = ()
    contact_pairs = ()
    has_object = False
    name = "model"

    def __init__(self, gains, dt=0.01, substeps=1, control_scale=1.0,
                 control_low=-np.inf, control_high=np.inf, actuation="pd"):
        if len(gains) != self.n_u:
            raise ValueError(f"{type(self).__name__} needs {self.n_u} gains, got {len(gains)}")
        if actuation not in ("pd", "torque"):
            raise ValueError(f"actuation must be 'pd' or 'torque', got {actuation!r}")
        self.gains = gains
        self.dt = float(dt)
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        self.substeps = int(substeps)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.actuation = actuation
        self.control_scale = np.broadcast_to(np.asarray(control_scale, dtype=np.float64), (self.n_u,)).copy()
        if np.any(self.control_scale <= 0):
            raise ValueError("control_scale must be > 0")
        self.control_low = np.broadcast_to(np.asarray(control_low, dtype=np.float64), (self.n_u,)).copy()
        self.control_high = np.broadcast_to(np.asarray(control_high, dtype=np.float64), (self.n_u,)).copy()
        if np.any(self.control_low > self.control_high):
            raise ValueError("control_low must not exceed control_high")
        for arr in (self.control_scale, self.control_low, self.control_high):
            arr.setflags(write=False)

    # -- kernel plumbing -------------------------------------------------
    def _actuator_table(self):
        """(6, n_u) table: kp, kd, limit, scale, low, high."""
        return np.ascontiguousarray(np.stack([
            self.gains.kp, self.gains.kd, self.gains.torque_limit,
            self.control_scale, self.control_low, self.control_high,
        ]))

    def _kernel_params(self):
        raise NotImplementedError

    def _run_kernel(self, q0, v0, controls, horizon, bound, Q, V, div):
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    @property
    def actuated(self):
        raise NotImplementedError

    @property
    def integration_dt(self):
        return self.dt / self.substeps

    @property
    def contact_classes(self):
        return tuple(sorted({cls for _, cls in self.contact_pairs}))

    def check_state(self, state):
        if state.q.shape != (self.n_q,) or state.v.shape != (self.n_v,):
            raise ValueError(
                f"state dimensions ({state.q.shape[0]}, {state.v.shape[0]}) do not match "
                f"model ({self.n_q}, {self.n_v})"
            )

    def step(self, state, control):
        """Advance ``state`` by one control step with PD target ``control``.

        Raises ``FloatingPointError`` if the result leaves the divergence bound.
        """
        self.check_state(state)
        u = np.asarray(control, dtype=np.float64).reshape(1, 1, self.n_u)
        Q = np.empty((1, 2, self.n_q))
        V = np.empty((1, 2, self.n_v))
        div = np.full(1, -1, dtype=np.int64)
        self._run_kernel(state.q, state.v, u, 1, DIVERGENCE_BOUND, Q, V, div)
        if div[0] >= 0:
            raise FloatingPointError("step diverged")
        return State(Q[0, 1], V[0, 1])

    def physical_targets(self, controls):
        u = np.asarray(controls, dtype=np.float64) * self.control_scale
        return np.clip(u, self.control_low, self.control_high)

    def frame_series(self, q, v):
        """Dict name -> (position, quaternion, linear velocity, angular velocity) arrays."""
        return {}

    def object_series(self, q, v):
        """(position, quaternion, linear velocity) arrays, or None without an object."""
        return None

    def frame_pose(self, state, name):
        """Position and (w, x, y, z) orientation of a named frame."""
        frames = self.frame_series(state.q[None], state.v[None])
        if name not in frames:
            raise KeyError(f"unknown frame {name!r}; model has {self.frame_names}")
        pos, quat, _, _ = frames[name]
        return pos[0], quat[0]

    def object_pose(self, state):
        series = self.object_series(state.q[None], state.v[None])
        if series is None:
            raise ValueError(f"{type(self).__name__} has no object")
        pos, quat, lin = series
        return pos[0], quat[0], lin[0]

    def penetration(self, q):
        """Penetration depth per contact pair, shape ``q.shape[:-1] + (n_pairs,)``."""
        q = np.asarray(q)
        return np.zeros(q.shape[:-1] + (len(self.contact_pairs),))

    def contact_events(self, state, previous=()):
        """Active contact pairs at ``state``.

        ``previous`` lists pair names active at the preceding step; those stay
        active until their depth falls below the hysteresis band.
        """
        depth = self.penetration(state.q[None])[0]
        previous = set(previous)
        events = []
        for (pair, cls), d in zip(self.contact_pairs, depth):
            threshold = CONTACT_ENTER_DEPTH - (CONTACT_HYSTERESIS if pair in previous else 0.0)
            if d > threshold:
                events.append({"pair": pair, "class": cls, "depth": float(d)})
        return events

    def contact_flags(self, q):
        """Hysteresis-filtered contact flags over time for stacked trajectories.

        ``q`` has shape (..., n_steps, n_q); returns bool (..., n_steps, n_pairs).
        """
        depth = self.penetration(q)
        flags = np.zeros(depth.shape, dtype=bool)
        if depth.shape[-1] == 0:
            return flags
        flags[..., 0, :] = depth[..., 0, :] > CONTACT_ENTER_DEPTH
        low = CONTACT_ENTER_DEPTH - CONTACT_HYSTERESIS
        for t in range(1, depth.shape[-2]):
            thresh = np.where(flags[..., t - 1, :], low, CONTACT_ENTER_DEPTH)
            flags[..., t, :] = depth[..., t, :] > thresh
        return flags

    def params(self):
        """Plain dict of the constructor parameters (for reports and configs)."""
        return {}
