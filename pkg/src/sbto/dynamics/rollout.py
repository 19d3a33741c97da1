"""Single-shooting rollouts, one at a time or as a batch."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..types import DivergedRollout, PoseSeries, State, Trajectory
from .base import DIVERGENCE_BOUND

WORKERS_ENV = "SBTO_WORKERS"


class RolloutBatch:
    """Stacked results of ``N`` rollouts of equal horizon.

    Arrays have a leading sample axis: ``q`` (N, h+1, n_q), ``u`` (N, h, n_u).
    ``diverged_at[j]`` is -1 for finite rollouts, otherwise the first step
    that left the magnitude bound (states after it are frozen copies).
    """

    def __init__(self, model, q, v, u, diverged_at):
        self.model = model
        self.dt = model.dt
        self.q = q
        self.v = v
        self.u = u
        self.diverged_at = diverged_at
        self._frames = None
        self._object = None
        self._contacts = None

    def __len__(self):
        return self.q.shape[0]

    @property
    def horizon(self):
        return self.u.shape[1]

    @property
    def n_steps(self):
        """Simulation steps spent on this batch (N * horizon)."""
        return len(self) * self.horizon

    @property
    def diverged(self):
        return self.diverged_at >= 0

    @property
    def frames(self):
        if self._frames is None:
            self._frames = self.model.frame_series(self.q, self.v)
        return self._frames

    @property
    def object(self):
        if self._object is None and self.model.has_object:
            self._object = self.model.object_series(self.q, self.v)
        return self._object

    @property
    def contacts(self):
        """Dict contact class -> (N, h+1) event counts."""
        if self._contacts is None:
            flags = self.model.contact_flags(self.q)
            counts = {}
            for p, (_, cls) in enumerate(self.model.contact_pairs):
                counts[cls] = counts.get(cls, 0) + flags[..., p].astype(np.int64)
            self._contacts = counts
        return self._contacts

    def trajectory(self, j):
        """Trajectory of sample ``j`` or a :class:`DivergedRollout` marker."""
        if self.diverged_at[j] >= 0:
            return DivergedRollout(int(self.diverged_at[j]), self.horizon)
        frames = {
            name: PoseSeries(pos[j], quat[j], lin[j], ang[j])
            for name, (pos, quat, lin, ang) in self.frames.items()
        }
        obj = None
        if self.object is not None:
            pos, quat, lin = self.object
            obj = PoseSeries(pos[j], quat[j], lin[j])
        contacts = {cls: c[j] for cls, c in self.contacts.items()}
        return Trajectory(self.dt, self.q[j], self.v[j], self.u[j], frames, obj, contacts)


def _resolve_workers(n_workers):
    if n_workers is None:
        n_workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(n_workers))


def rollout_batch(model, x0, control_batch, horizon=None, n_workers=None,
                  bound=DIVERGENCE_BOUND):
    """Roll out ``N`` control sequences from the same initial state.

    Parameters
    ----------
    model : DynamicsModel
    x0 : State
    control_batch : array_like, shape (N, L, n_u)
        Control sequences; only the first ``horizon`` steps are applied.
    horizon : int, optional
        Number of steps to simulate (defaults to ``L``).
    n_workers : int, optional
        Threads used to split the batch. Results do not depend on it.
        Defaults to the ``SBTO_WORKERS`` environment variable, else 1.

    Returns
    -------
    RolloutBatch
    """
    model.check_state(x0)
    U = np.asarray(control_batch, dtype=np.float64)
    if U.ndim != 3 or U.shape[2] != model.n_u:
        raise ValueError(
            f"control batch must have shape (N, L, {model.n_u}), got {U.shape}"
        )
    n, length = U.shape[0], U.shape[1]
    horizon = length if horizon is None else int(horizon)
    if not 1 <= horizon <= length:
        raise ValueError(f"horizon {horizon} must be in [1, {length}]")
    if not np.all(np.isfinite(U[:, :horizon])):
        raise ValueError("controls contain non-finite values")
    U = np.ascontiguousarray(U[:, :horizon])
    Q = np.empty((n, horizon + 1, model.n_q))
    V = np.empty((n, horizon + 1, model.n_v))
    div = np.full(n, -1, dtype=np.int64)
    q0 = np.ascontiguousarray(x0.q)
    v0 = np.ascontiguousarray(x0.v)

    workers = min(_resolve_workers(n_workers), max(n, 1))
    if workers == 1:
        model._run_kernel(q0, v0, U, horizon, bound, Q, V, div)
    else:
        edges = np.linspace(0, n, workers + 1).astype(int)

        def run(a, b):
            model._run_kernel(q0, v0, U[a:b], horizon, bound, Q[a:b], V[a:b], div[a:b])

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, edges[:-1], edges[1:]))
    return RolloutBatch(model, Q, V, U, div)


def rollout(model, x0, controls, horizon=None, bound=DIVERGENCE_BOUND):
    """Single-shooting rollout of one control sequence.

    Returns a :class:`Trajectory` of ``horizon`` steps, or a
    :class:`DivergedRollout` carrying the step at which the state left ``bound``.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim == 1 and model.n_u == 1:
        controls = controls[:, None]
    if controls.ndim != 2:
        raise ValueError(f"controls must have shape (L, {model.n_u}), got {controls.shape}")
    batch = rollout_batch(model, x0, controls[None], horizon, n_workers=1, bound=bound)
    return batch.trajectory(0)


def initial_state(model, q, v=None):
    q = np.asarray(q, dtype=np.float64)
    v = np.zeros(model.n_v) if v is None else v
    return State(q, v)
