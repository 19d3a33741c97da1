"""Built-in tasks: a model, an initial state, a (possibly corrupted) kinematic
reference and a cost, bundled so a solver can run without any input files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from ..costs import CostSpec, CostTerm
from ..dynamics import CartPole, DoubleIntegrator, Pendulum, PlanarPusher, rollout
from ..exceptions import ConfigError
from ..metrics import POS_THRESHOLD, ROT_THRESHOLD_DEG
from ..optimizers import Problem
from ..rotations import yaw_to_quat
from ..types import PoseSeries, ReferenceTrajectory, State, TimeGrid


@dataclass
class TaskSpec:
    name: str
    model: object
    reference: ReferenceTrajectory
    cost: CostSpec
    x0: State
    pos_threshold: float = POS_THRESHOLD
    rot_threshold: float = ROT_THRESHOLD_DEG
    t0: Optional[float] = None
    options: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.reference.grid

    @property
    def actuated(self):
        return self.model.actuated

    def problem(self):
        return Problem(self.model, self.x0, self.reference, self.cost, self.grid)


def min_jerk(t, t_start, t_end):
    """Position, velocity and acceleration of the unit minimum-jerk profile."""
    span = t_end - t_start
    s = np.clip((np.asarray(t, dtype=np.float64) - t_start) / span, 0.0, 1.0)
    inside = (s > 0) & (s < 1)
    pos = 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5
    vel = np.where(inside, (30 * s ** 2 - 60 * s ** 3 + 30 * s ** 4) / span, 0.0)
    acc = np.where(inside, (60 * s - 180 * s ** 2 + 120 * s ** 3) / span ** 2, 0.0)
    return pos, vel, acc


def pusher_cost(collision_weight=2.0):
    """Pusher cost with the humanoid refinement weights. The built-in tasks pass
    ``collision_weight=0`` since finger-object contact is the intended one."""
    terms = [
        CostTerm("object-position", 40.0),
        CostTerm("object-orientation", 4.0),
        CostTerm("object-linear-velocity", 0.2),
        CostTerm("frame-position", 5.0, channel="finger"),
        CostTerm("joint-position", 0.25, indices=(0, 1)),
        CostTerm("joint-velocity", 0.01, indices=(0, 1)),
    ]
    if collision_weight:
        terms.append(CostTerm("collision-count", collision_weight, channel="robot-object"))
    return CostSpec(tuple(terms))


def _pusher_reference(model, grid, box_x, box_y, box_vx, box_vy, box_yaw, finger_x, finger_y):
    n = grid.T + 1
    zero = np.zeros(n)
    yaw_cols = [zero] if model.yaw else []
    q = np.column_stack([finger_x, finger_y, *yaw_cols, box_x, box_y, box_yaw])
    v = np.column_stack([np.gradient(finger_x, grid.dt), np.gradient(finger_y, grid.dt),
                         *yaw_cols, box_vx, box_vy, np.gradient(box_yaw, grid.dt)])
    obj = PoseSeries(
        np.column_stack([box_x, box_y, zero]),
        yaw_to_quat(box_yaw),
        np.column_stack([box_vx, box_vy, zero]),
    )
    finger = PoseSeries(np.column_stack([finger_x, finger_y, zero]))
    return ReferenceTrajectory(grid, q, v, {"finger": finger}, obj)


def _corrupt_finger(finger_x, times, contact_offset, discontinuity, penetration):
    out = finger_x - contact_offset + penetration
    if discontinuity:
        at, jump = discontinuity
        out = out + np.where(times >= at, jump, 0.0)
    return out


def _check_options(name, options, allowed):
    unknown = sorted(set(options) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown option(s) for task {name!r}: {', '.join(unknown)}")


PUSH_DEFAULTS = {
    "distance": 0.3,
    "duration": 2.0,
    "push_start": 0.25,
    "push_end": 1.75,
    "contact_offset": 0.03,
    "penetration": 0.0,
    "discontinuity": None,
    "lateral_offset": 0.0,
    "turn": 0.0,
    "dt": 0.01,
    "reference_half_extent": 0.05,
    "collision_weight": 0.0,
    "pos_threshold": 0.03,
    "rot_threshold": 25.0,
}


CURVED_PUSH_DEFAULTS = {
    **PUSH_DEFAULTS,
    "distance": 0.8,
    "duration": 6.0,
    "push_end": 5.75,
    "turn": 3.0,
}


def pusher_push(model=None, *, _name="pusher-push-0.3m", _defaults=PUSH_DEFAULTS, **options):
    """Push the box ``distance`` meters along +x (or along an arc turning by
    ``turn`` radians); the finger reference trails the box by
    ``contact_offset`` beyond the touching distance, so tracking it literally
    never makes contact."""
    _check_options(_name, options, _defaults)
    o = {**_defaults, **options}
    model = PlanarPusher(**(model or {}))
    grid = TimeGrid(o["dt"], int(round(o["duration"] / o["dt"])))
    t = grid.times
    s, sd, _ = min_jerk(t, o["push_start"], o["push_end"])
    touch = o["reference_half_extent"] + model.finger_radius
    arc = o["distance"] * s
    if o["turn"]:
        radius = o["distance"] / o["turn"]
        heading = arc / radius
        box_x = radius * np.sin(heading)
        box_y = radius * (1.0 - np.cos(heading))
    else:
        heading = np.zeros_like(arc)
        box_x, box_y = arc, np.zeros_like(arc)
    box_vx = o["distance"] * sd * np.cos(heading)
    box_vy = o["distance"] * sd * np.sin(heading)
    back = touch + o["contact_offset"] - o["penetration"]
    finger_x = box_x - back * np.cos(heading)
    finger_y = box_y - back * np.sin(heading) + o["lateral_offset"]
    if o["discontinuity"]:
        at, jump = o["discontinuity"]
        finger_x = finger_x + np.where(t >= at, jump, 0.0)
    ref = _pusher_reference(model, grid, box_x, box_y, box_vx, box_vy, heading, finger_x, finger_y)
    x0 = State(ref.q[0], np.zeros(model.n_v))
    return TaskSpec(_name, model, ref, pusher_cost(o["collision_weight"]), x0,
                    o["pos_threshold"], o["rot_threshold"], options=o)


def pusher_curved_push(model=None, **options):
    """Long 0.8 m push along an arc turning by 3 rad, with the same trailing
    finger offset as the straight push."""
    return pusher_push(model, _name="pusher-curved-push", _defaults=CURVED_PUSH_DEFAULTS, **options)


KICK_DEFAULTS = {
    "distance": 0.6,
    "duration": 3.0,
    "ground_friction": 0.01,
    "reach_margin": 0.03,
    "standoff": 0.03,
    "lag": 0.03,
    "lag_end": 0.5,
    "contact_offset": 0.03,
    "penetration": 0.0,
    "discontinuity": None,
    "dt": 0.01,
    "collision_weight": 0.0,
    "pos_threshold": 0.03,
    "rot_threshold": 25.0,
    "t0": 1.0,
}


def _strike_demo(model, x0, T, distance):
    """Roll out a step finger target chosen so the struck box stops at ``distance``."""
    scale = model.control_scale[0]

    def run(target):
        u = np.zeros((T, model.n_u))
        u[:, 0] = target / scale
        u[:, 1] = x0.q[1] / scale
        return rollout(model, x0, u)

    def miss(target):
        return run(target).object.position[-1, 0] - distance

    lo, hi = x0.q[0], x0.q[model.n_u] + distance
    target = brentq(miss, lo, hi, xtol=1e-10)
    return run(target), target


def pusher_kick_coast(model=None, **options):
    """Strike the box at the start so that it slides ``distance`` on its own.

    The box reference is a simulated demonstration strike; the finger
    reference is the demonstration's finger shifted back by
    ``contact_offset``, and the box reference lags the demonstration by up
    to ``lag`` meters until ``lag_end``, as if the box started late. The finger target is capped ``reach_margin`` past the
    demonstration target, so the box leaves the workspace after the strike
    and its whole path is fixed by the first knots. Small errors in the strike
    barely show during the first half second but grow with the coast.
    """
    _check_options("pusher-kick-coast", options, KICK_DEFAULTS)
    o = {**KICK_DEFAULTS, **options}
    params = {"ground_friction": o["ground_friction"], **(model or {})}
    base = PlanarPusher(**params)
    grid = TimeGrid(o["dt"], int(round(o["duration"] / o["dt"])))
    touch = base.half_extent + base.finger_radius
    q0 = np.zeros(base.n_q)
    q0[0] = -touch - o["standoff"]
    x0 = State(q0, np.zeros(base.n_v))
    demo_model = PlanarPusher(**{**params, "dt": o["dt"]})
    demo, target = _strike_demo(demo_model, x0, grid.T, o["distance"])
    model = PlanarPusher(**{"control_high": (target + o["reach_margin"], np.inf), **params,
                            "dt": o["dt"]})
    finger_x = _corrupt_finger(demo.q[:, 0], grid.times, o["contact_offset"],
                               o["discontinuity"], o["penetration"])
    box = demo.object
    yaw = demo.q[:, base.n_u + 2]
    bump = o["lag"] * np.sin(np.pi * np.clip(grid.times / o["lag_end"], 0.0, 1.0)) ** 2
    box_x = box.position[:, 0] - bump
    box_vx = box.linear_velocity[:, 0] - np.gradient(bump, grid.dt)
    ref = _pusher_reference(model, grid, box_x, box.position[:, 1], box_vx,
                            box.linear_velocity[:, 1], yaw, finger_x, demo.q[:, 1])
    return TaskSpec("pusher-kick-coast", model, ref, pusher_cost(o["collision_weight"]), x0,
                    o["pos_threshold"], o["rot_threshold"], t0=o["t0"], options=o)


P2P_DEFAULTS = {"target": 1.0, "duration": 1.0, "dt": 0.01, "position_weight": 1.0,
                "velocity_weight": 0.01}


def double_integrator_p2p(model=None, **options):
    """Move a unit point mass from 0 to ``target`` along a minimum-jerk path."""
    _check_options("double-integrator-p2p", options, P2P_DEFAULTS)
    o = {**P2P_DEFAULTS, **options}
    model = DoubleIntegrator(**(model or {}))
    grid = TimeGrid(o["dt"], int(round(o["duration"] / o["dt"])))
    s, sd, _ = min_jerk(grid.times, 0.0, o["duration"])
    q = o["target"] * np.tile(s[:, None], (1, model.dim))
    v = o["target"] * np.tile(sd[:, None], (1, model.dim))
    ref = ReferenceTrajectory(grid, q, v)
    cost = CostSpec((CostTerm("joint-position", o["position_weight"]),
                     CostTerm("joint-velocity", o["velocity_weight"])))
    return TaskSpec("double-integrator-p2p", model, ref, cost,
                    State(np.zeros(model.dim), np.zeros(model.dim)), options=o)


SWING_DEFAULTS = {"duration": 2.0, "dt": 0.01}


def pendulum_swing_up(model=None, **options):
    """Swing the pendulum from hanging to upright, tracking the tip."""
    _check_options("pendulum-swing-up", options, SWING_DEFAULTS)
    o = {**SWING_DEFAULTS, **options}
    model = Pendulum(**(model or {}))
    grid = TimeGrid(o["dt"], int(round(o["duration"] / o["dt"])))
    s, sd, _ = min_jerk(grid.times, 0.0, 0.75 * o["duration"])
    th = np.pi * s
    om = np.pi * sd
    l = model.length
    zero = np.zeros_like(th)
    tip = PoseSeries(np.column_stack([l * np.sin(th), -l * np.cos(th), zero]), yaw_to_quat(th))
    ref = ReferenceTrajectory(grid, th[:, None], om[:, None], {"tip": tip})
    cost = CostSpec((CostTerm("joint-position", 0.25), CostTerm("joint-velocity", 0.01),
                     CostTerm("frame-position", 5.0, channel="tip")))
    return TaskSpec("pendulum-swing-up", model, ref, cost, State(np.zeros(1), np.zeros(1)),
                    options=o)


SHUTTLE_DEFAULTS = {"distance": 0.5, "duration": 2.0, "dt": 0.01}


def cartpole_shuttle(model=None, **options):
    """Move the cart ``distance`` meters while keeping the pole upright."""
    _check_options("cartpole-shuttle", options, SHUTTLE_DEFAULTS)
    o = {**SHUTTLE_DEFAULTS, **options}
    model = CartPole(**(model or {}))
    grid = TimeGrid(o["dt"], int(round(o["duration"] / o["dt"])))
    s, sd, _ = min_jerk(grid.times, 0.0, 0.75 * o["duration"])
    x = o["distance"] * s
    zero = np.zeros_like(x)
    ref = ReferenceTrajectory(grid, np.column_stack([x, zero]),
                              np.column_stack([o["distance"] * sd, zero]))
    cost = CostSpec((CostTerm("joint-position", 5.0), CostTerm("joint-velocity", 0.01)))
    return TaskSpec("cartpole-shuttle", model, ref, cost, State(np.zeros(2), np.zeros(2)),
                    options=o)


BUILTIN_TASKS = {
    "pusher-push-0.3m": pusher_push,
    "pusher-curved-push": pusher_curved_push,
    "pusher-kick-coast": pusher_kick_coast,
    "double-integrator-p2p": double_integrator_p2p,
    "pendulum-swing-up": pendulum_swing_up,
    "cartpole-shuttle": cartpole_shuttle,
}


def build_task(name, model=None, **options):
    try:
        builder = BUILTIN_TASKS[name]
    except KeyError:
        raise ConfigError(
            f"unknown task {name!r}; built-in tasks are {', '.join(sorted(BUILTIN_TASKS))}",
            key_path="task.name",
        ) from None
    try:
        return builder(model=model, **options)
    except TypeError as exc:
        raise ConfigError(str(exc), key_path="model") from None
