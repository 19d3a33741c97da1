"""Built-in desk-scale models: double integrator, pendulum, cart-pole, planar pusher."""

from __future__ import annotations

import numpy as np

from ..rotations import yaw_to_quat
from . import _kernels
from .base import DynamicsModel, PdGains

GRAVITY = 9.81


def _pad3(*cols):
    return np.stack(cols, axis=-1)


def _identity_quat(shape):
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


class DoubleIntegrator(DynamicsModel):
    """Point mass in ``dim`` independent axes (``dim`` <= 3).

    With ``actuation="torque"`` the control is the force itself (clipped to
    the torque limit); otherwise it is a PD position target.
    """

    name = "double-integrator"

    def __init__(self, dim=1, mass=1.0, gains=None, dt=0.01, substeps=1,
                 actuation="pd", control_scale=1.0, control_low=-np.inf, control_high=np.inf):
        if not 1 <= int(dim) <= 3:
            raise ValueError("dim must be 1, 2 or 3")
        self.dim = int(dim)
        self.n_q = self.n_v = self.n_u = self.dim
        self.mass = float(mass)
        if self.mass <= 0:
            raise ValueError("mass must be > 0")
        if gains is None:
            gains = PdGains.uniform(self.dim, 50.0, 10.0, 100.0)
        super().__init__(gains, dt, substeps, control_scale, control_low, control_high, actuation)
        self.frame_names = ("body",)

    @property
    def actuated(self):
        return tuple(range(self.dim))

    def _kernel_params(self):
        return np.array([self.mass, self.integration_dt, self.substeps,
                         1.0 if self.actuation == "torque" else 0.0])

    def _run_kernel(self, q0, v0, U, horizon, bound, Q, V, div):
        _kernels.double_integrator_rollout(
            self._kernel_params(), self._actuator_table(), q0, v0, U, horizon, bound, Q, V, div)

    def frame_series(self, q, v):
        zeros = np.zeros(q.shape[:-1] + (3 - self.dim,))
        pos = np.concatenate([q, zeros], axis=-1)
        lin = np.concatenate([v, zeros], axis=-1)
        return {"body": (pos, _identity_quat(q.shape[:-1]), lin, np.zeros_like(lin))}

    def params(self):
        return {"dim": self.dim, "mass": self.mass, "actuation": self.actuation}


class Pendulum(DynamicsModel):
    """Single pendulum; angle 0 hangs straight down, pi is upright."""

    name = "pendulum"
    n_q = n_v = n_u = 1
    frame_names = ("tip",)

    def __init__(self, mass=1.0, length=1.0, gravity=GRAVITY, damping=0.0, gains=None,
                 dt=0.01, substeps=4, actuation="pd", control_scale=1.0,
                 control_low=-np.inf, control_high=np.inf):
        self.mass = float(mass)
        self.length = float(length)
        self.gravity = float(gravity)
        self.damping = float(damping)
        if self.mass <= 0 or self.length <= 0:
            raise ValueError("mass and length must be > 0")
        if gains is None:
            gains = PdGains.uniform(1, 40.0, 4.0, 20.0)
        super().__init__(gains, dt, substeps, control_scale, control_low, control_high, actuation)

    @property
    def actuated(self):
        return (0,)

    def _kernel_params(self):
        return np.array([self.mass, self.length, self.gravity, self.damping,
                         self.integration_dt, self.substeps,
                         1.0 if self.actuation == "torque" else 0.0])

    def _run_kernel(self, q0, v0, U, horizon, bound, Q, V, div):
        _kernels.pendulum_rollout(
            self._kernel_params(), self._actuator_table(), q0, v0, U, horizon, bound, Q, V, div)

    def energy(self, q, v):
        """Total mechanical energy (zero at rest hanging down)."""
        th = np.asarray(q)[..., 0]
        om = np.asarray(v)[..., 0]
        ml2 = self.mass * self.length ** 2
        return 0.5 * ml2 * om ** 2 + self.mass * self.gravity * self.length * (1.0 - np.cos(th))

    def frame_series(self, q, v):
        th = q[..., 0]
        om = v[..., 0]
        l = self.length
        zero = np.zeros_like(th)
        pos = _pad3(l * np.sin(th), -l * np.cos(th), zero)
        lin = _pad3(l * np.cos(th) * om, l * np.sin(th) * om, zero)
        ang = _pad3(zero, zero, om)
        return {"tip": (pos, yaw_to_quat(th), lin, ang)}

    def params(self):
        return {"mass": self.mass, "length": self.length, "gravity": self.gravity,
                "damping": self.damping, "actuation": self.actuation}


class CartPole(DynamicsModel):
    """Cart on a rail with a passive pole; the cart position is PD-actuated.

    ``q = (x, theta)`` with theta measured from upright.
    """

    name = "cartpole"
    n_q = n_v = 2
    n_u = 1
    frame_names = ("cart", "tip")

    def __init__(self, cart_mass=1.0, pole_mass=0.1, pole_half_length=0.5, gravity=GRAVITY,
                 gains=None, dt=0.01, substeps=2, actuation="pd", control_scale=1.0,
                 control_low=-np.inf, control_high=np.inf):
        self.cart_mass = float(cart_mass)
        self.pole_mass = float(pole_mass)
        self.pole_half_length = float(pole_half_length)
        self.gravity = float(gravity)
        if min(self.cart_mass, self.pole_mass, self.pole_half_length) <= 0:
            raise ValueError("masses and pole length must be > 0")
        if gains is None:
            gains = PdGains.uniform(1, 60.0, 6.0, 30.0)
        super().__init__(gains, dt, substeps, control_scale, control_low, control_high, actuation)

    @property
    def actuated(self):
        return (0,)

    def _kernel_params(self):
        return np.array([self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity,
                         self.integration_dt, self.substeps,
                         1.0 if self.actuation == "torque" else 0.0])

    def _run_kernel(self, q0, v0, U, horizon, bound, Q, V, div):
        _kernels.cartpole_rollout(
            self._kernel_params(), self._actuator_table(), q0, v0, U, horizon, bound, Q, V, div)

    def frame_series(self, q, v):
        x, th = q[..., 0], q[..., 1]
        xd, thd = v[..., 0], v[..., 1]
        zero = np.zeros_like(x)
        L = 2.0 * self.pole_half_length
        cart = (_pad3(x, zero, zero), _identity_quat(x.shape), _pad3(xd, zero, zero),
                np.zeros(x.shape + (3,)))
        tip_pos = _pad3(x + L * np.sin(th), L * np.cos(th), zero)
        tip_lin = _pad3(xd + L * np.cos(th) * thd, -L * np.sin(th) * thd, zero)
        tip = (tip_pos, yaw_to_quat(-th), tip_lin, _pad3(zero, zero, -thd))
        return {"cart": cart, "tip": tip}

    def params(self):
        return {"cart_mass": self.cart_mass, "pole_mass": self.pole_mass,
                "pole_half_length": self.pole_half_length, "gravity": self.gravity}


class PlanarPusher(DynamicsModel):
    """PD-actuated finger disk pushing a box or disk that slides on a table.

    ``q = (finger x, finger y[, finger yaw], object x, object y, object theta)``.
    The optional yaw DoF only orients the finger frame; the finger geometry
    is a disk. Contact is a penalty spring-damper with regularized Coulomb
    friction; the table applies regularized Coulomb friction and torsional
    friction to the object.
    """

    name = "pusher"
    has_object = True
    frame_names = ("finger",)
    contact_pairs = (("finger-object", "robot-object"),)

    def __init__(self, object_mass=0.6, half_extent=0.05, shape="box", friction=0.5,
                 ground_friction=0.3, finger_mass=0.5, finger_radius=0.01, yaw=False,
                 finger_yaw_inertia=1e-3, contact_stiffness=1e4, contact_damping=1e2,
                 stiction_velocity=1e-3, gravity=GRAVITY, gains=None, dt=0.01, substeps=5,
                 control_scale=0.125, control_low=-np.inf, control_high=np.inf):
        if shape not in ("box", "disk"):
            raise ValueError(f"shape must be 'box' or 'disk', got {shape!r}")
        self.object_mass = float(object_mass)
        self.half_extent = float(half_extent)
        self.shape = shape
        self.friction = float(friction)
        self.ground_friction = float(ground_friction)
        self.finger_mass = float(finger_mass)
        self.finger_radius = float(finger_radius)
        self.yaw = bool(yaw)
        self.finger_yaw_inertia = float(finger_yaw_inertia)
        self.contact_stiffness = float(contact_stiffness)
        self.contact_damping = float(contact_damping)
        self.stiction_velocity = float(stiction_velocity)
        self.gravity = float(gravity)
        if self.object_mass <= 0 or self.half_extent <= 0 or self.finger_mass <= 0:
            raise ValueError("masses and object half-extent must be > 0")
        if self.friction < 0 or self.ground_friction < 0:
            raise ValueError("friction coefficients must be >= 0")
        if self.stiction_velocity <= 0 or self.finger_radius <= 0:
            raise ValueError("stiction velocity and finger radius must be > 0")
        self.n_u = 3 if self.yaw else 2
        self.n_q = self.n_v = self.n_u + 3
        if gains is None:
            kp = [200.0, 200.0] + ([0.5] if self.yaw else [])
            kd = [20.0, 20.0] + ([0.05] if self.yaw else [])
            lim = [50.0, 50.0] + ([1.0] if self.yaw else [])
            gains = PdGains(np.array(kp), np.array(kd), np.array(lim))
        super().__init__(gains, dt, substeps, control_scale, control_low, control_high, "pd")

    @property
    def actuated(self):
        return tuple(range(self.n_u))

    @property
    def object_offset(self):
        return self.n_u

    @property
    def object_inertia(self):
        h = self.half_extent
        if self.shape == "box":
            return 2.0 / 3.0 * self.object_mass * h * h
        return 0.5 * self.object_mass * h * h

    @property
    def torsion_radius(self):
        # mean distance of the support area from its center
        return (0.7652 if self.shape == "box" else 2.0 / 3.0) * self.half_extent

    def _kernel_params(self):
        return np.array([
            self.integration_dt, self.substeps, self.finger_mass, self.finger_radius,
            self.finger_yaw_inertia, self.object_mass, self.half_extent,
            1.0 if self.shape == "disk" else 0.0, self.friction, self.ground_friction,
            self.gravity, self.contact_stiffness, self.contact_damping, self.stiction_velocity,
            1.0 if self.yaw else 0.0, self.object_inertia, self.torsion_radius,
        ])

    def _run_kernel(self, q0, v0, U, horizon, bound, Q, V, div):
        _kernels.pusher_rollout(
            self._kernel_params(), self._actuator_table(), q0, v0, U, horizon, bound, Q, V, div)

    def penetration(self, q):
        q = np.asarray(q, dtype=np.float64)
        flat = np.ascontiguousarray(q.reshape(-1, self.n_q))
        out = np.empty(flat.shape[0])
        _kernels.pusher_penetration(self._kernel_params(), flat, out)
        return out.reshape(q.shape[:-1] + (1,))

    def frame_series(self, q, v):
        zero = np.zeros(q.shape[:-1])
        pos = _pad3(q[..., 0], q[..., 1], zero)
        lin = _pad3(v[..., 0], v[..., 1], zero)
        if self.yaw:
            quat = yaw_to_quat(q[..., 2])
            ang = _pad3(zero, zero, v[..., 2])
        else:
            quat = _identity_quat(zero.shape)
            ang = np.zeros(zero.shape + (3,))
        return {"finger": (pos, quat, lin, ang)}

    def object_series(self, q, v):
        o = self.object_offset
        zero = np.zeros(q.shape[:-1])
        pos = _pad3(q[..., o], q[..., o + 1], zero)
        lin = _pad3(v[..., o], v[..., o + 1], zero)
        return pos, yaw_to_quat(q[..., o + 2]), lin

    def contact_distance(self):
        """Center distance at which the finger just touches a face of the object."""
        return self.half_extent + self.finger_radius

    def params(self):
        return {
            "object_mass": self.object_mass, "half_extent": self.half_extent,
            "shape": self.shape, "friction": self.friction,
            "ground_friction": self.ground_friction, "finger_mass": self.finger_mass,
            "finger_radius": self.finger_radius, "yaw": self.yaw,
        }
