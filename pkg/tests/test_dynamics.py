import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbto.dynamics import (
    CartPole,
    DoubleIntegrator,
    PdGains,
    Pendulum,
    PlanarPusher,
    pd_torque,
    rollout,
    rollout_batch,
)
from sbto.dynamics.rollout import WORKERS_ENV
from sbto.types import DivergedRollout, State


def _semi_implicit_euler(q, v, targets, kp, kd, m, dt):
    qs, vs = [q], [v]
    for u in targets:
        v = v + dt * (kp * (u - q) - kd * v) / m
        q = q + dt * v
        qs.append(q)
        vs.append(v)
    return np.array(qs), np.array(vs)


def test_double_integrator_matches_closed_form_recursion():
    model = DoubleIntegrator(dim=1, mass=2.0)
    u = np.sin(np.linspace(0, 3, 50))[:, None]
    traj = rollout(model, State(np.array([0.1]), np.array([-0.2])), u)
    q, v = _semi_implicit_euler(0.1, -0.2, u[:, 0], 50.0, 10.0, 2.0, 0.01)
    np.testing.assert_allclose(traj.q[:, 0], q, rtol=0, atol=1e-14)
    np.testing.assert_allclose(traj.v[:, 0], v, rtol=0, atol=1e-14)


def test_torque_mode_is_free_particle():
    model = DoubleIntegrator(dim=1, actuation="torque")
    u = np.full((10, 1), 1.0)
    traj = rollout(model, State(np.zeros(1), np.zeros(1)), u)
    # v_t = t dt, q_t = dt^2 t (t + 1) / 2
    t = np.arange(11)
    np.testing.assert_allclose(traj.v[:, 0], 0.01 * t, atol=1e-15)
    np.testing.assert_allclose(traj.q[:, 0], 1e-4 * t * (t + 1) / 2, atol=1e-15)


def test_pd_torque_clipped():
    g = PdGains.uniform(2, 10.0, 1.0, 5.0)
    tau = pd_torque(g, np.array([1.0, 0.1]), np.zeros(2), np.array([0.0, 0.05]))
    np.testing.assert_allclose(tau, [5.0, 0.95])


def test_gains_validation():
    with pytest.raises(ValueError):
        PdGains.uniform(1, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        PdGains.uniform(1, 1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        PdGains.uniform(1, 1.0, 1.0, 0.0)


def test_pendulum_energy_drift_below_one_percent():
    model = Pendulum(actuation="torque")
    x0 = State(np.array([1.0]), np.array([0.0]))
    traj = rollout(model, x0, np.zeros((100, 1)))
    e = model.energy(traj.q, traj.v)
    assert np.max(np.abs(e - e[0])) / e[0] < 0.01


def test_pusher_momentum_without_friction_or_contact():
    model = PlanarPusher(ground_friction=0.0)
    q0 = np.array([-0.5, 0.0, 0.0, 0.0, 0.0])
    v0 = np.array([0.0, 0.0, 0.2, -0.1, 0.3])
    traj = rollout(model, State(q0, v0), np.tile(q0[:2] / 0.125, (50, 1)))
    np.testing.assert_allclose(traj.v[:, 2:], np.tile(v0[2:], (51, 1)), rtol=0, atol=1e-15)


def test_pusher_contact_moves_box_and_counts_contact():
    model = PlanarPusher()
    q0 = np.array([-0.07, 0.0, 0.0, 0.0, 0.0])
    target = np.tile([0.1 / 0.125, 0.0], (100, 1))
    traj = rollout(model, State(q0, np.zeros(5)), target)
    assert traj.q[-1, 2] > 0.05
    assert traj.contacts["robot-object"].sum() > 0
    assert abs(traj.q[-1, 3]) < 1e-9


def test_contact_events_stable_at_threshold():
    model = PlanarPusher()
    # finger touching the box face with penetration exactly at the enter depth
    x = -(model.half_extent + model.finger_radius) + 1e-4
    for eps in (-1e-13, 0.0, 1e-13):
        s = State(np.array([x + eps, 0.0, 0.0, 0.0, 0.0]), np.zeros(5))
        assert model.contact_events(s, previous=("finger-object",))
    # inside the hysteresis band: on only if already on
    s = State(np.array([x - 1e-5, 0.0, 0.0, 0.0, 0.0]), np.zeros(5))
    assert model.contact_events(s, previous=("finger-object",))
    assert not model.contact_events(s)


def test_pusher_validation():
    with pytest.raises(ValueError):
        PlanarPusher(object_mass=0.0)
    with pytest.raises(ValueError):
        PlanarPusher(shape="sphere")
    with pytest.raises(ValueError):
        PlanarPusher(friction=-0.1)


def test_step_matches_rollout_and_is_deterministic():
    model = CartPole()
    s = State(np.array([0.0, 0.3]), np.array([0.1, 0.0]))
    a = model.step(s, np.array([0.2]))
    b = model.step(s, np.array([0.2]))
    np.testing.assert_array_equal(a.q, b.q)
    traj = rollout(model, s, np.array([[0.2]]))
    np.testing.assert_array_equal(traj.q[1], a.q)
    with pytest.raises(ValueError):
        model.step(State(np.zeros(3), np.zeros(3)), np.zeros(1))


def test_divergence_is_reported():
    model = DoubleIntegrator(actuation="torque", gains=PdGains.uniform(1, 1.0, 0.0, 1e300))
    out = rollout(model, State(np.zeros(1), np.zeros(1)), np.full((20, 1), 1e12))
    assert isinstance(out, DivergedRollout)
    assert 0 <= out.step < 20
    with pytest.raises(FloatingPointError):
        model.step(State(np.zeros(1), np.zeros(1)), np.array([1e12]))


@pytest.mark.parametrize("model", [DoubleIntegrator(dim=2), Pendulum(), CartPole(), PlanarPusher()],
                         ids=lambda m: m.name)
def test_batch_matches_single_rollouts_and_workers(model, monkeypatch):
    rng = np.random.default_rng(0)
    U = 0.2 * rng.standard_normal((9, 30, model.n_u))
    x0 = State(np.zeros(model.n_q), np.zeros(model.n_v))
    if model.name == "pusher":
        x0 = State(np.array([-0.07, 0.0, 0.0, 0.0, 0.0]), np.zeros(5))
        U = U + x0.q[:2] / 0.125
    one = rollout_batch(model, x0, U, n_workers=1)
    three = rollout_batch(model, x0, U, n_workers=3)
    np.testing.assert_array_equal(one.q, three.q)
    np.testing.assert_array_equal(one.v, three.v)
    monkeypatch.setenv(WORKERS_ENV, "2")
    env = rollout_batch(model, x0, U)
    np.testing.assert_array_equal(one.q, env.q)
    for j in (0, 4, 8):
        single = rollout(model, x0, U[j])
        np.testing.assert_array_equal(single.q, one.q[j])
    assert one.n_steps == 9 * 30


@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(1, 20))
def test_partial_horizon_is_prefix(q0, u, h):
    model = DoubleIntegrator()
    U = np.full((1, 20, 1), u)
    x0 = State(np.array([q0]), np.zeros(1))
    full = rollout_batch(model, x0, U)
    part = rollout_batch(model, x0, U, horizon=h)
    np.testing.assert_array_equal(part.q[0], full.q[0, : h + 1])


def test_control_scale_and_clip():
    model = PlanarPusher(control_high=(0.05, np.inf))
    np.testing.assert_array_equal(model.physical_targets(np.array([1.0, 1.0])), [0.05, 0.125])


def test_frame_and_object_pose():
    model = PlanarPusher()
    s = State(np.array([0.1, 0.2, 0.3, 0.4, np.pi / 2]), np.zeros(5))
    pos, quat = model.frame_pose(s, "finger")
    np.testing.assert_allclose(pos[:2], [0.1, 0.2])
    opos, oquat, _ = model.object_pose(s)
    np.testing.assert_allclose(opos[:2], [0.3, 0.4])
    np.testing.assert_allclose(oquat, [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
    with pytest.raises(KeyError):
        model.frame_pose(s, "hand")
    with pytest.raises(ValueError):
        Pendulum().object_pose(State(np.zeros(1), np.zeros(1)))
