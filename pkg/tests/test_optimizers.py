import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sbto.dynamics import rollout
from sbto.exceptions import ConfigError
from sbto.harness.tasks import build_task
from sbto.knots import interpolate_values
from sbto.optimizers import FHTO, SBMPC, SBTO, SbmpcConfig, SbtoConfig
from sbto.types import TimeGrid


@pytest.fixture(scope="module")
def di():
    return build_task("double-integrator-p2p")


@pytest.fixture(scope="module")
def short_push():
    return build_task("pusher-push-0.3m", duration=0.8, push_start=0.05, push_end=0.7,
                      distance=0.1)


def test_sbto_with_two_knots_is_fixed_horizon(di):
    # T=20 with 0.25 s spacing leaves knots (0, 19): one increment over steps 0..19
    task = build_task("double-integrator-p2p", duration=0.2)
    p = task.problem()
    s = SBTO(N=32, min_iters_per_increment=6, max_iters_per_increment=6, random_state=5).fit(p)
    f = FHTO(N=32, iterations=6, horizon=19, random_state=5).fit(p)
    np.testing.assert_array_equal(s.knots_.values, f.knots_.values)
    np.testing.assert_array_equal(s.distribution_.mean, f.distribution_.mean)
    np.testing.assert_array_equal(s.distribution_.cov, f.distribution_.cov)
    assert s.n_sim_ == f.n_sim_ == 6 * 32 * 19


def test_sbmpc_single_window_equals_fhto(di):
    p = di.problem()
    m = SBMPC(plan_horizon=di.grid.duration, iterations_per_replan=8, N=64, random_state=2).fit(p)
    f = FHTO(iterations=8, N=64, random_state=2).fit(p)
    np.testing.assert_array_equal(m.controls_, f.controls_)
    assert m.cost_ == f.cost_
    assert m.n_sim_ == f.n_sim_


def test_sbto_run_record_properties(short_push):
    est = SBTO(N=64, sigma_min=0.03, random_state=0, snapshots=True).fit(short_push.problem())
    entries = est.run_record_.entries
    taus = [e.tau_k for e in entries]
    assert taus == sorted(taus)
    assert taus[-1] == short_push.grid.T - 1
    # best cost over the active window never rises within an increment
    for a, b in zip(entries, entries[1:]):
        if a.k == b.k:
            assert b.best_cost <= a.best_cost
    # budget identity
    assert est.n_sim_ == sum(64 * t for t in taus)
    assert all(e.snapshot is not None for e in entries)
    # increments stop once the active variance is below sigma_min
    last = {}
    for e in entries:
        last[e.k] = e
    assert all(e.max_variance <= 0.03 or "max_iters" in " ".join(est.run_record_.flags)
               for e in last.values())


def test_prefix_stable_after_increment(short_push):
    p = short_push.problem()
    est = SBTO(N=32, sigma_min=0.05, random_state=1, snapshots=True).fit(p)
    sched = est.knots_.schedule
    vals = est.knots_.values
    for k in (2, 3):
        h = sched.tau[k - 1]
        short = interpolate_values(vals[: k * sched.n_u], sched.prefix(k - 1), h)
        long = interpolate_values(vals[: (k + 1) * sched.n_u], sched.prefix(k), h)
        np.testing.assert_array_equal(short, long)
        a = rollout(p.model, p.x0, short, h)
        b = rollout(p.model, p.x0, interpolate_values(vals, sched), sched.T)
        np.testing.assert_array_equal(a.q, b.q[: h + 1])


def test_deterministic_across_runs_and_workers(short_push):
    p = short_push.problem()
    a = SBTO(N=32, sigma_min=0.05, random_state=9, n_workers=1).fit(p)
    b = SBTO(N=32, sigma_min=0.05, random_state=9, n_workers=3).fit(p)
    np.testing.assert_array_equal(a.controls_, b.controls_)
    assert [e.best_cost for e in a.run_record_.entries] == \
        [e.best_cost for e in b.run_record_.entries]
    c = SBMPC(N=16, plan_horizon=0.5, iterations_per_replan=3, random_state=[9, 1]).fit(p)
    d = SBMPC(N=16, plan_horizon=0.5, iterations_per_replan=3, random_state=[9, 1]).fit(p)
    np.testing.assert_array_equal(c.controls_, d.controls_)


def test_fhto_mppi_runs_and_keeps_covariance(di):
    est = FHTO(update="mppi", iterations=5, N=64, random_state=0).fit(di.problem())
    np.testing.assert_array_equal(est.distribution_.cov, 0.0625 * np.eye(est.distribution_.dim))
    assert np.isfinite(est.cost_)


def test_fhto_best_cost_non_increasing(di):
    est = FHTO(iterations=15, N=64, random_state=0).fit(di.problem())
    costs = [e.best_cost for e in est.run_record_.entries]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert est.cost_ == pytest.approx(costs[-1])


def test_sbmpc_executes_whole_grid(short_push):
    est = SBMPC(N=16, plan_horizon=0.3, replan_interval=10, iterations_per_replan=2,
                random_state=0).fit(short_push.problem())
    assert est.controls_.shape == (short_push.grid.T, 2)
    assert est.trajectory_.q.shape[0] == short_push.grid.T + 1


def test_estimator_api(di):
    est = SBTO(sigma_min=0.05, N=32, random_state=3)
    params = est.get_params()
    assert params["sigma_min"] == 0.05 and params["N"] == 32
    twin = clone(est)
    assert twin.get_params() == params
    with pytest.raises(NotFittedError):
        est.predict(di.problem())
    est.fit(di.problem())
    assert est.score(di.problem()) == pytest.approx(-est.cost_)
    np.testing.assert_array_equal(est.predict(di.problem()).q, est.trajectory_.q)
    with pytest.raises(TypeError):
        est.fit("not a problem")
    est.set_params(N=16)
    assert est.N == 16


def test_config_validation():
    with pytest.raises(ValueError):
        SbtoConfig(sigma_min=0.0)
    with pytest.raises(ConfigError):
        SbtoConfig(min_iters_per_increment=5, max_iters_per_increment=2)
    with pytest.raises(ConfigError):
        SbmpcConfig(plan_horizon=0.1, replan_interval=25).check_grid(TimeGrid(0.01, 100))
