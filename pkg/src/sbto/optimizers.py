"""Fixed-horizon (FHTO), incremental-horizon (SBTO) and receding-horizon (SBMPC)
sampling-based trajectory optimizers.

The functional solvers return a :class:`SolveResult`; the estimator classes
at the bottom wrap them in a scikit-learn style ``fit``/``predict`` API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .costs import CostSpec
from .dynamics import rollout, rollout_batch
from .exceptions import ConfigError, SolverFailure
from .knots import KINDS, build_schedule, init_mean_from_reference, interpolate_values
from .sampling import (
    CemConfig,
    EliteArchive,
    MppiConfig,
    cem_update,
    max_active_variance,
    mppi_temperature,
    mppi_update,
    sample_gaussian,
)
from .types import (
    ControlKnots,
    DivergedRollout,
    IterationRecord,
    KnotSchedule,
    ReferenceTrajectory,
    RunRecord,
    SamplingDistribution,
    State,
    TimeGrid,
    embed_distribution,
    kappa_index,
    truncate_distribution,
)
from .validation import check_int, check_positive, check_random_state

UPDATE_RULES = ("cem", "mppi")


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a solver needs: model, initial state, reference, cost and grid."""

    model: object
    x0: State
    reference: ReferenceTrajectory
    cost: CostSpec
    grid: TimeGrid

    def __post_init__(self):
        if self.reference.grid != self.grid:
            raise ConfigError(
                f"reference grid (dt={self.reference.grid.dt}, T={self.reference.grid.T}) "
                f"does not match the problem grid (dt={self.grid.dt}, T={self.grid.T})"
            )
        if not math.isclose(self.model.dt, self.grid.dt, rel_tol=0, abs_tol=1e-15):
            raise ConfigError(f"model dt {self.model.dt} does not match grid dt {self.grid.dt}")
        self.model.check_state(self.x0)
        object.__setattr__(self, "_bound", self.cost.bind(self.reference, self.model))

    @property
    def bound_cost(self):
        return self._bound

    def initial_mean(self, schedule, offset=0):
        """Reference warm start: actuated reference positions at the knot steps."""
        if offset:
            tau = tuple(offset + t for t in schedule.tau)
            rows = self.reference.q[list(tau)][:, list(self.model.actuated)]
            return (rows / self.model.control_scale).reshape(-1)
        return init_mean_from_reference(
            self.reference, schedule, self.model.actuated, self.model.control_scale)


@dataclass(frozen=True)
class FhtoConfig:
    iterations: int = 100
    update: str = "cem"
    horizon: Optional[int] = None
    interpolation: str = "linear"
    cem: CemConfig = field(default_factory=CemConfig)
    mppi: MppiConfig = field(default_factory=MppiConfig)

    def __post_init__(self):
        check_int(self.iterations, "iterations", minimum=1)
        if self.update not in UPDATE_RULES:
            raise ConfigError(f"update must be one of {UPDATE_RULES}, got {self.update!r}")
        if self.interpolation not in KINDS:
            raise ConfigError(f"interpolation must be one of {KINDS}, got {self.interpolation!r}")
        if self.horizon is not None:
            check_int(self.horizon, "horizon", minimum=1)

    @property
    def n_samples(self):
        return self.cem.N if self.update == "cem" else self.mppi.N


@dataclass(frozen=True)
class SbtoConfig:
    sigma_min: float = 0.02
    max_iters_per_increment: int = 400
    min_iters_per_increment: int = 1
    interpolation: str = "linear"

    def __post_init__(self):
        check_positive(self.sigma_min, "sigma_min")
        check_int(self.max_iters_per_increment, "max_iters_per_increment", minimum=1)
        check_int(self.min_iters_per_increment, "min_iters_per_increment", minimum=0)
        if self.min_iters_per_increment > self.max_iters_per_increment:
            raise ConfigError("min_iters_per_increment exceeds max_iters_per_increment")
        if self.interpolation not in KINDS:
            raise ConfigError(f"interpolation must be one of {KINDS}, got {self.interpolation!r}")


@dataclass(frozen=True)
class SbmpcConfig:
    plan_horizon: float = 1.2
    replan_interval: int = 25
    iterations_per_replan: int = 20
    knot_spacing: float = 0.25
    interpolation: str = "linear"

    def __post_init__(self):
        check_positive(self.plan_horizon, "plan_horizon")
        check_int(self.replan_interval, "replan_interval", minimum=1)
        check_int(self.iterations_per_replan, "iterations_per_replan", minimum=1)
        check_positive(self.knot_spacing, "knot_spacing")
        if self.interpolation not in KINDS:
            raise ConfigError(f"interpolation must be one of {KINDS}, got {self.interpolation!r}")

    def check_grid(self, grid):
        plan = self.plan_steps(grid)
        if plan < self.replan_interval:
            raise ConfigError(
                f"plan horizon {self.plan_horizon} s is shorter than the replan interval "
                f"({self.replan_interval} steps of {grid.dt} s)"
            )
        return plan

    def plan_steps(self, grid):
        return int(round(self.plan_horizon / grid.dt))


@dataclass
class SolveResult:
    """Outcome of one solver run.

    ``controls`` is the full-resolution control sequence, ``trajectory`` its
    rollout and ``cost`` that rollout's cost over the whole grid.
    """

    controls: np.ndarray
    knots: Optional[ControlKnots]
    trajectory: object
    cost: float
    distribution: Optional[SamplingDistribution]
    archive: Optional[EliteArchive]
    record: RunRecord


class _Incumbent:
    """Lowest-cost sample seen since the last reset."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.cost = math.inf
        self.values = None
        self.controls = None
        self.trajectory = None

    def offer(self, samples, controls, batch, costs):
        j = int(np.argmin(costs))
        if costs[j] < self.cost:
            self.cost = float(costs[j])
            self.values = samples[j].copy()
            self.controls = controls[j].copy()
            self.trajectory = batch.trajectory(j)
            return True
        return False


class _Engine:
    """One sampling iteration: sample, interpolate, roll out, score, update."""

    def __init__(self, problem, update, cem, mppi, interpolation, rng, n_workers):
        self.problem = problem
        self.update = update
        self.cem = cem
        self.mppi = mppi
        self.kind = interpolation
        self.rng = rng
        self.n_workers = n_workers
        self.temperature = mppi.temperature
        self.N = cem.N if update == "cem" else mppi.N

    def iterate(self, dist, archive, schedule, horizon, incumbent, x0=None, offset=0):
        """Returns (dist, archive, steps simulated, flags)."""
        p = self.problem
        x0 = p.x0 if x0 is None else x0
        n_old = min(len(archive), self.N) if archive is not None and archive.stale else 0
        fresh = sample_gaussian(dist, self.N - n_old, self.rng, self.cem.cov_jitter) \
            if self.N > n_old else np.empty((0, dist.dim))
        if n_old:
            # re-score a rebased archive as part of this iteration's N rollouts
            samples = np.vstack([archive.vectors[:n_old], fresh])
            archive = EliteArchive.empty(dist.dim)
        else:
            samples = fresh
        controls = interpolate_values(samples, schedule, horizon, self.kind)
        batch = rollout_batch(p.model, x0, controls, horizon, n_workers=self.n_workers)
        costs = p.bound_cost(batch, horizon, offset)
        costs = np.where(np.isnan(costs), np.inf, costs)
        incumbent.offer(samples, controls, batch, costs)

        flags = []
        if not np.any(np.isfinite(costs)):
            flags.append("all samples diverged")
        if self.update == "cem":
            if archive is None:
                archive = EliteArchive.empty(dist.dim)
            dist, archive = cem_update(dist, samples, costs, archive, self.cem)
            if flags:
                flags.append("covariance inflated")
        else:
            if self.temperature is None:
                self.temperature = mppi_temperature(costs)
            dist = mppi_update(dist, samples, costs, self.mppi, self.temperature)
            if flags:
                flags.append("uniform weights")
        return dist, archive, batch.n_steps, tuple(flags)


def _final_rollout(problem, values, schedule, kind, record):
    controls = interpolate_values(values, schedule, schedule.T, kind)
    traj = rollout(problem.model, problem.x0, controls, schedule.T)
    if isinstance(traj, DivergedRollout):
        raise SolverFailure(f"final rollout diverged at step {traj.step}", record)
    return controls, traj, problem.bound_cost(traj)


def fhto_solve(problem, dist, schedule, cfg, rng=None, *, archive=None, snapshots=False,
               n_workers=None):
    """Sampling-based optimization of all knots over a fixed horizon.

    Returns the lowest-cost control sequence evaluated across all iterations,
    the final distribution and archive, and the run record. Raises
    :class:`SolverFailure` if every sample of every iteration diverged.
    """
    rng = check_random_state(rng)
    if dist.dim != schedule.dim:
        raise ValueError(f"distribution dimension {dist.dim} != K*n_u = {schedule.dim}")
    if schedule.n_u != problem.model.n_u:
        raise ValueError("schedule n_u does not match the model")
    horizon = schedule.T if cfg.horizon is None else cfg.horizon
    if horizon > schedule.T or horizon > problem.grid.T:
        raise ValueError(f"horizon {horizon} exceeds the schedule or grid")
    engine = _Engine(problem, cfg.update, cfg.cem, cfg.mppi, cfg.interpolation, rng, n_workers)
    record = RunRecord("fhto")
    incumbent = _Incumbent()
    k_last = schedule.K - 1
    n_sim = 0
    for i in range(cfg.iterations):
        dist, archive, steps, flags = engine.iterate(dist, archive, schedule, horizon, incumbent)
        n_sim += steps
        for f in flags:
            record.flag(f"iteration {i}: {f}")
        record.append(IterationRecord(
            i, k_last, horizon, incumbent.cost, max_active_variance(dist, dist.dim - 1), n_sim,
            incumbent.trajectory if snapshots else None, flags))
    if incumbent.values is None:
        raise SolverFailure("every sample diverged in every iteration", record)
    record.final_knots = ControlKnots(schedule, incumbent.values)
    record.final_trajectory = incumbent.trajectory
    record.final_cost = incumbent.cost
    return SolveResult(incumbent.controls, record.final_knots, incumbent.trajectory,
                       incumbent.cost, dist, archive, record)


def sbto_solve(problem, cfg, cem, schedule, rng=None, *, snapshots=False, n_workers=None):
    """Incremental-horizon optimization.

    Knots are activated one at a time; after each activation the truncated
    distribution over knots 0..k is refined with partial rollouts up to
    ``tau[k]`` until its largest variance falls below ``sigma_min`` (at least
    ``min_iters_per_increment`` and at most ``max_iters_per_increment``
    iterations). The returned control sequence is the best sample of the last
    increment, re-rolled over the full grid.
    """
    rng = check_random_state(rng)
    model = problem.model
    if schedule.K < 2:
        raise ValueError("SBTO needs at least two knots")
    if schedule.n_u != model.n_u:
        raise ValueError("schedule n_u does not match the model")
    if schedule.T != problem.grid.T:
        raise ValueError(f"schedule covers {schedule.T} steps, grid has {problem.grid.T}")
    n_u = schedule.n_u
    full = SamplingDistribution.isotropic(problem.initial_mean(schedule), cem.sigma0)
    engine = _Engine(problem, "cem", cem, MppiConfig(cem.N, None, cem.sigma0),
                     cfg.interpolation, rng, n_workers)
    record = RunRecord("sbto")
    incumbent = _Incumbent()
    archive = EliteArchive.empty(kappa_index(1, n_u) + 1)
    n_sim = 0
    it = 0
    for k in range(1, schedule.K):
        kappa = kappa_index(k, n_u)
        sub = schedule.prefix(k)
        horizon = schedule.tau[k]
        if k > 1:
            archive = archive.rebase(full.mean[: kappa + 1])
            incumbent.reset()
        local = 0
        while local < cfg.min_iters_per_increment or (
            max_active_variance(full, kappa) > cfg.sigma_min
            and local < cfg.max_iters_per_increment
        ):
            active = truncate_distribution(full, kappa)
            active, archive, steps, flags = engine.iterate(active, archive, sub, horizon, incumbent)
            full = embed_distribution(full, active)
            n_sim += steps
            for f in flags:
                record.flag(f"iteration {it}: {f}")
            record.append(IterationRecord(
                it, k, horizon, incumbent.cost, max_active_variance(full, kappa), n_sim,
                incumbent.trajectory if snapshots else None, flags))
            local += 1
            it += 1
        if max_active_variance(full, kappa) > cfg.sigma_min and local >= cfg.max_iters_per_increment:
            record.flag(f"increment k={k}: max_iters_per_increment reached before sigma_min")
    if incumbent.values is None:
        raise SolverFailure("every sample of the last increment diverged", record)
    controls, traj, cost = _final_rollout(problem, incumbent.values, schedule,
                                          cfg.interpolation, record)
    record.final_knots = ControlKnots(schedule, incumbent.values)
    record.final_trajectory = traj
    record.final_cost = cost
    return SolveResult(controls, record.final_knots, traj, cost, full, archive, record)


def _window_schedule(grid, start, plan, knot_spacing, n_u):
    remaining = grid.T - start
    length = min(plan, remaining)
    if remaining - length < 2:
        length = remaining
    return build_schedule(TimeGrid(grid.dt, length), knot_spacing, n_u), length


def _shift_distribution(problem, dist, old_sched, old_start, new_sched, new_start, sigma0, kind):
    """Re-express ``dist`` on a window starting ``new_start - old_start`` steps later.

    Knots inside the old window take the interpolated old mean; where a new
    knot lands on an old knot its covariance entries are carried over.
    Knots past the old window start from the reference with variance sigma0^2.
    """
    n_u = new_sched.n_u
    shift = new_start - old_start
    old_end = old_sched.tau[-1]
    old_mean = dist.mean.reshape(old_sched.K, n_u)
    mean = problem.initial_mean(new_sched, new_start).reshape(new_sched.K, n_u)
    dim = new_sched.dim
    cov = sigma0 ** 2 * np.eye(dim)
    old_index = {t: j for j, t in enumerate(old_sched.tau)}
    carried = []
    inside = [j for j, t in enumerate(new_sched.tau) if t + shift <= old_end]
    if inside:
        steps = max(new_sched.tau[j] + shift for j in inside) + 1
        path = interpolate_values(dist.mean, old_sched, min(steps, old_sched.T), kind)
        for j in inside:
            mean[j] = path[new_sched.tau[j] + shift]
            if new_sched.tau[j] + shift in old_index:
                carried.append((j, old_index[new_sched.tau[j] + shift]))
    for a, ja in carried:
        for b, jb in carried:
            cov[a * n_u:(a + 1) * n_u, b * n_u:(b + 1) * n_u] = \
                dist.cov[ja * n_u:(ja + 1) * n_u, jb * n_u:(jb + 1) * n_u]
    return SamplingDistribution._trusted(mean.reshape(-1), cov)


def sbmpc_solve(problem, cfg, cem, rng=None, *, update="cem", mppi=None, snapshots=False,
                n_workers=None):
    """Receding-horizon baseline.

    Each replan optimizes a window of ``plan_horizon`` seconds from the current
    state, executes the first ``replan_interval`` steps of the best sequence
    and shifts the distribution forward. Executed steps are never revisited.
    """
    rng = check_random_state(rng)
    model = problem.model
    grid = problem.grid
    plan = cfg.check_grid(grid)
    mppi = mppi or MppiConfig(cem.N, None, cem.sigma0)
    engine = _Engine(problem, update, cem, mppi, cfg.interpolation, rng, n_workers)
    record = RunRecord("sbmpc")
    incumbent = _Incumbent()
    n_u = model.n_u
    start = 0
    state = problem.x0
    executed = []
    sched, length = _window_schedule(grid, 0, plan, cfg.knot_spacing, n_u)
    sigma0 = cem.sigma0 if update == "cem" else mppi.sigma0
    dist = SamplingDistribution.isotropic(problem.initial_mean(sched), sigma0)
    archive = None
    n_sim = 0
    it = 0
    window = 0
    while True:
        incumbent.reset()
        archive = EliteArchive.empty(sched.dim) if update == "cem" else None
        for _ in range(cfg.iterations_per_replan):
            dist, archive, steps, flags = engine.iterate(
                dist, archive, sched, length, incumbent, x0=state, offset=start)
            n_sim += steps
            for f in flags:
                record.flag(f"iteration {it}: {f}")
            record.append(IterationRecord(
                it, window, start + length, incumbent.cost, max_active_variance(dist, dist.dim - 1),
                n_sim, incumbent.trajectory if snapshots else None, flags))
            it += 1
        if incumbent.values is None:
            raise SolverFailure(f"every sample diverged in the window starting at step {start}",
                                record)
        remaining = grid.T - start
        n_exec = cfg.replan_interval if length < remaining else length
        if remaining - n_exec < 2:
            n_exec = remaining
        n_exec = min(n_exec, length)
        executed.append(incumbent.controls[:n_exec])
        state = incumbent.trajectory.state(n_exec)
        if start + n_exec >= grid.T:
            break
        new_start = start + n_exec
        new_sched, new_length = _window_schedule(grid, new_start, plan, cfg.knot_spacing, n_u)
        dist = _shift_distribution(problem, dist, sched, start, new_sched, new_start, sigma0,
                                   cfg.interpolation)
        sched, length, start = new_sched, new_length, new_start
        window += 1

    controls = np.concatenate(executed, axis=0)
    traj = rollout(model, problem.x0, controls, grid.T)
    if isinstance(traj, DivergedRollout):
        raise SolverFailure(f"executed trajectory diverged at step {traj.step}", record)
    cost = problem.bound_cost(traj)
    record.final_trajectory = traj
    record.final_cost = cost
    return SolveResult(controls, None, traj, cost, dist, archive, record)


# -- estimator API ---------------------------------------------------------

class _TrajectoryOptimizer(BaseEstimator):
    """Shared ``fit``/``predict`` plumbing; subclasses implement ``_solve``."""

    def _cem_config(self):
        return CemConfig(self.N, self.rho_e, self.rho_k, self.alpha_mu, self.alpha_sigma,
                         self.sigma0, self.cov_jitter)

    def _schedule(self, problem):
        return build_schedule(problem.grid, self.knot_spacing, problem.model.n_u)

    def fit(self, problem, y=None):
        """Optimize controls for ``problem``; sets the trailing-underscore attributes."""
        if not isinstance(problem, Problem):
            raise TypeError(f"fit expects a Problem, got {type(problem).__name__}")
        result = self._solve(problem, check_random_state(self.random_state))
        self.controls_ = result.controls
        self.knots_ = result.knots
        self.trajectory_ = result.trajectory
        self.cost_ = result.cost
        self.distribution_ = result.distribution
        self.run_record_ = result.record
        self.n_sim_ = result.record.n_sim
        return self

    def predict(self, problem):
        """Roll out the fitted controls on ``problem``'s model from its initial state."""
        check_is_fitted(self, "controls_")
        return rollout(problem.model, problem.x0, self.controls_, problem.grid.T)

    def score(self, problem, y=None):
        """Negative cost of the fitted controls on ``problem`` (higher is better)."""
        traj = self.predict(problem)
        if isinstance(traj, DivergedRollout):
            return -math.inf
        return -problem.bound_cost(traj)


class FHTO(_TrajectoryOptimizer):
    """Fixed-horizon sampling-based trajectory optimizer."""

    def __init__(self, iterations=100, update="cem", N=1024, rho_e=0.03, rho_k=0.04,
                 alpha_mu=0.95, alpha_sigma=0.2, sigma0=0.25, cov_jitter=1e-8,
                 temperature=None, horizon=None, knot_spacing=0.25, interpolation="linear",
                 snapshots=False, n_workers=None, random_state=None):
        self.iterations = iterations
        self.update = update
        self.N = N
        self.rho_e = rho_e
        self.rho_k = rho_k
        self.alpha_mu = alpha_mu
        self.alpha_sigma = alpha_sigma
        self.sigma0 = sigma0
        self.cov_jitter = cov_jitter
        self.temperature = temperature
        self.horizon = horizon
        self.knot_spacing = knot_spacing
        self.interpolation = interpolation
        self.snapshots = snapshots
        self.n_workers = n_workers
        self.random_state = random_state

    def _solve(self, problem, rng):
        cfg = FhtoConfig(self.iterations, self.update, self.horizon, self.interpolation,
                         self._cem_config(), MppiConfig(self.N, self.temperature, self.sigma0))
        schedule = self._schedule(problem)
        dist = SamplingDistribution.isotropic(problem.initial_mean(schedule), self.sigma0)
        return fhto_solve(problem, dist, schedule, cfg, rng, snapshots=self.snapshots,
                          n_workers=self.n_workers)


class SBTO(_TrajectoryOptimizer):
    """Incremental-horizon sampling-based trajectory optimizer."""

    def __init__(self, sigma_min=0.02, max_iters_per_increment=400, min_iters_per_increment=1,
                 N=1024, rho_e=0.03, rho_k=0.04, alpha_mu=0.95, alpha_sigma=0.2, sigma0=0.25,
                 cov_jitter=1e-8, knot_spacing=0.25, interpolation="linear", snapshots=False,
                 n_workers=None, random_state=None):
        self.sigma_min = sigma_min
        self.max_iters_per_increment = max_iters_per_increment
        self.min_iters_per_increment = min_iters_per_increment
        self.N = N
        self.rho_e = rho_e
        self.rho_k = rho_k
        self.alpha_mu = alpha_mu
        self.alpha_sigma = alpha_sigma
        self.sigma0 = sigma0
        self.cov_jitter = cov_jitter
        self.knot_spacing = knot_spacing
        self.interpolation = interpolation
        self.snapshots = snapshots
        self.n_workers = n_workers
        self.random_state = random_state

    def _solve(self, problem, rng):
        cfg = SbtoConfig(self.sigma_min, self.max_iters_per_increment,
                         self.min_iters_per_increment, self.interpolation)
        return sbto_solve(problem, cfg, self._cem_config(), self._schedule(problem), rng,
                          snapshots=self.snapshots, n_workers=self.n_workers)


class SBMPC(_TrajectoryOptimizer):
    """Receding-horizon sampling-based MPC baseline."""

    def __init__(self, plan_horizon=1.2, replan_interval=25, iterations_per_replan=20,
                 update="cem", N=1024, rho_e=0.03, rho_k=0.04, alpha_mu=0.95, alpha_sigma=0.2,
                 sigma0=0.25, cov_jitter=1e-8, temperature=None, knot_spacing=0.25,
                 interpolation="linear", snapshots=False, n_workers=None, random_state=None):
        self.plan_horizon = plan_horizon
        self.replan_interval = replan_interval
        self.iterations_per_replan = iterations_per_replan
        self.update = update
        self.N = N
        self.rho_e = rho_e
        self.rho_k = rho_k
        self.alpha_mu = alpha_mu
        self.alpha_sigma = alpha_sigma
        self.sigma0 = sigma0
        self.cov_jitter = cov_jitter
        self.temperature = temperature
        self.knot_spacing = knot_spacing
        self.interpolation = interpolation
        self.snapshots = snapshots
        self.n_workers = n_workers
        self.random_state = random_state

    def _solve(self, problem, rng):
        cfg = SbmpcConfig(self.plan_horizon, self.replan_interval, self.iterations_per_replan,
                          self.knot_spacing, self.interpolation)
        return sbmpc_solve(problem, cfg, self._cem_config(), rng, update=self.update,
                           mppi=MppiConfig(self.N, self.temperature, self.sigma0),
                           snapshots=self.snapshots, n_workers=self.n_workers)
