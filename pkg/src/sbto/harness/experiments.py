"""Experiment drivers behind the command line: refine, compare, effective
horizon, the sigma_min x alpha_sigma sweep and object augmentation.

Drivers return plain row dicts and write nothing themselves; the CLI decides
where results go. Jobs are independent and may run in a process pool; results
are always collected in job order so outputs do not depend on the pool size.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..exceptions import ConfigError, SbtoError, SolverFailure
from ..metrics import REPORT_COLUMNS, RefinementReport, evaluate_refinement
from ..dynamics.rollout import WORKERS_ENV

ROLLING_WINDOW = 11

ROW_COLUMNS = REPORT_COLUMNS + ("status",)
SUMMARY_COLUMNS = ("algorithm", "runs", "successes", "success_pct", "mean_smoothness_norm",
                   "mean_eta_eff")
EH_COLUMNS = ("seed", "iteration", "k", "horizon_s", "error_t0")
EH_SUMMARY_COLUMNS = ("seed", "i0", "i1", "t1", "status")
SWEEP_COLUMNS = ("sigma_min", "alpha_sigma", "seed", "i0", "i1", "t1", "status")
SWEEP_MEDIAN_COLUMNS = ("sigma_min", "alpha_sigma", "median_t1")
AUGMENT_COLUMNS = ("variant", "object_mass", "half_extent", "shape", "seed", "e_pos_m",
                   "e_rot_deg", "success", "status")


@dataclass
class RunOutcome:
    seed: int
    report: Optional[RefinementReport]
    estimator: object = None
    status: str = "ok"
    error: str = ""

    def row(self, task, algorithm):
        if self.report is not None:
            return {**self.report.row(), "status": self.status}
        return {"task": task, "algorithm": algorithm, "seed": self.seed, "success": False,
                "status": self.status}


def run_one(task, exp, seed, *, n_workers=None, random_state=None, keep_estimator=True,
            snapshots=None, **overrides):
    """Fit one estimator; solver failures become a ``failed`` outcome."""
    est = exp.estimator(seed if random_state is None else random_state, n_workers=n_workers,
                        snapshots=snapshots, **overrides)
    try:
        est.fit(task.problem())
    except SolverFailure as exc:
        return RunOutcome(seed, None, None, "failed", str(exc))
    report = evaluate_refinement(
        est.trajectory_, task.reference, task.actuated, est.n_sim_, task=task.name,
        algorithm=exp.name, seed=seed, pos_threshold=task.pos_threshold,
        rot_threshold=task.rot_threshold)
    report.flags = list(est.run_record_.flags) + report.flags
    return RunOutcome(seed, report, est if keep_estimator else None)


def worker_cap(workers=None):
    """Explicit worker count, else the ``SBTO_WORKERS`` environment variable, else 1."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV, "").strip()
        if not env:
            return 1
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if workers < 1:
        raise ConfigError(f"worker count must be >= 1, got {workers}", key_path="workers")
    return int(workers)


def _pool_map(fn, jobs, workers):
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# -- refine ------------------------------------------------------------------

def _refine_job(args):
    task_cfg, exp, seed, n_workers = args
    task = task_cfg.build()
    return run_one(task, exp, seed, n_workers=n_workers)


def refine(task_cfg, exp, seeds=None, workers=None):
    """Run ``exp`` on every seed; returns the outcomes in seed order."""
    seeds = list(exp.seeds if seeds is None else seeds)
    cap = worker_cap(workers if workers is not None else exp.workers)
    inner = cap if len(seeds) == 1 else 1
    jobs = [(task_cfg, exp, s, inner) for s in seeds]
    return _pool_map(_refine_job, jobs, cap if len(seeds) > 1 else 1)


# -- compare -----------------------------------------------------------------

def budget_iterations(n_sim, N, T):
    """FHTO iterations that fit a total simulation-step budget: floor(n_sim / (N T))."""
    return max(1, int(n_sim) // (int(N) * int(T)))


def _compare_job(args):
    task_cfg, exp, seed, overrides = args
    task = task_cfg.build()
    try:
        out = run_one(task, exp, seed, n_workers=1, keep_estimator=False, **overrides)
    except (SbtoError, ValueError, ArithmeticError) as exc:
        out = RunOutcome(seed, None, None, "error", f"{type(exc).__name__}: {exc}")
    return out


def compare(task_cfg, exps, seeds=None, workers=None):
    """Run every experiment on the same seeds.

    FHTO experiments with ``budget_match`` get ``floor(n_sim / (N T))``
    iterations from the first SBTO experiment's run on the same seed.
    Returns ``(rows, summary)``.
    """
    if len(exps) < 2:
        raise ConfigError("compare needs at least two experiments", key_path="experiment")
    task = task_cfg.build()
    cap = worker_cap(workers)
    ordered = sorted(range(len(exps)), key=lambda i: exps[i].algo.get("budget_match", False))
    outcomes = {}
    budgets = {}
    for i in ordered:
        exp = exps[i]
        run_seeds = list(exp.seeds if seeds is None else seeds)
        jobs = []
        for s in run_seeds:
            overrides = {}
            if exp.algorithm == "fhto" and exp.algo.get("budget_match"):
                if s not in budgets:
                    raise ConfigError("budget_match needs an SBTO experiment in the comparison",
                                      key_path="fhto.budget_match")
                overrides["iterations"] = budget_iterations(budgets[s], exp.cem["N"], task.grid.T)
            jobs.append((task_cfg, exp, s, overrides))
        outcomes[i] = _pool_map(_compare_job, jobs, cap)
        if exp.algorithm == "sbto":
            for out in outcomes[i]:
                if out.report is not None and out.seed not in budgets:
                    budgets[out.seed] = out.report.n_sim
    rows, summary = [], []
    for i, exp in enumerate(exps):
        these = [o.row(task.name, exp.name) for o in outcomes[i]]
        rows += these
        summary.append(summarize(exp.name, these))
    return rows, summary


def summarize(algorithm, rows):
    """Success percentage; mean normalized smoothness and efficiency over successes only."""
    wins = [r for r in rows if r.get("success") is True]
    n = len(rows)
    return {
        "algorithm": algorithm,
        "runs": n,
        "successes": len(wins),
        "success_pct": 100.0 * len(wins) / n if n else math.nan,
        "mean_smoothness_norm": float(np.mean([r["smoothness_norm"] for r in wins])) if wins else math.nan,
        "mean_eta_eff": float(np.mean([r["eta_eff"] for r in wins])) if wins else math.nan,
    }


# -- effective horizon -------------------------------------------------------

def error_at_t0(record, reference, t0_step):
    """Rows (iteration, k, tau_k, error) from best-trajectory snapshots.

    The error is undefined (None) for iterations whose horizon ends before
    ``t0_step``.
    """
    target = reference.object.position[t0_step]
    rows = []
    for e in record.entries:
        err = None
        if e.tau_k >= t0_step:
            if e.snapshot is None:
                raise ValueError(f"iteration {e.iteration} has no snapshot; run with snapshots")
            err = float(np.linalg.norm(e.snapshot.object.position[t0_step] - target))
        rows.append((e.iteration, e.k, e.tau_k, err))
    return rows


def rolling_median(values, window=ROLLING_WINDOW):
    """Trailing median over up to ``window`` values ending at each index."""
    values = np.asarray(values, dtype=np.float64)
    return np.array([np.median(values[max(0, j - window + 1): j + 1]) for j in range(len(values))])


def effective_horizon(rows, dt, window=ROLLING_WINDOW):
    """``(i0, i1, t1)`` from :func:`error_at_t0` rows.

    ``i0`` is the first iteration with a defined error; ``i1`` the last
    iteration where the rolling median of the error reaches a new minimum;
    ``t1 = tau_k(i1) dt``.
    """
    defined = [r for r in rows if r[3] is not None]
    if not defined:
        raise ValueError("t0 is never inside the optimization window")
    errors = [r[3] for r in defined]
    med = rolling_median(errors, window)
    best = med[0]
    j1 = 0
    for j in range(1, len(med)):
        if med[j] < best:
            best = med[j]
            j1 = j
    return defined[0][0], defined[j1][0], defined[j1][2] * dt


def t0_step(task, t0):
    if t0 is None:
        t0 = task.t0
    if t0 is None:
        raise ConfigError("t0 is required (task.t0 or --t0)", key_path="task.t0")
    step = int(round(t0 / task.grid.dt))
    if not 0 < step <= task.grid.T:
        raise ValueError(f"t0={t0} s is outside the trajectory (0, {task.grid.duration}] s")
    return step


def _eh_job(args):
    task_cfg, exp, seed, step, random_state, overrides = args
    task = task_cfg.build()
    est = exp.estimator(seed if random_state is None else random_state, n_workers=1,
                        snapshots=True, **overrides)
    try:
        est.fit(task.problem())
    except SolverFailure as exc:
        return seed, None, None, "failed", str(exc)
    rows = error_at_t0(est.run_record_, task.reference, step)
    try:
        summary = effective_horizon(rows, task.grid.dt)
    except ValueError as exc:
        return seed, rows, None, "error", str(exc)
    return seed, rows, summary, "ok", ""


def effective_horizon_runs(task_cfg, exp, t0=None, seeds=None, workers=None):
    """Per-seed error-at-t0 traces and ``(i0, i1, t1)`` summaries."""
    if exp.algorithm == "sbmpc":
        raise ConfigError("effective-horizon needs an sbto or fhto experiment",
                          key_path="experiment.algorithm")
    task = task_cfg.build()
    step = t0_step(task, t0)
    seeds = list(exp.seeds if seeds is None else seeds)
    jobs = [(task_cfg, exp, s, step, None, {}) for s in seeds]
    results = _pool_map(_eh_job, jobs, worker_cap(workers))
    trace, summary = [], []
    dt = task.grid.dt
    for seed, rows, summ, status, msg in results:
        for it, k, tau, err in rows or []:
            trace.append({"seed": seed, "iteration": it, "k": k, "horizon_s": tau * dt,
                          "error_t0": err})
        if summ is None:
            summary.append({"seed": seed, "status": status})
        else:
            i0, i1, t1 = summ
            summary.append({"seed": seed, "i0": i0, "i1": i1, "t1": t1, "status": status})
    return trace, summary


def median_t1(summary):
    t1 = [r["t1"] for r in summary if r.get("t1") is not None]
    return float(np.median(t1)) if t1 else math.nan


# -- sweep -------------------------------------------------------------------

def sweep(task_cfg, exp, sigma_mins, alpha_sigmas, t0=None, seeds=None, workers=None):
    """Effective horizon over a sigma_min x alpha_sigma grid.

    Cell ``c`` with seed ``s`` draws from ``default_rng([s, c])``. Returns raw
    rows, per-cell medians and the property lines.
    """
    if exp.algorithm != "sbto":
        raise ConfigError("sweep needs an sbto experiment", key_path="experiment.algorithm")
    if not sigma_mins or not alpha_sigmas:
        raise ConfigError("sweep grid is empty", key_path="grid")
    task = task_cfg.build()
    step = t0_step(task, t0)
    seeds = list(exp.seeds if seeds is None else seeds)
    cells = [(sm, a) for sm in sigma_mins for a in alpha_sigmas]
    jobs = []
    for c, (sm, a) in enumerate(cells):
        cell_exp = replace(exp, cem={**exp.cem, "alpha_sigma": a})
        for s in seeds:
            jobs.append((task_cfg, cell_exp, s, step, [s, c], {"sigma_min": sm}))
    results = _pool_map(_eh_job_guarded, jobs, worker_cap(workers))
    raw, per_cell = [], {}
    for (sm, a), (seed, _, summ, status, _) in zip(
            [cells[c] for c in range(len(cells)) for _ in seeds], results):
        row = {"sigma_min": sm, "alpha_sigma": a, "seed": seed, "status": status}
        if summ is not None:
            row.update(i0=summ[0], i1=summ[1], t1=summ[2])
        raw.append(row)
        per_cell.setdefault((sm, a), []).append(row)
    medians = [{"sigma_min": sm, "alpha_sigma": a, "median_t1": median_t1(per_cell[(sm, a)])}
               for sm, a in cells]
    return raw, medians, sweep_properties(medians, task.grid.dt, exp.knot_spacing)


def _eh_job_guarded(args):
    try:
        return _eh_job(args)
    except (SbtoError, ValueError, ArithmeticError) as exc:
        return args[2], None, None, "error", f"{type(exc).__name__}: {exc}"


def sweep_properties(medians, dt, knot_spacing):
    """Monotone median t1 along sigma_min (per alpha_sigma) and bounded spread
    along alpha_sigma (per sigma_min, at most one knot interval)."""
    table = {(r["sigma_min"], r["alpha_sigma"]): r["median_t1"] for r in medians}
    sms = sorted({k[0] for k in table})
    als = sorted({k[1] for k in table})
    lines = []
    for a in als:
        col = [table[(sm, a)] for sm in sms]
        ok = all(y >= x for x, y in zip(col, col[1:]))
        lines.append({"property": "t1 non-decreasing in sigma_min", "at": f"alpha_sigma={a}",
                      "values": col, "holds": ok})
    for sm in sms:
        row = [table[(sm, a)] for a in als]
        spread = max(row) - min(row)
        lines.append({"property": "t1 spread over alpha_sigma <= knot interval",
                      "at": f"sigma_min={sm}", "values": row,
                      "holds": bool(spread <= knot_spacing + 1e-9)})
    return lines


# -- augmentation --------------------------------------------------------------

MASS_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
SIZE_FACTORS = (0.75, 1.0, 1.25)
SHAPES = ("box", "disk")


def augment_variants(masses=MASS_FACTORS, sizes=SIZE_FACTORS, shapes=SHAPES):
    """Variants that change one property of the nominal object at a time."""
    out = [("nominal", 1.0, 1.0, "box")]
    out += [(f"mass x{m:g}", m, 1.0, "box") for m in masses if m != 1.0]
    out += [(f"size x{s:g}", 1.0, s, "box") for s in sizes if s != 1.0]
    out += [(shape, 1.0, 1.0, shape) for shape in shapes if shape != "box"]
    return out


def _augment_job(args):
    task_cfg, exp, seed, variant = args
    name, mass, size, shape = variant
    nominal = task_cfg.build()
    base = nominal.model
    model = {**task_cfg.model, "object_mass": base.object_mass * mass,
             "half_extent": base.half_extent * size, "shape": shape}
    varied = replace(task_cfg, model=model).build()
    # same reference and cost as the nominal task
    varied.reference = nominal.reference
    varied.cost = nominal.cost
    varied.x0 = nominal.x0
    row = {"variant": name, "object_mass": model["object_mass"],
           "half_extent": model["half_extent"], "shape": shape, "seed": seed}
    try:
        out = run_one(varied, exp, seed, n_workers=1, keep_estimator=False)
    except (SbtoError, ValueError, ArithmeticError) as exc:
        return {**row, "success": False, "status": f"error: {exc}"}
    if out.report is None:
        return {**row, "success": False, "status": out.status}
    r = out.report
    return {**row, "e_pos_m": r.e_pos, "e_rot_deg": r.e_rot, "success": r.success,
            "status": out.status}


def augment(task_cfg, exp, variants=None, seeds=None, workers=None):
    """Run ``exp`` against each object variant with the nominal reference and cost."""
    task = task_cfg.build()
    if task.model.name != "pusher":
        raise ConfigError("augment needs a pusher task", key_path="task.name")
    variants = augment_variants() if variants is None else variants
    seeds = list(exp.seeds if seeds is None else seeds)
    jobs = [(task_cfg, exp, s, v) for v in variants for s in seeds]
    return _pool_map(_augment_job, jobs, worker_cap(workers))
