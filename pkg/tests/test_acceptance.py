"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line, collected in
the terminal summary. Long-running criteria are marked ``slow``."""

import csv
import math
import os
from pathlib import Path

import numpy as np
import pytest

from sbto.harness import cli
from sbto.harness import experiments as ex
from sbto.harness.config import experiment_from_dict, task_from_dict
from sbto.harness.io import format_trajectory, parse_trajectory
from sbto.harness.tasks import build_task
from sbto.metrics import (
    computational_efficiency,
    normalized_smoothness,
    object_pos_error,
    object_rot_error,
    smoothness,
)
from sbto.optimizers import FHTO, SBTO
from sbto.rotations import yaw_to_quat
from sbto.sampling import CemConfig, SamplingDistribution, cem_minimize
from sbto.types import PoseSeries, TimeGrid, kappa_index

from oracles import brute_force_cem, knot_lqr_cost

slow = pytest.mark.slow


def _rel(a, b):
    return abs(a - b) <= 1e-12 * max(1.0, abs(b))


def _exp(algorithm, seeds, **sections):
    data = {"experiment": {"algorithm": algorithm, "seeds": list(seeds)}}
    data.update(sections)
    return experiment_from_dict(data)


def _task(name, **options):
    data = {"task": {"name": name}}
    if options:
        data["task"]["options"] = options
    return task_from_dict(data)


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    return str(path)


# -- 1 ------------------------------------------------------------------------

def test_criterion_01_formula_fidelity(criterion):
    checks = {}
    checks["kappa_index(3, n_u=2) = 7"] = kappa_index(3, 2) == 7
    checks["kappa_index(0, n_u=1) = 0"] = kappa_index(0, 1) == 0
    cfg = CemConfig()
    checks["N_e = ceil(0.03*1024) = 31"] = cfg.n_elites == 31
    checks["N_keep = ceil(0.04*0.03*1024) = 2"] = cfg.n_keep == 2
    # 0.03 * 100 is 3.0000000000000004 in floating point
    checks["N_e = ceil(0.03*100) = 3"] = CemConfig(N=100).n_elites == 3
    checks["eta_eff = 1024*100 / 1.0"] = _rel(
        computational_efficiency(1024 * 100, TimeGrid(0.01, 100)), 102400.0)
    checks["eta_eff = 405529 / 4.6"] = _rel(
        computational_efficiency(405529, TimeGrid(0.01, 460)), 405529 / 4.6)

    ref = PoseSeries(np.zeros((3, 3)), yaw_to_quat(np.zeros(3)))
    traj = PoseSeries(np.array([[9.0, 9.0, 9.0], [0.3, 0.4, 0.0], [0.0, 0.0, 0.1]]),
                      yaw_to_quat(np.zeros(3)))
    # t = 0 excluded: (0.5 + 0.1) / 2
    checks["E_pos = 0.3"] = _rel(object_pos_error(traj, ref), 0.3)
    turned = PoseSeries(np.zeros((3, 3)), yaw_to_quat(np.full(3, np.pi / 2)))
    checks["E_rot(90 deg yaw) = 90"] = _rel(object_rot_error(turned, ref), 90.0)
    flipped = PoseSeries(np.zeros((3, 3)), -yaw_to_quat(np.full(3, 0.7)))
    same = PoseSeries(np.zeros((3, 3)), yaw_to_quat(np.full(3, 0.7)))
    checks["E_rot(q, -q) = 0"] = object_rot_error(flipped, same) == 0.0

    dt, T = 0.1, 7
    q = (np.arange(T + 1) ** 2 * dt * dt / 2.0)[:, None]
    checks["S(parabola) = T - 2"] = _rel(smoothness(q, dt), T - 2)
    q2 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 2.0])[:, None]
    # T = 5, terms centred at t = 2, 3, 4: (|-2| + |1| + |2|) / 0.5^2
    checks["S(fixture) = 20"] = _rel(smoothness(q2, 0.5), 20.0)
    checks["S_norm = 20 / 5"] = _rel(normalized_smoothness(20.0, 5.0)[0], 4.0)
    failed = [k for k, ok in checks.items() if not ok]
    criterion(1, not failed, f"{len(checks) - len(failed)}/{len(checks)} fixtures exact"
              + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed


# -- 2 ------------------------------------------------------------------------

def test_criterion_02_cem_matches_brute_force(criterion):
    dim, iters, seed = 10, 50, 2024
    rng = np.random.default_rng(7)
    a = rng.standard_normal((dim, dim))
    hess = a @ a.T / dim + np.eye(dim)
    center = rng.standard_normal(dim)

    def objective(x):
        d = x - center
        return np.einsum("ni,ij,nj->n", d, hess, d)

    cfg = CemConfig()
    mean0 = np.zeros(dim)
    trace = cem_minimize(objective, SamplingDistribution.isotropic(mean0, cfg.sigma0), cfg, iters,
                         np.random.default_rng(seed))
    means, covs = brute_force_cem(objective, mean0, cfg.sigma0, iters, seed)
    err = max(max(np.max(np.abs(m1 - m2)) for m1, m2 in zip(trace.means, means)),
              max(np.max(np.abs(c1 - c2)) for c1, c2 in zip(trace.covs, covs)))
    ok = len(trace.means) == iters and err <= 1e-9
    criterion(2, ok, f"max |(mu, Sigma) - oracle| over {iters} iterations = {err:.2e} (tol 1e-9)")
    assert ok


# -- 3 ------------------------------------------------------------------------

def test_criterion_03_fhto_near_lqr(criterion):
    task = build_task("double-integrator-p2p")
    problem = task.problem()
    est = FHTO(random_state=0)
    optimum = knot_lqr_cost(task, est.knot_spacing)
    ratios = []
    for seed in range(5):
        fit = FHTO(random_state=seed).fit(problem)
        ratios.append(fit.cost_ / optimum)
    ok = all(r <= 1.10 for r in ratios)
    criterion(3, ok, f"FHTO / LQR optimum = {', '.join(f'{r:.6f}' for r in ratios)} "
              f"(optimum {optimum:.6g}, need <= 1.10)")
    assert ok


# -- 4 ------------------------------------------------------------------------

CURVED = "pusher-curved-push"
CURVED_CEM = {"N": 256}


@slow
def test_criterion_04_sbto_beats_fhto(criterion):
    task_cfg = _task(CURVED)
    seeds = range(5)
    sbto = _exp("sbto", seeds, cem=CURVED_CEM, sbto={"sigma_min": 0.02})
    fhto = _exp("fhto", seeds, cem=CURVED_CEM, fhto={"budget_match": True})
    rows, summary = ex.compare(task_cfg, [sbto, fhto])
    by = {s["algorithm"]: s for s in summary}
    e = {alg: [r.get("e_pos_m") for r in rows if r["algorithm"] == alg] for alg in by}
    ok = by["sbto"]["successes"] >= 4 and by["fhto"]["successes"] <= 1
    criterion(4, ok, f"SBTO {by['sbto']['successes']}/5, FHTO {by['fhto']['successes']}/5 "
              f"(need >=4 and <=1); e_pos SBTO {_fmt(e['sbto'])} FHTO {_fmt(e['fhto'])}")
    assert ok


def _fmt(values):
    return "[" + ", ".join("nan" if v is None else f"{v:.3f}" for v in values) + "]"


# -- 5 ------------------------------------------------------------------------

@slow
def test_criterion_05_sbto_beats_sbmpc(criterion):
    task_cfg = _task("pusher-kick-coast")
    seeds = range(10)
    sbto = _exp("sbto", seeds, sbto={"sigma_min": 0.02})
    sbmpc = _exp("sbmpc", seeds, sbmpc={"plan_horizon": 0.5})
    rows, summary = ex.compare(task_cfg, [sbto, sbmpc])
    by = {s["algorithm"]: s for s in summary}
    e = {alg: [r.get("e_pos_m") for r in rows if r["algorithm"] == alg] for alg in by}
    ok = by["sbto"]["successes"] >= 8 and by["sbmpc"]["successes"] <= 3
    criterion(5, ok, f"SBTO {by['sbto']['successes']}/10, SBMPC(0.5 s) "
              f"{by['sbmpc']['successes']}/10 (need >=8 and <=3); e_pos SBTO {_fmt(e['sbto'])} "
              f"SBMPC {_fmt(e['sbmpc'])}")
    assert ok


# -- 6 ------------------------------------------------------------------------

KICK_TASK_TOML = '[task]\nname = "pusher-kick-coast"\n'


def _sbto_toml(seeds, sigma_min=0.02):
    return (f'[experiment]\nalgorithm = "sbto"\nseeds = {list(seeds)}\n\n'
            f'[knots]\nspacing = 0.25\n\n[sbto]\nsigma_min = {sigma_min}\n')


@slow
def test_criterion_06_effective_horizon(criterion, tmp_path):
    task = _write(tmp_path / "task.toml", KICK_TASK_TOML)
    exp = _write(tmp_path / "exp.toml", _sbto_toml(range(5)))
    out = tmp_path / "out"
    code = cli.main(["effective-horizon", "--task", task, "--experiment", exp, "--out", str(out)])
    summary = _read_csv(out / "effective_horizon_summary.csv")
    t1 = [float(r["t1"]) for r in summary if r["t1"]]
    t0 = build_task("pusher-kick-coast").t0
    need = t0 + 4 * 0.25
    med = float(np.median(t1)) if t1 else math.nan
    ok = code == 0 and len(t1) == 5 and med >= need - 1e-9
    criterion(6, ok, f"median t1 = {med:.3g} s over {len(t1)} seeds (t1 {_fmt(t1)}; "
              f"need >= t0 + 4 knot intervals = {need:.3g} s)")
    assert ok


# -- 7 ------------------------------------------------------------------------

@slow
def test_criterion_07_sigma_min_sweep(criterion, tmp_path):
    task = _write(tmp_path / "task.toml", KICK_TASK_TOML)
    exp = _write(tmp_path / "exp.toml", _sbto_toml(range(3)))
    out = tmp_path / "out"
    code = cli.main(["sweep", "--task", task, "--experiment", exp, "--out", str(out),
                     "--grid", "sigma_min=0.005,0.02,0.08", "--grid", "alpha_sigma=0.1,0.2,0.4"])
    props = _read_csv(out / "sweep_properties.csv")
    medians = _read_csv(out / "sweep_median.csv")
    table = " ".join(f"({float(m['sigma_min']):g},{float(m['alpha_sigma']):g})="
                     f"{float(m['median_t1']):.3g}" for m in medians)
    broken = [f"{p['property']} at {p['at']}" for p in props if p["holds"] != "true"]
    ok = code == 0 and len(props) == 6 and not broken
    criterion(7, ok, f"median t1 {table}"
              + (f"; violated: {'; '.join(broken)}" if broken else "; all 6 properties hold"))
    assert ok


# -- 8 ------------------------------------------------------------------------

@slow
def test_criterion_08_smoothness_direction(criterion):
    task_cfg = _task("pusher-push-0.3m")
    seeds = range(10)
    sbto = _exp("sbto", seeds, sbto={"sigma_min": 0.02})
    sbmpc = _exp("sbmpc", seeds)
    rows, _ = ex.compare(task_cfg, [sbto, sbmpc])
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["algorithm"]] = r
    paired = [(p["sbto"]["smoothness_norm"], p["sbmpc"]["smoothness_norm"])
              for p in by_seed.values()
              if p["sbto"].get("success") is True and p["sbmpc"].get("success") is True]
    smoother = sum(a <= b for a, b in paired)
    ok = smoother >= 8
    pairs = ", ".join(f"{a:.2f}/{b:.2f}" for a, b in paired)
    criterion(8, ok, f"SBTO S_norm <= SBMPC S_norm in {smoother}/{len(paired)} paired successes "
              f"(need >= 8 of 10 seeds); SBTO/SBMPC {pairs}")
    assert ok


# -- 9 ------------------------------------------------------------------------

@slow
def test_criterion_09_augmentation(criterion, tmp_path):
    task = _write(tmp_path / "task.toml", '[task]\nname = "pusher-push-0.3m"\n')
    exp = _write(tmp_path / "exp.toml", _sbto_toml([0]))
    out = tmp_path / "out"
    code = cli.main(["augment", "--task", task, "--experiment", exp, "--out", str(out),
                     "--mass", "0.25", "0.5", "1", "2", "4", "--size", "0.75", "1", "1.25",
                     "--shapes", "box", "disk"])
    rows = _read_csv(out / "augment.csv")
    failed = [r["variant"] for r in rows if r["success"] != "true"]
    ok = code == 0 and len(rows) == 8 and not failed
    errs = ", ".join(f"{r['variant']}={float(r['e_pos_m']):.3f}" if r["e_pos_m"] else
                     f"{r['variant']}=n/a" for r in rows)
    criterion(9, ok, f"{len(rows) - len(failed)}/{len(rows)} variants succeed; e_pos {errs}")
    assert ok


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_budget_identity(criterion):
    checks = []
    for name, N in (("double-integrator-p2p", 64), ("pusher-push-0.3m", 32)):
        task = build_task(name)
        for seed in (0, 1):
            est = SBTO(sigma_min=0.02, N=N, random_state=seed).fit(task.problem())
            running = 0
            ok = True
            for e in est.run_record_.entries:
                running += N * e.tau_k
                ok &= e.n_sim == running
            checks.append(ok and est.n_sim_ == running and est.run_record_.n_sim == running)
    task = build_task("double-integrator-p2p")
    N, I = 64, 7
    fhto = FHTO(iterations=I, N=N, random_state=0).fit(task.problem())
    eta = computational_efficiency(fhto.n_sim_, task.grid)
    eta_ok = fhto.n_sim_ == N * I * task.grid.T and _rel(eta, N * I / task.grid.dt)
    ok = all(checks) and eta_ok
    criterion(10, ok, f"SBTO n_sim = N sum tau_k in {sum(checks)}/{len(checks)} runs; "
              f"FHTO eta_eff = {eta:.10g} vs N I / dt = {N * I / task.grid.dt:.10g}")
    assert ok


# -- 11 -----------------------------------------------------------------------

def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*"))
            if p.is_file()}


def test_criterion_11_determinism_and_round_trip(criterion, tmp_path):
    task = _write(tmp_path / "task.toml", '[task]\nname = "double-integrator-p2p"\n')
    pusher = _write(tmp_path / "pusher.toml",
                    '[task]\nname = "pusher-push-0.3m"\noptions = { duration = 0.5, '
                    'push_start = 0.05, push_end = 0.45, distance = 0.05 }\n')
    kick = _write(tmp_path / "kick.toml",
                  '[task]\nname = "pusher-kick-coast"\nt0 = 0.3\n'
                  'options = { duration = 0.8, distance = 0.15, lag_end = 0.3 }\n')
    small = '[cem]\nN = 16\n'
    sb = _write(tmp_path / "sbto.toml", _sbto_toml([0, 1], 0.08) + small)
    fh = _write(tmp_path / "fhto.toml", '[experiment]\nalgorithm = "fhto"\nseeds = [0, 1]\n'
                '[fhto]\nbudget_match = true\n' + small)
    mpc = _write(tmp_path / "sbmpc.toml", '[experiment]\nalgorithm = "sbmpc"\nseeds = [0, 1]\n'
                 '[sbmpc]\nplan_horizon = 0.3\niterations_per_replan = 2\n' + small)
    commands = {
        "refine": ["refine", "--task", task, "--experiment", sb],
        "refine-sbmpc": ["refine", "--task", task, "--experiment", mpc],
        "compare": ["compare", "--task", task, "--experiment", sb, fh],
        "effective-horizon": ["effective-horizon", "--task", kick, "--experiment", sb],
        "sweep": ["sweep", "--task", kick, "--experiment", sb, "--grid", "sigma_min=0.02,0.08",
                  "--grid", "alpha_sigma=0.2"],
        "augment": ["augment", "--task", pusher, "--experiment", sb, "--mass", "2",
                    "--size", "1", "--shapes", "box", "--seed", "0"],
        "validate-config": ["validate-config", "--task", task, "--experiment", sb, fh, mpc],
    }
    differing = []
    for name, argv in commands.items():
        trees = []
        for rep in range(2):
            out = tmp_path / f"{name}-{rep}"
            extra = [] if name == "validate-config" else ["--out", str(out)]
            code = cli.main(argv + extra)
            trees.append((code, _tree(out) if out.exists() else {}))
        if trees[0] != trees[1] or trees[0][1] == {} and name != "validate-config":
            differing.append(name)

    exact = True
    for name in ("pusher-push-0.3m", "pusher-kick-coast", "double-integrator-p2p"):
        t = build_task(name)
        fit = SBTO(sigma_min=0.08, N=16, random_state=3).fit(t.problem())
        for obj in (fit.trajectory_, t.reference):
            text = format_trajectory(obj)
            back = parse_trajectory(text, t.model)
            exact &= format_trajectory(back) == text
            exact &= np.array_equal(back.q, obj.q)
    ok = not differing and exact
    criterion(11, ok, f"{len(commands) - len(differing)}/{len(commands)} CLI commands "
              f"byte-identical on re-run; trajectory round trip "
              f"{'bit-exact' if exact else 'NOT exact'}"
              + (f"; differing: {', '.join(differing)}" if differing else ""))
    assert ok
