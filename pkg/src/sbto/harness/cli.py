"""Command line: ``sbto <command> --task TASK.toml --experiment EXP.toml ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 refinement failure,
3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..exceptions import ConfigError, TrajectoryFormatError
from . import experiments as ex
from .config import config_hash, load_experiment, load_task
from .io import write_record, write_rows, write_trajectory

log = logging.getLogger("sbto")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_GRID = {"sigma_min": [0.005, 0.02, 0.08], "alpha_sigma": [0.1, 0.2, 0.4]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="sbto", description="Sampling-based trajectory refinement experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, experiments=1):
        sp.add_argument("--task", required=True, help="task TOML file")
        if experiments == 1:
            sp.add_argument("--experiment", required=True, help="experiment TOML file")
        else:
            sp.add_argument("--experiment", required=True, nargs="+",
                            help="two or more experiment TOML files")
        sp.add_argument("--seeds", type=int, nargs="+", help="override the experiment seeds")
        sp.add_argument("--seed", type=int, dest="seed", help="run a single seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="worker cap (default: SBTO_WORKERS or 1)")

    common(sub.add_parser("refine", help="refine a reference with one experiment"))
    common(sub.add_parser("compare", help="compare experiments on the same seeds"), experiments=2)
    eh = sub.add_parser("effective-horizon", help="error at t0 across iterations")
    common(eh)
    eh.add_argument("--t0", type=float, help="seconds (default: task t0)")
    sw = sub.add_parser("sweep", help="effective horizon over sigma_min x alpha_sigma")
    common(sw)
    sw.add_argument("--t0", type=float)
    sw.add_argument("--grid", action="append", default=[],
                    help="axis=v1,v2,... for sigma_min or alpha_sigma (repeatable)")
    au = sub.add_parser("augment", help="object mass/size/shape variants")
    common(au)
    au.add_argument("--mass", type=float, nargs="+", default=list(ex.MASS_FACTORS))
    au.add_argument("--size", type=float, nargs="+", default=list(ex.SIZE_FACTORS))
    au.add_argument("--shapes", nargs="+", default=list(ex.SHAPES), choices=ex.SHAPES)
    vc = sub.add_parser("validate-config", help="parse and resolve config files")
    vc.add_argument("--task")
    vc.add_argument("--experiment", nargs="*", default=[])
    return p


def _seeds(args, exp):
    if args.seed is not None:
        return [args.seed]
    if args.seeds:
        if len(set(args.seeds)) != len(args.seeds):
            raise ConfigError("seeds must be distinct", key_path="--seeds")
        return args.seeds
    return exp.seeds


def _out(args, exp):
    return args.out or exp.output or "sbto-out"


def _header(digest, **extra):
    return [f"config_sha256={digest}"] + [f"{k}={v}" for k, v in extra.items()]


def parse_grid(items):
    grid = dict(DEFAULT_GRID)
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or key not in DEFAULT_GRID:
            raise ConfigError(f"expected sigma_min=... or alpha_sigma=..., got {item!r}",
                              key_path="--grid")
        try:
            grid[key] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad number in {item!r}", key_path="--grid") from None
        if not grid[key]:
            raise ConfigError(f"empty axis {key}", key_path="--grid")
    return grid


def cmd_refine(args):
    task_cfg, exp = load_task(args.task), load_experiment(args.experiment)
    task = task_cfg.build()
    seeds = _seeds(args, exp)
    out = _out(args, exp)
    digest = config_hash(task_cfg, exp)
    outcomes = ex.refine(task_cfg, exp, seeds, args.workers)
    rows = []
    code = EXIT_OK
    for o in outcomes:
        stem = os.path.join(out, f"{task.name}_{exp.name}_seed{o.seed}")
        meta = {"config_sha256": digest, "task": task.name, "seed": o.seed}
        if o.estimator is not None:
            write_trajectory(stem + ".csv", o.estimator.trajectory_,
                             _header(digest, task=task.name, algorithm=exp.name, seed=o.seed))
            write_record(stem + ".jsonl", o.estimator.run_record_, meta)
        row = o.row(task.name, exp.name)
        rows.append(row)
        if not row.get("success"):
            code = EXIT_FAILED
        _print_row(row)
    write_rows(os.path.join(out, "report.csv"), ex.ROW_COLUMNS, rows, _header(digest))
    return code


def _print_row(row):
    if row.get("e_pos_m") is None:
        print(f"{row['algorithm']} seed={row['seed']} status={row['status']}")
        return
    print(f"{row['algorithm']} seed={row['seed']} e_pos={row['e_pos_m']:.4g} m "
          f"e_rot={row['e_rot_deg']:.3g} deg success={row['success']} n_sim={row['n_sim']} "
          f"S_norm={row['smoothness_norm']:.3g}")


def cmd_compare(args):
    task_cfg = load_task(args.task)
    exps = [load_experiment(p) for p in args.experiment]
    seeds = _seeds(args, exps[0]) if (args.seed is not None or args.seeds) else None
    out = _out(args, exps[0])
    digest = config_hash(task_cfg, *exps)
    rows, summary = ex.compare(task_cfg, exps, seeds, args.workers)
    write_rows(os.path.join(out, "compare.csv"), ex.ROW_COLUMNS, rows, _header(digest))
    write_rows(os.path.join(out, "compare_summary.csv"), ex.SUMMARY_COLUMNS, summary,
               _header(digest))
    for s in summary:
        print(f"{s['algorithm']}: {s['successes']}/{s['runs']} successful "
              f"({s['success_pct']:.1f}%), mean S_norm {s['mean_smoothness_norm']:.3g}, "
              f"mean eta_eff {s['mean_eta_eff']:.4g}")
    return EXIT_OK


def cmd_effective_horizon(args):
    task_cfg, exp = load_task(args.task), load_experiment(args.experiment)
    out = _out(args, exp)
    digest = config_hash(task_cfg, exp, {"t0": args.t0})
    trace, summary = ex.effective_horizon_runs(task_cfg, exp, args.t0, _seeds(args, exp),
                                               args.workers)
    write_rows(os.path.join(out, "effective_horizon.csv"), ex.EH_COLUMNS, trace, _header(digest))
    write_rows(os.path.join(out, "effective_horizon_summary.csv"), ex.EH_SUMMARY_COLUMNS,
               summary, _header(digest))
    for s in summary:
        if s.get("t1") is None:
            print(f"seed={s['seed']} status={s['status']}")
        else:
            print(f"seed={s['seed']} i0={s['i0']} i1={s['i1']} t1={s['t1']:.3g} s")
    print(f"median t1 = {ex.median_t1(summary):.3g} s")
    return EXIT_OK


def cmd_sweep(args):
    task_cfg, exp = load_task(args.task), load_experiment(args.experiment)
    grid = parse_grid(args.grid)
    out = _out(args, exp)
    digest = config_hash(task_cfg, exp, {"t0": args.t0, "grid": grid})
    raw, medians, props = ex.sweep(task_cfg, exp, grid["sigma_min"], grid["alpha_sigma"],
                                   args.t0, _seeds(args, exp), args.workers)
    write_rows(os.path.join(out, "sweep.csv"), ex.SWEEP_COLUMNS, raw, _header(digest))
    write_rows(os.path.join(out, "sweep_median.csv"), ex.SWEEP_MEDIAN_COLUMNS, medians,
               _header(digest))
    prop_rows = [{**p, "values": " ".join(f"{v:.17g}" for v in p["values"])} for p in props]
    write_rows(os.path.join(out, "sweep_properties.csv"), ("property", "at", "values", "holds"),
               prop_rows, _header(digest))
    for m in medians:
        print(f"sigma_min={m['sigma_min']:g} alpha_sigma={m['alpha_sigma']:g} "
              f"median t1={m['median_t1']:.3g} s")
    for p in props:
        print(f"{p['property']} at {p['at']}: {'holds' if p['holds'] else 'violated'}")
    return EXIT_OK


def cmd_augment(args):
    task_cfg, exp = load_task(args.task), load_experiment(args.experiment)
    out = _out(args, exp)
    variants = ex.augment_variants(args.mass, args.size, args.shapes)
    digest = config_hash(task_cfg, exp, {"variants": variants})
    rows = ex.augment(task_cfg, exp, variants, _seeds(args, exp), args.workers)
    write_rows(os.path.join(out, "augment.csv"), ex.AUGMENT_COLUMNS, rows, _header(digest))
    for r in rows:
        print(f"{r['variant']} seed={r['seed']} success={r['success']} status={r['status']}")
    return EXIT_OK if all(r["success"] for r in rows) else EXIT_FAILED


def cmd_validate(args):
    if not args.task and not args.experiment:
        raise UsageError("give --task and/or --experiment")
    if args.task:
        load_task(args.task).build()
        print(f"{args.task}: ok")
    for path in args.experiment:
        load_experiment(path)
        print(f"{path}: ok")
    return EXIT_OK


COMMANDS = {
    "refine": cmd_refine,
    "compare": cmd_compare,
    "effective-horizon": cmd_effective_horizon,
    "sweep": cmd_sweep,
    "augment": cmd_augment,
    "validate-config": cmd_validate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"sbto: usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sbto: usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, TrajectoryFormatError) as exc:
        print(f"sbto: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        log.debug("internal error", exc_info=True)
        print(f"sbto: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
