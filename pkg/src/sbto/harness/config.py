"""Strict TOML task and experiment files.

Every section rejects unknown keys and reports errors with the dotted key path,
e.g. ``sbto.sigma_min: required key is missing``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..costs import CostSpec, CostTerm
from ..dynamics import CartPole, DoubleIntegrator, Pendulum, PlanarPusher
from ..exceptions import ConfigError
from ..knots import KINDS
from ..metrics import POS_THRESHOLD, ROT_THRESHOLD_DEG
from ..optimizers import FHTO, SBMPC, SBTO
from ..types import State
from .tasks import BUILTIN_TASKS, TaskSpec, build_task

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = ("sbto", "fhto", "sbmpc")
MODELS = {cls.name: cls for cls in (DoubleIntegrator, Pendulum, CartPole, PlanarPusher)}
_MISSING = object()


class Section:
    """Typed, path-aware access to one table of a parsed TOML document."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError("expected a table", key_path=path or None)
        self.data = data
        self.path = path
        self.used = set()

    def _key(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, kind, default=_MISSING, check=None):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError("required key is missing", key_path=self._key(key))
            return default
        value = self.data[key]
        try:
            value = _coerce(value, kind)
            if check is not None:
                check(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), key_path=self._key(key)) from None
        return value

    def section(self, key, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError("required section is missing", key_path=self._key(key))
            return Section({}, self._key(key))
        return Section(self.data[key], self._key(key))

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            where = self.path or "top level"
            raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}",
                              key_path=self._key(unknown[0]))


def _coerce(value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {type(value).__name__}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {type(value).__name__}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise TypeError(f"expected an array, got {type(value).__name__}")
        return value
    return kind(value)


def _positive(v):
    if not (v > 0 and math.isfinite(v)):
        raise ValueError(f"must be > 0, got {v}")


def _nonneg(v):
    if not (v >= 0 and math.isfinite(v)):
        raise ValueError(f"must be >= 0, got {v}")


def _unit(v):
    if not 0 <= v <= 1:
        raise ValueError(f"must lie in [0, 1], got {v}")


def _one_of(options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(map(str, options))}, got {v!r}")
    return check


def read_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# -- task files ------------------------------------------------------------

@dataclass
class TaskConfig:
    name: str
    options: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    reference: Optional[str] = None
    model_type: Optional[str] = None
    cost_terms: Optional[list] = None
    pos_threshold: Optional[float] = None
    rot_threshold: Optional[float] = None
    t0: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    def build(self):
        """Resolve into a runnable :class:`TaskSpec`."""
        if self.reference is None:
            try:
                spec = build_task(self.name, self.model or None, **self.options)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(str(exc), key_path="task.options") from None
        else:
            spec = self._from_file()
        if self.cost_terms is not None:
            spec.cost = _cost_spec(self.cost_terms)
            spec.cost.validate(spec.reference, spec.model)
        if self.pos_threshold is not None:
            spec.pos_threshold = self.pos_threshold
        if self.rot_threshold is not None:
            spec.rot_threshold = self.rot_threshold
        if self.t0 is not None:
            spec.t0 = self.t0
        return spec

    def _from_file(self):
        from .io import read_trajectory

        try:
            cls = MODELS[self.model_type]
            model = cls(**self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), key_path="model") from None
        ref = read_trajectory(self.reference, model)
        if ref.__class__.__name__ != "ReferenceTrajectory":
            raise ConfigError("reference file must not contain u_* columns", key_path="task.reference")
        if abs(ref.grid.dt - model.dt) > 1e-12:
            model = cls(**{**self.model, "dt": ref.grid.dt})
        if self.cost_terms is None:
            raise ConfigError("a file reference needs [[cost.terms]]", key_path="cost.terms")
        cost = _cost_spec(self.cost_terms)
        cost.validate(ref, model)
        x0 = State(ref.q[0], ref.velocities()[0])
        return TaskSpec(self.name, model, ref, cost, x0, POS_THRESHOLD, ROT_THRESHOLD_DEG)


def _cost_spec(terms):
    return CostSpec(tuple(CostTerm(**t) for t in terms))


def _parse_cost_terms(root):
    if "cost" not in root.data:
        root.used.add("cost")
        return None
    cost = root.section("cost")
    items = cost.get("terms", list)
    cost.finish()
    out = []
    for i, item in enumerate(items):
        s = Section(item, f"cost.terms[{i}]")
        term = {
            "kind": s.get("kind", str),
            "weight": s.get("weight", float, check=_nonneg),
            "channel": s.get("channel", str, None),
        }
        idx = s.get("indices", list, None)
        term["indices"] = None if idx is None else tuple(_coerce(x, int) for x in idx)
        s.finish()
        try:
            CostTerm(**term)
        except ConfigError as exc:
            raise ConfigError(str(exc), key_path=f"cost.terms[{i}]") from None
        out.append(term)
    return out


def task_from_dict(data):
    root = Section(data, "")
    task = root.section("task", required=True)
    reference = task.get("reference", str, None)
    if reference is None:
        name = task.get("name", str, check=_one_of(sorted(BUILTIN_TASKS)))
        model_type = None
    else:
        name = task.get("name", str, os.path.splitext(os.path.basename(reference))[0])
        model_type = task.get("model", str, check=_one_of(sorted(MODELS)))
    options = dict(task.raw("options", {}) or {})
    t0 = task.get("t0", float, None, check=_positive)
    task.finish()
    model = root.raw("model", {})
    if not isinstance(model, dict):
        raise ConfigError("expected a table", key_path="model")
    success = root.section("success")
    pos = success.get("pos_threshold", float, None, check=_positive)
    rot = success.get("rot_threshold", float, None, check=_positive)
    success.finish()
    cost_terms = _parse_cost_terms(root)
    root.finish()
    return TaskConfig(name, options, dict(model), reference, model_type, cost_terms, pos, rot, t0)


def load_task(path):
    cfg = task_from_dict(read_toml(path))
    if cfg.reference is not None and not os.path.isabs(cfg.reference):
        cfg.reference = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.reference)
    return cfg


# -- experiment files ------------------------------------------------------

@dataclass
class ExperimentConfig:
    algorithm: str
    seeds: list
    output: Optional[str] = None
    label: Optional[str] = None
    workers: Optional[int] = None
    snapshots: bool = False
    knot_spacing: float = 0.25
    interpolation: str = "linear"
    cem: dict = field(default_factory=dict)
    temperature: Optional[float] = None
    algo: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.label or self.algorithm

    def to_dict(self):
        return asdict(self)

    def estimator(self, seed, n_workers=None, snapshots=None, **overrides):
        """Estimator for one seed; ``overrides`` replace algorithm parameters."""
        common = dict(self.cem, knot_spacing=self.knot_spacing, interpolation=self.interpolation,
                      snapshots=self.snapshots if snapshots is None else snapshots,
                      n_workers=n_workers if n_workers is not None else self.workers,
                      random_state=seed)
        params = {k: v for k, v in self.algo.items() if k != "budget_match"}
        params.update(overrides)
        if self.algorithm == "sbto":
            return SBTO(**params, **common)
        if self.algorithm == "fhto":
            return FHTO(temperature=self.temperature, **params, **common)
        return SBMPC(temperature=self.temperature, **params, **common)


CEM_DEFAULTS = {"N": 1024, "rho_e": 0.03, "rho_k": 0.04, "alpha_mu": 0.95, "alpha_sigma": 0.2,
                "sigma0": 0.25, "cov_jitter": 1e-8}


def _seeds(v):
    if not v:
        raise ValueError("seeds must be a non-empty array")
    if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in v):
        raise ValueError("seeds must be non-negative integers")
    if len(set(v)) != len(v):
        raise ValueError("seeds must be distinct")


def experiment_from_dict(data):
    root = Section(data, "")
    exp = root.section("experiment", required=True)
    algorithm = exp.get("algorithm", str, check=_one_of(ALGORITHMS))
    seeds = exp.get("seeds", list, check=_seeds)
    output = exp.get("output", str, None)
    label = exp.get("label", str, None)
    workers = exp.get("workers", int, None, check=_positive)
    snapshots = exp.get("snapshots", bool, False)
    exp.finish()

    knots = root.section("knots")
    spacing = knots.get("spacing", float, 0.25, check=_positive)
    interpolation = knots.get("interpolation", str, "linear", check=_one_of(KINDS))
    knots.finish()

    cem_s = root.section("cem")
    cem = {
        "N": cem_s.get("N", int, CEM_DEFAULTS["N"], check=lambda v: _at_least(v, 2)),
        "rho_e": cem_s.get("rho_e", float, CEM_DEFAULTS["rho_e"], check=_unit_open),
        "rho_k": cem_s.get("rho_k", float, CEM_DEFAULTS["rho_k"], check=_unit),
        "alpha_mu": cem_s.get("alpha_mu", float, CEM_DEFAULTS["alpha_mu"], check=_unit),
        "alpha_sigma": cem_s.get("alpha_sigma", float, CEM_DEFAULTS["alpha_sigma"], check=_unit),
        "sigma0": cem_s.get("sigma0", float, CEM_DEFAULTS["sigma0"], check=_positive),
        "cov_jitter": cem_s.get("cov_jitter", float, CEM_DEFAULTS["cov_jitter"], check=_nonneg),
    }
    cem_s.finish()

    mppi = root.section("mppi")
    temperature = mppi.get("temperature", float, None, check=_positive)
    mppi.finish()

    algo = {}
    if algorithm == "sbto":
        s = root.section("sbto")
        algo["sigma_min"] = s.get("sigma_min", float, check=_positive)
        algo["max_iters_per_increment"] = s.get("max_iters_per_increment", int, 400,
                                                check=lambda v: _at_least(v, 1))
        algo["min_iters_per_increment"] = s.get("min_iters_per_increment", int, 1,
                                                check=lambda v: _at_least(v, 0))
        s.finish()
    elif algorithm == "fhto":
        s = root.section("fhto")
        algo["iterations"] = s.get("iterations", int, 100, check=lambda v: _at_least(v, 1))
        algo["update"] = s.get("update", str, "cem", check=_one_of(("cem", "mppi")))
        horizon = s.get("horizon", int, None, check=lambda v: _at_least(v, 1))
        if horizon is not None:
            algo["horizon"] = horizon
        algo["budget_match"] = s.get("budget_match", bool, False)
        s.finish()
    else:
        s = root.section("sbmpc")
        algo["plan_horizon"] = s.get("plan_horizon", float, 1.2, check=_positive)
        algo["replan_interval"] = s.get("replan_interval", int, 25, check=lambda v: _at_least(v, 1))
        algo["iterations_per_replan"] = s.get("iterations_per_replan", int, 20,
                                              check=lambda v: _at_least(v, 1))
        algo["update"] = s.get("update", str, "cem", check=_one_of(("cem", "mppi")))
        s.finish()
    for other in ALGORITHMS:
        if other != algorithm and other in root.data:
            raise ConfigError(f"section [{other}] does not apply to algorithm {algorithm!r}",
                              key_path=other)
    root.finish()
    cfg = ExperimentConfig(algorithm, list(seeds), output, label, workers, snapshots, spacing,
                           interpolation, cem, temperature, algo)
    _check_estimator(cfg)
    return cfg


def _check_estimator(cfg):
    from ..optimizers import SbmpcConfig, SbtoConfig
    from ..sampling import CemConfig

    try:
        CemConfig(**cfg.cem)
        if cfg.algorithm == "sbto":
            SbtoConfig(cfg.algo["sigma_min"], cfg.algo["max_iters_per_increment"],
                       cfg.algo["min_iters_per_increment"], cfg.interpolation)
        elif cfg.algorithm == "sbmpc":
            SbmpcConfig(cfg.algo["plan_horizon"], cfg.algo["replan_interval"],
                        cfg.algo["iterations_per_replan"], cfg.knot_spacing, cfg.interpolation)
    except ConfigError as exc:
        raise ConfigError(str(exc), key_path=cfg.algorithm) from None
    except ValueError as exc:
        raise ConfigError(str(exc), key_path="cem") from None


def _at_least(v, lo):
    if v < lo:
        raise ValueError(f"must be >= {lo}, got {v}")


def _unit_open(v):
    if not 0 < v <= 1:
        raise ValueError(f"must lie in (0, 1], got {v}")


def load_experiment(path):
    return experiment_from_dict(read_toml(path))


def config_hash(*parts):
    """SHA-256 of the canonical JSON of resolved config dicts."""
    blob = json.dumps([p.to_dict() if hasattr(p, "to_dict") else p for p in parts],
                      sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
