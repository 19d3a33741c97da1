"""Trajectory CSV files, run-record logs and atomic output writes.

Trajectory files have one row per state (steps 0..T). Columns are ``t``,
``q_*``, ``v_*`` and, for rolled-out trajectories, ``u_*`` (blank on the last
row). Frame and object channels follow as ``<name>.px`` ... groups with
quaternions stored as ``qw, qx, qy, qz``; contact counts as
``contact.<class>``. Floats are printed with 17 significant digits, which
round-trips float64 exactly. Leading ``#`` lines are comments.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from ..exceptions import TrajectoryFormatError
from ..types import PoseSeries, ReferenceTrajectory, TimeGrid, Trajectory

_SLOTS = (
    ("position", ("px", "py", "pz")),
    ("orientation", ("qw", "qx", "qy", "qz")),
    ("linear_velocity", ("vx", "vy", "vz")),
    ("angular_velocity", ("wx", "wy", "wz")),
)


def fmt(x):
    return format(float(x), ".17g")


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _comments(comments):
    return "".join(f"# {line}\n" for line in comments)


def _series_columns(name, series):
    cols, blocks = [], []
    for slot, suffixes in _SLOTS:
        value = getattr(series, slot)
        if value is not None:
            cols += [f"{name}.{s}" for s in suffixes]
            blocks.append(value)
    return cols, blocks


def trajectory_table(traj):
    """Header and float matrix for a :class:`Trajectory` or :class:`ReferenceTrajectory`."""
    is_ref = isinstance(traj, ReferenceTrajectory)
    q = traj.q
    v = traj.velocities() if is_ref else traj.v
    n = q.shape[0]
    dt = traj.grid.dt if is_ref else traj.dt
    header = ["t"] + [f"q_{i}" for i in range(q.shape[1])] + [f"v_{i}" for i in range(v.shape[1])]
    blocks = [np.arange(n)[:, None] * dt, q, v]
    if not is_ref:
        u = np.full((n, traj.u.shape[1]), np.nan)
        u[:-1] = traj.u
        header += [f"u_{i}" for i in range(u.shape[1])]
        blocks.append(u)
    for name in sorted(traj.frames):
        cols, arrs = _series_columns(name, traj.frames[name])
        header += cols
        blocks += arrs
    if traj.object is not None:
        cols, arrs = _series_columns("object", traj.object)
        header += cols
        blocks += arrs
    if not is_ref:
        for cls in sorted(traj.contacts):
            header.append(f"contact.{cls}")
            blocks.append(traj.contacts[cls][:, None].astype(np.float64))
    return header, np.hstack(blocks)


def format_trajectory(traj, comments=()):
    header, table = trajectory_table(traj)
    buf = io.StringIO()
    buf.write(_comments(comments))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    contact_cols = {i for i, h in enumerate(header) if h.startswith("contact.")}
    for row in table:
        writer.writerow([
            "" if math.isnan(x) else (str(int(x)) if i in contact_cols else fmt(x))
            for i, x in enumerate(row)
        ])
    return buf.getvalue()


def write_trajectory(path, traj, comments=()):
    atomic_write_text(path, format_trajectory(traj, comments))


def _parse(text):
    lines = text.splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise TrajectoryFormatError("trajectory file has no header row")
    rows = list(csv.reader(body))
    header = rows[0]
    width = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise TrajectoryFormatError(f"row {lineno} has {len(row)} fields, header has {width}")
        try:
            values.append([float(x) if x != "" else math.nan for x in row])
        except ValueError as exc:
            raise TrajectoryFormatError(f"row {lineno}: {exc}") from None
    return header, np.array(values, dtype=np.float64).reshape(-1, width), comments


def _numbered(header, prefix):
    idx = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
    names = [header[i] for i in idx]
    expected = [f"{prefix}{j}" for j in range(len(idx))]
    if names != expected:
        raise TrajectoryFormatError(f"columns {names} are not numbered {prefix}0..{prefix}{len(idx) - 1}")
    return idx


def _series(header, table, name):
    found = {}
    for slot, suffixes in _SLOTS:
        cols = [f"{name}.{s}" for s in suffixes]
        present = [c in header for c in cols]
        if any(present) and not all(present):
            missing = [c for c, p in zip(cols, present) if not p]
            raise TrajectoryFormatError(f"incomplete {name} {slot}: missing {', '.join(missing)}")
        if all(present):
            found[slot] = table[:, [header.index(c) for c in cols]]
    if "position" not in found:
        raise TrajectoryFormatError(f"channel {name!r} has no position columns")
    return PoseSeries(**found)


def parse_trajectory(text, model=None):
    """Parse CSV text into a :class:`Trajectory` (``u_*`` present) or a
    :class:`ReferenceTrajectory`; dimensions are checked against ``model``."""
    header, table, _ = _parse(text)
    if not header or header[0] != "t":
        raise TrajectoryFormatError("first column must be 't'")
    if len(set(header)) != len(header):
        raise TrajectoryFormatError("duplicate column names")
    n = table.shape[0]
    if n < 2:
        raise TrajectoryFormatError("need at least two rows")
    qi, vi, ui = (_numbered(header, p) for p in ("q_", "v_", "u_"))
    if model is not None:
        for cols, want, what in ((qi, model.n_q, "n_q"), (vi, model.n_v, "n_v")):
            if len(cols) != want:
                raise TrajectoryFormatError(
                    f"found {len(cols)} {header[cols[0]][0] if cols else '?'}_* columns, "
                    f"expected {what}={want} for model {model.name!r}")
        if ui and len(ui) != model.n_u:
            raise TrajectoryFormatError(f"found {len(ui)} u_* columns, expected n_u={model.n_u}")
    if not qi:
        raise TrajectoryFormatError("no q_* columns")
    t = table[:, 0]
    if t[0] != 0.0:
        raise TrajectoryFormatError("t must start at 0")
    dt = float(t[1])
    if not np.allclose(t, np.arange(n) * dt, rtol=1e-12, atol=0.0):
        raise TrajectoryFormatError("t column is not a uniform grid starting at 0")
    known = {"t"} | {header[i] for i in qi + vi + ui}
    groups = sorted({h.split(".", 1)[0] for h in header if "." in h and not h.startswith("contact.")})
    frames, obj = {}, None
    for g in groups:
        series = _series(header, table, g)
        if g == "object":
            obj = series
        else:
            frames[g] = series
        known |= {h for h in header if h.startswith(g + ".")}
    contacts = {h[len("contact."):]: table[:, i].astype(np.int64)
                for i, h in enumerate(header) if h.startswith("contact.")}
    known |= {f"contact.{c}" for c in contacts}
    unknown = [h for h in header if h not in known]
    if unknown:
        raise TrajectoryFormatError(f"unrecognized columns: {', '.join(unknown)}")
    q = table[:, qi]
    v = table[:, vi] if vi else None
    if ui:
        u = table[:-1][:, ui]
        if v is None:
            raise TrajectoryFormatError("a trajectory with controls needs v_* columns")
        return Trajectory(dt, q, v, u, frames, obj, contacts)
    if contacts:
        raise TrajectoryFormatError("contact columns are only valid with u_* columns")
    return ReferenceTrajectory(TimeGrid(dt, n - 1), q, v, frames, obj)


def read_trajectory(path, model=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_trajectory(text, model)
    except ValueError as exc:
        if isinstance(exc, TrajectoryFormatError):
            raise TrajectoryFormatError(f"{path}: {exc}") from None
        raise TrajectoryFormatError(f"{path}: {exc}") from exc


def read_comments(path):
    with open(path, encoding="utf-8") as fh:
        return [ln[1:].strip() for ln in fh if ln.startswith("#")]


# -- run records -------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def record_lines(record, meta=None):
    """JSON lines for a :class:`RunRecord`: a header, one line per iteration,
    and a final summary line."""
    out = [json.dumps({"type": "header", "algorithm": record.algorithm, **(meta or {})},
                      sort_keys=True)]
    for e in record.entries:
        out.append(json.dumps({
            "type": "iteration",
            "iteration": int(e.iteration),
            "k": int(e.k),
            "tau_k": int(e.tau_k),
            "best_cost": _jsonable(e.best_cost),
            "max_variance": _jsonable(e.max_variance),
            "n_sim": int(e.n_sim),
            "flags": list(e.flags),
        }, sort_keys=True))
    final = {"type": "final", "cost": _jsonable(record.final_cost), "n_sim": int(record.n_sim),
             "flags": list(record.flags)}
    if record.final_knots is not None:
        final["knots"] = [float(x) for x in record.final_knots.values]
    out.append(json.dumps(final, sort_keys=True))
    return out


def write_record(path, record, meta=None):
    atomic_write_text(path, "\n".join(record_lines(record, meta)) + "\n")


def read_record(path):
    """Parsed JSON lines of a run-record file."""
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def format_rows(columns, rows, comments=()):
    """CSV text for a list of dict rows; floats with 17 significant digits."""
    buf = io.StringIO()
    buf.write(_comments(comments))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return fmt(x)
    if x is None:
        return ""
    return str(x)


def write_rows(path, columns, rows, comments=()):
    atomic_write_text(path, format_rows(columns, rows, comments))
