"""Readers and writers for every file the CLI consumes or produces.

Floats are written with 17 significant digits so a write/read round trip is
bit-exact.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from botw.errors import BotwError
from botw.geometry import ArmSet, DesignResult, validate_arm_set

TRACE_COLUMNS = ("t", "regret_expected", "regret_realized", "entropy_q", "beta", "gamma",
                 "one_minus_qstar", "clips")
INT_COLUMNS = ("t", "clips")


class InputFileError(BotwError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _parse_float(path, line, text):
    try:
        return float(text)
    except ValueError:
        raise InputFileError(path, f"not a number: {text!r}", line) from None


def _read_csv_rows(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputFileError(path, f"cannot read file ({exc.strerror})") from None
    rows = list(csv.reader(io.StringIO(text)))
    # (line number, cells), blank lines dropped
    numbered = [(i + 1, [c.strip() for c in r]) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not numbered:
        raise InputFileError(path, "file is empty")
    return path, numbered


# -- arm sets --------------------------------------------------------------------

def read_arm_set(path) -> ArmSet:
    """CSV ``id,x1,...,xd`` or a JSON array of ``{"id": ..., "vector": [...]}``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _read_arm_set_json(path)
    path, rows = _read_csv_rows(path)
    header_line, header = rows[0]
    d = len(header) - 1
    if d < 1 or header[0] != "id" or header[1:] != [f"x{k}" for k in range(1, d + 1)]:
        raise InputFileError(path, "header must be id,x1,...,xd", header_line)
    ids, vectors = [], []
    for line, cells in rows[1:]:
        if len(cells) != d + 1:
            raise InputFileError(path, f"expected {d + 1} fields, got {len(cells)}", line)
        ids.append(cells[0])
        vectors.append([_parse_float(path, line, c) for c in cells[1:]])
    if len(set(ids)) != len(ids):
        raise InputFileError(path, "duplicate arm ids")
    return validate_arm_set(vectors, ids=ids) if vectors else validate_arm_set([], ids=[])


def _read_arm_set_json(path: Path) -> ArmSet:
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputFileError(path, f"cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InputFileError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, list):
        raise InputFileError(path, "expected a JSON array of {id, vector} objects")
    ids, vectors = [], []
    for k, item in enumerate(doc):
        if not isinstance(item, dict) or "id" not in item or "vector" not in item:
            raise InputFileError(path, f"entry {k} must have 'id' and 'vector'")
        ids.append(str(item["id"]))
        vectors.append([float(v) for v in item["vector"]])
    return validate_arm_set(vectors, ids=ids)


def write_arm_set_csv(path, arms: ArmSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"x{k}" for k in range(1, arms.d + 1)])
        for arm_id, vec in zip(arms.ids, arms.arms):
            w.writerow([arm_id] + [fmt(v) for v in vec])


# -- designs -----------------------------------------------------------------------

def design_to_dict(arms: ArmSet, result: DesignResult) -> dict:
    return {
        "weights": {str(i): float(w) for i, w in zip(arms.ids, result.pi)},
        "g_value": result.g_value,
        "iterations": result.iterations,
        "converged": result.converged,
    }


def write_design_json(path, arms: ArmSet, result: DesignResult) -> None:
    write_json(path, design_to_dict(arms, result))


# -- theta sequences and corruption schedules ---------------------------------------

def read_theta_sequence(path) -> np.ndarray:
    """CSV ``t,theta1,...,thetad`` with t = 1, 2, ... in order."""
    path, rows = _read_csv_rows(path)
    header_line, header = rows[0]
    d = len(header) - 1
    if d < 1 or header[0] != "t" or header[1:] != [f"theta{k}" for k in range(1, d + 1)]:
        raise InputFileError(path, "header must be t,theta1,...,thetad", header_line)
    out = []
    for expect, (line, cells) in enumerate(rows[1:], start=1):
        if len(cells) != d + 1:
            raise InputFileError(path, f"expected {d + 1} fields, got {len(cells)}", line)
        if cells[0] != str(expect):
            raise InputFileError(path, f"expected t={expect}, got {cells[0]!r}", line)
        out.append([_parse_float(path, line, c) for c in cells[1:]])
    if not out:
        raise InputFileError(path, "no rounds in theta sequence")
    return np.array(out)


def write_theta_sequence(path, thetas) -> None:
    thetas = np.asarray(thetas, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"theta{k}" for k in range(1, thetas.shape[1] + 1)])
        for t, row in enumerate(thetas, start=1):
            w.writerow([t] + [fmt(v) for v in row])


def write_corruption_csv(path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "c"])
        for t, c in enumerate(values, start=1):
            w.writerow([t, fmt(c)])


def read_corruption_csv(path) -> np.ndarray:
    path, rows = _read_csv_rows(path)
    if rows[0][1] != ["t", "c"]:
        raise InputFileError(path, "header must be t,c", rows[0][0])
    out = []
    for expect, (line, cells) in enumerate(rows[1:], start=1):
        if len(cells) != 2 or cells[0] != str(expect):
            raise InputFileError(path, f"expected row t={expect}", line)
        out.append(_parse_float(path, line, cells[1]))
    return np.array(out)


# -- traces ----------------------------------------------------------------------------

def trace_csv_text(traces) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        cols = [tr.rows[c] for c in TRACE_COLUMNS]
        for vals in zip(*cols):
            w.writerow([fmt(v) for v in vals])
    return buf.getvalue()


def write_trace_csv(path, traces) -> None:
    """All repetitions in rep order; ``t`` restarts at each new repetition."""
    Path(path).write_text(trace_csv_text(traces))


def read_trace_csv(path) -> list:
    """Inverse of ``write_trace_csv``: one dict of column arrays per repetition."""
    from botw.harness import RegretTrace

    path, rows = _read_csv_rows(path)
    header_line, header = rows[0]
    if tuple(header) != TRACE_COLUMNS:
        raise InputFileError(path, f"header must be {','.join(TRACE_COLUMNS)}", header_line)
    groups, current, last_t = [], [], None
    for line, cells in rows[1:]:
        if len(cells) != len(TRACE_COLUMNS):
            raise InputFileError(path, f"expected {len(TRACE_COLUMNS)} fields, got {len(cells)}", line)
        vals = []
        for name, cell in zip(TRACE_COLUMNS, cells):
            if name in INT_COLUMNS:
                try:
                    vals.append(int(cell))
                except ValueError:
                    raise InputFileError(path, f"column {name} needs an integer, got {cell!r}",
                                         line) from None
            else:
                vals.append(_parse_float(path, line, cell))
        if last_t is not None and vals[0] <= last_t:
            groups.append(current)
            current = []
        current.append(vals)
        last_t = vals[0]
    if current:
        groups.append(current)
    if not groups:
        raise InputFileError(path, "trace has no rows")
    traces = []
    for g in groups:
        cols = list(zip(*g))
        rows_d = {}
        for name, col in zip(TRACE_COLUMNS, cols):
            rows_d[name] = np.array(col, dtype=np.int64 if name in INT_COLUMNS else float)
        traces.append(RegretTrace(rows=rows_d, meta={}, totals=None))
    return traces


# -- JSON -------------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise InputFileError(path, f"cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InputFileError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
