"""CSV trace and key = value summary files.

Floats are written with 17 significant digits so a reload is bit-exact.
"""

import csv
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .simulation import Trace

__all__ = ["trace_header", "write_trace", "read_trace", "write_summary", "read_summary",
           "format_value"]

_SCALARS_BEFORE = ("grad_norm", "cost_gap")


def trace_header(n_v):
    vec = lambda name: [f"{name}[{i}]" for i in range(n_v)]
    return (["t"] + vec("v") + vec("v_star") + list(_SCALARS_BEFORE)
            + vec("sigma_true") + vec("sigma_hat") + vec("vdot_b") + vec("vdot_a")
            + ["step_elapsed_ns", "feasible"])


def _f(x):
    return format(float(x), ".17g")


def write_trace(path, trace: Trace):
    path = Path(path)
    n = trace.n_v
    order = (["v", "v_star"], ["sigma_true", "sigma_hat", "vdot_b", "vdot_a"])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(n))
        for k in range(len(trace)):
            row = [_f(trace.t[k])]
            for name in order[0]:
                row += [_f(x) for x in getattr(trace, name)[k]]
            row += [_f(trace.grad_norm[k]), _f(trace.cost_gap[k])]
            for name in order[1]:
                row += [_f(x) for x in getattr(trace, name)[k]]
            row += [str(int(trace.step_elapsed_ns[k])), "1" if trace.feasible[k] else "0"]
            w.writerow(row)


def read_trace(path) -> Trace:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty trace file")
    header = rows[0]
    n = sum(1 for h in header if h.startswith("v["))
    if header != trace_header(n):
        raise ConfigError(f"{path}: unexpected trace header")
    data = rows[1:]
    m = len(data)
    tr = Trace.empty(m, n)
    tr.oracle_elapsed_ns = None
    for k, row in enumerate(data):
        it = iter(row)
        tr.t[k] = float(next(it))
        for name in ("v", "v_star"):
            tr_col = getattr(tr, name)
            for i in range(n):
                tr_col[k, i] = float(next(it))
        tr.grad_norm[k] = float(next(it))
        tr.cost_gap[k] = float(next(it))
        for name in ("sigma_true", "sigma_hat", "vdot_b", "vdot_a"):
            tr_col = getattr(tr, name)
            for i in range(n):
                tr_col[k, i] = float(next(it))
        tr.step_elapsed_ns[k] = int(next(it))
        tr.feasible[k] = next(it) == "1"
    return tr


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _f(v)
    return str(v).replace("\n", " ")


def write_summary(path, items: dict):
    """One ``key = value`` line per item, in insertion order."""
    with Path(path).open("w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {format_value(v)}\n")


def _parse(text):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        x = float(text)
    except ValueError:
        return text
    return x if (math.isfinite(x) or text.lower() in ("inf", "-inf", "nan")) else text


def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ConfigError(f"{path}: malformed summary line {line!r}")
        out[key] = _parse(value)
    return out
