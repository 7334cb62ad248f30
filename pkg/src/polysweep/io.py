"""Reading and writing problems, controls and trajectories (JSON and CSV)."""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .problem import SweepingProblem, canonical_json
from .sweeping import DiscreteQuadruple
from .transcription import DiscreteProblem


def _fmt(v):
    return format(float(v), ".17g")


def trajectory_header(n, m, d):
    cols = ["t"] + [f"x{k + 1}" for k in range(n)]
    cols += [f"a{i + 1}_{k + 1}" for i in range(m) for k in range(n)]
    cols += [f"b{i + 1}" for i in range(m)]
    cols += [f"u{k + 1}" for k in range(d)]
    cols += [f"eta{i + 1}" for i in range(m)]
    return cols


def trajectory_csv(q: DiscreteQuadruple) -> str:
    """One row per mesh node; ``u`` and ``eta`` are interval values, blank on the last node."""
    n, m, d = q.x.shape[1], q.a.shape[1], q.u.shape[1]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(n, m, d))
    for j in range(q.nu + 1):
        row = [_fmt(q.mesh[j])] + [_fmt(v) for v in q.x[j]] + [_fmt(v) for v in q.a[j].ravel()]
        row += [_fmt(v) for v in q.b[j]]
        if j < q.nu:
            row += [_fmt(v) for v in q.u[j]] + [_fmt(v) for v in q.eta[j]]
        else:
            row += [""] * (d + m)
        w.writerow(row)
    return buf.getvalue()


def trajectory_from_csv(text: str) -> DiscreteQuadruple:
    rows = list(csv.reader(_io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("b"))
    d = sum(1 for c in header if c.startswith("u"))
    if header != trajectory_header(n, m, d):
        raise ValueError("unrecognized trajectory header")
    t = np.array([float(r[0]) for r in body])
    x = np.array([[float(v) for v in r[1:1 + n]] for r in body])
    k = 1 + n
    a = np.array([[float(v) for v in r[k:k + m * n]] for r in body]).reshape(len(body), m, n)
    k += m * n
    b = np.array([[float(v) for v in r[k:k + m]] for r in body])
    k += m
    u = np.array([[float(v) for v in r[k:k + d]] for r in body[:-1]]).reshape(len(body) - 1, d)
    eta = np.array([[float(v) for v in r[k + d:k + d + m]] for r in body[:-1]]).reshape(len(body) - 1, m)
    return DiscreteQuadruple(t, x, a, b, u, eta)


def quadruple_to_dict(q: DiscreteQuadruple) -> dict:
    return {"mesh": q.mesh.tolist(), "x": q.x.tolist(), "a": q.a.tolist(), "b": q.b.tolist(),
            "u": q.u.tolist(), "eta": q.eta.tolist()}


def quadruple_from_dict(data) -> DiscreteQuadruple:
    return DiscreteQuadruple(data["mesh"], data["x"], data["a"], data["b"], data["u"], data["eta"])


def load_problem(path):
    """A ``SweepingProblem`` or a ``DiscreteProblem`` (when the file carries a mesh)."""
    data = json.loads(Path(path).read_text())
    if "mesh" in data and "problem" in data:
        return DiscreteProblem.from_dict(data)
    return SweepingProblem.from_dict(data)


def load_controls(path) -> np.ndarray:
    """Controls from JSON (a list of vectors, or an object with ``u``) or CSV with ``u*`` columns."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        rows = list(csv.reader(_io.StringIO(text)))
        cols = [k for k, c in enumerate(rows[0]) if c.startswith("u")]
        vals = [[float(r[k]) for k in cols] for r in rows[1:] if all(r[k] != "" for k in cols)]
        return np.array(vals)
    data = json.loads(text)
    if isinstance(data, dict):
        data = data["u"]
    return np.atleast_2d(np.array(data, dtype=float))


def load_solution(path) -> DiscreteQuadruple:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return trajectory_from_csv(text)
    return quadruple_from_dict(json.loads(text))


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_json(path, data):
    return write_text(path, json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


__all__ = ["canonical_json", "trajectory_csv", "trajectory_from_csv", "quadruple_to_dict",
           "quadruple_from_dict", "load_problem", "load_controls", "load_solution", "write_json",
           "write_text", "trajectory_header"]
