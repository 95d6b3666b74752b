"""JSON and CSV interchange.

Matrices are {"dim": d, "re": [[...]], "im": [[...]]} row-major.  Python's
float repr is the shortest string that round-trips, so at most 17
significant digits are written and reading back is exact.
"""

from __future__ import annotations

import csv
import io as _io
import json
from typing import Iterable, Optional, Sequence

import numpy as np

from . import core
from .core import Povm, ValidationError
from .models import Problem, build_model, explicit_problem

CSV_DIGITS = 12


# ------------------------------------------------------------------ matrices

def matrix_to_json(m) -> dict:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("matrix JSON needs a square matrix")
    return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}


def matrix_from_json(obj) -> np.ndarray:
    try:
        re = np.array(obj["re"], dtype=float)
        im = np.array(obj.get("im", np.zeros_like(re)), dtype=float)
        dim = int(obj.get("dim", re.shape[0]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed matrix JSON: {exc}") from exc
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise ValidationError(f"matrix JSON shape does not match dim={dim}")
    return re + 1j * im


def vector_to_json(v) -> dict:
    v = np.asarray(v, dtype=complex).ravel()
    return {"dim": int(v.size), "re": v.real.tolist(), "im": v.imag.tolist()}


def vector_from_json(obj) -> np.ndarray:
    try:
        re = np.array(obj["re"], dtype=float).ravel()
        im = np.array(obj.get("im", np.zeros_like(re)), dtype=float).ravel()
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed vector JSON: {exc}") from exc
    if re.shape != im.shape:
        raise ValidationError("vector re/im lengths differ")
    return re + 1j * im


# ------------------------------------------------------------------ objects

def state_to_json(state) -> dict:
    return {"rho": matrix_to_json(core.as_state(state).rho)}


def state_from_json(obj) -> core.State:
    if "ket" in obj:
        return core.State.from_ket(vector_from_json(obj["ket"]))
    if "rho" in obj:
        return core.State(matrix_from_json(obj["rho"]))
    return core.State(matrix_from_json(obj))


def observables_from_json(obj) -> core.ObservableSet:
    if isinstance(obj, dict):
        obj = obj.get("observables", obj)
    return core.ObservableSet(tuple(matrix_from_json(o) for o in obj))


def povm_to_json(povm: Povm, values=None) -> dict:
    out = {"outcomes": [matrix_to_json(m) for m in povm.outcomes]}
    out["labels"] = [v if isinstance(v, str) else int(v) for v in povm.labels]
    if values is not None:
        out["values"] = np.asarray(values, dtype=float).tolist()
    return out


def povm_from_json(obj):
    """Returns (Povm, values or None)."""
    try:
        outcomes = tuple(matrix_from_json(m) for m in obj["outcomes"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed POVM JSON: {exc}") from exc
    labels = obj.get("labels")
    povm = Povm(outcomes, tuple(labels) if labels else ())
    values = obj.get("values")
    return povm, (np.array(values, dtype=float) if values is not None else None)


def problem_from_json(obj, value: Optional[float] = None) -> Problem:
    """Either {"model": name, "value": x} or {"state", "observables", "weights"}."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    if "model" in obj:
        return build_model(obj["model"], obj.get("value") if value is None else value)
    if value is not None:
        raise ValidationError("sweeps need a named model problem")
    try:
        st = state_from_json(obj["state"])
        xs = observables_from_json(obj["observables"])
    except KeyError as exc:
        raise ValidationError(f"problem JSON lacks {exc}") from exc
    w = obj.get("weights")
    if isinstance(w, dict):
        w = matrix_from_json(w).real
    return explicit_problem(st, xs, w, obj.get("label", ""))


def problem_to_json(problem: Problem) -> dict:
    out = {"state": state_to_json(problem.rho),
           "observables": [matrix_to_json(x) for x in problem.observables]}
    if problem.weights is not None:
        out["weights"] = np.asarray(problem.weights, dtype=float).tolist()
    if problem.label:
        out["label"] = problem.label
    return out


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False)


# ------------------------------------------------------------------ CSV

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{CSV_DIGITS}g}"
    return str(v)


def csv_text(schema: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    buf.write(f"# schema: {schema}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for row in rows:
        wr.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(text: str):
    """(schema, columns, rows) with rows as lists of strings."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema: "):
        raise ValidationError("CSV lacks the schema header line")
    schema = lines[0][len("# schema: "):]
    rd = list(csv.reader(lines[1:]))
    return schema, rd[0], rd[1:]
