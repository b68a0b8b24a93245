"""Measure files: JSON schema, loading, and atomic artifact writes."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from jsonschema import Draft202012Validator

from .constructions import BlockMeasure
from .mat2 import Mat2
from .measure import DiscreteMeasure, TruncationReport, make_measure

_NUM = {"type": "number"}
_MAT = {
    "type": "object",
    "required": ["m"],
    "properties": {
        "m": {"type": "array", "minItems": 2, "maxItems": 2,
              "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM}},
        "log_scale": _NUM,
        "log_abs_det": _NUM,
    },
    "additionalProperties": False,
}
_TRUNC = {
    "type": "object",
    "properties": {"w1_error_bound": {"anyOf": [{"type": "number", "minimum": 0},
                                                {"const": "inf"}]}},
}
DISCRETE_SCHEMA = {
    "type": "object",
    "required": ["atoms", "weights"],
    "properties": {
        "atoms": {"type": "array", "minItems": 1, "items": _MAT},
        "weights": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "labels": {"type": "array"},
        "truncation": _TRUNC,
    },
}
BLOCK_SCHEMA = {
    "type": "object",
    "required": ["block_len", "base"],
    "properties": {
        "block_len": {"type": "integer", "minimum": 1},
        "base": DISCRETE_SCHEMA,
        "perturbed": {
            "type": "object", "required": ["labels", "factors"],
            "properties": {"labels": {"type": "array"},
                           "factors": {"type": "array", "items": _MAT}},
        },
        "truncation": _TRUNC,
    },
}
MEASURE_SCHEMA = {"oneOf": [DISCRETE_SCHEMA, BLOCK_SCHEMA]}


class SchemaError(ValueError):
    """Invalid measure file; ``errors`` holds ``(json_pointer, message)`` pairs."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate_measure(obj, prefix=()) -> None:
    v = Draft202012Validator(MEASURE_SCHEMA)
    errs = list(v.iter_errors(obj))
    if not errs:
        return
    leaves = []
    for e in errs:
        # oneOf failures are more useful reported at the deepest branch error;
        # prefer the branch that matches the object's evident kind
        if e.context:
            kind = 1 if isinstance(obj, dict) and "block_len" in obj else 0
            sub = [c for c in e.context if c.schema_path and c.schema_path[0] == kind] or e.context
            leaves += sub
        else:
            leaves.append(e)
    out = sorted({(_pointer(tuple(prefix) + tuple(e.absolute_path)), e.message) for e in leaves})
    raise SchemaError(out)


def _report_from(obj) -> TruncationReport | None:
    t = obj.get("truncation")
    if t is None:
        return None
    bound = t.get("w1_error_bound", 0.0)
    return TruncationReport(t.get("kept_atoms", 0), t.get("tail_mass", 0.0),
                            tuple(t.get("absorbed_into", ())),
                            math.inf if bound == "inf" else float(bound), t.get("last_index", 0))


def measure_from_json(obj, prefix=()):
    """``(measure, truncation report or None)`` from a validated JSON object."""
    validate_measure(obj, prefix)
    if "block_len" in obj:
        base = DiscreteMeasure.from_json(obj["base"])
        pert = obj.get("perturbed")
        if pert is not None:
            pert = (tuple(pert["labels"]), tuple(Mat2.from_json(f) for f in pert["factors"]))
        return BlockMeasure(base, obj["block_len"], pert), _report_from(obj)
    try:
        mu = make_measure([Mat2.from_json(a) for a in obj["atoms"]], obj["weights"],
                          labels=obj.get("labels"))
    except ValueError as exc:
        raise SchemaError([(_pointer(prefix), str(exc))]) from exc
    return mu, _report_from(obj)


def load_measure(spec: str):
    """Load ``FILE`` or ``FILE:NAME`` (a named entry of a measures.json)."""
    path, name = spec, None
    if not Path(spec).exists() and ":" in spec:
        path, name = spec.rsplit(":", 1)
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError([("/", f"invalid JSON: {exc}")]) from exc
    prefix = ()
    if name is not None:
        if not isinstance(obj, dict) or name not in obj:
            raise SchemaError([(f"/{name}", "no such measure in file")])
        obj, prefix = obj[name], (name,)
    return measure_from_json(obj, prefix)


def measure_to_json(mu, report: TruncationReport | None = None) -> dict:
    out = mu.to_json()
    if report is not None:
        out["truncation"] = report.to_json()
    return out


# -- atomic writes -------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    write_atomic(path, buf.getvalue())


def _json_default(x):
    if hasattr(x, "item"):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def _finite(obj):
    # JSON has no inf/nan; spell them out
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    write_atomic(path, dumps(obj))
