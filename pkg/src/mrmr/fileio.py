"""On-disk formats: dataset CSV, model/manifest/report JSON, diagnostic CSV.

Dataset CSV
    Header ``x1..xp`` followed by ``yG1..``, ``yP1..``, ``yB1..``.  The
    response schema is read off the header prefixes.  Real values are written
    with ``repr`` so a read/write round trip is exact.

JSON
    Written with sorted keys and two-space indentation; every artifact carries
    ``format`` and ``format_version`` fields.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataFormatError
from .mcem import EMIteration, FittedModel
from .model import MixedDataset, PrecisionMatrix, ResponseSchema

FORMAT_VERSION = 1
_COLUMN = re.compile(r"^(x|yG|yP|yB)(\d+)$")


def _fmt(v) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def dataset_to_csv(data: MixedDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(data.p)] + data.schema.column_names())
    for x, y in zip(data.X, data.Y):
        w.writerow([repr(float(v)) for v in x] + [_fmt(v) if k != "gaussian" else repr(float(v))
                                                  for v, k in zip(y, data.schema.kinds())])
    return buf.getvalue()


def write_dataset(data: MixedDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data))


def _schema_from_header(header) -> tuple[int, ResponseSchema]:
    groups = {"x": [], "yG": [], "yP": [], "yB": []}
    order = []
    for c, name in enumerate(header):
        m = _COLUMN.match(name.strip())
        if not m:
            raise DataFormatError(f"row 1, column {c + 1}: unrecognised column name {name!r}")
        groups[m.group(1)].append(int(m.group(2)))
        order.append(m.group(1))
    expected = (["x"] * len(groups["x"]) + ["yG"] * len(groups["yG"])
                + ["yP"] * len(groups["yP"]) + ["yB"] * len(groups["yB"]))
    if order != expected:
        raise DataFormatError("row 1: columns must be ordered x, yG, yP, yB")
    for key, idx in groups.items():
        if idx != list(range(1, len(idx) + 1)):
            raise DataFormatError(f"row 1: {key} columns must be numbered 1..{len(idx)}")
    if not groups["x"]:
        raise DataFormatError("row 1: no predictor columns")
    try:
        schema = ResponseSchema(len(groups["yG"]), len(groups["yP"]), len(groups["yB"]))
    except ValueError as exc:
        raise DataFormatError(f"row 1: {exc}") from exc
    return len(groups["x"]), schema


def parse_dataset(text: str, schema: Optional[ResponseSchema] = None) -> MixedDataset:
    """Parse dataset CSV; errors name the 1-based row and column."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataFormatError("row 1: empty file")
    p, found = _schema_from_header(rows[0])
    if schema is not None and schema != found:
        raise DataFormatError(f"row 1: header schema {found.to_dict()} does not match {schema.to_dict()}")
    width = p + found.q
    kinds = ["x"] * p + found.kinds()
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataFormatError(f"row {r}: expected {width} fields, found {len(row)}")
        parsed = []
        for c, (cell, kind) in enumerate(zip(row, kinds), start=1):
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"row {r}, column {c}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise DataFormatError(f"row {r}, column {c}: non-finite value {cell!r}")
            if kind == "poisson" and (v < 0 or v != round(v)):
                raise DataFormatError(f"row {r}, column {c}: count must be a non-negative integer")
            if kind == "binary" and v not in (0.0, 1.0):
                raise DataFormatError(f"row {r}, column {c}: binary response must be 0 or 1")
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise DataFormatError("row 2: no data rows")
    arr = np.array(values)
    return MixedDataset(arr[:, :p], arr[:, p:], found)


def read_dataset(path, schema: Optional[ResponseSchema] = None) -> MixedDataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    return parse_dataset(text, schema)


def read_predictors(path, p: Optional[int] = None) -> np.ndarray:
    """Predictor block of a CSV; response columns, if any, are ignored."""
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataFormatError("row 1: empty file")
    cols = []
    for c, name in enumerate(rows[0]):
        m = _COLUMN.match(name.strip())
        if not m:
            raise DataFormatError(f"row 1, column {c + 1}: unrecognised column name {name!r}")
        if m.group(1) == "x":
            cols.append(c)
    if not cols:
        raise DataFormatError("row 1: no predictor columns")
    if p is not None and len(cols) != p:
        raise DataFormatError(f"row 1: found {len(cols)} predictor columns, model expects {p}")
    X = []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise DataFormatError(f"row {r}: expected {len(rows[0])} fields, found {len(row)}")
        vals = []
        for c in cols:
            try:
                v = float(row[c])
            except ValueError:
                raise DataFormatError(f"row {r}, column {c + 1}: cannot parse {row[c]!r} as a number") from None
            if not math.isfinite(v):
                raise DataFormatError(f"row {r}, column {c + 1}: non-finite value {row[c]!r}")
            vals.append(v)
        X.append(vals)
    if not X:
        raise DataFormatError("row 2: no data rows")
    return np.array(X)


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _clean(obj):
    """Make arrays and numpy scalars JSON-ready; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def read_json_text(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed JSON: {exc}") from exc


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read JSON from {path}: {exc}") from exc


def model_to_dict(model: FittedModel) -> dict:
    return {
        "format": "mrmr-model",
        "format_version": FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "B_hat": model.B_hat,
        "Omega_hat": model.omega_hat.omega,
        "lambda1": model.lambda1,
        "lambda2": model.lambda2,
        "converged": model.converged,
        "q_approx": model.q_approx,
        "ebic": model.ebic,
        "em_trace": [it.to_dict() for it in model.em_trace],
    }


def model_from_dict(d: dict) -> FittedModel:
    if d.get("format") != "mrmr-model":
        raise DataFormatError("not a model file (format field missing or wrong)")
    try:
        schema = ResponseSchema(**d["schema"])
        B = np.array(d["B_hat"], dtype=float).reshape(-1, schema.q)
        omega = PrecisionMatrix(np.array(d["Omega_hat"], dtype=float))
        trace = [EMIteration(**it) for it in d.get("em_trace", [])]
        return FittedModel(
            B_hat=B, omega_hat=omega, lambda1=float(d["lambda1"]), lambda2=float(d["lambda2"]),
            em_trace=trace, converged=bool(d["converged"]),
            q_approx=float("nan") if d.get("q_approx") is None else float(d["q_approx"]),
            schema=schema, ebic=d.get("ebic"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed model file: {exc}") from exc


def matrix_to_csv(M, row_names, col_names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(col_names))
    for name, row in zip(row_names, np.asarray(M)):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def rows_to_csv(rows, columns=None) -> str:
    """Dict rows as CSV; ``None`` is written as an empty field."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        out = []
        for c in columns:
            v = row.get(c)
            if v is None:
                out.append("")
            elif isinstance(v, (bool, np.bool_)):
                out.append("true" if v else "false")
            elif isinstance(v, (float, np.floating)):
                out.append(repr(float(v)))
            else:
                out.append(str(v))
        w.writerow(out)
    return buf.getvalue()
