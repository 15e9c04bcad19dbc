"""Reading and writing prediction and feature files.

CSV files carry a header ``p_0,...,p_{k-1},label`` (probabilities) or
``z_0,...,z_{k-1},label`` (logits).  JSONL files hold one object per line
with ``probs`` or ``logits`` and ``label``.  Feature files for layer
sharpness use ``f_0,...,f_{d-1},label``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InputError, LabelOutOfRange, ParseError
from .simplex import SUM_TOL, LabeledPredictions, softmax

_PREFIX = {"p": "probs", "z": "logits", "f": "features"}


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt.lower()
    return "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson", ".json") else "csv"


def _parse_header(header: list[str], path) -> tuple[str, int]:
    if not header or header[-1].strip() != "label":
        raise ParseError(0, f"{path}: last header column must be 'label'")
    cols = [h.strip() for h in header[:-1]]
    if not cols:
        raise ParseError(0, "no value columns in header")
    prefix = cols[0].split("_")[0]
    if prefix not in _PREFIX:
        raise ParseError(0, f"unknown column prefix {cols[0]!r}")
    expected = [f"{prefix}_{i}" for i in range(len(cols))]
    if cols != expected:
        raise ParseError(0, f"header columns must be {','.join(expected)}")
    return _PREFIX[prefix], len(cols)


def _parse_label(text, row: int) -> int:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ParseError(row, f"label {text!r} is not an integer") from None
    if not math.isfinite(v) or v != int(v):
        raise ParseError(row, f"label {text!r} is not an integer")
    return int(v)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(0, f"{path} is empty") from None
        kind, width = _parse_header(header, path)
        values, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width + 1:
                raise DimensionMismatch(
                    f"row {row_no}: expected {width + 1} fields, found {len(row)}"
                )
            try:
                vals = [float(c) for c in row[:-1]]
            except ValueError as exc:
                raise ParseError(row_no, str(exc)) from None
            values.append(vals)
            labels.append(_parse_label(row[-1], row_no))
    return kind, values, labels


def _read_jsonl(path: Path):
    kind, values, labels = None, [], []
    with open(path) as fh:
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(row_no, f"invalid JSON: {exc.msg}") from None
            key = next((k for k in ("probs", "logits", "features") if k in obj), None)
            if key is None or "label" not in obj:
                raise ParseError(row_no, "object needs 'probs' or 'logits' and 'label'")
            if kind is None:
                kind = key
            elif key != kind:
                raise ParseError(row_no, f"mixed '{kind}' and '{key}' rows")
            vals = obj[key]
            if values and len(vals) != len(values[0]):
                raise DimensionMismatch(
                    f"row {row_no}: expected {len(values[0])} values, found {len(vals)}"
                )
            try:
                values.append([float(v) for v in vals])
            except (TypeError, ValueError) as exc:
                raise ParseError(row_no, str(exc)) from None
            labels.append(_parse_label(obj["label"], row_no))
    if kind is None:
        raise ParseError(0, f"{path} contains no rows")
    return kind, values, labels


def _read(path, fmt):
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        return _read_csv(path)
    if fmt == "jsonl":
        return _read_jsonl(path)
    raise InputError(f"unknown file format {fmt!r}")


def _check_rows(kind: str, values: np.ndarray, labels: np.ndarray) -> None:
    k = values.shape[1]
    for i in range(values.shape[0]):
        row = values[i]
        if not np.all(np.isfinite(row)):
            raise ParseError(i + 1, "non-finite value")
        if kind == "probs":
            if np.any(row < 0):
                raise ParseError(i + 1, "negative probability")
            if abs(row.sum() - 1.0) > SUM_TOL:
                raise ParseError(i + 1, f"probabilities sum to {row.sum()!r}")
        if not 0 <= labels[i] < k:
            raise LabelOutOfRange(f"row {i + 1}: label {labels[i]} outside [0, {k})")


def load_predictions(path, format: str | None = None) -> LabeledPredictions:
    """Load and validate a prediction file.

    Logit files are converted with a row-wise softmax and the logits are kept
    on the returned dataset (needed by temperature scaling).
    """
    kind, values, labels = _read(path, format)
    if kind == "features":
        raise ParseError(0, "feature file given where predictions were expected")
    if len(values) < 2:
        raise ParseError(len(values), "need at least 2 rows")
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    _check_rows(kind, values, labels)
    if kind == "logits":
        return LabeledPredictions(softmax(values), labels, logits=values)
    return LabeledPredictions(values, labels)


def load_features(path, format: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load an activation file; returns ``(features, labels)``."""
    kind, values, labels = _read(path, format)
    if kind != "features":
        raise ParseError(0, "expected f_* feature columns")
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values).all(axis=1)))
        raise ParseError(bad + 1, "non-finite feature")
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0):
        raise LabelOutOfRange("negative label")
    return values, labels


def _fmt(x: float) -> str:
    return repr(float(x)) if x == x else "nan"


def write_predictions(dataset: LabeledPredictions, path, format: str | None = None,
                      logits: bool = False) -> None:
    """Write a dataset with round-trip (17 significant digit) precision."""
    path = Path(path)
    fmt = _detect_format(path, format)
    values = dataset.get_logits() if logits else dataset.probs
    prefix, key = ("z", "logits") if logits else ("p", "probs")
    if fmt == "jsonl":
        with open(path, "w") as fh:
            for row, y in zip(values, dataset.labels):
                fh.write(json.dumps({key: [float(v) for v in row], "label": int(y)}) + "\n")
        return
    write_matrix_csv(path, values, dataset.labels, prefix)


def write_matrix_csv(path, values, labels, prefix: str) -> None:
    """Write ``values`` with ``{prefix}_i`` columns; ``path`` may be an open file."""
    values = np.asarray(values, dtype=float)
    if hasattr(path, "write"):
        _write_rows(path, values, labels, prefix)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, values, labels, prefix)


def _write_rows(fh, values, labels, prefix):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([f"{prefix}_{i}" for i in range(values.shape[1])] + ["label"])
    for row, y in zip(values, labels):
        w.writerow([_fmt(v) for v in row] + [int(y)])
