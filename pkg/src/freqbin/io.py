"""Readers and writers for counts, fringe, settings and report files.

Delimited files are plain CSV with a fixed header; structured files are JSON.
Floats are written with ``repr`` so every file re-parses to the same value.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .measurement import CoincidenceRecord, FringeSeries, MeasurementSetting

COUNTS_HEADER = ("setting_id", "m", "n", "counts", "integration_s")
FRINGE_HEADER = ("theta_rad", "rate_hz")
SETTINGS_HEADER = ("id", "p_s_dbm", "theta_s_rad", "p_i_dbm", "theta_i_rad")


class SchemaError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_rows(path: str | Path, header) -> list[dict]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != tuple(header):
        raise SchemaError(f"{path}: expected columns {', '.join(header)}, found {reader.fieldnames}")
    return list(reader)


def _is_json(path) -> bool:
    return Path(path).suffix.lower() == ".json"


def write_text(path: str | Path, text: str) -> None:
    """Write via a temporary sibling so a failed run never leaves a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def counts_text(records, structured: bool = False) -> str:
    if structured:
        data = [
            {"setting_id": r.setting_id, "m": r.m, "n": r.n, "counts": r.counts, "integration_s": r.integration_s}
            for r in records
        ]
        return json.dumps({"columns": list(COUNTS_HEADER), "records": data}, indent=1) + "\n"
    return _csv_text(COUNTS_HEADER, [(r.setting_id, r.m, r.n, r.counts, _fmt(r.integration_s)) for r in records])


def _record(row: dict, where: str) -> CoincidenceRecord:
    try:
        counts = row["counts"]
        if isinstance(counts, str):
            value = float(counts)
            if not value.is_integer():
                raise SchemaError(f"{where}: counts must be an integer, got {counts!r}")
            counts = int(value)
        return CoincidenceRecord(str(row["setting_id"]), int(row["m"]), int(row["n"]), int(counts), integration_s=float(row["integration_s"]))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{where}: malformed record ({exc})") from exc
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from exc


def read_counts(path: str | Path) -> list[CoincidenceRecord]:
    if _is_json(path):
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict) or "records" not in data:
            raise SchemaError(f"{path}: expected an object with a 'records' list")
        rows = data["records"]
    else:
        rows = _read_rows(path, COUNTS_HEADER)
    records = [_record(r, f"{path} row {i + 1}") for i, r in enumerate(rows)]
    keys = [(r.setting_id, r.m, r.n) for r in records]
    if len(set(keys)) != len(keys):
        raise SchemaError(f"{path}: duplicate (setting_id, m, n) rows")
    return records


def write_counts(path, records, structured: bool = False) -> None:
    write_text(path, counts_text(records, structured))


def fringe_text(series: FringeSeries, structured: bool = False) -> str:
    if structured:
        return json.dumps({"theta_rad": [float(t) for t in series.thetas], "rate_hz": [float(r) for r in series.rates]}, indent=1) + "\n"
    return _csv_text(FRINGE_HEADER, [(_fmt(t), _fmt(r)) for t, r in zip(series.thetas, series.rates)])


def read_fringe(path: str | Path) -> FringeSeries:
    if _is_json(path):
        data = json.loads(Path(path).read_text())
        th, rt = data["theta_rad"], data["rate_hz"]
    else:
        rows = _read_rows(path, FRINGE_HEADER)
        th = [float(r["theta_rad"]) for r in rows]
        rt = [float(r["rate_hz"]) for r in rows]
    if len(th) != len(rt):
        raise SchemaError(f"{path}: theta and rate columns differ in length")
    return FringeSeries(np.array(th, dtype=float), np.array(rt, dtype=float))


def settings_text(settings) -> str:
    return _csv_text(
        SETTINGS_HEADER, [(s.id, _fmt(s.p_s_dbm), _fmt(s.theta_s), _fmt(s.p_i_dbm), _fmt(s.theta_i)) for s in settings]
    )


def read_settings(path: str | Path) -> list[MeasurementSetting]:
    rows = _read_rows(path, SETTINGS_HEADER)
    try:
        return [
            MeasurementSetting(r["id"], float(r["p_s_dbm"]), float(r["theta_s_rad"]), float(r["p_i_dbm"]), float(r["theta_i_rad"]))
            for r in rows
        ]
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def matrix_text(labels_rows, labels_cols, values) -> str:
    return _csv_text(("row",) + tuple(labels_cols), [(lab, *[_fmt(v) for v in row]) for lab, row in zip(labels_rows, values)])


def table_text(values) -> str:
    """Square numeric table (e.g. Z-basis counts) as CSV with index columns."""
    values = np.asarray(values)
    n = values.shape[1]
    return _csv_text(("m",) + tuple(f"n{j}" for j in range(n)), [(i, *[_fmt(v) for v in row]) for i, row in enumerate(values)])


def read_table(path: str | Path) -> np.ndarray:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "m":
        raise SchemaError(f"{path}: expected a table with header m,n0,n1,...")
    n = len(rows[0]) - 1
    try:
        body = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if body.shape != (n, n):
        raise SchemaError(f"{path}: table is not square")
    return body


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def flat_text(mapping: dict) -> str:
    """``field,value,error`` rows for a report of scalar metrics."""
    rows = []
    for k in sorted(mapping):
        v = mapping[k]
        if isinstance(v, dict):
            rows.append((k, _cell(v.get("value")), _cell(v.get("error"))))
        else:
            rows.append((k, _cell(v), ""))
    return _csv_text(("field", "value", "error"), rows)
