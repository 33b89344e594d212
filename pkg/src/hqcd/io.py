"""File formats: series CSV, truth JSON, decision JSON lines, checkpoints."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .detector import DecisionRecord, OnlineDetector
from .model import ChangepointVector, HierarchicalSeries
from .smc2 import SMC2Engine


class DataError(ValueError):
    """Malformed input data; the message names the offending location."""


# --------------------------------------------------------------------------
# series CSV: header ``t,name_1,...``, one row per tick starting at 1

def write_series_csv(path, values: np.ndarray, names: list[str], integer: bool = False):
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] != len(names):
        raise ValueError("values must be (n_series, T) with one name per series")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for t in range(values.shape[1]):
            col = values[:, t]
            cells = [str(int(v)) for v in col] if integer else [repr(float(v)) for v in col]
            w.writerow([t + 1, *cells])


def read_series_csv(path, integer: bool = False) -> tuple[list[str], np.ndarray]:
    """Parse one series file into ``(names, values)`` with values ``(n, T)``.

    With ``integer`` every cell must be a nonnegative whole number.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise DataError(f"{path}: header must start with 't'")
    names = header[1:]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate series names in header")
    data = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {line_no} has {len(row)} cells, expected {len(header)}")
        try:
            tick = int(row[0])
        except ValueError:
            raise DataError(f"{path}: row {line_no}, column 't': tick {row[0]!r} is not an integer") from None
        if tick != len(data) + 1:
            raise DataError(f"{path}: row {line_no}, column 't': expected tick {len(data) + 1}, got {tick}")
        vals = []
        for name, cell in zip(names, row[1:]):
            where = f"{path}: row {line_no}, column {name!r}"
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{where}: {cell!r} is not numeric") from None
            if not math.isfinite(v):
                raise DataError(f"{where}: value must be finite")
            if integer:
                if v < 0:
                    raise DataError(f"{where}: negative count {cell}")
                if v != int(v):
                    raise DataError(f"{where}: count {cell} is not a whole number")
            vals.append(v)
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    arr = np.array(data, dtype=float).T.reshape(len(names), len(data))
    return names, (arr.astype(np.int64) if integer else arr)


def write_series(directory, series: HierarchicalSeries) -> dict[str, Path]:
    directory = Path(directory)
    paths = {"targets": directory / "targets.csv", "surrogates": directory / "surrogates.csv"}
    write_series_csv(paths["targets"], series.targets, series.target_names, integer=True)
    write_series_csv(paths["surrogates"], series.surrogates, series.surrogate_names)
    return paths


def read_series(targets_path, surrogates_path=None) -> HierarchicalSeries:
    t_names, targets = read_series_csv(targets_path, integer=True)
    if not t_names:
        raise DataError(f"{targets_path}: need at least one target column")
    if surrogates_path is None:
        return HierarchicalSeries(targets, np.zeros((0, targets.shape[1])), t_names, [])
    k_names, surrogates = read_series_csv(surrogates_path)
    if surrogates.shape[1] != targets.shape[1]:
        raise DataError(f"targets have {targets.shape[1]} ticks but surrogates have {surrogates.shape[1]}")
    return HierarchicalSeries(targets, surrogates, t_names, k_names)


# --------------------------------------------------------------------------
# truth JSON (null = no change within the horizon)

def write_truth(path, truth: ChangepointVector, series: HierarchicalSeries | None = None):
    doc = truth.to_json()
    if series is not None:
        doc["names"] = series.source_names()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth(path) -> ChangepointVector:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        return ChangepointVector.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed truth document ({exc})") from exc


# --------------------------------------------------------------------------
# decisions as JSON lines

def append_decisions(path, records: list[DecisionRecord], names: list[str]):
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(names)) + "\n")


def read_decisions(path) -> tuple[list[str], list[int | None], list[dict]]:
    """Return source names, final declarations and all parsed records."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    records = []
    for n, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {n} is not valid JSON ({exc.msg})") from exc
    if not records:
        raise DataError(f"{path}: no decision records")
    last = records[-1]
    try:
        names = list(last["declared"])
        return names, [last["declared"][k] for k in names], records
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: record without a 'declared' map") from exc


# --------------------------------------------------------------------------
# checkpoints: engine arrays plus detector state and run metadata in one npz

def save_checkpoint(path, engine: SMC2Engine, detector: OnlineDetector, run_meta: dict | None = None):
    state = engine.state_dict()
    state["__detector__"] = np.array(json.dumps(detector.state_dict()))
    state["__run__"] = np.array(json.dumps(run_meta or {}, sort_keys=True))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez_compressed(fh, **state)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[SMC2Engine, OnlineDetector, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            state = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from exc
    if "__detector__" not in state:
        raise DataError(f"{path}: checkpoint has no detector state")
    engine = SMC2Engine.from_state_dict(state)
    detector = OnlineDetector.from_state_dict(json.loads(str(state["__detector__"])))
    meta = json.loads(str(state.get("__run__", np.array("{}"))))
    return engine, detector, meta
