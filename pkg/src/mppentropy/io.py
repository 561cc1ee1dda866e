"""File formats: sample CSV + JSON sidecar, JSON configs and reports, CSV tables.

All writers go through a temporary file in the target directory followed by
os.replace, so an interrupted run never leaves a half-written output.  Floats
are written with 17 significant digits, which round-trips exactly and keeps
outputs byte-identical across runs.
"""
import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import InputError
from .manifold import get_manifold
from .point_process import BoxWindow, MppSample

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def to_jsonable(obj):
    """numpy scalars and arrays to Python types; non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    return atomic_write_text(path, dumps_json(obj))


def load_json(path):
    """Parse a JSON file; syntax errors become InputError with line/column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
                         f"{exc.msg}") from None


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return FLOAT_FMT % v if np.isfinite(v) else ""
    if v is None:
        return ""
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in np.ravel(v))
    return str(v)


def table_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_table(path, header, rows):
    return atomic_write_text(path, table_text(header, rows))


def write_dict_rows(path, rows):
    """CSV of a list of dicts; columns are the union of keys in first-seen order."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return write_table(path, cols, [[r.get(c) for c in cols] for r in rows])


def read_table(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise InputError(f"{path}: empty CSV") from None
        rows = list(rd)
    return header, rows


# samples ------------------------------------------------------------------------

def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def sample_header(d, k):
    return [f"y{i + 1}" for i in range(d)] + [f"m{i + 1}" for i in range(k)]


def write_sample(sample: MppSample, csv_path, extra=None):
    M = sample.manifold
    d, k = sample.window.dim, M.n_coords
    data = np.hstack([sample.locations, sample.marks]) if sample.n else np.zeros((0, d + k))
    write_table(csv_path, sample_header(d, k), data.tolist())
    meta = {"intensity": sample.intensity, "window": sample.window.to_dict(),
            "manifold": M.tag, "seed": int(sample.seed), "n_points": int(sample.n)}
    if sample.meta:
        meta["meta"] = dict(sample.meta)
    if extra:
        meta.update(extra)
    write_json(sidecar_path(csv_path), meta)
    return Path(csv_path)


def read_sample(csv_path, sidecar=None) -> MppSample:
    csv_path = Path(csv_path)
    side = load_json(sidecar or sidecar_path(csv_path))
    for key in ("intensity", "window", "manifold"):
        if key not in side:
            raise InputError(f"sample sidecar missing field {key!r}")
    M = get_manifold(side["manifold"])
    window = BoxWindow.from_dict(side["window"])
    d, k = window.dim, M.n_coords
    header, rows = read_table(csv_path)
    if header != sample_header(d, k):
        raise InputError(f"{csv_path}: expected header {sample_header(d, k)}, got {header}")
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(-1, d + k)
    except ValueError as exc:
        raise InputError(f"{csv_path}: non-numeric entry ({exc})") from None
    return MppSample(data[:, :d], data[:, d:], float(side["intensity"]), window, M,
                     int(side.get("seed", 0)), dict(side.get("meta", {})))
