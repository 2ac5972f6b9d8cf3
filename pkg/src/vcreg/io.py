"""CSV tables and JSON run manifests."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    pass


def _atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    # repr gives the shortest string that round-trips to the same double
    return repr(float(x))


def write_csv(path, header, rows):
    """Write a rectangular table of finite floats with a header row."""
    M = np.asarray(rows, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    header = [str(h) for h in header]
    if M.ndim != 2 or M.shape[1] != len(header):
        raise CsvFormatError(f"table has {M.shape[-1]} columns but {len(header)} header names")
    if not np.isfinite(M).all():
        raise CsvFormatError("table contains NaN or Inf")
    lines = [",".join(header)]
    lines.extend(",".join(format_float(v) for v in row) for row in M)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Return ``(header, matrix)``; raises :class:`CsvFormatError` on malformed content."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        body = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                body.append([float(v) for v in row])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field") from None
    M = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    if not np.isfinite(M).all():
        raise CsvFormatError(f"{path}: contains NaN or Inf")
    return header, M


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_manifest(path, manifest: dict):
    _atomic_write_text(path, json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
