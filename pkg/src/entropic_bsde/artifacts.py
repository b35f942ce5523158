"""Deterministic CSV/JSON writers and the run manifest.

Floats in CSV files are written with 17 significant digits (``.16e``) so
that identical inputs give byte-identical files on every platform.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

FLOAT_FORMAT = ".16e"


def fmt(x: float) -> str:
    return format(float(x), FLOAT_FORMAT)


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> Path:
    """Write equal-length columns; the first line is the header."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len({c.size for c in cols}) > 1:
        raise ValueError("CSV columns must have equal length")
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def jsonable(obj):
    """Convert numpy containers and non-finite floats (to ``null``)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def matrix_headers(prefix: str, rows: int, cols: int) -> list[str]:
    sep = "" if max(rows, cols) < 10 else "_"
    return [f"{prefix}_{i + 1}{sep}{j + 1}" for i in range(rows) for j in range(cols)]


def vector_headers(prefix: str, size: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(size)]


def write_matrix_series(path: Path, t: np.ndarray, blocks: list[tuple[str, np.ndarray]]) -> Path:
    """CSV with ``t`` then the row-major entries of each ``(K+1, r, c)`` block."""
    header = ["t"]
    cols = [t]
    for prefix, arr in blocks:
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            header += vector_headers(prefix, arr.shape[1])
            cols += [arr[:, i] for i in range(arr.shape[1])]
        else:
            r, c = arr.shape[1:]
            header += matrix_headers(prefix, r, c)
            cols += [arr[:, i, j] for i in range(r) for j in range(c)]
    return write_csv(path, header, cols)
