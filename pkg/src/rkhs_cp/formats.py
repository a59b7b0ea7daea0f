"""Text file formats for observations, dense matrices and manifests.

All reals are written with 17 significant digits, which round-trips every
binary64 value exactly. Indices are 0-based.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor_index import Shape


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _header_fields(line: str, path) -> dict[str, str]:
    if not line.startswith("#"):
        raise ValidationError(f"{path}: missing '#' header line")
    out = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValidationError(f"{path}: malformed header token {tok!r}")
        out[key] = val
    return out


def write_matrix(path, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lines = [f"# rows={X.shape[0]} cols={X.shape[1]}"]
    lines += [",".join(fmt(v) for v in row) for row in X]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValidationError(f"{path}: empty file")
    hdr = _header_fields(text[0], path)
    try:
        rows, cols = int(hdr["rows"]), int(hdr["cols"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: header needs rows= and cols=") from exc
    body = [ln for ln in text[1:] if ln.strip()]
    if len(body) != rows:
        raise ValidationError(f"{path}: header says {rows} rows, found {len(body)}")
    X = np.empty((rows, cols))
    for i, ln in enumerate(body):
        vals = ln.split(",")
        if len(vals) != cols:
            raise ValidationError(f"{path}: row {i} has {len(vals)} values, expected {cols}")
        X[i] = [float(v) for v in vals]
    return X


def write_observations(path, shape: Shape, indices, values) -> None:
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, shape.d)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    dims = ",".join(str(x) for x in shape.dims)
    lines = [f"# shape={dims} mode={shape.mode} q={len(values)}"]
    lines += [",".join(str(int(i)) for i in idx) + "," + fmt(y) for idx, y in zip(indices, values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_observations(path) -> tuple[Shape, np.ndarray, np.ndarray]:
    """Returns ``(shape, indices (q, d), values (q,))``."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValidationError(f"{path}: empty file")
    hdr = _header_fields(text[0], path)
    try:
        shape = Shape(tuple(int(x) for x in hdr["shape"].split(",")), int(hdr["mode"]))
        q = int(hdr["q"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: header needs shape=, mode=, q=") from exc
    body = [ln for ln in text[1:] if ln.strip()]
    if len(body) != q:
        raise ValidationError(f"{path}: header says q={q}, found {len(body)} entries")
    indices = np.zeros((q, shape.d), dtype=np.int64)
    values = np.zeros(q)
    for m, ln in enumerate(body):
        toks = ln.split(",")
        if len(toks) != shape.d + 1:
            raise ValidationError(f"{path}: entry {m} has {len(toks)} fields, expected {shape.d + 1}")
        indices[m] = [int(t) for t in toks[:-1]]
        values[m] = float(toks[-1])
    return shape, indices, values


def write_manifest(path, fields: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in fields.items()))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        key, sep, val = ln.partition("=")
        if not sep:
            raise ValidationError(f"{path}: malformed manifest line {ln!r}")
        out[key.strip()] = val.strip()
    return out
