"""Artifact formats: trajectory CSV, density snapshots and JSON reports.

Every file opens with a header block naming the artifact kind, the package
version and the SHA-256 of the scenario that produced it. Writes go to a
temporary file in the target directory followed by ``os.replace``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
import struct
import tempfile

import numpy as np

from .grid import Grid, State

ARTIFACT_VERSION = "1.0"
SNAPSHOT_MAGIC = b"PNPJKOS1"


def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to ``path`` via a temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def header_block(kind: str, config_hash: str, extra: dict | None = None) -> dict:
    from . import __version__

    out = {"artifact": kind, "artifact_version": ARTIFACT_VERSION, "package_version": __version__,
           "config_sha256": config_hash}
    out.update(extra or {})
    return out


def _header_lines(header: dict) -> str:
    return "".join(f"# {k}: {json.dumps(v)}\n" for k, v in header.items())


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def table_to_csv(rows: list, header: dict, columns: list | None = None) -> str:
    """Header block followed by a CSV table; floats are written with ``repr``."""
    buf = io.StringIO()
    buf.write(_header_lines(header))
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return buf.getvalue()


def write_table(path, rows: list, header: dict, columns: list | None = None) -> Path:
    return atomic_write(path, table_to_csv(rows, header, columns))


def read_header(lines) -> tuple[dict, int]:
    header, n = {}, 0
    for line in lines:
        if not line.startswith("#"):
            break
        key, _, val = line[1:].strip().partition(":")
        header[key.strip()] = json.loads(val.strip())
        n += 1
    return header, n


def read_table(path) -> tuple[dict, dict]:
    """``(header, columns)``; numeric columns come back as float arrays."""
    text = Path(path).read_text().splitlines()
    header, n = read_header(text)
    reader = csv.reader(text[n:])
    try:
        names = next(reader)
    except StopIteration:
        return header, {}
    data = list(reader)
    cols = {}
    for j, name in enumerate(names):
        vals = [row[j] for row in data]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = vals
    return header, cols


# -- density snapshots ----------------------------------------------------------------

def snapshot_csv(z: State, step: int, t: float, header: dict) -> str:
    """Header (grid spec, step, time) and one row per cell in row-major order."""
    grid = z.grid
    hdr = dict(header, grid=grid.to_dict(), step=int(step), t=float(t))
    names = ["x", "y"][: grid.dim] + ["u", "v"]
    rows = []
    coords = [c.ravel() for c in grid.coords]
    for k, (uu, vv) in enumerate(zip(z.u.values.ravel(), z.v.values.ravel())):
        row = {n: c[k] for n, c in zip(names, coords)}
        row.update(u=uu, v=vv)
        rows.append(row)
    return table_to_csv(rows, hdr, names)


def snapshot_binary(z: State, step: int, t: float, header: dict) -> bytes:
    """``MAGIC | uint32 header length | JSON header | float64 LE u | float64 LE v``."""
    hdr = dict(header, grid=z.grid.to_dict(), step=int(step), t=float(t), dtype="<f8",
               order="C", fields=["u", "v"])
    blob = json.dumps(hdr, sort_keys=True).encode()
    body = np.concatenate([z.u.values.ravel(), z.v.values.ravel()]).astype("<f8").tobytes()
    return SNAPSHOT_MAGIC + struct.pack("<I", len(blob)) + blob + body


def read_snapshot(path) -> tuple[dict, State]:
    """Read either snapshot encoding back into ``(header, State)``."""
    raw = Path(path).read_bytes()
    if raw.startswith(SNAPSHOT_MAGIC):
        off = len(SNAPSHOT_MAGIC)
        (n,) = struct.unpack("<I", raw[off:off + 4])
        hdr = json.loads(raw[off + 4:off + 4 + n])
        grid = Grid.from_dict(hdr["grid"])
        vals = np.frombuffer(raw[off + 4 + n:], dtype="<f8")
        size = int(np.prod(grid.shape))
        if vals.size != 2 * size:
            raise ValueError(f"snapshot body has {vals.size} values, expected {2 * size}")
        u, v = vals[:size].reshape(grid.shape), vals[size:].reshape(grid.shape)
    else:
        hdr, cols = read_table(path)
        grid = Grid.from_dict(hdr["grid"])
        u, v = cols["u"].reshape(grid.shape), cols["v"].reshape(grid.shape)
    return hdr, State.from_arrays(u.copy(), v.copy(), grid, check=False)


def write_json(path, obj: dict, header: dict) -> Path:
    from .diagnostics import _jsonable

    payload = {"header": header}
    payload.update(obj)
    return atomic_write(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
