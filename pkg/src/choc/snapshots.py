"""Binary field snapshots and CSV series.

Snapshot layout (all integers little-endian):

    bytes 0..3    magic "CHOC"
    u32           format version (currently 1)
    u32           number of axes
    u32 per axis  points per axis
    payload       float64 little-endian, row-major

Reading and writing round-trip bit for bit on any host; domain lengths are
configuration, not payload, so the reader takes an optional grid (defaulting
to unit side lengths).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import SnapshotFormatError
from .grid import Field, Grid

__all__ = ["write_snapshot", "read_snapshot", "write_series_csv", "field_to_csv"]

MAGIC = b"CHOC"
VERSION = 1


def write_snapshot(field: Field, path) -> None:
    """Write a field to the binary snapshot format."""
    dims = field.grid.npoints
    header = MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(dims))
    header += b"".join(struct.pack("<I", d) for d in dims)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_snapshot(path, grid: Grid | None = None) -> Field:
    """Read a snapshot back into a field.

    If ``grid`` is given its point counts must match the file; otherwise a
    unit-length grid with the stored dimensions is created.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise SnapshotFormatError(f"{path}: not a field snapshot (bad magic)")
    version, ndims = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise SnapshotFormatError(f"{path}: unsupported format version {version}")
    if ndims not in (1, 2):
        raise SnapshotFormatError(f"{path}: unsupported dimension count {ndims}")
    need = 12 + 4 * ndims
    if len(raw) < need:
        raise SnapshotFormatError(f"{path}: truncated header")
    dims = struct.unpack_from("<" + "I" * ndims, raw, 12)
    count = int(np.prod(dims))
    if len(raw) != need + 8 * count:
        raise SnapshotFormatError(
            f"{path}: payload length {len(raw) - need} != {8 * count}"
        )
    values = np.frombuffer(raw, dtype="<f8", offset=need).reshape(dims)
    if grid is None:
        grid = Grid(dims)
    elif grid.npoints != dims:
        raise SnapshotFormatError(
            f"{path}: snapshot dims {dims} do not match grid {grid.npoints}"
        )
    return Field(grid, values.astype(np.float64))


def write_series_csv(path, header: list[str], rows) -> None:
    """Write a numeric time series with a header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def field_to_csv(field: Field, path) -> None:
    """Dump a field as coordinate/value rows for quick inspection."""
    g = field.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if g.ndims == 1:
            writer.writerow(["x", "value"])
            for x, v in zip(g.axis_coords(0), field.values):
                writer.writerow([repr(float(x)), repr(float(v))])
        else:
            writer.writerow(["x", "y", "value"])
            xs, ys = g.coords()
            for x, y, v in zip(xs.ravel(), ys.ravel(), field.values.ravel()):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
