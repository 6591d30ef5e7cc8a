"""
PFLOW1 field snapshots: 6-byte magic, little-endian u32 nx, ny, ncomp,
f64 origin_x, origin_y, h, then ncomp*ny*nx f64 samples row-major.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from src.errors import SnapshotFormatError
from src.fields.grid import BoundaryKind, Field, Grid, ScalarField, VectorField

logger = logging.getLogger(__name__)

MAGIC = b"PFLOW1"

HEADER_DTYPE = np.dtype([
    ("magic", "S6"),
    ("nx", "<u4"),
    ("ny", "<u4"),
    ("ncomp", "<u4"),
    ("origin_x", "<f8"),
    ("origin_y", "<f8"),
    ("h", "<f8"),
])


def write_snapshot(path: Union[str, Path], field: Field) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header[0] = (MAGIC, grid.nx, grid.ny, field.ncomp, grid.origin[0], grid.origin[1], grid.h)
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    logger.debug(f"Wrote {field.ncomp}-component snapshot {grid.nx}x{grid.ny} to {path}")
    return path


def read_snapshot(path: Union[str, Path], boundary: BoundaryKind = BoundaryKind.OPEN) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise SnapshotFormatError(f"{path}: file shorter than the PFLOW1 header")
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {bytes(header['magic'])!r}")
    nx, ny, ncomp = int(header["nx"]), int(header["ny"]), int(header["ncomp"])
    if ncomp not in (1, 2):
        raise SnapshotFormatError(f"{path}: unsupported component count {ncomp}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER_DTYPE.itemsize)
    if data.size != ncomp * nx * ny:
        raise SnapshotFormatError(f"{path}: expected {ncomp * nx * ny} samples, found {data.size}")
    grid = Grid(
        origin=(float(header["origin_x"]), float(header["origin_y"])),
        h=float(header["h"]),
        nx=nx,
        ny=ny,
        boundary=boundary,
    )
    if ncomp == 1:
        return ScalarField(grid, data.reshape(ny, nx).astype(float))
    return VectorField(grid, data.reshape(2, ny, nx).astype(float))
