"""SFLD v1 field files.

Layout (little-endian):
    b"SFLD" | u32 version | u32 dim | u32 components | dim × u32 counts
    | dim × (f64 lower, f64 upper) | components × row-major f64 samples
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from src.field_core import (
    AnyField,
    Box,
    MatrixField,
    ScalarField,
    SymTensorField,
    VectorField,
    make_grid,
)

logger = logging.getLogger(__name__)

MAGIC = b"SFLD"
VERSION = 1
_HEAD = struct.Struct("<4sIII")


def _component_count(f: AnyField) -> int:
    return int(np.prod(f.component_shape)) if f.component_shape else 1


def encode_field(f: AnyField) -> bytes:
    grid = f.grid
    parts = [_HEAD.pack(MAGIC, VERSION, grid.dim, _component_count(f))]
    parts.append(struct.pack(f"<{grid.dim}I", *grid.dims))
    bounds = [v for lo, hi in zip(grid.box.lower, grid.box.upper) for v in (lo, hi)]
    parts.append(struct.pack(f"<{2 * grid.dim}d", *bounds))
    parts.append(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_field(data: bytes, *, traceless: bool = False) -> AnyField:
    """Decode bytes into the field type implied by the component count."""
    if len(data) < _HEAD.size or data[:4] != MAGIC:
        raise ValueError("not an SFLD file (bad magic)")
    _, version, dim, ncomp = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise ValueError(f"unsupported SFLD version {version}")
    offset = _HEAD.size
    dims = struct.unpack_from(f"<{dim}I", data, offset)
    offset += 4 * dim
    bounds = struct.unpack_from(f"<{2 * dim}d", data, offset)
    offset += 16 * dim
    grid = make_grid(Box(lower=bounds[0::2], upper=bounds[1::2]), tuple(dims))

    expected = ncomp * int(np.prod(dims)) * 8
    if len(data) - offset != expected:
        raise ValueError(
            f"SFLD payload has {len(data) - offset} bytes, expected {expected}"
        )
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)

    if ncomp == 1:
        return ScalarField(grid, flat.reshape(grid.dims))
    if ncomp == dim:
        return VectorField(grid, flat.reshape((dim,) + grid.dims))
    if ncomp == dim * (dim + 1) // 2:
        return SymTensorField(grid, flat.reshape((ncomp,) + grid.dims), traceless=traceless)
    if ncomp == dim * dim:
        return MatrixField(grid, flat.reshape((dim, dim) + grid.dims))
    raise ValueError(f"component count {ncomp} matches no field type in {dim}D")


def write_field(path: Path | str, f: AnyField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(f))
    logger.debug("wrote %s (%s)", path, type(f).__name__)
    return path


def read_field(path: Path | str, *, traceless: bool = False) -> AnyField:
    return decode_field(Path(path).read_bytes(), traceless=traceless)
