"""DBF1 binary container for sampled fields.

Layout (little endian throughout):

    magic 'DBF1' | u32 version=1 | u32 ndims | u64 dims[ndims]
    | u8 scalar-kind (0: 8-byte complex pair, 1: 16-byte pair)
    | payload, row major | mask, packed bits (grid cells, row major)

A JSON sidecar `<path>.json` carries origin, spacing, and the domain
description needed to rebuild the grid; `grid_ndims` splits the dims
between lattice axes and value components.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UnsupportedVersionError
from .grid import ComplexGrid, Field

__all__ = ["write_field", "read_field", "field_roundtrip"]

_MAGIC = b"DBF1"


def write_field(path, f: Field) -> None:
    path = Path(path)
    vals = f.values
    kind = 0 if vals.dtype == np.complex64 else 1
    payload = np.ascontiguousarray(
        vals.astype("<c8" if kind == 0 else "<c16")
    ).tobytes()
    dims = vals.shape
    head = _MAGIC + struct.pack("<II", 1, len(dims))
    head += struct.pack(f"<{len(dims)}Q", *dims)
    head += struct.pack("<B", kind)
    bits = np.packbits(f.mask.astype(np.uint8).ravel()).tobytes()
    path.write_bytes(head + payload + bits)
    g = f.grid
    sidecar = {
        "origin": [[o.real, o.imag] for o in g.origin],
        "spacing": list(g.spacing),
        "domain_kind": g.domain.get("kind"),
        "domain": g.domain,
        "grid_ndims": len(g.shape),
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n"
    )


def read_field(path) -> Field:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, ndims = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    off = 12
    if len(raw) < off + 8 * ndims + 1:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndims}Q", raw, off)
    off += 8 * ndims
    (kind,) = struct.unpack_from("<B", raw, off)
    off += 1
    if kind not in (0, 1):
        raise FormatError(f"{path}: unknown scalar kind {kind}")
    itemsize = 8 if kind == 0 else 16
    count = int(np.prod(dims))
    need = count * itemsize
    if len(raw) < off + need:
        raise FormatError(f"{path}: truncated payload")
    vals = np.frombuffer(
        raw, dtype="<c8" if kind == 0 else "<c16", count=count, offset=off
    ).reshape(dims)
    off += need
    side_path = Path(str(path) + ".json")
    if not side_path.exists():
        raise FormatError(f"{path}: missing JSON sidecar")
    side = json.loads(side_path.read_text())
    gnd = int(side["grid_ndims"])
    gshape = tuple(int(d) for d in dims[:gnd])
    nbits = int(np.prod(gshape))
    nbytes = (nbits + 7) // 8
    if len(raw) < off + nbytes:
        raise FormatError(f"{path}: truncated mask")
    mask = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=off)
    )[:nbits].astype(bool).reshape(gshape)
    grid = ComplexGrid(
        origin=tuple(complex(x, y) for x, y in side["origin"]),
        spacing=tuple(side["spacing"]),
        shape=gshape,
        mask=mask,
        domain=side["domain"],
    )
    return Field(grid, vals.copy(), mask=mask)


def field_roundtrip(path) -> bool:
    """Read, rewrite, and byte-compare a DBF1 file plus its sidecar."""
    import tempfile

    path = Path(path)
    f = read_field(path)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "copy.dbf1"
        write_field(out, f)
        same = out.read_bytes() == path.read_bytes()
        same &= Path(str(out) + ".json").read_text() == Path(
            str(path) + ".json"
        ).read_text()
    return bool(same)
