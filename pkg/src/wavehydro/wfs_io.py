"""WFS1 field-file format.

Layout: an 8-byte magic ``WFS1\\0\\0\\0\\0``, a 4-byte little-endian unsigned
header length, a UTF-8 JSON header with keys
``{version, nx, ny, nt, dx, dy, dt, x0, y0, t0, kind}`` (extra keys such as
``seed`` or ``config_hash`` are allowed and preserved), then
``nt*ny*nx`` little-endian float32 payload values, row-major, frame-major.

Validity masks travel in a parallel stream: a sibling file ``<path>.mask``
with the same container, ``kind = "mask"`` and a payload of 0/1 bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import Grid2D, ScalarField, ScalarFieldSeries

MAGIC = b"WFS1\x00\x00\x00\x00"
VERSION = 1
_REQUIRED_KEYS = ("version", "nx", "ny", "nt", "dx", "dy", "dt", "x0", "y0", "t0", "kind")


def mask_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".mask")


def _header_bytes(series: ScalarFieldSeries, kind: str, extra: dict | None) -> bytes:
    header = {
        "version": VERSION,
        "nx": series.grid.nx,
        "ny": series.grid.ny,
        "nt": series.nt,
        "dx": series.grid.dx,
        "dy": series.grid.dy,
        "dt": series.dt,
        "x0": series.grid.x0,
        "y0": series.grid.y0,
        "t0": series.t0,
        "kind": kind,
    }
    if extra:
        for k, v in extra.items():
            header.setdefault(k, v)
    return json.dumps(header, sort_keys=True).encode("utf-8")


def write_field(path, series: ScalarFieldSeries, kind: str = "eta", extra: dict | None = None) -> None:
    """Write a series (and its mask stream, when present) to ``path``."""
    head = _header_bytes(series, kind, extra)
    payload = np.ascontiguousarray(series.data, dtype="<f4").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + payload)
    if series.valid is not None:
        mhead = _header_bytes(series, "mask", extra)
        mpayload = np.ascontiguousarray(series.valid, dtype=np.uint8).tobytes()
        mask_path(path).write_bytes(MAGIC + struct.pack("<I", len(mhead)) + mhead + mpayload)


def read_header(path) -> dict:
    """Parse and validate the JSON header of a WFS1 file."""
    blob = Path(path).read_bytes()
    return _parse_header(blob)[0]


def _parse_header(blob: bytes):
    if len(blob) < len(MAGIC) + 4:
        raise FormatError("file too short for WFS1 container", offset=0)
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, not a WFS1 file", offset=0)
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(blob):
        raise FormatError(f"header length {hlen} exceeds file size {len(blob)}", offset=len(MAGIC))
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=start) from None
    for key in _REQUIRED_KEYS:
        if key not in header:
            raise FormatError(f"header missing key {key!r}", offset=start)
    for key in ("nx", "ny", "nt"):
        if not isinstance(header[key], int) or header[key] <= 0:
            raise FormatError(f"header key {key!r} must be a positive integer", offset=start)
    if header["dt"] <= 0:
        raise FormatError("non-positive dt", offset=start)
    if header["dx"] <= 0 or header["dy"] <= 0:
        raise FormatError("non-positive grid spacing", offset=start)
    return header, start + hlen


def _read_payload(path, dtype, itemsize):
    blob = Path(path).read_bytes()
    header, offset = _parse_header(blob)
    count = header["nt"] * header["ny"] * header["nx"]
    expected = count * itemsize
    actual = len(blob) - offset
    if actual != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes ({count} values), got {actual}",
            offset=offset,
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return header, data.reshape(header["nt"], header["ny"], header["nx"])


def read_field(path, with_mask: bool = True) -> ScalarFieldSeries:
    """Read a series; a sibling ``.mask`` stream is attached when present."""
    header, data = _read_payload(path, "<f4", 4)
    grid = Grid2D(
        nx=header["nx"], ny=header["ny"], dx=header["dx"], dy=header["dy"], x0=header["x0"], y0=header["y0"]
    )
    valid = None
    mp = mask_path(path)
    if with_mask and mp.exists():
        mheader, mdata = _read_payload(mp, np.uint8, 1)
        if mheader["kind"] != "mask":
            raise FormatError(f"mask stream has kind {mheader['kind']!r}, expected 'mask'", offset=0)
        if (mheader["nx"], mheader["ny"], mheader["nt"]) != (header["nx"], header["ny"], header["nt"]):
            raise FormatError("mask stream dimensions do not match the value stream", offset=0)
        valid = mdata.astype(bool)
    values = data.astype(np.float64)
    if valid is not None:
        values = np.where(valid, values, 0.0)
    return ScalarFieldSeries(grid, header["dt"], values, t0=header["t0"], valid=valid)


def write_scalar_field(path, field: ScalarField, kind: str = "field", dt: float = 1.0, extra: dict | None = None):
    """Store a single frame as a 1-frame series (2 padding frames are not added;
    single-frame files bypass the 3-frame series minimum on read)."""
    head_series = _SingleFrame(field, dt)
    head = _header_bytes(head_series, kind, extra)
    payload = np.ascontiguousarray(field.values[None], dtype="<f4").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + payload)
    if field.valid is not None:
        mhead = _header_bytes(head_series, "mask", extra)
        mpayload = np.ascontiguousarray(field.valid[None], dtype=np.uint8).tobytes()
        mask_path(path).write_bytes(MAGIC + struct.pack("<I", len(mhead)) + mhead + mpayload)


def read_scalar_field(path) -> ScalarField:
    header, data = _read_payload(path, "<f4", 4)
    if header["nt"] != 1:
        raise FormatError(f"expected a single-frame file, got nt={header['nt']}", offset=0)
    grid = Grid2D(
        nx=header["nx"], ny=header["ny"], dx=header["dx"], dy=header["dy"], x0=header["x0"], y0=header["y0"]
    )
    valid = None
    mp = mask_path(path)
    if mp.exists():
        _, mdata = _read_payload(mp, np.uint8, 1)
        valid = mdata[0].astype(bool)
    values = data[0].astype(np.float64)
    if valid is not None:
        values = np.where(valid, values, 0.0)
    return ScalarField(grid, values, valid)


class _SingleFrame:
    """Adapter giving a ScalarField the attributes _header_bytes expects."""

    def __init__(self, field: ScalarField, dt: float):
        self.grid = field.grid
        self.nt = 1
        self.dt = dt
        self.t0 = 0.0
