"""Minimal MetaImage I/O for exchanging volumes and masks with the
segmentation pipeline. Little-endian MET_SHORT / MET_UCHAR, 3D only;
``ElementDataFile`` may be a companion raw file or LOCAL."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_DTYPES = {"MET_SHORT": np.dtype("<i2"), "MET_UCHAR": np.dtype("u1")}


@dataclass(frozen=True)
class Volume:
    data: np.ndarray  # (nz, ny, nx), x-fastest on disk
    spacing: tuple[float, float, float]  # (sx, sy, sz) mm
    origin: tuple[float, float, float]


def read_volume(path) -> Volume:
    path = Path(path)
    fields: dict[str, str] = {}
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: header ended before ElementDataFile")
            key, _, value = line.decode("ascii").partition("=")
            fields[key.strip()] = value.strip()
            if key.strip() == "ElementDataFile":
                local_start = fh.tell()
                break
        if fields.get("NDims") != "3":
            raise ValueError(f"{path}: only 3D images are supported")
        dims = tuple(int(t) for t in fields["DimSize"].split())
        dtype = _DTYPES[fields["ElementType"]]
        if fields["ElementDataFile"] == "LOCAL":
            fh.seek(local_start)
            payload = fh.read()
        else:
            payload = (path.parent / fields["ElementDataFile"]).read_bytes()
    nx, ny, nz = dims
    if len(payload) != nx * ny * nz * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match DimSize")
    data = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    spacing = tuple(float(t) for t in fields.get("ElementSpacing", "1 1 1").split())
    origin = tuple(float(t) for t in fields.get("Offset", "0 0 0").split())
    return Volume(data, spacing, origin)


def write_mask(mask: np.ndarray, spacing, origin, path) -> None:
    """Write a boolean (nz, ny, nx) array as MET_UCHAR 0/1."""
    path = Path(path)
    nz, ny, nx = mask.shape
    off = " ".join(repr(float(v)) for v in origin)
    sp = " ".join(repr(float(v)) for v in spacing)
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        "CompressedData = False\n"
        f"Offset = {off}\n"
        f"ElementSpacing = {sp}\n"
        f"DimSize = {nx} {ny} {nz}\n"
        "ElementType = MET_UCHAR\n"
        f"ElementDataFile = {path.stem}.raw\n"
    )
    path.write_bytes(header.encode("ascii"))
    (path.parent / f"{path.stem}.raw").write_bytes(
        mask.astype(np.uint8).tobytes()
    )
