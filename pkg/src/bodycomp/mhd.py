"""MetaImage (.mhd + .raw, or single-file .mha) reader and writer.

Supported element types are MET_SHORT (CT volumes) and MET_UCHAR (masks and
label maps), little-endian only. ``ElementDataFile`` may name a companion
raw file (relative to the header) or be ``LOCAL`` for single-file payloads.
Unknown header keys are ignored.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .volume import (
    HU_MAX,
    HU_MIN,
    CODE_VAT,
    BinaryMask,
    CtVolume,
    LabelMap,
)


class MetaImageError(ValueError):
    """Missing or ill-formed MetaImage header keys, or a bad payload."""


_ELEMENT_DTYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
}

_TRUE_STRINGS = {"true", "1"}


def _parse_header(fh) -> tuple[dict[str, str], int]:
    """Read 'Key = Value' lines up to ElementDataFile; return fields and
    the byte offset where a LOCAL payload would start."""
    fields: dict[str, str] = {}
    while True:
        line = fh.readline()
        if not line:
            raise MetaImageError("header ended before ElementDataFile")
        try:
            text = line.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MetaImageError(f"non-ASCII bytes in header: {exc}") from None
        if not text.strip():
            continue
        if "=" not in text:
            raise MetaImageError(f"malformed header line: {text.strip()!r}")
        key, value = text.split("=", 1)
        fields[key.strip()] = value.strip()
        if key.strip() == "ElementDataFile":
            return fields, fh.tell()


def _ints(fields: dict[str, str], key: str, n: int) -> tuple[int, ...]:
    try:
        parts = tuple(int(tok) for tok in fields[key].split())
    except (KeyError, ValueError):
        raise MetaImageError(f"missing or ill-formed {key}") from None
    if len(parts) != n:
        raise MetaImageError(f"{key} must have {n} entries, got {len(parts)}")
    return parts


def _floats(fields: dict[str, str], key: str, n: int, default: str) -> tuple[float, ...]:
    raw = fields.get(key, default)
    try:
        parts = tuple(float(tok) for tok in raw.split())
    except ValueError:
        raise MetaImageError(f"ill-formed {key}: {raw!r}") from None
    if len(parts) != n:
        raise MetaImageError(f"{key} must have {n} entries, got {len(parts)}")
    return parts


def _read_raw(path: Path) -> tuple[dict[str, str], np.ndarray]:
    with open(path, "rb") as fh:
        fields, data_start = _parse_header(fh)

        if "ObjectType" not in fields:
            raise MetaImageError("missing ObjectType")
        if fields["ObjectType"] != "Image":
            raise MetaImageError(f"unsupported ObjectType {fields['ObjectType']!r}")
        if "NDims" not in fields:
            raise MetaImageError("missing NDims")
        if fields["NDims"].strip() != "3":
            raise MetaImageError(f"only NDims = 3 is supported, got {fields['NDims']!r}")
        for key in ("ElementByteOrderMSB", "BinaryDataByteOrderMSB"):
            if fields.get(key, "False").strip().lower() in _TRUE_STRINGS:
                raise MetaImageError("big-endian data is not supported")
        if fields.get("CompressedData", "False").strip().lower() in _TRUE_STRINGS:
            raise MetaImageError("compressed data is not supported")

        nx, ny, nz = _ints(fields, "DimSize", 3)
        if min(nx, ny, nz) <= 0:
            raise MetaImageError(f"DimSize must be positive, got {(nx, ny, nz)}")
        element_type = fields.get("ElementType", "")
        if element_type not in _ELEMENT_DTYPES:
            raise MetaImageError(f"unsupported ElementType {element_type!r}")
        dtype = _ELEMENT_DTYPES[element_type]

        data_file = fields["ElementDataFile"]
        if data_file == "LOCAL":
            fh.seek(data_start)
            payload = fh.read()
        else:
            raw_path = path.parent / data_file
            try:
                payload = raw_path.read_bytes()
            except OSError as exc:
                raise MetaImageError(f"cannot read data file {raw_path}: {exc}") from None

    expected = nx * ny * nz * dtype.itemsize
    if len(payload) != expected:
        raise MetaImageError(
            f"payload is {len(payload)} bytes, expected {expected} "
            f"for {nx}x{ny}x{nz} {element_type}"
        )
    # File order is x-fastest, so the (z, y, x) reshape is a straight copy.
    arr = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    return fields, arr


def read_mhd(path) -> CtVolume | BinaryMask:
    """Read a MetaImage file.

    MET_SHORT becomes a CtVolume with HU clamped to [-1024, 3071];
    MET_UCHAR becomes a BinaryMask with nonzero mapped to true.
    """
    path = Path(path)
    fields, arr = _read_raw(path)
    spacing = _floats(fields, "ElementSpacing", 3, "1 1 1")
    if any(s <= 0 for s in spacing):
        raise MetaImageError(f"ElementSpacing must be positive, got {spacing}")
    origin = _floats(fields, "Offset", 3, "0 0 0")
    if arr.dtype == _ELEMENT_DTYPES["MET_SHORT"]:
        return CtVolume(np.clip(arr, HU_MIN, HU_MAX), spacing, origin)
    return BinaryMask(arr != 0, spacing, origin)


def read_mhd_labels(path) -> LabelMap:
    """Read a MET_UCHAR MetaImage file as a compartment label map."""
    path = Path(path)
    fields, arr = _read_raw(path)
    if arr.dtype != _ELEMENT_DTYPES["MET_UCHAR"]:
        raise MetaImageError("label maps must be MET_UCHAR")
    if arr.size and int(arr.max()) > CODE_VAT:
        raise MetaImageError(
            f"label code {int(arr.max())} out of range 0..{CODE_VAT}"
        )
    spacing = _floats(fields, "ElementSpacing", 3, "1 1 1")
    if any(s <= 0 for s in spacing):
        raise MetaImageError(f"ElementSpacing must be positive, got {spacing}")
    origin = _floats(fields, "Offset", 3, "0 0 0")
    return LabelMap(arr, spacing, origin)


def _triple_text(values) -> str:
    # repr keeps the shortest exact decimal, so spacing round-trips bit-exactly
    return " ".join(repr(float(v)) for v in values)


def write_mhd(obj: CtVolume | BinaryMask | LabelMap, path) -> None:
    """Write a volume, mask, or label map.

    ``.mha`` paths get a single file with a LOCAL payload; any other
    extension gets a header plus a companion ``.raw`` beside it. Masks are
    written as MET_UCHAR 0/1 and label maps as MET_UCHAR codes.
    """
    path = Path(path)
    if isinstance(obj, CtVolume):
        element_type = "MET_SHORT"
        payload = np.ascontiguousarray(obj.data, dtype="<i2")
    elif isinstance(obj, BinaryMask):
        element_type = "MET_UCHAR"
        payload = obj.data.astype(np.uint8)
    elif isinstance(obj, LabelMap):
        element_type = "MET_UCHAR"
        payload = np.ascontiguousarray(obj.data, dtype=np.uint8)
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as MetaImage")

    single_file = path.suffix.lower() == ".mha"
    data_file = "LOCAL" if single_file else path.stem + ".raw"
    nx, ny, nz = obj.dims
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        "CompressedData = False\n"
        "TransformMatrix = 1 0 0 0 1 0 0 0 1\n"
        f"Offset = {_triple_text(obj.origin)}\n"
        "CenterOfRotation = 0 0 0\n"
        f"ElementSpacing = {_triple_text(obj.spacing)}\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementType = {element_type}\n"
        f"ElementDataFile = {data_file}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if single_file:
            fh.write(payload.tobytes())
    if not single_file:
        with open(path.parent / data_file, "wb") as fh:
            fh.write(payload.tobytes())
