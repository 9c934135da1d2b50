import numpy as np
import pytest

from bodycomp.mhd import MetaImageError, read_mhd, read_mhd_labels, write_mhd
from bodycomp.volume import BinaryMask, CtVolume, LabelMap, geometry_equal


def test_read_met_short_zeros(tmp_path):
    raw = tmp_path / "vol.raw"
    raw.write_bytes(bytes(2 * 2 * 2 * 2))
    (tmp_path / "vol.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "ElementType = MET_SHORT\nElementDataFile = vol.raw\n"
    )
    vol = read_mhd(tmp_path / "vol.mhd")
    assert isinstance(vol, CtVolume)
    assert vol.dims == (2, 2, 2)
    assert np.all(vol.data == 0)
    # defaults applied when keys are absent
    assert vol.spacing == (1.0, 1.0, 1.0)
    assert vol.origin == (0.0, 0.0, 0.0)


def test_header_echo(tmp_path):
    nx, ny, nz = 512, 512, 100
    (tmp_path / "big.raw").write_bytes(bytes(nx * ny * nz * 2))
    (tmp_path / "big.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 512 512 100\n"
        "ElementSpacing = 0.98 0.98 2\nElementType = MET_SHORT\n"
        "ElementDataFile = big.raw\n"
    )
    vol = read_mhd(tmp_path / "big.mhd")
    assert vol.dims == (512, 512, 100)
    assert vol.spacing == (0.98, 0.98, 2.0)


def test_hu_clamped_on_ingest(tmp_path):
    data = np.array([[[-2000, 4000], [0, 10]], [[5, 5], [5, 5]]], dtype="<i2")
    (tmp_path / "c.raw").write_bytes(data.tobytes())
    (tmp_path / "c.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "ElementType = MET_SHORT\nElementDataFile = c.raw\n"
    )
    vol = read_mhd(tmp_path / "c.mhd")
    assert vol.data.min() == -1024
    assert vol.data.max() == 3071


def test_mask_nonzero_is_true(tmp_path):
    (tmp_path / "m.raw").write_bytes(bytes([0, 1, 2, 255, 0, 0, 7, 0]))
    (tmp_path / "m.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "ElementType = MET_UCHAR\nElementDataFile = m.raw\n"
    )
    mask = read_mhd(tmp_path / "m.mhd")
    assert isinstance(mask, BinaryMask)
    assert mask.count == 4


def test_unknown_keys_ignored(tmp_path):
    (tmp_path / "u.raw").write_bytes(bytes(8))
    (tmp_path / "u.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nBananaCount = 7\nDimSize = 2 2 2\n"
        "ElementType = MET_UCHAR\nElementDataFile = u.raw\n"
    )
    read_mhd(tmp_path / "u.mhd")


@pytest.mark.parametrize(
    "header",
    [
        "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\nElementDataFile = x.raw\n",
        "ObjectType = Image\nNDims = 2\nDimSize = 2 2\nElementType = MET_SHORT\nElementDataFile = x.raw\n",
        "ObjectType = Image\nNDims = 3\nDimSize = 2 two 2\nElementType = MET_SHORT\nElementDataFile = x.raw\n",
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementType = MET_FLOAT\nElementDataFile = x.raw\n",
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\n"
        "ElementByteOrderMSB = True\nElementDataFile = x.raw\n",
    ],
    ids=["no-objecttype", "ndims2", "bad-dimsize", "float-type", "big-endian"],
)
def test_malformed_headers(tmp_path, header):
    (tmp_path / "x.raw").write_bytes(bytes(16))
    (tmp_path / "x.mhd").write_text(header)
    with pytest.raises(MetaImageError):
        read_mhd(tmp_path / "x.mhd")


def test_payload_size_mismatch(tmp_path):
    (tmp_path / "s.raw").write_bytes(bytes(15))  # needs 16
    (tmp_path / "s.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "ElementType = MET_SHORT\nElementDataFile = s.raw\n"
    )
    with pytest.raises(MetaImageError, match="15 bytes"):
        read_mhd(tmp_path / "s.mhd")


def test_write_empty_mask_single_byte(tmp_path):
    mask = BinaryMask(np.zeros((1, 1, 1), bool), (1, 1, 1))
    write_mhd(mask, tmp_path / "one.mhd")
    assert (tmp_path / "one.raw").read_bytes() == b"\x00"


def test_write_labels_identity_encoding(tmp_path):
    codes = np.arange(7, dtype=np.uint8).reshape(7, 1, 1)
    labels = LabelMap(codes, (1, 1, 1))
    write_mhd(labels, tmp_path / "lab.mhd")
    assert (tmp_path / "lab.raw").read_bytes() == bytes(range(7))
    back = read_mhd_labels(tmp_path / "lab.mhd")
    assert np.array_equal(back.data, codes)


def test_labels_reject_out_of_range(tmp_path):
    (tmp_path / "bad.raw").write_bytes(bytes([0, 1, 2, 3, 4, 5, 6, 9]))
    (tmp_path / "bad.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "ElementType = MET_UCHAR\nElementDataFile = bad.raw\n"
    )
    with pytest.raises(MetaImageError):
        read_mhd_labels(tmp_path / "bad.mhd")


def test_local_single_file_mha(tmp_path):
    vol = CtVolume(
        np.arange(-4, 4, dtype=np.int16).reshape(2, 2, 2), (0.5, 0.75, 2.0), (1.0, -2.0, 3.5)
    )
    write_mhd(vol, tmp_path / "v.mha")
    assert not (tmp_path / "v.raw").exists()
    back = read_mhd(tmp_path / "v.mha")
    assert geometry_equal(vol, back)
    assert np.array_equal(vol.data, back.data)


def test_round_trip_random_volumes(tmp_path, rng):
    # write -> read reproduces dims, spacing, origin and payload bit-exactly
    for i in range(100):
        dims = rng.integers(1, 17, size=3)
        spacing = tuple(float(s) for s in rng.uniform(0.3, 4.0, size=3))
        origin = tuple(float(o) for o in rng.uniform(-100, 100, size=3))
        kind = i % 3
        shape = (int(dims[2]), int(dims[1]), int(dims[0]))
        if kind == 0:
            obj = CtVolume(
                rng.integers(-1024, 3072, size=shape).astype(np.int16), spacing, origin
            )
        elif kind == 1:
            obj = BinaryMask(rng.random(shape) < 0.5, spacing, origin)
        else:
            obj = LabelMap(rng.integers(0, 7, size=shape).astype(np.uint8), spacing, origin)
        path = tmp_path / f"rt{i}.mhd"
        write_mhd(obj, path)
        back = read_mhd_labels(path) if kind == 2 else read_mhd(path)
        assert type(back) is type(obj)
        assert back.dims == obj.dims
        assert back.spacing == obj.spacing
        assert back.origin == obj.origin
        assert np.array_equal(back.data, obj.data)
