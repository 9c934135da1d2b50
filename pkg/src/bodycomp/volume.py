"""Voxel grid containers and z-axis resampling.

Grids are stored as C-contiguous (z, y, x) numpy arrays so that the flat
buffer is x-fastest, matching the MetaImage raw layout byte for byte.
``dims``, ``spacing`` and ``origin`` are reported in (x, y, z) order.

All containers are immutable after construction: the data buffer is copied
in and marked read-only, and every operation in this package returns new
objects. This makes them safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# CT-native HU range; values outside are scanner padding and get clamped
# on ingest so that all threshold logic is bounded.
HU_MIN = -1024
HU_MAX = 3071

SPACING_TOL_MM = 1e-6
ORIGIN_TOL_MM = 1e-3

# Label codes for the exclusive compartment map. These are an artifact
# convention, stable across versions.
CODE_BACKGROUND = 0
CODE_OTHER = 1
CODE_BONE = 2
CODE_LUNG = 3
CODE_SAT = 4
CODE_MUSCLE = 5
CODE_VAT = 6

COMPARTMENT_CODES = {
    "bone": CODE_BONE,
    "lung": CODE_LUNG,
    "sat": CODE_SAT,
    "muscle": CODE_MUSCLE,
    "vat": CODE_VAT,
}


class GeometryError(ValueError):
    """Grids that were expected to share geometry do not."""


def _as_triple(value, name: str) -> tuple[float, float, float]:
    t = tuple(float(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class _Grid:
    """Shared geometry carrier: 3D data plus mm spacing and origin."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=self._dtype(), order="C")
        if data.ndim != 3:
            raise ValueError(f"expected a 3D array, got {data.ndim}D")
        spacing = _as_triple(self.spacing, "spacing")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        origin = _as_triple(self.origin, "origin")
        self._validate(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    def _dtype(self):
        raise NotImplementedError

    def _validate(self, data: np.ndarray) -> None:
        pass

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts as (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


class CtVolume(_Grid):
    """CT volume of signed-integer HU values in [-1024, 3071]."""

    def _dtype(self):
        return np.int16

    def _validate(self, data: np.ndarray) -> None:
        if data.size:
            lo = int(data.min())
            hi = int(data.max())
            if lo < HU_MIN or hi > HU_MAX:
                raise ValueError(
                    f"HU values [{lo}, {hi}] outside [{HU_MIN}, {HU_MAX}]; "
                    "clamp on ingest"
                )


class BinaryMask(_Grid):
    """Boolean voxel mask geometrically aligned to a CtVolume."""

    def _dtype(self):
        return bool

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def volume_cc(self) -> float:
        return self.count * self.voxel_volume_mm3 / 1000.0


class LabelMap(_Grid):
    """Exclusive compartment codes, one per voxel (0..6)."""

    def _dtype(self):
        return np.uint8

    def _validate(self, data: np.ndarray) -> None:
        if data.size and int(data.max()) > CODE_VAT:
            raise ValueError(
                f"label codes must be in [0, {CODE_VAT}], found {int(data.max())}"
            )


def geometry_equal(a: _Grid, b: _Grid) -> bool:
    """True iff dims match, spacings agree to 1e-6 mm and origins to 1e-3 mm."""
    if a.data.shape != b.data.shape:
        return False
    if any(abs(p - q) > SPACING_TOL_MM for p, q in zip(a.spacing, b.spacing)):
        return False
    return all(abs(p - q) <= ORIGIN_TOL_MM for p, q in zip(a.origin, b.origin))


def _resampled_positions(nz_in: int, sz_in: float, target_sz: float):
    """Output slice count and fractional input-slice coordinates.

    Output slice j sits at physical z = origin_z + j * target_sz; its input
    coordinate is j * target_sz / sz_in. The output covers the input z-extent:
    nz_out = floor((nz_in - 1) * sz_in / target_sz) + 1 (tiny epsilon guards
    against float drop-off for non-representable spacings).
    """
    if target_sz <= 0:
        raise ValueError(f"target slice thickness must be > 0, got {target_sz}")
    nz_out = int(np.floor((nz_in - 1) * sz_in / target_sz + 1e-9)) + 1
    zf = np.arange(nz_out) * target_sz / sz_in
    return nz_out, np.clip(zf, 0.0, nz_in - 1)


def resample_z(vol: CtVolume, target_sz: float) -> CtVolume:
    """Resample along z to a new slice thickness with linear interpolation.

    The in-plane grid is unchanged. Interpolated HU values are rounded
    half-away-from-zero back to int16. target == input spacing is an exact
    no-op on the data.
    """
    sx, sy, sz = vol.spacing
    if target_sz <= 0:
        raise ValueError(f"target slice thickness must be > 0, got {target_sz}")
    if abs(target_sz - sz) <= SPACING_TOL_MM:
        return CtVolume(vol.data, vol.spacing, vol.origin)
    nz = vol.data.shape[0]
    if nz < 2:
        raise ValueError("cannot resample a volume with fewer than 2 slices")
    _, zf = _resampled_positions(nz, sz, target_sz)
    k = np.minimum(zf.astype(np.int64), nz - 2)
    frac = (zf - k)[:, None, None]
    lo = vol.data[k].astype(np.float64)
    hi = vol.data[k + 1].astype(np.float64)
    out = lo * (1.0 - frac) + hi * frac
    out = np.trunc(out + np.copysign(0.5, out)).astype(np.int16)
    return CtVolume(out, (sx, sy, target_sz), vol.origin)


def resample_mask_z(mask: BinaryMask, target_sz: float) -> BinaryMask:
    """Resample a mask along z by nearest slice, keeping it binary."""
    sx, sy, sz = mask.spacing
    if target_sz <= 0:
        raise ValueError(f"target slice thickness must be > 0, got {target_sz}")
    if abs(target_sz - sz) <= SPACING_TOL_MM:
        return BinaryMask(mask.data, mask.spacing, mask.origin)
    nz = mask.data.shape[0]
    if nz < 2:
        raise ValueError("cannot resample a mask with fewer than 2 slices")
    _, zf = _resampled_positions(nz, sz, target_sz)
    k = np.minimum(np.floor(zf + 0.5).astype(np.int64), nz - 1)
    return BinaryMask(mask.data[k], (sx, sy, target_sz), mask.origin)
