"""Deterministic synthetic-torso CT phantoms with exact ground truth.

The phantom is a stack of analytic shapes: an elliptical (default circular)
body cylinder wrapped in a subcutaneous fat ring, a muscle wall filling
everything between the fat ring and the ventral cavity, a rectangular spine
column with a marrow core, two lung ellipsoids, fat blobs inside the cavity
(VAT) and inside the muscle (intramuscular fat, which the thresholding
rules classify as SAT), plus optional gas pockets, an oral-contrast blob
and a scanner table slab.

Ground truth is derived from the analytic shapes before noise is added, so
any segmentation error is attributable to the pipeline rather than label
noise. Truth masks are clipped to the analytically eroded body (the body
cylinder shrunk by ``body_erode_margin_mm``, matching the pipeline's skin
erosion) so they live on the same footing as pipeline output. Shape centres
sit on integer millimetres while voxel centres sit on half millimetres, so
rasterization never lands exactly on a shape boundary.

Noise is a single draw from numpy's default PCG64 generator seeded with
``seed``; the same spec and seed reproduce the volume bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .volume import (
    CODE_BONE,
    CODE_LUNG,
    CODE_MUSCLE,
    CODE_OTHER,
    CODE_SAT,
    CODE_VAT,
    HU_MAX,
    HU_MIN,
    BinaryMask,
    CtVolume,
    LabelMap,
)

# nominal HU per tissue; standard CT ranges placed on the correct side of
# every default pipeline threshold
HU_AIR = -1000
HU_LUNG = -800
HU_FAT = -100
HU_ORGANS = 40
HU_MUSCLE = 50
HU_MARROW = 250
HU_CORTICAL = 700
HU_CONTRAST = 500
HU_GAS = -600
HU_TABLE = 100


@dataclass(frozen=True)
class Sphere:
    """x, y are mm relative to the in-plane grid centre; z is absolute mm."""

    x: float
    y: float
    z: float
    r: float


@dataclass(frozen=True)
class Ellipsoid:
    x: float
    y: float
    z: float
    a: float
    b: float
    c: float

    @property
    def volume_mm3(self) -> float:
        return 4.0 / 3.0 * math.pi * self.a * self.b * self.c


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, tissue HU placement, seed and noise level of one phantom."""

    dims: tuple[int, int, int] = (256, 256, 120)
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    noise_sigma: float = 0.0

    body_radius_mm: float = 112.0
    sat_ring_mm: float = 28.0  # fat ring thickness inside the skin surface
    # matches the pipeline's default body erosion; ground truth is clipped
    # to the body shrunk by this margin
    body_erode_margin_mm: float = 4.0

    cavity_center_mm: tuple[float, float] = (0.0, 10.0)
    cavity_semi_mm: tuple[float, float] = (66.0, 52.0)
    cavity_z_mm: tuple[float, float] = (0.0, 238.0)

    # rectangular spine column (runs the full z extent), marrow core inside
    spine_half_x_mm: float = 16.0
    spine_y_mm: tuple[float, float] = (-78.0, -48.0)
    marrow_half_x_mm: float = 10.0
    marrow_y_mm: tuple[float, float] = (-72.0, -54.0)

    lungs: tuple[Ellipsoid, ...] = (
        Ellipsoid(-34.0, 8.0, 170.0, 28.0, 30.0, 60.0),
        Ellipsoid(34.0, 8.0, 170.0, 28.0, 30.0, 60.0),
    )
    vat_blobs: tuple[Sphere, ...] = (
        Sphere(-30.0, 20.0, 36.0, 10.0),
        Sphere(30.0, 20.0, 36.0, 10.0),
        Sphere(-34.0, -10.0, 70.0, 9.0),
        Sphere(34.0, -10.0, 70.0, 9.0),
        Sphere(0.0, -18.0, 100.0, 11.0),
        Sphere(0.0, 32.0, 104.0, 9.0),
    )
    # intramuscular fat: same HU as SAT/VAT, outside the cavity, so the
    # rules label it SAT
    imat_blobs: tuple[Sphere, ...] = (
        Sphere(-48.0, -48.0, 90.0, 6.0),
        Sphere(48.0, -52.0, 150.0, 6.0),
    )
    # a detached blob in the bone grow range but with no seed: must end up
    # neither bone (no 400+ voxel) nor muscle (over the 200 HU cut)
    dense_nodule: Sphere | None = Sphere(52.0, -52.0, 100.0, 5.0)
    gas_pockets: tuple[Sphere, ...] = (Sphere(0.0, 25.0, 60.0, 18.0),)
    contrast_blob: Sphere | None = None
    # (y_low, y_high, half_x) slab behind the body, full z extent
    table_slab: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class PhantomResult:
    ct: CtVolume
    truth: dict[str, BinaryMask]  # body, cavity, bone, lung, sat, muscle, vat
    labels: LabelMap
    extras: dict[str, BinaryMask]  # gas, table, contrast, nodule, imat


def _unit_directions(n: int = 362) -> np.ndarray:
    # Fibonacci sphere: evenly spread unit vectors for surface sampling
    i = np.arange(n, dtype=np.float64) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    cos_t = 1.0 - 2.0 * i / n
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


class _Raster:
    """Shared coordinate grids for rasterizing analytic shapes."""

    def __init__(self, spec: PhantomSpec):
        nx, ny, nz = spec.dims
        sx, sy, sz = spec.spacing
        self.shape = (nz, ny, nx)
        # in-plane coordinates relative to the grid centre (half-integer
        # voxel centres against integer shape parameters: no boundary ties)
        self.x = (np.arange(nx) * sx - (nx - 1) * sx / 2.0)[None, None, :]
        self.y = (np.arange(ny) * sy - (ny - 1) * sy / 2.0)[None, :, None]
        self.z = (np.arange(nz) * sz)[:, None, None]

    def disc(self, radius: float) -> np.ndarray:
        return np.broadcast_to(self.x**2 + self.y**2 <= radius * radius, self.shape).copy()

    def ellipse_cyl(self, cx, cy, a, b, z_lo, z_hi) -> np.ndarray:
        planar = ((self.x - cx) / a) ** 2 + ((self.y - cy) / b) ** 2 <= 1.0
        return planar & (self.z >= z_lo) & (self.z <= z_hi)

    def box(self, half_x, y_lo, y_hi) -> np.ndarray:
        planar = (np.abs(self.x) <= half_x) & (self.y >= y_lo) & (self.y <= y_hi)
        return np.broadcast_to(planar, self.shape).copy()

    def sphere(self, s: Sphere) -> np.ndarray:
        d2 = (self.x - s.x) ** 2 + (self.y - s.y) ** 2 + (self.z - s.z) ** 2
        return d2 <= s.r * s.r

    def ellipsoid(self, e: Ellipsoid) -> np.ndarray:
        d2 = (
            ((self.x - e.x) / e.a) ** 2
            + ((self.y - e.y) / e.b) ** 2
            + ((self.z - e.z) / e.c) ** 2
        )
        return d2 <= 1.0


def _sphere_surface(s: Sphere, inflate: float) -> np.ndarray:
    return np.array([s.x, s.y, s.z]) + (s.r + inflate) * _unit_directions()


def _ellipsoid_surface(e: Ellipsoid, inflate: float) -> np.ndarray:
    dirs = _unit_directions()
    return np.array([e.x, e.y, e.z]) + dirs * (np.array([e.a, e.b, e.c]) + inflate)


def _inside_cavity(points: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    (cx, cy), (a, b) = spec.cavity_center_mm, spec.cavity_semi_mm
    z_lo, z_hi = spec.cavity_z_mm
    planar = ((points[:, 0] - cx) / a) ** 2 + ((points[:, 1] - cy) / b) ** 2 <= 1.0
    return planar & (points[:, 2] >= z_lo) & (points[:, 2] <= z_hi)


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise ValueError(f"inconsistent phantom geometry: {what}")


def _validate_spec(spec: PhantomSpec) -> None:
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    _check(min(nx, ny, nz) > 0 and min(sx, sy, sz) > 0, "dims and spacing must be positive")
    _check(spec.noise_sigma >= 0, "noise_sigma must be >= 0")
    muscle_outer = spec.body_radius_mm - spec.sat_ring_mm
    _check(0 < muscle_outer < spec.body_radius_mm, "fat ring thicker than the body")
    half_extent = min((nx - 1) * sx, (ny - 1) * sy) / 2.0
    _check(
        spec.body_radius_mm + 6.0 <= half_extent,
        "body must stay at least 6 mm clear of the grid edge",
    )
    (cx, cy), (a, b) = spec.cavity_center_mm, spec.cavity_semi_mm
    _check(
        abs(cx) + a + 4.0 <= muscle_outer and abs(cy) + b + 4.0 <= muscle_outer,
        "cavity larger than the muscle wall allows",
    )
    sp_lo, sp_hi = spec.spine_y_mm
    _check(sp_lo < sp_hi <= 0, "spine must sit posterior (negative y)")
    _check(
        math.hypot(spec.spine_half_x_mm, max(abs(sp_lo), abs(sp_hi))) + 4.0 <= muscle_outer,
        "spine pokes out of the muscle wall",
    )
    _check(
        spec.marrow_half_x_mm + 4.0 <= spec.spine_half_x_mm
        and sp_lo + 4.0 <= spec.marrow_y_mm[0]
        and spec.marrow_y_mm[1] + 4.0 <= sp_hi,
        "marrow core needs at least 4 mm of cortical wall",
    )
    # cavity must clear the spine so a muscle bridge survives the 2 mm open
    ys = cy - b  # lowest cavity point (spine is below the cavity)
    _check(ys >= sp_hi + 6.0, "cavity must stay 6 mm clear of the spine")

    interior_shapes: list[tuple[str, np.ndarray]] = []
    for i, lung in enumerate(spec.lungs):
        interior_shapes.append((f"lung[{i}]", _ellipsoid_surface(lung, 1.0)))
    for i, s in enumerate(spec.vat_blobs):
        interior_shapes.append((f"vat_blob[{i}]", _sphere_surface(s, 2.0)))
    for i, s in enumerate(spec.gas_pockets):
        interior_shapes.append((f"gas_pocket[{i}]", _sphere_surface(s, 2.0)))
    if spec.contrast_blob is not None:
        interior_shapes.append(("contrast_blob", _sphere_surface(spec.contrast_blob, 2.0)))
    for name, pts in interior_shapes:
        _check(bool(np.all(_inside_cavity(pts, spec))), f"{name} not inside the cavity")

    # Pairwise clearances. Shapes that land in the same candidate mask must
    # stay farther apart than twice the closing radius applied there, or
    # the closing bridges them: 2x5 mm for the lung HU range (lungs and gas
    # pockets), 2x1 mm for the fat blobs. Unrelated shapes just must not
    # touch. Lungs are exempt from the lung-lung rule when they overlap
    # (the merged-lungs preset does that on purpose).
    def family(name: str) -> str:
        return "air-range" if name.startswith(("lung", "gas")) else "fat-range"

    def centre_r(obj) -> tuple[np.ndarray, float]:
        if isinstance(obj, Sphere):
            return np.array([obj.x, obj.y, obj.z]), obj.r
        return np.array([obj.x, obj.y, obj.z]), max(obj.a, obj.b, obj.c)

    blobs: list[tuple[str, object]] = [(f"lung[{i}]", e) for i, e in enumerate(spec.lungs)]
    blobs += [(f"gas_pocket[{i}]", s) for i, s in enumerate(spec.gas_pockets)]
    blobs += [(f"vat_blob[{i}]", s) for i, s in enumerate(spec.vat_blobs)]
    if spec.contrast_blob is not None:
        blobs.append(("contrast_blob", spec.contrast_blob))
    required = {"air-range": 11.0, "fat-range": 3.0}
    for i in range(len(blobs)):
        for j in range(i + 1, len(blobs)):
            ni, oi = blobs[i]
            nj, oj = blobs[j]
            ci, ri = centre_r(oi)
            cj, rj = centre_r(oj)
            gap = float(np.linalg.norm(ci - cj)) - ri - rj
            if ni.startswith("lung") and nj.startswith("lung") and gap < 0:
                continue
            need = required[family(ni)] if family(ni) == family(nj) else 3.0
            _check(gap >= need, f"{ni} and {nj} are only {gap:.1f} mm apart")

    for i, s in enumerate(spec.imat_blobs + ((spec.dense_nodule,) if spec.dense_nodule else ())):
        pts = _sphere_surface(s, 3.0)
        _check(bool(np.all(~_inside_cavity(pts, spec))), f"muscle blob [{i}] touches the cavity")
        radial = np.hypot(pts[:, 0], pts[:, 1])
        _check(bool(np.all(radial <= muscle_outer)), f"muscle blob [{i}] reaches the fat ring")
        in_spine = (np.abs(pts[:, 0]) <= spec.spine_half_x_mm) & (
            (pts[:, 1] >= sp_lo) & (pts[:, 1] <= sp_hi)
        )
        _check(bool(np.all(~in_spine)), f"muscle blob [{i}] touches the spine")
    if spec.table_slab is not None:
        y_lo, y_hi, _ = spec.table_slab
        _check(
            y_lo > spec.body_radius_mm + 4.0,
            "table slab must stay clear of the body surface",
        )
        _check(y_hi > y_lo, "table slab y range is empty")


def generate(spec: PhantomSpec) -> PhantomResult:
    """Rasterize the spec, add seeded Gaussian noise, derive ground truth."""
    _validate_spec(spec)
    r = _Raster(spec)
    sx, sy, sz = spec.spacing
    nz, ny, nx = r.shape

    body = r.disc(spec.body_radius_mm)
    muscle_zone = r.disc(spec.body_radius_mm - spec.sat_ring_mm)
    cavity = r.ellipse_cyl(
        *spec.cavity_center_mm, *spec.cavity_semi_mm, *spec.cavity_z_mm
    )
    spine = r.box(spec.spine_half_x_mm, *spec.spine_y_mm)
    marrow = r.box(spec.marrow_half_x_mm, *spec.marrow_y_mm)
    lungs = np.zeros(r.shape, dtype=bool)
    for e in spec.lungs:
        lungs |= r.ellipsoid(e)
    vat = np.zeros(r.shape, dtype=bool)
    for s in spec.vat_blobs:
        vat |= r.sphere(s)
    imat = np.zeros(r.shape, dtype=bool)
    for s in spec.imat_blobs:
        imat |= r.sphere(s)
    gas = np.zeros(r.shape, dtype=bool)
    for s in spec.gas_pockets:
        gas |= r.sphere(s)
    nodule = r.sphere(spec.dense_nodule) if spec.dense_nodule else np.zeros(r.shape, bool)
    contrast = r.sphere(spec.contrast_blob) if spec.contrast_blob else np.zeros(r.shape, bool)
    table = (
        r.box(spec.table_slab[2], spec.table_slab[0], spec.table_slab[1])
        if spec.table_slab
        else np.zeros(r.shape, dtype=bool)
    )

    hu = np.full(r.shape, HU_AIR, dtype=np.float64)
    hu[table] = HU_TABLE
    hu[body] = HU_FAT
    hu[muscle_zone] = HU_MUSCLE
    hu[cavity] = HU_ORGANS
    hu[spine] = HU_CORTICAL
    hu[marrow] = HU_MARROW
    hu[lungs] = HU_LUNG
    hu[gas] = HU_GAS
    hu[vat] = HU_FAT
    hu[imat] = HU_FAT
    hu[nodule] = HU_MARROW
    hu[contrast] = HU_CONTRAST

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        hu = hu + rng.normal(0.0, spec.noise_sigma, size=r.shape)
    hu = np.trunc(hu + np.copysign(0.5, hu))
    ct = CtVolume(np.clip(hu, HU_MIN, HU_MAX).astype(np.int16), spec.spacing, spec.origin)

    # ground truth lives inside the analytically eroded body: the body
    # cylinder shrunk by the erosion margin in-plane, with the end slices
    # whose out-of-bounds distance is within the margin removed
    margin = spec.body_erode_margin_mm
    zi = np.arange(nz)
    z_keep = (np.minimum(zi + 1, nz - zi) * sz > margin)[:, None, None]
    tbody = r.disc(spec.body_radius_mm - margin) & z_keep

    truth = {
        "body": tbody,
        "cavity": cavity & tbody,
        "bone": spine & tbody,
        "lung": lungs & tbody,
        "sat": (body & ~muscle_zone | imat) & tbody,
        "muscle": (muscle_zone & ~cavity & ~spine & ~imat & ~nodule) & tbody,
        "vat": vat & tbody,
    }

    compartments = ("bone", "lung", "sat", "muscle", "vat")
    for i, a in enumerate(compartments):
        for b in compartments[i + 1 :]:
            overlap = int(np.count_nonzero(truth[a] & truth[b]))
            _check(overlap == 0, f"truth {a} and {b} overlap on {overlap} voxels")
    _check(bool(np.all(truth["vat"] <= truth["cavity"])), "truth VAT outside cavity")
    _check(bool(np.all(truth["lung"] <= truth["cavity"])), "truth lung outside cavity")
    _check(
        not np.any(truth["sat"] & truth["cavity"]) and not np.any(truth["muscle"] & truth["cavity"]),
        "truth SAT/muscle inside cavity",
    )
    _check(not np.any(truth["bone"] & truth["cavity"]), "truth bone inside cavity")

    codes = np.zeros(r.shape, dtype=np.uint8)
    codes[tbody] = CODE_OTHER
    for code, name in (
        (CODE_BONE, "bone"),
        (CODE_LUNG, "lung"),
        (CODE_SAT, "sat"),
        (CODE_MUSCLE, "muscle"),
        (CODE_VAT, "vat"),
    ):
        codes[truth[name]] = code

    geom = (spec.spacing, spec.origin)
    return PhantomResult(
        ct=ct,
        truth={k: BinaryMask(v, *geom) for k, v in truth.items()},
        labels=LabelMap(codes, *geom),
        extras={
            "gas": BinaryMask(gas, *geom),
            "table": BinaryMask(table, *geom),
            "contrast": BinaryMask(contrast, *geom),
            "nodule": BinaryMask(nodule, *geom),
            "imat": BinaryMask(imat, *geom),
        },
    )


def variants() -> dict[str, PhantomSpec]:
    """Named presets, each exercising one segmentation rule."""
    default = PhantomSpec()
    return {
        "default": default,
        "merged-lungs": replace(
            default,
            lungs=(
                Ellipsoid(-18.0, 8.0, 170.0, 28.0, 30.0, 60.0),
                Ellipsoid(18.0, 8.0, 170.0, 28.0, 30.0, 60.0),
            ),
        ),
        "contrast-bowel": replace(default, contrast_blob=Sphere(0.0, -14.0, 56.0, 12.0)),
        "gas-pockets": replace(
            default,
            gas_pockets=(
                Sphere(0.0, 25.0, 60.0, 18.0),
                Sphere(-34.0, 18.0, 86.0, 11.0),
                Sphere(30.0, 14.0, 88.0, 9.0),
            ),
        ),
        "with-table": replace(default, table_slab=(118.0, 124.0, 90.0)),
        "no-thorax": replace(default, lungs=()),
    }


def get_preset(name: str, seed: int = 0, noise_sigma: float = 0.0) -> PhantomSpec:
    presets = variants()
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return replace(presets[name], seed=seed, noise_sigma=noise_sigma)


# Decisive HU thresholds per tissue, for verifying noise margins. A
# threshold is decisive for a tissue when one of its voxels crossing it
# would be misclassified in a way the pipeline does not self-heal. Seed
# thresholds of the tissue's own compartment are not decisive (hysteresis
# only needs one seed somewhere), and marrow dropping below the bone grow
# threshold only opens holes that the 16 mm close plus fill repairs, so
# marrow has no decisive thresholds at all.
def decision_margins(cfg=None) -> dict[str, float]:
    from .pipeline import PipelineConfig

    cfg = cfg if cfg is not None else PipelineConfig()
    decisive = {
        "air": (cfg.lung_low_hu, cfg.body_threshold_hu),
        "lung": (cfg.lung_low_hu, cfg.lung_high_hu),
        "fat": (cfg.sat_grow_hu, cfg.vat_grow_hu, cfg.vat_floor_hu),
        "organs": (cfg.vat_seed_hu, cfg.bone_low_hu),
        "muscle": (cfg.sat_seed_hu, cfg.muscle_max_hu),
        "cortical": (cfg.bone_high_hu,),
        "contrast": (cfg.bone_high_hu,),
        "gas": (cfg.lung_low_hu, cfg.lung_high_hu, cfg.vat_floor_hu),
        "table": (cfg.body_threshold_hu,),
    }
    values = {
        "air": HU_AIR,
        "lung": HU_LUNG,
        "fat": HU_FAT,
        "organs": HU_ORGANS,
        "muscle": HU_MUSCLE,
        "cortical": HU_CORTICAL,
        "contrast": HU_CONTRAST,
        "gas": HU_GAS,
        "table": HU_TABLE,
    }
    return {
        tissue: min(abs(values[tissue] - t) for t in thresholds)
        for tissue, thresholds in decisive.items()
    }
