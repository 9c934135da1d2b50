"""Compartment segmentation pipeline.

Given a CT volume and a ventral-cavity mask on the same grid, segments
body, bone+spine, lung, SAT, muscle and VAT in that order and assembles an
exclusive label map. Fat inside and outside the cavity has the same HU, so
the cavity boundary is what separates VAT from SAT and internal organs from
muscle; every step past the body therefore works on a domain carved out of
the body mask by the cavity and the previously segmented compartments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace

import numpy as np

from . import morphology as morph
from .morphology import Connectivity
from .volume import (
    CODE_BONE,
    CODE_LUNG,
    CODE_MUSCLE,
    CODE_OTHER,
    CODE_SAT,
    CODE_VAT,
    BinaryMask,
    CtVolume,
    GeometryError,
    LabelMap,
    geometry_equal,
    resample_mask_z,
    resample_z,
)

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A segmentation step failed."""


class EmptyBodyError(PipelineError):
    """Body segmentation produced an empty mask (no patient in the scan)."""


@dataclass(frozen=True)
class PipelineConfig:
    """Every pipeline constant in one auditable, overridable record.

    Thresholds are in HU, radii in mm, volume floors in cc. HU predicates:
    body keeps HU > body_threshold_hu; bone grows seeds >= bone_high_hu into
    >= bone_low_hu; lung keeps lung_low_hu <= HU <= lung_high_hu; SAT grows
    seeds < sat_seed_hu into < sat_grow_hu; muscle keeps HU < muscle_max_hu
    (no lower bound: negative-HU voxels disconnected from any fat seed stay
    muscle); VAT grows vat_floor_hu < HU < vat_seed_hu into
    vat_floor_hu < HU < vat_grow_hu.
    """

    body_threshold_hu: int = -250
    body_erode_mm: float = 4.0
    bone_low_hu: int = 200
    bone_high_hu: int = 400
    bone_close_mm: float = 16.0
    lung_low_hu: int = -900
    lung_high_hu: int = -300
    lung_close_mm: float = 5.0
    lung_keep_top: int = 2
    lung_min_cc: float = 200.0
    sat_seed_hu: int = -50
    sat_grow_hu: int = 0
    sat_openclose_mm: float = 1.0
    muscle_max_hu: int = 200
    muscle_open_mm: float = 2.0
    vat_floor_hu: int = -200
    vat_seed_hu: int = -50
    vat_grow_hu: int = 0
    vat_openclose_mm: float = 1.0
    target_slice_mm: float = 2.0

    def validate(self) -> None:
        if self.sat_seed_hu > self.sat_grow_hu:
            raise ValueError("sat_seed_hu must be <= sat_grow_hu")
        if self.vat_seed_hu > self.vat_grow_hu:
            raise ValueError("vat_seed_hu must be <= vat_grow_hu")
        if self.bone_high_hu < self.bone_low_hu:
            raise ValueError("bone_high_hu must be >= bone_low_hu")
        if self.lung_low_hu >= self.lung_high_hu:
            raise ValueError("lung_low_hu must be < lung_high_hu")
        if self.vat_floor_hu >= self.vat_seed_hu:
            raise ValueError("vat_floor_hu must be < vat_seed_hu")
        for name in (
            "body_erode_mm",
            "bone_close_mm",
            "lung_close_mm",
            "sat_openclose_mm",
            "muscle_open_mm",
            "vat_openclose_mm",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lung_keep_top < 0:
            raise ValueError("lung_keep_top must be >= 0")
        if self.lung_min_cc < 0:
            raise ValueError("lung_min_cc must be >= 0")
        if self.target_slice_mm <= 0:
            raise ValueError("target_slice_mm must be > 0")


_UNIT_BY_SUFFIX = {"hu": "HU", "mm": "mm", "cc": "cc", "top": "count"}


def config_to_text(cfg: PipelineConfig) -> str:
    """Flat 'name = value' serialization, units in comments."""
    lines = ["# compartment segmentation configuration"]
    for f in fields(cfg):
        unit = _UNIT_BY_SUFFIX.get(f.name.rsplit("_", 1)[-1], "")
        comment = f"  # {unit}" if unit else ""
        lines.append(f"{f.name} = {getattr(cfg, f.name)}{comment}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse the flat format; keys may be a subset, the rest keep defaults."""
    base = base if base is not None else PipelineConfig()
    types = {f.name: f.type for f in fields(base)}
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in types:
            raise ValueError(f"line {lineno}: unknown config key {name!r}")
        try:
            overrides[name] = int(value) if types[name] == "int" else float(value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad value {value!r} for {name}") from None
    cfg = replace(base, **overrides)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class Provenance:
    ct_path: str | None = None
    cavity_path: str | None = None
    resampled: bool = False


@dataclass(frozen=True)
class SegmentationResult:
    """Label map plus the per-step masks it was assembled from.

    The five compartment masks (bone, lung, sat, muscle, vat) are pairwise
    disjoint and contained in the body mask; SAT and muscle never intersect
    the cavity and VAT lies inside it. For anatomically consistent cavities
    the lungs lie inside the cavity as well.
    """

    labels: LabelMap
    body: BinaryMask
    cavity: BinaryMask  # as received, after resampling
    bone: BinaryMask
    lung: BinaryMask
    sat: BinaryMask
    muscle: BinaryMask
    vat: BinaryMask
    config: PipelineConfig
    provenance: Provenance


def _needs_resampling(grid, target_sz: float) -> bool:
    return abs(grid.spacing[2] - target_sz) > 1e-6


def _check_pair(ct: CtVolume, cavity: BinaryMask) -> None:
    if not geometry_equal(ct, cavity):
        raise GeometryError(
            f"cavity grid {cavity.dims} @ {cavity.spacing} does not match "
            f"CT grid {ct.dims} @ {ct.spacing}"
        )
    if cavity.count == 0:
        logger.warning(
            "cavity mask is empty: SAT/muscle rules will cover all soft "
            "tissue and VAT will be empty"
        )


def validate_inputs(ct: CtVolume, cavity: BinaryMask, cfg: PipelineConfig | None = None) -> None:
    """Check that CT and cavity share a grid once both sit at the target
    slice thickness. Geometry mismatch raises; an empty cavity only warns."""
    cfg = cfg if cfg is not None else PipelineConfig()
    if _needs_resampling(ct, cfg.target_slice_mm):
        ct = resample_z(ct, cfg.target_slice_mm)
    if _needs_resampling(cavity, cfg.target_slice_mm):
        cavity = resample_mask_z(cavity, cfg.target_slice_mm)
    _check_pair(ct, cavity)


def segment_body(ct: CtVolume, cfg: PipelineConfig) -> BinaryMask:
    """Threshold, keep the largest component, fill holes, erode.

    The largest-component step discards the CT table and cables, hole
    filling keeps lungs and bowel gas from puncturing the mask, and the
    erosion strips the outer skin rind.
    """
    thresholded = BinaryMask(ct.data > cfg.body_threshold_hu, ct.spacing, ct.origin)
    body = morph.largest_component(thresholded, Connectivity.FULL26)
    body = morph.fill_holes(body)
    body = morph.erode(body, cfg.body_erode_mm)
    if body.count == 0:
        raise EmptyBodyError("no body found after thresholding and erosion")
    return body


def segment_bone(
    ct: CtVolume, body: BinaryMask, cavity: BinaryMask, cfg: PipelineConfig
) -> BinaryMask:
    """Hysteresis-threshold bone inside the body but outside the cavity.

    The cavity exclusion keeps GI organs imaged with oral contrast out of
    the bone mask. Closing plus hole filling absorbs marrow, disks and
    cartilage; the result is re-intersected with the domain so the closing
    cannot leak back into the cavity.
    """
    domain_arr = body.data & ~cavity.data
    domain = BinaryMask(domain_arr, ct.spacing, ct.origin)
    bone = morph.hysteresis(
        ct,
        lambda hu: hu >= cfg.bone_high_hu,
        lambda hu: hu >= cfg.bone_low_hu,
        domain,
        Connectivity.FULL26,
    )
    bone = morph.binary_close(bone, cfg.bone_close_mm)
    bone = morph.fill_holes(bone)
    return BinaryMask(bone.data & domain_arr, ct.spacing, ct.origin)


def segment_lung(ct: CtVolume, body: BinaryMask, cfg: PipelineConfig) -> BinaryMask:
    """Threshold the air-range inside the body, close vessel holes, then
    keep only the two largest components of at least the volume floor."""
    candidate = (ct.data >= cfg.lung_low_hu) & (ct.data <= cfg.lung_high_hu) & body.data
    closed = morph.binary_close(
        BinaryMask(candidate, ct.spacing, ct.origin), cfg.lung_close_mm
    )
    inside = BinaryMask(closed.data & body.data, ct.spacing, ct.origin)
    return morph.drop_small(inside, cfg.lung_min_cc, cfg.lung_keep_top, Connectivity.FULL26)


def segment_sat(
    ct: CtVolume,
    body: BinaryMask,
    cavity: BinaryMask,
    bone: BinaryMask,
    cfg: PipelineConfig,
) -> BinaryMask:
    """Hysteresis-threshold subcutaneous fat outside the cavity, then open
    and close by 1 mm to drop very small labelling."""
    domain_arr = body.data & ~cavity.data & ~bone.data
    domain = BinaryMask(domain_arr, ct.spacing, ct.origin)
    sat = morph.hysteresis(
        ct,
        lambda hu: hu < cfg.sat_seed_hu,
        lambda hu: hu < cfg.sat_grow_hu,
        domain,
        Connectivity.FULL26,
    )
    sat = morph.binary_close(morph.binary_open(sat, cfg.sat_openclose_mm), cfg.sat_openclose_mm)
    return BinaryMask(sat.data & domain_arr, ct.spacing, ct.origin)


def segment_muscle(
    ct: CtVolume,
    body: BinaryMask,
    cavity: BinaryMask,
    bone: BinaryMask,
    sat: BinaryMask,
    cfg: PipelineConfig,
) -> BinaryMask:
    """Everything under the muscle threshold outside cavity, bone and SAT,
    opened by 2 mm to drop small erroneous labelling."""
    domain = body.data & ~cavity.data & ~bone.data & ~sat.data
    muscle = BinaryMask((ct.data < cfg.muscle_max_hu) & domain, ct.spacing, ct.origin)
    return morph.binary_open(muscle, cfg.muscle_open_mm)


def segment_vat(
    ct: CtVolume, cavity: BinaryMask, lung: BinaryMask, cfg: PipelineConfig
) -> BinaryMask:
    """Hysteresis-threshold visceral fat inside the cavity.

    The domain drops lung voxels and everything below the floor threshold
    (air pockets in stomach and bowel); open/close by 1 mm removes small
    labelling and refills pinholes left by small vessels.
    """
    hu = ct.data
    domain_arr = cavity.data & ~lung.data & ~(hu < cfg.vat_floor_hu)
    domain = BinaryMask(domain_arr, ct.spacing, ct.origin)
    vat = morph.hysteresis(
        ct,
        lambda v: (v > cfg.vat_floor_hu) & (v < cfg.vat_seed_hu),
        lambda v: (v > cfg.vat_floor_hu) & (v < cfg.vat_grow_hu),
        domain,
        Connectivity.FULL26,
    )
    vat = morph.binary_close(morph.binary_open(vat, cfg.vat_openclose_mm), cfg.vat_openclose_mm)
    return BinaryMask(vat.data & cavity.data & ~lung.data, ct.spacing, ct.origin)


def _assert_disjoint(masks: dict[str, BinaryMask]) -> None:
    names = list(masks)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            overlap = int(np.count_nonzero(masks[a].data & masks[b].data))
            if overlap:
                raise PipelineError(
                    f"internal error: {a} and {b} overlap on {overlap} voxels"
                )


def run_pipeline(
    ct: CtVolume,
    cavity: BinaryMask,
    cfg: PipelineConfig | None = None,
    *,
    resample: bool = True,
    ct_path: str | None = None,
    cavity_path: str | None = None,
) -> SegmentationResult:
    """Run the full segmentation and assemble the exclusive label map.

    Inputs are first resampled to the target slice thickness (the CT
    linearly, the cavity by nearest slice) unless ``resample`` is False.
    The cavity is clipped to the body mask before it is used as a domain,
    and each later step subtracts the earlier compartments it could
    otherwise touch, so the five compartment masks are disjoint by
    construction; an assembly assertion guards that.
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    cfg.validate()

    resampled = False
    if resample:
        if _needs_resampling(ct, cfg.target_slice_mm):
            ct = resample_z(ct, cfg.target_slice_mm)
            resampled = True
        if _needs_resampling(cavity, cfg.target_slice_mm):
            cavity = resample_mask_z(cavity, cfg.target_slice_mm)
            resampled = True
    _check_pair(ct, cavity)

    body = segment_body(ct, cfg)
    # tissue rules only make sense for cavity voxels that are actually body
    cavity_eff = BinaryMask(cavity.data & body.data, ct.spacing, ct.origin)

    bone = segment_bone(ct, body, cavity_eff, cfg)
    lung = segment_lung(ct, body, cfg)
    lung = BinaryMask(lung.data & ~bone.data, ct.spacing, ct.origin)
    sat = segment_sat(ct, body, cavity_eff, bone, cfg)
    sat = BinaryMask(sat.data & ~lung.data, ct.spacing, ct.origin)
    muscle = segment_muscle(ct, body, cavity_eff, bone, sat, cfg)
    muscle = BinaryMask(muscle.data & ~lung.data, ct.spacing, ct.origin)
    vat = segment_vat(ct, cavity_eff, lung, cfg)

    steps = {"bone": bone, "lung": lung, "sat": sat, "muscle": muscle, "vat": vat}
    _assert_disjoint(steps)

    labels = np.zeros(ct.data.shape, dtype=np.uint8)
    labels[body.data] = CODE_OTHER
    # precedence bone > lung > SAT > muscle > VAT is diagnostic only: the
    # masks are already disjoint, so assignment order cannot matter
    for code, mask in (
        (CODE_VAT, vat),
        (CODE_MUSCLE, muscle),
        (CODE_SAT, sat),
        (CODE_LUNG, lung),
        (CODE_BONE, bone),
    ):
        labels[mask.data] = code

    return SegmentationResult(
        labels=LabelMap(labels, ct.spacing, ct.origin),
        body=body,
        cavity=cavity,
        bone=bone,
        lung=lung,
        sat=sat,
        muscle=muscle,
        vat=vat,
        config=cfg,
        provenance=Provenance(ct_path=ct_path, cavity_path=cavity_path, resampled=resampled),
    )
