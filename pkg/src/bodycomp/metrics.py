"""Segmentation scoring and body-composition reporting.

Scores follow the usual overlap formulas: dice = 2TP/(2TP+FP+FN),
recall = TP/(TP+FN), precision = TP/(TP+FP). Degenerate cases are fixed
conventions, serialized explicitly as JSON nulls rather than NaN:
both masks empty scores (1, 1, 1); an empty prediction against a nonempty
truth scores dice 0, recall 0, precision null; a nonempty prediction
against an empty truth scores dice 0, recall null, precision 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .pipeline import PipelineConfig
from .volume import (
    COMPARTMENT_CODES,
    BinaryMask,
    GeometryError,
    LabelMap,
    geometry_equal,
)

COMPARTMENT_ORDER = ("bone", "lung", "sat", "muscle", "vat")


@dataclass(frozen=True)
class Scores:
    dice: float
    recall: float | None
    precision: float | None


def _scores_from_counts(tp: int, fp: int, fn: int) -> Scores:
    if tp == 0 and fp == 0 and fn == 0:
        return Scores(1.0, 1.0, 1.0)
    dice = 2.0 * tp / (2.0 * tp + fp + fn)
    recall = tp / (tp + fn) if tp + fn else None
    precision = tp / (tp + fp) if tp + fp else None
    return Scores(dice, recall, precision)


def score(pred: BinaryMask, truth: BinaryMask) -> Scores:
    """Whole-volume dice/recall/precision of a predicted mask."""
    if not geometry_equal(pred, truth):
        raise GeometryError("prediction and truth grids do not match")
    tp = int(np.count_nonzero(pred.data & truth.data))
    fp = int(np.count_nonzero(pred.data & ~truth.data))
    fn = int(np.count_nonzero(~pred.data & truth.data))
    return _scores_from_counts(tp, fp, fn)


def sample_slices(cavity: BinaryMask, k: int) -> list[int]:
    """k z-indices uniformly spaced over the cavity's true z-extent.

    k = 1 picks the midpoint; duplicate indices from a short extent are
    deduplicated (the caller can compare the returned count against k).
    """
    if k < 1:
        raise ValueError(f"slice count must be >= 1, got {k}")
    hits = np.flatnonzero(np.any(cavity.data, axis=(1, 2)))
    if hits.size == 0:
        raise ValueError("cannot sample slices from an empty cavity")
    z_min, z_max = int(hits[0]), int(hits[-1])
    if k == 1:
        positions = [(z_min + z_max) / 2.0]
    else:
        positions = [z_min + i * (z_max - z_min) / (k - 1) for i in range(k)]
    rounded = [int(np.floor(p + 0.5)) for p in positions]
    out: list[int] = []
    for z in rounded:
        if z not in out:
            out.append(z)
    return out


def score_sampled(pred: BinaryMask, truth: BinaryMask, slices: list[int]) -> Scores:
    """Pooled (micro) scores over the sampled slices: TP/FP/FN are summed
    across slices first and the formulas applied once."""
    if not geometry_equal(pred, truth):
        raise GeometryError("prediction and truth grids do not match")
    if not slices:
        raise ValueError("empty slice set")
    nz = pred.data.shape[0]
    for z in slices:
        if not 0 <= z < nz:
            raise ValueError(f"slice index {z} outside [0, {nz})")
    idx = np.asarray(slices, dtype=np.int64)
    p = pred.data[idx]
    t = truth.data[idx]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return _scores_from_counts(tp, fp, fn)


@dataclass(frozen=True)
class EvalReport:
    """Per-compartment scores, whole-volume or pooled over sampled slices."""

    entries: dict[str, Scores]
    mode: str  # "whole-volume" or "sampled-slices"
    slices: list[int] | None = None


def evaluate_labels(
    pred: LabelMap, truth: LabelMap, slices: list[int] | None = None
) -> EvalReport:
    """Score every compartment code of a predicted label map."""
    if not geometry_equal(pred, truth):
        raise GeometryError("prediction and truth grids do not match")
    entries: dict[str, Scores] = {}
    for name in COMPARTMENT_ORDER:
        code = COMPARTMENT_CODES[name]
        p = BinaryMask(pred.data == code, pred.spacing, pred.origin)
        t = BinaryMask(truth.data == code, truth.spacing, truth.origin)
        entries[name] = score_sampled(p, t, slices) if slices else score(p, t)
    mode = "sampled-slices" if slices else "whole-volume"
    return EvalReport(entries=entries, mode=mode, slices=slices)


def evaluate_masks(
    pred: BinaryMask, truth: BinaryMask, name: str = "cavity", slices: list[int] | None = None
) -> EvalReport:
    """Score a single binary mask (the cavity, in the usual workflow)."""
    scores = score_sampled(pred, truth, slices) if slices else score(pred, truth)
    mode = "sampled-slices" if slices else "whole-volume"
    return EvalReport(entries={name: scores}, mode=mode, slices=slices)


@dataclass(frozen=True)
class CompositionReport:
    """Per-compartment voxel counts and volumes plus the VAT/SAT ratio."""

    voxel_counts: dict[str, int]
    volumes_cc: dict[str, float]
    vat_sat_ratio: float | None
    total_body_cc: float
    voxel_volume_mm3: float


def composition(labels: LabelMap) -> CompositionReport:
    counts_by_code = np.bincount(labels.data.ravel(), minlength=7)
    vox_mm3 = labels.voxel_volume_mm3
    voxel_counts = {
        name: int(counts_by_code[COMPARTMENT_CODES[name]]) for name in COMPARTMENT_ORDER
    }
    volumes_cc = {name: n * vox_mm3 / 1000.0 for name, n in voxel_counts.items()}
    sat_cc = volumes_cc["sat"]
    ratio = volumes_cc["vat"] / sat_cc if sat_cc > 0 else None
    total_body = int(counts_by_code[1:].sum()) * vox_mm3 / 1000.0
    return CompositionReport(
        voxel_counts=voxel_counts,
        volumes_cc=volumes_cc,
        vat_sat_ratio=ratio,
        total_body_cc=total_body,
        voxel_volume_mm3=vox_mm3,
    )


def _report_document(
    compartments: dict[str, dict],
    vat_sat_ratio: float | None,
    mode: str | None,
    slices: list[int] | None,
    config_echo: PipelineConfig | None,
) -> dict:
    # fixed field order keeps reports diffable
    return {
        "compartments": compartments,
        "vat_sat_ratio": vat_sat_ratio,
        "mode": mode,
        "slices": slices,
        "config_echo": None if config_echo is None else asdict(config_echo),
    }


def eval_report_json(report: EvalReport, config_echo: PipelineConfig | None = None) -> str:
    compartments = {
        name: {"dice": s.dice, "recall": s.recall, "precision": s.precision}
        for name, s in report.entries.items()
    }
    doc = _report_document(compartments, None, report.mode, report.slices, config_echo)
    return json.dumps(doc, indent=2) + "\n"


def composition_json(report: CompositionReport, config_echo: PipelineConfig | None = None) -> str:
    compartments = {
        name: {
            "volume_cc": report.volumes_cc[name],
            "voxel_count": report.voxel_counts[name],
        }
        for name in COMPARTMENT_ORDER
    }
    doc = _report_document(compartments, report.vat_sat_ratio, None, None, config_echo)
    doc["total_body_cc"] = report.total_body_cc
    doc["voxel_volume_mm3"] = report.voxel_volume_mm3
    return json.dumps(doc, indent=2) + "\n"
