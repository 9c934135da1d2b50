"""Batch command-line front end.

Exit codes: 0 success, 1 usage error, 2 input/geometry error, 3 pipeline
failure. Data outputs (JSON documents) go to stdout; warnings and errors go
to stderr only.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import mhd, metrics, phantom
from .mhd import MetaImageError
from .pipeline import (
    PipelineConfig,
    PipelineError,
    config_from_text,
    config_to_text,
    run_pipeline,
)
from .volume import BinaryMask, CtVolume, GeometryError, LabelMap

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_PIPELINE = 3

logger = logging.getLogger("bodycomp")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _set_threads(n: int) -> None:
    if n < 1:
        raise _UsageError(f"--threads must be >= 1, got {n}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_DEFAULT_NUM_THREADS))


def _read_ct(path: str) -> CtVolume:
    vol = mhd.read_mhd(path)
    if not isinstance(vol, CtVolume):
        raise MetaImageError(f"{path} is not a MET_SHORT CT volume")
    return vol


def _read_mask(path: str) -> BinaryMask:
    mask = mhd.read_mhd(path)
    if not isinstance(mask, BinaryMask):
        raise MetaImageError(f"{path} is not a MET_UCHAR mask")
    return mask


def _cmd_segment(args) -> int:
    _set_threads(args.threads)
    cfg = PipelineConfig()
    if args.config:
        cfg = config_from_text(Path(args.config).read_text(), cfg)
    ct = _read_ct(args.ct)
    cavity = _read_mask(args.cavity)
    result = run_pipeline(
        ct,
        cavity,
        cfg,
        resample=not args.no_resample,
        ct_path=args.ct,
        cavity_path=args.cavity,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mhd.write_mhd(result.labels, out / "labels.mhd")
    for name in ("body", "cavity", "bone", "lung", "sat", "muscle", "vat"):
        mhd.write_mhd(getattr(result, name), out / f"{name}.mhd")
    (out / "config_used.txt").write_text(config_to_text(result.config))
    report = metrics.composition(result.labels)
    (out / "composition.json").write_text(
        metrics.composition_json(report, config_echo=result.config)
    )
    return EXIT_OK


def _cmd_phantom(args) -> int:
    try:
        spec = phantom.get_preset(args.preset, seed=args.seed, noise_sigma=args.noise)
    except KeyError as exc:
        raise _UsageError(str(exc)) from None
    result = phantom.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mhd.write_mhd(result.ct, out / "ct.mhd")
    mhd.write_mhd(result.truth["cavity"], out / "cavity.mhd")
    for name, mask in result.truth.items():
        mhd.write_mhd(mask, out / f"truth_{name}.mhd")
    for name, mask in result.extras.items():
        if mask.count:
            mhd.write_mhd(mask, out / f"extra_{name}.mhd")
    mhd.write_mhd(result.labels, out / "labels.mhd")
    (out / "phantom_spec.txt").write_text(_spec_text(spec))
    return EXIT_OK


def _spec_text(spec: phantom.PhantomSpec) -> str:
    lines = ["# phantom specification (mm, HU)"]
    for name in (
        "dims",
        "spacing",
        "origin",
        "seed",
        "noise_sigma",
        "body_radius_mm",
        "sat_ring_mm",
        "body_erode_margin_mm",
        "cavity_center_mm",
        "cavity_semi_mm",
        "cavity_z_mm",
        "spine_half_x_mm",
        "spine_y_mm",
        "marrow_half_x_mm",
        "marrow_y_mm",
        "lungs",
        "vat_blobs",
        "imat_blobs",
        "dense_nodule",
        "gas_pockets",
        "contrast_blob",
        "table_slab",
    ):
        lines.append(f"{name} = {getattr(spec, name)}")
    return "\n".join(lines) + "\n"


def _cmd_evaluate(args) -> int:
    if args.slices is not None and args.cavity is None:
        raise _UsageError("--slices requires --cavity")
    pred = mhd.read_mhd_labels(args.pred)
    truth = mhd.read_mhd_labels(args.truth)
    slices = None
    if args.slices is not None:
        if args.slices < 1:
            raise _UsageError("--slices must be >= 1")
        cavity = _read_mask(args.cavity)
        slices = metrics.sample_slices(cavity, args.slices)
        if len(slices) < args.slices:
            logger.warning(
                "slice sampling produced %d unique indices for k=%d",
                len(slices),
                args.slices,
            )
    binary = int(pred.data.max(initial=0)) <= 1 and int(truth.data.max(initial=0)) <= 1
    if binary:
        # plain 0/1 masks: score as the cavity mask workflow
        p = BinaryMask(pred.data != 0, pred.spacing, pred.origin)
        t = BinaryMask(truth.data != 0, truth.spacing, truth.origin)
        report = metrics.evaluate_masks(p, t, slices=slices)
    else:
        report = metrics.evaluate_labels(pred, truth, slices=slices)
    sys.stdout.write(metrics.eval_report_json(report))
    return EXIT_OK


def _cmd_report(args) -> int:
    labels = mhd.read_mhd_labels(args.labels)
    report = metrics.composition(labels)
    sys.stdout.write(metrics.composition_json(report))
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="bodycomp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a CT volume given a cavity mask")
    p.add_argument("--ct", required=True, help="CT volume (.mhd/.mha, MET_SHORT)")
    p.add_argument("--cavity", required=True, help="ventral cavity mask (MET_UCHAR)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="pipeline config overrides (flat name = value)")
    p.add_argument(
        "--no-resample",
        action="store_true",
        help="skip slice-thickness resampling (inputs already at the target)",
    )
    p.add_argument("--threads", type=int, default=1, help="kernel threads")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("phantom", help="generate a synthetic phantom with ground truth")
    p.add_argument("--preset", default="default", help="|".join(sorted(phantom.variants())))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma in HU")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("evaluate", help="score predicted labels or a mask against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--cavity", help="cavity mask for the sampled-slice protocol")
    p.add_argument("--slices", type=int, help="number of uniformly sampled slices")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="body-composition report from a label map")
    p.add_argument("--labels", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MetaImageError, GeometryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
