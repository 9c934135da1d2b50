"""CT body-composition segmentation toolkit."""

from .volume import (
    BinaryMask,
    CtVolume,
    GeometryError,
    LabelMap,
    geometry_equal,
    resample_mask_z,
    resample_z,
)
from .mhd import MetaImageError, read_mhd, read_mhd_labels, write_mhd
from .morphology import (
    Connectivity,
    binary_close,
    binary_open,
    components,
    dilate,
    drop_small,
    edt_sq,
    erode,
    fill_holes,
    hysteresis,
    largest_component,
)
from .pipeline import (
    EmptyBodyError,
    PipelineConfig,
    PipelineError,
    SegmentationResult,
    run_pipeline,
    validate_inputs,
)
from .metrics import (
    CompositionReport,
    EvalReport,
    Scores,
    composition,
    sample_slices,
    score,
    score_sampled,
)
from .phantom import PhantomSpec, generate, get_preset, variants

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "CompositionReport",
    "Connectivity",
    "CtVolume",
    "EmptyBodyError",
    "EvalReport",
    "GeometryError",
    "LabelMap",
    "MetaImageError",
    "PhantomSpec",
    "PipelineConfig",
    "PipelineError",
    "Scores",
    "SegmentationResult",
    "binary_close",
    "binary_open",
    "components",
    "composition",
    "dilate",
    "drop_small",
    "edt_sq",
    "erode",
    "fill_holes",
    "generate",
    "geometry_equal",
    "get_preset",
    "hysteresis",
    "largest_component",
    "read_mhd",
    "read_mhd_labels",
    "resample_mask_z",
    "resample_z",
    "run_pipeline",
    "sample_slices",
    "score",
    "score_sampled",
    "validate_inputs",
    "variants",
    "write_mhd",
]
