"""Build training pairs from CT + cavity-mask MetaImage files."""

from __future__ import annotations

import numpy as np

from .mhd import read_volume
from .model import normalize_hu
from .predict import stack_for_slice


def slice_stacks(
    ct_path, cavity_path, z_indices=None, require_cavity: bool = True
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(3-slice stack, centre-slice cavity label) pairs from one case.

    By default every slice where the cavity is present becomes a sample;
    pass explicit z_indices to subsample.
    """
    ct = read_volume(ct_path)
    cavity = read_volume(cavity_path)
    if ct.data.shape != cavity.data.shape:
        raise ValueError("CT and cavity grids do not match")
    norm = normalize_hu(ct.data)
    labels = cavity.data != 0
    if z_indices is None:
        z_indices = [z for z in range(norm.shape[0]) if not require_cavity or labels[z].any()]
    return [
        (stack_for_slice(norm, int(z)), labels[int(z)].astype(np.float32))
        for z in z_indices
    ]
