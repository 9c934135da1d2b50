"""Whole-volume inference: slide a 3-slice window down the z axis (edge
slices replicated), threshold the sigmoid output at 0.5, and export the
mask with the input volume's geometry."""

from __future__ import annotations

import numpy as np
import torch

from .mhd import Volume, read_volume, write_mask
from .model import CavityNet, normalize_hu


def stack_for_slice(norm: np.ndarray, z: int) -> np.ndarray:
    """(3, H, W) window centred on slice z, clamped at the volume ends."""
    nz = norm.shape[0]
    idx = [max(0, z - 1), z, min(nz - 1, z + 1)]
    return norm[idx]


def predict_volume(model: CavityNet, vol: Volume, batch_size: int = 4) -> np.ndarray:
    """Per-voxel cavity mask for a CT volume, thresholded at 0.5."""
    norm = normalize_hu(vol.data)
    nz, ny, nx = norm.shape
    if ny % 8 or nx % 8:
        raise ValueError(f"in-plane dims must be divisible by 8, got {(nx, ny)}")
    out = np.zeros((nz, ny, nx), dtype=bool)
    model.eval()
    with torch.no_grad():
        for start in range(0, nz, batch_size):
            zs = range(start, min(start + batch_size, nz))
            batch = torch.from_numpy(np.stack([stack_for_slice(norm, z) for z in zs]))
            prob = model(batch).numpy()[:, 0]
            out[list(zs)] = prob >= 0.5
    return out


def export_cavity_mask(model: CavityNet, ct_path, out_path) -> np.ndarray:
    """Read a CT, predict its cavity, write the mask beside the geometry."""
    vol = read_volume(ct_path)
    mask = predict_volume(model, vol)
    write_mask(mask, vol.spacing, vol.origin, out_path)
    return mask
