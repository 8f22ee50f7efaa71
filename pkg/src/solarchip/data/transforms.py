"""Preprocessing and synchronized geometric augmentation."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .types import Domain, GeomAug, ImageGrid, SolarSample


def signed_log_array(values):
    """sign(v) * log(1 + |v|) for numpy arrays or torch tensors.

    Written as ``copysign(log1p(|v|), v)`` so the transform is exactly odd.
    """
    if isinstance(values, torch.Tensor):
        return torch.copysign(torch.log1p(values.abs()), values)
    values = np.asarray(values, dtype=np.float64)
    return np.copysign(np.log1p(np.abs(values)), values)


def signed_log(grid: ImageGrid) -> ImageGrid:
    if grid.domain is not Domain.RAW:
        raise ValueError("signed_log expects a raw-domain grid")
    grid.check_finite()
    return ImageGrid(signed_log_array(grid.values), Domain.SIGNED_LOG)


def preprocess(sample: SolarSample) -> SolarSample:
    """Signed-log every modality of a raw sample."""
    return SolarSample(
        timestamp=sample.timestamp,
        images={i: signed_log(g) for i, g in sample.images.items()},
        label=sample.label,
        peak_amplitude=sample.peak_amplitude,
    )


def resample(grid: ImageGrid, side: int) -> ImageGrid:
    """Bilinear resampling to ``side x side`` (used for e.g. 4096 -> 1024 downscaling)."""
    if side == grid.side:
        return grid
    x = torch.from_numpy(grid.values)[None, None]
    y = F.interpolate(x, size=(side, side), mode="bilinear", align_corners=False)
    return ImageGrid(y[0, 0].numpy(), grid.domain)


def aug_array(values, aug: GeomAug):
    """Apply ``aug`` to the last two axes of an array or tensor."""
    k = -aug.quarter_turns  # negative k is clockwise for row-major images
    if isinstance(values, torch.Tensor):
        out = torch.rot90(values, k, dims=(-2, -1))
        return torch.flip(out, dims=(-1,)) if aug.flip else out
    out = np.rot90(values, k, axes=(-2, -1))
    out = np.flip(out, axis=-1) if aug.flip else out
    return np.ascontiguousarray(out)


def apply_aug(sample: SolarSample, aug: GeomAug) -> SolarSample:
    """Transform every modality with the same rotation and flip."""
    return SolarSample(
        timestamp=sample.timestamp,
        images={i: ImageGrid(aug_array(g.values, aug), g.domain) for i, g in sample.images.items()},
        label=sample.label,
        peak_amplitude=sample.peak_amplitude,
    )


def patch_permutation(aug: GeomAug, grid_side: int) -> list[int]:
    """Row-major patch permutation induced by ``aug``.

    Entry ``q`` of the result is the index of the original patch whose
    contents land at position ``q`` after augmentation.
    """
    if grid_side < 1:
        raise ValueError("grid_side must be >= 1")
    ids = np.arange(grid_side * grid_side).reshape(grid_side, grid_side)
    return aug_array(ids, aug).ravel().tolist()
