"""Convolutional encoder/decoder pair.

The encoder halves resolution with one stride-2 convolution per stage
until each feature vector covers one ``patch_size`` square. Fixed sin-cos
coordinate channels join the last mixing convolution, and a 1x1
convolution gives the token width; flattening that map row-major gives
the patch tokens. The class token is a linear projection of global
averages of the same map, each taken under one map of a fixed low-order
spatial basis (the first map is constant, so the plain global average is
one block). Averages weighted this way keep track of where on the disk
activity sits, which a single unweighted average discards. The decoder
mirrors the encoder with sub-pixel (pixel-shuffle) upsampling, so no 3x3
convolution runs at full resolution.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import BackboneConfig

COORD_FREQS = (1, 2, 3, 4)


def coordinate_maps(grid: int) -> torch.Tensor:
    """sin/cos of pi * f * (centre coordinate / grid) per axis and frequency: (4 * len(COORD_FREQS)) x grid x grid."""
    t = (torch.arange(grid, dtype=torch.float64) + 0.5) / grid
    rows, cols = torch.meshgrid(t, t, indexing="ij")
    maps = []
    for f in COORD_FREQS:
        for axis in (cols, rows):
            maps += [torch.sin(torch.pi * f * axis), torch.cos(torch.pi * f * axis)]
    return torch.stack(maps) if maps else torch.zeros(0, grid, grid, dtype=torch.float64)


def pooling_basis(grid: int) -> torch.Tensor:
    """Separable low-order spatial basis, (1 + 2 * len(COORD_FREQS)) ** 2 maps of grid x grid.

    Each map is phi_a(column) * phi_b(row) with phi in {1, sin(pi f t), cos(pi f t)}.
    Map 0 is constant, so the first pooled block is the plain global average.
    """
    t = (torch.arange(grid, dtype=torch.float64) + 0.5) / grid
    phi = [torch.ones_like(t)]
    for f in COORD_FREQS:
        phi += [torch.sin(torch.pi * f * t), torch.cos(torch.pi * f * t)]
    phi = torch.stack(phi)                                   # K1 x grid
    return (phi[None, :, None, :] * phi[:, None, :, None]).reshape(-1, grid, grid)


def _widths(cfg: BackboneConfig) -> list[int]:
    return [1] + [min(cfg.conv_width * 2 ** i, cfg.d_model) for i in range(cfg.n_stages)]


class ConvEncoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        w = _widths(cfg)
        self.stages = nn.ModuleList(
            nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1) for i in range(cfg.n_stages)
        )
        self.register_buffer("coords", coordinate_maps(cfg.grid)[None], persistent=False)
        self.mix = nn.Conv2d(w[-1] + len(COORD_FREQS) * 4, w[-1], 3, padding=1)
        self.to_tokens = nn.Conv2d(w[-1], cfg.d_model, 1)
        self.register_buffer("basis", pooling_basis(cfg.grid), persistent=False)
        self.cls_proj = nn.Linear(cfg.d_model * len(self.basis), cfg.d_model)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for conv in self.stages:
            h = self.act(conv(h))
        coords = self.coords.expand(h.shape[0], -1, -1, -1)
        h = self.act(self.mix(torch.cat([h, coords], dim=1)))
        fmap = self.to_tokens(h)                      # B x D x g x g
        patches = fmap.flatten(2).transpose(1, 2)     # row-major over the patch grid
        pooled = (fmap[:, :, None] * self.basis).mean(dim=(3, 4))             # B x D x K
        cls = self.cls_proj(pooled.flatten(1))
        return torch.cat([cls[:, None], patches], dim=1)


class ConvDecoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        w = _widths(cfg)[::-1]                        # e.g. [32, 16, 8, 1]
        self.from_tokens = nn.Conv2d(cfg.d_model, w[0], 1)
        self.mix = nn.Conv2d(w[0], w[0], 3, padding=1)
        self.stages = nn.ModuleList(
            nn.Conv2d(w[i], 4 * w[i + 1], 3, padding=1) for i in range(cfg.n_stages)
        )
        self.act = nn.SiLU()

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        b, n, d = patches.shape
        g = self.cfg.grid
        h = patches.transpose(1, 2).reshape(b, d, g, g)
        h = self.act(self.mix(self.act(self.from_tokens(h))))
        last = len(self.stages) - 1
        for i, conv in enumerate(self.stages):
            h = F.pixel_shuffle(conv(h), 2)
            if i < last:
                h = self.act(h)
        return h
