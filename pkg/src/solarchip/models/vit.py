"""Transformer encoder/decoder pair in the MAE style (mask ratio fixed at 0)."""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import BackboneConfig


def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """B x 1 x S x S -> B x L x p*p, patches row-major."""
    b, _, s, _ = x.shape
    g = s // p
    return x.reshape(b, g, p, g, p).permute(0, 1, 3, 2, 4).reshape(b, g * g, p * p)


def unpatchify(patches: torch.Tensor, p: int) -> torch.Tensor:
    b, n, _ = patches.shape
    g = int(round(math.sqrt(n)))
    return patches.reshape(b, g, g, p, p).permute(0, 1, 3, 2, 4).reshape(b, 1, g * p, g * p)


def sincos_pos_embed(dim: int, grid: int) -> torch.Tensor:
    """Fixed 2-D sine-cosine table, grid*grid x dim (half the channels per axis)."""
    if dim % 4:
        raise ValueError("positional embedding width must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    coords = torch.arange(grid, dtype=torch.float64)
    rows, cols = torch.meshgrid(coords, coords, indexing="ij")

    def axis(pos):
        out = pos.reshape(-1, 1) * omega[None]
        return torch.cat([torch.sin(out), torch.cos(out)], dim=1)

    return torch.cat([axis(cols), axis(rows)], dim=1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * (d // self.heads) ** -0.5
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ViTEncoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_size ** 2, cfg.d_model)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.d_model))
        self.register_buffer("pos", sincos_pos_embed(cfg.d_model, cfg.grid)[None], persistent=False)
        self.blocks = nn.ModuleList(Block(cfg.d_model, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patch_embed(patchify(x, self.cfg.patch_size)) + self.pos.to(x.dtype)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        h = torch.cat([cls, tokens], dim=1)
        for blk in self.blocks:
            h = blk(h)
        return self.norm(h)


class ViTDecoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.d_model, cfg.decoder_dim)
        self.register_buffer("pos", sincos_pos_embed(cfg.decoder_dim, cfg.grid)[None], persistent=False)
        self.blocks = nn.ModuleList(Block(cfg.decoder_dim, cfg.heads, cfg.mlp_ratio) for _ in range(max(1, cfg.depth - 1)))
        self.norm = nn.LayerNorm(cfg.decoder_dim)
        self.head = nn.Linear(cfg.decoder_dim, cfg.patch_size ** 2)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        h = self.embed(patches) + self.pos.to(patches.dtype)
        for blk in self.blocks:
            h = blk(h)
        return unpatchify(self.head(self.norm(h)), self.cfg.patch_size)
