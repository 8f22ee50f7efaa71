from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BackboneConfig:
    """Shape hyper-parameters shared by all 11 per-modality model sets.

    ``kind`` selects the convolutional (VAE-style, no sampling) or the
    transformer (MAE-style, no masking) autoencoder. Both emit
    ``1 + (side // patch_size) ** 2`` tokens of width ``d_model``.
    """

    kind: str = "conv"
    side: int = 64
    patch_size: int = 8
    d_model: int = 32
    d_ctr: int = 16
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    conv_width: int = 8            # channels after the stem; doubles per stage, capped at d_model
    decoder_dim: int = 32

    def __post_init__(self):
        if self.kind not in ("conv", "transformer"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.side % self.patch_size:
            raise ValueError(f"side {self.side} is not divisible by patch size {self.patch_size}")
        if self.kind == "conv" and (self.patch_size & (self.patch_size - 1)):
            raise ValueError("conv backbone needs a power-of-two patch size")
        if self.kind == "transformer" and (self.d_model % self.heads or self.decoder_dim % self.heads):
            raise ValueError("d_model and decoder_dim must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.side // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid ** 2

    @property
    def n_stages(self) -> int:
        return int(round(math.log2(self.patch_size)))

    def replace(self, **changes) -> "BackboneConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
