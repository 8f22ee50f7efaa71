"""Per-modality autoencoders with contrastive projection heads."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

from ..data.types import N_MODALITIES, check_modality
from .config import BackboneConfig
from .conv import ConvDecoder, ConvEncoder
from .vit import ViTDecoder, ViTEncoder

ROLES = ("encoder", "decoder", "cls_head", "img_head")


class Embeddings(NamedTuple):
    cls: torch.Tensor       # B x d_ctr
    patches: torch.Tensor   # B x L x d_ctr


def fan_in_uniform_(module: nn.Module) -> None:
    """Symmetric uniform init scaled by fan-in.

    Weights get U(-a, a) with a = sqrt(3 / fan_in) (unit-variance
    preserving); biases get U(-b, b) with b = 1 / sqrt(fan_in). Non-zero
    biases keep all-zero (off-disk) patches from mapping to zero-norm
    embeddings.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(3.0 / fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound)
                if m.bias is not None:
                    m.bias.uniform_(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in))


class ModalityModel(nn.Module):
    """Encoder f, decoder g and the two linear heads for one modality."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "conv":
            self.encoder, self.decoder = ConvEncoder(cfg), ConvDecoder(cfg)
        else:
            self.encoder, self.decoder = ViTEncoder(cfg), ViTDecoder(cfg)
        self.cls_head = nn.Linear(cfg.d_model, cfg.d_ctr)
        self.img_head = nn.Linear(cfg.d_model, cfg.d_ctr)
        # fixed input standardization (signed-log units): a per-pixel mean map and a
        # scalar spread; identity until set from data
        self.register_buffer("input_shift", torch.zeros(cfg.side, cfg.side))
        self.register_buffer("input_scale", torch.ones(()))
        fan_in_uniform_(self)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected B x 1 x side x side input, got {tuple(x.shape)}")
        if x.shape[-1] != self.cfg.side or x.shape[-2] != self.cfg.side:
            raise ValueError(f"input side {tuple(x.shape[-2:])} does not match configured side {self.cfg.side}")
        return self.encoder((x - self.input_shift) / self.input_scale)

    def project(self, tokens: torch.Tensor) -> Embeddings:
        return Embeddings(self.cls_head(tokens[:, 0]), self.img_head(tokens[:, 1:]))

    def decode(self, patch_tokens: torch.Tensor) -> torch.Tensor:
        if patch_tokens.ndim != 3 or patch_tokens.shape[1] != self.cfg.n_patches:
            raise ValueError(f"decoder needs B x {self.cfg.n_patches} x d_model patch tokens, "
                             f"got {tuple(patch_tokens.shape)}")
        if patch_tokens.shape[2] != self.cfg.d_model:
            raise ValueError(f"decoder consumes pre-projection tokens of width {self.cfg.d_model}, "
                             f"got width {patch_tokens.shape[2]}")
        return self.decoder(patch_tokens) * self.input_scale + self.input_shift


class SolarCHIP(nn.Module):
    """Eleven independent modality models plus the three learnable temperatures.

    Temperatures are stored as log-scales; similarities are multiplied by
    ``exp(alpha)``.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.modalities = nn.ModuleList(ModalityModel(cfg) for _ in range(N_MODALITIES))
        self.alpha_cls = nn.Parameter(torch.zeros(()))
        self.alpha_pat = nn.Parameter(torch.zeros(()))
        self.alpha_int = nn.Parameter(torch.zeros(()))

    def __getitem__(self, modality: int) -> ModalityModel:
        return self.modalities[check_modality(modality)]

    def encode(self, modality: int, x: torch.Tensor) -> torch.Tensor:
        return self[modality].encode(x)

    def project(self, tokens: torch.Tensor, modality: int) -> Embeddings:
        return self[modality].project(tokens)

    def decode(self, patch_tokens: torch.Tensor, modality: int) -> torch.Tensor:
        return self[modality].decode(patch_tokens)

    def set_input_stats(self, shift, scale) -> None:
        """Per-modality standardization applied inside encode and undone by decode.

        ``shift`` is either one value per modality or one side x side mean map
        per modality; ``scale`` is one value per modality.
        """
        shift, scale = torch.as_tensor(shift, dtype=torch.float64), torch.as_tensor(scale, dtype=torch.float64)
        side = self.cfg.side
        if shift.shape == (N_MODALITIES,):
            shift = shift[:, None, None].expand(N_MODALITIES, side, side)
        if shift.shape != (N_MODALITIES, side, side) or scale.shape != (N_MODALITIES,):
            raise ValueError(f"need {N_MODALITIES} shifts (scalars or {side}x{side} maps) and {N_MODALITIES} scales")
        if not bool((scale > 0).all()) or not bool(torch.isfinite(shift).all() & torch.isfinite(scale).all()):
            raise ValueError("input scales must be finite and positive")
        with torch.no_grad():
            for mm, a, b in zip(self.modalities, shift, scale):
                mm.input_shift.copy_(a)
                mm.input_scale.fill_(float(b))

    def temperatures(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in ("alpha_cls", "alpha_pat", "alpha_int")}


def build_model(cfg: BackboneConfig, seed: int, dtype=torch.float64) -> SolarCHIP:
    """Deterministically initialised model; seed fully determines the weights."""
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = SolarCHIP(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def tagged_parameters(model: SolarCHIP):
    """Yield (tag, tensor) with tags ``m{modality:02d}/{role}/{layer:03d}/{name}``.

    ``layer`` is the ordinal of the tensor within its (modality, role).
    Temperatures are tagged ``temperature/{name}``.
    """
    for mi, mm in enumerate(model.modalities):
        for role in ROLES:
            for layer, (name, p) in enumerate(getattr(mm, role).named_parameters()):
                yield f"m{mi:02d}/{role}/{layer:03d}/{name}", p
    for name in ("alpha_cls", "alpha_pat", "alpha_int"):
        yield f"temperature/{name}", getattr(model, name)


def tagged_buffers(model: SolarCHIP):
    """Yield the non-trainable per-modality input statistics as ``m{MM}/input/{name}``."""
    for mi, mm in enumerate(model.modalities):
        for name in ("input_shift", "input_scale"):
            yield f"m{mi:02d}/input/{name}", getattr(mm, name)
