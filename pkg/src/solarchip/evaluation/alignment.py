"""Cross-modal alignment diagnostics on held-out samples."""

from __future__ import annotations

import numpy as np
import torch

from ..data.types import AIA_IDS, HMI
from ..losses import similarity
from ..models import Embeddings, SolarCHIP
from .probes import encode_all


def embed_all(model: SolarCHIP, images: np.ndarray, modalities=(HMI,) + AIA_IDS) -> dict[int, Embeddings]:
    """Projected class and patch embeddings of N x 11 x S x S signed-log stacks."""
    out = {}
    with torch.no_grad():
        for i in modalities:
            out[i] = model.project(encode_all(model[i], images[:, i]), i)
    return out


def galleries(n: int, size: int = 16) -> list[np.ndarray]:
    """Interleaved index sets ``g, g + k, g + 2k, ...`` with ``k = n // size``, each of ``size`` samples.

    Interleaving spreads each gallery over the whole held-out period, so
    near-duplicate neighbours in time rarely compete in the same gallery.
    """
    k = n // size
    if k < 1:
        raise ValueError(f"need at least {size} samples for one gallery, have {n}")
    return [np.arange(g, k * size, k) for g in range(k)]


def retrieval_accuracy(embeds: dict[int, Embeddings], modality: int, size: int = 16) -> float:
    """Top-1 rate of picking the matching sample's class embedding (HMI query, one band's gallery)."""
    hits = total = 0
    for idx in galleries(len(embeds[HMI].cls), size):
        R = similarity(embeds[HMI].cls[idx], embeds[modality].cls[idx], 0.0)
        hits += int((R.argmax(dim=1) == torch.arange(len(idx))).sum())
        total += len(idx)
    return hits / total


def locality_rate(embeds: dict[int, Embeddings], modality: int) -> float:
    """Fraction of (sample, HMI patch) rows of the L x L matrix whose argmax is the co-located patch."""
    R = similarity(embeds[HMI].patches, embeds[modality].patches, 0.0)
    L = R.shape[-1]
    return float((R.argmax(dim=-1) == torch.arange(L)).double().mean())
