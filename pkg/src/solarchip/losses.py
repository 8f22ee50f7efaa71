"""Reconstruction and multi-granularity InfoNCE objectives.

All contrastive terms align HMI (modality 0) with each sampled AIA band;
AIA bands are never contrasted with each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import torch

from .data.types import AIA_IDS, HMI
from .models.core import Embeddings

NORM_EPS = 1e-12


@dataclass
class LossReport:
    rec: float
    cls: float
    pat: float
    int: float
    total: float
    lambdas: tuple[float, float, float]
    sampled: tuple[int, ...]
    rec_weight: float = 1.0
    temperatures: dict[str, float] = field(default_factory=dict)

    CSV_HEADER = ("step", "rec", "cls", "pat", "int", "total",
                  "alpha_cls", "alpha_pat", "alpha_int", "sampled_modalities")

    def csv_row(self, step: int) -> list[str]:
        t = self.temperatures
        vals = [self.rec, self.cls, self.pat, self.int, self.total,
                t.get("alpha_cls", 0.0), t.get("alpha_pat", 0.0), t.get("alpha_int", 0.0)]
        return [str(step)] + [repr(float(v)) for v in vals] + [" ".join(str(i) for i in self.sampled)]


def _normalize(x: torch.Tensor, eps: float) -> torch.Tensor:
    sq = (x * x).sum(dim=-1, keepdim=True)
    zero = (sq == 0).squeeze(-1)
    if bool(zero.any()):
        idx = tuple(int(i) for i in zero.nonzero()[0])
        raise ValueError(f"zero-norm embedding row at index {idx}")
    return x / torch.sqrt(sq + eps)


def similarity(a: torch.Tensor, b: torch.Tensor, alpha, eps: float = NORM_EPS) -> torch.Tensor:
    """exp(alpha) * cosine similarity between the rows of ``a`` and ``b``.

    Leading dimensions broadcast: ``a``, ``b`` of shape ``... x N x D`` give
    ``... x N x N``. The product is reduced elementwise rather than with a
    matmul so that ``similarity(a, b).mT == similarity(b, a)`` holds exactly.
    """
    alpha = torch.as_tensor(alpha, dtype=a.dtype)
    an, bn = _normalize(a, eps), _normalize(b, eps)
    cos = (an.unsqueeze(-2) * bn.unsqueeze(-3)).sum(dim=-1)
    return torch.exp(alpha) * cos


def _cross_entropy_diag(logits: torch.Tensor) -> torch.Tensor:
    """Mean over rows of -log softmax(row)[row index]; max-shifted log-sum-exp."""
    m = logits.max(dim=-1, keepdim=True).values.detach()
    lse = m.squeeze(-1) + torch.log(torch.exp(logits - m).sum(dim=-1))
    diag = torch.diagonal(logits, dim1=-2, dim2=-1)
    return (lse - diag).mean(dim=-1)


def bidir_infonce(R: torch.Tensor) -> torch.Tensor:
    """Average of row-target and column-target cross-entropy with diagonal targets.

    Accepts ``... x N x N`` and returns the loss per leading index.
    """
    if R.shape[-1] != R.shape[-2]:
        raise ValueError(f"similarity matrix must be square, got {tuple(R.shape)}")
    return 0.5 * (_cross_entropy_diag(R) + _cross_entropy_diag(R.transpose(-2, -1)))


def _check_pairs(embeds: Mapping[int, Embeddings], sampled) -> list[int]:
    if HMI not in embeds:
        raise ValueError("HMI (modality 0) embeddings are required")
    sampled = sorted(int(i) for i in sampled)
    for i in sampled:
        if i not in AIA_IDS:
            raise ValueError(f"sampled modalities must be AIA ids 1..10, got {i}")
        if i not in embeds:
            raise ValueError(f"embeddings for sampled modality {i} are missing")
    return sampled


def _zero(embeds) -> torch.Tensor:
    ref = embeds[HMI].cls
    return ref.new_zeros(())


def class_loss(embeds: Mapping[int, Embeddings], alpha_cls, sampled) -> torch.Tensor:
    sampled = _check_pairs(embeds, sampled)
    total = _zero(embeds)
    for i in sampled:
        total = total + bidir_infonce(similarity(embeds[HMI].cls, embeds[i].cls, alpha_cls))
    return total


def patch_loss(embeds: Mapping[int, Embeddings], alpha_pat, sampled) -> torch.Tensor:
    """Per patch position, contrast co-located patches across the batch; mean over positions."""
    sampled = _check_pairs(embeds, sampled)
    hmi = embeds[HMI].patches.transpose(0, 1)          # L x B x D
    total = _zero(embeds)
    for i in sampled:
        other = embeds[i].patches
        if other.shape[1] != hmi.shape[0]:
            raise ValueError(f"patch count mismatch: HMI has {hmi.shape[0]}, modality {i} has {other.shape[1]}")
        R = similarity(hmi, other.transpose(0, 1), alpha_pat)   # L x B x B
        total = total + bidir_infonce(R).mean()
    return total


def intra_loss(embeds: Mapping[int, Embeddings], alpha_int, sampled) -> torch.Tensor:
    """Per sample, contrast its HMI patches against its AIA patches; mean over the batch."""
    sampled = _check_pairs(embeds, sampled)
    hmi = embeds[HMI].patches                           # B x L x D
    if hmi.shape[1] < 2:
        raise ValueError("intra-sample contrast needs at least 2 patches per sample")
    total = _zero(embeds)
    for i in sampled:
        other = embeds[i].patches
        if other.shape[1] != hmi.shape[1]:
            raise ValueError(f"patch count mismatch: HMI has {hmi.shape[1]}, modality {i} has {other.shape[1]}")
        R = similarity(hmi, other, alpha_int)           # B x L x L
        total = total + bidir_infonce(R).mean()
    return total


def rec_loss(inputs: Mapping[int, torch.Tensor], recons: Mapping[int, torch.Tensor], active,
             reduction: str = "sum") -> torch.Tensor:
    """Sum over active modalities of the squared L2 distance over every pixel in the batch.

    ``reduction="mean"`` divides each modality's term by its element count
    (batch x pixels), which keeps the term O(1) regardless of resolution.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    total = None
    for i in sorted(set(int(i) for i in active)):
        x, xh = inputs[i], recons[i]
        if x.shape != xh.shape:
            raise ValueError(f"modality {i}: reconstruction shape {tuple(xh.shape)} != input {tuple(x.shape)}")
        term = ((xh - x) ** 2).sum()
        if reduction == "mean":
            term = term / x.numel()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("rec_loss needs at least one active modality")
    return total


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    cls: float = 1.0
    pat: float = 1.0
    int: float = 1.0

    def __post_init__(self):
        for name in ("rec", "cls", "pat", "int"):
            w = getattr(self, name)
            if not (w >= 0 and math.isfinite(w)):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {w}")


def total_loss(model, batch: Mapping[int, torch.Tensor], sampled, weights: LossWeights = LossWeights(),
               rec_reduction: str = "mean"):
    """Full objective on a batch of signed-log images.

    ``batch`` maps modality id to a B x 1 x side x side tensor and must cover
    HMI and every sampled band. Terms with zero weight are skipped and
    reported as 0, so e.g. projection heads receive no gradient at all when
    every contrastive weight is 0. The reconstruction term defaults to the
    per-pixel mean; pass ``rec_reduction="sum"`` for the raw pixel sum.

    Returns ``(loss_tensor, terms)`` where ``terms`` maps term name to tensor.
    """
    sampled = tuple(sorted(int(i) for i in sampled))
    active = (HMI,) + sampled
    for i in active:
        if i not in batch:
            raise ValueError(f"batch lacks modality {i}")
    tokens = {i: model.encode(i, batch[i]) for i in active}
    zero = batch[HMI].new_zeros(())
    terms = {"rec": zero, "cls": zero, "pat": zero, "int": zero}
    if weights.rec > 0:
        recons = {i: model.decode(tokens[i][:, 1:], i) for i in active}
        terms["rec"] = rec_loss(batch, recons, active, rec_reduction)
    if sampled and (weights.cls > 0 or weights.pat > 0 or weights.int > 0):
        embeds = {i: model.project(tokens[i], i) for i in active}
        if weights.cls > 0:
            terms["cls"] = class_loss(embeds, model.alpha_cls, sampled)
        if weights.pat > 0:
            terms["pat"] = patch_loss(embeds, model.alpha_pat, sampled)
        if weights.int > 0:
            terms["int"] = intra_loss(embeds, model.alpha_int, sampled)
    loss = (weights.rec * terms["rec"] + weights.cls * terms["cls"]
            + weights.pat * terms["pat"] + weights.int * terms["int"])
    return loss, terms


def make_report(loss, terms, weights: LossWeights, sampled, model=None) -> LossReport:
    return LossReport(
        rec=float(terms["rec"].detach()), cls=float(terms["cls"].detach()), pat=float(terms["pat"].detach()),
        int=float(terms["int"].detach()), total=float(loss.detach()), lambdas=(weights.cls, weights.pat, weights.int),
        sampled=tuple(sorted(int(i) for i in sampled)), rec_weight=weights.rec,
        temperatures=model.temperatures() if model is not None else {},
    )
