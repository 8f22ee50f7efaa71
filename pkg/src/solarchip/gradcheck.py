"""Finite-difference verification of the analytic gradients of every loss term.

Each check compares autograd gradients with central differences
``(f(x + h) - f(x - h)) / 2h`` at double precision, on a small sample of
coordinates per tensor. The error for a tensor is the relative norm
``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` over the
sampled coordinates; a check passes iff the largest error is below the
tolerance. The step is h = 1e-6 for checks on embeddings and outputs and
h = 1e-5 through a model, where the deeper graph raises the rounding
floor of the difference quotient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .data.types import HMI
from .losses import LossWeights, class_loss, intra_loss, patch_loss, rec_loss, total_loss
from .models import BackboneConfig, Embeddings, build_model, tagged_parameters

SELECTORS = ("rec", "cls", "pat", "int", "total")
TERM_WEIGHTS = {
    "rec": LossWeights(1.0, 0.0, 0.0, 0.0),
    "cls": LossWeights(0.0, 1.0, 0.0, 0.0),
    "pat": LossWeights(0.0, 0.0, 1.0, 0.0),
    "int": LossWeights(0.0, 0.0, 0.0, 1.0),
    "total": LossWeights(1.0, 0.7, 0.5, 0.3),
}
_EMBED_LOSSES = {"cls": (class_loss, "alpha_cls"), "pat": (patch_loss, "alpha_pat"), "int": (intra_loss, "alpha_int")}


def tiny_backbone(kind: str, d_ctr: int = 5) -> BackboneConfig:
    """Smallest useful model: side 16, patch 8, so L = 4 patch tokens."""
    return BackboneConfig(kind=kind, side=16, patch_size=8, d_model=8, d_ctr=d_ctr, depth=1, heads=2,
                          mlp_ratio=2, conv_width=4, decoder_dim=8)


@dataclass
class GradCheckReport:
    loss: str
    backbone: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{state} {self.loss}/{self.backbone}: max rel err {self.max_rel_error:.2e} "
                f"(tol {self.tolerance:g}, worst {self.worst}, {len(self.errors)} tensors)")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def _coords(t: torch.Tensor, k: int, rng: np.random.Generator) -> list[int]:
    n = t.numel()
    return list(range(n)) if n <= k else sorted(rng.choice(n, size=k, replace=False).tolist())


def fd_error(f: Callable[[], torch.Tensor], tensor: torch.Tensor, analytic: torch.Tensor | None,
             coords: list[int], h: float) -> float:
    """Relative error between ``analytic`` and central differences of ``f`` at ``coords`` of ``tensor``."""
    flat = tensor.data.view(-1)
    grad = analytic.reshape(-1) if analytic is not None else torch.zeros_like(flat)
    a, n = [], []
    with torch.no_grad():
        for c in coords:
            orig = flat[c].item()
            flat[c] = orig + h
            up = float(f())
            flat[c] = orig - h
            down = float(f())
            flat[c] = orig
            n.append((up - down) / (2 * h))
            a.append(float(grad[c]))
    return relative_error(np.array(a), np.array(n))


def check_embedding_loss(selector: str, batch: int = 3, n_patches: int = 4, dim: int = 5, sampled=(1, 2),
                         tol: float = 1e-4, h: float = 1e-6, seed: int = 0) -> GradCheckReport:
    """Gradients of a contrastive term with respect to the embeddings and its temperature."""
    loss_fn, alpha_name = _EMBED_LOSSES[selector]
    gen = torch.Generator().manual_seed(seed)
    leaves = {}
    embeds = {}
    for i in (HMI,) + tuple(sampled):
        cls = torch.randn(batch, dim, generator=gen, dtype=torch.float64, requires_grad=True)
        pat = torch.randn(batch, n_patches, dim, generator=gen, dtype=torch.float64, requires_grad=True)
        embeds[i] = Embeddings(cls, pat)
        leaves[f"emb/m{i:02d}/cls"], leaves[f"emb/m{i:02d}/patches"] = cls, pat
    alpha = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
    leaves[f"temperature/{alpha_name}"] = alpha

    def f():
        return loss_fn(embeds, alpha, sampled)

    loss = f()
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    report = GradCheckReport(selector, "embeddings", tol)
    for (name, t), g in zip(leaves.items(), grads):
        report.errors[name] = fd_error(f, t, g, list(range(t.numel())), h)
    return report


def check_rec_outputs(batch: int = 2, side: int = 16, sampled=(1,), tol: float = 1e-6, h: float = 1e-6,
                      seed: int = 0) -> GradCheckReport:
    """rec_loss (pixel sum) with respect to the reconstructions."""
    gen = torch.Generator().manual_seed(seed)
    active = (HMI,) + tuple(sampled)
    inputs = {i: torch.randn(batch, 1, side, side, generator=gen, dtype=torch.float64) for i in active}
    recons = {i: torch.randn(batch, 1, side, side, generator=gen, dtype=torch.float64, requires_grad=True)
              for i in active}

    def f():
        return rec_loss(inputs, recons, active)

    grads = torch.autograd.grad(f(), [recons[i] for i in active])
    report = GradCheckReport("rec", "outputs", tol)
    for i, g in zip(active, grads):
        report.errors[f"recon/m{i:02d}"] = fd_error(f, recons[i], g, list(range(recons[i].numel())), h)
    return report


def check_model_loss(selector: str, kind: str, batch: int = 3, d_ctr: int = 5, sampled=(1, 2),
                     tol: float = 1e-4, h: float = 1e-5, coords_per_tensor: int = 4, seed: int = 0) -> GradCheckReport:
    """Gradients of a loss term through a tiny model, for every parameter and temperature.

    The reconstruction term uses the per-pixel mean (as in training) so that
    it does not swamp the rounding floor of the smaller contrastive
    gradients. Coordinates are sampled per tensor; temperatures are 0-d and
    so always checked in full.
    """
    cfg = tiny_backbone(kind, d_ctr)
    model = build_model(cfg, seed)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for name in ("alpha_cls", "alpha_pat", "alpha_int"):
            getattr(model, name).fill_(0.2)
    images = {i: torch.randn(batch, 1, cfg.side, cfg.side, generator=gen, dtype=torch.float64)
              for i in (HMI,) + tuple(sampled)}
    weights = TERM_WEIGHTS[selector]

    def f():
        return total_loss(model, images, sampled, weights, rec_reduction="mean")[0]

    model.zero_grad(set_to_none=True)
    f().backward()
    rng = np.random.default_rng(seed)
    report = GradCheckReport(selector, kind, tol)
    active = {HMI, *sampled}
    for tag, p in tagged_parameters(model):
        if tag.startswith("m") and int(tag[1:3]) not in active:
            continue
        report.errors[tag] = fd_error(f, p, p.grad, _coords(p, coords_per_tensor, rng), h)
    return report


def grad_check(selector: str, kind: str = "conv", tol: float = 1e-4, seed: int = 0) -> list[GradCheckReport]:
    """All checks for one loss term on one backbone (embedding-level, output-level and parameter-level)."""
    if selector not in SELECTORS:
        raise ValueError(f"selector must be one of {SELECTORS}, got {selector!r}")
    out = []
    if selector in _EMBED_LOSSES:
        out.append(check_embedding_loss(selector, tol=tol, seed=seed))
    if selector == "rec":
        out.append(check_rec_outputs(seed=seed))
    out.append(check_model_loss(selector, kind, tol=tol, seed=seed))
    return out
