"""Linear probes on pretrained tokens: flare classification and cross-modal translation."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..data.types import AIA_IDS, HMI, MODALITY_NAMES, FlareClass
from ..models import ModalityModel, SolarCHIP
from .metrics import image_metrics

N_CLASSES = len(FlareClass)
DIRECTIONS = ("HMI->AIA", "AIA->HMI")


def encode_all(mm: ModalityModel, images: np.ndarray, batch_size: int = 64) -> torch.Tensor:
    """Tokens (N x (1 + L) x d_model) for N x S x S signed-log images of one modality, without grad."""
    mm.eval()
    dtype = next(mm.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            x = torch.from_numpy(np.ascontiguousarray(images[i:i + batch_size]))[:, None].to(dtype)
            out.append(mm.encode(x))
    return torch.cat(out) if out else torch.zeros(0, 1 + mm.cfg.n_patches, mm.cfg.d_model, dtype=dtype)


class ProbeHead(nn.Module):
    """Linear map from the HMI class token to six-way flare logits.

    Tokens are standardized with fixed per-feature statistics taken from the
    training set before the linear layer.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.linear = nn.Linear(d_model, N_CLASSES)
        self.register_buffer("feat_shift", torch.zeros(d_model))
        self.register_buffer("feat_scale", torch.ones(d_model))

    def set_feature_stats(self, tokens: torch.Tensor) -> None:
        with torch.no_grad():
            self.feat_shift.copy_(tokens.mean(0))
            std = tokens.std(0, unbiased=False)
            self.feat_scale.copy_(torch.where(std > 0, std, torch.ones_like(std)))

    def forward(self, cls_tokens: torch.Tensor) -> torch.Tensor:
        return self.linear((cls_tokens - self.feat_shift) / self.feat_scale)


@dataclass
class FlareClassifier:
    encoder: ModalityModel          # the HMI modality model (shared when frozen, a copy when fine-tuned)
    head: ProbeHead
    frozen: bool

    def logits(self, hmi_images: np.ndarray) -> torch.Tensor:
        self.head.eval()
        with torch.no_grad():
            return self.head(encode_all(self.encoder, hmi_images)[:, 0])

    def predict(self, hmi_images: np.ndarray) -> np.ndarray:
        return self.logits(hmi_images).argmax(dim=1).numpy()


def _check_labels(labels) -> np.ndarray:
    y = np.array([int(FlareClass.parse(c)) for c in labels], dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("probe training needs at least two distinct classes in the label set")
    return y


def _new_head(d_model: int, seed: int, dtype) -> ProbeHead:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        head = ProbeHead(d_model)
    return head.to(dtype)


def fit_head(tokens: torch.Tensor, labels: Sequence, steps: int = 300, lr: float = 0.05,
             weight_decay: float = 1e-4, seed: int = 0) -> ProbeHead:
    """Full-batch Adam on cross-entropy over fixed class tokens."""
    y = torch.from_numpy(_check_labels(labels))
    if len(y) != len(tokens):
        raise ValueError(f"{len(tokens)} tokens but {len(y)} labels")
    head = _new_head(tokens.shape[1], seed, tokens.dtype)
    head.set_feature_stats(tokens)
    opt = torch.optim.Adam(head.linear.parameters(), lr=lr, weight_decay=weight_decay)
    head.train()
    for _ in range(steps):
        opt.zero_grad(set_to_none=True)
        nn.functional.cross_entropy(head(tokens), y).backward()
        opt.step()
    return head


def train_probe(model: SolarCHIP | ModalityModel, hmi_images: np.ndarray, labels: Sequence, frozen: bool = True,
                steps: int | None = None, lr: float | None = None, batch_size: int = 32,
                seed: int = 0) -> FlareClassifier:
    """Six-way flare classifier on the HMI class token.

    ``frozen`` trains only the head on cached tokens and never touches the
    encoder. Otherwise a copy of the HMI modality model is fine-tuned
    together with the head by minibatch Adam (the input model is left
    unchanged either way).
    """
    mm = model[HMI] if isinstance(model, SolarCHIP) else model
    y = _check_labels(labels)
    if len(y) != len(hmi_images):
        raise ValueError(f"{len(hmi_images)} images but {len(y)} labels")
    if frozen:
        tokens = encode_all(mm, hmi_images)[:, 0]
        head = fit_head(tokens, y, steps=300 if steps is None else steps, lr=0.05 if lr is None else lr, seed=seed)
        return FlareClassifier(mm, head, True)

    mm = copy.deepcopy(mm)
    dtype = next(mm.parameters()).dtype
    head = _new_head(mm.cfg.d_model, seed, dtype)
    head.set_feature_stats(encode_all(mm, hmi_images)[:, 0])
    params = list(mm.encoder.parameters()) + list(head.linear.parameters())
    opt = torch.optim.Adam(params, lr=1e-3 if lr is None else lr)
    rng = np.random.default_rng([seed, 0xF17E])
    x_all = torch.from_numpy(np.ascontiguousarray(hmi_images))[:, None].to(dtype)
    y_all = torch.from_numpy(y)
    bs = min(batch_size, len(y))
    mm.train()
    head.train()
    for _ in range(100 if steps is None else steps):
        idx = torch.from_numpy(rng.choice(len(y), size=bs, replace=False))
        opt.zero_grad(set_to_none=True)
        logits = head(mm.encode(x_all[idx])[:, 0])
        nn.functional.cross_entropy(logits, y_all[idx]).backward()
        opt.step()
    return FlareClassifier(mm, head, False)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """N x S x S -> N x L x patch**2, patches row-major over the lattice."""
    n, s, _ = images.shape
    g = s // patch
    return images.reshape(n, g, patch, g, patch).transpose(0, 1, 3, 2, 4).reshape(n, g * g, patch * patch)


def unpatchify(patches: np.ndarray, patch: int) -> np.ndarray:
    n, L, _ = patches.shape
    g = int(round(L ** 0.5))
    return patches.reshape(n, g, g, patch, patch).transpose(0, 1, 3, 2, 4).reshape(n, g * patch, g * patch)


def fit_ridge(x: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    """Closed-form ridge with an unpenalized bias: returns (d + 1) x k weights, bias in the last row.

    The penalty is ``ridge`` times the mean diagonal of the centred Gram matrix.
    """
    xm, ym = x.mean(0), y.mean(0)
    xc, yc = x - xm, y - ym
    gram = xc.T @ xc
    lam = ridge * max(float(np.trace(gram)) / max(gram.shape[0], 1), 1e-12)
    w = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), xc.T @ yc)
    return np.vstack([w, ym - xm @ w])


@dataclass
class TranslationProbe:
    """Shared linear map from a source modality's patch tokens to the target's patch pixels."""

    source: int
    target: int
    patch: int
    weight: np.ndarray              # (d_model + 1) x patch**2

    def predict_tokens(self, patch_tokens: np.ndarray) -> np.ndarray:
        n, L, d = patch_tokens.shape
        flat = patch_tokens.reshape(n * L, d) @ self.weight[:-1] + self.weight[-1]
        return unpatchify(flat.reshape(n, L, -1), self.patch)

    def predict(self, model: SolarCHIP, images: np.ndarray) -> np.ndarray:
        """Translate N x 11 x S x S signed-log stacks into N x S x S target images."""
        tokens = encode_all(model[self.source], images[:, self.source])[:, 1:].numpy()
        return self.predict_tokens(tokens)


def train_translation(model: SolarCHIP, images: np.ndarray, source: int, target: int,
                      ridge: float = 1e-3) -> TranslationProbe:
    if source == target:
        raise ValueError("translation needs distinct source and target modalities")
    patch = model.cfg.patch_size
    tokens = encode_all(model[source], images[:, source])[:, 1:].numpy()
    pixels = patchify(images[:, target], patch)
    w = fit_ridge(tokens.reshape(-1, tokens.shape[-1]), pixels.reshape(-1, pixels.shape[-1]), ridge)
    return TranslationProbe(source, target, patch, w)


def score_translation(pred: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    """Per-image metrics averaged over the test images."""
    rows = [image_metrics(p, t) for p, t in zip(pred, truth)]
    return {k: float(np.mean([r[k] for r in rows])) for k in ("MSE", "PSNR", "SSIM")}


def run_translation_probe(model: SolarCHIP, train_images: np.ndarray, test_images: np.ndarray,
                          ridge: float = 1e-3, bands: Sequence[int] = AIA_IDS) -> list[dict]:
    """Long-format translation table: per direction, one row per AIA band plus an Avg row.

    HMI->AIA maps HMI patch tokens to each band; AIA->HMI maps each band's
    patch tokens to HMI and is listed under the source band.
    """
    rows = []
    for direction in DIRECTIONS:
        scores = []
        for band in bands:
            src, tgt = (HMI, band) if direction == DIRECTIONS[0] else (band, HMI)
            probe = train_translation(model, train_images, src, tgt, ridge)
            s = score_translation(probe.predict(model, test_images), test_images[:, tgt])
            scores.append(s)
            rows.append({"direction": direction, "modality": MODALITY_NAMES[band], **s})
        rows.append({"direction": direction, "modality": "Avg",
                     **{k: float(np.mean([s[k] for s in scores])) for k in ("MSE", "PSNR", "SSIM")}})
    return rows
