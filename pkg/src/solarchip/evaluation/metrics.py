"""Binary flare verification scores and image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from skimage.metrics import structural_similarity

from ..data.types import FlareClass, ImageGrid

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
UNDEFINED = None          # marker for a score whose denominator is zero
SCORE_NAMES = ("POD", "CSI", "FAR", "HSS", "TSS", "ACC")


def derive_binary(preds: Sequence, threshold) -> np.ndarray:
    """True where the predicted six-way class is at or above ``threshold`` (C or M)."""
    threshold = FlareClass.parse(threshold)
    if threshold not in (FlareClass.C, FlareClass.M):
        raise ValueError(f"binary threshold must be C or M, got {threshold.letter}")
    return np.array([FlareClass.parse(p) >= threshold for p in preds], dtype=bool)


@dataclass(frozen=True)
class ContingencyTable:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TN: int = 0

    def __post_init__(self):
        for name in ("TP", "FP", "FN", "TN"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def contingency(preds: Sequence, truths: Sequence, threshold) -> ContingencyTable:
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(truths)} truths")
    p, t = derive_binary(preds, threshold), derive_binary(truths, threshold)
    return ContingencyTable(TP=int((p & t).sum()), FP=int((p & ~t).sum()),
                            FN=int((~p & t).sum()), TN=int((~p & ~t).sum()))


def _ratio(num: float, den: float):
    return UNDEFINED if den == 0 else num / den


def skill_scores(t: ContingencyTable) -> dict[str, float | None]:
    """Standard forecast-verification scores; ``None`` where a denominator is zero.

    TSS needs both of its rates, so it is undefined if either is.
    """
    tp, fp, fn, tn = t.TP, t.FP, t.FN, t.TN
    pod = _ratio(tp, tp + fn)
    pofd = _ratio(fp, fp + tn)
    return {
        "POD": pod,
        "CSI": _ratio(tp, tp + fp + fn),
        "FAR": _ratio(fp, tp + fp),
        "HSS": _ratio(2.0 * (tp * tn - fn * fp), (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn)),
        "TSS": UNDEFINED if pod is None or pofd is None else pod - pofd,
        "ACC": _ratio(tp + tn, t.total),
    }


def class_accuracies(preds: Sequence, truths: Sequence) -> dict[str, float | None]:
    """ALL (exact six-way match) and the binary >=M / >=C accuracies from one prediction vector."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(truths)} truths")
    if not len(preds):
        return {"ALL": UNDEFINED, "GE_M": UNDEFINED, "GE_C": UNDEFINED}
    p = np.array([int(FlareClass.parse(x)) for x in preds])
    t = np.array([int(FlareClass.parse(x)) for x in truths])
    return {"ALL": float((p == t).mean()),
            "GE_M": skill_scores(contingency(p, t, FlareClass.M))["ACC"],
            "GE_C": skill_scores(contingency(p, t, FlareClass.C))["ACC"]}


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, ImageGrid) else np.asarray(x, dtype=np.float64)


def data_range(truth: np.ndarray) -> float:
    """Observed truth max - min; a constant truth falls back to 1 so the scores stay finite."""
    r = float(truth.max() - truth.min())
    return r if r > 0 else 1.0


def mse(pred, truth) -> float:
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def psnr(pred, truth) -> float:
    err = mse(pred, truth)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range(_values(truth)) ** 2 / err))


def ssim(pred, truth, value_range: float | None = None) -> float:
    """Mean SSIM with an 11 x 11 Gaussian window (sigma 1.5, truncated at 3.5 sigma).

    Uses population statistics within the window and averages the SSIM map
    over positions where the window fits entirely inside the image. The
    dynamic range defaults to the truth's; with an explicit ``value_range``
    the score is symmetric in its arguments.
    """
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(structural_similarity(t, p, gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False,
                                       K1=SSIM_K1, K2=SSIM_K2,
                                       data_range=data_range(t) if value_range is None else value_range))


def image_metrics(pred, truth) -> dict[str, float]:
    """MSE, PSNR and SSIM of a prediction against a signed-log truth image."""
    for x in (pred, truth):
        if isinstance(x, ImageGrid) and x.domain.value != "signed_log":
            raise ValueError("image metrics are defined on signed-log images")
    return {"MSE": mse(pred, truth), "PSNR": psnr(pred, truth), "SSIM": ssim(pred, truth)}
