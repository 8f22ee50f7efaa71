"""Downstream protocols: few-shot schedule, ablation grid, and result tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..data.labels import assign_labels, balance_nonflare
from ..data.types import HMI, Archive
from ..models import SolarCHIP, build_model
from ..trainer import TrainConfig, fit, prepare_images
from .metrics import class_accuracies
from .probes import run_translation_probe, train_probe

log = logging.getLogger(__name__)

FEW_SHOT_FRACTIONS = (1.0, 0.5, 0.2, 0.1, 0.05)
MIN_FEW_SHOT = 6
ARMS = ("pretrained", "scratch")
# (name, rec weight, lambda1, lambda2, lambda3); one row per check-mark pattern of the ablation table
ABLATION_ROWS = (
    ("rec", 1.0, 0.0, 0.0, 0.0),
    ("contrastive", 0.0, 1.0, 1.0, 1.0),
    ("rec+cls", 1.0, 1.0, 0.0, 0.0),
    ("rec+pat+int", 1.0, 0.0, 1.0, 1.0),
    ("no-pat", 1.0, 1.0, 0.0, 1.0),
    ("no-int", 1.0, 1.0, 1.0, 0.0),
)
ABLATION_METRICS = ("AIA_MSE", "HMI_MSE", "GE_M_ACC", "GE_C_ACC", "ALL_ACC")


@dataclass
class DownstreamData:
    """Signed-log image stacks of a temporal split plus balanced labeled subsets of each side."""

    train_images: np.ndarray        # N x 11 x S x S
    test_images: np.ndarray
    train_idx: np.ndarray           # rows of train_images that carry a balanced label
    train_labels: np.ndarray        # FlareClass ints
    test_idx: np.ndarray
    test_labels: np.ndarray

    @property
    def labeled_train(self) -> np.ndarray:
        return self.train_images[self.train_idx]

    @property
    def labeled_test(self) -> np.ndarray:
        return self.test_images[self.test_idx]


def balanced_labels(archive: Archive, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices into ``archive`` and labels of its event-derived, non-flare-balanced subset."""
    ts = archive.timestamps
    labeled = assign_labels(archive.events, ts)
    keep = set(balance_nonflare(labeled, seed))
    idx = np.array([k for k, t in enumerate(ts) if t in keep], dtype=np.int64)
    return idx, np.array([int(labeled[ts[k]]) for k in idx], dtype=np.int64)


def downstream_data(train: Archive, test: Archive, seed: int = 0) -> DownstreamData:
    tr_idx, tr_y = balanced_labels(train, seed)
    te_idx, te_y = balanced_labels(test, seed + 1)
    return DownstreamData(prepare_images(train), prepare_images(test), tr_idx, tr_y, te_idx, te_y)


def nested_subsets(n: int, fractions: Sequence[float], seed: int) -> dict[float, np.ndarray]:
    """Prefixes of one seeded permutation, so smaller fractions are subsets of larger ones."""
    perm = np.random.default_rng([seed, 0x5107]).permutation(n)
    out = {}
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
        out[float(f)] = np.sort(perm[:max(1, int(round(f * n)))])
    return out


def scratch_model(pretrained: SolarCHIP, seed: int) -> SolarCHIP:
    """Randomly initialised model of the same shape, with the pretrained input statistics."""
    model = build_model(pretrained.cfg, seed, next(pretrained.parameters()).dtype)
    model.load_state_dict({k: v for k, v in pretrained.state_dict().items() if k.endswith(("input_shift", "input_scale"))},
                          strict=False)
    return model


def evaluate_classifier(clf, images: np.ndarray, labels: np.ndarray) -> dict[str, float | None]:
    return class_accuracies(clf.predict(images[:, HMI]), labels)


def few_shot(pretrained: SolarCHIP, data: DownstreamData, fractions: Sequence[float] = FEW_SHOT_FRACTIONS,
             seeds: Sequence[int] = (0, 1, 2, 3, 4), frozen: bool = False, steps: int | None = None,
             lr: float | None = None) -> list[dict]:
    """Accuracy per fraction x arm x seed; both arms see the same nested subset and head seed."""
    rows = []
    x_train, y_train = data.labeled_train, data.train_labels
    x_test = data.labeled_test
    for seed in seeds:
        subsets = nested_subsets(len(y_train), fractions, seed)
        scratch = scratch_model(pretrained, 10_000 + seed)
        for f in fractions:
            idx = subsets[float(f)]
            if len(idx) < MIN_FEW_SHOT:
                log.warning("fraction %g gives %d labeled samples (< %d); skipped", f, len(idx), MIN_FEW_SHOT)
                continue
            if len(np.unique(y_train[idx])) < 2:
                log.warning("fraction %g (seed %d) holds a single class; skipped", f, seed)
                continue
            for arm, model in zip(ARMS, (pretrained, scratch)):
                clf = train_probe(model, x_train[idx, HMI], y_train[idx], frozen=frozen, steps=steps, lr=lr, seed=seed)
                acc = evaluate_classifier(clf, x_test, data.test_labels)
                rows.append({"seed": seed, "fraction": float(f), "arm": arm, "n_train": int(len(idx)),
                             "ALL_ACC": acc["ALL"], "GE_M_ACC": acc["GE_M"], "GE_C_ACC": acc["GE_C"]})
    return rows


def few_shot_summary(rows: Sequence[dict], metric: str = "ALL_ACC") -> dict[tuple[float, str], float | None]:
    """Median over seeds of ``metric`` per (fraction, arm); undefined scores are left out."""
    groups: dict[tuple[float, str], list[float]] = {}
    for r in rows:
        vals = groups.setdefault((r["fraction"], r["arm"]), [])
        if r[metric] is not None:
            vals.append(r[metric])
    return {k: float(np.median(v)) if v else None for k, v in groups.items()}


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def ablation_cell(config: TrainConfig, data: DownstreamData, ridge: float = 1e-3) -> dict[str, float]:
    """Pretrain one configuration and score it: translation MSE both ways and frozen-probe accuracies."""
    state, _ = fit(config, data.train_images)
    model = state.model
    table = run_translation_probe(model, data.train_images, data.test_images, ridge)
    avg = {r["direction"]: r["MSE"] for r in table if r["modality"] == "Avg"}
    clf = train_probe(model, data.labeled_train[:, HMI], data.train_labels, frozen=True, seed=config.seed)
    acc = evaluate_classifier(clf, data.labeled_test, data.test_labels)
    return {"AIA_MSE": avg["HMI->AIA"], "HMI_MSE": avg["AIA->HMI"],
            "GE_M_ACC": acc["GE_M"], "GE_C_ACC": acc["GE_C"], "ALL_ACC": acc["ALL"]}


def ablation_grid(base: TrainConfig, data: DownstreamData, backbones: Sequence[str] = ("conv", "transformer"),
                  seeds: Sequence[int] = (0, 1, 2, 3, 4), ridge: float = 1e-3,
                  on_cell: Callable[[str, str, int, dict], None] | None = None) -> list[dict]:
    """Six loss configurations per backbone, each metric as mean and sd over seeds."""
    rows = []
    for kind in backbones:
        backbone = base.backbone.replace(kind=kind)
        for name, rec, l1, l2, l3 in ABLATION_ROWS:
            cells = []
            for seed in seeds:
                cfg = base.replace(seed=seed, backbone=backbone, rec_weight=rec, lambda1=l1, lambda2=l2, lambda3=l3)
                cell = ablation_cell(cfg, data, ridge)
                cells.append(cell)
                if on_cell is not None:
                    on_cell(kind, name, seed, cell)
            row = {"backbone": kind, "config": name, "rec": rec, "lambda1": l1, "lambda2": l2, "lambda3": l3,
                   "n_seeds": len(seeds)}
            for m in ABLATION_METRICS:
                row[f"{m}_mean"], row[f"{m}_sd"] = _mean_sd([c[m] for c in cells])
            rows.append(row)
    return rows


def format_value(v) -> str:
    """CSV cell text: floats via repr (exact round trip), ``NA`` for undefined scores."""
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns if columns is not None else (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in columns])
    return path


def write_pgm(path, image: np.ndarray, lo: float, hi: float) -> Path:
    """8-bit binary PGM: values mapped linearly from [lo, hi] to [0, 255], clipped, rounded."""
    path = Path(path)
    span = hi - lo if hi > lo else 1.0
    pix = np.clip(np.rint((np.asarray(image) - lo) / span * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return path


def dump_panels(out_dir, pred: np.ndarray, truth: np.ndarray, stem: str) -> list[Path]:
    """Translated and ground-truth images as PGM pairs sharing the truth's min/max scaling."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (p, t) in enumerate(zip(pred, truth)):
        lo, hi = float(t.min()), float(t.max())
        paths.append(write_pgm(out / f"{stem}_{k:03d}_pred.pgm", p, lo, hi))
        paths.append(write_pgm(out / f"{stem}_{k:03d}_truth.pgm", t, lo, hi))
    return paths
