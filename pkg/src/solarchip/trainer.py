"""Seeded pretraining loop.

All randomness after model initialisation (modality subsets, batch
indices, augmentations) comes from one numpy ``Generator`` held in the
``TrainState``, so a saved state resumes into the identical step stream.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data.transforms import aug_array, signed_log_array
from .data.types import AIA_IDS, HMI, Archive, GeomAug, SolarSample
from .losses import LossReport, LossWeights, make_report, total_loss
from .models import BackboneConfig, SolarCHIP, build_model
from .models.checkpoint import load_optimizer_state, load_parameters, read_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

AUGS = GeomAug.all()


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str, value: float, step: int):
        super().__init__(f"non-finite {term} loss ({value!r}) at step {step}")
        self.term, self.value, self.step = term, value, step


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    rec_weight: float = 1.0
    rec_reduction: str = "mean"
    modalities_per_step: int = 3
    augment: bool = True
    standardize: bool = True          # per-modality input shift/scale from the training images
    grad_clip: float = 5.0            # global-norm clip; 0 disables
    checkpoint_every: int = 0         # 0: only the final checkpoint
    precision: str = "float64"
    single_threaded: bool = True
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive terms need a negative)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0 <= self.modalities_per_step <= len(AIA_IDS):
            raise ValueError("modalities_per_step must be in [0, 10]")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")
        LossWeights(self.rec_weight, self.lambda1, self.lambda2, self.lambda3)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.rec_weight, self.lambda1, self.lambda2, self.lambda3)

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig(**d.get("backbone", {}))
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainState:
    config: TrainConfig
    model: SolarCHIP
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0

    @classmethod
    def initial(cls, config: TrainConfig) -> "TrainState":
        model = build_model(config.backbone, config.seed, config.dtype)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        rng = np.random.default_rng([config.seed, 0x7EA1])
        return cls(config, model, opt, rng, 0)

    def meta(self) -> dict:
        return {"config": self.config.to_dict(), "step": self.step,
                "rng": self.rng.bit_generator.state}

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.meta(), self.optimizer)

    @classmethod
    def load(cls, path) -> "TrainState":
        meta, arrays = read_checkpoint(path)
        config = TrainConfig.from_dict(meta["config"])
        state = cls.initial(config)
        load_parameters(state.model, arrays)
        load_optimizer_state(state.optimizer, state.model, arrays)
        state.rng.bit_generator.state = meta["rng"]
        state.step = int(meta["step"])
        return state


def prepare_images(samples: Sequence[SolarSample] | Archive) -> np.ndarray:
    """Stack samples into an N x 11 x side x side signed-log array."""
    out = []
    for s in samples:
        stack = s.stack()
        out.append(stack if s.domain.value == "signed_log" else signed_log_array(stack))
    return np.stack(out)


def input_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-modality mean map and residual spread of N x 11 x S x S images.

    The mean map is averaged over the eight dihedral transforms, so it is the
    same whichever augmentation the trainer draws. The spread is one standard
    deviation per modality of the images minus that map.
    """
    mean = images.mean(axis=0)
    mean = np.mean([aug_array(mean, a) for a in AUGS], axis=0)
    std = (images - mean).std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def draw_step(rng: np.random.Generator, n_samples: int, config: TrainConfig):
    """(sampled AIA ids, batch indices, one aug per sample) for one step."""
    sampled = tuple(sorted(int(i) for i in rng.choice(AIA_IDS, size=config.modalities_per_step, replace=False)))
    if n_samples < config.batch_size:
        raise ValueError(f"need at least {config.batch_size} training samples, have {n_samples}")
    idx = rng.choice(n_samples, size=config.batch_size, replace=False)
    if config.augment:
        augs = [AUGS[int(j)] for j in rng.integers(0, len(AUGS), size=config.batch_size)]
    else:
        augs = [AUGS[0]] * config.batch_size
    return sampled, idx, augs


def assemble_batch(images: np.ndarray, idx, augs, modalities, dtype=torch.float64,
                   hook: Callable[[int, int, GeomAug], None] | None = None) -> dict[int, torch.Tensor]:
    """Batch tensors per modality; each sample's aug is applied to all its modalities at once."""
    modalities = list(modalities)
    rows = []
    for k, aug in zip(idx, augs):
        stack = aug_array(images[int(k)][modalities], aug)
        if hook is not None:
            for m in modalities:
                hook(int(k), m, aug)
        rows.append(stack)
    arr = torch.from_numpy(np.stack(rows)).to(dtype)       # B x M x S x S
    return {m: arr[:, j:j + 1] for j, m in enumerate(modalities)}


def train_step(state: TrainState, batch: dict[int, torch.Tensor], sampled) -> LossReport:
    """One gradient update of every active parameter (temperatures included)."""
    cfg = state.config
    model, opt = state.model, state.optimizer
    model.train()
    opt.zero_grad(set_to_none=True)
    loss, terms = total_loss(model, batch, sampled, cfg.weights, cfg.rec_reduction)
    for name, value in list(terms.items()) + [("total", loss)]:
        v = float(value.detach())
        if not math.isfinite(v):
            raise NonFiniteLoss(name, v, state.step)
    if loss.requires_grad:
        loss.backward()
        if cfg.grad_clip > 0:
            params = [p for p in model.parameters() if p.grad is not None]
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
    state.step += 1
    return make_report(loss, terms, cfg.weights, sampled, model)


def run_step(state: TrainState, images: np.ndarray, hook=None) -> LossReport:
    sampled, idx, augs = draw_step(state.rng, len(images), state.config)
    batch = assemble_batch(images, idx, augs, (HMI,) + sampled, state.config.dtype, hook)
    return train_step(state, batch, sampled)


def batch_from_samples(samples: Sequence[SolarSample], modalities, dtype=torch.float64) -> dict[int, torch.Tensor]:
    images = prepare_images(samples)
    return assemble_batch(images, range(len(samples)), [AUGS[0]] * len(samples), modalities, dtype)


def fit(config: TrainConfig, archive: Archive | np.ndarray, out_dir=None, state: TrainState | None = None,
        hook=None, on_step: Callable[[int, LossReport], None] | None = None):
    """Train until ``config.steps`` total steps; returns (state, history of new steps).

    Pass ``state`` to resume. With ``out_dir``, checkpoints go to
    ``out_dir/ckpt_step{N:06d}.npz`` every ``checkpoint_every`` steps and
    ``out_dir/final.npz`` at the end.
    """
    if config.single_threaded:
        torch.set_num_threads(1)
    images = archive if isinstance(archive, np.ndarray) else prepare_images(archive)
    if state is None:
        state = TrainState.initial(config)
        if config.standardize:
            state.model.set_input_stats(*input_stats(images))
    history: list[LossReport] = []
    out = Path(out_dir) if out_dir is not None else None
    while state.step < config.steps:
        report = run_step(state, images, hook)
        history.append(report)
        if on_step is not None:
            on_step(state.step, report)
        if out is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            state.save(out / f"ckpt_step{state.step:06d}.npz")
    if out is not None:
        state.save(out / "final.npz")
    return state, history


def write_history(path, history: Sequence[LossReport], first_step: int = 1, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LossReport.CSV_HEADER)
        for i, rep in enumerate(history):
            w.writerow(rep.csv_row(first_step + i))


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
