"""Run configuration files and run manifests.

A config file holds ``key=value`` lines (``#`` comments allowed). Keys
are the fields of ``RunConfig``; backbone fields take a ``backbone.``
prefix, e.g. ``backbone.kind=transformer``. Values are parsed as the
type of the field's default.

Every command writes ``manifest.txt`` (``key=value``) into its output
directory before doing any work, with ``status=running``, and rewrites it
with ``status=complete`` and the end time once all outputs exist.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data.storage import read_manifest, write_manifest
from .models import BackboneConfig
from .trainer import TrainConfig

MANIFEST = "manifest.txt"
CODE_VERSION = "0.1.0"


@dataclass
class RunConfig:
    seed: int = 7
    count: int = 256
    side: int = 64
    train_fraction: float = 0.75
    steps: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    checkpoint_every: int = 100
    frozen: bool = False
    probe_steps: int = 100
    ridge: float = 1e-3
    fewshot_seeds: int = 5
    ablation_seeds: int = 5
    ablation_steps: int = 500
    dump_images: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def train_config(self, **changes) -> TrainConfig:
        cfg = TrainConfig(seed=self.seed, steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                          lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3,
                          checkpoint_every=self.checkpoint_every,
                          backbone=self.backbone.replace(side=self.side))
        return cfg.replace(**changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _parse(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return type(default)(value.strip())


def apply_overrides(cfg: RunConfig, entries: dict[str, str]) -> RunConfig:
    """New config with string ``entries`` applied; unknown keys raise ``KeyError``."""
    top, bb = {}, {}
    defaults = RunConfig()
    for key, value in entries.items():
        if key.startswith("backbone."):
            name = key.split(".", 1)[1]
            if name not in BackboneConfig.__dataclass_fields__:
                raise KeyError(f"unknown config key {key!r}")
            bb[name] = _parse(value, getattr(defaults.backbone, name))
        else:
            if key not in RunConfig.__dataclass_fields__ or key == "backbone":
                raise KeyError(f"unknown config key {key!r}")
            top[key] = _parse(value, getattr(defaults, key))
    return dataclasses.replace(cfg, **top, backbone=cfg.backbone.replace(**bb))


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    return cfg if path is None else apply_overrides(cfg, read_manifest(path))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    out_dir: Path
    code_version: str = CODE_VERSION
    start: str = field(default_factory=_now)
    end: str = ""
    status: str = "running"
    outputs: list[str] = field(default_factory=list)
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return Path(self.out_dir) / MANIFEST

    def entries(self) -> dict[str, str]:
        base = {"command": self.command, "config_hash": self.config_hash, "seed": str(self.seed),
                "code_version": self.code_version, "start": self.start, "end": self.end,
                "status": self.status, "outputs": ",".join(self.outputs)}
        return {**self.extra, **base}

    def write(self) -> None:
        write_manifest(self.path, self.entries())

    def finalize(self, outputs) -> str:
        """Mark complete, record the outputs, and return the manifest's sha256."""
        self.outputs = sorted(str(Path(p).relative_to(self.out_dir)) for p in outputs)
        self.end, self.status = _now(), "complete"
        self.write()
        return file_sha256(self.path)
