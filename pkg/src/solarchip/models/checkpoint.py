"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive (zip of ``.npy`` arrays,
``allow_pickle=False``). Every array is stored as little-endian float64
(``<f8``) unless noted:

``__config__``
    uint8 bytes of a UTF-8 JSON document echoing the backbone and training
    configuration, the step counter and the sampler RNG state.
``m{MM}/{role}/{LLL}/{name}``
    a parameter tensor of modality ``MM`` (00 = HMI), ``role`` one of
    ``encoder``, ``decoder``, ``cls_head``, ``img_head``, ``LLL`` its
    ordinal within that role.
``m{MM}/input/input_shift``, ``m{MM}/input/input_scale``
    the fixed input standardization of modality ``MM`` (a side x side mean
    map and a 0-d scale).
``temperature/alpha_cls`` (and ``alpha_pat``, ``alpha_int``)
    the learnable log-scales (0-d arrays).
``optim/{tag}/exp_avg``, ``optim/{tag}/exp_avg_sq``, ``optim/{tag}/step``
    optimizer moment accumulators keyed by the parameter tag.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np
import torch

from .core import SolarCHIP, tagged_buffers, tagged_parameters

CONFIG_KEY = "__config__"


def _le64(t: torch.Tensor) -> np.ndarray:
    # ascontiguousarray would promote 0-d temperatures to shape (1,)
    return np.ascontiguousarray(t.detach().cpu().numpy().astype("<f8")).reshape(tuple(t.shape))


def save_checkpoint(path, model: SolarCHIP, meta: dict, optimizer: torch.optim.Optimizer | None = None) -> None:
    arrays = {CONFIG_KEY: np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    tags = {}
    for tag, p in tagged_parameters(model):
        arrays[tag] = _le64(p)
        tags[id(p)] = tag
    for tag, b in tagged_buffers(model):
        arrays[tag] = _le64(b)
    if optimizer is not None:
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                tag = tags[id(p)]
                for key, value in state.items():
                    arrays[f"optim/{tag}/{key}"] = _le64(torch.as_tensor(value))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def _scalar_dtype():
    # matches the dtype torch.optim uses for its step counters
    return torch.float64 if torch.get_default_dtype() == torch.float64 else torch.float32


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(arrays.pop(CONFIG_KEY).tobytes().decode())
    return meta, arrays


def load_parameters(model: SolarCHIP, arrays: dict[str, np.ndarray]) -> None:
    with torch.no_grad():
        for tag, p in list(tagged_parameters(model)) + list(tagged_buffers(model)):
            if tag not in arrays:
                raise KeyError(f"checkpoint lacks parameter {tag}")
            value = torch.from_numpy(arrays[tag].astype(np.float64)).to(p.dtype)
            if value.shape != p.shape:
                raise ValueError(f"{tag}: checkpoint shape {tuple(value.shape)} != model shape {tuple(p.shape)}")
            p.copy_(value)


def load_optimizer_state(optimizer: torch.optim.Optimizer, model: SolarCHIP, arrays: dict[str, np.ndarray]) -> None:
    by_id = {id(p): tag for tag, p in tagged_parameters(model)}
    for group in optimizer.param_groups:
        for p in group["params"]:
            tag = by_id[id(p)]
            prefix = f"optim/{tag}/"
            keys = [k for k in arrays if k.startswith(prefix)]
            if not keys:
                optimizer.state.pop(p, None)
                continue
            state = {}
            for k in keys:
                name = k[len(prefix):]
                dtype = p.dtype if name != "step" else _scalar_dtype()
                state[name] = torch.from_numpy(arrays[k].astype(np.float64)).to(dtype)
            optimizer.state[p] = state
