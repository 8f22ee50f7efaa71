"""On-disk archive format.

An archive directory holds::

    manifest.txt        key=value lines (seed, count, side, patch_size,
                        class_thresholds, domain, ...)
    labels.csv          timestamp,class       (class letter or None)
    latent.csv          timestamp,peak_amplitude
    events.csv          start,peak,end,class,region
    grids/t{timestamp:08d}_m{modality:02d}.bin

Each ``.bin`` file is a 16-byte header followed by the row-major payload::

    bytes 0-3    magic b"SCHG"
    bytes 4-7    dtype code, uint32 little-endian (1 = float64)
    bytes 8-11   H, uint32 little-endian
    bytes 12-15  W, uint32 little-endian
    bytes 16-    H*W values, little-endian float64, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .types import N_MODALITIES, Archive, Domain, FlareClass, FlareEvent, ImageGrid, SolarSample

MAGIC = b"SCHG"
DTYPE_F64 = 1
HEADER = struct.Struct("<4sIII")


def write_grid(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError(f"grid must be 2-D, got shape {values.shape}")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, DTYPE_F64, h, w))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, code, h, w = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if code != DTYPE_F64:
        raise ValueError(f"{path}: unsupported dtype code {code}")
    if len(raw) != HEADER.size + 8 * h * w:
        raise ValueError(f"{path}: payload size {len(raw) - HEADER.size} does not match {h}x{w} float64")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(h, w).astype(np.float64)


def write_manifest(path, entries: dict) -> None:
    lines = []
    for key, value in entries.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"manifest entry {key!r} cannot contain '=' in the key or newlines")
        lines.append(f"{key}={value}\n")
    Path(path).write_text("".join(lines))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _grid_name(timestamp: int, modality: int) -> str:
    return f"t{timestamp:08d}_m{modality:02d}.bin"


def save_archive(archive: Archive, root) -> Path:
    root = Path(root)
    (root / "grids").mkdir(parents=True, exist_ok=True)
    domains = {s.domain for s in archive}
    if len(domains) > 1:
        raise ValueError("archive mixes raw and signed-log samples")
    meta = dict(archive.meta)
    meta["count"] = str(len(archive))
    if len(archive):
        meta["side"] = str(archive[0].side)
        meta["domain"] = archive[0].domain.value
    write_manifest(root / "manifest.txt", meta)
    for s in archive:
        for m in range(N_MODALITIES):
            write_grid(root / "grids" / _grid_name(s.timestamp, m), s.images[m].values)
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "class"])
        for s in archive:
            w.writerow([s.timestamp, "" if s.label is None else s.label.letter])
    with open(root / "latent.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "peak_amplitude"])
        for s in archive:
            w.writerow([s.timestamp, "" if s.peak_amplitude is None else repr(float(s.peak_amplitude))])
    with open(root / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start", "peak", "end", "class", "region"])
        for e in archive.events:
            w.writerow([repr(float(e.start)), repr(float(e.peak)), repr(float(e.end)), e.flare_class.letter, e.region])
    return root


def _read_csv(path) -> list[dict]:
    if not Path(path).exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_archive(root) -> Archive:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no archive manifest at {manifest}")
    meta = read_manifest(manifest)
    domain = Domain(meta.get("domain", Domain.RAW.value))
    rows = _read_csv(root / "labels.csv")
    latent = {int(r["timestamp"]): r["peak_amplitude"] for r in _read_csv(root / "latent.csv")}
    samples = []
    for r in rows:
        t = int(r["timestamp"])
        images = {m: ImageGrid(read_grid(root / "grids" / _grid_name(t, m)), domain) for m in range(N_MODALITIES)}
        label = FlareClass.parse(r["class"]) if r["class"] != "" else None
        amp = latent.get(t, "")
        samples.append(SolarSample(t, images, label, float(amp) if amp != "" else None))
    if "count" in meta and int(meta["count"]) != len(samples):
        raise ValueError(f"manifest count {meta['count']} but labels.csv lists {len(samples)} samples")
    events = [FlareEvent(float(e["start"]), float(e["peak"]), float(e["end"]), FlareClass.parse(e["class"]),
                         int(e["region"])) for e in _read_csv(root / "events.csv")]
    return Archive(samples, meta, events)
