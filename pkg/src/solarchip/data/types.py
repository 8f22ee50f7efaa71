"""Core domain types for multi-modal SDO-like samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

N_MODALITIES = 11
HMI = 0
AIA_BANDS = ("0094", "0131", "0171", "0193", "0211", "0304", "0335", "1600", "1700", "4500")
MODALITY_NAMES = ("HMI",) + AIA_BANDS
AIA_IDS = tuple(range(1, N_MODALITIES))


def modality_name(index: int) -> str:
    check_modality(index)
    return MODALITY_NAMES[index]


def check_modality(index: int) -> int:
    if not isinstance(index, (int, np.integer)) or not 0 <= int(index) < N_MODALITIES:
        raise ValueError(f"modality index must be an integer in [0, 10], got {index!r}")
    return int(index)


class Domain(str, enum.Enum):
    RAW = "raw"
    SIGNED_LOG = "signed_log"


class FlareClass(enum.IntEnum):
    NONE = 0
    A = 1
    B = 2
    C = 3
    M = 4
    X = 5

    @classmethod
    def parse(cls, value) -> "FlareClass":
        if isinstance(value, FlareClass):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip().upper()
        if text in ("", "NONE", "0", "Q"):
            return cls.NONE
        return cls[text[0]]

    @property
    def letter(self) -> str:
        return "None" if self is FlareClass.NONE else self.name


@dataclass(frozen=True)
class ImageGrid:
    """A square single-channel image in either the raw or the signed-log domain."""

    values: np.ndarray
    domain: Domain = Domain.RAW

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"ImageGrid must be square 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def check_patch_size(self, patch_size: int) -> None:
        if self.side % patch_size:
            raise ValueError(f"side {self.side} is not divisible by patch size {patch_size}")

    def check_finite(self) -> None:
        bad = np.argwhere(~np.isfinite(self.values))
        if len(bad):
            r, c = bad[0]
            raise ValueError(f"non-finite value {self.values[r, c]!r} at pixel (row={r}, col={c})")


@dataclass
class SolarSample:
    """One timestamped set of 11 co-registered images plus an optional label.

    ``peak_amplitude`` is the generator's latent (max active-region field
    strength) when the sample comes from the synthetic archive.
    """

    timestamp: int
    images: dict[int, ImageGrid]
    label: FlareClass | None = None
    peak_amplitude: float | None = None

    def __post_init__(self):
        keys = sorted(self.images)
        if keys != list(range(N_MODALITIES)):
            raise ValueError(f"SolarSample needs all 11 modalities, got {keys}")
        sides = {g.side for g in self.images.values()}
        domains = {g.domain for g in self.images.values()}
        if len(sides) != 1:
            raise ValueError(f"modalities disagree on grid side: {sorted(sides)}")
        if len(domains) != 1:
            raise ValueError("modalities disagree on domain flag")

    @property
    def side(self) -> int:
        return self.images[HMI].side

    @property
    def domain(self) -> Domain:
        return self.images[HMI].domain

    def stack(self) -> np.ndarray:
        """Images as an (11, side, side) array in modality order."""
        return np.stack([self.images[i].values for i in range(N_MODALITIES)])


@dataclass(frozen=True)
class FlareEvent:
    """A flare from an event catalogue; times are (fractional) hours since epoch."""

    start: float
    peak: float
    end: float
    flare_class: FlareClass
    region: int = 0

    def __post_init__(self):
        if not self.start <= self.peak <= self.end:
            raise ValueError(f"need start <= peak <= end, got {self.start}, {self.peak}, {self.end}")
        cls = FlareClass.parse(self.flare_class)
        if cls < FlareClass.A:
            raise ValueError("flare events must have class A or above")
        object.__setattr__(self, "flare_class", cls)


@dataclass(frozen=True)
class GeomAug:
    """Element of the dihedral group of the square: clockwise rotation, then an optional left-right flip."""

    rotation: int = 0
    flip: bool = False

    def __post_init__(self):
        if self.rotation % 90:
            raise ValueError(f"rotation must be a multiple of 90 degrees, got {self.rotation}")
        object.__setattr__(self, "rotation", self.rotation % 360)
        object.__setattr__(self, "flip", bool(self.flip))

    @property
    def quarter_turns(self) -> int:
        return self.rotation // 90

    def then(self, other: "GeomAug") -> "GeomAug":
        """The transform equal to applying ``self`` first and ``other`` second."""
        # F R^a = R^-a F, so a flip in `self` reverses the direction of `other`'s rotation.
        rot = self.rotation - other.rotation if self.flip else self.rotation + other.rotation
        return GeomAug(rot % 360, self.flip != other.flip)

    def inverse(self) -> "GeomAug":
        if self.flip:
            return self
        return GeomAug((-self.rotation) % 360, False)

    @staticmethod
    def all() -> list["GeomAug"]:
        return [GeomAug(r, f) for f in (False, True) for r in (0, 90, 180, 270)]


IDENTITY = GeomAug()


@dataclass
class Archive:
    """An ordered collection of samples plus the generator's metadata."""

    samples: list[SolarSample]
    meta: dict[str, str] = field(default_factory=dict)
    events: list[FlareEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def timestamps(self) -> list[int]:
        return [s.timestamp for s in self.samples]
