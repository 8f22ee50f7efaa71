"""Deterministic synthetic stand-in for the multi-instrument SDO record.

Each archive is driven by a latent population of bipolar active regions on
a rotating sphere plus a quiet-sun magnetic network pattern fixed in the
rotating frame:

* HMI (modality 0) renders the signed line-of-sight field: the bipolar
  regions, the network, and Gaussian noise.
* Each AIA band renders a non-negative response to the *unsigned* field:
  a quiet-disk level with a limb profile, modulated by the network, plus
  a power law of the Gaussian-smoothed field magnitude, plus noise. Band
  parameters (smoothing width, contrast, exponent) differ per band. The
  4500 continuum band has no emission term and darkens under strong
  field (sunspots).

Regions are born at a Poisson rate, grow and decay with a half-sine
envelope, and drift across the disk at the solar rotation rate, so active
regions move a little between consecutive timestamps and leave over the
limb after roughly half a rotation.

A sample's flare class is set from the largest line-of-sight region
amplitude visible at that time using ``CLASS_THRESHOLDS`` (Gauss)::

    amplitude <  300          -> None
    300  <= amplitude <  550  -> A
    550  <= amplitude <  760  -> B
    760  <= amplitude < 1000  -> C
    1000 <= amplitude < 1350  -> M
    1350 <= amplitude         -> X

The thresholds sit near the quantiles (0.40, 0.65, 0.80, 0.90, 0.96) of
the peak amplitude over 300 default-config archives of 256 samples, so
class frequencies fall off roughly geometrically: about 41/24/15/10/6/4
percent for None/A/B/C/M/X. Single short archives scatter around these
rates because they hold only a few dozen regions.

Noise for sample ``k`` is drawn from a stream seeded by ``(seed, k)`` only;
the region population comes from a separate stream seeded by ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .types import AIA_BANDS, Archive, Domain, FlareClass, FlareEvent, ImageGrid, SolarSample

CLASS_THRESHOLDS = (300.0, 550.0, 760.0, 1000.0, 1350.0)


@dataclass(frozen=True)
class BandResponse:
    base: float        # quiet-disk level at disk centre
    limb: float        # >0 darkens toward the limb, <0 brightens
    contrast: float    # active/quiet brightness ratio where the smoothed field is FIELD_REF
    gamma: float       # power-law index of the active response
    smooth: float      # Gaussian spread of the active emission (pixels at side 64)
    network: float     # multiplier on the unsigned network field
    dark: float        # fractional continuum darkening under strong field
    noise: float       # additive Gaussian noise std, as a fraction of base


FIELD_REF = 500.0      # Gauss

BANDS = {
    "0094": BandResponse(2.0, -0.3, 40.0, 1.3, 3.5, 0.005, 0.0, 0.10),
    "0131": BandResponse(5.0, -0.3, 30.0, 1.25, 3.0, 0.005, 0.0, 0.08),
    "0171": BandResponse(300.0, -0.2, 10.0, 1.0, 2.5, 0.008, 0.0, 0.03),
    "0193": BandResponse(500.0, -0.2, 10.0, 1.05, 3.0, 0.008, 0.0, 0.03),
    "0211": BandResponse(150.0, -0.2, 20.0, 1.1, 3.0, 0.008, 0.0, 0.04),
    "0304": BandResponse(80.0, 0.1, 6.0, 0.9, 1.5, 0.015, 0.0, 0.05),
    "0335": BandResponse(10.0, -0.2, 25.0, 1.2, 3.2, 0.005, 0.0, 0.10),
    "1600": BandResponse(400.0, 0.3, 4.0, 0.8, 1.0, 0.02, 0.0, 0.03),
    "1700": BandResponse(2500.0, 0.4, 3.0, 0.7, 0.8, 0.012, 0.0, 0.01),
    "4500": BandResponse(5000.0, 0.6, 0.0, 1.0, 0.6, 0.0, 0.7, 0.004),
}


@dataclass(frozen=True)
class GeneratorConfig:
    side: int = 64
    patch_size: int = 8
    cadence_hours: int = 12
    t0: int = 0
    disk_fraction: float = 0.45        # disk radius / side
    rotation_deg_per_hour: float = 13.2 / 24.0
    birth_rate: float = 0.1            # regions per sample step
    lifetime: tuple[float, float] = (15.0, 60.0)   # sample steps
    amplitude_median: float = 700.0    # Gauss
    amplitude_sigma: float = 0.55      # log-normal spread
    spot_sigma: tuple[float, float] = (1.5, 2.8)
    separation: tuple[float, float] = (3.5, 7.0)
    network_field: float = 40.0
    network_waves: int = 24
    hmi_noise: float = 8.0


@dataclass(frozen=True)
class Region:
    birth: float
    lifetime: float
    lon0: float         # longitude at birth, radians (0 = disk centre meridian)
    lat: float
    peak: float
    sigma: float
    separation: float
    tilt: float
    ident: int

    def envelope(self, k: float) -> float:
        u = (k - self.birth) / self.lifetime
        return math.sin(math.pi * u) if 0.0 <= u <= 1.0 else 0.0


def classify_amplitude(amplitude: float, thresholds=CLASS_THRESHOLDS) -> FlareClass:
    return FlareClass(int(np.searchsorted(thresholds, amplitude, side="right")))


class SyntheticSun:
    """Latent activity model and multi-band renderer for one archive."""

    def __init__(self, seed: int, count: int, config: GeneratorConfig | None = None):
        config = config or GeneratorConfig()
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        if config.side < 8 or config.side % config.patch_size:
            raise ValueError(f"side {config.side} must be >= 8 and divisible by patch size {config.patch_size}")
        self.seed, self.count, self.config = seed, count, config
        self.scale = config.side / 64.0
        self.radius = config.disk_fraction * config.side
        c = (config.side - 1) / 2.0
        yy, xx = np.mgrid[0:config.side, 0:config.side].astype(np.float64)
        self.xx, self.yy = xx, yy
        self.rx, self.ry = (xx - c) / self.radius, (c - yy) / self.radius
        rho2 = self.rx ** 2 + self.ry ** 2
        self.mask = rho2 <= 1.0
        self.mu = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
        lat = np.arcsin(np.clip(self.ry, -1.0, 1.0))
        coslat = np.cos(lat)
        self.pix_lat = lat
        self.pix_lon = np.arcsin(np.clip(np.divide(self.rx, coslat, out=np.zeros_like(coslat), where=coslat > 1e-9), -1.0, 1.0))
        self.omega = math.radians(config.rotation_deg_per_hour * config.cadence_hours)  # per step
        rng = np.random.default_rng([seed, 0x5EED])
        self.regions = self._draw_regions(rng)
        self.waves = self._draw_network(rng)

    def _draw_regions(self, rng) -> list[Region]:
        cfg = self.config
        lo_life, hi_life = cfg.lifetime
        span = self.count + hi_life
        n = rng.poisson(cfg.birth_rate * span)
        births = np.sort(rng.uniform(-hi_life, self.count, size=n))
        out = []
        for ident, b in enumerate(births):
            out.append(Region(
                birth=float(b),
                lifetime=float(rng.uniform(lo_life, hi_life)),
                lon0=float(rng.uniform(-math.pi, math.pi)),
                lat=float(math.radians(rng.uniform(-35.0, 35.0))),
                peak=float(cfg.amplitude_median * math.exp(cfg.amplitude_sigma * rng.standard_normal())),
                sigma=float(rng.uniform(*cfg.spot_sigma) * self.scale),
                separation=float(rng.uniform(*cfg.separation) * self.scale),
                tilt=float(math.radians(rng.uniform(-20.0, 20.0))),
                ident=ident,
            ))
        return out

    def _draw_network(self, rng) -> np.ndarray:
        k = self.config.network_waves
        freq = rng.uniform(6.0, 16.0, size=k)
        theta = rng.uniform(0.0, 2 * math.pi, size=k)
        phase = rng.uniform(0.0, 2 * math.pi, size=k)
        drift = rng.normal(0.0, 0.01, size=k)  # slow intrinsic evolution, rad per step
        return np.stack([freq * np.cos(theta), freq * np.sin(theta), phase, drift], axis=1)

    def timestamp(self, k: int) -> int:
        return self.config.t0 + k * self.config.cadence_hours

    def visible_regions(self, k: int) -> list[tuple[Region, float, float]]:
        """Regions on the front side at step ``k`` as (region, longitude, line-of-sight amplitude)."""
        out = []
        for reg in self.regions:
            env = reg.envelope(k)
            if env <= 0.0:
                continue
            lon = (reg.lon0 + self.omega * (k - reg.birth) + math.pi) % (2 * math.pi) - math.pi
            if abs(lon) >= math.pi / 2:
                continue
            amp = reg.peak * env * math.sqrt(math.cos(lon) * math.cos(reg.lat))
            out.append((reg, lon, amp))
        return out

    def peak_amplitude(self, k: int) -> float:
        return max((amp for _, _, amp in self.visible_regions(k)), default=0.0)

    def active_field(self, k: int) -> np.ndarray:
        """Signed line-of-sight field of the active regions at step ``k`` (no noise)."""
        field = np.zeros_like(self.xx)
        c = (self.config.side - 1) / 2.0
        for reg, lon, amp in self.visible_regions(k):
            x = c + self.radius * math.cos(reg.lat) * math.sin(lon)
            y = c - self.radius * math.sin(reg.lat)
            half = 0.5 * reg.separation
            dx = half * math.cos(reg.tilt) * math.cos(lon)
            dy = half * math.sin(reg.tilt)
            sign = 1.0 if reg.lat >= 0 else -1.0  # hemispheric polarity rule
            for px, py, s in ((x + dx, y - dy, sign), (x - dx, y + dy, -sign)):
                r2 = (self.xx - px) ** 2 + (self.yy - py) ** 2
                field += s * amp * np.exp(-r2 / (2 * reg.sigma ** 2))
        return field * self.mask

    def network_field(self, k: int) -> np.ndarray:
        """Quiet-sun network, fixed in the rotating frame."""
        lon = self.pix_lon - self.omega * k
        w = self.waves
        arg = (w[:, 0, None, None] * lon[None] + w[:, 1, None, None] * self.pix_lat[None]
               + w[:, 2, None, None] + w[:, 3, None, None] * k)
        pattern = np.cos(arg).sum(axis=0) / math.sqrt(len(w))
        return self.config.network_field * pattern * self.mu * self.mask

    def render(self, k: int) -> SolarSample:
        cfg = self.config
        rng = np.random.default_rng([self.seed, 1, k])
        active = self.active_field(k)
        network = self.network_field(k)
        hmi = (active + network + cfg.hmi_noise * rng.standard_normal(active.shape)) * self.mask
        images = {0: ImageGrid(hmi, Domain.RAW)}
        unsigned_net = np.abs(network)
        for idx, band in enumerate(AIA_BANDS, start=1):
            resp = BANDS[band]
            u = gaussian_filter(np.abs(active), resp.smooth * self.scale)
            limb = 1.0 - resp.limb * (1.0 - self.mu)
            quiet = resp.base * limb * (1.0 - resp.dark * np.tanh(u / 800.0))
            emission = resp.base * resp.contrast * (u / FIELD_REF) ** resp.gamma
            value = quiet * (1.0 + resp.network * unsigned_net) + emission
            value = value + resp.base * resp.noise * rng.standard_normal(value.shape)
            images[idx] = ImageGrid(np.clip(value, 0.0, None) * self.mask, Domain.RAW)
        amp = self.peak_amplitude(k)
        return SolarSample(self.timestamp(k), images, classify_amplitude(amp), amp)

    def events(self) -> list[FlareEvent]:
        """Catalogue entries whose whole-hour coverage reproduces the sample labels."""
        out = []
        for k in range(self.count):
            vis = self.visible_regions(k)
            if not vis:
                continue
            reg, _, amp = max(vis, key=lambda v: v[2])
            cls = classify_amplitude(amp)
            if cls == FlareClass.NONE:
                continue
            t = self.timestamp(k)
            out.append(FlareEvent(t - 0.4, t + 0.1, t + 0.5, cls, reg.ident))
        return out


def generate_archive(seed: int, count: int, side: int = 64, **overrides) -> Archive:
    """Render ``count`` consecutive samples of a synthetic archive (raw domain)."""
    cfg = GeneratorConfig(side=side, **overrides)
    sun = SyntheticSun(seed, count, cfg)
    samples = [sun.render(k) for k in range(count)]
    meta = {
        "seed": str(seed),
        "count": str(count),
        "side": str(side),
        "patch_size": str(cfg.patch_size),
        "cadence_hours": str(cfg.cadence_hours),
        "t0": str(cfg.t0),
        "class_thresholds": ",".join(f"{t:g}" for t in CLASS_THRESHOLDS),
        "domain": Domain.RAW.value,
    }
    return Archive(samples, meta, sun.events())
