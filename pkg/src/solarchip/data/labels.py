"""Flare labelling, non-flare balancing, and temporal splits."""

from __future__ import annotations

import logging
import math
from typing import Mapping, Sequence

import numpy as np

from .types import Archive, FlareClass, FlareEvent

log = logging.getLogger(__name__)


def assign_labels(events: Sequence[FlareEvent], timestamps: Sequence[int]) -> dict[int, FlareClass]:
    """Label whole-hour timestamps covered by a flare event.

    A timestamp inside ``[start, end]`` of an event takes that event's class;
    when events overlap the greatest class wins. Uncovered hours are ``NONE``.
    """
    labels = {int(t): FlareClass.NONE for t in timestamps}
    for ev in events:
        first, last = math.ceil(ev.start), math.floor(ev.end)
        for t in range(first, last + 1):
            if t in labels and ev.flare_class > labels[t]:
                labels[t] = ev.flare_class
    return labels


def balance_nonflare(labeled: Mapping[int, FlareClass], seed: int) -> list[int]:
    """All flare timestamps plus an equal-size uniform draw of non-flare timestamps.

    Returned in ascending time order. If there are fewer non-flare moments
    than flare moments, all of them are used and the shortfall is logged.
    """
    flare = sorted(t for t, c in labeled.items() if c != FlareClass.NONE)
    quiet = sorted(t for t, c in labeled.items() if c == FlareClass.NONE)
    if not flare:
        return []
    if len(quiet) < len(flare):
        log.warning("only %d non-flare moments for %d flare moments (shortfall %d)",
                    len(quiet), len(flare), len(flare) - len(quiet))
        chosen = quiet
    else:
        rng = np.random.default_rng(seed)
        chosen = [quiet[i] for i in rng.choice(len(quiet), size=len(flare), replace=False)]
    return sorted(flare + list(chosen))


def split_by_time(archive: Archive, boundary: int) -> tuple[Archive, Archive]:
    """Train strictly before ``boundary``, test at or after it."""
    ts = archive.timestamps
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("archive must be time-ordered")
    train = [s for s in archive.samples if s.timestamp < boundary]
    test = [s for s in archive.samples if s.timestamp >= boundary]
    if not train or not test:
        log.warning("split boundary %s leaves one side empty (train=%d, test=%d)",
                    boundary, len(train), len(test))
    return (Archive(train, dict(archive.meta), archive.events),
            Archive(test, dict(archive.meta), archive.events))


def boundary_at_fraction(archive: Archive, fraction: float) -> int:
    """Timestamp of the first sample past ``fraction`` of the archive."""
    idx = min(int(len(archive) * fraction), len(archive) - 1)
    return archive.samples[idx].timestamp
