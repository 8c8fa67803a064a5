"""Per-cell mobility schedules: POI visit frequencies plus demographic counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


@dataclass
class Schedule:
    entries: dict[str, float] = field(default_factory=dict)
    demographics: dict[str, int] = field(default_factory=dict)

    def total(self) -> float:
        return math.fsum(self.entries.values())

    def probabilities(self) -> dict[str, float]:
        """Destination distribution; empty when the schedule carries no mass."""
        tot = self.total()
        if tot <= 0:
            return {}
        return {k: v / tot for k, v in self.entries.items() if v > 0}

    def copy(self) -> "Schedule":
        return Schedule(dict(self.entries), dict(self.demographics))


def largest_remainder(count: int, fractions: Sequence[float]) -> list[int]:
    """Apportion an integer count; ties in the remainder go to the lower index."""
    raw = [count * f for f in fractions]
    base = [int(math.floor(r)) for r in raw]
    short = count - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def split_schedule(parent: Schedule, fractions: Sequence[float]) -> list[Schedule]:
    """Split visit frequencies and demographics by area fractions.

    The last child receives the floating-point remainder so the children sum
    back to the parent.
    """
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ValidationError("no fractions given")
    if any(f < 0 or f > 1 for f in fractions):
        raise ValidationError(f"fractions must lie in [0, 1]: {fractions}")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions sum to {math.fsum(fractions)}, expected 1")
    children = [Schedule() for _ in fractions]
    last = len(fractions) - 1
    for poi, f in parent.entries.items():
        parts = [f * fr for fr in fractions[:last]]
        parts.append(max(0.0, f - math.fsum(parts)) if last else f)
        for child, part in zip(children, parts):
            if part > 0 or f == 0:
                child.entries[poi] = part
    for bucket, n in parent.demographics.items():
        for child, part in zip(children, largest_remainder(n, fractions)):
            child.demographics[bucket] = part
    return children


def merge_schedules(children: Iterable[Schedule]) -> Schedule:
    acc: dict[str, list[float]] = {}
    demo: dict[str, int] = {}
    for ch in children:
        for poi, f in ch.entries.items():
            acc.setdefault(poi, []).append(f)
        for bucket, n in ch.demographics.items():
            demo[bucket] = demo.get(bucket, 0) + n
    return Schedule({k: math.fsum(v) for k, v in acc.items()}, demo)


def schedule_vector(schedule: Schedule, poi_index: dict[str, int], n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.float64)
    for poi, f in schedule.entries.items():
        out[poi_index[poi]] += f
    return out
