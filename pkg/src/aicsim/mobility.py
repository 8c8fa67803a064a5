"""Mobility: cell schedules, trip propensity, destination choice, and dwell times.

Destination choice is table driven. For every street node we precompute the
category distribution per age bucket (needs weights restricted to categories
present in the node's schedule), the frequency-weighted POI distribution per
category, and the frequency-weighted distribution over the few closest POIs of
each local category. The scalar ``choose_destination`` and the vectorized
``DestinationSampler`` share those tables, so they agree draw for draw.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .geodata import (AGE_BUCKETS, CATEGORIES, DWELL_BOUNDS, LOCAL_CATEGORIES, City, CbgPolygon,
                      Poi, StreetGraph, VisitPatterns)
from .schedule import Schedule, largest_remainder, schedule_vector
from .tessellation import Tessellation, cbg_demographics

MINUTES_PER_DAY = 1440


@dataclass
class MobilityConfig:
    p_local: float = 0.75
    dwell_cap_minutes: float = 480.0
    nt_kernel_exponent: float = 2.0
    base_trip_rate: float = 0.08
    local_neighbors: int = 5

    def __post_init__(self):
        if not 0.0 <= self.p_local <= 1.0:
            raise ConfigError(f"p_local must be in [0, 1], got {self.p_local}")
        if self.dwell_cap_minutes <= DWELL_BOUNDS[-1][0]:
            raise ConfigError("dwell cap must exceed the lower bound of the last bucket")
        if self.base_trip_rate < 0 or self.local_neighbors < 1:
            raise ConfigError("base_trip_rate must be >= 0 and local_neighbors >= 1")

    @classmethod
    def from_json(cls, path=None) -> "MobilityConfig":
        if path is None:
            text = resources.files("aicsim.data").joinpath("mobility.json").read_text()
        else:
            text = Path(path).read_text()
        data = json.loads(text)
        unknown = set(data) - set(asdict(cls()))
        if unknown:
            raise ConfigError(f"unknown mobility config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class NeedsWeights:
    matrix: np.ndarray  # (age bucket, category)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(AGE_BUCKETS), len(CATEGORIES)):
            raise ValidationError(f"needs matrix must be {len(AGE_BUCKETS)}x{len(CATEGORIES)}")
        if np.any(self.matrix < 0) or np.any(self.matrix.sum(axis=1) <= 0):
            raise ValidationError("every age bucket needs a positive weight")

    @classmethod
    def uniform(cls) -> "NeedsWeights":
        return cls(np.ones((len(AGE_BUCKETS), len(CATEGORIES))))


def load_needs(path=None) -> NeedsWeights:
    if path is None:
        text = resources.files("aicsim.data").joinpath("needs.csv").read_text()
        name = "needs.csv"
    else:
        text = Path(path).read_text()
        name = str(path)
    m = np.zeros((len(AGE_BUCKETS), len(CATEGORIES)))
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or row[0].startswith("#") or row[0] == "age_bucket":
            continue
        if len(row) != 3:
            raise ParseError("expected age_bucket,category,weight", name, lineno)
        age, cat, w = row
        if age not in AGE_BUCKETS or cat not in CATEGORIES:
            raise ParseError(f"unknown age bucket or category {age!r}/{cat!r}", name, lineno)
        try:
            m[AGE_BUCKETS.index(age), CATEGORIES.index(cat)] = float(w)
        except ValueError:
            raise ParseError(f"bad weight {w!r}", name, lineno) from None
    return NeedsWeights(m)


# --------------------------------------------------------------------------
# schedules


def build_cell_schedules(patterns: VisitPatterns, tess: Tessellation, cbgs: Sequence[CbgPolygon]
                         ) -> Tessellation:
    """Give every cell the area-weighted sum of its source CBGs' pattern rows.

    Demographic counts of each CBG are apportioned over its cells by largest
    remainder so they stay integers and sum back exactly.
    """
    rows = patterns.by_cbg()
    by_id = {c.id: c for c in cbgs}
    pieces: dict[str, list[tuple[int, float]]] = {}
    for cell in tess.cells:
        if not cell.source_cbg_fractions:
            raise ValidationError(f"cell {cell.id} has no source_cbg_fractions")
        for cbg, f in cell.source_cbg_fractions.items():
            if cbg not in by_id:
                raise ValidationError(f"cell {cell.id} references unknown CBG {cbg}")
            pieces.setdefault(cbg, []).append((cell.id, f))
    acc: list[dict[str, list[float]]] = [{} for _ in tess.cells]
    demo = [{b: 0 for b in AGE_BUCKETS} for _ in tess.cells]
    for cbg_id in sorted(pieces):
        parts = pieces[cbg_id]
        for poi, f in rows.get(cbg_id, {}).items():
            for k, frac in parts:
                if f * frac > 0:
                    acc[k].setdefault(poi, []).append(f * frac)
        fr = [f for _, f in parts]
        tot = math.fsum(fr)
        counts = cbg_demographics(by_id[cbg_id])
        for bucket, n in counts.items():
            for (k, _), share in zip(parts, largest_remainder(n, [f / tot for f in fr] if tot else fr)):
                demo[k][bucket] += share
    for cell, entries, d in zip(tess.cells, acc, demo):
        cell.schedule = Schedule({p: math.fsum(v) for p, v in entries.items()}, d)
    return tess


def _normalized_mean_one(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = x.mean(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(m > 0, x / np.where(m > 0, m, 1.0), 1.0)
    return out


@dataclass
class TripProfiles:
    """Per-row (node or cell) multiplicative trip weights, each normalized to mean 1."""

    hour: np.ndarray  # (n, 24)
    dow: np.ndarray   # (n, 7)
    dom: np.ndarray   # (n, 31)


def trip_profiles(sched: np.ndarray, pois: Sequence[Poi]) -> TripProfiles:
    """Aggregate POI profiles weighted by schedule frequencies (rows of ``sched``)."""
    hv = np.array([p.hourly_visits for p in pois], dtype=np.float64)
    hv = hv / np.maximum(hv.sum(axis=1, keepdims=True), 1e-300)
    dow = np.array([p.dow_weights for p in pois], dtype=np.float64)
    dom = np.array([p.dom_weights for p in pois], dtype=np.float64)
    sched = np.atleast_2d(sched)
    return TripProfiles(_normalized_mean_one(sched @ hv), _normalized_mean_one(sched @ dow),
                        _normalized_mean_one(sched @ dom))


def trip_probability(base_rate: float, dom_weight, dow_weight, hour_weight):
    return np.clip(base_rate * np.asarray(dom_weight) * np.asarray(dow_weight) * np.asarray(hour_weight),
                   0.0, 1.0)


def decide_trip(profiles: TripProfiles, row: int, calendar: tuple[int, int, int], base_rate: float,
                u: float) -> bool:
    """Bernoulli trip decision for one agent; ``calendar`` is (day_of_month, day_of_week, hour)."""
    dom, dow, hour = calendar
    p = trip_probability(base_rate, profiles.dom[row, dom % 31], profiles.dow[row, dow % 7],
                         profiles.hour[row, hour % 24])
    return bool(u < p)


# --------------------------------------------------------------------------
# destination choice


@dataclass
class _NodeTables:
    cat_cum: np.ndarray    # (3, C) cumulative category probabilities per age bucket
    poi_idx: np.ndarray    # (C, P) POI indices per category, padded with -1
    poi_cum: np.ndarray    # (C, P) cumulative probabilities (1.0 on padding)
    local_idx: np.ndarray  # (C, L) closest POIs per category, padded with -1
    local_cum: np.ndarray  # (C, L)


def _cum(w: np.ndarray) -> np.ndarray:
    c = np.cumsum(w)
    return c / c[-1] if c.size and c[-1] > 0 else c


def node_tables(freq: np.ndarray, tt_from_node: np.ndarray, poi_cat: np.ndarray, needs: NeedsWeights,
                n_local: int, width: int) -> _NodeTables:
    """Destination tables for one origin node with schedule vector ``freq``."""
    C = len(CATEGORIES)
    poi_idx = np.full((C, width), -1, dtype=np.int64)
    poi_cum = np.ones((C, width))
    local_idx = np.full((C, n_local), -1, dtype=np.int64)
    local_cum = np.ones((C, n_local))
    present = np.zeros(C, dtype=bool)
    for c in range(C):
        cand = np.flatnonzero((poi_cat == c) & (freq > 0))
        if cand.size == 0:
            continue
        present[c] = True
        poi_idx[c, :cand.size] = cand
        poi_cum[c, :cand.size] = _cum(freq[cand])
        if CATEGORIES[c] in LOCAL_CATEGORIES:
            near = cand[np.lexsort((cand, tt_from_node[cand]))][:n_local]
            local_idx[c, :near.size] = near
            local_cum[c, :near.size] = _cum(freq[near])
    w = needs.matrix * present[None, :]
    cat_cum = np.zeros_like(w)
    for a in range(len(AGE_BUCKETS)):
        if w[a].sum() > 0:
            cat_cum[a] = _cum(w[a])
    return _NodeTables(cat_cum, poi_idx, poi_cum, local_idx, local_cum)


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF: index of the first cumulative value exceeding u."""
    return np.minimum((cum <= u[:, None]).sum(axis=1), cum.shape[1] - 1)


class DestinationSampler:
    """Vectorized destination choice for agents at known origin nodes."""

    def __init__(self, node_freq: np.ndarray, tt_node_poi: np.ndarray, pois: Sequence[Poi],
                 needs: NeedsWeights, cfg: MobilityConfig):
        self.cfg = cfg
        self.poi_cat = np.array([CATEGORIES.index(p.category) for p in pois], dtype=np.int64)
        n_nodes = node_freq.shape[0]
        width = max(1, int(np.bincount(self.poi_cat, minlength=len(CATEGORIES)).max()))
        C, L = len(CATEGORIES), cfg.local_neighbors
        self.cat_cum = np.zeros((n_nodes, len(AGE_BUCKETS), C))
        self.poi_idx = np.full((n_nodes, C, width), -1, dtype=np.int64)
        self.poi_cum = np.ones((n_nodes, C, width))
        self.local_idx = np.full((n_nodes, C, L), -1, dtype=np.int64)
        self.local_cum = np.ones((n_nodes, C, L))
        for n in range(n_nodes):
            t = node_tables(node_freq[n], tt_node_poi[n], self.poi_cat, needs, L, width)
            self.cat_cum[n], self.poi_idx[n], self.poi_cum[n] = t.cat_cum, t.poi_idx, t.poi_cum
            self.local_idx[n], self.local_cum[n] = t.local_idx, t.local_cum
        self.is_local = np.array([c in LOCAL_CATEGORIES for c in CATEGORIES])
        self.has_any = self.cat_cum[:, :, -1] > 0 if C else np.zeros((n_nodes, 3), dtype=bool)

    def sample(self, nodes: np.ndarray, ages: np.ndarray, u_cat: np.ndarray, u_local: np.ndarray,
               u_dest: np.ndarray) -> np.ndarray:
        """POI index per agent, or -1 when the agent's schedule offers nothing it needs."""
        nodes = np.asarray(nodes, dtype=np.int64)
        ages = np.asarray(ages, dtype=np.int64)
        out = np.full(len(nodes), -1, dtype=np.int64)
        ok = self.has_any[nodes, ages]
        if not ok.any():
            return out
        n, a = nodes[ok], ages[ok]
        cat = _draw(self.cat_cum[n, a], np.asarray(u_cat)[ok])
        local = self.is_local[cat] & (np.asarray(u_local)[ok] < self.cfg.p_local)
        ud = np.asarray(u_dest)[ok]
        pick = np.empty(len(n), dtype=np.int64)
        if local.any():
            j = _draw(self.local_cum[n[local], cat[local]], ud[local])
            pick[local] = self.local_idx[n[local], cat[local], j]
        far = ~local
        if far.any():
            j = _draw(self.poi_cum[n[far], cat[far]], ud[far])
            pick[far] = self.poi_idx[n[far], cat[far], j]
        out[ok] = pick
        return out


def choose_destination(age_bucket: int, node: int, schedule: Schedule, pois: Sequence[Poi],
                       tt_from_node: np.ndarray, rng: np.random.Generator, needs: NeedsWeights | None = None,
                       cfg: MobilityConfig | None = None) -> str | None:
    """Pick one destination POI id for an agent at ``node`` (None when no trip is possible)."""
    needs = needs or NeedsWeights.uniform()
    cfg = cfg or MobilityConfig()
    index = {p.id: i for i, p in enumerate(pois)}
    freq = schedule_vector(schedule, index, len(pois))
    sampler = DestinationSampler(freq[None, :], np.asarray(tt_from_node)[None, :], pois, needs, cfg)
    u = rng.random(3)
    got = sampler.sample(np.array([0]), np.array([age_bucket]), u[:1], u[1:2], u[2:3])
    return None if got[0] < 0 else pois[int(got[0])].id


# --------------------------------------------------------------------------
# dwell


def dwell_tables(pois: Sequence[Poi]) -> np.ndarray:
    return np.cumsum(np.array([p.dwell_bucket_probs for p in pois], dtype=np.float64), axis=1)


def sample_dwell_minutes(dwell_cum: np.ndarray, u_bucket: np.ndarray, u_minutes: np.ndarray,
                         cap: float = 480.0) -> tuple[np.ndarray, np.ndarray]:
    """Bucket index and minutes per draw; minutes lie in (lo, hi] of the bucket."""
    dwell_cum = np.atleast_2d(dwell_cum)
    b = _draw(dwell_cum / dwell_cum[:, -1:], np.asarray(u_bucket, dtype=np.float64))
    lo = np.array([x[0] for x in DWELL_BOUNDS])[b]
    hi = np.array([x[1] for x in DWELL_BOUNDS[:-1]] + [cap])[b]
    return b, lo + (hi - lo) * (1.0 - np.asarray(u_minutes, dtype=np.float64))


def sample_dwell(poi: Poi, rng: np.random.Generator, cap: float = 480.0) -> float:
    _, m = sample_dwell_minutes(dwell_tables([poi]), rng.random(1), rng.random(1), cap)
    return float(m[0])


# --------------------------------------------------------------------------
# no-tessellation schedules


def travel_minutes_to_pois(graph: StreetGraph, pois: Sequence[Poi]) -> np.ndarray:
    """(node, poi) travel time in minutes."""
    cols = np.array([graph.index[p.node_id] for p in pois], dtype=np.int64)
    return graph.all_pairs()[:, cols] / 60.0


def nt_kernel(tt_min: np.ndarray, exponent: float = 2.0) -> np.ndarray:
    return 1.0 / (1.0 + np.asarray(tt_min)) ** exponent


def build_nt_schedules(cbg_freq: np.ndarray, node_cbg: np.ndarray, tt_min: np.ndarray,
                       home_weight: np.ndarray, exponent: float = 2.0) -> np.ndarray:
    """NT schedule for every node: its CBG's row re-weighted by the travel kernel.

    The kernel is divided by its home-weighted mean over the CBG's nodes before
    re-weighting, then each home's schedule is rescaled to the CBG's total
    mass. Homes therefore differ by proximity while their average stays close
    to the CBG row.
    """
    K = nt_kernel(tt_min, exponent)
    out = np.zeros((len(node_cbg), cbg_freq.shape[1]))
    for j in range(cbg_freq.shape[0]):
        members = np.flatnonzero(node_cbg == j)
        if members.size == 0:
            continue
        w = home_weight[members].astype(np.float64)
        if w.sum() <= 0:
            w = np.ones_like(w)
        kbar = (w[:, None] * K[members]).sum(axis=0) / w.sum()
        rel = K[members] / kbar[None, :]
        raw = cbg_freq[j][None, :] * rel
        mass = cbg_freq[j].sum()
        tot = raw.sum(axis=1, keepdims=True)
        out[members] = np.where(tot > 0, raw * mass / np.where(tot > 0, tot, 1.0), 0.0)
    return out


def build_nt_schedule(home_node: int, cbg_schedule: Schedule, pois: Sequence[Poi], graph: StreetGraph,
                      cbg_nodes: np.ndarray, home_weight: np.ndarray | None = None,
                      exponent: float = 2.0) -> Schedule:
    """NT schedule of a single home within the CBG whose street nodes are ``cbg_nodes``."""
    index = {p.id: i for i, p in enumerate(pois)}
    freq = schedule_vector(cbg_schedule, index, len(pois))
    tt = travel_minutes_to_pois(graph, pois)
    node_cbg = np.full(graph.n_nodes, -1, dtype=np.int64)
    node_cbg[np.asarray(cbg_nodes)] = 0
    hw = np.ones(graph.n_nodes) if home_weight is None else np.asarray(home_weight, dtype=np.float64)
    rows = build_nt_schedules(freq[None, :], node_cbg, tt, hw, exponent)
    row = rows[home_node]
    return Schedule({p.id: float(row[i]) for i, p in enumerate(pois) if row[i] > 0},
                    dict(cbg_schedule.demographics))


def cbg_frequency_matrix(city: City) -> np.ndarray:
    index = city.poi_index()
    cbg_index = {c.id: j for j, c in enumerate(city.cbgs)}
    m = np.zeros((len(city.cbgs), len(city.pois)))
    for cbg, poi, cnt in city.patterns.entries:
        m[cbg_index[cbg], index[poi]] += cnt
    return m
