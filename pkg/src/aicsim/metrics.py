"""Fidelity metrics over event logs: MVPOI, NOV, AVD, PCV, errors versus NT, SA contribution, convergence.

Every function here is a pure, read-only pass over an immutable event log
(see ``engine.EVENT_DTYPE``). Super-agent arrivals count as ``k`` visits, so
values are comparable across agent fractions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine import ARRIVE, DEPART, unpack_visit_payload
from .errors import UndefinedMetric
from .geodata import City, VisitPatterns

METRICS = ("NOV", "AVD", "PCV")
REDUCED_FRACTIONS = (0.75, 0.5, 0.25, 0.1)
WEEK_MINUTES = 7 * 1440
CO_VISIT_MINUTES = 5.0
# change point penalty in units of log n; 2 (plain BIC) over-splits short noisy series
PENALTY_LOG_MULT = 3.0


@dataclass(frozen=True)
class MetricSample:
    metric: str
    poi_id: str
    value: float
    replication: int
    tessellation: str
    fraction: float
    scenario: str = ""

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric}")
        if self.metric == "PCV" and not 0.0 <= self.value <= 1.0:
            raise ValueError("PCV must lie in [0, 1]")


@dataclass
class Visits:
    """Completed SA visits extracted from a log (one row per arrive/depart pair)."""

    subject: np.ndarray
    poi: np.ndarray
    arrive: np.ndarray
    depart: np.ndarray
    cbg: np.ndarray
    k: np.ndarray

    def __len__(self) -> int:
        return len(self.subject)

    def select(self, mask: np.ndarray) -> "Visits":
        return Visits(*(getattr(self, f)[mask] for f in ("subject", "poi", "arrive", "depart", "cbg", "k")))


def extract_visits(events: np.ndarray, window: tuple[int, int] = (0, WEEK_MINUTES)) -> Visits:
    """Pair each arrive_poi with the next depart_poi of the same (subject, POI).

    Visits are kept when they arrive inside ``window``; arrivals without a
    matching departure are dropped.
    """
    arr = events[events["kind"] == ARRIVE]
    dep = events[events["kind"] == DEPART]
    if len(arr) == 0:
        e = np.zeros(0, dtype=np.int64)
        return Visits(e, e, e, e, e, e)
    oa = np.lexsort((arr["minute"], arr["place"], arr["subject"]))
    od = np.lexsort((dep["minute"], dep["place"], dep["subject"]))
    arr, dep = arr[oa], dep[od]
    # keep only departures that belong to SA visits (visitor departures have no arrive_poi)
    key_a = np.stack([arr["subject"], arr["place"]], axis=1)
    key_d = np.stack([dep["subject"], dep["place"]], axis=1)
    ka = np.unique(key_a, axis=0)
    # rank within (subject, place) group
    def ranks(keys):
        new = np.r_[True, np.any(keys[1:] != keys[:-1], axis=1)]
        start = np.maximum.accumulate(np.where(new, np.arange(len(keys)), 0))
        return np.arange(len(keys)) - start
    ra, rd = ranks(key_a), ranks(key_d) if len(key_d) else np.zeros(0, dtype=np.int64)
    full_a = np.c_[key_a, ra]
    full_d = np.c_[key_d, rd] if len(key_d) else np.zeros((0, 3), dtype=np.uint64)
    # match with a structured view
    dt = np.dtype([("s", "<u8"), ("p", "<u8"), ("r", "<u8")])
    va = np.ascontiguousarray(full_a.astype(np.uint64)).view(dt).ravel()
    vd = np.ascontiguousarray(full_d.astype(np.uint64)).view(dt).ravel()
    _, ia, id_ = np.intersect1d(va, vd, return_indices=True)
    del ka
    a, d = arr[ia], dep[id_]
    keep = (a["minute"] >= window[0]) & (a["minute"] < window[1])
    a, d = a[keep], d[keep]
    cbg, k = unpack_visit_payload(a["payload"])
    order = np.lexsort((a["subject"], a["minute"], a["place"]))
    return Visits(a["subject"][order].astype(np.int64), a["place"][order].astype(np.int64),
                  a["minute"][order].astype(np.int64), d["minute"][order].astype(np.int64), cbg[order], k[order])


# --------------------------------------------------------------------------
# MVPOI and source CBGs


def _argmax_with_ties(counts: Mapping) -> object:
    if not counts:
        raise UndefinedMetric("empty scope: no visits")
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)


def select_mvpoi(source, scope=None, city: City | None = None):
    """Most visited POI.

    ``source`` is a mapping ``poi -> visits``, a ``VisitPatterns``, or a ``Visits``
    table. ``scope`` is ``None`` for the whole city or ``(cbg_id, category)``
    for the residential-cell / category variant (patterns only; needs ``city``).
    Ties go to the lower id.
    """
    if isinstance(source, VisitPatterns):
        counts: dict = {}
        cat = {p.id: p.category for p in city.pois} if city is not None else {}
        for cbg, poi, n in source.entries:
            if scope is not None and (cbg != scope[0] or cat.get(poi) != scope[1]):
                continue
            counts[poi] = counts.get(poi, 0.0) + n
        counts = {p: v for p, v in counts.items() if v > 0}
        return _argmax_with_ties(counts)
    if isinstance(source, Visits):
        totals = np.bincount(source.poi, weights=source.k) if len(source) else np.zeros(0)
        return _argmax_with_ties({i: v for i, v in enumerate(totals) if v > 0})
    return _argmax_with_ties({p: v for p, v in dict(source).items() if v > 0})


def select_top_source_cbgs(source, poi) -> tuple:
    """The two CBGs sending the most visits to ``poi`` (ties by id)."""
    if isinstance(source, VisitPatterns):
        counts: dict = {}
        for cbg, p, n in source.entries:
            if p == poi and n > 0:
                counts[cbg] = counts.get(cbg, 0.0) + n
    elif isinstance(source, Visits):
        m = source.poi == poi
        counts = {}
        for c, k in zip(source.cbg[m].tolist(), source.k[m].tolist()):
            counts[c] = counts.get(c, 0) + k
    else:
        counts = {c: v for c, v in dict(source).items() if v > 0}
    if len(counts) < 2:
        raise UndefinedMetric(f"POI {poi} has fewer than two source CBGs")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[0][0], ranked[1][0]


# --------------------------------------------------------------------------
# NOV / AVD / PCV


def _as_visits(log, window) -> Visits:
    return log if isinstance(log, Visits) else extract_visits(log, window)


def nov(log, poi: int, window: tuple[int, int] = (0, WEEK_MINUTES)) -> int:
    v = _as_visits(log, window)
    return int(v.k[v.poi == poi].sum())


def avd(log, poi: int, window: tuple[int, int] = (0, WEEK_MINUTES)) -> float:
    v = _as_visits(log, window)
    m = v.poi == poi
    w = v.k[m]
    if w.sum() == 0:
        raise UndefinedMetric(f"no completed visits to POI {poi}")
    return float(np.sum((v.depart[m] - v.arrive[m]) * w) / w.sum())


def _covisited(a0, a1, b0, b1, threshold: float, block: int = 2048) -> np.ndarray:
    """For each interval in a, whether some interval in b overlaps it by more than ``threshold``."""
    out = np.zeros(len(a0), dtype=bool)
    if len(a0) == 0 or len(b0) == 0:
        return out
    for s in range(0, len(a0), block):
        ov = np.minimum(a1[s:s + block, None], b1[None, :]) - np.maximum(a0[s:s + block, None], b0[None, :])
        out[s:s + block] = (ov > threshold).any(axis=1)
    return out


def pcv(log, poi: int, cbg1: int, cbg2: int, window: tuple[int, int] = (0, WEEK_MINUTES),
        threshold: float = CO_VISIT_MINUTES) -> float:
    """Fraction of visits from cbg1 or cbg2 that overlap a visit from the other CBG by > threshold minutes."""
    if cbg1 == cbg2:
        raise ValueError("PCV needs two distinct CBGs")
    v = _as_visits(log, window)
    m = v.poi == poi
    a = v.select(m & (v.cbg == cbg1))
    b = v.select(m & (v.cbg == cbg2))
    total = a.k.sum() + b.k.sum()
    if total == 0:
        raise UndefinedMetric(f"no visits from CBGs {cbg1}, {cbg2} to POI {poi}")
    ca = _covisited(a.arrive, a.depart, b.arrive, b.depart, threshold)
    cb = _covisited(b.arrive, b.depart, a.arrive, a.depart, threshold)
    return float((a.k[ca].sum() + b.k[cb].sum()) / total)


def expand_visits(v: Visits) -> Visits:
    """Disaggregate every SA visit into k single-agent visits."""
    rep = v.k
    return Visits(np.repeat(v.subject, rep), np.repeat(v.poi, rep), np.repeat(v.arrive, rep),
                  np.repeat(v.depart, rep), np.repeat(v.cbg, rep), np.ones(int(rep.sum()), dtype=np.int64))


@dataclass
class MetricTarget:
    """The POI and source CBGs every scenario of a sweep is measured at."""

    poi_index: int
    poi_id: str
    cbg1: int
    cbg2: int


def city_target(city: City) -> MetricTarget:
    poi_id = select_mvpoi(city.patterns)
    c1, c2 = select_top_source_cbgs(city.patterns, poi_id)
    pos = {c.id: j for j, c in enumerate(city.cbgs)}
    return MetricTarget(city.poi_index()[poi_id], poi_id, pos[c1], pos[c2])


def measure(events: np.ndarray, target: MetricTarget, window=(0, WEEK_MINUTES)) -> dict[str, float]:
    v = extract_visits(events, window)
    out = {"NOV": float(nov(v, target.poi_index))}
    for name, fn in (("AVD", lambda: avd(v, target.poi_index)),
                     ("PCV", lambda: pcv(v, target.poi_index, target.cbg1, target.cbg2))):
        try:
            out[name] = fn()
        except UndefinedMetric:
            out[name] = math.nan
    return out


# --------------------------------------------------------------------------
# comparisons


@dataclass
class ErrorRow:
    tessellation: str
    metric: str
    per_fraction: dict[float, float]
    aggregate: float


def aggregate_abs_error(samples_tess: Mapping[float, Sequence[float]], samples_nt: Sequence[float], metric: str,
                        tessellation: str = "", fractions: Sequence[float] = REDUCED_FRACTIONS) -> ErrorRow:
    """|mean_tess(f) - mean_NT| per fraction and their arithmetic mean."""
    nt = np.asarray(samples_nt, dtype=np.float64)
    if nt.size == 0:
        raise UndefinedMetric("no NT reference samples")
    ref = float(np.nanmean(nt))
    per = {}
    for f in fractions:
        if f not in samples_tess or len(samples_tess[f]) == 0:
            raise UndefinedMetric(f"missing samples for fraction {f}")
        per[f] = abs(float(np.nanmean(np.asarray(samples_tess[f], dtype=np.float64))) - ref)
    return ErrorRow(tessellation, metric, per, float(np.mean(list(per.values()))))


def sa_contribution(val_nt: float, val_with_sa: float, val_without_sa: float) -> float:
    """tau = (without - with) / (nt - without)."""
    den = val_nt - val_without_sa
    if den == 0 or not math.isfinite(den):
        raise UndefinedMetric("SA contribution undefined: NT value equals the no-SA value")
    return (val_without_sa - val_with_sa) / den


def infection_series_distance(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """(max, mean) absolute daily difference between two infected-fraction series."""
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"series lengths differ: {x.shape} vs {y.shape}")
    if x.size == 0:
        return 0.0, 0.0
    d = np.abs(x - y)
    return float(d.max()), float(d.mean())


# --------------------------------------------------------------------------
# convergence


def _segment_cost(cs: np.ndarray, cs2: np.ndarray, i: int, j: int) -> float:
    n = j - i
    s = cs[j] - cs[i]
    return float(cs2[j] - cs2[i] - s * s / n)


def binary_segmentation(x: Sequence[float], penalty: float | None = None, min_size: int = 2) -> list[int]:
    """Change points (segment start indices) minimizing within-segment squared deviation.

    A split is accepted when it lowers the cost by more than ``penalty``
    (default 3 log n, on data scaled by its robust spread).
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2 * min_size:
        return []
    sd = _noise_scale(x)
    if sd == 0:
        return []
    z = (x - x.mean()) / sd
    pen = PENALTY_LOG_MULT * math.log(n) if penalty is None else penalty
    cs = np.r_[0.0, np.cumsum(z)]
    cs2 = np.r_[0.0, np.cumsum(z * z)]
    found: list[int] = []
    stack = [(0, n)]
    while stack:
        i, j = stack.pop()
        if j - i < 2 * min_size:
            continue
        base = _segment_cost(cs, cs2, i, j)
        ts = np.arange(i + min_size, j - min_size + 1)
        left = cs2[ts] - cs2[i] - (cs[ts] - cs[i]) ** 2 / (ts - i)
        right = cs2[j] - cs2[ts] - (cs[j] - cs[ts]) ** 2 / (j - ts)
        tot = left + right
        b = int(np.argmin(tot))
        if base - tot[b] > pen:
            t = int(ts[b])
            found.append(t)
            stack += [(i, t), (t, j)]
    return sorted(found)


def _noise_scale(x: np.ndarray) -> float:
    """Noise level from first differences (MAD), robust to level shifts."""
    d = np.diff(x)
    if d.size == 0:
        return 0.0
    mad = float(np.median(np.abs(d - np.median(d)))) * 1.4826 / math.sqrt(2.0)
    if mad > 0:
        return mad
    sd = float(np.std(x))
    return sd if sd > 0 else 0.0


def running_stats(values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(values, dtype=np.float64)
    n = np.arange(1, len(x) + 1)
    mean = np.cumsum(x) / n
    var = np.maximum(np.cumsum(x * x) / n - mean ** 2, 0.0)
    return mean, np.sqrt(var * n / np.maximum(n - 1, 1))


@dataclass
class Convergence:
    n_star: int
    converged: bool
    change_points: list[int]


def variance_segmentation(r: Sequence[float], penalty: float | None = None, min_size: int = 5) -> list[int]:
    """Change points in the spread of zero-mean residuals (Gaussian likelihood cost n log var)."""
    r = np.asarray(r, dtype=np.float64)
    n = len(r)
    if n < 2 * min_size:
        return []
    pen = PENALTY_LOG_MULT * math.log(n) if penalty is None else penalty
    cs2 = np.r_[0.0, np.cumsum(r * r)]
    floor = 1e-12 * max(cs2[-1] / n, 1e-300)

    def cost(i, j):
        return (j - i) * np.log(np.maximum((cs2[j] - cs2[i]) / (j - i), floor))

    found: list[int] = []
    stack = [(0, n)]
    while stack:
        i, j = stack.pop()
        if j - i < 2 * min_size:
            continue
        ts = np.arange(i + min_size, j - min_size + 1)
        tot = cost(i, ts) + cost(ts, j)
        b = int(np.argmin(tot))
        if cost(i, j) - tot[b] > pen:
            t = int(ts[b])
            found.append(t)
            stack += [(i, t), (t, j)]
    return sorted(found)


def convergence_check(values: Sequence[float], tail: float = 0.1) -> Convergence:
    """Replication count after which the sample mean and spread stop shifting.

    Mean shifts are searched on the replication values; spread shifts on the
    residuals around the piecewise-constant mean. ``n*`` is one past the last
    change point on either statistic; the sequence is not converged when that
    point lies in the final ``tail`` of the sequence.
    """
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 10:
        raise ValueError("convergence check needs at least 10 replications")
    mean_cps = binary_segmentation(x)
    bounds = [0, *mean_cps, len(x)]
    resid = np.concatenate([x[i:j] - x[i:j].mean() for i, j in zip(bounds[:-1], bounds[1:])])
    cps = sorted(set(mean_cps) | set(variance_segmentation(resid)))
    n_star = 1 + cps[-1] if cps else 1
    converged = not cps or cps[-1] < len(x) * (1.0 - tail)
    return Convergence(n_star, converged, cps)


# --------------------------------------------------------------------------
# histograms and report files


def freedman_diaconis_edges(reference: Sequence[float], pooled: Sequence[float] | None = None) -> np.ndarray:
    """Bin edges with Freedman-Diaconis width from ``reference``, spanning ``pooled``."""
    ref = np.asarray([v for v in reference if math.isfinite(v)], dtype=np.float64)
    allv = np.asarray([v for v in (pooled if pooled is not None else reference) if math.isfinite(v)])
    if allv.size == 0:
        return np.array([0.0, 1.0])
    lo, hi = float(allv.min()), float(allv.max())
    q75, q25 = np.percentile(ref, [75, 25]) if ref.size else (0.0, 0.0)
    width = 2.0 * (q75 - q25) / max(ref.size, 1) ** (1.0 / 3.0)
    if width <= 0 or hi <= lo:
        return np.array([lo, hi if hi > lo else lo + 1.0])
    n = int(math.ceil((hi - lo) / width))
    return lo + width * np.arange(max(n, 1) + 1)


def histograms(samples: Mapping[str, Sequence[float]], reference_key: str) -> dict:
    pooled = [v for vals in samples.values() for v in vals]
    edges = freedman_diaconis_edges(samples[reference_key], pooled)
    out = {"edges": edges.tolist(), "reference": reference_key, "counts": {}}
    for k, vals in samples.items():
        vals = np.asarray([v for v in vals if math.isfinite(v)])
        counts, _ = np.histogram(vals, bins=edges)
        out["counts"][k] = (counts / max(len(vals), 1)).tolist()
    return out


def write_csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "nan"
    return x


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
