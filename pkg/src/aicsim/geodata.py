"""Geographic substrate: street graphs, POIs, census block groups, visit patterns.

All coordinates are planar meters. Travel times are seconds.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, dijkstra

from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

NODE_KINDS = ("residential", "arterial", "highway", "other")
CATEGORIES = (
    "grocery_retail",
    "education",
    "religious",
    "food_service",
    "accommodation",
    "medical",
    "office",
    "other",
)
LOCAL_CATEGORIES = ("grocery_retail", "education", "religious")
AGE_BUCKETS = ("child", "adult", "senior")
AGE_RANGES = {"child": (0, 17), "adult": (18, 64), "senior": (65, 90)}
MAX_HOUSEHOLD = 6

# m/s by street kind
SPEEDS = {"residential": 8.0, "arterial": 14.0, "highway": 25.0, "other": 8.0}
DWELL_BOUNDS = ((0.0, 5.0), (5.0, 20.0), (20.0, 60.0), (60.0, 240.0), (240.0, 480.0))


@dataclass(frozen=True)
class StreetNode:
    id: int
    position: tuple[float, float]
    kind: str = "residential"


@dataclass(frozen=True)
class StreetEdge:
    u: int
    v: int
    length: float
    travel_time: float


class StreetGraph:
    """Undirected road network stored as index arrays.

    Node ids are arbitrary integers; internally nodes are addressed by their
    position in ``ids`` ("node index").
    """

    def __init__(self, nodes: Sequence[StreetNode], edges: Sequence[StreetEdge]):
        self.ids = np.array([n.id for n in nodes], dtype=np.int64)
        self.xy = np.array([n.position for n in nodes], dtype=np.float64).reshape(-1, 2)
        self.kinds = np.array([NODE_KINDS.index(n.kind) for n in nodes], dtype=np.int8)
        self.index = {int(i): k for k, i in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            seen = set()
            for i in self.ids:
                if int(i) in seen:
                    raise ValidationError(f"duplicate node id {int(i)}")
                seen.add(int(i))
        eu, ev, el, et = [], [], [], []
        for e in edges:
            for end in (e.u, e.v):
                if end not in self.index:
                    raise ValidationError(f"edge ({e.u}, {e.v}) references unknown node {end}")
            if e.u == e.v:
                raise ValidationError(f"self-loop on node {e.u}")
            if not (e.travel_time > 0):
                raise ValidationError(f"edge ({e.u}, {e.v}) has non-positive travel time {e.travel_time}")
            if not (e.length > 0):
                raise ValidationError(f"edge ({e.u}, {e.v}) has non-positive length {e.length}")
            eu.append(self.index[e.u])
            ev.append(self.index[e.v])
            el.append(float(e.length))
            et.append(float(e.travel_time))
        self.edge_u = np.array(eu, dtype=np.int64)
        self.edge_v = np.array(ev, dtype=np.int64)
        self.edge_length = np.array(el, dtype=np.float64)
        self.edge_time = np.array(et, dtype=np.float64)
        if not np.all(np.isfinite(self.xy)):
            raise ValidationError("non-finite node position")
        self._csr = None
        self._all_pairs = None

    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def node(self, idx: int) -> StreetNode:
        return StreetNode(int(self.ids[idx]), tuple(self.xy[idx]), NODE_KINDS[self.kinds[idx]])

    def nodes(self) -> list[StreetNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    def edges(self) -> list[StreetEdge]:
        return [
            StreetEdge(int(self.ids[u]), int(self.ids[v]), float(l), float(t))
            for u, v, l, t in zip(self.edge_u, self.edge_v, self.edge_length, self.edge_time)
        ]

    def csr(self):
        """Symmetric sparse adjacency weighted by travel time (parallel edges keep the minimum)."""
        if self._csr is None:
            n = self.n_nodes
            order = np.argsort(-self.edge_time, kind="stable")
            u = np.concatenate([self.edge_u[order], self.edge_v[order]])
            v = np.concatenate([self.edge_v[order], self.edge_u[order]])
            w = np.concatenate([self.edge_time[order], self.edge_time[order]])
            # duplicates overwrite in order, so the smallest weight lands last
            dense_key = u * n + v
            _, last = np.unique(dense_key[::-1], return_index=True)
            keep = len(dense_key) - 1 - last
            self._csr = coo_matrix((w[keep], (u[keep], v[keep])), shape=(n, n)).tocsr()
        return self._csr

    def neighbors(self) -> list[np.ndarray]:
        m = self.csr()
        return [m.indices[m.indptr[i]:m.indptr[i + 1]] for i in range(self.n_nodes)]

    def validate(self) -> None:
        if self.n_nodes == 0:
            raise ValidationError("graph has no nodes")
        reached = breadth_first_order(self.csr(), 0, directed=False, return_predecessors=False)
        if len(reached) != self.n_nodes:
            missing = sorted(set(range(self.n_nodes)) - set(reached.tolist()))
            raise ValidationError(
                f"graph is disconnected: {len(missing)} nodes unreachable from node "
                f"{int(self.ids[0])}, e.g. node {int(self.ids[missing[0]])}"
            )

    def distances_from(self, sources: Sequence[int] | np.ndarray) -> np.ndarray:
        """Travel-time rows (seconds) from the given node indices."""
        sources = np.asarray(sources, dtype=np.int64)
        if self._all_pairs is not None:
            return self._all_pairs[sources]
        return dijkstra(self.csr(), directed=False, indices=sources)

    def all_pairs(self) -> np.ndarray:
        if self._all_pairs is None:
            self._all_pairs = dijkstra(self.csr(), directed=False)
        return self._all_pairs

    def nearest_node(self, position, candidates: np.ndarray | None = None) -> int:
        pts = self.xy if candidates is None else self.xy[candidates]
        d = np.hypot(pts[:, 0] - position[0], pts[:, 1] - position[1])
        k = int(np.argmin(d))
        return k if candidates is None else int(candidates[k])

    def bounds(self) -> tuple[float, float, float, float]:
        return (float(self.xy[:, 0].min()), float(self.xy[:, 1].min()),
                float(self.xy[:, 0].max()), float(self.xy[:, 1].max()))


def travel_time(graph: StreetGraph, source: int, target: int) -> float:
    """Shortest travel time in seconds between two node ids; ``inf`` if unreachable."""
    for nid in (source, target):
        if nid not in graph.index:
            raise KeyError(f"unknown node {nid}")
    s, t = graph.index[source], graph.index[target]
    if s == t:
        return 0.0
    return float(graph.distances_from([s])[0, t])


def edge_travel_time(length: float, kind: str, traffic_factor: float = 1.0) -> float:
    return length / SPEEDS[kind] * traffic_factor


# --------------------------------------------------------------------------
# POIs, CBGs, patterns


@dataclass(frozen=True)
class Poi:
    id: str
    node_id: int
    category: str
    area_m2: float | None
    floors: int | None
    hourly_visits: tuple[float, ...]
    dow_weights: tuple[float, ...] = (1.0,) * 7
    dom_weights: tuple[float, ...] = (1.0,) * 31
    dwell_bucket_probs: tuple[float, ...] = (0.2, 0.3, 0.3, 0.15, 0.05)

    @property
    def has_geometry(self) -> bool:
        return self.area_m2 is not None and self.floors is not None

    def weekly_visits(self) -> float:
        return float(sum(self.hourly_visits)) * 7.0


def _check_poi(p: Poi) -> Poi:
    if p.category not in CATEGORIES:
        raise ValidationError(f"POI {p.id}: unknown category {p.category!r}")
    if p.area_m2 is not None and not (p.area_m2 > 0):
        raise ValidationError(f"POI {p.id}: area_m2 must be > 0, got {p.area_m2}")
    if p.floors is not None and (int(p.floors) != p.floors or p.floors < 1):
        raise ValidationError(f"POI {p.id}: floors must be an integer >= 1, got {p.floors}")
    for name, vals, n in (("hourly_visits", p.hourly_visits, 24), ("dow_weights", p.dow_weights, 7),
                          ("dom_weights", p.dom_weights, 31), ("dwell_bucket_probs", p.dwell_bucket_probs, 5)):
        if len(vals) != n:
            raise ValidationError(f"POI {p.id}: {name} needs {n} values, got {len(vals)}")
        if any((not math.isfinite(v)) or v < 0 for v in vals):
            raise ValidationError(f"POI {p.id}: {name} must be finite and non-negative")
    total = math.fsum(p.dwell_bucket_probs)
    if abs(total - 1.0) > 1e-6:
        raise ValidationError(f"POI {p.id}: dwell_bucket_probs sum to {total}, expected 1")
    return p


def normalize_dwell(p: Poi) -> Poi:
    probs = np.asarray(p.dwell_bucket_probs, dtype=np.float64)
    probs = probs / probs.sum()
    return Poi(p.id, p.node_id, p.category, p.area_m2, p.floors, p.hourly_visits,
               p.dow_weights, p.dom_weights, tuple(float(x) for x in probs))


@dataclass(frozen=True)
class CbgPolygon:
    id: str
    polygon: tuple[tuple[float, float], ...]
    population: int
    age_distribution: tuple[float, float, float]
    household_size_probs: tuple[float, ...]
    daytime_cbg_probs: Mapping[str, float] = field(default_factory=dict)

    def centroid(self) -> tuple[float, float]:
        from shapely.geometry import Polygon

        c = Polygon(self.polygon).centroid
        return (c.x, c.y)


def _check_cbg(c: CbgPolygon) -> CbgPolygon:
    from shapely.geometry import LinearRing

    if len(c.polygon) < 3:
        raise ValidationError(f"CBG {c.id}: polygon needs at least 3 vertices")
    if not LinearRing(c.polygon).is_simple:
        raise ValidationError(f"CBG {c.id}: polygon is self-intersecting")
    if int(c.population) != c.population or c.population < 0:
        raise ValidationError(f"CBG {c.id}: population must be a non-negative integer")
    if len(c.age_distribution) != 3:
        raise ValidationError(f"CBG {c.id}: age_distribution needs 3 shares")
    if len(c.household_size_probs) != MAX_HOUSEHOLD:
        raise ValidationError(f"CBG {c.id}: household_size_probs needs {MAX_HOUSEHOLD} values")
    for name, vals in (("age_distribution", c.age_distribution),
                       ("household_size_probs", c.household_size_probs),
                       ("daytime_cbg_probs", tuple(c.daytime_cbg_probs.values()))):
        if any(v < 0 for v in vals):
            raise ValidationError(f"CBG {c.id}: {name} has negative entries")
        if vals and abs(math.fsum(vals) - 1.0) > 1e-6:
            raise ValidationError(f"CBG {c.id}: {name} sums to {math.fsum(vals)}, expected 1")
    return c


@dataclass
class VisitPatterns:
    entries: list[tuple[str, str, float]]

    def by_cbg(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for cbg, poi, n in self.entries:
            row = out.setdefault(cbg, {})
            row[poi] = row.get(poi, 0.0) + n
        return out

    def poi_totals(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for _, poi, n in self.entries:
            out[poi] = out.get(poi, 0.0) + n
        return out

    def total(self) -> float:
        return math.fsum(n for _, _, n in self.entries)


@dataclass
class City:
    graph: StreetGraph
    pois: list[Poi]
    cbgs: list[CbgPolygon]
    patterns: VisitPatterns

    def poi_index(self) -> dict[str, int]:
        return {p.id: i for i, p in enumerate(self.pois)}

    def poi_nodes(self) -> np.ndarray:
        return np.array([self.graph.index[p.node_id] for p in self.pois], dtype=np.int64)


# --------------------------------------------------------------------------
# loaders


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def load_street_graph(path) -> StreetGraph:
    nodes: list[StreetNode] = []
    edges: list[StreetEdge] = []
    for lineno, line in _lines(path):
        parts = line.split()
        try:
            if parts[0] == "N" and len(parts) == 5:
                if parts[4] not in NODE_KINDS:
                    raise ValueError(f"unknown node kind {parts[4]!r}")
                nodes.append(StreetNode(int(parts[1]), (float(parts[2]), float(parts[3])), parts[4]))
            elif parts[0] == "E" and len(parts) == 5:
                edges.append(StreetEdge(int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
            else:
                raise ValueError(f"malformed record {line!r}")
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    graph = StreetGraph(nodes, edges)
    graph.validate()
    log.info("loaded street graph %s: %d nodes, %d edges", path, graph.n_nodes, graph.n_edges)
    return graph


def _poi_from_json(obj: dict) -> Poi:
    area = obj.get("area_m2")
    floors = obj.get("floors")
    return Poi(
        id=str(obj["id"]),
        node_id=int(obj["node_id"]),
        category=str(obj["category"]),
        area_m2=None if area is None else float(area),
        floors=None if floors is None else (int(floors) if float(floors) == int(floors) else float(floors)),
        hourly_visits=tuple(float(x) for x in obj["hourly_visits"]),
        dow_weights=tuple(float(x) for x in obj.get("dow_weights", [1.0] * 7)),
        dom_weights=tuple(float(x) for x in obj.get("dom_weights", [1.0] * 31)),
        dwell_bucket_probs=tuple(float(x) for x in obj["dwell_bucket_probs"]),
    )


def load_pois(path, graph: StreetGraph | None = None, radius: float = 500.0) -> list[Poi]:
    pois: list[Poi] = []
    seen = set()
    for lineno, line in _lines(path):
        try:
            obj = json.loads(line)
            poi = _poi_from_json(obj)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad POI record: {exc}", path, lineno) from None
        try:
            _check_poi(poi)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if poi.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate POI id {poi.id}")
        if graph is not None and poi.node_id not in graph.index:
            raise ValidationError(f"{path}:{lineno}: POI {poi.id} references unknown node {poi.node_id}")
        seen.add(poi.id)
        pois.append(normalize_dwell(poi))
    if any(not p.has_geometry for p in pois):
        if graph is None:
            raise ConfigError("POIs without geometry need a street graph for estimation")
        pois = fill_missing_geometry(pois, graph, radius)
    return pois


def fill_missing_geometry(pois: list[Poi], graph: StreetGraph, radius: float = 500.0) -> list[Poi]:
    known = [p for p in pois if p.has_geometry]
    out = []
    for p in pois:
        if p.has_geometry:
            out.append(p)
            continue
        area, floors = estimate_building_geometry(p, known, radius, graph)
        out.append(Poi(p.id, p.node_id, p.category, area, floors, p.hourly_visits,
                       p.dow_weights, p.dom_weights, p.dwell_bucket_probs))
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def estimate_building_geometry(poi: Poi, neighbors: Sequence[Poi], radius: float,
                               graph: StreetGraph, global_mean: tuple[float, float] | None = None
                               ) -> tuple[float, int]:
    """Mean area and rounded mean floors of known buildings within ``radius``.

    Falls back to ``global_mean`` (or the mean over all ``neighbors``) when no
    known building lies within the radius.
    """
    known = [n for n in neighbors if n.has_geometry]
    if not known and global_mean is None:
        raise ConfigError(f"cannot estimate geometry for POI {poi.id}: no POI has known geometry")
    here = graph.xy[graph.index[poi.node_id]]
    near = [n for n in known
            if math.dist(here, graph.xy[graph.index[n.node_id]]) <= radius]
    if near:
        area = sum(n.area_m2 for n in near) / len(near)
        floors = sum(n.floors for n in near) / len(near)
    elif global_mean is not None:
        area, floors = global_mean
    else:
        area = sum(n.area_m2 for n in known) / len(known)
        floors = sum(n.floors for n in known) / len(known)
    return float(area), max(1, _round_half_up(floors))


def _cbg_from_json(obj: dict) -> CbgPolygon:
    ages = obj["age_distribution"]
    if isinstance(ages, dict):
        ages = [ages[k] for k in AGE_BUCKETS]
    return CbgPolygon(
        id=str(obj["id"]),
        polygon=tuple((float(x), float(y)) for x, y in obj["polygon"]),
        population=int(obj["population"]),
        age_distribution=tuple(float(a) for a in ages),
        household_size_probs=tuple(float(h) for h in obj["household_size_probs"]),
        daytime_cbg_probs={str(k): float(v) for k, v in obj.get("daytime_cbg_probs", {}).items()},
    )


def load_cbgs(path) -> list[CbgPolygon]:
    cbgs: list[CbgPolygon] = []
    for lineno, line in _lines(path):
        try:
            cbg = _cbg_from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad CBG record: {exc}", path, lineno) from None
        try:
            _check_cbg(cbg)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        cbgs.append(cbg)
    ids = {c.id for c in cbgs}
    if len(ids) != len(cbgs):
        raise ValidationError(f"{path}: duplicate CBG ids")
    for c in cbgs:
        for other in c.daytime_cbg_probs:
            if other not in ids:
                raise ValidationError(f"CBG {c.id}: daytime_cbg_probs references unknown CBG {other}")
    return cbgs


def load_patterns(path, pois: Iterable[Poi], cbgs: Iterable[CbgPolygon]) -> VisitPatterns:
    poi_ids = {p.id for p in pois}
    cbg_ids = {c.id for c in cbgs}
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0] == "cbg_id":
                continue
            if len(row) != 3:
                raise ParseError(f"expected cbg_id,poi_id,weekly_count, got {row}", path, lineno)
            cbg, poi, raw = row
            try:
                count = float(raw)
            except ValueError:
                raise ParseError(f"bad weekly_count {raw!r}", path, lineno) from None
            if not math.isfinite(count) or count < 0:
                raise ValidationError(f"{path}:{lineno}: weekly_count must be finite and >= 0")
            if cbg not in cbg_ids:
                raise ValidationError(f"{path}:{lineno}: unknown CBG {cbg}")
            if poi not in poi_ids:
                raise ValidationError(f"{path}:{lineno}: unknown POI {poi}")
            entries.append((cbg, poi, count))
    return VisitPatterns(entries)


def load_city(directory, radius: float = 500.0) -> City:
    d = Path(directory)
    for name in ("streets.txt", "pois.jsonl", "cbgs.jsonl", "patterns.csv"):
        if not (d / name).exists():
            raise ConfigError(f"city directory {d} lacks {name}")
    graph = load_street_graph(d / "streets.txt")
    pois = load_pois(d / "pois.jsonl", graph, radius)
    cbgs = load_cbgs(d / "cbgs.jsonl")
    patterns = load_patterns(d / "patterns.csv", pois, cbgs)
    return City(graph, pois, cbgs, patterns)


# --------------------------------------------------------------------------
# writers


def write_street_graph(graph: StreetGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# N <id> <x> <y> <kind> / E <u> <v> <length_m> <travel_time_s>\n")
        for i in range(graph.n_nodes):
            fh.write(f"N {int(graph.ids[i])} {float(graph.xy[i, 0])!r} {float(graph.xy[i, 1])!r} "
                     f"{NODE_KINDS[graph.kinds[i]]}\n")
        for e in graph.edges():
            fh.write(f"E {e.u} {e.v} {e.length!r} {e.travel_time!r}\n")


def poi_to_json(p: Poi) -> dict:
    return {
        "id": p.id, "node_id": p.node_id, "category": p.category, "area_m2": p.area_m2,
        "floors": p.floors, "hourly_visits": list(p.hourly_visits), "dow_weights": list(p.dow_weights),
        "dom_weights": list(p.dom_weights), "dwell_bucket_probs": list(p.dwell_bucket_probs),
    }


def write_pois(pois: Sequence[Poi], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pois:
            fh.write(json.dumps(poi_to_json(p)) + "\n")


def write_cbgs(cbgs: Sequence[CbgPolygon], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cbgs:
            fh.write(json.dumps({
                "id": c.id, "polygon": [list(v) for v in c.polygon], "population": c.population,
                "age_distribution": list(c.age_distribution),
                "household_size_probs": list(c.household_size_probs),
                "daytime_cbg_probs": dict(c.daytime_cbg_probs),
            }) + "\n")


def write_patterns(patterns: VisitPatterns, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cbg_id", "poi_id", "weekly_count"])
        for cbg, poi, n in patterns.entries:
            w.writerow([cbg, poi, repr(float(n))])


def write_city(city: City, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / k for k in ("streets.txt", "pois.jsonl", "cbgs.jsonl", "patterns.csv")}
    write_street_graph(city.graph, paths["streets.txt"])
    write_pois(city.pois, paths["pois.jsonl"])
    write_cbgs(city.cbgs, paths["cbgs.jsonl"])
    write_patterns(city.patterns, paths["patterns.csv"])
    return paths


# --------------------------------------------------------------------------
# synthetic city

DEFAULT_POI_COUNTS = {
    "grocery_retail": 8, "education": 6, "religious": 4, "food_service": 30,
    "accommodation": 5, "medical": 6, "office": 25, "other": 20,
}
DEFAULT_HOUSEHOLD_PROBS = (0.06, 0.13, 0.18, 0.27, 0.20, 0.16)
DEFAULT_AGE_SHARES = (0.22, 0.63, 0.15)

# median footprint m2, floors range, dwell bucket probabilities
_CATEGORY_TRAITS = {
    "grocery_retail": (1500.0, (1, 1), (0.15, 0.45, 0.30, 0.08, 0.02)),
    "education": (4000.0, (1, 3), (0.05, 0.10, 0.15, 0.40, 0.30)),
    "religious": (800.0, (1, 1), (0.05, 0.15, 0.35, 0.40, 0.05)),
    "food_service": (250.0, (1, 1), (0.15, 0.30, 0.40, 0.13, 0.02)),
    "accommodation": (2000.0, (3, 6), (0.10, 0.15, 0.20, 0.25, 0.30)),
    "medical": (1200.0, (1, 4), (0.10, 0.20, 0.40, 0.25, 0.05)),
    "office": (1500.0, (2, 8), (0.10, 0.15, 0.20, 0.30, 0.25)),
    "other": (400.0, (1, 2), (0.20, 0.35, 0.30, 0.12, 0.03)),
}


def _hour_profile(category: str) -> np.ndarray:
    h = np.arange(24, dtype=np.float64)

    def bump(mu, sigma):
        return np.exp(-0.5 * ((h - mu) / sigma) ** 2)

    if category == "food_service":
        prof = bump(12.5, 1.5) + 1.3 * bump(19.0, 1.8)
    elif category == "education":
        prof = bump(8.5, 1.0) + 0.3 * bump(13.0, 2.5)
    elif category == "religious":
        prof = bump(10.0, 1.5) + 0.5 * bump(18.5, 1.5)
    elif category == "office":
        prof = bump(9.0, 1.5) + 0.6 * bump(13.5, 2.5)
    elif category == "accommodation":
        prof = bump(17.0, 3.5) + 0.2
    else:
        prof = bump(11.0, 2.5) + bump(17.5, 2.0)
    prof[(h < 6) | (h >= 23)] = 0.0
    return prof / prof.sum()


def _dow_profile(category: str) -> np.ndarray:
    if category in ("education", "office"):
        return np.array([1.2, 1.2, 1.2, 1.2, 1.2, 0.3, 0.1])
    if category == "religious":
        return np.array([0.6, 0.6, 0.6, 0.6, 0.8, 1.2, 2.2])
    return np.array([0.9, 0.9, 0.9, 1.0, 1.1, 1.3, 1.0])


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights`` (index tie-break)."""
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.sum() <= 0:
        return np.zeros(len(weights), dtype=np.int64)
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    rem = total - int(base.sum())
    order = np.lexsort((np.arange(len(raw)), -(raw - base)))
    base[order[:rem]] += 1
    return base


def _split_range(n: int, parts: int) -> list[np.ndarray]:
    return [a for a in np.array_split(np.arange(n), parts)]


@dataclass
class SyntheticCityParams:
    grid_size: int = 20
    population: int = 50_000
    n_pois_by_category: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_POI_COUNTS))
    seed: int = 1
    spacing: float = 300.0
    cbg_blocks: tuple[int, int] | None = None
    river: bool = True
    traffic_factor: float = 1.0
    visits_per_capita_week: float = 3.0


def _auto_blocks(grid: int, population: int) -> tuple[int, int]:
    b = int(round(math.sqrt(max(population, 1) / 2000.0)))
    b = max(2, min(b, grid // 2))
    return b, b


def generate_synthetic_city(params: SyntheticCityParams) -> City:
    n = params.grid_size
    if n < 4:
        raise ConfigError(f"grid_size must be >= 4, got {n}")
    if params.population < 100:
        raise ConfigError(f"population must be >= 100, got {params.population}")
    for cat, cnt in params.n_pois_by_category.items():
        if cat not in CATEGORIES or cnt < 0:
            raise ConfigError(f"bad POI count {cat}={cnt}")
    bx, by = params.cbg_blocks or _auto_blocks(n, params.population)
    if bx > n or by > n or bx < 1 or by < 1:
        raise ConfigError(f"infeasible CBG blocks {bx}x{by} for a {n}x{n} grid")
    rng = np.random.default_rng(params.seed)
    s = params.spacing

    mid = n // 2
    river_row = int(n * 0.6) if params.river and n >= 6 else None
    nodes = []
    for r in range(n):
        for c in range(n):
            if r in (0, n - 1) or c in (0, n - 1) or r == mid:
                kind = "arterial"
            elif c == mid:
                kind = "highway"
            else:
                kind = "residential"
            nodes.append(StreetNode(r * n + c, (c * s, r * s), kind))

    def edge_kind(a: StreetNode, b: StreetNode) -> str:
        return a.kind if a.kind == b.kind else "residential"

    edges = []
    for r in range(n):
        for c in range(n):
            a = nodes[r * n + c]
            if c + 1 < n:
                b = nodes[r * n + c + 1]
                edges.append(StreetEdge(a.id, b.id, s, edge_travel_time(s, edge_kind(a, b), params.traffic_factor)))
            if r + 1 < n:
                if river_row is not None and r == river_row and c not in (0, mid, n - 1):
                    continue
                b = nodes[(r + 1) * n + c]
                edges.append(StreetEdge(a.id, b.id, s, edge_travel_time(s, edge_kind(a, b), params.traffic_factor)))
    graph = StreetGraph(nodes, edges)
    graph.validate()
    tt = graph.all_pairs()

    # CBG blocks
    cols = _split_range(n, bx)
    rows = _split_range(n, by)
    block_nodes = []
    polys = []
    for j, rr in enumerate(rows):
        for i, cc in enumerate(cols):
            idx = np.array([r * n + c for r in rr for c in cc], dtype=np.int64)
            block_nodes.append(idx)
            x0, x1 = cc[0] * s - s / 2, cc[-1] * s + s / 2
            y0, y1 = rr[0] * s - s / 2, rr[-1] * s + s / 2
            polys.append(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))
    n_cbg = len(block_nodes)
    cbg_ids = [f"35049{j:07d}" for j in range(n_cbg)]
    resid = np.array([(graph.kinds[b] == 0).sum() for b in block_nodes], dtype=np.float64)
    if resid.sum() == 0:
        resid = np.array([len(b) for b in block_nodes], dtype=np.float64)
    pops = _largest_remainder(resid, params.population)

    # POIs
    placeable = np.flatnonzero(graph.kinds != NODE_KINDS.index("highway"))
    pois_raw = []
    k = 0
    for cat in CATEGORIES:
        median, (fmin, fmax), dwell = _CATEGORY_TRAITS[cat]
        for _ in range(params.n_pois_by_category.get(cat, 0)):
            node = int(placeable[rng.integers(len(placeable))])
            area = float(median * math.exp(rng.normal(0.0, 0.5)))
            floors = int(rng.integers(fmin, fmax + 1))
            attract = float(math.sqrt(area * floors) * math.exp(rng.normal(0.0, 0.4)))
            dom = 1.0 + 0.1 * rng.standard_normal(31)
            pois_raw.append((f"poi_{k:04d}", node, cat, area, floors, attract, dwell, np.clip(dom, 0.5, 1.5)))
            k += 1

    # daytime (workplace) distribution: jobs follow office/medical/education POIs
    node_cbg = np.empty(graph.n_nodes, dtype=np.int64)
    for j, b in enumerate(block_nodes):
        node_cbg[b] = j
    jobs = np.ones(n_cbg)
    for _, node, cat, *_ in pois_raw:
        if cat in ("office", "medical", "education", "accommodation"):
            jobs[node_cbg[node]] += 4.0
    centroid_nodes = np.array([
        int(b[np.argmin(np.hypot(*(graph.xy[b] - graph.xy[b].mean(axis=0)).T))]) for b in block_nodes
    ])
    cbg_tt_min = tt[np.ix_(centroid_nodes, centroid_nodes)] / 60.0

    cbgs = []
    alpha = np.array(DEFAULT_AGE_SHARES) * 60.0
    for j in range(n_cbg):
        ages = rng.dirichlet(alpha)
        w = jobs / (1.0 + cbg_tt_min[j])
        w[j] += 0.15 * w.sum()
        w = w / w.sum()
        cbgs.append(CbgPolygon(
            id=cbg_ids[j], polygon=polys[j], population=int(pops[j]),
            age_distribution=tuple(float(a) for a in ages),
            household_size_probs=DEFAULT_HOUSEHOLD_PROBS,
            daytime_cbg_probs={cbg_ids[m]: float(w[m]) for m in range(n_cbg) if w[m] > 0},
        ))

    # gravity patterns
    if pois_raw:
        poi_nodes = np.array([p[1] for p in pois_raw], dtype=np.int64)
        attract = np.array([p[5] for p in pois_raw])
        tmin = tt[np.ix_(centroid_nodes, poi_nodes)] / 60.0
        raw = pops[:, None].astype(np.float64) * attract[None, :] / (1.0 + tmin) ** 2
        scale = params.population * params.visits_per_capita_week / raw.sum()
        counts = np.floor(raw * scale + 0.5)
        nearest = np.argmin(tmin, axis=0)
        for p in range(len(pois_raw)):
            if attract[p] > 0 and pops[nearest[p]] > 0:
                counts[nearest[p], p] = max(counts[nearest[p], p], 1.0)
    else:
        counts = np.zeros((n_cbg, 0))
    entries = [(cbg_ids[j], pois_raw[p][0], float(counts[j, p]))
               for j in range(n_cbg) for p in range(len(pois_raw)) if counts[j, p] > 0]
    weekly = counts.sum(axis=0)

    pois = []
    for p, (pid, node, cat, area, floors, _, dwell, dom) in enumerate(pois_raw):
        hours = _hour_profile(cat) * weekly[p] / 7.0
        pois.append(Poi(pid, int(graph.ids[node]), cat, area, floors,
                        tuple(float(x) for x in hours),
                        tuple(float(x) for x in _dow_profile(cat)),
                        tuple(float(x) for x in dom),
                        tuple(float(x) for x in dwell)))
    city = City(graph, pois, cbgs, VisitPatterns(entries))
    log.info("synthetic city: %d nodes, %d edges, %d POIs, %d CBGs, population %d",
             graph.n_nodes, graph.n_edges, len(pois), n_cbg, params.population)
    return city


def grid_graph(n: int, spacing: float = 1.0, edge_time: float = 1.0) -> StreetGraph:
    """Plain n x n 4-neighbour grid with uniform edge times."""
    nodes = [StreetNode(r * n + c, (c * spacing, r * spacing), "residential")
             for r in range(n) for c in range(n)]
    edges = []
    for r in range(n):
        for c in range(n):
            if c + 1 < n:
                edges.append(StreetEdge(r * n + c, r * n + c + 1, spacing, edge_time))
            if r + 1 < n:
                edges.append(StreetEdge(r * n + c, (r + 1) * n + c, spacing, edge_time))
    return StreetGraph(nodes, edges)
