"""Tessellations of the street network and their rasterized land area.

A tessellation assigns every street node (by node index) to exactly one cell.
Cells carry a mobility schedule and the fraction of each census block group
whose (rasterized) area they cover, which is how schedules are carried from
census geography onto any other partition.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .errors import ConfigError, ValidationError
from .geodata import AGE_BUCKETS, CbgPolygon, Poi, StreetGraph, VisitPatterns
from .schedule import Schedule, largest_remainder, merge_schedules, split_schedule

log = logging.getLogger(__name__)

KINDS = ("NT", "CBG", "VD_r", "VD_s", "VD_i", "KMEANS_r", "KMEANS_s", "KMEANS_i", "RMCBG", "CBGVD")
DEFAULT_RESOLUTION = 25.0
VD_R_CATEGORIES = ("grocery_retail", "education", "religious")


@dataclass
class Cell:
    id: int
    member_nodes: frozenset[int]
    schedule: Schedule = field(default_factory=Schedule)
    source_cbg_fractions: dict[str, float] = field(default_factory=dict)

    @property
    def demographic_share(self) -> dict[str, int]:
        return self.schedule.demographics


@dataclass
class Tessellation:
    kind: str
    cells: list[Cell]
    owner: np.ndarray  # node index -> cell index

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def ownership(self) -> dict[int, int]:
        return {i: int(c) for i, c in enumerate(self.owner)}

    def validate(self, n_nodes: int | None = None) -> None:
        n = len(self.owner) if n_nodes is None else n_nodes
        if len(self.owner) != n:
            raise ValidationError("ownership does not cover every node")
        seen = np.zeros(n, dtype=np.int64)
        for k, cell in enumerate(self.cells):
            if cell.id != k:
                raise ValidationError(f"cell ids must be 0..n-1, found {cell.id} at {k}")
            if not cell.member_nodes:
                raise ValidationError(f"cell {k} is empty")
            members = np.fromiter(cell.member_nodes, dtype=np.int64)
            seen[members] += 1
            if np.any(self.owner[members] != k):
                raise ValidationError(f"cell {k} membership disagrees with ownership")
        if np.any(seen != 1):
            raise ValidationError("cells overlap or leave nodes uncovered")

    def cbg_mass(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c in self.cells:
            for cbg, f in c.source_cbg_fractions.items():
                out[cbg] = out.get(cbg, 0.0) + f
        return out


def from_owner(kind: str, owner: np.ndarray) -> Tessellation:
    """Build cells from an ownership vector, renumbering labels densely in label order."""
    owner = np.asarray(owner, dtype=np.int64)
    labels, dense = np.unique(owner, return_inverse=True)
    order = np.argsort(dense, kind="stable")
    bounds = np.searchsorted(dense[order], np.arange(len(labels) + 1))
    cells = [Cell(k, frozenset(order[bounds[k]:bounds[k + 1]].tolist())) for k in range(len(labels))]
    return Tessellation(kind, cells, dense.astype(np.int64))


# --------------------------------------------------------------------------
# seeds and network Voronoi


@dataclass
class SeedSet:
    seeds: list[tuple[str, int]]  # (poi_id, node index)
    selection: str

    def __post_init__(self):
        kept, nodes = [], set()
        for poi, node in self.seeds:
            if node not in nodes:
                kept.append((poi, node))
                nodes.add(node)
        self.seeds = kept

    @property
    def nodes(self) -> np.ndarray:
        return np.array([n for _, n in self.seeds], dtype=np.int64)


def select_vd_seeds(pois: Sequence[Poi], mode: str, count_or_categories, graph: StreetGraph,
                    patterns: VisitPatterns | None = None) -> SeedSet:
    if mode == "by_category":
        cats = set(count_or_categories)
        picked = [(p.id, graph.index[p.node_id]) for p in pois if p.category in cats]
        if not picked:
            raise ConfigError(f"no POIs in categories {sorted(cats)}")
        return SeedSet(picked, mode)
    if mode == "by_visit_frequency":
        n = int(count_or_categories)
        if n < 1 or n > len(pois):
            raise ConfigError(f"requested {n} seeds but only {len(pois)} POIs exist")
        totals = patterns.poi_totals() if patterns is not None else {p.id: p.weekly_visits() for p in pois}
        ranked = sorted(pois, key=lambda p: (-totals.get(p.id, 0.0), p.id))
        picked, nodes = [], set()
        for p in ranked:
            node = graph.index[p.node_id]
            if node in nodes:
                continue
            picked.append((p.id, node))
            nodes.add(node)
            if len(picked) == n:
                return SeedSet(picked, mode)
        raise ConfigError(f"only {len(picked)} POIs on distinct nodes, {n} requested")
    raise ConfigError(f"unknown seed selection mode {mode!r}")


def _voronoi_traces(csr, seed_nodes: np.ndarray, offset: int) -> tuple[np.ndarray, np.ndarray]:
    dist = dijkstra(csr, directed=False, indices=seed_nodes)
    dist = np.atleast_2d(dist)
    best = np.argmin(dist, axis=0)
    return dist[best, np.arange(dist.shape[1])], best + offset


def merge_traces(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]):
    """Commutative min-merge of (time, seed index) traces."""
    da, ia = a
    db, ib = b
    take_b = (db < da) | ((db == da) & (ib < ia))
    return np.where(take_b, db, da), np.where(take_b, ib, ia)


def build_network_voronoi(graph: StreetGraph, seeds: SeedSet, workers: int = 1, kind: str = "VD_r"
                          ) -> Tessellation:
    """Assign each node to the seed with minimal travel time (lower seed index wins ties)."""
    nodes = seeds.nodes
    if len(nodes) == 0:
        raise ConfigError("empty seed set")
    csr = graph.csr()
    chunks = [c for c in np.array_split(np.arange(len(nodes)), max(1, min(workers, len(nodes)))) if len(c)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(lambda c: _voronoi_traces(csr, nodes[c], int(c[0])), chunks))
    else:
        traces = [_voronoi_traces(csr, nodes[c], int(c[0])) for c in chunks]
    best = traces[0]
    for t in traces[1:]:
        best = merge_traces(best, t)
    owner = best[1]
    if np.any(~np.isfinite(best[0])):
        raise ValidationError("some nodes are unreachable from every seed")
    cells = []
    for k in range(len(nodes)):
        members = np.flatnonzero(owner == k)
        cells.append(Cell(k, frozenset(members.tolist())))
    return Tessellation(kind, cells, owner.astype(np.int64))


# --------------------------------------------------------------------------
# Euclidean K-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    wcss: float
    history: list[float]


def _wcss(points, labels, centers) -> float:
    d = points - centers[labels]
    return float(np.einsum("ij,ij->", d, d))


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300) -> KMeansResult:
    points = np.asarray(points, dtype=np.float64)
    centers = _kmeanspp(points, k, rng)
    labels = np.full(len(points), -1)
    history = []
    for _ in range(max_iter):
        d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        while np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            largest = int(np.argmax(counts))
            members = np.flatnonzero(new == largest)
            mu = points[members].mean(axis=0)
            far = members[np.argmax(((points[members] - mu) ** 2).sum(axis=1))]
            new[far] = empty
            counts = np.bincount(new, minlength=k)
        for j in range(k):
            centers[j] = points[new == j].mean(axis=0)
        history.append(_wcss(points, new, centers))
        if np.array_equal(new, labels):
            break
        labels = new
    return KMeansResult(labels, centers, history[-1], history)


def build_kmeans(graph: StreetGraph, k: int, seed: int, restarts: int = 10, kind: str = "KMEANS_r"
                 ) -> Tessellation:
    pts = graph.xy
    distinct = len(np.unique(pts, axis=0))
    if not 1 <= k <= distinct:
        raise ConfigError(f"K={k} outside [1, {distinct}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = kmeans(pts, k, rng)
        if best is None or res.wcss < best.wcss:
            best = res
    # order cells by their smallest member node
    first = np.full(k, np.iinfo(np.int64).max)
    np.minimum.at(first, best.labels, np.arange(len(pts)))
    rank = np.empty(k, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(k)
    tess = from_owner(kind, rank[best.labels])
    tess.wcss = best.wcss
    return tess


# --------------------------------------------------------------------------
# census geography


def _points_in_polygons(xy: np.ndarray, cbgs: Sequence[CbgPolygon]) -> np.ndarray:
    """Index of the first polygon containing each point, -1 if none."""
    import shapely
    from shapely.geometry import Polygon

    out = np.full(len(xy), -1, dtype=np.int64)
    for j, c in enumerate(cbgs):
        poly = Polygon(c.polygon)
        inside = shapely.contains_xy(poly, xy[:, 0], xy[:, 1]) | shapely.intersects_xy(poly, xy[:, 0], xy[:, 1])
        out[(out < 0) & inside] = j
    return out


def node_cbg_index(graph: StreetGraph, cbgs: Sequence[CbgPolygon]) -> np.ndarray:
    """CBG index of every node; nodes outside all polygons go to the nearest polygon."""
    from shapely.geometry import Point, Polygon

    idx = _points_in_polygons(graph.xy, cbgs)
    if np.any(idx < 0):
        polys = [Polygon(c.polygon) for c in cbgs]
        for i in np.flatnonzero(idx < 0):
            p = Point(graph.xy[i])
            idx[i] = int(np.argmin([poly.distance(p) for poly in polys]))
    return idx


def cbg_demographics(cbg: CbgPolygon) -> dict[str, int]:
    counts = largest_remainder(cbg.population, list(cbg.age_distribution))
    return dict(zip(AGE_BUCKETS, counts))


def cbg_tessellation(graph: StreetGraph, cbgs: Sequence[CbgPolygon],
                     patterns: VisitPatterns | None = None) -> Tessellation:
    """One cell per CBG that contains street nodes; node-less CBGs fold into the cell nearest their centroid."""
    node_cbg = node_cbg_index(graph, cbgs)
    tess = from_owner("CBG", node_cbg)
    present = np.unique(node_cbg)
    cell_of_cbg = {int(c): k for k, c in enumerate(present)}
    for j, c in enumerate(cbgs):
        if j not in cell_of_cbg:
            cell_of_cbg[j] = int(tess.owner[graph.nearest_node(c.centroid())])
    rows = patterns.by_cbg() if patterns is not None else {}
    parts: dict[int, list[Schedule]] = {}
    for j, c in enumerate(cbgs):
        k = cell_of_cbg[j]
        tess.cells[k].source_cbg_fractions[c.id] = 1.0
        parts.setdefault(k, []).append(Schedule(dict(rows.get(c.id, {})), cbg_demographics(c)))
    for k, scheds in parts.items():
        tess.cells[k].schedule = merge_schedules(scheds)
    return tess


# --------------------------------------------------------------------------
# rasterization


@dataclass
class PixelMap:
    """Row-major grid of cell ids; pixel (row j, col i) covers
    [origin_x + i*res, origin_x + (i+1)*res) x [origin_y + j*res, origin_y + (j+1)*res)."""

    resolution: float
    origin: tuple[float, float]
    grid: np.ndarray
    conflicts: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def pixel_of(self, position) -> tuple[int, int]:
        i = int(math.floor((position[0] - self.origin[0]) / self.resolution))
        j = int(math.floor((position[1] - self.origin[1]) / self.resolution))
        return j, i

    def area_fractions(self, n_cells: int) -> np.ndarray:
        counts = np.bincount(self.grid.ravel(), minlength=n_cells).astype(np.float64)
        return counts / counts.sum()

    def to_text(self) -> str:
        h, w = self.grid.shape
        lines = [f"{w} {h} {float(self.resolution)!r} {float(self.origin[0])!r} {float(self.origin[1])!r}"]
        lines.extend(" ".join(str(int(v)) for v in row) for row in self.grid)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PixelMap":
        lines = text.strip().splitlines()
        w, h, res, ox, oy = lines[0].split()
        grid = np.array([[int(v) for v in ln.split()] for ln in lines[1:]], dtype=np.int64)
        if grid.shape != (int(h), int(w)):
            raise ValidationError(f"pixel map body is {grid.shape}, header says {(int(h), int(w))}")
        return cls(float(res), (float(ox), float(oy)), grid)


def map_bounds(graph: StreetGraph, cbgs: Sequence[CbgPolygon] = (), pad: float = 0.0):
    xs = [graph.xy[:, 0].min(), graph.xy[:, 0].max()]
    ys = [graph.xy[:, 1].min(), graph.xy[:, 1].max()]
    for c in cbgs:
        arr = np.asarray(c.polygon)
        xs += [arr[:, 0].min(), arr[:, 0].max()]
        ys += [arr[:, 1].min(), arr[:, 1].max()]
    return (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)


def _empty_grid(bounds, resolution):
    x0, y0, x1, y1 = bounds
    w = int(math.floor((x1 - x0) / resolution)) + 1
    h = int(math.floor((y1 - y0) / resolution)) + 1
    return (x0, y0), np.full((h, w), -1, dtype=np.int64)


def grow_pixels(grid: np.ndarray) -> np.ndarray:
    """Multi-source 4-neighbour growth into unallocated (-1) pixels; lower ids win ties."""
    grid = grid.copy()
    big = np.iinfo(np.int64).max
    if not np.any(grid >= 0):
        raise ValidationError("nothing stamped; cannot grow")
    while True:
        free = grid < 0
        if not free.any():
            return grid
        lab = np.where(free, big, grid)
        cand = np.full_like(grid, big)
        cand[1:, :] = np.minimum(cand[1:, :], lab[:-1, :])
        cand[:-1, :] = np.minimum(cand[:-1, :], lab[1:, :])
        cand[:, 1:] = np.minimum(cand[:, 1:], lab[:, :-1])
        cand[:, :-1] = np.minimum(cand[:, :-1], lab[:, 1:])
        claim = free & (cand < big)
        grid[claim] = cand[claim]


def rasterize(tess: Tessellation, graph: StreetGraph, resolution: float = DEFAULT_RESOLUTION,
              bounds=None) -> PixelMap:
    """Stamp node and street pixels with their cell ids, then grow cells over the remaining land."""
    if not resolution > 0:
        raise ConfigError("resolution must be positive")
    bounds = bounds or map_bounds(graph, pad=resolution)
    origin, grid = _empty_grid(bounds, resolution)
    h, w = grid.shape

    def flat(px, py):
        i = np.floor((px - origin[0]) / resolution).astype(np.int64)
        j = np.floor((py - origin[1]) / resolution).astype(np.int64)
        ok = (i >= 0) & (i < w) & (j >= 0) & (j < h)
        return j * w + i, ok

    conflicts = 0
    # node pixels first, in cell id order; first stamp wins
    f, ok = flat(graph.xy[:, 0], graph.xy[:, 1])
    order = np.lexsort((np.arange(len(f)), tess.owner))
    stamped: dict[int, int] = {}
    for n in order:
        if not ok[n]:
            continue
        key, c = int(f[n]), int(tess.owner[n])
        prev = stamped.get(key)
        if prev is None:
            stamped[key] = c
        elif prev != c:
            conflicts += 1
    flatgrid = grid.ravel()
    for key, c in stamped.items():
        flatgrid[key] = c
    # street samples claim only still-free pixels, again by cell id order
    if graph.n_edges:
        lengths = np.hypot(*(graph.xy[graph.edge_u] - graph.xy[graph.edge_v]).T)
        steps = np.maximum(2, np.ceil(lengths / (resolution / 2)).astype(np.int64) + 1)
        e_idx = np.repeat(np.arange(graph.n_edges), steps)
        t = np.concatenate([np.linspace(0, 1, s) for s in steps])
        pu, pv = graph.xy[graph.edge_u[e_idx]], graph.xy[graph.edge_v[e_idx]]
        pts = pu + (pv - pu) * t[:, None]
        cell = np.where(t < 0.5, tess.owner[graph.edge_u[e_idx]], tess.owner[graph.edge_v[e_idx]])
        ef, eok = flat(pts[:, 0], pts[:, 1])
        sel = eok & (flatgrid[np.where(eok, ef, 0)] < 0)
        ef, cell = ef[sel], cell[sel]
        order = np.lexsort((np.arange(len(ef)), cell))
        ef, cell = ef[order], cell[order]
        uniq, first = np.unique(ef, return_index=True)
        # count street pixels that two cells tried to claim
        seen_cells = np.unique(np.stack([ef, cell]), axis=1)
        conflicts += int(seen_cells.shape[1] - len(uniq))
        flatgrid[uniq] = cell[first]
    if conflicts:
        log.info("rasterize: %d pixel stamp conflicts at %.1f m/pixel", conflicts, resolution)
    return PixelMap(float(resolution), origin, grow_pixels(grid), conflicts)


def rasterize_polygons(cbgs: Sequence[CbgPolygon], bounds, resolution: float) -> PixelMap:
    """Pixel centres inside each polygon get its index; pixels outside all polygons stay -1."""
    import shapely
    from shapely.geometry import Polygon

    origin, grid = _empty_grid(bounds, resolution)
    h, w = grid.shape
    cx = origin[0] + (np.arange(w) + 0.5) * resolution
    cy = origin[1] + (np.arange(h) + 0.5) * resolution
    X, Y = np.meshgrid(cx, cy)
    for j, c in enumerate(cbgs):
        inside = shapely.contains_xy(Polygon(c.polygon), X, Y)
        grid[(grid < 0) & inside] = j
    return PixelMap(float(resolution), origin, grid)


def cell_of_location(pixel_map: PixelMap, position) -> int:
    j, i = pixel_map.pixel_of(position)
    h, w = pixel_map.grid.shape
    if not (0 <= i < w and 0 <= j < h):
        raise ValidationError(f"position {tuple(position)} outside the pixel map")
    return int(pixel_map.grid[j, i])


def _crosstab(a: np.ndarray, na: int, b: np.ndarray, nb: int) -> np.ndarray:
    sel = (a >= 0) & (b >= 0)
    return np.bincount(a[sel] * nb + b[sel], minlength=na * nb).reshape(na, nb).astype(np.float64)


def attach_cbg_fractions(tess: Tessellation, graph: StreetGraph, cbgs: Sequence[CbgPolygon],
                         resolution: float = DEFAULT_RESOLUTION) -> PixelMap:
    """Fill each cell's source_cbg_fractions from pixel overlap with CBG polygons.

    Returns the tessellation's pixel map. A CBG without pixels goes wholly to
    the cell owning the node nearest its centroid.
    """
    bounds = map_bounds(graph, cbgs, pad=resolution)
    pm = rasterize(tess, graph, resolution, bounds)
    cbg_pm = rasterize_polygons(cbgs, bounds, resolution)
    xt = _crosstab(cbg_pm.grid.ravel(), len(cbgs), pm.grid.ravel(), tess.n_cells)
    for c in tess.cells:
        c.source_cbg_fractions = {}
    for j, cbg in enumerate(cbgs):
        row = xt[j]
        tot = row.sum()
        if tot <= 0:
            k = int(tess.owner[graph.nearest_node(cbg.centroid())])
            tess.cells[k].source_cbg_fractions[cbg.id] = 1.0
            continue
        for k in np.flatnonzero(row):
            tess.cells[k].source_cbg_fractions[cbg.id] = float(row[k] / tot)
    return pm


# --------------------------------------------------------------------------
# merging and overlay


def _cell_adjacency(tess: Tessellation, graph: StreetGraph) -> list[set[int]]:
    adj = [set() for _ in tess.cells]
    a, b = tess.owner[graph.edge_u], tess.owner[graph.edge_v]
    for x, y in zip(a[a != b].tolist(), b[a != b].tolist()):
        adj[x].add(y)
        adj[y].add(x)
    return adj


def merge_random_cbgs(cbg_tess: Tessellation, target_count: int, seed: int, graph: StreetGraph
                      ) -> Tessellation:
    """Randomly merge adjacent cells until ``target_count`` remain."""
    n = cbg_tess.n_cells
    if target_count > n or target_count < 1:
        raise ConfigError(f"target {target_count} not reachable from {n} cells")
    rng = np.random.default_rng(seed)
    adj = _cell_adjacency(cbg_tess, graph)
    members = {c.id: set(c.member_nodes) for c in cbg_tess.cells}
    scheds = {c.id: c.schedule.copy() for c in cbg_tess.cells}
    fracs = {c.id: dict(c.source_cbg_fractions) for c in cbg_tess.cells}
    alive = set(range(n))
    while len(alive) > target_count:
        candidates = sorted(k for k in alive if adj[k])
        if not candidates:
            raise ValidationError(f"no adjacent cells left to merge at {len(alive)} cells")
        a = candidates[int(rng.integers(len(candidates)))]
        nbrs = sorted(adj[a])
        b = nbrs[int(rng.integers(len(nbrs)))]
        keep, drop = min(a, b), max(a, b)
        members[keep] |= members.pop(drop)
        scheds[keep] = merge_schedules([scheds[keep], scheds.pop(drop)])
        merged = fracs[keep]
        for cbg, f in fracs.pop(drop).items():
            merged[cbg] = merged.get(cbg, 0.0) + f
        for x in adj[drop]:
            adj[x].discard(drop)
            if x != keep:
                adj[x].add(keep)
                adj[keep].add(x)
        adj[keep].discard(drop)
        adj[keep].discard(keep)
        adj[drop] = set()
        alive.discard(drop)
    owner = np.empty_like(cbg_tess.owner)
    cells = []
    for new_id, old in enumerate(sorted(alive)):
        owner[list(members[old])] = new_id
        cells.append(Cell(new_id, frozenset(members[old]), scheds[old], fracs[old]))
    return Tessellation("RMCBG", cells, owner)


def overlay_cbg_vd(cbg_tess: Tessellation, vd_tess: Tessellation, graph: StreetGraph,
                   cbgs: Sequence[CbgPolygon], resolution: float = DEFAULT_RESOLUTION) -> Tessellation:
    """Intersect CBG cells with VD cells; each piece inherits an area share of its parent CBG cell."""
    if len(cbg_tess.owner) != len(vd_tess.owner):
        raise ValidationError("tessellations cover different node sets")
    pairs = np.unique(np.stack([cbg_tess.owner, vd_tess.owner], axis=1), axis=0)
    pair_id = {(int(a), int(b)): k for k, (a, b) in enumerate(pairs)}
    owner = np.array([pair_id[(int(a), int(b))] for a, b in zip(cbg_tess.owner, vd_tess.owner)], dtype=np.int64)

    bounds = map_bounds(graph, cbgs, pad=resolution)
    vd_pm = rasterize(vd_tess, graph, resolution, bounds)
    cbg_index = {c.id: j for j, c in enumerate(cbgs)}
    cbg_pm = rasterize_polygons(cbgs, bounds, resolution)
    # parent CBG cell of every pixel via its source polygon
    poly_to_cell = np.full(len(cbgs), -1, dtype=np.int64)
    for cell in cbg_tess.cells:
        for cbg_id in cell.source_cbg_fractions:
            poly_to_cell[cbg_index[cbg_id]] = cell.id
    pix_cell = np.where(cbg_pm.grid >= 0, poly_to_cell[np.maximum(cbg_pm.grid, 0)], -1)
    xt = _crosstab(pix_cell.ravel(), cbg_tess.n_cells, vd_pm.grid.ravel(), vd_tess.n_cells)

    cells: list[Cell | None] = [None] * len(pairs)
    for parent in cbg_tess.cells:
        kids = [k for k, (a, _) in enumerate(pairs) if a == parent.id]
        weights = np.array([xt[parent.id, pairs[k][1]] for k in kids], dtype=np.float64)
        if weights.sum() <= 0:
            weights = np.array([np.sum(owner == k) for k in kids], dtype=np.float64)
        shares = weights / weights.sum()
        shares[-1] = max(0.0, 1.0 - math.fsum(shares[:-1]))
        children = split_schedule(parent.schedule, shares)
        for k, share, sched in zip(kids, shares, children):
            fr = {cbg: f * share for cbg, f in parent.source_cbg_fractions.items() if f * share > 0}
            cells[k] = Cell(k, frozenset(np.flatnonzero(owner == k).tolist()), sched, fr)
    return Tessellation("CBGVD", cells, owner)


def nt_tessellation(graph: StreetGraph) -> Tessellation:
    """No tessellation: every street node is its own cell."""
    owner = np.arange(graph.n_nodes, dtype=np.int64)
    return Tessellation("NT", [Cell(k, frozenset([k])) for k in range(graph.n_nodes)], owner)


def tessellation_to_jsonl(tess: Tessellation, graph: StreetGraph) -> str:
    import json

    lines = []
    for c in tess.cells:
        lines.append(json.dumps({
            "id": c.id, "kind": tess.kind,
            "member_nodes": sorted(int(graph.ids[n]) for n in c.member_nodes),
            "schedule": c.schedule.entries,
            "demographic_share": c.schedule.demographics,
            "source_cbg_fractions": c.source_cbg_fractions,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def tessellation_from_jsonl(text: str, graph: StreetGraph) -> Tessellation:
    import json

    cells, kind = [], None
    owner = np.full(graph.n_nodes, -1, dtype=np.int64)
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj["kind"]
        members = frozenset(graph.index[n] for n in obj["member_nodes"])
        owner[list(members)] = obj["id"]
        cells.append(Cell(obj["id"], members, Schedule(obj["schedule"], obj["demographic_share"]),
                          obj["source_cbg_fractions"]))
    tess = Tessellation(kind, cells, owner)
    tess.validate()
    return tess


# --------------------------------------------------------------------------
# dispatcher


@dataclass
class TessellationBundle:
    """A tessellation plus the census references every downstream step needs."""

    tess: Tessellation
    node_cbg: np.ndarray
    cbg_tess: Tessellation
    pixel_map: PixelMap | None = None


def make_tessellation(kind: str, city, seed: int = 0, workers: int = 1,
                      resolution: float = DEFAULT_RESOLUTION, restarts: int = 10,
                      nt_exponent: float = 2.0) -> TessellationBundle:
    """Build any tessellation kind for ``city`` with schedules attached.

    Reduced kinds take their cell count from VD_r, same-size kinds from the
    CBG count, and increased kinds from the CBG/VD_r overlay.
    """
    from .mobility import build_cell_schedules, build_nt_schedules, cbg_frequency_matrix, \
        travel_minutes_to_pois
    from .population import placement_weights

    if kind not in KINDS:
        raise ConfigError(f"unknown tessellation kind {kind!r}; expected one of {', '.join(KINDS)}")
    g = city.graph
    node_cbg = node_cbg_index(g, city.cbgs)
    cbg_tess = cbg_tessellation(g, city.cbgs, city.patterns)
    if kind == "CBG":
        # the CBG cell is the census unit itself, so its fractions stay whole
        pm = rasterize(cbg_tess, g, resolution, map_bounds(g, city.cbgs, resolution))
        return TessellationBundle(cbg_tess, node_cbg, cbg_tess, pm)
    if kind == "NT":
        tess = nt_tessellation(g)
        freq = cbg_frequency_matrix(city)
        tt = travel_minutes_to_pois(g, city.pois)
        rows = build_nt_schedules(freq, node_cbg, tt, placement_weights(g), nt_exponent)
        for cell in tess.cells:
            n = next(iter(cell.member_nodes))
            cell.schedule = Schedule({p.id: float(rows[n, i]) for i, p in enumerate(city.pois) if rows[n, i] > 0})
            cell.source_cbg_fractions = {}
        return TessellationBundle(tess, node_cbg, cbg_tess, None)

    vd_r_seeds = select_vd_seeds(city.pois, "by_category", VD_R_CATEGORIES, g)
    n_r = len(vd_r_seeds.seeds)
    n_s = cbg_tess.n_cells
    if kind in ("CBGVD", "VD_i", "KMEANS_i"):
        vd_r = build_network_voronoi(g, vd_r_seeds, workers, "VD_r")
        overlay = overlay_cbg_vd(cbg_tess, vd_r, g, city.cbgs, resolution)
        if kind == "CBGVD":
            return TessellationBundle(overlay, node_cbg, cbg_tess,
                                      rasterize(overlay, g, resolution, map_bounds(g, city.cbgs, resolution)))
        n_i = overlay.n_cells
    if kind == "RMCBG":
        if n_r > n_s:
            raise ConfigError(f"RMCBG target {n_r} exceeds the {n_s} CBG cells")
        tess = merge_random_cbgs(cbg_tess, n_r, seed, g)
        return TessellationBundle(tess, node_cbg, cbg_tess, None)
    if kind == "VD_r":
        tess = build_network_voronoi(g, vd_r_seeds, workers, kind)
    elif kind == "VD_s":
        tess = build_network_voronoi(g, select_vd_seeds(city.pois, "by_visit_frequency", n_s, g,
                                                        city.patterns), workers, kind)
    elif kind == "VD_i":
        tess = build_network_voronoi(g, select_vd_seeds(city.pois, "by_visit_frequency", n_i, g,
                                                        city.patterns), workers, kind)
    else:
        k = {"KMEANS_r": n_r, "KMEANS_s": n_s, "KMEANS_i": n_i if kind == "KMEANS_i" else 0}[kind]
        tess = build_kmeans(g, k, seed, restarts, kind)
    pm = attach_cbg_fractions(tess, g, city.cbgs, resolution)
    build_cell_schedules(city.patterns, tess, city.cbgs)
    return TessellationBundle(tess, node_cbg, cbg_tess, pm)
