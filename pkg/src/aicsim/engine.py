"""Simulation driver: day planning, hourly synchronization, minute exposure, daily rollover.

Within a day every medical state is frozen (infections take effect at the
rollover), so a day is planned up front: tasks, trips, visits, and the
per-minute occupancy of every POI. The clock then walks the day hour by hour.
Each hour starts with a synchronization step (groups, seats, household /
work / transport transmission) and continues with the minute-level POI
exposure for that hour. ``minute_tick`` advances exposure by a single minute
and produces the same infections as the hourly block it subdivides.

Every random draw is keyed by entity ids and the clock (see ``rng``), so the
event log is identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import resource
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import rng as rs
from .epidemic import (ASYM, CONTAGIOUS, DEAD, INC, SYM, S, EpiConfig, StatusTable, contamination_series,
                       daily_update, group_escape_probability, infect, surface_probability)
from .errors import ConfigError, InvariantViolation, ParseError
from .geodata import AGE_BUCKETS, City, SyntheticCityParams, generate_synthetic_city, load_city
from .mobility import (MINUTES_PER_DAY, DestinationSampler, MobilityConfig, dwell_tables, load_needs,
                       sample_dwell_minutes, travel_minutes_to_pois, trip_probability, trip_profiles)
from .population import (Policy, SuperAgents, assign_daily_tasks_vec, assign_transport_seats,
                         assign_work_groups, coarse_grain, load_action_specs, load_task_templates,
                         sample_agents, synthesize_population)
from .schedule import schedule_vector
from .tessellation import TessellationBundle, make_tessellation

log = logging.getLogger(__name__)

# event kinds
ARRIVE, DEPART, INFECTION, STATE_CHANGE, TRIP_DECISION, EXTERNAL_ARRIVAL = range(6)
KIND_NAMES = ("arrive_poi", "depart_poi", "infection", "state_change", "trip_decision", "external_arrival")
_RANK = np.array([2, 1, 3, 4, 0, 2], dtype=np.int64)  # ordering within a minute
EVENT_DTYPE = np.dtype([("minute", "<u4"), ("kind", "u1"), ("subject", "<u8"), ("place", "<u8"),
                        ("payload", "<u8")])
NO_POI = 0xFFFFFFFF
VISITOR_BASE = 1 << 40
# infection places other than POIs are tagged in the high bits
PLACE_HOME, PLACE_WORK, PLACE_TRANSPORT = 1 << 32, 2 << 32, 3 << 32
ROUTE_AIR, ROUTE_SURFACE, ROUTE_HOME, ROUTE_WORK, ROUTE_TRANSPORT = range(5)
FREE_HOURS = (6, 22)
LEISURE = ("food_service", "other", "accommodation", "religious")


# --------------------------------------------------------------------------
# configuration


@dataclass
class ScenarioConfig:
    city_dir: str | None = None
    synthetic: dict | None = None
    tessellation: str = "CBG"
    tessellation_seed: int = 1
    resolution: float = 25.0
    kmeans_restarts: int = 10
    fraction: float = 1.0
    super_agents: bool = True
    days: int = 7
    seed: int = 0
    population_seed: int = 1
    workers: int = 1
    lockdown: list = field(default_factory=list)
    seeding_file: str | None = None
    arrivals_file: str | None = None
    epi_config: str | None = None
    mobility_config: str | None = None
    needs_file: str | None = None
    tasks_file: str | None = None
    actions_file: str | None = None
    public_seats: int = 3000
    base_dir: str | None = None

    def __post_init__(self):
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.public_seats < 0:
            raise ConfigError("public_seats must be >= 0")
        if self.city_dir is None and self.synthetic is None:
            self.synthetic = {}

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() or self.base_dir is None else Path(self.base_dir) / q

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"scenario file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ParseError(str(e), path, e.lineno) from None
        unknown = set(obj) - set(asdict(cls()))
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        obj.setdefault("base_dir", str(path.parent))
        return cls(**obj)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def load_seeding(path) -> list[tuple[int, str, int]]:
    """Rows ``day,cell_id,count``; cell_id is a cell index, a CBG id, or ``*`` for the whole city."""
    return _read_rows(path, ("day", "cell_id", "count"), lambda r: (int(r[0]), r[1].strip(), int(r[2])))


def load_arrivals(path) -> dict[int, tuple[int, float]]:
    rows = _read_rows(path, ("day", "count", "p_infected"), lambda r: (int(r[0]), int(r[1]), float(r[2])))
    out = {}
    for day, n, p in rows:
        if n < 0 or not 0.0 <= p <= 1.0:
            raise ConfigError(f"{path}: arrivals need count >= 0 and p_infected in [0, 1] (day {day})")
        out[day] = (n, p)
    return out


def _read_rows(path, header, conv):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file {path} not found")
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#") or tuple(c.strip() for c in row) == header:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {','.join(header)}", path, lineno)
            try:
                rows.append(conv(row))
            except ValueError as e:
                raise ParseError(str(e), path, lineno) from None
    return rows


# --------------------------------------------------------------------------
# event log


class EventLog:
    """Append-only event buffer; records are sorted per day when a day is sealed."""

    def __init__(self):
        self._open: list[np.ndarray] = []
        self._sealed: list[np.ndarray] = []

    def append(self, minute, kind, subject, place, payload) -> None:
        n = max(np.size(x) for x in (minute, subject, place, payload))
        if any(np.size(x) == 0 for x in (minute, subject, place, payload)):
            return
        rec = np.empty(n, dtype=EVENT_DTYPE)
        rec["minute"] = np.broadcast_to(np.asarray(minute, dtype=np.uint32), (n,))
        rec["kind"] = kind
        rec["subject"] = np.broadcast_to(np.asarray(subject, dtype=np.uint64), (n,))
        rec["place"] = np.broadcast_to(np.asarray(place, dtype=np.uint64), (n,))
        rec["payload"] = np.broadcast_to(np.asarray(payload, dtype=np.uint64), (n,))
        self._open.append(rec)

    def seal(self) -> None:
        if not self._open:
            return
        day = np.concatenate(self._open)
        self._open = []
        order = np.lexsort((day["payload"], day["place"], day["subject"], _RANK[day["kind"]], day["minute"]))
        self._sealed.append(day[order])

    @property
    def records(self) -> np.ndarray:
        self.seal()
        if not self._sealed:
            return np.zeros(0, dtype=EVENT_DTYPE)
        if len(self._sealed) > 1:
            self._sealed = [np.concatenate(self._sealed)]
        return self._sealed[0]

    def to_bytes(self) -> bytes:
        return self.records.tobytes()


def read_events(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype=EVENT_DTYPE)


def visit_payload(cbg_index, k) -> np.ndarray:
    return (np.asarray(cbg_index, dtype=np.uint64) << np.uint64(32)) | np.asarray(k, dtype=np.uint64)


def unpack_visit_payload(payload) -> tuple[np.ndarray, np.ndarray]:
    payload = np.asarray(payload, dtype=np.uint64)
    return (payload >> np.uint64(32)).astype(np.int64), (payload & np.uint64(0xFFFFFFFF)).astype(np.int64)


# --------------------------------------------------------------------------
# world


def _parallel(fn: Callable, chunks: Sequence, workers: int) -> list:
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def _chunks(n: int, workers: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), max(1, workers)) if len(c)]


@dataclass
class DayPlan:
    day: int
    # SA-level
    k_active: np.ndarray
    work: np.ndarray
    work_start: np.ndarray
    work_end: np.ndarray
    # visits (SA visits first, then transient visitors)
    v_sa: np.ndarray       # SA index, -1 for visitors
    v_subject: np.ndarray  # SA id or visitor id
    v_poi: np.ndarray
    v_arrive: np.ndarray
    v_depart: np.ndarray
    v_k: np.ndarray
    v_travel: np.ndarray   # one-way travel minutes
    # away-from-home intervals per SA: [start, end)
    away_sa: np.ndarray
    away_start: np.ndarray
    away_end: np.ndarray
    # travel legs (for transport seats): SA index, departure minute, minutes
    leg_sa: np.ndarray
    leg_minute: np.ndarray
    leg_minutes: np.ndarray
    # status-visit exposure table
    sv_slot: np.ndarray = None
    sv_visit: np.ndarray = None
    sv_threshold: np.ndarray = None
    sv_acc: np.ndarray = None
    hazard_cum: np.ndarray = None  # (poi, age, mask, minute+1)
    contamination: np.ndarray = None  # (poi, minute) level after each minute
    surface_hits: dict = None  # slot-visit -> earliest surface infection minute
    infections: list = field(default_factory=list)


class World:
    def __init__(self, scenario: ScenarioConfig, city: City | None = None,
                 bundle: TessellationBundle | None = None, population=None, sas: SuperAgents | None = None):
        self.sc = scenario
        self.seed = scenario.seed
        self.city = city if city is not None else self._load_city()
        g = self.city.graph
        self.epi = EpiConfig.load(scenario.path(scenario.epi_config))
        self.mob = MobilityConfig.from_json(scenario.path(scenario.mobility_config))
        self.needs = load_needs(scenario.path(scenario.needs_file))
        self.templates = load_task_templates(scenario.path(scenario.tasks_file))
        self.actions = load_action_specs(scenario.path(scenario.actions_file))
        self.policy = Policy([tuple(w) for w in scenario.lockdown])
        self.seeding = load_seeding(scenario.path(scenario.seeding_file)) if scenario.seeding_file else []
        self.arrivals = load_arrivals(scenario.path(scenario.arrivals_file)) if scenario.arrivals_file else {}

        self.bundle = bundle or make_tessellation(scenario.tessellation, self.city, scenario.tessellation_seed,
                                                  scenario.workers, scenario.resolution, scenario.kmeans_restarts,
                                                  self.mob.nt_kernel_exponent)
        tess = self.bundle.tess
        self.pop = population or synthesize_population(self.city.cbgs, g, scenario.population_seed,
                                                       self.bundle.node_cbg, self.city.pois)
        if sas is None:
            build = coarse_grain if scenario.super_agents else sample_agents
            sas = build(self.pop, scenario.fraction, scenario.population_seed, tess.owner)
        self.sas = sas
        self.scale = 1.0 if scenario.super_agents else scenario.fraction

        # statuses: one slot per represented agent, ordered by SA
        self.slot_sa = sas.status_owner
        self.status = StatusTable(sas.status_ids.copy())
        self.slot_age = self.pop.age_bucket[sas.status_ids]
        self.slot_household = self.pop.household[sas.status_ids]
        self.sp = np.full(len(self.slot_sa), self.epi.epi.base_self_protection)
        self.n_status = len(self.slot_sa)

        # POIs
        pois = self.city.pois
        self.n_poi = len(pois)
        self.poi_node = np.array([g.index[p.node_id] for p in pois], dtype=np.int64)
        self.poi_cbg = self.bundle.node_cbg[self.poi_node]
        self.dwell_cum = dwell_tables(pois)
        hourly = np.array([p.hourly_visits for p in pois])
        area = np.array([p.area_m2 for p in pois])
        floors = np.array([p.floors for p in pois], dtype=np.float64)
        from .epidemic import density, pair_distance
        d = pair_distance(density(hourly, area[:, None], floors[:, None]), self.epi.contact.d_max)
        pc = np.stack([self.epi.contact.pc(d, False), self.epi.contact.pc(d, True)], axis=-1)  # (poi, 24, 2)
        active = self.epi.contact.active(np.arange(24)).astype(np.float64)
        self.neglog_pc = -np.log(pc) * active[None, :, None]
        self.rate = self.epi.contact.rate_matrix()
        self.visit_weights = hourly.ravel() / hourly.sum() if hourly.sum() > 0 else None
        self.contamination = np.zeros(self.n_poi)

        # schedules per node and travel times
        freq = np.array([schedule_vector(c.schedule, self.city.poi_index(), self.n_poi) for c in tess.cells])
        node_freq = freq[tess.owner]
        self.tt_poi = travel_minutes_to_pois(g, pois)
        self.tt_poi_int = np.rint(self.tt_poi).astype(np.int64)
        self.profiles = trip_profiles(node_freq, pois)
        self.sampler = DestinationSampler(node_freq, self.tt_poi, pois, self.needs, self.mob)
        leisure = np.isin([p.category for p in pois], LEISURE)
        lf = np.where(leisure[None, :], node_freq, -1.0)
        self.venue = np.where(lf.max(axis=1) > 0, np.argmax(lf, axis=1), -1)
        tt_all = g.all_pairs() / 60.0
        wn = np.where(sas.work_node >= 0, sas.work_node, sas.home_node)
        self.commute = np.rint(tt_all[sas.home_node, wn]).astype(np.int64)
        self.sa_cbg = sas.home_cbg

        self.log = EventLog()
        self.series: list[tuple[int, float, float]] = []
        self.state_counts: list[np.ndarray] = []
        self.day = 0
        self.plan: DayPlan | None = None
        self.work_flag = np.zeros(self.n_status, dtype=bool)  # shared a work group with a symptomatic status

    def _load_city(self) -> City:
        if self.sc.city_dir:
            return load_city(self.sc.path(self.sc.city_dir))
        return generate_synthetic_city(SyntheticCityParams(**self.sc.synthetic))

    # ---------------------------------------------------------------- helpers

    def u(self, stream: int, *keys) -> np.ndarray:
        return rs.uniforms(self.seed, stream, *keys)

    def active_slots(self) -> np.ndarray:
        return ~self.status.withdrawn

    def contagious(self) -> np.ndarray:
        st = self.status.state
        return (st == SYM) | (st == ASYM)


# --------------------------------------------------------------------------
# seeding and visitors


def apply_seeding(world: World, day: int) -> None:
    rows = [r for r in world.seeding if r[0] == day]
    if not rows:
        return
    sas = world.sas
    cell_of_slot = sas.home_cell[world.slot_sa]
    cbg_of_slot = sas.home_cbg[world.slot_sa]
    cbg_pos = {c.id: j for j, c in enumerate(world.city.cbgs)}
    chosen = []
    for _, cell, count in rows:
        if cell == "*":
            scope = np.ones(world.n_status, dtype=bool)
        elif cell in cbg_pos:
            scope = cbg_of_slot == cbg_pos[cell]
        else:
            try:
                scope = cell_of_slot == int(cell)
            except ValueError:
                raise ConfigError(f"seeding cell {cell!r} is neither a cell index nor a CBG id") from None
        n = int(round(count * world.scale))
        cand = np.flatnonzero(scope & (world.status.state == S))
        if chosen:
            cand = np.setdiff1d(cand, np.concatenate(chosen))
        if n <= 0 or cand.size == 0:
            continue
        key = rs.hash64(world.seed, rs.SEEDING, world.status.ids[cand])
        chosen.append(cand[np.lexsort((world.status.ids[cand], key))[:n]])
    if not chosen:
        return
    idx = np.sort(np.concatenate(chosen))
    tr = infect(world.status, idx, day, world.epi.epi)
    world.log.append(day * MINUTES_PER_DAY, STATE_CHANGE, world.status.ids[tr.index], world.sas.ids[world.slot_sa[tr.index]],
                     (tr.old.astype(np.uint64) << np.uint64(8)) | tr.new.astype(np.uint64))


def inject_external_arrivals(world: World, day: int) -> dict[str, np.ndarray]:
    """Transient k = 1 visitors for ``day`` at POIs weighted by hourly visits."""
    n, p_inf = world.arrivals.get(day, (0, 0.0))
    n = int(round(n * world.scale))
    empty = {k: np.zeros(0, dtype=np.int64) for k in ("subject", "poi", "arrive", "depart", "infected")}
    if n <= 0 or world.visit_weights is None:
        return empty
    j = np.arange(n)
    cum = np.cumsum(world.visit_weights)
    cell = np.minimum(np.searchsorted(cum / cum[-1], world.u(rs.EXTERNAL, day, j, 1), side="right"), len(cum) - 1)
    poi, hour = cell // 24, cell % 24
    arrive = hour * 60 + (world.u(rs.EXTERNAL, day, j, 2) * 60).astype(np.int64)
    _, dwell = sample_dwell_minutes(world.dwell_cum[poi], world.u(rs.EXTERNAL, day, j, 3),
                                    world.u(rs.EXTERNAL, day, j, 4), world.mob.dwell_cap_minutes)
    depart = np.minimum(arrive + np.ceil(dwell).astype(np.int64), MINUTES_PER_DAY)
    keep = depart > arrive
    infected = (world.u(rs.EXTERNAL, day, j, 5) < p_inf).astype(np.int64)
    subject = VISITOR_BASE + day * 10_000_000 + j
    return {"subject": subject[keep], "poi": poi[keep], "arrive": arrive[keep], "depart": depart[keep],
            "infected": infected[keep]}


# --------------------------------------------------------------------------
# day planning


def _plan_trips(world: World, day: int, idx: np.ndarray, tasks, k_active: np.ndarray) -> dict:
    """Discretionary trips of the SAs ``idx`` (all draws keyed by SA id)."""
    sas = world.sas
    ids = sas.ids[idx]
    home = sas.home_node[idx]
    age = sas.age_bucket[idx]
    can = k_active[idx] > 0
    work = tasks.work[idx]
    ws, we = tasks.work_start[idx] * 60, (tasks.work_start[idx] + tasks.work_hours[idx]) * 60
    event = tasks.event[idx] & (world.venue[home] >= 0)
    es, ee = tasks.event_start[idx] * 60, (tasks.event_start[idx] + tasks.event_hours[idx]) * 60
    commute = world.commute[idx]
    dow, dom = day % 7, day % 31
    busy = np.full(len(idx), FREE_HOURS[0] * 60, dtype=np.int64)
    out = {k: [] for k in ("sa", "poi", "arrive", "depart", "travel", "decide", "dest", "home_leave", "back")}
    for h in range(FREE_HOURS[0], FREE_HOURS[1]):
        t0 = h * 60
        busy = np.where(work & (ws == t0), np.maximum(busy, we + commute), busy)
        busy = np.where(event & (es == t0), np.maximum(busy, ee + world.tt_poi_int[home, np.maximum(world.venue[home], 0)]),
                        busy)
        elig = np.flatnonzero(can & (busy <= t0))
        if elig.size == 0:
            continue
        sid = ids[elig]
        p = trip_probability(world.mob.base_trip_rate, world.profiles.dom[home[elig], dom],
                             world.profiles.dow[home[elig], dow], world.profiles.hour[home[elig], h])
        go = elig[world.u(rs.TRIP, sid, day, h) < p]
        if go.size == 0:
            continue
        sid = ids[go]
        dest = world.sampler.sample(home[go], age[go], world.u(rs.CATEGORY, sid, day, h),
                                    world.u(rs.LOCAL, sid, day, h), world.u(rs.DESTINATION, sid, day, h))
        out["decide"].append(np.full(go.size, t0))
        out["sa"].append(idx[go])
        out["dest"].append(dest)
        ok = dest >= 0
        g2, d2 = go[ok], dest[ok]
        if g2.size == 0:
            continue
        sid = ids[g2]
        tt = world.tt_poi_int[home[g2], d2]
        leave = t0 + (world.u(rs.DEPART_OFFSET, sid, day, h) * 60).astype(np.int64)
        arrive = leave + tt
        _, dwell = sample_dwell_minutes(world.dwell_cum[d2], world.u(rs.DWELL_BUCKET, sid, day, h),
                                        world.u(rs.DWELL_MINUTES, sid, day, h), world.mob.dwell_cap_minutes)
        end = np.full(g2.size, FREE_HOURS[1] * 60)
        end = np.where(work[g2] & (ws[g2] > t0), np.minimum(end, ws[g2]), end)
        end = np.where(event[g2] & (es[g2] > t0), np.minimum(end, es[g2]), end)
        depart = np.minimum(np.minimum(arrive + np.ceil(dwell).astype(np.int64), end - tt), MINUTES_PER_DAY - 1)
        made = depart > arrive
        busy[g2] = np.where(made, depart + tt, t0 + 60)
        sel = np.flatnonzero(made)
        out["poi"].append(d2[sel])
        out["arrive"].append(arrive[sel])
        out["depart"].append(depart[sel])
        out["travel"].append(tt[sel])
        out["home_leave"].append(leave[sel])
        out["back"].append(depart[sel] + tt[sel])
        out.setdefault("visit_sa", []).append(idx[g2[sel]])
    cat = {k: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64)) for k, v in out.items()}
    cat.setdefault("visit_sa", np.zeros(0, dtype=np.int64))
    return cat


def plan_day(world: World, day: int) -> DayPlan:
    sas = world.sas
    active = world.active_slots()
    k_active = np.bincount(world.slot_sa[active], minlength=sas.count)
    tasks = assign_daily_tasks_vec(sas.ids, sas.occupation, sas.work_node >= 0, k_active == 0, day,
                                   world.templates, world.policy, world.seed)
    parts = _parallel(lambda c: _plan_trips(world, day, c, tasks, k_active), _chunks(sas.count, world.sc.workers),
                      world.sc.workers)
    trips = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    # trip decisions
    base = day * MINUTES_PER_DAY  # the plan keeps day-local minutes; the log is absolute
    world.log.append(base + trips["decide"], TRIP_DECISION, sas.ids[trips["sa"]], sas.home_node[trips["sa"]],
                     np.where(trips["dest"] >= 0, trips["dest"], NO_POI))

    # events at the venue
    home = sas.home_node
    ev = np.flatnonzero(tasks.event & (world.venue[home] >= 0) & (k_active > 0))
    ev_poi = world.venue[home[ev]]
    ev_tt = world.tt_poi_int[home[ev], ev_poi]
    ev_arrive = tasks.event_start[ev] * 60 + ev_tt
    ev_depart = np.minimum((tasks.event_start[ev] + tasks.event_hours[ev]) * 60, MINUTES_PER_DAY - 1)
    ok = ev_depart > ev_arrive
    ev, ev_poi, ev_tt, ev_arrive, ev_depart = ev[ok], ev_poi[ok], ev_tt[ok], ev_arrive[ok], ev_depart[ok]

    v_sa = np.r_[trips["visit_sa"], ev].astype(np.int64)
    v_poi = np.r_[trips["poi"], ev_poi].astype(np.int64)
    v_arrive = np.r_[trips["arrive"], ev_arrive].astype(np.int64)
    v_depart = np.r_[trips["depart"], ev_depart].astype(np.int64)
    v_travel = np.r_[trips["travel"], ev_tt].astype(np.int64)

    work = tasks.work & (k_active > 0)
    ws = tasks.work_start * 60
    we = (tasks.work_start + tasks.work_hours) * 60
    wk = np.flatnonzero(work)
    away_sa = np.r_[trips["visit_sa"], ev, wk]
    away_start = np.r_[trips["home_leave"], ev_arrive - ev_tt, ws[wk]]
    away_end = np.r_[trips["back"], ev_depart + ev_tt, we[wk] + world.commute[wk]]
    leg_sa = np.r_[trips["visit_sa"], trips["visit_sa"], ev, ev, wk, wk]
    leg_minute = np.r_[trips["home_leave"], trips["depart"], ev_arrive - ev_tt, ev_depart, ws[wk], we[wk]]
    leg_minutes = np.r_[trips["travel"], trips["travel"], ev_tt, ev_tt, world.commute[wk], world.commute[wk]]

    # transient visitors
    vis = inject_external_arrivals(world, day)
    nv = len(vis["subject"])
    plan = DayPlan(
        day=day, k_active=k_active, work=work, work_start=ws, work_end=we,
        v_sa=np.r_[v_sa, np.full(nv, -1)], v_subject=np.r_[sas.ids[v_sa], vis["subject"]],
        v_poi=np.r_[v_poi, vis["poi"]], v_arrive=np.r_[v_arrive, vis["arrive"]],
        v_depart=np.r_[v_depart, vis["depart"]], v_k=np.r_[k_active[v_sa], np.ones(nv, dtype=np.int64)],
        v_travel=np.r_[v_travel, np.zeros(nv, dtype=np.int64)],
        away_sa=away_sa, away_start=away_start, away_end=away_end,
        leg_sa=leg_sa, leg_minute=leg_minute, leg_minutes=leg_minutes,
    )
    n_sa_visits = len(v_sa)
    payload = visit_payload(world.sa_cbg[v_sa], k_active[v_sa])
    world.log.append(base + v_arrive, ARRIVE, sas.ids[v_sa], v_poi, payload)
    world.log.append(base + v_depart, DEPART, sas.ids[v_sa], v_poi, payload)
    if nv:
        world.log.append(base + vis["arrive"], EXTERNAL_ARRIVAL, vis["subject"], vis["poi"], vis["infected"])
        world.log.append(base + vis["depart"], DEPART, vis["subject"], vis["poi"], visit_payload(0, 1))
    _prepare_exposure(world, plan, n_sa_visits, vis["infected"])
    return plan


def _slots_of(world: World, sa_index: np.ndarray, active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(row in sa_index, slot) for every active status of the listed SAs."""
    off = world.sas.offsets
    k = off[sa_index + 1] - off[sa_index]
    row = np.repeat(np.arange(len(sa_index)), k)
    slot = np.repeat(off[sa_index], k) + (np.arange(k.sum()) - np.repeat(np.cumsum(np.r_[0, k[:-1]]), k))
    keep = active[slot]
    return row[keep], slot[keep]


def _prepare_exposure(world: World, plan: DayPlan, n_sa_visits: int, visitor_infected: np.ndarray) -> None:
    """Per-minute occupancy, hazard tables, contamination, and exposure thresholds."""
    T = MINUTES_PER_DAY
    P = world.n_poi
    active = world.active_slots()
    contagious = world.contagious()
    row, slot = _slots_of(world, plan.v_sa[:n_sa_visits], active)
    poi, arr, dep = plan.v_poi[row], plan.v_arrive[row], plan.v_depart[row]
    age = world.slot_age[slot]

    # occupancy difference arrays: per age bucket, and contagious
    occ = np.zeros((len(AGE_BUCKETS), P, T + 1))
    cont = np.zeros((P, T + 1))
    for a in range(len(AGE_BUCKETS)):
        m = age == a
        np.add.at(occ[a], (poi[m], arr[m]), 1.0)
        np.add.at(occ[a], (poi[m], dep[m]), -1.0)
    c = contagious[slot]
    np.add.at(cont, (poi[c], arr[c]), 1.0)
    np.add.at(cont, (poi[c], dep[c]), -1.0)
    vp = plan.v_poi[n_sa_visits:]
    va, vd = plan.v_arrive[n_sa_visits:], plan.v_depart[n_sa_visits:]
    adult = AGE_BUCKETS.index("adult")
    np.add.at(occ[adult], (vp, va), 1.0)
    np.add.at(occ[adult], (vp, vd), -1.0)
    vi = visitor_infected.astype(bool)
    np.add.at(cont, (vp[vi], va[vi]), 1.0)
    np.add.at(cont, (vp[vi], vd[vi]), -1.0)
    occ = np.cumsum(occ, axis=2)[:, :, :T]
    cont = np.cumsum(cont, axis=1)[:, :T]
    total = occ.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        i_f = np.where(total > 0, cont / np.where(total > 0, total, 1.0), 0.0)
        share = np.where(total[None] > 0, occ / np.where(total > 0, total, 1.0)[None], 0.0)
    # C_a(t) = sum_b rate(a, b) share_b(t)
    C = np.einsum("ab,bpt->apt", world.rate, share)
    hours = np.repeat(np.arange(24), 60)
    nl = world.neglog_pc[:, hours, :]  # (poi, minute, mask)
    haz = (C * i_f[None] / 60.0)[:, :, :, None] * nl[None]  # (age, poi, minute, mask)
    hc = np.zeros((P, len(AGE_BUCKETS), 2, T + 1))
    hc[:, :, :, 1:] = np.cumsum(np.transpose(haz, (1, 0, 3, 2)), axis=3)
    plan.hazard_cum = hc
    plan.contamination, world.contamination = contamination_series(world.contamination, cont,
                                                                   world.epi.contamination)

    sus = world.status.state[slot] == S
    plan.sv_slot = slot[sus]
    plan.sv_visit = row[sus]
    plan.sv_threshold = -np.log1p(-world.u(rs.EXPOSURE, world.status.ids[plan.sv_slot], plan.day,
                                           plan.v_arrive[plan.sv_visit]))
    plan.sv_acc = np.zeros(len(plan.sv_slot))
    plan.surface_hits = _surface_exposures(world, plan)


def _surface_exposures(world: World, plan: DayPlan) -> dict:
    """Earliest surface infection minute per susceptible status-visit (keyed by position)."""
    spec_t = world.actions.get("TouchContaminatedObject")
    spec_w = world.actions.get("WashHands")
    if spec_t is None or len(plan.sv_slot) == 0:
        return {}
    from .population import action_probability

    v = plan.sv_visit
    arr, dep = plan.v_arrive[v], plan.v_depart[v]
    h0, h1 = arr // 60, (dep - 1) // 60
    n_h = h1 - h0 + 1
    pos = np.repeat(np.arange(len(v)), n_h)
    hour = np.repeat(h0, n_h) + (np.arange(n_h.sum()) - np.repeat(np.cumsum(np.r_[0, n_h[:-1]]), n_h))
    sid = world.status.ids[plan.sv_slot[pos]]
    sp = world.sp[plan.sv_slot[pos]]
    touch = world.u(rs.ACTION, sid, plan.day, hour, 4) < action_probability(spec_t, sp)
    if spec_w is not None:
        touch &= ~(world.u(rs.ACTION, sid, plan.day, hour, 3) < action_probability(spec_w, sp))
    minute = np.maximum(arr[pos], hour * 60)
    level = plan.contamination[plan.v_poi[v[pos]], minute]
    hit = touch & (world.u(rs.SURFACE, sid, plan.day, hour) < surface_probability(level, world.epi.contamination))
    out: dict[int, int] = {}
    for p_, m_ in zip(pos[hit].tolist(), minute[hit].tolist()):
        if p_ not in out or m_ < out[p_]:
            out[p_] = m_
    return out


# --------------------------------------------------------------------------
# minute exposure


def exposure_block(world: World, start: int, stop: int) -> list[tuple]:
    """POI exposure for minutes [start, stop): air (hazard threshold) and surface infections."""
    plan = world.plan
    if plan is None or len(plan.sv_slot) == 0 or stop <= start:
        return []
    v = plan.sv_visit
    arr, dep = plan.v_arrive[v], plan.v_depart[v]
    lo = np.clip(start, arr, dep)
    hi = np.clip(stop, arr, dep)
    slot = plan.sv_slot
    poi = plan.v_poi[v]
    age = world.slot_age[slot]
    mask = (world.sp[slot] >= world.epi.contact.mask_threshold).astype(np.int64)
    hc = plan.hazard_cum
    new_acc = hc[poi, age, mask, hi] - hc[poi, age, mask, arr]
    crossed = (new_acc >= plan.sv_threshold) & (plan.sv_acc < plan.sv_threshold) & (hi > lo)
    plan.sv_acc = np.where(hi > lo, new_acc, plan.sv_acc)
    out = []
    for j in np.flatnonzero(crossed):
        row = hc[poi[j], age[j], mask[j]]
        target = row[arr[j]] + plan.sv_threshold[j]
        m = int(np.searchsorted(row, target, side="left")) - 1
        m = min(max(m, int(lo[j])), int(hi[j]) - 1)
        out.append((m, int(slot[j]), int(poi[j]), ROUTE_AIR))
    for p_, m_ in plan.surface_hits.items():
        if start <= m_ < stop:
            out.append((m_, int(slot[p_]), int(poi[p_]), ROUTE_SURFACE))
    plan.infections.extend(out)
    return out


def minute_tick(world: World, minute: int) -> list[tuple]:
    """Exposure for a single minute of the current day."""
    return exposure_block(world, minute, minute + 1)


# --------------------------------------------------------------------------
# hourly synchronization


def _risk_actions(world: World, slots: np.ndarray, day: int, hour: int, tag: int) -> tuple[np.ndarray, np.ndarray]:
    """(actor position, strength) for the effective risk actions of ``slots`` this hour."""
    from .population import action_draws

    actor, strength = [], []
    sid = world.status.ids[slots]
    for j, kind in enumerate(("Sneeze", "PhysicalContact")):
        spec = world.actions.get(kind)
        if spec is None or spec.p_effective * spec.p_transmit <= 0:
            continue
        occurred, effect = action_draws(spec, world.sp[slots], world.u(rs.ACTION, sid, day, hour, 10 * tag + j),
                                        world.u(rs.ACTION_EFFECT, sid, day, hour, 10 * tag + j))
        actor.append(np.flatnonzero(occurred))
        strength.append(spec.p_effective * spec.p_transmit * effect[occurred])
    if not actor:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(actor), np.concatenate(strength)


def _group_step(world: World, day: int, hour: int, slots: np.ndarray, group: np.ndarray, scale, tag: int,
                place_base: int, route: int) -> list[tuple]:
    """Action-based transmission among statuses sharing a group label this hour."""
    if slots.size == 0:
        return []
    st = world.status.state[slots]
    is_c = (st == SYM) | (st == ASYM)
    if not is_c.any():
        return []
    csl = slots[is_c]
    pos, strength = _risk_actions(world, csl, day, hour, tag)
    if pos.size == 0:
        return []
    agroup = group[is_c][pos]
    vic = np.flatnonzero((st == S) & np.isin(group, agroup))
    if vic.size == 0:
        return []
    sc = np.broadcast_to(np.asarray(scale, dtype=np.float64), slots.shape)[vic]
    esc = group_escape_probability(agroup, strength, group[vic], world.sp[slots[vic]], sc)
    u = world.u(rs.GROUP_INFECTION, world.status.ids[slots[vic]], day, hour, tag)
    hit = vic[u < 1.0 - esc]
    m = hour * 60 + 30
    return [(m, int(slots[i]), place_base + int(group[i]), route) for i in hit]


def _at_home_mask(world: World, plan: DayPlan, minute: int) -> np.ndarray:
    away = np.zeros(world.sas.count, dtype=bool)
    cur = (plan.away_start <= minute) & (minute < plan.away_end)
    away[plan.away_sa[cur]] = True
    return away


def hourly_sync(world: World, hour: int) -> list[tuple]:
    """Regroup at the top of the hour and run household, work, and transport transmission."""
    plan, day = world.plan, world.day
    out: list[tuple] = []
    if not world.epi.contact.active(hour):
        return out
    st = world.status
    active = world.active_slots()
    # households: statuses whose SA is home, plus quarantined statuses (never hospitalized or dead)
    away = _at_home_mask(world, plan, hour * 60 + 30)
    home_slots = np.flatnonzero((active & ~away[world.slot_sa]) |
                                ((st.state == SYM) & st.quarantined & ~st.dying))
    out += _group_step(world, day, hour, home_slots, world.slot_household[home_slots], 1.0, 1, PLACE_HOME,
                       ROUTE_HOME)
    # workplaces: SAs at work this hour, regrouped every hour
    wk = np.flatnonzero(plan.work & (plan.work_start <= hour * 60) & (hour * 60 < plan.work_end))
    if wk.size:
        lab = assign_work_groups(world.sas.work_node[wk], world.sas.ids[wk], world.seed, day, hour)
        row, slots = _slots_of(world, wk, active)
        group = lab[row]
        out += _group_step(world, day, hour, slots, group, 1.0 / 8.0, 2, PLACE_WORK, ROUTE_WORK)
        sym_groups = np.unique(group[st.state[slots] == SYM])
        world.work_flag[slots[np.isin(group, sym_groups)]] = True
    # transport: everyone starting a leg this hour gets one seat
    legs = np.flatnonzero((plan.leg_minute // 60 == hour) & (plan.leg_minutes > 0))
    if legs.size:
        order = legs[np.lexsort((plan.leg_minute[legs], world.sas.ids[plan.leg_sa[legs]]))]
        seats = assign_transport_seats(len(order), world.sc.public_seats, rs.generator(world.seed, rs.SEATS, day, hour))
        pub = seats.vehicle >= 0
        if pub.any():
            riders = order[pub]
            row, slots = _slots_of(world, plan.leg_sa[riders], active)
            out += _group_step(world, day, hour, slots, seats.vehicle[pub][row],
                               plan.leg_minutes[riders][row] / 60.0, 3, PLACE_TRANSPORT, ROUTE_TRANSPORT)
    plan.infections.extend(out)
    return out


# --------------------------------------------------------------------------
# daily rollover


def daily_rollover(world: World, day: int) -> None:
    plan = world.plan
    st = world.status
    inf = sorted(plan.infections)
    first: dict[int, tuple] = {}
    for m, slot, place, route in inf:
        if slot not in first:
            first[slot] = (m, place, route)
    if first:
        slots = np.fromiter(first.keys(), dtype=np.int64)
        vals = np.array(list(first.values()), dtype=np.int64).reshape(-1, 3)
        world.log.append(day * MINUTES_PER_DAY + vals[:, 0], INFECTION, st.ids[slots], vals[:, 1], vals[:, 2])
        pending = slots
    else:
        pending = np.zeros(0, dtype=np.int64)
    before_sym = st.state == SYM
    tr = daily_update(st, day, world.epi.epi, world.seed, pending)
    if len(tr.index):
        world.log.append((day + 1) * MINUTES_PER_DAY - 1, STATE_CHANGE, st.ids[tr.index],
                         world.sas.ids[world.slot_sa[tr.index]],
                         (tr.old.astype(np.uint64) << np.uint64(8)) | tr.new.astype(np.uint64))
    # self-protection rises after a household member turns symptomatic or a symptomatic co-worker
    newly = tr.index[(tr.new == SYM) & (tr.old == INC)]
    bump = world.work_flag.copy()
    if newly.size:
        bump |= np.isin(world.slot_household, world.slot_household[newly])
        bump[newly] = world.work_flag[newly]
    world.sp = np.where(bump, np.minimum(1.0, world.sp + world.epi.epi.self_protection_step), world.sp)
    world.work_flag[:] = False
    del before_sym

    counts = st.counts()
    if counts.sum() != world.n_status or world.sas.k.sum() != world.n_status:
        raise InvariantViolation("status conservation violated")
    n = world.n_status
    world.state_counts.append(counts)
    world.series.append((day, float((counts[INC] + counts[SYM] + counts[ASYM]) / n), float(counts[DEAD] / n)))
    world.log.seal()


# --------------------------------------------------------------------------
# driver


@dataclass
class RunOutput:
    events: np.ndarray
    series: list[tuple[int, float, float]]
    state_counts: np.ndarray
    meta: dict

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.bin", "series": out / "series.csv", "meta": out / "run_meta.json"}
        paths["events"].write_bytes(self.events.tobytes())
        paths["series"].write_text(series_csv(self.series))
        paths["meta"].write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")
        return paths


def series_csv(series) -> str:
    lines = ["day,infected_fraction,dead_fraction"]
    lines += [f"{d},{f!r},{x!r}" for d, f, x in series]
    return "\n".join(lines) + "\n"


def peak_memory_bytes() -> int:
    """Resident-set high-water mark of this process.

    ``ru_maxrss`` carries the parent's peak into a forked child even after
    exec, so on Linux the per-image ``VmHWM`` is preferred.
    """
    try:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    peak = int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)
    return peak if sys.platform == "darwin" else peak * 1024


def simulate_day(world: World, day: int, tick: str = "hour") -> None:
    world.day = day
    apply_seeding(world, day)
    world.plan = plan_day(world, day)
    base = day * MINUTES_PER_DAY
    for hour in range(24):
        hourly_sync(world, hour)
        if tick == "minute":
            for m in range(hour * 60, hour * 60 + 60):
                minute_tick(world, m)
        else:
            exposure_block(world, hour * 60, hour * 60 + 60)
    del base
    daily_rollover(world, day)


def run(scenario: ScenarioConfig, world: World | None = None, tick: str = "hour") -> RunOutput:
    t0 = time.perf_counter()
    world = world or World(scenario)
    for day in range(scenario.days):
        simulate_day(world, day, tick)
        log.debug("day %d: infected fraction %.5f", day, world.series[-1][1])
    events = world.log.records
    meta = {
        "wall_seconds": time.perf_counter() - t0,
        "peak_memory_bytes": peak_memory_bytes(),
        "days": scenario.days, "seed": scenario.seed, "workers": scenario.workers,
        "tessellation": scenario.tessellation, "n_cells": world.bundle.tess.n_cells,
        "fraction": scenario.fraction, "super_agents": scenario.super_agents,
        "n_agents": int(world.pop.size), "n_super_agents": int(world.sas.count), "n_statuses": int(world.n_status),
        "n_events": int(len(events)),
        "event_counts": {KIND_NAMES[k]: int((events["kind"] == k).sum()) for k in range(len(KIND_NAMES))},
    }
    return RunOutput(events, world.series, np.array(world.state_counts), meta)


@dataclass
class ReplicationSet:
    seeds: list[int]
    outputs: list[RunOutput]
    metrics: dict[str, list[float]] = field(default_factory=dict)

    def summary(self) -> dict[str, tuple[float, float]]:
        out = {}
        for k, vals in self.metrics.items():
            a = np.asarray(vals, dtype=np.float64)
            out[k] = (float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0)
        return out


def run_replications(scenario: ScenarioConfig, n: int, base_seed: int,
                     metric_fns: dict[str, Callable[[RunOutput], float]] | None = None,
                     world_factory: Callable[[ScenarioConfig], World] | None = None) -> ReplicationSet:
    if n < 1:
        raise ConfigError("need at least one replication")
    seeds = list(range(base_seed, base_seed + n))
    outs, metrics = [], {k: [] for k in (metric_fns or {})}
    for s in seeds:
        sc = ScenarioConfig(**{**asdict(scenario), "seed": s})
        out = run(sc, world_factory(sc) if world_factory else None)
        outs.append(out)
        for k, fn in (metric_fns or {}).items():
            metrics[k].append(fn(out))
    return ReplicationSet(seeds, outs, metrics)
