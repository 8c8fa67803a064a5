"""Synthetic population, super-agent coarse graining, tasks, actions, and groups.

Agents and super-agents are stored column-wise (one numpy array per field)
because the engine works on whole populations at once; ``Agent`` and
``SuperAgent`` records are available as views for inspection and tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rs
from .errors import ConfigError, ValidationError
from .geodata import AGE_BUCKETS, MAX_HOUSEHOLD, NODE_KINDS, CbgPolygon, Poi, StreetGraph

OCCUPATIONS = ("Service", "Student", "Doctor", "Unemployed")
OCCUPATION_AGES = {"Service": (18, 62), "Student": (4, 25), "Doctor": (25, 70), "Unemployed": (10, 81)}
WORKER_OCCUPATIONS = ("Service", "Student", "Doctor")
# ages are drawn inside these ranges so every agent has an admissible occupation
SAMPLING_AGES = {"child": (4, 17), "adult": (18, 64), "senior": (65, 81)}
DEFAULT_OCCUPATION_SHARES = {
    "child": {"Student": 1.0},
    "adult": {"Service": 0.60, "Student": 0.08, "Doctor": 0.02, "Unemployed": 0.30},
    "senior": {"Unemployed": 1.0},
}
PLACEMENT_WEIGHTS = {"residential": 100.0, "arterial": 10.0, "highway": 0.0, "other": 10.0}

TASK_KINDS = ("GoToWork", "Work", "ReturnHome", "StayHome", "AttendEvent", "StayInHospital", "TreatPatients")
ACTION_KINDS = ("Sneeze", "ContaminateObject", "PhysicalContact", "WashHands", "TouchContaminatedObject")
RISK_ACTIONS = ("Sneeze", "PhysicalContact", "TouchContaminatedObject")
GROUP_KINDS = ("Household", "Work", "Transportation", "Community")
MEAN_WORK_GROUP = 10.25
MAX_WORK_GROUP = 200
PUBLIC_VEHICLE_SEATS = 30
PRIVATE_VEHICLE_SEATS = 4
EVENTS_PER_MONTH_PER_10K = 3.0


def placement_weights(graph: StreetGraph) -> np.ndarray:
    table = np.array([PLACEMENT_WEIGHTS[k] for k in NODE_KINDS])
    return table[graph.kinds]


# --------------------------------------------------------------------------
# agents


@dataclass
class Agent:
    id: int
    home_cell: int
    home_node: int
    age: int
    age_bucket: str
    occupation: str
    household_id: int
    work_node: int | None
    daytime_cbg: str | None
    self_protection: float = 0.2
    tasks_today: list = field(default_factory=list)
    current_location: tuple[str, int] = ("home", -1)


@dataclass
class Population:
    """Column store of synthesized agents (index = agent id)."""

    home_cbg: np.ndarray
    home_node: np.ndarray
    household: np.ndarray
    age: np.ndarray
    age_bucket: np.ndarray
    occupation: np.ndarray
    daytime_cbg: np.ndarray  # -1 for non-workers
    work_node: np.ndarray    # -1 for non-workers
    household_size: np.ndarray  # per household
    cbg_ids: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return len(self.age)

    def agent(self, i: int, home_cell: np.ndarray | None = None) -> Agent:
        dc = int(self.daytime_cbg[i])
        return Agent(
            id=i,
            home_cell=int(home_cell[self.home_node[i]]) if home_cell is not None else int(self.home_cbg[i]),
            home_node=int(self.home_node[i]), age=int(self.age[i]),
            age_bucket=AGE_BUCKETS[self.age_bucket[i]], occupation=OCCUPATIONS[self.occupation[i]],
            household_id=int(self.household[i]),
            work_node=int(self.work_node[i]) if self.work_node[i] >= 0 else None,
            daytime_cbg=self.cbg_ids[dc] if dc >= 0 and self.cbg_ids else None,
            current_location=("home", int(self.home_node[i])),
        )


def _occupation_table(shares: dict | None) -> np.ndarray:
    shares = shares or DEFAULT_OCCUPATION_SHARES
    t = np.zeros((len(AGE_BUCKETS), len(OCCUPATIONS)))
    for b, row in shares.items():
        for occ, s in row.items():
            t[AGE_BUCKETS.index(b), OCCUPATIONS.index(occ)] = s
    return t


def _choose_occupations(ages: np.ndarray, buckets: np.ndarray, table: np.ndarray, u: np.ndarray) -> np.ndarray:
    lo = np.array([OCCUPATION_AGES[o][0] for o in OCCUPATIONS])
    hi = np.array([OCCUPATION_AGES[o][1] for o in OCCUPATIONS])
    ok = (ages[:, None] >= lo[None, :]) & (ages[:, None] <= hi[None, :])
    w = table[buckets] * ok
    empty = w.sum(axis=1) <= 0
    w[empty] = ok[empty]  # shares exclude every admissible occupation: fall back to uniform
    if np.any(w.sum(axis=1) <= 0):
        raise ConfigError("some ages have no admissible occupation")
    cum = np.cumsum(w, axis=1)
    cum /= cum[:, -1:]
    return np.minimum((cum <= u[:, None]).sum(axis=1), len(OCCUPATIONS) - 1)


def synthesize_population(cbgs: Sequence[CbgPolygon], graph: StreetGraph, seed: int,
                          node_cbg: np.ndarray | None = None, pois: Sequence[Poi] = (),
                          occupation_shares: dict | None = None) -> Population:
    """Households, homes, ages, occupations, and workplaces for every CBG."""
    from .tessellation import node_cbg_index

    if node_cbg is None:
        node_cbg = node_cbg_index(graph, cbgs)
    weights = placement_weights(graph)
    occ_table = _occupation_table(occupation_shares)
    cbg_pos = {c.id: j for j, c in enumerate(cbgs)}
    placeable = weights > 0
    med = np.array([graph.index[p.node_id] for p in pois if p.category == "medical"], dtype=np.int64)
    edu = np.array([graph.index[p.node_id] for p in pois if p.category == "education"], dtype=np.int64)

    cols: dict[str, list[np.ndarray]] = {k: [] for k in ("cbg", "node", "hh", "age", "bucket")}
    hh_sizes: list[np.ndarray] = []
    next_hh = 0
    for j, cbg in enumerate(cbgs):
        if cbg.population == 0:
            continue
        members = np.flatnonzero(node_cbg == j)
        w = weights[members]
        if w.sum() <= 0:
            raise ValidationError(f"CBG {cbg.id} has population {cbg.population} but no residential "
                                  "or arterial street nodes")
        g = np.random.default_rng([seed, 7, j])
        probs = np.asarray(cbg.household_size_probs, dtype=np.float64)
        # draw households until the population is covered; the last one is truncated
        sizes = g.choice(MAX_HOUSEHOLD, size=cbg.population, p=probs / probs.sum()) + 1
        cs = np.cumsum(sizes)
        last = int(np.searchsorted(cs, cbg.population))
        sizes = sizes[:last + 1].astype(np.int64)
        sizes[-1] -= int(cs[last]) - cbg.population
        homes = members[g.choice(len(members), size=len(sizes), p=w / w.sum())]
        hh = np.repeat(np.arange(next_hh, next_hh + len(sizes)), sizes)
        next_hh += len(sizes)
        ad = np.asarray(cbg.age_distribution, dtype=np.float64)
        buckets = g.choice(len(AGE_BUCKETS), size=cbg.population, p=ad / ad.sum())
        lo = np.array([SAMPLING_AGES[b][0] for b in AGE_BUCKETS])[buckets]
        hi = np.array([SAMPLING_AGES[b][1] for b in AGE_BUCKETS])[buckets]
        ages = lo + (g.random(cbg.population) * (hi - lo + 1)).astype(np.int64)
        cols["cbg"].append(np.full(cbg.population, j))
        cols["node"].append(np.repeat(homes, sizes))
        cols["hh"].append(hh)
        cols["age"].append(ages)
        cols["bucket"].append(buckets)
        hh_sizes.append(sizes)
    if not cols["age"]:
        raise ValidationError("population is empty")
    home_cbg = np.concatenate(cols["cbg"]).astype(np.int64)
    home_node = np.concatenate(cols["node"]).astype(np.int64)
    ages = np.concatenate(cols["age"]).astype(np.int64)
    buckets = np.concatenate(cols["bucket"]).astype(np.int64)
    n = len(ages)
    ids = np.arange(n)
    occ = _choose_occupations(ages, buckets, occ_table, rs.uniforms(seed, rs.SELECTION, ids, 1))

    daytime = np.full(n, -1, dtype=np.int64)
    work = np.full(n, -1, dtype=np.int64)
    workers = np.flatnonzero(np.isin(occ, [OCCUPATIONS.index(o) for o in WORKER_OCCUPATIONS]))
    u_cbg = rs.uniforms(seed, rs.SELECTION, ids, 2)
    u_node = rs.uniforms(seed, rs.SELECTION, ids, 3)
    day_cum = []
    for cbg in cbgs:
        keys = [cbg_pos[k] for k in cbg.daytime_cbg_probs]
        p = np.zeros(len(cbgs))
        p[keys] = list(cbg.daytime_cbg_probs.values())
        if p.sum() <= 0:
            p[cbg_pos[cbg.id]] = 1.0
        day_cum.append(np.cumsum(p) / p.sum())
    day_cum = np.array(day_cum)
    cbg_nodes = [np.flatnonzero((node_cbg == j) & placeable) for j in range(len(cbgs))]
    cbg_nodes = [m if m.size else np.flatnonzero(node_cbg == j) for j, m in enumerate(cbg_nodes)]
    for a in workers:
        d = int(min(np.searchsorted(day_cum[home_cbg[a]], u_cbg[a], side="right"), len(cbgs) - 1))
        daytime[a] = d
        if d == home_cbg[a]:
            work[a] = home_node[a]  # works from home
            continue
        cand = cbg_nodes[d]
        if cand.size == 0:
            work[a] = home_node[a]
            continue
        node = int(cand[int(u_node[a] * cand.size)])
        kind = OCCUPATIONS[occ[a]]
        target = med if kind == "Doctor" else edu if kind == "Student" else None
        if target is not None and target.size:
            dxy = graph.xy[target] - graph.xy[node]
            node = int(target[np.argmin(np.einsum("ij,ij->i", dxy, dxy))])
        work[a] = node
    return Population(home_cbg, home_node, np.concatenate(cols["hh"]).astype(np.int64), ages, buckets,
                      occ.astype(np.int64), daytime, work, np.concatenate(hh_sizes),
                      tuple(c.id for c in cbgs))


# --------------------------------------------------------------------------
# super-agents


@dataclass
class SuperAgent:
    id: int
    home_cell: int
    home_node: int
    age_bucket: str
    occupation: str
    work_node: int | None
    statuses: list[int]  # agent ids whose medical status this SA carries

    @property
    def k(self) -> int:
        return len(self.statuses)


@dataclass
class SuperAgents:
    """Column store: SA ``i`` carries statuses ``status_ids[offsets[i]:offsets[i+1]]``."""

    ids: np.ndarray
    home_node: np.ndarray
    home_cell: np.ndarray
    home_cbg: np.ndarray
    age_bucket: np.ndarray
    occupation: np.ndarray
    work_node: np.ndarray
    offsets: np.ndarray
    status_ids: np.ndarray
    fraction: float = 1.0

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def k(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def status_owner(self) -> np.ndarray:
        """SA index of every status slot."""
        return np.repeat(np.arange(self.count), self.k)

    def record(self, i: int) -> SuperAgent:
        return SuperAgent(int(self.ids[i]), int(self.home_cell[i]), int(self.home_node[i]),
                          AGE_BUCKETS[self.age_bucket[i]], OCCUPATIONS[self.occupation[i]],
                          int(self.work_node[i]) if self.work_node[i] >= 0 else None,
                          self.status_ids[self.offsets[i]:self.offsets[i + 1]].tolist())


def _groups(pop: Population, home_cell_of_node: np.ndarray) -> list[np.ndarray]:
    cell = home_cell_of_node[pop.home_node]
    order = np.lexsort((np.arange(pop.size), pop.occupation, pop.age_bucket, cell))
    key = np.stack([cell[order], pop.age_bucket[order], pop.occupation[order]], axis=1)
    cuts = np.flatnonzero(np.any(key[1:] != key[:-1], axis=1)) + 1
    return np.split(order, cuts)


def _build(pop: Population, home_cell_of_node: np.ndarray, reps: list[int], members: list[np.ndarray],
           fraction: float) -> SuperAgents:
    order = np.argsort(reps, kind="stable")
    reps = np.asarray(reps, dtype=np.int64)[order]
    members = [members[i] for i in order]
    k = np.array([len(m) for m in members], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(k)])
    status_ids = np.concatenate(members).astype(np.int64) if members else np.zeros(0, dtype=np.int64)
    return SuperAgents(reps, pop.home_node[reps], home_cell_of_node[pop.home_node[reps]],
                       pop.home_cbg[reps], pop.age_bucket[reps], pop.occupation[reps], pop.work_node[reps],
                       offsets, status_ids, fraction)


def coarse_grain(pop: Population, fraction: float, seed: int, home_cell_of_node: np.ndarray | None = None
                 ) -> SuperAgents:
    """Group agents by (home cell, age bucket, occupation) into ceil(fraction*n) SAs per group.

    Statuses are dealt round-robin after a seeded shuffle; each SA takes the
    id and physical attributes of the first agent dealt to it, so at fraction
    1 every SA is exactly one agent with that agent's id.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if pop.size == 0:
        raise ValidationError("cannot coarse-grain an empty population")
    if home_cell_of_node is None:
        home_cell_of_node = np.arange(int(pop.home_node.max()) + 1)
    reps, members = [], []
    for grp in _groups(pop, home_cell_of_node):
        n = len(grp)
        m = min(n, math.ceil(fraction * n - 1e-9))
        shuffled = rs.generator(seed, rs.SHUFFLE, int(grp[0])).permutation(grp)
        for i in range(m):
            members.append(np.sort(shuffled[i::m]))
            reps.append(int(shuffled[i]))
    return _build(pop, home_cell_of_node, reps, members, fraction)


def sample_agents(pop: Population, fraction: float, seed: int, home_cell_of_node: np.ndarray | None = None
                  ) -> SuperAgents:
    """No-super-agent reduction: keep ceil(fraction*n) agents per group, each with k = 1."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if home_cell_of_node is None:
        home_cell_of_node = np.arange(int(pop.home_node.max()) + 1)
    reps = []
    for grp in _groups(pop, home_cell_of_node):
        m = min(len(grp), math.ceil(fraction * len(grp) - 1e-9))
        shuffled = rs.generator(seed, rs.SHUFFLE, int(grp[0])).permutation(grp)
        reps.extend(int(a) for a in shuffled[:m])
    return _build(pop, home_cell_of_node, reps, [np.array([r]) for r in reps], fraction)


def singleton_super_agents(pop: Population, home_cell_of_node: np.ndarray | None = None) -> SuperAgents:
    """Every agent as its own k = 1 super-agent, built without any grouping step."""
    if home_cell_of_node is None:
        home_cell_of_node = np.arange(int(pop.home_node.max()) + 1)
    ids = list(range(pop.size))
    return _build(pop, home_cell_of_node, ids, [np.array([i]) for i in ids], 1.0)


# --------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class TaskTemplate:
    kind: str
    occupations: tuple[str, ...]
    start: tuple[int, int]
    duration: tuple[int, int]
    probability: tuple[float, float]
    days_of_week: tuple[int, ...]


@dataclass(frozen=True)
class Task:
    kind: str
    start_hour: int
    duration_hours: int
    occurrence_prob: float


def load_task_templates(path=None) -> dict[str, TaskTemplate]:
    text = (resources.files("aicsim.data").joinpath("tasks.json").read_text() if path is None
            else Path(path).read_text())
    out = {}
    for obj in json.loads(text):
        if obj["kind"] not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {obj['kind']!r}")
        t = TaskTemplate(obj["kind"], tuple(obj["occupations"]), tuple(obj["start"]), tuple(obj["duration"]),
                         tuple(obj["probability"]), tuple(obj.get("days_of_week", range(7))))
        if t.start[0] > t.start[1] or t.duration[0] > t.duration[1] or not (
                0 <= t.probability[0] <= t.probability[1] <= 1):
            raise ConfigError(f"task {t.kind}: windows must be ordered and probabilities in [0, 1]")
        out[t.kind] = t
    return out


@dataclass
class Policy:
    """Lockdown windows as half-open day ranges [start, end)."""

    lockdown: list[tuple[int, int]] = field(default_factory=list)

    def locked(self, day: int) -> bool:
        return any(a <= day < b for a, b in self.lockdown)


@dataclass
class DailyTasks:
    """Vectorized task assignment for one day (per super-agent)."""

    work: np.ndarray        # bool: goes to work / treats patients
    work_start: np.ndarray  # hour
    work_hours: np.ndarray
    event: np.ndarray       # bool
    event_start: np.ndarray
    event_hours: np.ndarray
    hospital: np.ndarray    # bool

    def tasks_of(self, i: int, occupation: int) -> list[Task]:
        if self.hospital[i]:
            return [Task("StayInHospital", 0, 24, 1.0)]
        out = []
        if self.work[i]:
            kind = "TreatPatients" if OCCUPATIONS[occupation] == "Doctor" else "Work"
            s, d = int(self.work_start[i]), int(self.work_hours[i])
            out += [Task("GoToWork", s, 0, 1.0), Task(kind, s, d, 1.0), Task("ReturnHome", s + d, 0, 1.0)]
        if self.event[i]:
            out.append(Task("AttendEvent", int(self.event_start[i]), int(self.event_hours[i]), 1.0))
        return out or [Task("StayHome", 0, 24, 1.0)]


def _uniform_int(lo: int, hi: int, u: np.ndarray) -> np.ndarray:
    return lo + np.minimum((u * (hi - lo + 1)).astype(np.int64), hi - lo)


def assign_daily_tasks_vec(ids: np.ndarray, occupation: np.ndarray, has_workplace: np.ndarray,
                           hospitalized: np.ndarray, day: int, templates: dict[str, TaskTemplate],
                           policy: Policy, seed: int) -> DailyTasks:
    n = len(ids)
    dow = day % 7
    u = lambda j: rs.uniforms(seed, rs.TASK, ids, day, j)  # noqa: E731
    locked = policy.locked(day)
    work = np.zeros(n, dtype=bool)
    start = np.zeros(n, dtype=np.int64)
    hours = np.zeros(n, dtype=np.int64)
    for kind in ("Work", "TreatPatients"):
        t = templates.get(kind)
        if t is None or dow not in t.days_of_week or locked:
            continue
        elig = np.isin(occupation, [OCCUPATIONS.index(o) for o in t.occupations]) & has_workplace
        p = t.probability[0] + (t.probability[1] - t.probability[0]) * u(1)
        go = elig & (u(2) < p)
        work |= go
        start = np.where(go, _uniform_int(*t.start, u(3)), start)
        hours = np.where(go, _uniform_int(*t.duration, u(4)), hours)
    ev = templates.get("AttendEvent")
    event = np.zeros(n, dtype=bool)
    ev_start = np.zeros(n, dtype=np.int64)
    ev_hours = np.zeros(n, dtype=np.int64)
    if ev is not None and not locked and dow in ev.days_of_week:
        elig = np.isin(occupation, [OCCUPATIONS.index(o) for o in ev.occupations])
        p = ev.probability[0] + (ev.probability[1] - ev.probability[0]) * u(5)
        event = elig & (u(6) < p)
        ev_start = np.where(event, _uniform_int(*ev.start, u(7)), 0)
        ev_hours = np.where(event, _uniform_int(*ev.duration, u(8)), 0)
    hosp = np.asarray(hospitalized, dtype=bool)
    work &= ~hosp
    event &= ~hosp
    # an event cannot overlap the working day
    event &= ~work | (ev_start >= start + hours)
    return DailyTasks(work, start, hours, event, ev_start, ev_hours, hosp)


def assign_daily_tasks(agent: Agent, day: int, policy: Policy, seed: int, hospitalized: bool = False,
                       templates: dict[str, TaskTemplate] | None = None) -> list[Task]:
    templates = templates or load_task_templates()
    occ = OCCUPATIONS.index(agent.occupation)
    dt = assign_daily_tasks_vec(np.array([agent.id]), np.array([occ]), np.array([agent.work_node is not None]),
                                np.array([hospitalized]), day, templates, policy, seed)
    return dt.tasks_of(0, occ)


# --------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class ActionSpec:
    kind: str
    probability: float
    duration: tuple[float, float]
    effect: tuple[float, float]
    p_effective: float
    p_transmit: float


@dataclass(frozen=True)
class ActionEvent:
    kind: str
    duration_minutes: float
    occurrence_prob: float
    effect_on_others: float


def load_action_specs(path=None) -> dict[str, ActionSpec]:
    text = (resources.files("aicsim.data").joinpath("actions.json").read_text() if path is None
            else Path(path).read_text())
    out = {}
    for obj in json.loads(text):
        if obj["kind"] not in ACTION_KINDS:
            raise ConfigError(f"unknown action kind {obj['kind']!r}")
        spec = ActionSpec(obj["kind"], float(obj["probability"]), tuple(obj["duration"]), tuple(obj["effect"]),
                          float(obj.get("p_effective", 0.0)), float(obj.get("p_transmit", 0.0)))
        if not (0 <= spec.effect[0] <= spec.effect[1] <= 1) or not 0 <= spec.probability <= 1:
            raise ConfigError(f"action {spec.kind}: effect bounds and probability must lie in [0, 1]")
        out[spec.kind] = spec
    return out


def action_probability(spec: ActionSpec, self_protection) -> np.ndarray:
    sp = np.asarray(self_protection, dtype=np.float64)
    if spec.kind in RISK_ACTIONS:
        return spec.probability * (1.0 - sp)
    if spec.kind == "WashHands":
        return np.minimum(1.0, spec.probability * (1.0 + sp))
    return np.full_like(sp, spec.probability)


def action_draws(spec: ActionSpec, self_protection, u_occur, u_effect) -> tuple[np.ndarray, np.ndarray]:
    """(occurred, effect_on_others) for a batch of actor-hours."""
    occurred = np.asarray(u_occur) < action_probability(spec, self_protection)
    effect = spec.effect[0] + (spec.effect[1] - spec.effect[0]) * np.asarray(u_effect)
    return occurred, effect


def generate_actions(self_protection: float, rng: np.random.Generator,
                     specs: dict[str, ActionSpec] | None = None) -> list[ActionEvent]:
    """Actions one agent performs during one hour of an active task."""
    specs = specs or load_action_specs()
    out = []
    for kind in ACTION_KINDS:
        spec = specs.get(kind)
        if spec is None:
            continue
        u = rng.random(3)
        occurred, effect = action_draws(spec, self_protection, u[0], u[1])
        if occurred:
            dur = spec.duration[0] + (spec.duration[1] - spec.duration[0]) * u[2]
            out.append(ActionEvent(kind, float(dur), float(action_probability(spec, self_protection)),
                                   float(effect)))
    return out


# --------------------------------------------------------------------------
# groups and seats


@dataclass
class Group:
    kind: str
    members: list[int]


def work_group_sizes(u: np.ndarray, mean: float = MEAN_WORK_GROUP, cap: int = MAX_WORK_GROUP) -> np.ndarray:
    """Geometric sizes on {1, 2, ...} with the given mean, truncated at ``cap``."""
    p = 1.0 / mean
    size = np.ceil(np.log1p(-np.asarray(u)) / math.log1p(-p)).astype(np.int64)
    return np.clip(size, 1, cap)


def assign_work_groups(node: np.ndarray, ids: np.ndarray, seed: int, day: int, hour: int) -> np.ndarray:
    """Group label per worker: co-located workers are shuffled and cut into geometric-size groups.

    Labels are unique across nodes; all draws are keyed by (day, hour, node) and
    worker id, so the partition does not depend on processing order.
    """
    node = np.asarray(node, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if node.size == 0:
        return np.zeros(0, dtype=np.int64)
    key = rs.hash64(seed, rs.WORK_GROUP, day, hour, ids)
    order = np.lexsort((ids, key, node))
    sn = node[order]
    starts = np.flatnonzero(np.r_[True, sn[1:] != sn[:-1]])
    counts = np.diff(np.r_[starts, len(sn)])
    pos = np.arange(len(sn)) - np.repeat(starts, counts)
    slot = np.repeat(np.arange(len(starts)), counts)
    # the j-th slot of a node holds the size of that node's j-th group
    sizes = work_group_sizes(rs.uniforms(seed, rs.WORK_GROUP, day, hour, sn, pos + (1 << 20)))
    cs = np.cumsum(sizes)
    ends = cs - np.repeat(np.r_[0, cs[starts[1:] - 1]], counts)
    big = len(sn) + 1
    labels = np.searchsorted(ends + slot * big, pos + slot * big, side="right")
    out = np.empty_like(labels)
    out[order] = labels
    return out


def assign_groups(home_household: np.ndarray, at_work_node: np.ndarray, at_poi: np.ndarray, ids: np.ndarray,
                  seed: int, day: int, hour: int) -> list[Group]:
    """Household, Work, and Community groups of the agents present this hour.

    ``at_work_node`` holds the workplace node or -1, ``at_poi`` the POI index or
    -1; everyone else is at home with their household.
    """
    groups: list[Group] = []
    at_home = (at_work_node < 0) & (at_poi < 0)
    for hh in np.unique(home_household[at_home]):
        groups.append(Group("Household", ids[at_home & (home_household == hh)].tolist()))
    working = np.flatnonzero(at_work_node >= 0)
    if working.size:
        lab = assign_work_groups(at_work_node[working], ids[working], seed, day, hour)
        for g in np.unique(lab):
            groups.append(Group("Work", ids[working[lab == g]].tolist()))
    for p in np.unique(at_poi[at_poi >= 0]):
        groups.append(Group("Community", ids[at_poi == p].tolist()))
    return groups


@dataclass
class SeatAssignment:
    seat: np.ndarray     # seat index in T per traveler
    vehicle: np.ndarray  # public vehicle index, or -1 for a private car
    group: np.ndarray    # transportation group label per traveler

    def groups(self) -> list[Group]:
        return [Group("Transportation", np.flatnonzero(self.group == g).tolist()) for g in np.unique(self.group)]


def assign_transport_seats(n_travelers: int, public_seats: int, rng: np.random.Generator) -> SeatAssignment:
    """Seat set T = public seats + one private seat per traveler, drawn without replacement.

    Public seats belong to vehicles of 30; every private seat is its own car.
    """
    total = public_seats + n_travelers
    if n_travelers == 0:
        e = np.zeros(0, dtype=np.int64)
        return SeatAssignment(e, e, e)
    seat = rng.choice(total, size=n_travelers, replace=False)
    vehicle = np.where(seat < public_seats, seat // PUBLIC_VEHICLE_SEATS, -1)
    n_vehicles = (public_seats + PUBLIC_VEHICLE_SEATS - 1) // PUBLIC_VEHICLE_SEATS
    group = np.where(vehicle >= 0, vehicle, n_vehicles + np.arange(n_travelers))
    return SeatAssignment(seat.astype(np.int64), vehicle.astype(np.int64), group.astype(np.int64))
