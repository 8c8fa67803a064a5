"""Disease model: POI density, pair distance, transmission, contamination, and the daily Markov chain.

Exposure at a POI is expressed as a hazard: a susceptible status present for
one minute accumulates ``-(C * I_f / 60) * ln P_c(d, m)``. Over a visit of
``w`` hours with fixed conditions this compounds to exactly
``P_tr = 1 - P_c ** (C * w * I_f)``, and each minute carries
``p_min = 1 - (1 - P_tr) ** (1 / w_minutes)``. A status is infected once its
accumulated hazard passes an Exp(1) threshold drawn for the visit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import rng as rs
from .errors import ConfigError, InvariantViolation
from .geodata import AGE_BUCKETS


class EpiState(IntEnum):
    SUSCEPTIBLE = 0
    INFECTED_NON_CONTAGIOUS = 1
    INFECTED_SYMPTOMATIC = 2
    INFECTED_ASYMPTOMATIC = 3
    RECOVERED = 4
    DEAD = 5


S, INC, SYM, ASYM, REC, DEAD = (int(s) for s in EpiState)
LEGAL = {(S, INC), (INC, SYM), (INC, ASYM), (SYM, REC), (SYM, DEAD), (ASYM, REC), (REC, S)}
CONTAGIOUS = (SYM, ASYM)


@dataclass
class EpiParams:
    incubation_days: int = 2
    p_asymptomatic: float = 0.70
    p_death_symptomatic: float = 0.03
    recovery_window: tuple[int, int] = (14, 16)
    immunity_window: tuple[int, int] = (55, 65)
    p_self_quarantine: float = 0.5
    base_self_protection: float = 0.2
    self_protection_step: float = 0.1

    def __post_init__(self):
        self.recovery_window = tuple(self.recovery_window)
        self.immunity_window = tuple(self.immunity_window)
        for name in ("p_asymptomatic", "p_death_symptomatic", "p_self_quarantine", "base_self_protection"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for w in (self.recovery_window, self.immunity_window):
            if len(w) != 2 or w[0] > w[1] or w[0] < 0:
                raise ConfigError(f"window {w} must be ordered and non-negative")
        if self.recovery_window[0] <= self.incubation_days:
            raise ConfigError("recovery must come after the incubation period")


@dataclass
class ContactParams:
    pc_table: tuple[tuple[float, float, float], ...] = (
        (0.5, 0.90, 0.92), (1.0, 0.95, 0.96), (2.0, 0.985, 0.988), (3.0, 0.998, 0.9984))
    mask_threshold: float = 0.5
    d_max: float = 10.0
    rates: dict[str, float] = field(default_factory=lambda: {"adult-adult": 1.5, "child": 2.0, "senior": 1.0})
    active_hours: tuple[int, int] = (6, 22)

    def __post_init__(self):
        t = np.asarray(self.pc_table, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] != 3 or len(t) < 1:
            raise ConfigError("pc_table rows must be (distance, unmasked, masked)")
        if np.any(np.diff(t[:, 0]) <= 0):
            raise ConfigError("pc_table distances must increase")
        if np.any(t[:, 1:] <= 0) or np.any(t[:, 1:] > 1):
            raise ConfigError("pc_table values must lie in (0, 1]")
        self._t = t

    def pc(self, d, masked) -> np.ndarray:
        """P_c(d, m) with linear interpolation in distance, clamped at the ends."""
        d = np.asarray(d, dtype=np.float64)
        un = np.interp(d, self._t[:, 0], self._t[:, 1])
        ma = np.interp(d, self._t[:, 0], self._t[:, 2])
        return np.where(np.asarray(masked, dtype=bool), ma, un)

    def rate_matrix(self) -> np.ndarray:
        """Contacts per hour between age buckets (symmetric)."""
        m = np.full((len(AGE_BUCKETS), len(AGE_BUCKETS)), self.rates["adult-adult"])
        sen = AGE_BUCKETS.index("senior")
        chi = AGE_BUCKETS.index("child")
        m[sen, :] = m[:, sen] = self.rates["senior"]
        m[chi, :] = m[:, chi] = self.rates["child"]
        return m

    def active(self, hour) -> np.ndarray:
        h = np.asarray(hour)
        return (h >= self.active_hours[0]) & (h < self.active_hours[1])


@dataclass
class ContaminationParams:
    half_life_minutes: float = 60.0
    deposit_per_infected_minute: float = 1.0
    p_surface_infection_per_level: float = 1e-4

    @property
    def decay_rate(self) -> float:
        return math.log(2.0) / self.half_life_minutes


@dataclass
class EpiConfig:
    epi: EpiParams = field(default_factory=EpiParams)
    contact: ContactParams = field(default_factory=ContactParams)
    contamination: ContaminationParams = field(default_factory=ContaminationParams)

    @classmethod
    def load(cls, path=None) -> "EpiConfig":
        text = (resources.files("aicsim.data").joinpath("epi.json").read_text() if path is None
                else Path(path).read_text())
        try:
            obj = json.loads(text)
            return cls(EpiParams(**obj.get("epi", {})),
                       ContactParams(**{k: (tuple(map(tuple, v)) if k == "pc_table" else v)
                                        for k, v in obj.get("contact", {}).items()}),
                       ContaminationParams(**obj.get("contamination", {})))
        except (TypeError, json.JSONDecodeError) as e:
            raise ConfigError(f"bad epi config: {e}") from None


# --------------------------------------------------------------------------
# transmission at POIs


def density(n_visitors, area_m2, floors) -> np.ndarray:
    """People per square metre of total floor area."""
    return np.asarray(n_visitors, dtype=np.float64) / (np.asarray(area_m2) * np.asarray(floors))


def pair_distance(delta, d_max: float = 10.0) -> np.ndarray:
    """Side of the square contact area 1/delta; empty buildings use ``d_max``.

    Distances are also capped at ``d_max``: beyond it the P_c table is flat anyway.
    """
    delta = np.asarray(delta, dtype=np.float64)
    with np.errstate(divide="ignore"):
        d = np.where(delta > 0, np.sqrt(1.0 / np.where(delta > 0, delta, 1.0)), d_max)
    return np.minimum(d, d_max)


def transmission_probability(d, masked, C, w_hours, I_f, contact: ContactParams | None = None) -> np.ndarray:
    contact = contact or ContactParams()
    pc = contact.pc(d, masked)
    return 1.0 - pc ** (np.asarray(C) * np.asarray(w_hours) * np.asarray(I_f))


def per_minute_probability(p_tr, w_minutes) -> np.ndarray:
    return 1.0 - (1.0 - np.asarray(p_tr)) ** (1.0 / np.asarray(w_minutes))


def minute_hazard(d, masked, C, I_f, contact: ContactParams | None = None) -> np.ndarray:
    """Hazard contributed by one minute of exposure (``-ln(1 - p_min)``)."""
    contact = contact or ContactParams()
    return -(np.asarray(C) * np.asarray(I_f) / 60.0) * np.log(contact.pc(d, masked))


def infected_fraction(states_per_sa) -> float:
    """Contagious statuses over all statuses of the SAs present (0 for an empty POI)."""
    total = 0
    sick = 0
    for states in states_per_sa:
        arr = np.asarray(states)
        total += arr.size
        sick += int(np.isin(arr, CONTAGIOUS).sum())
    return sick / total if total else 0.0


def contact_rate(victim_age: int, present_by_age, contact: ContactParams | None = None) -> float:
    """C for a victim of ``victim_age`` given status counts per age bucket present."""
    contact = contact or ContactParams()
    counts = np.asarray(present_by_age, dtype=np.float64)
    if counts.sum() <= 0:
        return 0.0
    return float(contact.rate_matrix()[victim_age] @ (counts / counts.sum()))


def poi_exposure_step(accumulated: np.ndarray, threshold: np.ndarray, hazard: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Advance the exposure of susceptible statuses by one minute.

    Returns the updated accumulated hazard and the mask of statuses whose
    threshold is crossed during this minute.
    """
    new = np.asarray(accumulated) + np.asarray(hazard)
    crossed = (new >= threshold) & (np.asarray(accumulated) < threshold)
    return new, crossed


def exposure_thresholds(seed: int, status_ids, *keys) -> np.ndarray:
    """Exp(1) infection thresholds keyed by status and visit."""
    u = rs.uniforms(seed, rs.EXPOSURE, status_ids, *keys)
    return -np.log1p(-u)


# --------------------------------------------------------------------------
# environment


@dataclass
class Contamination:
    level: np.ndarray
    params: ContaminationParams = field(default_factory=ContaminationParams)

    def step(self, n_contagious) -> np.ndarray:
        self.level = environment_step(self.level, n_contagious, self.params)
        return self.level

    def series(self, n_contagious: np.ndarray) -> np.ndarray:
        """Levels after each minute for per-minute contagious counts (POI x minute)."""
        out, self.level = contamination_series(self.level, n_contagious, self.params)
        return out


def environment_step(level, n_contagious, params: ContaminationParams) -> np.ndarray:
    return np.asarray(level) * math.exp(-params.decay_rate) + params.deposit_per_infected_minute * np.asarray(
        n_contagious, dtype=np.float64)


def contamination_series(level0: np.ndarray, n_contagious: np.ndarray, params: ContaminationParams
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``environment_step`` over the minute axis; returns (levels, final level)."""
    a = math.exp(-params.decay_rate)
    x = np.asarray(n_contagious, dtype=np.float64)
    zi = (np.asarray(level0, dtype=np.float64) * a)[:, None]
    y, _ = lfilter([params.deposit_per_infected_minute], [1.0, -a], x, axis=1, zi=zi)
    return y, y[:, -1].copy() if y.shape[1] else np.asarray(level0, dtype=np.float64)


def surface_probability(level, params: ContaminationParams) -> np.ndarray:
    return np.minimum(1.0, params.p_surface_infection_per_level * np.asarray(level))


def surface_exposure(level: float, touched: bool, u: float, params: ContaminationParams | None = None,
                     washed: bool = False) -> bool:
    """Surface infection for one status: needs a touch action this hour and no hand washing."""
    params = params or ContaminationParams()
    if not touched or washed or level <= 0:
        return False
    return bool(u < surface_probability(level, params))


# --------------------------------------------------------------------------
# household and workplace actions


def group_escape_probability(actor_group: np.ndarray, strength: np.ndarray, victim_group: np.ndarray,
                             victim_sp: np.ndarray, scale=1.0) -> np.ndarray:
    """Probability each victim escapes every effective action in its group.

    An action of strength ``s = p_effective * p_transmit * effect`` infects a
    co-member with probability ``s * (1 - self_protection) * scale``.
    """
    actor_group = np.asarray(actor_group, dtype=np.int64)
    victim_group = np.asarray(victim_group, dtype=np.int64)
    out = np.ones(len(victim_group))
    if actor_group.size == 0 or victim_group.size == 0:
        return out
    order = np.argsort(actor_group, kind="stable")
    ag, st = actor_group[order], np.asarray(strength, dtype=np.float64)[order]
    lo = np.searchsorted(ag, victim_group, side="left")
    hi = np.searchsorted(ag, victim_group, side="right")
    n = hi - lo
    hit = np.flatnonzero(n > 0)
    if hit.size == 0:
        return out
    rep = np.repeat(hit, n[hit])
    idx = np.repeat(lo[hit] - np.cumsum(np.r_[0, n[hit][:-1]]), n[hit]) + np.arange(n[hit].sum())
    sc = np.broadcast_to(np.asarray(scale, dtype=np.float64), victim_group.shape)
    p = np.clip(st[idx] * (1.0 - np.asarray(victim_sp)[rep]) * sc[rep], 0.0, 1.0)
    logesc = np.zeros(len(victim_group))
    np.add.at(logesc, rep, np.log1p(-np.minimum(p, 1 - 1e-300)))
    out[hit] = np.exp(logesc[hit])
    return out


def home_work_transmission_step(states: np.ndarray, self_protection: np.ndarray, actions_strength: list,
                                u: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """New infections in one co-located group for one hour.

    ``actions_strength[i]`` lists the strengths of member i's effective risk
    actions this hour; only contagious members' actions count. Returns the mask
    of susceptible members infected.
    """
    states = np.asarray(states)
    actor, strength = [], []
    for i, acts in enumerate(actions_strength):
        if states[i] in CONTAGIOUS:
            actor += [0] * len(acts)
            strength += list(acts)
    victims = states == S
    esc = group_escape_probability(np.array(actor), np.array(strength), np.zeros(len(states), dtype=np.int64),
                                   np.asarray(self_protection), scale)
    return victims & (np.asarray(u) < 1.0 - esc)


# --------------------------------------------------------------------------
# daily state machine


@dataclass
class EpiStatus:
    state: EpiState = EpiState.SUSCEPTIBLE
    day_entered_state: int = 0
    infection_day: int = -1
    scheduled_transition_day: int | None = None
    next_state: EpiState | None = None
    self_quarantined: bool = False


@dataclass
class StatusTable:
    """Column store of medical statuses."""

    ids: np.ndarray
    state: np.ndarray = None
    entered: np.ndarray = None
    infection_day: np.ndarray = None
    next_day: np.ndarray = None
    next_state: np.ndarray = None
    quarantined: np.ndarray = None
    dying: np.ndarray = None

    def __post_init__(self):
        n = len(self.ids)
        z = lambda v, t: np.full(n, v, dtype=t)  # noqa: E731
        self.state = z(S, np.int8) if self.state is None else self.state
        self.entered = z(0, np.int32) if self.entered is None else self.entered
        self.infection_day = z(-1, np.int32) if self.infection_day is None else self.infection_day
        self.next_day = z(-1, np.int32) if self.next_day is None else self.next_day
        self.next_state = z(-1, np.int8) if self.next_state is None else self.next_state
        self.quarantined = z(False, bool) if self.quarantined is None else self.quarantined
        self.dying = z(False, bool) if self.dying is None else self.dying

    def counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=len(EpiState))

    @property
    def hospitalized(self) -> np.ndarray:
        return (self.state == SYM) & self.dying

    @property
    def withdrawn(self) -> np.ndarray:
        """Statuses that do not travel with their SA: dead, hospitalized, or self-quarantined."""
        return (self.state == DEAD) | ((self.state == SYM) & (self.quarantined | self.dying))


@dataclass
class Transitions:
    index: np.ndarray
    old: np.ndarray
    new: np.ndarray


def _window_day(base: np.ndarray, window: tuple[int, int], u: np.ndarray) -> np.ndarray:
    lo, hi = window
    return base + lo + np.minimum((u * (hi - lo + 1)).astype(np.int64), hi - lo)


def infect(table: StatusTable, idx: np.ndarray, day: int, params: EpiParams) -> Transitions:
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(table.state[idx] != S):
        raise InvariantViolation("only susceptible statuses can be infected")
    table.state[idx] = INC
    table.entered[idx] = day
    table.infection_day[idx] = day
    table.next_day[idx] = day + params.incubation_days
    table.next_state[idx] = -1  # branch decided when it happens
    table.quarantined[idx] = False
    table.dying[idx] = False
    return Transitions(idx, np.full(len(idx), S, np.int8), np.full(len(idx), INC, np.int8))


def daily_update(table: StatusTable, day: int, params: EpiParams, seed: int,
                 pending: np.ndarray | None = None) -> Transitions:
    """End-of-day update: scheduled transitions first, then the day's new infections."""
    due = np.flatnonzero(table.next_day == day)
    old = table.state[due].copy()
    ids = table.ids[due]
    inf_day = table.infection_day[due].astype(np.int64)
    u = lambda j: rs.uniforms(seed, rs.STATE, ids, inf_day, j)  # noqa: E731
    new = old.copy()

    inc = old == INC
    if inc.any():
        asym = u(1) < params.p_asymptomatic
        death = (u(2) < params.p_death_symptomatic) & ~asym
        quar = (u(3) < params.p_self_quarantine) & ~asym
        end_day = _window_day(inf_day, params.recovery_window, u(4))
        new = np.where(inc, np.where(asym, ASYM, SYM), new).astype(np.int8)
        sel = due[inc]
        table.dying[sel] = death[inc]
        table.quarantined[sel] = quar[inc]
        table.next_day[sel] = end_day[inc]
        table.next_state[sel] = np.where(death[inc], DEAD, REC)
    ill = (old == SYM) | (old == ASYM)
    if ill.any():
        sel = due[ill]
        nxt = table.next_state[sel]
        new[ill] = nxt
        rec = nxt == REC
        table.next_day[sel] = np.where(rec, _window_day(np.full(len(sel), day), params.immunity_window, u(5)[ill]),
                                       -1)
        table.next_state[sel] = np.where(rec, S, -1)
        table.quarantined[sel] = False
        table.dying[sel] = False
    back = old == REC
    if back.any():
        sel = due[back]
        new[back] = S
        table.next_day[sel] = -1
        table.next_state[sel] = -1
        table.infection_day[sel] = -1
    bad = [(int(a), int(b)) for a, b in set(zip(old.tolist(), new.tolist())) if (a, b) not in LEGAL]
    if bad:
        raise InvariantViolation(f"illegal transitions {bad}")
    table.state[due] = new
    table.entered[due] = day
    tr = Transitions(due, old, new)
    if pending is not None and len(pending):
        pending = np.unique(np.asarray(pending, dtype=np.int64))
        pending = pending[table.state[pending] == S]
        t2 = infect(table, pending, day, params)
        tr = Transitions(np.r_[tr.index, t2.index], np.r_[tr.old, t2.old], np.r_[tr.new, t2.new])
    return tr


def check_transition(old: int, new: int) -> None:
    if (int(old), int(new)) not in LEGAL:
        raise InvariantViolation(f"illegal transition {EpiState(old).name} -> {EpiState(new).name}")


def daily_state_update(status: EpiStatus, day: int, params: EpiParams, seed: int, status_id: int = 0
                       ) -> EpiStatus:
    """Scalar form of ``daily_update`` for one status."""
    t = StatusTable(np.array([status_id]))
    t.state[0] = int(status.state)
    t.entered[0] = status.day_entered_state
    t.infection_day[0] = status.infection_day
    t.next_day[0] = -1 if status.scheduled_transition_day is None else status.scheduled_transition_day
    t.next_state[0] = -1 if status.next_state is None else int(status.next_state)
    t.quarantined[0] = status.self_quarantined
    t.dying[0] = status.next_state == EpiState.DEAD
    daily_update(t, day, params, seed)
    return EpiStatus(EpiState(int(t.state[0])), int(t.entered[0]), int(t.infection_day[0]),
                     None if t.next_day[0] < 0 else int(t.next_day[0]),
                     None if t.next_state[0] < 0 else EpiState(int(t.next_state[0])), bool(t.quarantined[0]))
