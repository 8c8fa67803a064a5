from dataclasses import replace

import numpy as np
import pytest

from aicsim.engine import (ARRIVE, DEPART, EVENT_DTYPE, EXTERNAL_ARRIVAL, INFECTION, MINUTES_PER_DAY,
                           PLACE_HOME, STATE_CHANGE, TRIP_DECISION, VISITOR_BASE, EventLog, ScenarioConfig, World,
                           _RANK, load_arrivals, load_seeding, read_events, run, run_replications,
                           unpack_visit_payload, visit_payload)
from aicsim.epidemic import INC, S, LEGAL
from aicsim.errors import ConfigError, ParseError
from aicsim.population import singleton_super_agents

from conftest import events_digest


@pytest.fixture(scope="module")
def city():
    from aicsim.geodata import SyntheticCityParams, generate_synthetic_city

    return generate_synthetic_city(SyntheticCityParams(grid_size=12, population=4000, cbg_blocks=(3, 3)))


@pytest.fixture(scope="module")
def seed_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("seed") / "seed.csv"
    p.write_text("day,cell_id,count\n0,*,40\n")
    return str(p)


@pytest.fixture(scope="module")
def base(seed_csv):
    return ScenarioConfig(synthetic={"grid_size": 12, "population": 4000, "cbg_blocks": [3, 3]}, days=6,
                          seeding_file=seed_csv)


@pytest.fixture(scope="module")
def reference(base, city):
    world = World(base, city=city)
    return run(base, world), world


# ---------------------------------------------------------------- config and loaders


def test_scenario_rejects_bad_values():
    with pytest.raises(ConfigError):
        ScenarioConfig(days=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(fraction=0.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(workers=0)


def test_scenario_load_unknown_key_and_relative_paths(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"days": 2, "colour": "red"}')
    with pytest.raises(ConfigError, match="unknown"):
        ScenarioConfig.load(p)
    p.write_text('{"days": 2, "seeding_file": "seed.csv"}')
    sc = ScenarioConfig.load(p)
    assert sc.path(sc.seeding_file) == tmp_path / "seed.csv"
    p.write_text("{bad json")
    with pytest.raises(ParseError):
        ScenarioConfig.load(p)
    with pytest.raises(ConfigError):
        ScenarioConfig.load(tmp_path / "missing.json")


def test_seeding_and_arrival_loaders(tmp_path):
    s = tmp_path / "s.csv"
    s.write_text("day,cell_id,count\n0,*,5\n2,350490000001,3\n")
    assert load_seeding(s) == [(0, "*", 5), (2, "350490000001", 3)]
    s.write_text("day,cell_id,count\n0,*,x\n")
    with pytest.raises(ParseError) as ei:
        load_seeding(s)
    assert ei.value.line == 2
    a = tmp_path / "a.csv"
    a.write_text("day,count,p_infected\n1,10,0.5\n")
    assert load_arrivals(a) == {1: (10, 0.5)}
    a.write_text("day,count,p_infected\n1,10,1.5\n")
    with pytest.raises(ConfigError):
        load_arrivals(a)
    with pytest.raises(ConfigError):
        load_seeding(tmp_path / "nope.csv")


def test_bad_seeding_cell_is_config_error(tmp_path, city):
    s = tmp_path / "s.csv"
    s.write_text("day,cell_id,count\n0,downtown,5\n")
    sc = ScenarioConfig(days=1, seeding_file=str(s))
    with pytest.raises(ConfigError):
        run(sc, World(sc, city=city))


# ---------------------------------------------------------------- event log


def test_event_log_orders_within_minute():
    log = EventLog()
    log.append(5, ARRIVE, [9, 1], 3, 0)
    log.append(5, INFECTION, 4, 0, 0)
    log.append(5, DEPART, 2, 3, 0)
    log.append(4, STATE_CHANGE, 7, 0, 0)
    log.append(5, TRIP_DECISION, 8, 0, 0)
    rec = log.records
    assert rec["minute"].tolist() == [4, 5, 5, 5, 5, 5]
    assert rec["kind"].tolist() == [STATE_CHANGE, TRIP_DECISION, DEPART, ARRIVE, ARRIVE, INFECTION]
    assert rec["subject"][3:5].tolist() == [1, 9]


def test_event_log_empty_append_and_roundtrip(tmp_path):
    log = EventLog()
    log.append(np.zeros(0), ARRIVE, np.zeros(0), 0, 0)
    assert len(log.records) == 0
    log.append([1, 2], ARRIVE, [3, 4], [5, 6], [7, 8])
    p = tmp_path / "e.bin"
    p.write_bytes(log.to_bytes())
    assert np.array_equal(read_events(p), log.records)
    assert EVENT_DTYPE.itemsize == 4 + 1 + 8 + 8 + 8


def test_visit_payload_round_trip():
    cbg, k = unpack_visit_payload(visit_payload(np.array([0, 7, 123]), np.array([1, 40, 2**31])))
    assert cbg.tolist() == [0, 7, 123] and k.tolist() == [1, 40, 2**31]


# ---------------------------------------------------------------- run properties


def test_log_sorted_and_absolute(reference, base):
    out, _ = reference
    e = out.events
    key = np.lexsort((e["payload"], e["place"], e["subject"], _RANK[e["kind"]], e["minute"]))
    assert np.array_equal(key, np.arange(len(e)))
    assert e["minute"].max() < base.days * MINUTES_PER_DAY
    arr = e[e["kind"] == ARRIVE]
    days = arr["minute"] // MINUTES_PER_DAY
    assert len(np.unique(days)) == base.days


def test_visits_close_same_day(reference):
    from aicsim.metrics import extract_visits

    out, _ = reference
    v = extract_visits(out.events, (0, 10**9))
    assert len(v) == (out.events["kind"] == ARRIVE).sum()
    assert np.all(v.depart > v.arrive)
    assert np.all(v.arrive // MINUTES_PER_DAY == v.depart // MINUTES_PER_DAY)


def test_conservation_every_day(reference):
    out, world = reference
    assert out.state_counts.shape == (6, 6)
    assert np.all(out.state_counts.sum(axis=1) == world.pop.size)
    assert world.sas.k.sum() == world.pop.size


def test_transitions_legal_and_infections_logged(reference):
    out, _ = reference
    e = out.events
    sc = e[e["kind"] == STATE_CHANGE]
    old, new = (sc["payload"] >> np.uint64(8)).astype(int), (sc["payload"] & np.uint64(0xFF)).astype(int)
    assert all((o, n) in LEGAL for o, n in zip(old, new))
    inf = e[e["kind"] == INFECTION]
    assert len(inf) > 0
    # every logged infection becomes an S -> INC change at the same day's rollover
    to_inc = sc[(old == S) & (new == INC)]
    assert set(inf["subject"].tolist()) <= set(to_inc["subject"].tolist())
    routes = set(inf["payload"].tolist())
    assert routes <= {0, 1, 2, 3, 4}


def test_series_matches_state_counts(reference):
    out, world = reference
    for (day, inf, dead), counts in zip(out.series, out.state_counts):
        assert inf == pytest.approx((counts[1] + counts[2] + counts[3]) / world.n_status)
        assert dead == pytest.approx(counts[5] / world.n_status)


@pytest.mark.parametrize("workers", [2, 5])
def test_worker_count_does_not_change_log(base, city, reference, workers):
    out = run(replace(base, workers=workers), World(replace(base, workers=workers), city=city))
    assert events_digest(out.events) == events_digest(reference[0].events)
    assert out.series == reference[0].series


def test_minute_ticks_equal_hour_blocks(base, city):
    sc = replace(base, days=4)
    a = run(sc, World(sc, city=city), tick="hour")
    b = run(sc, World(sc, city=city), tick="minute")
    assert (a.events["kind"] == INFECTION).sum() > 0
    assert events_digest(a.events) == events_digest(b.events)


def test_prebuilt_singletons_equal_fraction_one(base, city, reference):
    w = World(base, city=city)
    sas = singleton_super_agents(w.pop, w.bundle.tess.owner)
    out = run(base, World(base, city=city, bundle=w.bundle, population=w.pop, sas=sas))
    assert events_digest(out.events) == events_digest(reference[0].events)


def test_different_seed_changes_log(base, city, reference):
    sc = replace(base, seed=1)
    out = run(sc, World(sc, city=city))
    assert events_digest(out.events) != events_digest(reference[0].events)


def test_super_agent_payload_carries_k(base, city):
    sc = replace(base, fraction=0.25, days=1)
    w = World(sc, city=city)
    out = run(sc, w)
    arr = out.events[out.events["kind"] == ARRIVE]
    _, k = unpack_visit_payload(arr["payload"])
    assert k.max() > 1
    assert np.all(out.state_counts.sum(axis=1) == w.pop.size)


def test_no_sa_reduction_scales_statuses(base, city):
    sc = replace(base, fraction=0.5, super_agents=False, days=2)
    w = World(sc, city=city)
    out = run(sc, w)
    assert np.all(out.state_counts.sum(axis=1) == w.sas.count)
    assert w.sas.count < w.pop.size


def test_external_visitors(tmp_path, city):
    a = tmp_path / "a.csv"
    a.write_text("day,count,p_infected\n0,300,1.0\n")
    sc = ScenarioConfig(days=1, arrivals_file=str(a))
    out = run(sc, World(sc, city=city))
    e = out.events
    ext = e[e["kind"] == EXTERNAL_ARRIVAL]
    assert 0 < len(ext) <= 300
    assert np.all(ext["subject"] >= VISITOR_BASE)
    assert np.all(ext["payload"] == 1)
    dep = e[(e["kind"] == DEPART) & (e["subject"] >= VISITOR_BASE)]
    assert len(dep) == len(ext)
    # all-infected visitors seed the only infections there are
    inf = e[e["kind"] == INFECTION]
    assert len(inf) > 0 and np.all(inf["subject"] < VISITOR_BASE)


def test_lockdown_removes_work(base, city):
    sc = replace(base, days=1, lockdown=[[0, 1]])
    w = World(sc, city=city)
    run(sc, w)
    assert not w.plan.work.any()


def test_run_output_write(tmp_path, reference):
    out, _ = reference
    paths = out.write(tmp_path / "o")
    assert np.array_equal(read_events(paths["events"]), out.events)
    text = paths["series"].read_text().splitlines()
    assert text[0] == "day,infected_fraction,dead_fraction"
    assert len(text) == 7


def test_replications(base, city):
    sc = replace(base, days=2)
    rs = run_replications(sc, 3, 10, {"last": lambda o: o.series[-1][1]},
                          world_factory=lambda s: World(s, city=city))
    assert rs.seeds == [10, 11, 12]
    assert len(rs.metrics["last"]) == 3
    assert set(rs.summary()) == {"last"}
    with pytest.raises(ConfigError):
        run_replications(sc, 0, 0)


def test_household_infections_use_place_tag(reference):
    out, _ = reference
    inf = out.events[out.events["kind"] == INFECTION]
    home = inf[inf["payload"] == 2]
    assert np.all((home["place"] >> np.uint64(32)) == (PLACE_HOME >> 32))
