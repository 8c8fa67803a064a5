import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aicsim.errors import ConfigError, ParseError, ValidationError
from aicsim.geodata import CATEGORIES, DWELL_BOUNDS, Poi, grid_graph
from aicsim.mobility import (DestinationSampler, MobilityConfig, NeedsWeights, build_cell_schedules,
                             build_nt_schedules, choose_destination, decide_trip, load_needs, nt_kernel,
                             sample_dwell, sample_dwell_minutes, trip_probability, trip_profiles)
from aicsim.schedule import Schedule
from aicsim.tessellation import build_network_voronoi, attach_cbg_fractions, select_vd_seeds


def _pois(g, cats, hourly=None):
    return [Poi(f"p{i}", int(g.ids[i * 3 % g.n_nodes]), c, 100.0, 1,
                tuple(hourly[i]) if hourly is not None else (1.0,) * 24)
            for i, c in enumerate(cats)]


def test_mobility_config_validation(tmp_path):
    assert MobilityConfig.from_json().p_local == 0.75
    with pytest.raises(ConfigError):
        MobilityConfig(p_local=1.5)
    p = tmp_path / "m.json"
    p.write_text('{"p_local": 0.5, "typo": 1}')
    with pytest.raises(ConfigError, match="unknown"):
        MobilityConfig.from_json(p)


def test_needs_loader(tmp_path):
    n = load_needs()
    assert n.matrix.shape == (3, len(CATEGORIES))
    bad = tmp_path / "needs.csv"
    bad.write_text("age_bucket,category,weight\nchild,casino,1\n")
    with pytest.raises(ParseError):
        load_needs(bad)
    with pytest.raises(ValidationError):
        NeedsWeights(np.zeros((3, len(CATEGORIES))))


def test_trip_probability_clipped():
    assert trip_probability(0.5, 2.0, 2.0, 2.0) == 1.0
    assert trip_probability(0.1, 1.0, 1.0, 0.0) == 0.0
    assert trip_probability(0.1, 1.0, 2.0, 1.5) == pytest.approx(0.3)


def test_trip_profiles_mean_one():
    g = grid_graph(4)
    rng = np.random.default_rng(0)
    pois = _pois(g, ["office"] * 4, hourly=rng.uniform(0, 5, (4, 24)))
    prof = trip_profiles(rng.uniform(0, 3, (6, 4)), pois)
    assert np.allclose(prof.hour.mean(axis=1), 1.0)
    assert np.allclose(prof.dow, 1.0)
    assert decide_trip(prof, 0, (0, 0, 12), 0.0, 0.0) is False


def test_dwell_minutes_inside_bucket():
    cum = np.cumsum([[0.2, 0.2, 0.2, 0.2, 0.2]] * 5, axis=1)
    b, m = sample_dwell_minutes(cum, np.array([0.1, 0.3, 0.5, 0.7, 0.9]), np.array([0.0, 0.5, 0.99, 0.2, 0.0]))
    assert b.tolist() == [0, 1, 2, 3, 4]
    for bi, mi in zip(b, m):
        lo, hi = DWELL_BOUNDS[bi]
        assert lo < mi <= hi


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True))
def test_dwell_never_exceeds_cap(ub, um):
    cum = np.cumsum([[0.1, 0.1, 0.1, 0.2, 0.5]], axis=1)
    _, m = sample_dwell_minutes(cum, np.array([ub]), np.array([um]), cap=300.0)
    assert 0 < m[0] <= 300.0


def test_sample_dwell_scalar():
    g = grid_graph(4)
    poi = Poi("x", int(g.ids[0]), "office", 1.0, 1, (1.0,) * 24, dwell_bucket_probs=(0, 0, 1, 0, 0))
    d = sample_dwell(poi, np.random.default_rng(0))
    assert 20 < d <= 60


def test_destination_only_from_schedule_and_needs():
    g = grid_graph(5)
    pois = _pois(g, ["grocery_retail", "office", "medical", "office"])
    sched = Schedule({"p1": 3.0, "p3": 1.0})
    needs = NeedsWeights(np.ones((3, len(CATEGORIES))))
    tt = np.arange(4, dtype=float)
    rng = np.random.default_rng(1)
    got = [choose_destination(1, 0, sched, pois, tt, rng, needs) for _ in range(400)]
    assert set(got) <= {"p1", "p3"}
    assert 0.65 < got.count("p1") / len(got) < 0.85
    # a needs vector that excludes offices leaves nothing to do
    m = np.ones((3, len(CATEGORIES)))
    m[:, CATEGORIES.index("office")] = 0
    assert choose_destination(1, 0, sched, pois, tt, rng, NeedsWeights(m)) is None


def test_local_categories_prefer_nearby():
    g = grid_graph(5)
    pois = _pois(g, ["grocery_retail"] * 8)
    freq = np.ones(8)
    tt = np.arange(8, dtype=float)  # p0 nearest
    cfg = MobilityConfig(p_local=1.0, local_neighbors=2)
    s = DestinationSampler(freq[None], tt[None], pois, NeedsWeights.uniform(), cfg)
    rng = np.random.default_rng(3)
    n = 500
    got = s.sample(np.zeros(n, dtype=int), np.ones(n, dtype=int), rng.random(n), rng.random(n), rng.random(n))
    assert set(got.tolist()) == {0, 1}


def test_nt_kernel_monotone():
    k = nt_kernel(np.array([0.0, 1.0, 5.0, 30.0]))
    assert np.all(np.diff(k) < 0) and k[0] == 1.0


def test_nt_schedules_keep_cbg_mass():
    rng = np.random.default_rng(0)
    cbg_freq = rng.uniform(0, 10, (3, 6))
    node_cbg = rng.integers(0, 3, 40)
    tt = rng.uniform(0, 20, (40, 6))
    rows = build_nt_schedules(cbg_freq, node_cbg, tt, np.ones(40))
    for n in range(40):
        assert rows[n].sum() == pytest.approx(cbg_freq[node_cbg[n]].sum())
        assert np.all((rows[n] > 0) == (cbg_freq[node_cbg[n]] > 0))


def test_nt_schedule_favors_nearer_poi():
    cbg_freq = np.array([[1.0, 1.0]])
    node_cbg = np.zeros(2, dtype=int)
    tt = np.array([[1.0, 10.0], [10.0, 1.0]])
    rows = build_nt_schedules(cbg_freq, node_cbg, tt, np.ones(2))
    assert rows[0, 0] > rows[0, 1] and rows[1, 1] > rows[1, 0]


def test_cell_schedules_conserve_pattern_mass(mid_city):
    g = mid_city.graph
    seeds = select_vd_seeds(mid_city.pois, "by_category", ("education",), g)
    t = build_network_voronoi(g, seeds)
    attach_cbg_fractions(t, g, mid_city.cbgs)
    build_cell_schedules(mid_city.patterns, t, mid_city.cbgs)
    tot = sum(c.schedule.total() for c in t.cells)
    assert abs(tot - mid_city.patterns.total()) <= 1e-9 * mid_city.patterns.total()
    pop = sum(sum(c.schedule.demographics.values()) for c in t.cells)
    assert pop == sum(c.population for c in mid_city.cbgs)
