import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aicsim.errors import ConfigError
from aicsim.population import (OCCUPATION_AGES, OCCUPATIONS, PUBLIC_VEHICLE_SEATS, Policy, action_probability,
                               assign_daily_tasks, assign_daily_tasks_vec, assign_groups, assign_transport_seats,
                               assign_work_groups, coarse_grain, generate_actions, load_action_specs,
                               load_task_templates, sample_agents, singleton_super_agents, synthesize_population,
                               work_group_sizes)
from aicsim.tessellation import node_cbg_index


@pytest.fixture(scope="module")
def pop(small_city):
    return synthesize_population(small_city.cbgs, small_city.graph, 1, None, small_city.pois)


def test_population_size_and_households(pop, small_city):
    assert pop.size == sum(c.population for c in small_city.cbgs)
    assert pop.household_size.sum() == pop.size
    assert np.all(pop.household_size >= 1) and np.all(pop.household_size <= 6)
    # members of one household share a home node
    for hh in np.unique(pop.household)[:50]:
        assert len(np.unique(pop.home_node[pop.household == hh])) == 1


def test_population_homes_inside_cbg(pop, small_city):
    node_cbg = node_cbg_index(small_city.graph, small_city.cbgs)
    assert np.array_equal(node_cbg[pop.home_node], pop.home_cbg)


def test_occupations_match_age_ranges(pop):
    for o, (lo, hi) in OCCUPATION_AGES.items():
        m = pop.occupation == OCCUPATIONS.index(o)
        assert np.all((pop.age[m] >= lo) & (pop.age[m] <= hi))
    workers = pop.occupation != OCCUPATIONS.index("Unemployed")
    assert np.all(pop.work_node[workers] >= 0)
    assert np.all(pop.work_node[~workers] == -1)


def test_population_deterministic(small_city):
    a = synthesize_population(small_city.cbgs, small_city.graph, 9, None, small_city.pois)
    b = synthesize_population(small_city.cbgs, small_city.graph, 9, None, small_city.pois)
    assert np.array_equal(a.age, b.age) and np.array_equal(a.work_node, b.work_node)


@pytest.mark.parametrize("fraction", [1.0, 0.75, 0.5, 0.25, 0.1])
def test_coarse_grain_conserves_statuses(pop, fraction):
    sas = coarse_grain(pop, fraction, 1)
    assert sas.k.sum() == pop.size
    assert np.array_equal(np.sort(sas.status_ids), np.arange(pop.size))
    # every status shares its SA's home cell, age bucket and occupation
    owner = sas.status_owner
    assert np.array_equal(pop.age_bucket[sas.status_ids], sas.age_bucket[owner])
    assert np.array_equal(pop.occupation[sas.status_ids], sas.occupation[owner])
    # without a tessellation each node is its own home cell
    assert np.array_equal(pop.home_node[sas.status_ids], sas.home_cell[owner])
    assert sas.count <= pop.size


def test_coarse_grain_fraction_one_is_identity(pop):
    a = coarse_grain(pop, 1.0, 3)
    b = singleton_super_agents(pop)
    assert np.array_equal(a.ids, b.ids)
    assert np.array_equal(a.status_ids, b.status_ids)
    assert np.all(a.k == 1)


def test_sample_agents_keeps_k_one(pop):
    s = sample_agents(pop, 0.25, 1)
    assert np.all(s.k == 1)
    assert s.count < pop.size
    assert len(np.unique(s.ids)) == s.count


@pytest.mark.parametrize("f", [0.0, 1.5])
def test_bad_fraction(pop, f):
    with pytest.raises(ConfigError):
        coarse_grain(pop, f, 1)


def test_record_view(pop):
    sas = coarse_grain(pop, 0.5, 1)
    r = sas.record(0)
    assert r.k == len(r.statuses) == int(sas.k[0])


def test_tasks_weekday_and_lockdown(pop):
    t = load_task_templates()
    ids = np.arange(pop.size)
    hasw = pop.work_node >= 0
    hosp = np.zeros(pop.size, dtype=bool)
    day0 = assign_daily_tasks_vec(ids, pop.occupation, hasw, hosp, 0, t, Policy(), 1)
    assert day0.work.sum() > 0.5 * hasw.sum()
    assert np.all(day0.work_start[day0.work] >= 7) and np.all(day0.work_start[day0.work] <= 9)
    locked = assign_daily_tasks_vec(ids, pop.occupation, hasw, hosp, 0, t, Policy([(0, 5)]), 1)
    assert locked.work.sum() == 0
    weekend = assign_daily_tasks_vec(ids, pop.occupation, hasw, hosp, 5, t, Policy(), 1)
    doctors = pop.occupation == OCCUPATIONS.index("Doctor")
    assert not weekend.work[~doctors].any()
    hosp[:10] = True
    h = assign_daily_tasks_vec(ids, pop.occupation, hasw, hosp, 0, t, Policy(), 1)
    assert not h.work[:10].any()
    assert h.tasks_of(0, int(pop.occupation[0]))[0].kind == "StayInHospital"


def test_scalar_tasks_match_vectorized(pop):
    t = load_task_templates()
    for i in range(20):
        a = pop.agent(i)
        scalar = assign_daily_tasks(a, 2, Policy(), 4)
        vec = assign_daily_tasks_vec(np.array([i]), pop.occupation[i:i + 1], pop.work_node[i:i + 1] >= 0,
                                     np.zeros(1, dtype=bool), 2, t, Policy(), 4)
        assert scalar == vec.tasks_of(0, int(pop.occupation[i]))


def test_action_probabilities():
    specs = load_action_specs()
    assert action_probability(specs["Sneeze"], 0.5) == pytest.approx(0.04)
    assert action_probability(specs["WashHands"], 0.5) == pytest.approx(0.3)
    acts = generate_actions(0.0, np.random.default_rng(0), specs)
    assert all(a.kind in specs for a in acts)


def test_work_group_sizes_geometric_mean():
    rng = np.random.default_rng(0)
    s = work_group_sizes(rng.random(200_000))
    assert s.min() >= 1 and s.max() <= 200
    assert s.mean() == pytest.approx(10.25, rel=0.02)


def test_work_groups_partition_by_node_and_order_free():
    rng = np.random.default_rng(1)
    node = rng.integers(0, 4, 300)
    ids = rng.permutation(300)
    lab = assign_work_groups(node, ids, 1, 0, 9)
    for g in np.unique(lab):
        assert len(np.unique(node[lab == g])) == 1
    perm = rng.permutation(300)
    lab2 = assign_work_groups(node[perm], ids[perm], 1, 0, 9)
    assert np.array_equal(lab[perm], lab2)


def test_assign_groups_kinds():
    hh = np.array([0, 0, 1, 1, 2])
    work = np.array([-1, 5, -1, -1, -1])
    poi = np.array([-1, -1, 3, -1, -1])
    groups = assign_groups(hh, work, poi, np.arange(5), 0, 0, 10)
    kinds = sorted((g.kind, tuple(g.members)) for g in groups)
    assert ("Community", (2,)) in kinds
    assert ("Work", (1,)) in kinds
    assert ("Household", (0,)) in kinds and ("Household", (3,)) in kinds


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 400), st.integers(0, 300), st.integers(0, 2**31))
def test_transport_seats_unique(n, public, seed):
    s = assign_transport_seats(n, public, np.random.default_rng(seed))
    assert len(np.unique(s.seat)) == n
    pub = s.vehicle >= 0
    assert np.all(s.seat[pub] < public)
    assert np.all(s.vehicle[pub] == s.seat[pub] // PUBLIC_VEHICLE_SEATS)
    # private travelers ride alone
    priv = s.group[~pub]
    assert len(np.unique(priv)) == len(priv)
    assert not np.isin(priv, s.group[pub]).any()
