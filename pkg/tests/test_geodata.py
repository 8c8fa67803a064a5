import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aicsim.errors import ConfigError, ParseError, ValidationError
from aicsim.geodata import (CbgPolygon, Poi, StreetEdge, StreetGraph, StreetNode, SyntheticCityParams,
                            estimate_building_geometry, generate_synthetic_city, grid_graph, load_city,
                            load_street_graph, travel_time, write_city)


def _poi(pid, node, area=None, floors=None, cat="office"):
    return Poi(pid, node, cat, area, floors, (1.0,) * 24)


def test_grid_graph_shape_and_travel_time():
    g = grid_graph(4, spacing=10.0, edge_time=2.0)
    assert g.n_nodes == 16
    assert g.n_edges == 2 * 4 * 3
    # manhattan distance of corners is 6 hops
    assert travel_time(g, int(g.ids[0]), int(g.ids[15])) == pytest.approx(12.0)
    assert travel_time(g, int(g.ids[5]), int(g.ids[5])) == 0.0


def test_travel_time_unknown_node():
    g = grid_graph(4)
    with pytest.raises(KeyError):
        travel_time(g, 0, 10_000)


def test_unreachable_pair_is_inf_and_validate_rejects():
    nodes = [StreetNode(i, (float(i), 0.0), "residential") for i in range(4)]
    g = StreetGraph(nodes, [StreetEdge(0, 1, 1.0, 1.0), StreetEdge(2, 3, 1.0, 1.0)])
    assert math.isinf(travel_time(g, 0, 3))
    with pytest.raises(ValidationError, match="disconnected"):
        g.validate()


@pytest.mark.parametrize("edge,msg", [
    (StreetEdge(0, 0, 1.0, 1.0), "self-loop"),
    (StreetEdge(0, 1, 1.0, 0.0), "non-positive travel time"),
    (StreetEdge(0, 9, 1.0, 1.0), "unknown node"),
])
def test_bad_edges_rejected(edge, msg):
    nodes = [StreetNode(i, (float(i), 0.0), "residential") for i in range(2)]
    with pytest.raises(ValidationError, match=msg):
        StreetGraph(nodes, [edge])


def test_parallel_edges_keep_minimum():
    nodes = [StreetNode(i, (float(i), 0.0), "residential") for i in range(2)]
    g = StreetGraph(nodes, [StreetEdge(0, 1, 1.0, 5.0), StreetEdge(1, 0, 1.0, 3.0)])
    assert travel_time(g, 0, 1) == 3.0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.floats(0.5, 10.0))
def test_grid_travel_time_symmetric(n, t):
    g = grid_graph(n, edge_time=t)
    d = g.all_pairs()
    assert np.allclose(d, d.T)
    assert np.allclose(np.diag(d), 0.0)


def test_street_graph_parse_error_has_line(tmp_path):
    p = tmp_path / "streets.txt"
    p.write_text("N 1 0 0 residential\nN 2 1 0 residential\nE 1 2 oops 1\n")
    with pytest.raises(ParseError) as ei:
        load_street_graph(p)
    assert ei.value.line == 3


def test_geometry_estimate_uses_neighbors_within_radius():
    g = grid_graph(5, spacing=100.0)
    near1 = _poi("a", int(g.ids[1]), 100.0, 1)
    near2 = _poi("b", int(g.ids[5]), 300.0, 2)
    far = _poi("c", int(g.ids[24]), 10_000.0, 9)
    target = _poi("t", int(g.ids[0]))
    area, floors = estimate_building_geometry(target, [near1, near2, far], 150.0, g)
    assert area == 200.0
    assert floors == 2  # 1.5 rounds half up


def test_geometry_estimate_falls_back_to_global_mean():
    g = grid_graph(5, spacing=100.0)
    far = _poi("c", int(g.ids[24]), 500.0, 3)
    target = _poi("t", int(g.ids[0]))
    assert estimate_building_geometry(target, [far], 10.0, g) == (500.0, 3)
    assert estimate_building_geometry(target, [far], 10.0, g, global_mean=(42.0, 1.2)) == (42.0, 1)


def test_geometry_estimate_without_any_known_raises():
    g = grid_graph(4)
    with pytest.raises(ConfigError):
        estimate_building_geometry(_poi("t", int(g.ids[0])), [], 10.0, g)


def test_synthetic_city_contents():
    city = generate_synthetic_city(SyntheticCityParams(grid_size=10, population=3000, seed=3))
    city.graph.validate()
    assert sum(c.population for c in city.cbgs) == 3000
    cats = {p.category for p in city.pois}
    assert {"grocery_retail", "education", "religious"} <= cats
    for p in city.pois:
        assert p.area_m2 > 0 and p.floors >= 1
        assert abs(sum(p.dwell_bucket_probs) - 1.0) < 1e-9
    assert city.patterns.total() > 0


def test_synthetic_city_deterministic():
    a = generate_synthetic_city(SyntheticCityParams(grid_size=8, population=500, seed=5))
    b = generate_synthetic_city(SyntheticCityParams(grid_size=8, population=500, seed=5))
    assert a.patterns.entries == b.patterns.entries
    assert np.array_equal(a.graph.xy, b.graph.xy)


@pytest.mark.parametrize("grid,pop", [(3, 1000), (10, 50)])
def test_synthetic_city_rejects_small_inputs(grid, pop):
    with pytest.raises(ConfigError):
        generate_synthetic_city(SyntheticCityParams(grid_size=grid, population=pop))


def test_city_round_trip(tmp_path, small_city):
    write_city(small_city, tmp_path)
    back = load_city(tmp_path)
    assert [p.id for p in back.pois] == [p.id for p in small_city.pois]
    assert [c.id for c in back.cbgs] == [c.id for c in small_city.cbgs]
    assert np.array_equal(back.graph.ids, small_city.graph.ids)
    assert np.allclose(back.graph.edge_time, small_city.graph.edge_time)
    assert back.patterns.total() == pytest.approx(small_city.patterns.total())


def test_city_missing_geometry_gets_estimated(tmp_path, small_city):
    write_city(small_city, tmp_path)
    lines = (tmp_path / "pois.jsonl").read_text().splitlines()
    obj = json.loads(lines[0])
    obj["area_m2"] = None
    obj["floors"] = None
    lines[0] = json.dumps(obj)
    (tmp_path / "pois.jsonl").write_text("\n".join(lines) + "\n")
    back = load_city(tmp_path)
    assert back.pois[0].has_geometry


def test_bad_cbg_polygon_rejected(tmp_path, small_city):
    write_city(small_city, tmp_path)
    lines = (tmp_path / "cbgs.jsonl").read_text().splitlines()
    obj = json.loads(lines[0])
    obj["polygon"] = [[0, 0], [1, 1], [1, 0], [0, 1]]  # bow tie
    lines[0] = json.dumps(obj)
    (tmp_path / "cbgs.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="self-intersecting"):
        load_city(tmp_path)


def test_cbg_centroid():
    c = CbgPolygon("x", ((0, 0), (2, 0), (2, 2), (0, 2)), 10, (0.2, 0.6, 0.2), (1, 0, 0, 0, 0, 0))
    assert c.centroid() == pytest.approx((1.0, 1.0))
