import math

import numpy as np
import pytest

from aicsim.errors import UndefinedMetric
from aicsim.metrics import (MetricSample, MetricTarget, aggregate_abs_error, avd, binary_segmentation,
                            convergence_check, dump_json, expand_visits, extract_visits, freedman_diaconis_edges,
                            histograms, infection_series_distance, measure, nov, pcv, sa_contribution,
                            select_mvpoi, select_top_source_cbgs, variance_segmentation, write_csv)

from crafted_logs import CASES, WINDOW, build_log


@pytest.mark.parametrize("name,visits,extra,e_nov,e_avd,e_pcv", CASES, ids=[c[0] for c in CASES])
def test_crafted_logs(name, visits, extra, e_nov, e_avd, e_pcv):
    log = build_log(visits, **extra)
    assert nov(log, 0, WINDOW) == e_nov
    assert avd(log, 0, WINDOW) == float(e_avd)
    assert pcv(log, 0, 1, 2, WINDOW) == float(e_pcv)


def test_pcv_threshold_parameter():
    log = build_log([(1, 0, 0, 10, 1, 1), (2, 0, 5, 20, 2, 1)])
    assert pcv(log, 0, 1, 2) == 0.0
    assert pcv(log, 0, 1, 2, threshold=4.0) == 1.0


def test_undefined_metrics():
    log = build_log([(1, 0, 0, 10, 1, 1)])
    with pytest.raises(UndefinedMetric):
        avd(log, 7)
    with pytest.raises(UndefinedMetric):
        pcv(log, 0, 3, 4)
    with pytest.raises(ValueError):
        pcv(log, 0, 1, 1)
    assert nov(log, 7) == 0


def test_expanded_visits_give_same_metrics():
    log = build_log([(1, 0, 0, 30, 1, 3), (2, 0, 20, 40, 2, 1), (3, 0, 50, 60, 1, 2)])
    v = extract_visits(log)
    e = expand_visits(v)
    assert len(e) == 6 and np.all(e.k == 1)
    assert nov(e, 0) == nov(v, 0)
    assert avd(e, 0) == pytest.approx(avd(v, 0))
    assert pcv(e, 0, 1, 2) == pytest.approx(pcv(v, 0, 1, 2))


def test_mvpoi_and_sources_tie_to_lower_id():
    assert select_mvpoi({"b": 5, "a": 5, "c": 1}) == "a"
    assert select_top_source_cbgs({3: 2, 1: 2, 2: 1}, "x") == (1, 3)
    with pytest.raises(UndefinedMetric):
        select_mvpoi({})
    with pytest.raises(UndefinedMetric):
        select_top_source_cbgs({1: 4}, "x")
    log = build_log([(1, 2, 0, 10, 1, 2), (2, 1, 0, 10, 2, 1), (3, 1, 0, 10, 3, 1)])
    v = extract_visits(log)
    assert select_mvpoi(v) == 1
    assert select_top_source_cbgs(v, 1) == (2, 3)


def test_mvpoi_from_patterns(small_city):
    p = small_city.patterns
    poi = select_mvpoi(p)
    totals = {}
    for _, q, n in p.entries:
        totals[q] = totals.get(q, 0) + n
    assert totals[poi] == max(totals.values())
    c1, c2 = select_top_source_cbgs(p, poi)
    assert c1 != c2


def test_measure_reports_nan_for_undefined():
    log = build_log([(1, 0, 0, 10, 1, 1)])
    out = measure(log, MetricTarget(0, "p0", 1, 2))
    assert out["NOV"] == 1.0 and out["AVD"] == 10.0 and out["PCV"] == 0.0
    out = measure(log, MetricTarget(5, "p5", 1, 2))
    assert out["NOV"] == 0.0 and math.isnan(out["AVD"]) and math.isnan(out["PCV"])


def test_metric_sample_validation():
    MetricSample("PCV", "p", 0.5, 0, "NT", 1.0)
    with pytest.raises(ValueError):
        MetricSample("PCV", "p", 1.5, 0, "NT", 1.0)
    with pytest.raises(ValueError):
        MetricSample("XYZ", "p", 1.0, 0, "NT", 1.0)


def test_aggregate_error_and_tau():
    row = aggregate_abs_error({0.75: [2.0, 4.0], 0.5: [5.0], 0.25: [1.0], 0.1: [3.0]}, [3.0, 3.0], "NOV", "VD_r")
    assert row.per_fraction == {0.75: 0.0, 0.5: 2.0, 0.25: 2.0, 0.1: 0.0}
    assert row.aggregate == 1.0
    with pytest.raises(UndefinedMetric):
        aggregate_abs_error({0.75: [1.0]}, [1.0], "NOV")
    assert sa_contribution(10.0, 8.0, 6.0) == pytest.approx(-0.5)
    with pytest.raises(UndefinedMetric):
        sa_contribution(5.0, 1.0, 5.0)


def test_series_distance():
    assert infection_series_distance([0.1, 0.2, 0.4], [0.1, 0.3, 0.1]) == pytest.approx((0.3, 0.4 / 3))
    assert infection_series_distance([], []) == (0.0, 0.0)
    with pytest.raises(ValueError):
        infection_series_distance([0.1], [0.1, 0.2])


def test_binary_segmentation_finds_steps():
    x = np.r_[np.zeros(30), np.full(30, 5.0), np.full(40, -2.0)]
    x = x + np.random.default_rng(0).normal(0, 0.3, 100)
    assert binary_segmentation(x) == [30, 60]
    assert binary_segmentation(np.ones(50)) == []


def test_variance_segmentation_finds_spread_change():
    rng = np.random.default_rng(1)
    r = np.r_[rng.normal(0, 3.0, 50), rng.normal(0, 0.2, 50)]
    cps = variance_segmentation(r)
    assert cps and abs(cps[-1] - 50) <= 3


@pytest.mark.parametrize("seed", range(5))
def test_convergence_step_at_forty(seed):
    rng = np.random.default_rng(seed)
    x = np.r_[np.full(40, 10.0), np.full(60, 12.0)] + rng.normal(0, 0.5, 100)
    c = convergence_check(x)
    assert abs(c.n_star - 40) <= 2
    assert c.converged


def test_convergence_constant_and_short():
    c = convergence_check(np.full(100, 3.0))
    assert c.n_star == 1 and c.converged and c.change_points == []
    with pytest.raises(ValueError):
        convergence_check(np.ones(9))


def test_convergence_late_change_is_not_converged():
    x = np.r_[np.zeros(95), np.full(5, 10.0)]
    c = convergence_check(x)
    assert not c.converged


def test_histogram_edges():
    ref = np.arange(100, dtype=float)
    edges = freedman_diaconis_edges(ref, np.r_[ref, 150.0])
    width = 2 * (74.25 - 24.75) / 100 ** (1 / 3)
    assert edges[1] - edges[0] == pytest.approx(width)
    assert edges[0] == 0.0 and edges[-1] >= 150.0
    assert freedman_diaconis_edges([1.0, 1.0]).tolist() == [1.0, 2.0]
    h = histograms({"NT": list(ref), "VD_r": [1.0, 2.0, math.nan]}, "NT")
    assert sum(h["counts"]["NT"]) == pytest.approx(1.0)
    assert sum(h["counts"]["VD_r"]) == pytest.approx(2 / 2)


def test_csv_and_json_writers():
    text = write_csv([(1, 0.5, "x"), (2, math.nan, "y")], ["a", "b", "c"])
    assert text == "a,b,c\n1,0.5,x\n2,nan,y\n"
    assert dump_json({"b": 1, "a": [1.5]}).startswith('{\n  "a"')
