import csv
import math

import numpy as np
import pytest

from aicsim.engine import ScenarioConfig
from aicsim.errors import ConfigError
from aicsim.experiments import (BENCH_HEADER, ERROR_HEADER, SweepSpec, bench_subprocess, build_report,
                                convergence_rows, error_rows, run_bench, run_sweep, series_distance_rows, tau_rows,
                                write_sweep)
from aicsim.metrics import write_csv

from conftest import SCENARIOS


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    seed = tmp_path_factory.mktemp("sw") / "seed.csv"
    seed.write_text("day,cell_id,count\n0,*,20\n")
    base = ScenarioConfig(synthetic={"grid_size": 12, "population": 3000, "cbg_blocks": [3, 3]}, days=3,
                          seeding_file=str(seed))
    spec = SweepSpec(kinds=["VD_r"], fractions=[0.75, 0.5, 0.25, 0.1], replications=2, ablate_sa=True)
    return run_sweep(base, spec)


def test_sweep_spec_validation():
    s = SweepSpec(kinds=["CBG"], fractions=[0.5, 1.0, 0.5])
    assert s.kinds == ["NT", "CBG"] and s.fractions == [1.0, 0.5]
    with pytest.raises(ConfigError):
        SweepSpec(kinds=["HEX"])
    with pytest.raises(ConfigError):
        SweepSpec(fractions=[0.3])
    with pytest.raises(ConfigError):
        SweepSpec(replications=0)


def test_sweep_grid(sweep):
    assert not sweep.failures
    # NT: 1.0 plus 4 fractions with and without SA; VD_r: 4 fractions with and without SA
    assert len(sweep.records) == 2 * (1 + 8 + 8)
    assert len(sweep.reference("NOV")) == 2
    assert {r.seed for r in sweep.records} == {0, 1}


def test_error_rows_match_manual(sweep):
    rows = error_rows(sweep)
    assert all(len(r) == len(ERROR_HEADER) for r in rows)
    row = next(r for r in rows if r[1] == "VD_r" and r[2] == "NOV")
    ref = np.mean(sweep.reference("NOV"))
    per = [abs(np.mean(sweep.samples("SA", "VD_r", f, "NOV")) - ref) for f in (0.75, 0.5, 0.25, 0.1)]
    assert row[3:7] == pytest.approx(per)
    assert row[8] == pytest.approx(np.mean(per))


def test_tau_and_distance_rows(sweep):
    tau = tau_rows(sweep)
    assert len(tau) == 2 * 4 * 3
    dist = series_distance_rows(sweep)
    assert len(dist) == len(sweep.records) - 2
    assert all(r[4] >= r[5] >= 0 for r in dist)
    conv = convergence_rows(sweep)
    assert all(r[-1] == "insufficient" for r in conv)


def test_write_and_report(sweep, tmp_path):
    paths = write_sweep(sweep, tmp_path)
    with paths["metrics.csv"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * len(sweep.records)
    text = build_report(tmp_path)
    assert "## Super-agent contribution (tau)" in text
    with pytest.raises(ConfigError):
        build_report(tmp_path / "nowhere")


def test_bench_memory_is_per_child(tmp_path):
    """A large parent must not inflate the child's reported peak."""
    ballast = np.ones(40_000_000)  # about 300 MB held by this process
    sc = ScenarioConfig.load(SCENARIOS / "smoke.json")
    r = bench_subprocess(sc)
    assert r["peak_memory_bytes"] < ballast.nbytes
    assert r["wall_seconds"] > 0 and len(r["series_sha256"]) == 64
    rows = run_bench(sc, ["CBG"], [1.0], [1, 2])
    assert [r_[0] for r_ in rows] == [1, 2]
    assert rows[0][5] == rows[1][5]  # identical series for any worker count
    assert write_csv(rows, BENCH_HEADER).startswith(",".join(BENCH_HEADER))
    assert not math.isnan(rows[0][3])
