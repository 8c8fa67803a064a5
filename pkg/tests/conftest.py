from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from aicsim.engine import ScenarioConfig, World
from aicsim.geodata import SyntheticCityParams, generate_synthetic_city

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def small_city():
    """12x12 grid, 3x3 census blocks, 4000 residents."""
    return generate_synthetic_city(SyntheticCityParams(grid_size=12, population=4000, cbg_blocks=(3, 3)))


@pytest.fixture(scope="session")
def mid_city():
    """The 20x20 city layout with a lighter population; enough CBGs for every tessellation kind."""
    return generate_synthetic_city(SyntheticCityParams(grid_size=20, population=10000, cbg_blocks=(5, 5)))


@pytest.fixture
def seeding_file(tmp_path):
    def make(count=30, day=0, cell="*"):
        p = tmp_path / f"seed_{day}_{count}.csv"
        p.write_text(f"day,cell_id,count\n{day},{cell},{count}\n")
        return str(p)
    return make


@pytest.fixture
def small_scenario(seeding_file):
    def make(**kw):
        base = dict(synthetic={"grid_size": 12, "population": 4000, "cbg_blocks": [3, 3]}, days=4,
                    seeding_file=seeding_file(30))
        base.update(kw)
        return ScenarioConfig(**base)
    return make


def run_world(sc, city=None, **kw):
    from aicsim.engine import run

    world = World(sc, city=city, **kw)
    return run(sc, world), world


def events_digest(events: np.ndarray) -> str:
    import hashlib

    return hashlib.sha256(events.tobytes()).hexdigest()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
