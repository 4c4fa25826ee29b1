import pathlib
import time

import numpy as np
import pytest

from zoomabs.cli import load_scenario
from zoomabs.planner import plan

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def vi_setup():
    return load_scenario(str(SCENARIOS / "patrol_vi.json"), {})


@pytest.fixture(scope="session")
def vi_plan(vi_setup):
    """The big patrol plan, built once per session, with its wall time."""
    scn, sysd, qz, _ = vi_setup
    t0 = time.time()
    p = plan(scn, sysd, qz)
    return p, time.time() - t0


@pytest.fixture(scope="session")
def open_setup():
    return load_scenario(str(SCENARIOS / "open_field.json"), {})


@pytest.fixture(scope="session")
def open_plan(open_setup):
    scn, sysd, qz, _ = open_setup
    return plan(scn, sysd, qz)
