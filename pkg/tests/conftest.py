"""Shared fixtures: canned-scenario runs are expensive, so run each once.

Fixtures that feed a timed acceptance criterion return (engine, elapsed_s)
so the budget is checked against the real wall time of the real run.
"""
from __future__ import annotations

import time

import pytest

from treecollect.engine import run_scenario
from treecollect.scenarios import (CANNED, dualloss_scenario,
                                   overnight_energy_scenario,
                                   stability_scenario, test_case_1,
                                   test_case_2_lossless, wake_skew_scenario)


def timed_run(scenario, **kw):
    t0 = time.perf_counter()
    eng = run_scenario(scenario, **kw)
    return eng, time.perf_counter() - t0


@pytest.fixture(scope="session")
def tc1_round1():
    """One full formation + collection round of the flagship field scenario."""
    return run_scenario(test_case_1(rounds=1))


@pytest.fixture(scope="session")
def leaf_drill():
    return run_scenario(CANNED["drill-leaf"]())


@pytest.fixture(scope="session")
def internal_drill():
    return run_scenario(CANNED["drill-internal"]())


@pytest.fixture(scope="session")
def samebranch_drill():
    return run_scenario(CANNED["drill-samebranch"]())


@pytest.fixture(scope="session")
def lossless_run():
    return timed_run(test_case_2_lossless())


@pytest.fixture(scope="session")
def stability_run():
    return run_scenario(stability_scenario())


@pytest.fixture(scope="session")
def dualloss_run():
    return run_scenario(dualloss_scenario())


@pytest.fixture(scope="session")
def overnight_run():
    return run_scenario(overnight_energy_scenario())


@pytest.fixture(scope="session")
def wake_skew_zero():
    return run_scenario(wake_skew_scenario(initial_delay_us=0))


@pytest.fixture(scope="session")
def wake_skew_500ms():
    return run_scenario(wake_skew_scenario(initial_delay_us=500_000))
