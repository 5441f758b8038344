"""Deterministic simulator for synchronized tree-based sensor data collection.

The package splits into the network model (core, radio, clock, battery), the
node protocol and discrete-event engine that run it, canned scenarios, and a
trace analyzer with a CLI front end.
"""

from .core import (CollectionTree, NetworkGraph, dijkstra_spt, edge_weight,
                   rebuild_without)
from .engine import RunMetrics, Scenario, SimEngine, run_scenario
from .scenarios import CANNED, load_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "CANNED",
    "CollectionTree",
    "NetworkGraph",
    "RunMetrics",
    "Scenario",
    "SimEngine",
    "dijkstra_spt",
    "edge_weight",
    "load_scenario",
    "rebuild_without",
    "run_scenario",
    "save_scenario",
    "__version__",
]
