"""Canned scenarios and the on-disk scenario format.

The field scenarios place nodes on a jittered grid and use a path-loss
parameterization that gives realistic outdoor ranges. The drill scenarios
pin an exact topology instead: every unwanted pair gets an opaque obstacle
and every wanted link gets its penalty tuned so the mean RSSI lands on a
chosen tier. That makes tree shapes, failure timelines, and retry counts
reproducible assertions rather than statistical hopes.

Scenario files are YAML documents (schema_version 1); `load_scenario` and
`save_scenario` round-trip every field of `Scenario`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, replace

import numpy as np
import yaml

from .battery import DaylightWindow
from .engine import Scenario
from .protocol import ProtocolParams
from .radio import LinkModelParams

SCHEMA_VERSION = 1

# mean-RSSI targets used when pinning drill links to a tier
GOOD_DBM = -60.0     # zero tier surcharge
BACKUP_DBM = -82.0   # bottom admissible tier, heavily penalized by weight
SUPPRESS_DB = 200.0  # an obstacle no radio gets through

# outdoor field calibration: admission (-85 dBm) reaches ~46 m, so a ~22 m
# grid pitch gives each node a handful of usable neighbours
FIELD_LINK = LinkModelParams(pl0_db=45.0, exponent=2.4)

# drills shut the random channel parts off and keep only per-packet noise
# small enough to never flip a delivery or a tier
DRILL_LINK = LinkModelParams(pl0_db=45.0, exponent=2.4,
                             shadow_sigma_db=0.0, noise_sigma_db=0.5)


def _grid_positions(seed: int, n: int = 24, cols: int = 5, spacing: float = 22.0,
                    jitter: float = 3.0, first_id: int = 2):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6F5D]))
    pos = {}
    nid = first_id
    rows = math.ceil(n / cols)
    for r in range(rows):
        for c in range(cols):
            if nid >= first_id + n:
                break
            dx = float(rng.uniform(-jitter, jitter)) if jitter else 0.0
            dy = float(rng.uniform(-jitter, jitter)) if jitter else 0.0
            pos[nid] = (c * spacing + dx, r * spacing + dy)
            nid += 1
    return pos


def _natural_mean_dbm(link: LinkModelParams, a, b) -> float:
    d = max(math.hypot(a[0] - b[0], a[1] - b[1]), 0.1)
    return link.tx_power_dbm - link.pl0_db - 10.0 * link.exponent * math.log10(d)


def _pin_links(positions: dict, wanted: dict, link: LinkModelParams = DRILL_LINK):
    """Obstacle map that forces exactly the wanted links at the wanted levels.

    wanted maps a node pair to a target mean RSSI; every other pair is
    suppressed outright.
    """
    targets = {(min(u, v), max(u, v)): t for (u, v), t in wanted.items()}
    obstacles = {}
    ids = sorted(positions)
    for i, u in enumerate(ids):
        for v in ids[i + 1:]:
            natural = _natural_mean_dbm(link, positions[u], positions[v])
            target = targets.get((u, v))
            if target is None:
                obstacles[(u, v)] = SUPPRESS_DB
            else:
                obstacles[(u, v)] = round(natural - target, 3)
    return obstacles


# ---------------------------------------------------------------- test cases


def test_case_1(seed: int = 1, rounds: int = 3) -> Scenario:
    """24 nodes on a jittered 22 m grid, 10-minute collection interval."""
    positions = _grid_positions(seed)
    snoopers = {sid: (x, y, -90.0) for sid, (x, y) in {
        101: (11.0, 11.0), 102: (55.0, 11.0), 103: (11.0, 55.0),
        104: (55.0, 55.0), 105: (77.0, 33.0), 106: (33.0, 77.0),
        107: (77.0, 77.0)}.items()}
    return Scenario(
        name="tc1", seed=seed, sink=2, positions=positions, link=FIELD_LINK,
        protocol=ProtocolParams(dci_us=600_000_000, slots_per_round=50,
                                rounds=rounds),
        snoopers=snoopers)


def test_case_2(seed: int = 1) -> Scenario:
    """Same field as test case 1 at a one-hour collection interval."""
    return Scenario(
        name="tc2", seed=seed, sink=2, positions=_grid_positions(seed),
        link=FIELD_LINK,
        protocol=ProtocolParams(dci_us=3_600_000_000, slots_per_round=30,
                                rounds=3))


def test_case_2_lossless(seed: int = 1) -> Scenario:
    """The one-hour test case shrunk onto a tight, noise-free field.

    Every pair sits above -70 dBm with no shadowing and no per-packet noise,
    so nothing is ever dropped and every node must deliver in every slot.
    """
    positions = _grid_positions(seed, spacing=1.7, jitter=0.0)
    link = replace(FIELD_LINK, shadow_sigma_db=0.0, noise_sigma_db=0.0)
    return Scenario(
        name="tc2-lossless", seed=seed, sink=2, positions=positions, link=link,
        protocol=ProtocolParams(dci_us=3_600_000_000, slots_per_round=30,
                                rounds=3))


def test_case_3(seed: int = 1) -> Scenario:
    """Three-hour collection interval with two mid-round failures."""
    return Scenario(
        name="tc3", seed=seed, sink=2, positions=_grid_positions(seed),
        link=FIELD_LINK,
        protocol=ProtocolParams(dci_us=10_800_000_000, slots_per_round=25,
                                rounds=1),
        slot_failures=[(0, 5, 25), (0, 12, 14)])


def stability_scenario(seed: int = 1) -> Scenario:
    """Five formation rounds over static links, for graph-similarity checks.

    Uses the stock link model (55 dB / 2.7), which reaches ~13 m, on an 8 m
    grid; shadowing is drawn once per pair and held, so round-to-round edge
    churn comes only from per-packet noise near the admission threshold.
    """
    positions = _grid_positions(seed, spacing=8.0, jitter=1.5)
    return Scenario(
        name="stability", seed=seed, sink=2, positions=positions,
        link=LinkModelParams(),
        protocol=ProtocolParams(dci_us=90_000_000, slots_per_round=2,
                                rounds=5))


# ---------------------------------------------------------------- drills


def _drill_params(slots: int = 8, **kw) -> ProtocolParams:
    return ProtocolParams(dci_us=90_000_000, slots_per_round=slots, rounds=1,
                          **kw)


def drill_leaf_failure(seed: int = 1) -> Scenario:
    """Two leaves (10 and 22) die as slot 0 opens.

    Tree: 2 -> {3, 7}, 3 -> {10, 11}, 7 -> {22, 23}. Their parents write them
    off after two silent slots; the rebuilt tree is the old one minus the two
    leaves, and every surviving node keeps its parent.
    """
    positions = {2: (0.0, 0.0), 3: (-8.0, 6.0), 7: (8.0, 6.0),
                 10: (-12.0, 14.0), 11: (-4.0, 14.0),
                 22: (4.0, 14.0), 23: (12.0, 14.0)}
    wanted = {(2, 3): GOOD_DBM, (2, 7): GOOD_DBM,
              (3, 10): GOOD_DBM, (3, 11): GOOD_DBM,
              (7, 22): GOOD_DBM, (7, 23): GOOD_DBM}
    return Scenario(
        name="drill-leaf", seed=seed, sink=2, positions=positions,
        link=DRILL_LINK, obstacles=_pin_links(positions, wanted),
        protocol=_drill_params(slots=6),
        slot_failures=[(0, 0, 10), (0, 0, 22)])


def drill_internal_failure(seed: int = 1) -> Scenario:
    """Interior node 13 dies as slot 3 opens, orphaning four children.

    Primary tree: 2 -> {3, 7}, 3 -> 13, 13 -> {10, 14, 16, 21}. Each orphan
    has one low-tier backup link (to 3 or 7) that only becomes the best path
    once 13 is gone. Expected timeline: slots 3-4 missed with retries to the
    cap, failure reported at the slot 5 entry, orphans deliver in slot 5.
    """
    positions = {2: (0.0, 0.0), 3: (-8.0, 6.0), 7: (8.0, 6.0),
                 13: (-8.0, 16.0),
                 10: (-16.0, 24.0), 14: (-8.0, 24.0),
                 16: (0.0, 24.0), 21: (-16.0, 16.0)}
    wanted = {(2, 3): GOOD_DBM, (2, 7): GOOD_DBM, (3, 13): GOOD_DBM,
              (10, 13): GOOD_DBM, (13, 14): GOOD_DBM,
              (13, 16): GOOD_DBM, (13, 21): GOOD_DBM,
              (3, 10): BACKUP_DBM, (3, 14): BACKUP_DBM,
              (7, 16): BACKUP_DBM, (7, 21): BACKUP_DBM}
    return Scenario(
        name="drill-internal", seed=seed, sink=2, positions=positions,
        link=DRILL_LINK, obstacles=_pin_links(positions, wanted),
        protocol=_drill_params(slots=8),
        slot_failures=[(0, 3, 13)])


def drill_same_branch_failure(seed: int = 1) -> Scenario:
    """Nodes 5 and 11 on one branch die together as slot 2 opens.

    Primary chain: 2 -> 4 -> 5 -> 11 -> 12, plus 6 under the sink and a
    low-tier 6-12 backup. Losing {5, 11} costs two rebuild stages: first 4
    reports 5 and the rebuilt tree routes 12 through 6 while adopting 11 as
    12's child; pushing that tree to dead 11 fails, so 12 reports 11 and the
    final tree is 2 -> {4, 6}, 6 -> 12.
    """
    positions = {2: (0.0, 0.0), 4: (-6.0, 6.0), 5: (-6.0, 14.0),
                 11: (-6.0, 22.0), 12: (2.0, 22.0), 6: (6.0, 6.0)}
    wanted = {(2, 4): GOOD_DBM, (4, 5): GOOD_DBM, (5, 11): GOOD_DBM,
              (11, 12): GOOD_DBM, (2, 6): GOOD_DBM,
              (6, 12): BACKUP_DBM}
    return Scenario(
        name="drill-samebranch", seed=seed, sink=2, positions=positions,
        link=DRILL_LINK, obstacles=_pin_links(positions, wanted),
        protocol=_drill_params(slots=8),
        slot_failures=[(0, 2, 5), (0, 2, 11)])


def wake_skew_scenario(seed: int = 1, initial_delay_us: int = 0) -> Scenario:
    """Two-level tree whose interior nodes wake one ack-timeout late.

    With no initial slot delay a leaf's first upload always beats its
    parent's radio and the retry lands just after it, so max tries per slot
    is exactly 2. A 500 ms initial delay absorbs the skew and restores
    single-try uploads.
    """
    positions = {2: (0.0, 0.0), 3: (-6.0, 6.0), 4: (6.0, 6.0),
                 10: (-10.0, 14.0), 11: (-2.0, 14.0),
                 12: (2.0, 14.0), 13: (10.0, 14.0)}
    wanted = {(2, 3): GOOD_DBM, (2, 4): GOOD_DBM,
              (3, 10): GOOD_DBM, (3, 11): GOOD_DBM,
              (4, 12): GOOD_DBM, (4, 13): GOOD_DBM}
    params = _drill_params(slots=10, initial_slot_delay_us=initial_delay_us,
                           nonleaf_wake_delay_us=250_000)
    return Scenario(
        name="wake-skew", seed=seed, sink=2, positions=positions,
        link=DRILL_LINK, obstacles=_pin_links(positions, wanted),
        protocol=params)


def dualloss_scenario(seed: int = 1) -> Scenario:
    """Every leaf upload is delivered but neither acked nor put to sleep.

    All 100 (slot, leaf) pairs lose both the DATA_ACK and the SLEEP toward
    the leaf: the parent holds the data, the leaf retries to the cap and
    falls back on its sleep timeout. Sink-side yield must stay perfect.
    """
    positions = {2: (0.0, 0.0), 3: (-6.0, 6.0), 4: (6.0, 6.0),
                 10: (-10.0, 14.0), 11: (-2.0, 14.0),
                 12: (2.0, 14.0), 13: (10.0, 14.0)}
    wanted = {(2, 3): GOOD_DBM, (2, 4): GOOD_DBM,
              (3, 10): GOOD_DBM, (3, 11): GOOD_DBM,
              (4, 12): GOOD_DBM, (4, 13): GOOD_DBM}
    loss = [(0, s, leaf) for s in range(25) for leaf in (10, 11, 12, 13)]
    return Scenario(
        name="dualloss", seed=seed, sink=2, positions=positions,
        link=DRILL_LINK, obstacles=_pin_links(positions, wanted),
        protocol=ProtocolParams(dci_us=120_000_000, slots_per_round=25,
                                rounds=1),
        ack_sleep_loss=loss)


def overnight_energy_scenario(seed: int = 1) -> Scenario:
    """Ten-minute interval from 18:30 through the night; no charging.

    Per-packet noise is raised to fading levels so end-of-slot broadcasts
    are lost now and then on marginal tree edges. A node that misses one
    idles to its sleep timeout, which is what spreads the per-node energy
    bill; with quiet links every node would drain identically.
    """
    link = replace(FIELD_LINK, noise_sigma_db=3.0)
    return Scenario(
        name="overnight", seed=seed, sink=2, positions=_grid_positions(seed),
        link=link,
        protocol=ProtocolParams(dci_us=600_000_000, slots_per_round=60,
                                rounds=1))


CANNED = {
    "tc1": test_case_1,
    "tc2": test_case_2,
    "tc2-lossless": test_case_2_lossless,
    "tc3": test_case_3,
    "stability": stability_scenario,
    "drill-leaf": drill_leaf_failure,
    "drill-internal": drill_internal_failure,
    "drill-samebranch": drill_same_branch_failure,
    "wake-skew": wake_skew_scenario,
    "dualloss": dualloss_scenario,
    "overnight": overnight_energy_scenario,
}


# ---------------------------------------------------------------- YAML form


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "seed": sc.seed,
        "sink": sc.sink,
        "positions": {int(n): [float(x), float(y)]
                      for n, (x, y) in sorted(sc.positions.items())},
        "protocol": asdict(sc.protocol),
        "link": asdict(sc.link),
        "obstacles": [[int(u), int(v), float(db)]
                      for (u, v), db in sorted(sc.obstacles.items())],
        "snoopers": {int(s): [float(x), float(y), float(sens)]
                     for s, (x, y, sens) in sorted(sc.snoopers.items())},
        "start_clock_s": sc.start_clock_s,
        "solar_rate_ma": sc.solar_rate_ma,
        "daylight": [sc.daylight.start_s, sc.daylight.end_s],
        "battery_mah": {int(n): float(m) for n, m in sorted(sc.battery_mah.items())},
        "failures": [[int(t), int(n)] for t, n in sc.failures],
        "slot_failures": [[int(r), int(s), int(n)] for r, s, n in sc.slot_failures],
        "ack_sleep_loss": [[int(r), int(s), int(c)] for r, s, c in sc.ack_sleep_loss],
        "forced_drops": [dict(rule) for rule in sc.forced_drops],
        "drift_ppm_max": sc.drift_ppm_max,
        "turn_on_spread_us": sc.turn_on_spread_us,
        "sink_turn_on_us": sc.sink_turn_on_us,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version: {version!r}")
    try:
        daylight = doc.get("daylight")
        return Scenario(
            name=str(doc["name"]),
            seed=int(doc["seed"]),
            sink=int(doc["sink"]),
            positions={int(n): (float(p[0]), float(p[1]))
                       for n, p in doc["positions"].items()},
            protocol=ProtocolParams(**doc.get("protocol", {})),
            link=LinkModelParams(**doc.get("link", {})),
            obstacles={(int(u), int(v)): float(db)
                       for u, v, db in doc.get("obstacles", [])},
            snoopers={int(s): (float(p[0]), float(p[1]), float(p[2]))
                      for s, p in doc.get("snoopers", {}).items()},
            start_clock_s=float(doc.get("start_clock_s", 66_600.0)),
            solar_rate_ma=float(doc.get("solar_rate_ma", 0.0)),
            daylight=(DaylightWindow(float(daylight[0]), float(daylight[1]))
                      if daylight else DaylightWindow()),
            battery_mah={int(n): float(m)
                         for n, m in doc.get("battery_mah", {}).items()},
            failures=[(int(t), int(n)) for t, n in doc.get("failures", [])],
            slot_failures=[(int(r), int(s), int(n))
                           for r, s, n in doc.get("slot_failures", [])],
            ack_sleep_loss=[(int(r), int(s), int(c))
                            for r, s, c in doc.get("ack_sleep_loss", [])],
            forced_drops=[dict(rule) for rule in doc.get("forced_drops", [])],
            drift_ppm_max=float(doc.get("drift_ppm_max", 40.0)),
            turn_on_spread_us=int(doc.get("turn_on_spread_us", 1_000_000)),
            sink_turn_on_us=int(doc.get("sink_turn_on_us", 2_000_000)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed scenario document: {exc}") from exc


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError("scenario file does not hold a mapping")
    return scenario_from_dict(doc)
