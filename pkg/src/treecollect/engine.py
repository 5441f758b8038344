"""Discrete-event simulator driving one NodeMachine per field node.

Time is integer microseconds on a single global axis. Every transmission is
instantaneous; receivers get an independent per-packet noise draw on top of
the pair's static channel. The whole run is deterministic given (scenario,
seed): random streams are keyed by purpose and node, never shared, and every
same-time tie is broken by scheduling order.

The engine also owns everything physical the protocol abstracts away: clocks
with drift, batteries with load-dependent terminal voltage, solar charging
windows, sensing, node failures, and the injected losses used by tests.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import trace as tr
from .battery import (MEASUREMENT_LOAD_A, BatteryState, CurrentProfile,
                      DaylightWindow, drain, ocv_from_loaded, solar_charge)
from .clock import HardwareClock
from .core import BROADCAST, Message, MsgKind, NodeId, SensorReading
from .protocol import NodeMachine, ProtocolParams
from .radio import LinkModelParams, PairChannel, mean_rssi, packet_delivered

# nominal on-air time charged to the battery per transmitted frame
TX_EVENT_MS = 4.0

# str(MsgKind.X) goes through the enum descriptor machinery; the hot paths
# stringify every send and reception, so look the names up once
_KIND_STR = {k: str(k) for k in MsgKind}


class _NoiseBuffer:
    """Block-drawn per-packet noise; one buffer per independent stream."""

    __slots__ = ("gen", "sigma", "_buf", "_i")

    def __init__(self, gen: np.random.Generator, sigma: float):
        self.gen = gen
        self.sigma = sigma
        self._buf = None
        self._i = 0

    def next(self) -> float:
        if self.sigma == 0.0:
            return 0.0
        if self._buf is None or self._i >= len(self._buf):
            self._buf = self.gen.normal(0.0, self.sigma, 512)
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return float(v)


@dataclass
class Scenario:
    """Everything a run needs: field layout, radio environment, protocol
    configuration, and any scripted mishaps."""

    name: str
    seed: int
    sink: NodeId
    positions: dict[NodeId, tuple[float, float]]
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    link: LinkModelParams = field(default_factory=LinkModelParams)
    obstacles: dict[tuple[NodeId, NodeId], float] = field(default_factory=dict)
    # snooper id -> (x, y, listening sensitivity in dBm)
    snoopers: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    start_clock_s: float = 18 * 3600.0 + 30 * 60.0  # runs start in the evening
    solar_rate_ma: float = 0.0
    daylight: DaylightWindow = field(default_factory=DaylightWindow)
    battery_mah: dict[NodeId, float] = field(default_factory=dict)
    failures: list[tuple[int, NodeId]] = field(default_factory=list)
    # kill a node the moment the sink opens a given (round, slot)
    slot_failures: list[tuple[int, int, NodeId]] = field(default_factory=list)
    ack_sleep_loss: list[tuple[int, int, NodeId]] = field(default_factory=list)
    forced_drops: list[dict] = field(default_factory=list)
    drift_ppm_max: float = 40.0
    turn_on_spread_us: int = 1_000_000
    sink_turn_on_us: int = 2_000_000

    def __post_init__(self):
        if self.sink not in self.positions:
            raise ValueError("sink must have a position")
        if BROADCAST in self.positions:
            raise ValueError(f"node id {BROADCAST} is reserved for broadcast")
        if any(n <= 0 for n in self.positions):
            raise ValueError("node ids must be positive")
        overlap = set(self.snoopers) & set(self.positions)
        if overlap:
            raise ValueError(f"snooper ids collide with node ids: {sorted(overlap)}")
        for t_us, node in self.failures:
            if node == self.sink:
                raise ValueError("the sink cannot be scheduled to fail")
            if node not in self.positions:
                raise ValueError(f"failure names unknown node {node}")
        for rnd, slot, node in self.slot_failures:
            if node == self.sink:
                raise ValueError("the sink cannot be scheduled to fail")
            if node not in self.positions:
                raise ValueError(f"slot failure names unknown node {node}")
            if rnd < 0 or slot < 0:
                raise ValueError("slot failure round and slot must be >= 0")

    @property
    def node_ids(self) -> list[NodeId]:
        return sorted(self.positions)


@dataclass
class RunMetrics:
    """Counters the engine maintains during the run.

    The trace analyzer recomputes the same quantities from the trace file;
    tests hold the two views equal.
    """

    sends: dict[tuple[int, str], int] = field(default_factory=dict)
    recvs: dict[tuple[int, str], int] = field(default_factory=dict)
    # (round, origin) -> slots whose reading reached the sink
    yields_: dict[tuple[int, NodeId], set[int]] = field(default_factory=dict)
    # (round, slot) -> origins assembled
    assemblies: dict[tuple[int, int], list[NodeId]] = field(default_factory=dict)
    # (round, node, slot) -> highest attempt number over that slot's uploads
    data_tries: dict[tuple[int, NodeId, int], int] = field(default_factory=dict)
    # (round, slot, child): the child's upload was heard by its parent
    data_at_parent: set[tuple[int, int, NodeId]] = field(default_factory=set)
    # (round, slot, node): node received a confirmation / end-of-slot broadcast
    ack_rx: set[tuple[int, int, NodeId]] = field(default_factory=set)
    sleep_rx: set[tuple[int, int, NodeId]] = field(default_factory=set)
    # every tree the sink published: (round, stage, edge_lines, parent_map)
    topologies: list[tuple[int, int, str, dict]] = field(default_factory=list)
    rounds_seen: int = 0

    def bump(self, table: dict, key, n: int = 1) -> None:
        table[key] = table.get(key, 0) + n


class _NodeCtx:
    """The window a NodeMachine gets onto the simulated world."""

    __slots__ = ("eng", "nid")

    def __init__(self, eng: "SimEngine", nid: NodeId):
        self.eng = eng
        self.nid = nid

    def local_time(self) -> float:
        return self.eng.clocks[self.nid].local_time(self.eng.now)

    def real_now(self) -> int:
        return self.eng.now

    def mac_timestamp(self) -> float:
        return self.eng.mac_timestamp(self.nid)

    def schedule(self, delay_us: int, tag: tuple) -> None:
        self.eng.schedule(self.eng.now + int(delay_us), self.eng._fire_timer,
                          self.nid, tag)

    def schedule_at_real(self, t_us: int, tag: tuple) -> None:
        self.eng.schedule(max(self.eng.now, int(t_us)), self.eng._fire_timer,
                          self.nid, tag)

    def schedule_at_local(self, local_us: float, tag: tuple) -> None:
        t = int(round(self.eng.clocks[self.nid].real_time_for_local(local_us)))
        self.eng.schedule(max(self.eng.now, t), self.eng._fire_timer,
                          self.nid, tag)

    def send(self, msg: Message, slot: int = -1, extra: dict | None = None) -> None:
        self.eng.transmit(self.nid, msg, slot, extra or {})

    def radio(self, on: bool) -> None:
        self.eng.set_radio(self.nid, on)

    def rng(self, purpose: str) -> np.random.Generator:
        return self.eng.rng(purpose, self.nid)

    def sense(self, slot: int) -> dict:
        return self.eng.sense(self.nid, slot)

    def capacity_estimate_mah(self) -> float:
        return self.eng.capacity_estimate(self.nid)

    def trace(self, kind: str, msg: str = "-", slot: int = -1,
              rssi: float | None = None, extra: dict | None = None,
              src: int | None = None, dst: int | None = None,
              seq: int | None = None) -> None:
        self.eng.emit(tr.TraceEvent(t_us=self.eng.now, node=self.nid, kind=kind,
                                    msg=msg, src=src, dst=dst, seq=seq,
                                    slot=slot, rssi=rssi, extra=extra or {}))

    # metric hooks, called by the sink and by every node at slot close
    def report_topology(self, round_no, stage, graph, tree) -> None:
        self.eng.metrics.topologies.append(
            (round_no, stage, graph.to_edge_lines(), dict(tree.parent)))

    def report_assembly(self, round_no, slot, origins) -> None:
        self.eng.metrics.assemblies[(round_no, slot)] = list(origins)
        for origin in origins:
            self.eng.metrics.yields_.setdefault((round_no, origin), set()).add(slot)

    def report_slot_stats(self, round_no, slot, max_try) -> None:
        if max_try > 0:
            self.eng.metrics.data_tries[(round_no, self.nid, slot)] = max_try


class SimEngine:
    def __init__(self, scenario: Scenario, trace_path=None, snoop_path=None,
                 keep_trace: bool = True, digest: bool = True,
                 max_events: int = 50_000_000):
        self.sc = scenario
        self.params = scenario.protocol
        self.now = 0
        self._heap: list = []
        self._evno = 0
        self._max_events = max_events
        self._streams: dict[tuple, np.random.Generator] = {}

        self.keep_trace = keep_trace
        self.events: list[tr.TraceEvent] = []
        self.snoops: list[tr.TraceEvent] = []
        self._trace_path = trace_path
        self._snoop_path = snoop_path
        self._trace_fh = None
        self._digest = hashlib.sha256() if digest else None
        self.metrics = RunMetrics()
        self.cur_round = 0

        p = scenario.protocol
        self.profile = CurrentProfile()
        self.clocks: dict[NodeId, HardwareClock] = {}
        self.batteries: dict[NodeId, BatteryState] = {}
        self.machines: dict[NodeId, NodeMachine] = {}
        self.radio_on: dict[NodeId, bool] = {}
        self._acct: dict[NodeId, dict] = {}
        self._channels: dict[tuple[NodeId, NodeId], PairChannel] = {}
        self._snoop_channels: dict[tuple[int, NodeId], PairChannel] = {}

        for nid in scenario.node_ids:
            if nid == scenario.sink:
                self.clocks[nid] = HardwareClock(drift_ppm=0.0, boot_offset_us=0.0)
            else:
                g = self.rng("clock", nid)
                drift = float(g.uniform(-scenario.drift_ppm_max, scenario.drift_ppm_max))
                offset = float(g.uniform(0.0, 1_000_000.0))
                self.clocks[nid] = HardwareClock(drift_ppm=drift, boot_offset_us=offset)
            start = scenario.battery_mah.get(nid, BatteryState().rated_mah)
            self.batteries[nid] = BatteryState(remaining_mah=start)
            self.machines[nid] = NodeMachine(nid, nid == scenario.sink, p,
                                             _NodeCtx(self, nid))
            self.radio_on[nid] = False
            self._acct[nid] = {"last_t": 0, "radio_ms": 0.0, "tx_ms": 0.0,
                               "slept_ms": 0.0, "sensed": 0}

        ids = scenario.node_ids
        for i, u in enumerate(ids):
            for v in ids[i + 1:]:
                self._channels[(u, v)] = self._make_channel(
                    scenario.positions[u], scenario.positions[v], (u, v))
        for sid in sorted(scenario.snoopers):
            for u in ids:
                self._snoop_channels[(sid, u)] = self._make_channel(
                    scenario.snoopers[sid][:2], scenario.positions[u],
                    ("snooppair", sid, u))

        # positions and shadowing never move mid-run, so the noise-free part
        # of every rssi sample can be fixed here instead of per packet
        self._pair_dbm = {key: mean_rssi(scenario.link, chan)
                          for key, chan in self._channels.items()}
        self._snoop_dbm = {key: mean_rssi(scenario.link, chan)
                           for key, chan in self._snoop_channels.items()}
        self._noise = {v: _NoiseBuffer(self.rng("noise", v),
                                       scenario.link.noise_sigma_db)
                       for v in ids}
        self._snoop_noise = {sid: _NoiseBuffer(self.rng("snoopnoise", sid),
                                               scenario.link.noise_sigma_db)
                             for sid in sorted(scenario.snoopers)}
        # pairs whose mean sits 8 sigma under the sensitivity floor can never
        # deliver (tail mass ~1e-15); leave them out of the fan-out entirely
        cutoff = scenario.link.sensitivity_dbm - 8.0 * scenario.link.noise_sigma_db
        self._audible: dict[NodeId, list[NodeId]] = {u: [] for u in ids}
        for (u, v), dbm in self._pair_dbm.items():
            if dbm >= cutoff:
                self._audible[u].append(v)
                self._audible[v].append(u)
        self._snoop_audible: dict[NodeId, list[int]] = {u: [] for u in ids}
        for (sid, u), dbm in self._snoop_dbm.items():
            if dbm >= (scenario.snoopers[sid][2]
                       - 8.0 * scenario.link.noise_sigma_db):
                self._snoop_audible[u].append(sid)
        self._recording = (self._digest is not None or trace_path is not None
                           or keep_trace)
        # snoopers only observe; skip them when nobody keeps their stream
        self._snooping = bool(scenario.snoopers) and (keep_trace
                                                      or snoop_path is not None)

        self._sleep_loss = {(r, s, c) for r, s, c in scenario.ack_sleep_loss}
        self._drops = [dict(rule) for rule in scenario.forced_drops]
        self._has_drops = bool(self._sleep_loss) or bool(self._drops)
        self._slot_kills: dict[tuple[int, int], list[NodeId]] = {}
        for rnd, slot, nid in scenario.slot_failures:
            self._slot_kills.setdefault((rnd, slot), []).append(nid)

    # ----------------------------------------------------------------- setup

    def _make_channel(self, pos_a, pos_b, shadow_key) -> PairChannel:
        d = math.hypot(pos_a[0] - pos_b[0], pos_a[1] - pos_b[1])
        d = max(d, 0.1)  # co-located radios still obey the model floor
        if isinstance(shadow_key[0], str):
            obstacle = 0.0
            stream_key = shadow_key
        else:
            u, v = shadow_key
            obstacle = self.sc.obstacles.get((min(u, v), max(u, v)), 0.0)
            stream_key = ("shadow", min(u, v), max(u, v))
        shadow = float(self.rng(*stream_key).normal(0.0, self.sc.link.shadow_sigma_db))
        return PairChannel(distance_m=d, obstacle_penalty_db=obstacle,
                           shadow_offset_db=shadow)

    def rng(self, *key) -> np.random.Generator:
        """Independent stream per key, stable no matter the creation order."""
        g = self._streams.get(key)
        if g is None:
            words = [int.from_bytes(hashlib.md5(repr(k).encode()).digest()[:8], "big")
                     for k in key]
            seq = np.random.SeedSequence([self.sc.seed] + words)
            g = np.random.default_rng(seq)
            self._streams[key] = g
        return g

    # -------------------------------------------------------------- schedule

    def schedule(self, t_us: int, fn, *args) -> None:
        self._evno += 1
        heapq.heappush(self._heap, (t_us, self._evno, fn, args))

    def _fire_timer(self, nid: NodeId, tag: tuple) -> None:
        self.machines[nid].on_timer(tag)

    # ----------------------------------------------------------------- trace

    def emit(self, ev: tr.TraceEvent) -> None:
        if self._digest is not None or self._trace_fh is not None:
            line = ev.encode()
            if self._digest is not None:
                self._digest.update(line.encode())
                self._digest.update(b"\n")
            if self._trace_fh is not None:
                self._trace_fh.write(line + "\n")
        if self.keep_trace:
            self.events.append(ev)
        if ev.kind == tr.ROUND:
            self.cur_round = int(ev.extra["round"])
            self.metrics.rounds_seen = max(self.metrics.rounds_seen,
                                           self.cur_round + 1)
            # keep the snooper log sliceable by round too
            self.snoops.append(ev)
        elif ev.kind == tr.META and ev.msg == "run":
            self.snoops.append(ev)
        elif (self._slot_kills and ev.kind == tr.STATE
              and ev.node == self.sc.sink
              and ev.extra.get("state") == tr.ACTIVE_SLOT):
            for nid in self._slot_kills.pop((self.cur_round, ev.slot), ()):
                self.schedule(self.now, self._kill, nid)

    def trace_digest(self) -> str | None:
        return None if self._digest is None else self._digest.hexdigest()

    # ----------------------------------------------------------------- radio

    def mac_timestamp(self, nid: NodeId) -> float:
        m = self.machines[nid]
        if m.is_sink:
            base = float(self.now)
        else:
            base = m.est.global_time(self.clocks[nid].local_time(self.now))
        j = self.params.mac_jitter_us
        noise = float(self.rng("jitter", nid).uniform(-j, j)) if j > 0 else 0.0
        return base + noise

    def transmit(self, src: NodeId, msg: Message, slot: int, extra: dict) -> None:
        if not self.radio_on[src]:
            raise RuntimeError(f"node {src} transmitted {msg.kind} with its radio off")
        self._acct[src]["tx_ms"] += TX_EVENT_MS
        kind_str = _KIND_STR[msg.kind]
        if self._recording:
            self.emit(tr.TraceEvent(t_us=self.now, node=src, kind=tr.SEND,
                                    msg=kind_str, src=src, dst=msg.dst,
                                    seq=msg.seq, slot=slot, extra=extra))
        sends = self.metrics.sends
        skey = (self.cur_round, kind_str)
        sends[skey] = sends.get(skey, 0) + 1
        if msg.kind is MsgKind.DATA and "try" in extra:
            key = (self.cur_round, src, msg.payload.get("slot", slot))
            prev = self.metrics.data_tries.get(key, 0)
            self.metrics.data_tries[key] = max(prev, int(extra["try"]))

        radio_on = self.radio_on
        machines = self.machines
        if msg.dst == BROADCAST:
            targets = [v for v in self._audible[src] if radio_on[v]
                       and machines[v].state != tr.DEAD]
        else:
            v = msg.dst
            targets = [v] if (radio_on.get(v) and machines[v].state != tr.DEAD
                              and v in self._audible[src]) else []
        pair_dbm = self._pair_dbm
        noise = self._noise
        floor = self.sc.link.sensitivity_dbm
        check_drops = self._has_drops
        for v in targets:
            if check_drops and self._dropped(msg, src, v):
                continue
            rssi = pair_dbm[(src, v) if src < v else (v, src)] + noise[v].next()
            if rssi >= floor:
                self.schedule(self.now, self._deliver, v, msg, rssi, slot)

        if self._snooping:
            for sid in self._snoop_audible[src]:
                rssi = self._snoop_dbm[(sid, src)] + self._snoop_noise[sid].next()
                if packet_delivered(rssi, self.sc.snoopers[sid][2]):
                    self.snoops.append(tr.TraceEvent(
                        t_us=self.now, node=sid, kind=tr.SNOOP, msg=kind_str,
                        src=src, dst=msg.dst, seq=msg.seq, slot=slot, rssi=rssi,
                        extra={"try": extra["try"]} if "try" in extra else {}))

    def _dropped(self, msg: Message, src: NodeId, dst: NodeId) -> bool:
        if self._sleep_loss:
            if msg.kind is MsgKind.DATA_ACK:
                key = (self.cur_round, msg.payload.get("slot"), dst)
                if key in self._sleep_loss:
                    return True
            elif msg.kind is MsgKind.SLEEP:
                key = (self.cur_round, msg.payload.get("slot"), dst)
                if key in self._sleep_loss:
                    return True
        for rule in self._drops:
            if (rule.get("count", 0) > 0
                    and rule["kind"] == _KIND_STR[msg.kind]
                    and rule.get("src", src) == src
                    and rule.get("dst", dst) == dst):
                rule["count"] -= 1
                return True
        return False

    def _deliver(self, dst: NodeId, msg: Message, rssi: float, slot: int) -> None:
        m = self.machines[dst]
        if m.state == tr.DEAD or not self.radio_on[dst]:
            return  # receiver vanished between transmission and pickup
        if self._recording:
            self.emit(tr.TraceEvent(t_us=self.now, node=dst, kind=tr.RECV,
                                    msg=_KIND_STR[msg.kind], src=msg.src,
                                    dst=msg.dst, seq=msg.seq, slot=slot,
                                    rssi=rssi))
        recvs = self.metrics.recvs
        rkey = (self.cur_round, _KIND_STR[msg.kind])
        recvs[rkey] = recvs.get(rkey, 0) + 1
        if msg.kind is MsgKind.DATA:
            self.metrics.data_at_parent.add(
                (self.cur_round, msg.payload["slot"], msg.src))
        elif msg.kind is MsgKind.DATA_ACK:
            self.metrics.ack_rx.add((self.cur_round, msg.payload["slot"], dst))
        elif msg.kind is MsgKind.SLEEP:
            self.metrics.sleep_rx.add((self.cur_round, msg.payload["slot"], dst))
        m.on_message(msg, rssi)

    def set_radio(self, nid: NodeId, on: bool) -> None:
        if nid == self.sc.sink:
            on = True  # the collector's radio never powers down
        if self.radio_on[nid] == on:
            return
        self._settle_energy(nid)
        self.radio_on[nid] = on

    # ---------------------------------------------------------------- energy

    def _settle_energy(self, nid: NodeId) -> None:
        acct = self._acct[nid]
        elapsed_ms = (self.now - acct["last_t"]) / 1000.0
        if self.radio_on[nid]:
            acct["radio_ms"] += elapsed_ms
        else:
            acct["slept_ms"] += elapsed_ms
        radio_ms = acct["radio_ms"]
        tx_ms = min(acct["tx_ms"], radio_ms)
        tx_fraction = tx_ms / radio_ms if radio_ms > 0 else 0.0
        state = drain(self.batteries[nid], self.profile, radio_on_ms=radio_ms,
                      tx_fraction=tx_fraction, sensed=acct["sensed"],
                      slept_ms=acct["slept_ms"])
        if self.sc.solar_rate_ma > 0:
            lit = self.sc.daylight.overlap_s(
                self.sc.start_clock_s + acct["last_t"] / 1e6,
                (self.now - acct["last_t"]) / 1e6)
            if lit > 0:
                state = solar_charge(state, self.sc.solar_rate_ma, lit)
        self.batteries[nid] = state
        acct["last_t"] = self.now
        acct["radio_ms"] = acct["tx_ms"] = acct["slept_ms"] = 0.0
        acct["sensed"] = 0

    def capacity_estimate(self, nid: NodeId) -> float:
        """What the node believes its battery holds, via its own voltmeter."""
        self._settle_energy(nid)
        bat = self.batteries[nid]
        v_loaded = bat.reported_voltage_mv() / 1000.0
        soc = bat.curve.soc_from_ocv(ocv_from_loaded(v_loaded, MEASUREMENT_LOAD_A,
                                                     bat.r0_ohm))
        return soc * bat.rated_mah

    def sense(self, nid: NodeId, slot: int) -> dict:
        self._settle_energy(nid)
        self._acct[nid]["sensed"] += 1
        g = self.rng("sense", nid)
        sod = (self.sc.start_clock_s + self.now / 1e6) % 86400.0
        day_phase = math.sin(2.0 * math.pi * (sod - 9 * 3600.0) / 86400.0)
        lag_phase = math.sin(2.0 * math.pi * (sod - 11 * 3600.0) / 86400.0)
        reading = SensorReading(
            node=nid,
            slot=slot,
            soil_moisture_pct=float(np.clip(34.0 - 2.0 * lag_phase + g.normal(0, 0.4),
                                            0.0, 100.0)),
            soil_temp_c=14.0 + 3.0 * lag_phase + float(g.normal(0, 0.2)),
            air_temp_c=15.0 + 7.0 * day_phase + float(g.normal(0, 0.5)),
            rel_humidity_pct=float(np.clip(68.0 - 18.0 * day_phase + g.normal(0, 1.0),
                                           0.0, 100.0)),
            battery_mv=self.batteries[nid].reported_voltage_mv(),
        )
        reading.validate()
        return dict(vars(reading))  # flat dataclass; asdict recursion not needed

    # -------------------------------------------------------------- failures

    def _kill(self, nid: NodeId) -> None:
        m = self.machines[nid]
        if m.state == tr.DEAD:
            return
        self._settle_energy(nid)
        self.radio_on[nid] = False
        m.state = tr.DEAD
        self.emit(tr.TraceEvent(t_us=self.now, node=nid, kind=tr.STATE,
                                slot=m.cur_slot, extra={"state": tr.DEAD}))

    # ------------------------------------------------------------------- run

    def _turn_on(self, nid: NodeId) -> None:
        self.machines[nid].on_turn_on()

    def run(self) -> RunMetrics:
        p = self.params
        if self._trace_path is not None:
            self._trace_fh = open(self._trace_path, "w", encoding="utf-8")
            self._trace_fh.write(tr.HEADER + "\n")
        if self._digest is not None:
            self._digest.update(tr.HEADER.encode())
            self._digest.update(b"\n")

        self.emit(tr.TraceEvent(
            t_us=0, node=self.sc.sink, kind=tr.META, msg="run",
            extra={"schema": 1, "scenario": self.sc.name, "seed": self.sc.seed,
                   "n": len(self.sc.positions), "sink": self.sc.sink,
                   "k": p.ndm_count, "slots": p.slots_per_round,
                   "rounds": p.rounds, "dci_us": p.dci_us,
                   "max_retries": p.max_retries}))

        for nid in self.sc.node_ids:
            if nid == self.sc.sink:
                t = self.sc.sink_turn_on_us
            else:
                t = int(self.rng("turn_on", nid).integers(0, self.sc.turn_on_spread_us))
            self.schedule(t, self._turn_on, nid)
        for t_us, nid in sorted(self.sc.failures):
            self.schedule(int(t_us), self._kill, nid)

        n_fired = 0
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            fn(*args)
            n_fired += 1
            if n_fired > self._max_events:
                raise RuntimeError(f"event budget exhausted ({self._max_events}); "
                                   "the run is likely stuck in a scheduling loop")

        for nid in self.sc.node_ids:
            self._settle_energy(nid)
        if self._trace_fh is not None:
            self._trace_fh.close()
            self._trace_fh = None
        if self._snoop_path is not None:
            tr.write_trace(self._snoop_path, self.snoops)
        return self.metrics


def run_scenario(scenario: Scenario, trace_path=None, snoop_path=None,
                 keep_trace: bool = True, digest: bool = True,
                 max_events: int = 50_000_000) -> SimEngine:
    """Run a scenario to completion and hand back the engine for inspection."""
    eng = SimEngine(scenario, trace_path=trace_path, snoop_path=snoop_path,
                    keep_trace=keep_trace, digest=digest, max_events=max_events)
    eng.run()
    return eng
