"""Per-node protocol state machine.

Every node (the sink included) walks the same phase sequence each round:

    DISCOVERY -> FLOODING -> AWAIT_CDM -> SYNCING -> (ACTIVE_SLOT -> SLEEPING)*

Discovery measures neighbour links, flooding carries every node's neighbour
list to the sink, the sink builds the collection tree and pushes it back out
(CDM), timestamped broadcasts synchronize clocks, and then data flows up the
tree once per slot. End-of-slot broadcasts both put nodes to sleep and refresh
their clock estimates. Parents that stop hearing a child report it up the
tree and the sink rebuilds around it.

Machines are engine-agnostic: they talk to the world through a small context
object (send, schedule, clocks, rng, trace) that the simulator provides.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import trace as tr
from .clock import SkewEstimate, SyncTable, estimate_skew
from .core import (BROADCAST, CollectionTree, LinkRecord, Message, MsgKind,
                   NetworkGraph, NodeId, dijkstra_spt, edge_weight,
                   rebuild_without, subtree_height, symmetrize)
from .radio import tier_cost

# weights travel in NBM payloads at fixed-point resolution
WEIGHT_RESOLUTION = 0.01

# one frame's airtime; an ack timeout can only start once the frame is out,
# so retries are spaced ack_timeout + frame time apart
FRAME_TIME_US = 4_000


@dataclass(frozen=True)
class ProtocolParams:
    """Shared node configuration; times in microseconds."""

    ndm_count: int = 60
    ndm_interval_us: int = 5_000_000
    ndm_window_us: int = 300_000_000
    admission_fraction: float = 0.75
    rssi_threshold_dbm: float = -85.0
    max_retries: int = 10
    ack_timeout_us: int = 250_000
    child_timeout_us: int = 2_000_000
    sleep_timeout_us: int = 60_000_000
    dc_timeout_us: int = 120_000_000
    quiet_timeout_us: int = 30_000_000
    flood_stagger_us: int = 2_000_000
    inter_item_gap_us: int = 50_000
    sync_interval_us: int = 30_000_000
    trigger_delay_us: int = 120_000_000
    sync_guard_us: int = 300_000_000
    failure_miss_threshold: int = 2
    dci_us: int = 600_000_000
    slots_per_round: int = 50
    rounds: int = 1
    initial_slot_delay_us: int = 500_000
    payload_capacity: int = 8
    nbm_queue_bound: int = 32
    nonleaf_wake_delay_us: int = 0
    mac_jitter_us: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.admission_fraction <= 1.0:
            raise ValueError("admission_fraction must be in (0, 1]")
        if self.slots_per_round < 1 or self.rounds < 1:
            raise ValueError("need at least one slot and one round")
        if self.payload_capacity < 1:
            raise ValueError("payload_capacity must be >= 1")
        if self.failure_miss_threshold < 1:
            raise ValueError("failure_miss_threshold must be >= 1")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass
class _Outstanding:
    msg: Message
    tries: int = 1
    awaiting: set = field(default_factory=set)  # NBM only: neighbours yet to ack


class NodeMachine:
    """One node's protocol logic, driven by the simulator through callbacks."""

    def __init__(self, node_id: NodeId, is_sink: bool, params: ProtocolParams, ctx):
        self.id = node_id
        self.is_sink = is_sink
        self.params = params
        self.ctx = ctx

        self.state: str | None = None
        self.round_no = -1
        self.seq = 0

        # discovery
        self.neighbour_table: dict[NodeId, LinkRecord] = {}
        self.ndm_sent = 0
        self.ndm_started = False
        self.admitted: dict[NodeId, float] = {}  # neighbour -> directed weight

        # flooding
        self.send_queue: list[dict] = []
        self.seen_origins: set[NodeId] = set()
        self.quiet_token = 0
        self.flood_active_item: int | None = None

        # tree / dissemination
        self.parent: NodeId | None = None
        self.children: list[NodeId] = []
        self.below_me = 0  # levels of tree hanging under this node
        self.tree_stage = -1

        # synchronization
        self.sync_table = SyncTable()
        self.est: SkewEstimate | None = None
        self.synced_reported = False
        self.children_synced: set[NodeId] = set()
        self.sync_ticking = False
        self.trigger_us: float | None = None

        # slots
        self.cur_slot = -1
        self.slot_closed = True
        self.slot_open_local = 0.0
        self.sensed = False
        self.readings: list[dict] = []
        self.child_done: set[NodeId] = set()
        self.child_heard: set[NodeId] = set()
        self.aggregate_sent = False
        self.slot_packets: list[Message] = []
        self.slot_max_try = 0
        self.miss_counts: dict[NodeId, int] = {}
        self.written_off: set[NodeId] = set()
        self.pending_up: list[Message] = []

        # reliable unicast bookkeeping, seq -> _Outstanding
        self.outstanding: dict[int, _Outstanding] = {}

        # sink only
        self.sink_nbm_store: dict[NodeId, dict] = {}
        self.graph: NetworkGraph | None = None
        self.tree: CollectionTree | None = None
        self.failed_nodes: set[NodeId] = set()
        self.rebuild_pending = False
        self.slot_readings: dict[NodeId, dict] = {}
        self.assembled = False
        self.sync_guard_armed = False

    # ------------------------------------------------------------------ utils

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def set_state(self, new_state: str, **extra) -> None:
        self.state = new_state
        self.ctx.trace(tr.STATE, slot=self.cur_slot,
                       extra={"state": new_state, **extra})

    def global_now(self) -> float:
        """This node's best idea of the shared time axis."""
        local = self.ctx.local_time()
        if self.is_sink or self.est is None:
            return local
        return self.est.global_time(local)

    def is_leaf(self) -> bool:
        return not self.children

    def _broadcast(self, kind: MsgKind, payload: dict, slot: int = -1,
                   **extra) -> Message:
        msg = Message(kind=kind, src=self.id, dst=BROADCAST,
                      seq=self.next_seq(), payload=payload)
        self.ctx.send(msg, slot=slot, extra=extra)
        return msg

    def _unicast(self, kind: MsgKind, dst: NodeId, payload: dict,
                 slot: int = -1, **extra) -> Message:
        msg = Message(kind=kind, src=self.id, dst=dst, seq=self.next_seq(),
                      payload=payload)
        self.ctx.send(msg, slot=slot, extra=extra)
        return msg

    def _reliable_send(self, kind: MsgKind, dst: NodeId, payload: dict,
                       slot: int = -1, **extra) -> Message:
        msg = Message(kind=kind, src=self.id, dst=dst, seq=self.next_seq(),
                      payload=dict(payload))
        self.outstanding[msg.seq] = _Outstanding(msg=msg)
        self.ctx.send(msg, slot=slot, extra={"try": 1, **extra})
        self.ctx.schedule(self.params.ack_timeout_us + FRAME_TIME_US, ("rtx", msg.seq, 1))
        return msg

    def _resolve_ack(self, ref_seq: int, from_node: NodeId) -> None:
        out = self.outstanding.pop(ref_seq, None)
        if out is None:
            return
        self._delivery_ok(out.msg, from_node)

    def _rtx_timer(self, seq: int, tries: int) -> None:
        out = self.outstanding.get(seq)
        if out is None or out.tries != tries:
            return
        kind = out.msg.kind
        slot_bound = kind in (MsgKind.DATA, MsgKind.NODEFAIL)
        asleep = self.state in (tr.SLEEPING, tr.DEAD)
        if asleep or (slot_bound and self.state != tr.ACTIVE_SLOT):
            # the slot (or round) ended underneath the retry chain: a sleeping
            # radio must not keep transmitting. Failure reports survive to the
            # next entry; an undelivered tree push counts as an unreachable
            # child.
            del self.outstanding[seq]
            if kind is MsgKind.NODEFAIL:
                self.pending_up.append(out.msg)
            elif kind is MsgKind.CDM:
                self._delivery_failed(out.msg)
            return
        if out.tries >= self.params.max_retries:
            del self.outstanding[seq]
            self.ctx.trace(tr.TIMEOUT, slot=self.cur_slot,
                           extra={"which": "retry_cap", "msg": str(kind),
                                  "dst": out.msg.dst, "seq": seq})
            self._delivery_failed(out.msg)
            return
        out.tries += 1
        if kind is MsgKind.DATA:
            self.slot_max_try = max(self.slot_max_try, out.tries)
        self.ctx.send(out.msg, slot=self.cur_slot, extra={"try": out.tries})
        self.ctx.schedule(self.params.ack_timeout_us + FRAME_TIME_US, ("rtx", seq, out.tries))

    # --------------------------------------------------------------- turn on

    def on_turn_on(self) -> None:
        """Power-up, or wake into a new round's formation phase."""
        self.round_no += 1
        self._reset_round_state()
        self.ctx.radio(True)
        if self.is_sink:
            self.ctx.trace(tr.ROUND, extra={"round": self.round_no})
        self.set_state(tr.DISCOVERY, round=self.round_no)
        if self.is_sink:
            # the sink opens discovery; everyone else talks only once spoken to
            self._start_ndm_schedule()

    def _reset_round_state(self) -> None:
        self.neighbour_table = {}
        self.ndm_sent = 0
        self.ndm_started = False
        self.admitted = {}
        self.send_queue = []
        self.seen_origins = set()
        self.quiet_token += 1
        self.flood_active_item = None
        self.parent = None
        self.children = []
        self.below_me = 0
        self.tree_stage = -1
        self.synced_reported = False
        self.children_synced = set()
        self.sync_ticking = False
        self.trigger_us = None
        self.cur_slot = -1
        self.slot_closed = True
        self.sensed = False
        self.readings = []
        self.child_done = set()
        self.child_heard = set()
        self.aggregate_sent = False
        self.slot_packets = []
        self.slot_max_try = 0
        self.miss_counts = {}
        self.written_off = set()
        self.pending_up = []
        self.outstanding = {}
        self.sink_nbm_store = {}
        self.graph = None
        self.tree = None
        self.failed_nodes = set()
        self.rebuild_pending = False
        self.slot_readings = {}
        self.assembled = False
        self.sync_guard_armed = False
        # the sync table deliberately survives rounds: old reference points
        # still map local to global and keep the new round's alarms sharp

    # -------------------------------------------------------------- discovery

    def _start_ndm_schedule(self) -> None:
        self.ndm_started = True
        if self.is_sink:
            delay = 0
        else:
            delay = int(self.ctx.rng("ndm_start").integers(0, self.params.ndm_interval_us))
        self.ctx.schedule(delay, ("ndm", 0))
        self.ctx.schedule(delay + self.params.ndm_window_us, ("discovery_end",))

    def _ndm_timer(self, i: int) -> None:
        if self.state != tr.DISCOVERY or i >= self.params.ndm_count:
            return
        self._broadcast(MsgKind.NDM,
                        {"capacity_mah": round(self.ctx.capacity_estimate_mah(), 2)})
        self.ndm_sent += 1
        if i + 1 < self.params.ndm_count:
            self.ctx.schedule(self.params.ndm_interval_us, ("ndm", i + 1))

    def on_ndm(self, msg: Message, rssi: float) -> None:
        if self.state in (tr.AWAIT_CDM, tr.SYNCING, tr.ACTIVE_SLOT):
            # discovery traffic while stranded mid-protocol: a new round began
            # without us, so fall back to the start and join it
            self.round_no += 1
            self._reset_round_state()
            self.set_state(tr.DISCOVERY, round=self.round_no, reset="stale")
        elif self.state != tr.DISCOVERY:
            return
        rec = self.neighbour_table.get(msg.src)
        if rec is None:
            rec = LinkRecord(neighbour=msg.src, ndm_expected=self.params.ndm_count)
            self.neighbour_table[msg.src] = rec
        rec.update(rssi, msg.payload["capacity_mah"])
        if not self.ndm_started:
            self._start_ndm_schedule()

    def _discovery_end_timer(self) -> None:
        if self.state != tr.DISCOVERY:
            return
        self.finalize_neighbours()
        self.set_state(tr.FLOODING)
        if self.neighbour_table and not self.admitted:
            self.ctx.trace(tr.WARN, extra={"reason": "no_admitted_neighbours"})
        self._enqueue_own_nbm()
        stagger = int(self.ctx.rng("flood_stagger").integers(0, self.params.flood_stagger_us))
        self.ctx.schedule(stagger, ("flood_kick",))
        self._arm_quiet_timer()

    def finalize_neighbours(self) -> None:
        """Admit neighbours that were heard reliably and strongly enough."""
        my_cap = self.ctx.capacity_estimate_mah()
        for nid in sorted(self.neighbour_table):
            rec = self.neighbour_table[nid]
            if rec.ndm_received / rec.ndm_expected < self.params.admission_fraction:
                continue
            if rec.avg_rssi < self.params.rssi_threshold_dbm:
                continue
            w = edge_weight(my_cap, rec.remote_capacity_mah, rec.avg_rssi)
            w += tier_cost(rec.avg_rssi)
            self.admitted[nid] = round(w, 2)

    # --------------------------------------------------------------- flooding

    def _enqueue_own_nbm(self) -> None:
        self.seen_origins.add(self.id)
        if self.is_sink:
            # the sink's own neighbour view goes straight into the graph store
            self.sink_nbm_store[self.id] = self._own_nbm_payload()
            return
        self.send_queue.insert(0, self._own_nbm_payload())

    def _own_nbm_payload(self) -> dict:
        entries = [(nid, self.admitted[nid]) for nid in sorted(self.admitted)]
        return {"origin": self.id, "entries": entries,
                "capacity_mah": round(self.ctx.capacity_estimate_mah(), 2)}

    def _flood_kick_timer(self) -> None:
        if self.state == tr.FLOODING:
            self._flood_send_next()

    def _flood_send_next(self) -> None:
        if self.flood_active_item is not None:
            return
        if not self.admitted:
            self.send_queue.clear()  # nobody in range to forward to
            return
        if not self.send_queue:
            return
        payload = self.send_queue.pop(0)
        msg = Message(kind=MsgKind.NBM, src=self.id, dst=BROADCAST,
                      seq=self.next_seq(), payload=payload)
        self.flood_active_item = msg.seq
        self.outstanding[msg.seq] = _Outstanding(msg=msg, awaiting=set(self.admitted))
        self.ctx.send(msg, extra={"try": 1, "origin": payload["origin"]})
        self.ctx.schedule(self.params.ack_timeout_us + FRAME_TIME_US, ("nbm_rtx", msg.seq, 1))

    def _nbm_rtx_timer(self, seq: int, tries: int) -> None:
        out = self.outstanding.get(seq)
        if out is None or out.tries != tries:
            return
        if not out.awaiting or out.tries >= self.params.max_retries:
            # either everyone confirmed or we give up on the stragglers
            del self.outstanding[seq]
            if self.flood_active_item == seq:
                self.flood_active_item = None
            self.ctx.schedule(self.params.inter_item_gap_us, ("flood_next",))
            return
        out.tries += 1
        self.ctx.send(out.msg, extra={"try": out.tries,
                                      "origin": out.msg.payload["origin"]})
        self.ctx.schedule(self.params.ack_timeout_us + FRAME_TIME_US, ("nbm_rtx", seq, out.tries))

    def on_nbm(self, msg: Message, rssi: float) -> None:
        # receiving is lenient: discovery stragglers and early finishers still
        # confirm and store, but only FLOODING nodes transmit queue items
        if self.state not in (tr.DISCOVERY, tr.FLOODING, tr.AWAIT_CDM):
            return
        self._unicast(MsgKind.NBM_ACK, msg.src,
                      {"ref_seq": msg.seq, "origin": msg.payload["origin"]})
        self._arm_quiet_timer()
        origin = msg.payload["origin"]
        if origin in self.seen_origins:
            return
        self.seen_origins.add(origin)
        if self.is_sink:
            self.sink_nbm_store[origin] = dict(msg.payload)
            return
        if len(self.send_queue) >= self.params.nbm_queue_bound:
            dropped = self.send_queue.pop(0)
            self.ctx.trace(tr.WARN, extra={"reason": "nbm_queue_overflow",
                                           "dropped_origin": dropped["origin"]})
        self.send_queue.append(dict(msg.payload))
        if self.state == tr.FLOODING:
            self._flood_send_next()

    def on_nbm_ack(self, msg: Message) -> None:
        ref = msg.payload["ref_seq"]
        out = self.outstanding.get(ref)
        if out is None or ref != self.flood_active_item:
            return
        out.awaiting.discard(msg.src)
        if not out.awaiting:
            del self.outstanding[ref]
            self.flood_active_item = None
            self.ctx.schedule(self.params.inter_item_gap_us, ("flood_next",))

    def _flood_next_timer(self) -> None:
        if self.state == tr.FLOODING:
            self._flood_send_next()

    def _abandon_flood(self) -> None:
        self.send_queue.clear()
        if self.flood_active_item is not None:
            self.outstanding.pop(self.flood_active_item, None)
            self.flood_active_item = None

    def _arm_quiet_timer(self) -> None:
        self.quiet_token += 1
        self.ctx.schedule(self.params.quiet_timeout_us, ("quiet", self.quiet_token))

    def _quiet_timer(self, token: int) -> None:
        if token != self.quiet_token or self.state != tr.FLOODING:
            return
        if self.send_queue or self.flood_active_item is not None:
            self._arm_quiet_timer()
            return
        if self.is_sink:
            if len(self.sink_nbm_store) <= 1:
                self._arm_quiet_timer()  # nobody reported in yet; keep listening
                return
            self.set_state(tr.AWAIT_CDM)
            self._sink_build_and_disseminate()
        else:
            self.set_state(tr.AWAIT_CDM)

    # ----------------------------------------------------- sink: build + CDM

    def _sink_build_and_disseminate(self) -> None:
        self.graph = self._assemble_graph()
        tree, unreachable = dijkstra_spt(self.graph, self.id)
        self.tree = tree
        self.tree_stage += 1
        self.ctx.trace(tr.GRAPH, extra={
            "round": self.round_no, "n": len(self.graph.vertices),
            "edges": len(self.graph.edges), "d_max": self.graph.max_degree()})
        self._trace_tree(unreachable)
        self.ctx.report_topology(self.round_no, self.tree_stage, self.graph, self.tree)
        self.parent = self.id
        self.children = list(self.tree.children.get(self.id, []))
        self.below_me = subtree_height(self.tree.parent, self.id)
        self.set_state(tr.SYNCING)
        self._send_cdm_wave()
        self._arm_sync_guard()
        self._start_sync_broadcasts()

    def _assemble_graph(self) -> NetworkGraph:
        """Fold every reported neighbour list into one symmetric graph.

        An edge only exists when both endpoints reported each other; the worse
        of the two directed weights wins.
        """
        g = NetworkGraph()
        directed: dict[tuple[NodeId, NodeId], float] = {}
        for origin in sorted(self.sink_nbm_store):
            payload = self.sink_nbm_store[origin]
            g.add_vertex(origin, payload["capacity_mah"])
            for nid, w in payload["entries"]:
                directed[(origin, nid)] = w
        for (u, v), w_uv in sorted(directed.items()):
            if u > v:
                continue
            w_vu = directed.get((v, u))
            if w_vu is None or u not in g.vertices or v not in g.vertices:
                continue
            g.add_edge(u, v, round(symmetrize(w_uv, w_vu), 2))
        return g

    def _trace_tree(self, unreachable) -> None:
        parents = "|".join(f"{u}:{p}" for u, p in sorted(self.tree.parent.items())
                           if u != self.tree.root)
        extra = {"round": self.round_no, "stage": self.tree_stage, "parents": parents}
        if unreachable:
            extra["unreachable"] = "|".join(str(u) for u in unreachable)
        self.ctx.trace(tr.TREE, extra=extra)

    def _send_cdm_wave(self) -> None:
        payload = {"stage": self.tree_stage, "parents": dict(self.tree.parent)}
        for child in self.children:
            self._reliable_send(MsgKind.CDM, child, payload, stage=self.tree_stage)

    def on_cdm(self, msg: Message, rssi: float) -> None:
        if self.state not in (tr.FLOODING, tr.AWAIT_CDM, tr.SYNCING,
                              tr.ACTIVE_SLOT):
            return  # not participating in this round's tree
        self._unicast(MsgKind.CDM_ACK, msg.src,
                      {"ref_seq": msg.seq, "stage": msg.payload["stage"]})
        stage = msg.payload["stage"]
        if stage <= self.tree_stage:
            return  # stale or duplicate wave
        if self.state == tr.FLOODING:
            # the sink has built the tree, so the flood has served its
            # purpose; drop anything still queued and join the wave
            self._abandon_flood()
        self.tree_stage = stage
        parents = msg.payload["parents"]
        if self.id not in parents:
            return  # rebuilt tree that no longer includes us
        self.parent = parents[self.id]
        self.children = sorted(u for u, p in parents.items()
                               if p == self.id and u != self.id)
        self.below_me = subtree_height(parents, self.id)
        self.children_synced &= set(self.children)
        self.written_off &= set(self.children)
        self.miss_counts = {c: n for c, n in self.miss_counts.items()
                            if c in self.children}
        fwd = {"stage": stage, "parents": parents}
        for child in self.children:
            self._reliable_send(MsgKind.CDM, child, fwd, stage=stage)
        if self.state in (tr.FLOODING, tr.AWAIT_CDM):
            self.set_state(tr.SYNCING)
        elif self.state == tr.ACTIVE_SLOT and not self.aggregate_sent:
            # re-homed mid-slot: the wake-time timers reflect the old tree
            # shape, so pick up whatever duty the new shape implies
            if self.is_leaf():
                if self.sensed:
                    self._send_aggregate()
            else:
                elapsed = self.ctx.local_time() - self.slot_open_local
                self._arm_child_deadline(self.cur_slot, elapsed)
                self._maybe_send_aggregate()

    def on_cdm_ack(self, msg: Message) -> None:
        self._resolve_ack(msg.payload["ref_seq"], msg.src)

    # ------------------------------------------------------------------ sync

    def _start_sync_broadcasts(self) -> None:
        if self.is_leaf() or self.sync_ticking:
            return
        self.sync_ticking = True
        self._sync_tick()

    def _sync_tick(self) -> None:
        if not self.sync_ticking:
            return
        if self.state not in (tr.SYNCING, tr.ACTIVE_SLOT):
            self.sync_ticking = False
            return
        if self.trigger_us is not None and self.global_now() >= self.trigger_us:
            self.sync_ticking = False
            return
        self._broadcast_sync()
        self.ctx.schedule(self.params.sync_interval_us, ("sync_tick",))

    def _broadcast_sync(self) -> None:
        payload = {"mac_us": round(self.ctx.mac_timestamp(), 3)}
        if self.trigger_us is not None:
            payload["trigger_us"] = self.trigger_us
        self._broadcast(MsgKind.SYNC, payload)

    def on_sync(self, msg: Message, rssi: float) -> None:
        if self.state != tr.SYNCING or msg.src != self.parent:
            return  # only the parent's beacons move our clock
        self._add_reference_point(msg.payload["mac_us"])
        if not self.synced_reported and self.est is not None:
            self.synced_reported = True
            if self.is_leaf() or self.children_synced >= set(self.children):
                self._unicast(MsgKind.SYNCED, self.parent, {})
            self._start_sync_broadcasts()
        trig = msg.payload.get("trigger_us")
        if trig is not None and self.trigger_us is None:
            self._adopt_trigger(trig)

    def on_synced(self, msg: Message) -> None:
        if msg.src not in self.children:
            return
        self.children_synced.add(msg.src)
        if not self.children_synced >= set(self.children):
            return
        if self.is_sink:
            if self.trigger_us is None:
                self._set_trigger()
        elif self.synced_reported and self.parent is not None:
            # the whole subtree below us is ready; tell the parent once
            self._unicast(MsgKind.SYNCED, self.parent, {})

    def _arm_sync_guard(self) -> None:
        if not self.sync_guard_armed:
            self.sync_guard_armed = True
            self.ctx.schedule(self.params.sync_guard_us, ("sync_guard",))

    def _sync_guard_timer(self) -> None:
        if self.is_sink and self.trigger_us is None:
            missing = sorted(set(self.children) - self.children_synced)
            self.ctx.trace(tr.WARN, extra={"reason": "sync_guard_fired",
                                           "missing": "|".join(map(str, missing))})
            self._set_trigger()

    def _set_trigger(self) -> None:
        self.trigger_us = float(int(self.ctx.local_time()) + self.params.trigger_delay_us)
        self.ctx.trace(tr.META, msg="trigger",
                       extra={"trigger_us": int(self.trigger_us)})
        self._broadcast_sync()  # carry the trigger out ahead of the periodic tick
        self._schedule_slot_wake(0)

    def _adopt_trigger(self, trigger_us: float) -> None:
        self.trigger_us = trigger_us
        if not self.is_leaf():
            self._broadcast_sync()  # relay downward without waiting a tick
        self._schedule_slot_wake(0)

    def _add_reference_point(self, mac_global_us: float) -> None:
        local_rx = self.ctx.local_time()
        if self.sync_table.add_reference_point(local_rx, mac_global_us):
            self.est = estimate_skew(self.sync_table)
        elif local_rx < self.sync_table.points[-1][0]:
            # two beacons in the same instant are dropped quietly; time
            # actually running backwards deserves a trace line
            self.ctx.trace(tr.WARN, extra={"reason": "nonmonotone_ref_point"})

    # ------------------------------------------------------------------ slots

    def _slot_start_global(self, slot: int) -> float:
        return self.trigger_us + slot * self.params.dci_us

    def _schedule_slot_wake(self, slot: int) -> None:
        target = self._slot_start_global(slot)
        if not self.is_sink and self.children and self.params.nonleaf_wake_delay_us:
            target += self.params.nonleaf_wake_delay_us
        if self.is_sink:
            self.ctx.schedule_at_real(int(target), ("wake", slot))
        else:
            est = self.est if self.est is not None else SkewEstimate(1.0, 0.0, 0)
            self.ctx.schedule_at_local(est.local_for_global(target), ("wake", slot))

    def _wake_timer(self, slot: int) -> None:
        if self.state not in (tr.SYNCING, tr.SLEEPING):
            return  # a reset or failure overtook this alarm
        self.cur_slot = slot
        self.slot_closed = False
        self.slot_open_local = self.ctx.local_time()
        self.ctx.radio(True)
        err = abs(self.ctx.real_now() - self._slot_start_global(slot))
        self.set_state(tr.ACTIVE_SLOT, err_us=int(err))
        self.sensed = False
        self.readings = []
        self.child_done = set()
        self.child_heard = set()
        self.aggregate_sent = False
        self.slot_packets = []
        self.slot_max_try = 0
        if self.is_sink:
            self.slot_readings = {}
            self.assembled = False
            if self.rebuild_pending:
                self.rebuild_pending = False
                self._sink_apply_rebuild()
        if slot == 0:
            # a child that never reported in during the sync phase cannot have
            # adopted the trigger; drop it from this round up front
            for child in sorted(set(self.children) - self.children_synced
                                - self.written_off):
                self.written_off.add(child)
                self.miss_counts.pop(child, None)
                self.ctx.trace(tr.WARN, slot=slot,
                               extra={"reason": "never_synced", "child": child})
                self._report_failure(child)
        self._flush_pending_up()
        self.ctx.schedule(self.params.initial_slot_delay_us, ("slot_body", slot))
        self.ctx.schedule(self.params.sleep_timeout_us, ("sleep_timeout", slot))
        if not self.is_leaf():
            self._arm_child_deadline(slot)

    def _arm_child_deadline(self, slot: int, elapsed_us: float = 0.0) -> None:
        # the wait scales with subtree height so a parent always cuts
        # off after every descendant had its chance to flush; equal
        # timeouts would race on µs-level wake error
        deadline = (self.params.initial_slot_delay_us
                    + self.params.child_timeout_us * max(1, self.below_me))
        deadline = min(deadline, self.params.dc_timeout_us)
        self.ctx.schedule(max(int(deadline - elapsed_us), 0),
                          ("child_deadline", slot))

    def _flush_pending_up(self) -> None:
        if not self.pending_up or self.parent is None or self.is_sink:
            return
        pending, self.pending_up = self.pending_up, []
        seen = set()
        for msg in pending:
            failed = msg.payload["failed"]
            if failed in seen:
                continue
            seen.add(failed)
            self._reliable_send(MsgKind.NODEFAIL, self.parent, msg.payload,
                                slot=self.cur_slot, failed=failed)

    def _slot_body_timer(self, slot: int) -> None:
        if self.state != tr.ACTIVE_SLOT or self.cur_slot != slot:
            return
        if self.is_sink:
            self._sink_maybe_assemble()
            return
        self.sensed = True
        self.readings.append(self.ctx.sense(slot))
        if self.is_leaf():
            self._send_aggregate()
        else:
            self._maybe_send_aggregate()

    def _expected_children(self) -> set[NodeId]:
        return set(self.children) - self.written_off

    def _maybe_send_aggregate(self) -> None:
        if self.aggregate_sent or self.state != tr.ACTIVE_SLOT:
            return
        if not self.sensed:
            return  # own sensing has not happened yet
        if self._expected_children() <= self.child_done:
            self._send_aggregate()

    def _child_deadline_timer(self, slot: int) -> None:
        if self.state != tr.ACTIVE_SLOT or self.cur_slot != slot:
            return
        if self.is_sink:
            self._sink_maybe_assemble(timed_out=True)
        elif not self.aggregate_sent and self.sensed:
            self._send_aggregate()

    def _send_aggregate(self) -> None:
        self.aggregate_sent = True
        if self.parent is None:
            return
        cap = self.params.payload_capacity
        chunks = [self.readings[i:i + cap]
                  for i in range(0, len(self.readings), cap)]
        self.slot_packets = []
        for i, chunk in enumerate(chunks):
            msg = Message(kind=MsgKind.DATA, src=self.id, dst=self.parent,
                          seq=self.next_seq(),
                          payload={"slot": self.cur_slot, "pkt": i,
                                   "cont": 1 if i + 1 < len(chunks) else 0,
                                   "readings": chunk})
            self.slot_packets.append(msg)
        self._send_next_packet()

    def _send_next_packet(self) -> None:
        if not self.slot_packets or self.state != tr.ACTIVE_SLOT:
            return
        msg = self.slot_packets.pop(0)
        self.outstanding[msg.seq] = _Outstanding(msg=msg)
        self.slot_max_try = max(self.slot_max_try, 1)
        self.ctx.send(msg, slot=self.cur_slot,
                      extra={"try": 1, "pkt": msg.payload["pkt"],
                             "cont": msg.payload["cont"],
                             "nread": len(msg.payload["readings"])})
        self.ctx.schedule(self.params.ack_timeout_us + FRAME_TIME_US, ("rtx", msg.seq, 1))

    def on_data(self, msg: Message, rssi: float) -> None:
        # only confirm uploads this node will store (or already stored);
        # acking data that is about to be discarded would stop the retry
        # chain dead while the reading never reaches anyone
        stale = msg.payload["slot"] != self.cur_slot or self.slot_closed
        known = (msg.src in self._expected_children()
                 or msg.src in self.child_done)
        if stale or not known:
            return
        self._unicast(MsgKind.DATA_ACK, msg.src,
                      {"ref_seq": msg.seq, "slot": msg.payload["slot"],
                       "pkt": msg.payload["pkt"]},
                      slot=msg.payload["slot"])
        if msg.src in self.child_done:
            return  # duplicate of a stored upload; the ack alone suffices
        for r in msg.payload["readings"]:
            if self.is_sink:
                if r["node"] not in self.slot_readings:
                    self.slot_readings[r["node"]] = r
            elif not any(r["node"] == q["node"] for q in self.readings):
                self.readings.append(r)
        self.child_heard.add(msg.src)
        if msg.payload["cont"] == 0:
            self.child_done.add(msg.src)
        if self.is_sink:
            self._sink_maybe_assemble()
        else:
            self._maybe_send_aggregate()

    def on_data_ack(self, msg: Message) -> None:
        if msg.payload.get("slot") != self.cur_slot:
            return
        self._resolve_ack(msg.payload["ref_seq"], msg.src)

    # ------------------------------------------------------- sink: assembly

    def _sink_maybe_assemble(self, timed_out: bool = False) -> None:
        if self.assembled or self.state != tr.ACTIVE_SLOT:
            return
        if not (timed_out or self._expected_children() <= self.child_done):
            return
        self.assembled = True
        got = sorted(self.slot_readings)
        for nid in got:
            r = self.slot_readings[nid]
            self.ctx.trace(tr.REPORT, slot=self.cur_slot,
                           extra={"origin": nid,
                                  "battery_mv": f"{r['battery_mv']:.3f}",
                                  "moisture": f"{r['soil_moisture_pct']:.2f}"})
        self.ctx.trace(tr.ASSEMBLY, slot=self.cur_slot,
                       extra={"count": len(got), "nodes": "|".join(map(str, got))})
        self.ctx.report_assembly(self.round_no, self.cur_slot, got)
        self._broadcast_sleep()
        self._assess_misses()
        self._end_slot()

    # ------------------------------------------------------------- sleep path

    def _broadcast_sleep(self) -> None:
        self._broadcast(MsgKind.SLEEP,
                        {"mac_us": round(self.ctx.mac_timestamp(), 3),
                         "slot": self.cur_slot},
                        slot=self.cur_slot)

    def on_sleep(self, msg: Message, rssi: float) -> None:
        if msg.src != self.parent or self.state != tr.ACTIVE_SLOT:
            return
        if msg.payload["slot"] != self.cur_slot:
            return
        self._add_reference_point(msg.payload["mac_us"])
        if not self.is_leaf():
            self._broadcast_sleep()
        self._assess_misses()
        self._end_slot()

    def _sleep_timeout_timer(self, slot: int) -> None:
        if self.state != tr.ACTIVE_SLOT or self.cur_slot != slot:
            return
        self.ctx.trace(tr.TIMEOUT, slot=slot, extra={"which": "sleep"})
        self._assess_misses()
        self._end_slot()

    def _assess_misses(self) -> None:
        """Slot is over: children never heard from move toward written-off."""
        for child in sorted(self._expected_children()):
            if child in self.child_heard:
                self.miss_counts[child] = 0
                continue
            self.miss_counts[child] = self.miss_counts.get(child, 0) + 1
            if self.miss_counts[child] >= self.params.failure_miss_threshold:
                self.written_off.add(child)
                del self.miss_counts[child]
                self._report_failure(child)

    def _report_failure(self, failed: NodeId) -> None:
        if self.is_sink:
            self._sink_handle_nodefail(failed)
            return
        # queued here, sent at the next slot entry when the chain above is awake
        self.pending_up.append(Message(kind=MsgKind.NODEFAIL, src=self.id,
                                       dst=self.parent or self.id, seq=0,
                                       payload={"failed": failed,
                                                "reporter": self.id}))

    def on_nodefail(self, msg: Message, rssi: float) -> None:
        self._unicast(MsgKind.NODEFAIL_ACK, msg.src, {"ref_seq": msg.seq},
                      slot=self.cur_slot)
        failed = msg.payload["failed"]
        if self.is_sink:
            self._sink_handle_nodefail(failed)
        elif self.parent is not None and self.state == tr.ACTIVE_SLOT:
            # take custody and relay upward right away; the chain above is
            # awake in the same entry window this report was flushed in
            self._reliable_send(MsgKind.NODEFAIL, self.parent, dict(msg.payload),
                                slot=self.cur_slot, failed=failed)
        else:
            self.pending_up.append(Message(kind=MsgKind.NODEFAIL, src=self.id,
                                           dst=self.parent or self.id, seq=0,
                                           payload=dict(msg.payload)))

    def on_nodefail_ack(self, msg: Message) -> None:
        self._resolve_ack(msg.payload["ref_seq"], msg.src)

    def _sink_handle_nodefail(self, failed: NodeId) -> None:
        if failed in self.failed_nodes or failed == self.id:
            return
        self.failed_nodes.add(failed)
        in_entry_window = self.state == tr.ACTIVE_SLOT and not self.assembled
        in_formation = self.state in (tr.AWAIT_CDM, tr.SYNCING)
        if in_entry_window or in_formation:
            # everyone is still awake: rebuild and redistribute immediately so
            # orphans are re-homed before this slot's data flows
            self._sink_apply_rebuild()
        else:
            # mid- or post-slot report: most nodes are already asleep and a
            # wave now would be undeliverable; apply at the next slot entry
            self.rebuild_pending = True

    def _sink_apply_rebuild(self) -> None:
        tree, orphans = rebuild_without(self.graph, self.failed_nodes, self.id)
        self.tree = tree
        self.tree_stage += 1
        self.ctx.trace(tr.REBUILD, slot=self.cur_slot,
                       extra={"round": self.round_no, "stage": self.tree_stage,
                              "failed": "|".join(map(str, sorted(self.failed_nodes))),
                              "orphans": "|".join(map(str, orphans)) or "none"})
        self._trace_tree(orphans)
        self.ctx.report_topology(self.round_no, self.tree_stage, self.graph, self.tree)
        self.children = list(self.tree.children.get(self.id, []))
        self.below_me = subtree_height(self.tree.parent, self.id)
        self.written_off &= set(self.children)
        self.miss_counts = {c: n for c, n in self.miss_counts.items()
                            if c in self.children}
        self.children_synced &= set(self.children)
        self._send_cdm_wave()
        if self.trigger_us is None and self.children_synced >= set(self.children):
            self._set_trigger()  # the failed child was the last holdout
        if self.state == tr.ACTIVE_SLOT and not self.assembled:
            # dropping a child may leave every remaining one accounted for
            self._sink_maybe_assemble()

    # ------------------------------------------------------------- slot close

    def _end_slot(self) -> None:
        if self.slot_closed:
            return
        self.slot_closed = True
        slot = self.cur_slot
        self.ctx.report_slot_stats(self.round_no, slot, self.slot_max_try)
        # a retry chain must not keep the transmitter busy past the slot
        self.outstanding = {s: o for s, o in self.outstanding.items()
                            if o.msg.kind is not MsgKind.DATA}
        self.ctx.radio(False)
        self.set_state(tr.SLEEPING)
        if slot + 1 < self.params.slots_per_round:
            self._schedule_slot_wake(slot + 1)
        elif self.round_no + 1 < self.params.rounds:
            self._schedule_round_wake()

    def _schedule_round_wake(self) -> None:
        target = self._slot_start_global(self.params.slots_per_round)
        if self.is_sink:
            self.ctx.schedule_at_real(int(target), ("round_wake",))
        else:
            est = self.est if self.est is not None else SkewEstimate(1.0, 0.0, 0)
            self.ctx.schedule_at_local(est.local_for_global(target), ("round_wake",))

    def _round_wake_timer(self) -> None:
        if self.state != tr.SLEEPING:
            return
        self.on_turn_on()

    # ------------------------------------------------------------ delivery cb

    def _delivery_ok(self, msg: Message, from_node: NodeId) -> None:
        if msg.kind is MsgKind.DATA:
            self._send_next_packet()

    def _delivery_failed(self, msg: Message) -> None:
        if msg.kind is MsgKind.DATA:
            self._send_next_packet()
        elif msg.kind is MsgKind.CDM:
            child = msg.dst
            if self.is_sink:
                self._sink_handle_nodefail(child)
                return
            self.ctx.trace(tr.WARN, slot=self.cur_slot,
                           extra={"reason": "cdm_child_unreachable", "child": child})
            payload = {"failed": child, "reporter": self.id}
            if self.parent is not None and self.state in (tr.ACTIVE_SLOT, tr.SYNCING,
                                                          tr.AWAIT_CDM):
                # the network is awake right now, report straight away
                self._reliable_send(MsgKind.NODEFAIL, self.parent, payload,
                                    slot=self.cur_slot, failed=child)
            else:
                self.pending_up.append(Message(kind=MsgKind.NODEFAIL, src=self.id,
                                               dst=self.parent or self.id, seq=0,
                                               payload=payload))
        elif msg.kind is MsgKind.NODEFAIL:
            # keep custody; try again at the next slot entry
            self.pending_up.append(msg)

    # -------------------------------------------------------------- dispatch

    def on_message(self, msg: Message, rssi: float) -> None:
        if self.state == tr.DEAD:
            return
        kind = msg.kind
        if kind is MsgKind.NDM:
            self.on_ndm(msg, rssi)
        elif kind is MsgKind.NBM:
            self.on_nbm(msg, rssi)
        elif kind is MsgKind.NBM_ACK:
            self.on_nbm_ack(msg)
        elif kind is MsgKind.DATA:
            self.on_data(msg, rssi)
        elif kind is MsgKind.DATA_ACK:
            self.on_data_ack(msg)
        elif kind is MsgKind.SLEEP:
            self.on_sleep(msg, rssi)
        elif kind is MsgKind.SYNC:
            self.on_sync(msg, rssi)
        elif kind is MsgKind.SYNCED:
            self.on_synced(msg)
        elif kind is MsgKind.CDM:
            self.on_cdm(msg, rssi)
        elif kind is MsgKind.CDM_ACK:
            self.on_cdm_ack(msg)
        elif kind is MsgKind.NODEFAIL:
            self.on_nodefail(msg, rssi)
        elif kind is MsgKind.NODEFAIL_ACK:
            self.on_nodefail_ack(msg)

    def on_timer(self, tag: tuple) -> None:
        if self.state == tr.DEAD:
            return
        name = tag[0]
        if name == "ndm":
            self._ndm_timer(tag[1])
        elif name == "discovery_end":
            self._discovery_end_timer()
        elif name == "flood_kick":
            self._flood_kick_timer()
        elif name == "flood_next":
            self._flood_next_timer()
        elif name == "quiet":
            self._quiet_timer(tag[1])
        elif name == "nbm_rtx":
            self._nbm_rtx_timer(tag[1], tag[2])
        elif name == "rtx":
            self._rtx_timer(tag[1], tag[2])
        elif name == "sync_tick":
            self._sync_tick()
        elif name == "sync_guard":
            self._sync_guard_timer()
        elif name == "wake":
            self._wake_timer(tag[1])
        elif name == "slot_body":
            self._slot_body_timer(tag[1])
        elif name == "child_deadline":
            self._child_deadline_timer(tag[1])
        elif name == "sleep_timeout":
            self._sleep_timeout_timer(tag[1])
        elif name == "round_wake":
            self._round_wake_timer()
        else:
            raise ValueError(f"unknown timer {tag!r}")
