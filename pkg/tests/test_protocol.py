"""Protocol behavior: handler-level unit tests plus drill-run assertions.

The drills pin exact topologies, so tree shapes, failure timelines, and
retry counts are checked as equalities, not distributions.
"""
from __future__ import annotations

import pytest

from treecollect import trace as tr
from treecollect.core import BROADCAST, Message, MsgKind
from treecollect.protocol import FRAME_TIME_US, NodeMachine, ProtocolParams


class FakeCtx:
    """Just enough context to drive one NodeMachine by hand."""

    def __init__(self):
        self.now = 0.0
        self.sent: list[Message] = []
        self.timers: list[tuple] = []
        self.traced: list = []

    def local_time(self):
        return self.now

    def real_now(self):
        return int(self.now)

    def mac_timestamp(self):
        return self.now

    def schedule(self, delay_us, tag):
        self.timers.append((self.now + delay_us, tag))

    def schedule_at_real(self, t_us, tag):
        self.timers.append((t_us, tag))

    def schedule_at_local(self, local_us, tag):
        self.timers.append((local_us, tag))

    def send(self, msg, slot=-1, extra=None):
        self.sent.append(msg)

    def radio(self, on):
        pass

    def sense(self, slot):
        return {"node": 0, "slot": slot, "battery_mv": 3700.0,
                "soil_moisture_pct": 20.0, "soil_temp_c": 15.0,
                "air_temp_c": 18.0, "rel_humidity_pct": 50.0}

    def capacity_estimate_mah(self):
        return 2200.0

    def trace(self, kind, msg="-", **kw):
        self.traced.append((kind, msg, kw))

    def report_topology(self, *a):
        pass

    def report_assembly(self, *a):
        pass

    def report_slot_stats(self, *a):
        pass


def make_interior(children=(10, 11)) -> tuple[NodeMachine, FakeCtx]:
    """A mid-tree node frozen in the middle of slot 3."""
    ctx = FakeCtx()
    m = NodeMachine(5, is_sink=False, params=ProtocolParams(), ctx=ctx)
    m.state = tr.ACTIVE_SLOT
    m.parent = 2
    m.children = list(children)
    m.trigger_us = 0.0
    m.cur_slot = 3
    m.slot_closed = False
    m.sensed = True
    m.readings = [ctx.sense(3) | {"node": 5}]
    return m, ctx


def data_msg(src, slot, pkt=0, cont=0, seq=1):
    return Message(kind=MsgKind.DATA, src=src, dst=5, seq=seq,
                   payload={"slot": slot, "pkt": pkt, "cont": cont,
                            "readings": [{"node": src, "slot": slot,
                                          "battery_mv": 3650.0,
                                          "soil_moisture_pct": 1.0,
                                          "soil_temp_c": 1.0,
                                          "air_temp_c": 1.0,
                                          "rel_humidity_pct": 1.0}]})


def test_on_data_stores_acks_and_marks_done():
    m, ctx = make_interior()
    m.on_data(data_msg(10, slot=3), rssi=-60.0)
    assert [s.kind for s in ctx.sent] == [MsgKind.DATA_ACK]
    assert ctx.sent[0].dst == 10
    assert 10 in m.child_heard and 10 in m.child_done
    assert any(r["node"] == 10 for r in m.readings)


def test_on_data_ignores_wrong_slot_without_ack():
    # acking data it will not store would kill the retry chain while the
    # reading never reaches anyone
    m, ctx = make_interior()
    m.on_data(data_msg(10, slot=2), rssi=-60.0)
    assert ctx.sent == []
    assert 10 not in m.child_heard


def test_on_data_ignores_unknown_sender():
    m, ctx = make_interior()
    m.on_data(data_msg(99, slot=3), rssi=-60.0)
    assert ctx.sent == []


def test_on_data_duplicate_reacked_but_not_restored():
    m, ctx = make_interior()
    m.on_data(data_msg(10, slot=3), rssi=-60.0)
    n_readings = len(m.readings)
    m.on_data(data_msg(10, slot=3), rssi=-60.0)
    assert [s.kind for s in ctx.sent] == [MsgKind.DATA_ACK, MsgKind.DATA_ACK]
    assert len(m.readings) == n_readings


def test_on_data_multi_packet_upload_not_done_until_last():
    m, ctx = make_interior()
    m.on_data(data_msg(10, slot=3, pkt=0, cont=1, seq=1), rssi=-60.0)
    assert 10 in m.child_heard and 10 not in m.child_done
    m.on_data(data_msg(10, slot=3, pkt=1, cont=0, seq=2), rssi=-60.0)
    assert 10 in m.child_done


def test_aggregate_waits_for_all_children_then_sends():
    m, ctx = make_interior(children=(10, 11))
    m.on_data(data_msg(10, slot=3), rssi=-60.0)
    assert not m.aggregate_sent
    m.on_data(data_msg(11, slot=3, seq=2), rssi=-60.0)
    assert m.aggregate_sent
    data_up = [s for s in ctx.sent if s.kind is MsgKind.DATA]
    assert len(data_up) == 1
    readings = data_up[0].payload["readings"]
    assert sorted(r["node"] for r in readings) == [5, 10, 11]


def test_aggregate_splits_at_payload_capacity():
    m, ctx = make_interior(children=())
    m.params = ProtocolParams(payload_capacity=2)
    m.readings = [ctx.sense(3) | {"node": n} for n in (5, 6, 7, 8, 9)]
    m._send_aggregate()
    sent = [s for s in ctx.sent if s.kind is MsgKind.DATA]
    # only the first packet goes out; the rest wait for acks
    assert len(sent) == 1
    assert sent[0].payload["cont"] == 1
    assert len(m.slot_packets) == 2
    all_chunks = [sent[0].payload] + [p.payload for p in m.slot_packets]
    assert sum(len(c["readings"]) for c in all_chunks) == 5
    assert all(len(c["readings"]) <= 2 for c in all_chunks)
    assert all_chunks[-1]["cont"] == 0


def test_sleep_from_parent_adds_exactly_one_reference_point():
    m, ctx = make_interior()
    before = len(m.sync_table)
    m.on_sleep(Message(kind=MsgKind.SLEEP, src=2, dst=BROADCAST, seq=9,
                       payload={"mac_us": 1234.5, "slot": 3}), rssi=-60.0)
    assert len(m.sync_table) == before + 1
    assert m.sync_table.points[-1][1] == 1234.5
    # an interior node relays the sleep downward
    assert [s.kind for s in ctx.sent][-1] is MsgKind.SLEEP


def test_sleep_from_stranger_or_wrong_slot_ignored():
    m, ctx = make_interior()
    m.on_sleep(Message(kind=MsgKind.SLEEP, src=7, dst=BROADCAST, seq=9,
                       payload={"mac_us": 1.0, "slot": 3}), rssi=-60.0)
    m.on_sleep(Message(kind=MsgKind.SLEEP, src=2, dst=BROADCAST, seq=9,
                       payload={"mac_us": 1.0, "slot": 2}), rssi=-60.0)
    assert len(m.sync_table) == 0
    assert m.state == tr.ACTIVE_SLOT


def test_missed_slots_write_child_off_at_threshold():
    m, ctx = make_interior(children=(10,))
    assert m.params.failure_miss_threshold == 2
    m._assess_misses()
    assert m.miss_counts[10] == 1 and 10 not in m.written_off
    m._assess_misses()
    assert 10 in m.written_off
    # the report is queued for the next slot entry, not sent mid-sleep
    assert m.pending_up and m.pending_up[0].payload["failed"] == 10
    assert not [s for s in ctx.sent if s.kind is MsgKind.NODEFAIL]


def test_heard_child_resets_miss_count():
    m, ctx = make_interior(children=(10,))
    m._assess_misses()
    assert m.miss_counts[10] == 1
    m.child_heard.add(10)
    m._assess_misses()
    assert m.miss_counts[10] == 0
    assert 10 not in m.written_off


def test_retry_chain_caps_and_gives_up():
    m, ctx = make_interior(children=())
    m._send_aggregate()
    msg = [s for s in ctx.sent if s.kind is MsgKind.DATA][0]
    for attempt in range(1, m.params.max_retries):
        m._rtx_timer(msg.seq, attempt)
    data_sends = [s for s in ctx.sent if s.kind is MsgKind.DATA]
    assert len(data_sends) == m.params.max_retries
    # the cap has been hit; one more timer fires but nothing goes out
    m._rtx_timer(msg.seq, m.params.max_retries)
    assert len([s for s in ctx.sent if s.kind is MsgKind.DATA]) == m.params.max_retries
    assert msg.seq not in m.outstanding


def test_ack_stops_retries():
    m, ctx = make_interior(children=())
    m._send_aggregate()
    msg = [s for s in ctx.sent if s.kind is MsgKind.DATA][0]
    m.on_data_ack(Message(kind=MsgKind.DATA_ACK, src=2, dst=5, seq=77,
                          payload={"ref_seq": msg.seq, "slot": 3, "pkt": 0}))
    assert msg.seq not in m.outstanding
    m._rtx_timer(msg.seq, 1)  # stale timer is a no-op
    assert len([s for s in ctx.sent if s.kind is MsgKind.DATA]) == 1


def test_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(slots_per_round=0)
    with pytest.raises(ValueError):
        ProtocolParams(admission_fraction=0.0)
    with pytest.raises(ValueError):
        ProtocolParams(max_retries=0)
    with pytest.raises(ValueError):
        ProtocolParams(failure_miss_threshold=0)
    assert FRAME_TIME_US > 0


# -------------------------------------------------------- drill assertions


def final_parent_map(eng):
    return eng.metrics.topologies[-1][3]


def test_drill_leaf_tree_and_rebuild(leaf_drill):
    m = leaf_drill.metrics
    stages = [(rnd, stage) for rnd, stage, _, _ in m.topologies]
    # one rebuild per report: the two parents flush independently
    assert stages == [(0, 0), (0, 1), (0, 2)]
    first = m.topologies[0][3]
    assert first == {2: 2, 3: 2, 7: 2, 10: 3, 11: 3, 22: 7, 23: 7}
    # both dead leaves dropped, every survivor keeps its parent
    final = final_parent_map(leaf_drill)
    assert final == {2: 2, 3: 2, 7: 2, 11: 3, 23: 7}
    rebuilds = [e for e in leaf_drill.events if e.kind == tr.REBUILD]
    # written off after two silent slots, so both reports land at slot 2 entry
    assert [e.slot for e in rebuilds] == [2, 2]
    assert rebuilds[-1].extra["failed"] == "10|22"


def test_drill_leaf_yield(leaf_drill):
    m = leaf_drill.metrics
    slots = range(leaf_drill.sc.protocol.slots_per_round)
    for nid in (3, 7, 11, 23):
        assert m.yields_[(0, nid)] == set(slots)
    assert (0, 10) not in m.yields_
    assert (0, 22) not in m.yields_


def test_drill_internal_failure_timeline(internal_drill):
    m = internal_drill.metrics
    # 13 dies at slot 3; after two missed slots the orphans reroute
    final = final_parent_map(internal_drill)
    assert 13 not in final
    assert final == {2: 2, 3: 2, 7: 2, 10: 3, 14: 3, 16: 7, 21: 7}
    for orphan in (10, 14, 16, 21):
        got = m.yields_[(0, orphan)]
        assert {0, 1, 2}.issubset(got)
        assert {5, 6, 7}.issubset(got)  # back in the tree from slot 5 on
        assert 3 not in got and 4 not in got
    # 13 itself reported exactly through slot 2
    assert m.yields_[(0, 13)] == {0, 1, 2}


def test_drill_internal_nodefail_after_two_missed_slots(internal_drill):
    fails = [e for e in internal_drill.events
             if e.kind == tr.RECV and e.msg == "NODEFAIL"
             and e.node == internal_drill.sc.sink]
    assert len(fails) == 1
    rebuilds = [e for e in internal_drill.events if e.kind == tr.REBUILD]
    assert len(rebuilds) == 1
    # died at slot 3, so slots 3 and 4 are the two misses; report at slot 5
    assert rebuilds[0].slot == 5
    assert rebuilds[0].extra["failed"] == "13"


def test_drill_samebranch_two_stage_rebuild(samebranch_drill):
    m = samebranch_drill.metrics
    stages = [stage for _, stage, _, _ in m.topologies]
    assert stages == [0, 1, 2]
    t0, t1, t2 = (t[3] for t in m.topologies)
    assert t0 == {2: 2, 4: 2, 5: 4, 11: 5, 12: 11, 6: 2}
    # stage 1: 5 reported dead, 12 rerouted via 6, 11 still presumed alive
    assert t1 == {2: 2, 4: 2, 6: 2, 12: 6, 11: 12}
    # stage 2: 11 reported dead too
    assert t2 == {2: 2, 4: 2, 6: 2, 12: 6}
    sink_fails = [e for e in samebranch_drill.events
                  if e.kind == tr.RECV and e.msg == "NODEFAIL"
                  and e.node == samebranch_drill.sc.sink]
    assert len(sink_fails) == 2
    rebuilds = [e for e in samebranch_drill.events if e.kind == tr.REBUILD]
    assert [e.extra["failed"] for e in rebuilds] == ["5", "5|11"]


def test_wake_skew_zero_delay_forces_duplicate_sends(wake_skew_zero):
    """Interior nodes wake late; a leaf's first try beats the parent's radio."""
    m = wake_skew_zero.metrics
    leaves = (10, 11, 12, 13)
    slots = wake_skew_zero.sc.protocol.slots_per_round
    for leaf in leaves:
        tries = [m.data_tries.get((0, leaf, s), 0) for s in range(slots)]
        modal = max(set(tries), key=tries.count)
        assert modal == 2
    # data still arrives: full yield for everyone
    for nid in (3, 4, 10, 11, 12, 13):
        assert len(m.yields_[(0, nid)]) == slots


def test_wake_skew_initial_delay_restores_single_tries(wake_skew_500ms):
    m = wake_skew_500ms.metrics
    slots = wake_skew_500ms.sc.protocol.slots_per_round
    for nid in (3, 4, 10, 11, 12, 13):
        for s in range(slots):
            assert m.data_tries.get((0, nid, s), 0) == 1
        assert len(m.yields_[(0, nid)]) == slots
