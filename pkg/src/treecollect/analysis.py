"""Turn trace files into the evaluation tables the simulator is judged by.

Everything here is a pure function of a decoded event list: node yield,
per-node packet censuses (from the real trace or from a snooper log),
ACK+SLEEP double-loss detection, battery expenditure tables, consecutive
graph comparison, and the per-phase transmission-bound audit. The engine
keeps its own counters during a run; tests hold these recomputations equal
to those counters, so the analyzer works on traces from any source.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import trace as tr
from .battery import (MEASUREMENT_LOAD_A, RATED_CAPACITY_MAH, SocOcvCurve,
                      ocv_from_loaded)

_KIND_DATA = "DATA"
_KIND_DATA_ACK = "DATA_ACK"
_KIND_SLEEP = "SLEEP"


def run_meta(events) -> dict:
    """The run header: node count, discovery beacon count, slot layout."""
    for ev in events:
        if ev.kind == tr.META and ev.msg == "run":
            x = ev.extra
            return {
                "scenario": str(x.get("scenario", "")),
                "seed": int(x["seed"]),
                "n": int(x["n"]),
                "sink": int(x["sink"]),
                "k": int(x["k"]),
                "slots": int(x["slots"]),
                "rounds": int(x["rounds"]),
                "dci_us": int(x["dci_us"]),
                "max_retries": int(x["max_retries"]),
            }
    raise ValueError("trace has no run header")


def list_rounds(events) -> list[int]:
    return sorted({int(ev.extra["round"]) for ev in events if ev.kind == tr.ROUND})


def round_slice(events, round_no: int):
    """Events from a round's marker up to the next round's marker."""
    start = end = None
    for i, ev in enumerate(events):
        if ev.kind != tr.ROUND:
            continue
        if int(ev.extra["round"]) == round_no:
            start = i
        elif start is not None:
            end = i
            break
    if start is None:
        raise ValueError(f"trace does not contain round {round_no}")
    return events[start:end]


def _tree_nodes(events) -> set[int]:
    nodes: set[int] = set()
    for ev in events:
        if ev.kind != tr.TREE:
            continue
        parents = ev.extra.get("parents", "")
        if parents:
            for pair in str(parents).split("|"):
                u, _, p = pair.partition(":")
                nodes.add(int(u))
                nodes.add(int(p))
    return nodes


# ------------------------------------------------------------------- yield


@dataclass
class YieldReport:
    per_node: dict[int, int]
    slots_seen: int
    slots_expected: int
    partial: bool  # the trace ended before the round did


def yield_report(events, round_no: int) -> YieldReport:
    meta = run_meta(events)
    span = round_slice(events, round_no)
    counts: dict[int, int] = {n: 0 for n in _tree_nodes(span)}
    counts.pop(meta["sink"], None)  # the sink holds the data, it has no yield
    slots_seen = 0
    for ev in span:
        if ev.kind == tr.ASSEMBLY:
            slots_seen += 1
        elif ev.kind == tr.REPORT:
            origin = int(ev.extra["origin"])
            counts[origin] = counts.get(origin, 0) + 1
    return YieldReport(per_node=dict(sorted(counts.items())),
                       slots_seen=slots_seen,
                       slots_expected=meta["slots"],
                       partial=slots_seen < meta["slots"])


def node_yield(events, round_no: int) -> dict[int, int]:
    """Slots in which each node's reading reached the sink."""
    return yield_report(events, round_no).per_node


# ------------------------------------------------------------------ census


@dataclass
class Census:
    data_sent: int = 0        # DATA transmissions, retries included
    acks_received: int = 0    # DATA_ACK transmissions addressed to the node
    sleeps_sent: int = 0
    sleeps_received: int = 0  # always 0 in the snooper view
    max_tries: dict[int, int] = field(default_factory=dict)  # slot -> tries

    def worst_tries(self) -> int:
        return max(self.max_tries.values(), default=0)


def packet_census(events, round_no: int, view: str = "truth") -> dict[int, Census]:
    """Per-node transmission counts, from the trace or a snooper log.

    The truth view reads SEND/RECV records; the snooper view reads SNOOP
    records, counting each overheard transmission once even when several
    snoopers logged it. Snooper counts are elementwise lower bounds.
    """
    if view not in ("truth", "snooper"):
        raise ValueError(f"unknown census view: {view!r}")
    span = round_slice(events, round_no)
    census: dict[int, Census] = {}

    def cell(node: int) -> Census:
        return census.setdefault(node, Census())

    if view == "truth":
        for ev in span:
            if ev.kind == tr.SEND:
                if ev.msg == _KIND_DATA:
                    c = cell(ev.node)
                    c.data_sent += 1
                    t = int(ev.extra.get("try", 1))
                    if t > c.max_tries.get(ev.slot, 0):
                        c.max_tries[ev.slot] = t
                elif ev.msg == _KIND_DATA_ACK:
                    cell(ev.dst).acks_received += 1
                elif ev.msg == _KIND_SLEEP:
                    cell(ev.node).sleeps_sent += 1
            elif ev.kind == tr.RECV and ev.msg == _KIND_SLEEP:
                cell(ev.node).sleeps_received += 1
        return dict(sorted(census.items()))

    seen: set[tuple] = set()
    for ev in span:
        if ev.kind != tr.SNOOP:
            continue
        key = (ev.msg, ev.src, ev.seq, ev.t_us)
        if key in seen:
            continue
        seen.add(key)
        if ev.msg == _KIND_DATA:
            c = cell(ev.src)
            c.data_sent += 1
            t = int(ev.extra.get("try", 1))
            if t > c.max_tries.get(ev.slot, 0):
                c.max_tries[ev.slot] = t
        elif ev.msg == _KIND_DATA_ACK:
            cell(ev.dst).acks_received += 1
        elif ev.msg == _KIND_SLEEP:
            cell(ev.src).sleeps_sent += 1
    return dict(sorted(census.items()))


# ---------------------------------------------------------------- dualloss


@dataclass
class DuallossEvent:
    round_no: int
    slot: int
    child: int
    tries: int
    data_lost: bool  # True only if the reading also missed the sink


def detect_dualloss(events) -> list[DuallossEvent]:
    """Slots where a child's delivered upload got neither ACK nor SLEEP back.

    The signature is: the parent heard the DATA, every DATA_ACK toward the
    child was lost, the end-of-slot SLEEP toward the child was lost too, and
    the child retried to the cap. The paper's point, checked by data_lost,
    is that the duplicates never cost actual data.
    """
    cap = run_meta(events)["max_retries"]
    tries: dict[tuple, int] = {}
    heard: set[tuple] = set()
    acked: set[tuple] = set()
    slept: set[tuple] = set()
    reported: set[tuple] = set()
    rnd = -1
    for ev in events:
        if ev.kind == tr.ROUND:
            rnd = int(ev.extra["round"])
        elif ev.kind == tr.SEND and ev.msg == _KIND_DATA:
            key = (rnd, ev.slot, ev.node)
            t = int(ev.extra.get("try", 1))
            if t > tries.get(key, 0):
                tries[key] = t
        elif ev.kind == tr.RECV:
            if ev.msg == _KIND_DATA:
                heard.add((rnd, ev.slot, ev.src))
            elif ev.msg == _KIND_DATA_ACK:
                acked.add((rnd, ev.slot, ev.node))
            elif ev.msg == _KIND_SLEEP:
                slept.add((rnd, ev.slot, ev.node))
        elif ev.kind == tr.REPORT:
            reported.add((rnd, ev.slot, int(ev.extra["origin"])))
    out = []
    for key, t in sorted(tries.items()):
        if (t >= cap and key in heard
                and key not in acked and key not in slept):
            r, s, child = key
            out.append(DuallossEvent(round_no=r, slot=s, child=child, tries=t,
                                     data_lost=key not in reported))
    return out


# ------------------------------------------------------------------ energy


@dataclass
class EnergyRow:
    node: int
    delta_mv: float
    delta_mah: float


@dataclass
class EnergyTable:
    rows: list[EnergyRow]
    omitted: list[int]  # nodes without two battery reports in the window


def _mah_from_mv(mv: float, curve: SocOcvCurve, rated_mah: float) -> float:
    ocv = ocv_from_loaded(mv / 1000.0, MEASUREMENT_LOAD_A)
    return curve.soc_from_ocv(ocv) * rated_mah


def energy_table(events, window=None, round_no=None,
                 rated_mah: float = RATED_CAPACITY_MAH) -> EnergyTable:
    """Battery expenditure between the first and last report per node.

    window is an inclusive (t0_us, t1_us) pair; passing round_no instead
    uses that round's span. Reported voltages are under the measurement
    load, so they are lifted to open-circuit before the SOC lookup.
    """
    if round_no is not None:
        span = round_slice(events, round_no)
    elif window is not None:
        t0, t1 = window
        span = [ev for ev in events if t0 <= ev.t_us <= t1]
    else:
        span = events
    first: dict[int, float] = {}
    last: dict[int, float] = {}
    for ev in span:
        if ev.kind != tr.REPORT:
            continue
        node = int(ev.extra["origin"])
        mv = float(ev.extra["battery_mv"])
        first.setdefault(node, mv)
        last[node] = mv
    curve = SocOcvCurve()
    rows = []
    omitted = []
    for node in sorted(first):
        if first[node] == last[node] and _count_reports(span, node) < 2:
            omitted.append(node)
            continue
        d_mv = first[node] - last[node]
        d_mah = (_mah_from_mv(first[node], curve, rated_mah)
                 - _mah_from_mv(last[node], curve, rated_mah))
        rows.append(EnergyRow(node=node, delta_mv=round(d_mv, 3),
                              delta_mah=round(d_mah, 4)))
    rows.sort(key=lambda r: (-r.delta_mah, r.node))
    return EnergyTable(rows=rows, omitted=omitted)


def _count_reports(span, node: int) -> int:
    n = 0
    for ev in span:
        if ev.kind == tr.REPORT and int(ev.extra["origin"]) == node:
            n += 1
            if n >= 2:
                break
    return n


# ------------------------------------------------------------- graph diff


@dataclass
class GraphDiff:
    added: int
    removed: int
    retained: int
    common_to_all: int


def _edge_set(g) -> set:
    if hasattr(g, "edge_set"):
        return set(g.edge_set())
    return set(g)


def graph_diff(graphs) -> list[GraphDiff]:
    """Compare consecutive graphs by edge pairs, plus the all-rounds core."""
    sets = [_edge_set(g) for g in graphs]
    if len(sets) < 2:
        raise ValueError("need at least two graphs to compare")
    core = set.intersection(*sets)
    out = []
    for prev, cur in zip(sets, sets[1:]):
        out.append(GraphDiff(added=len(cur - prev),
                             removed=len(prev - cur),
                             retained=len(prev & cur),
                             common_to_all=len(core)))
    return out


# ------------------------------------------------------------- bound audit


@dataclass
class PhaseAudit:
    phase: str
    actual: int
    bound: int

    @property
    def ok(self) -> bool:
        return self.actual <= self.bound

    @property
    def slack(self) -> int:
        return self.bound - self.actual


@dataclass
class BoundAudit:
    n: int
    k: int
    d: int
    m: int
    phases: list[PhaseAudit]
    total_actual: int
    total_bound: int

    @property
    def ok(self) -> bool:
        return (self.total_actual <= self.total_bound
                and all(p.ok for p in self.phases))

    def failing(self) -> list[str]:
        return [p.phase for p in self.phases if not p.ok]


def bound_audit(events, round_no: int, m_sync: int = 10) -> BoundAudit:
    """Check one round's control traffic against its per-phase ceilings.

    The ceilings come from the worst-case transmission count of each-phase:
    k beacons from each of n nodes; every node's neighbour list crossing a
    network of diameter at most n-1 with per-hop confirmations; the tree
    pushed down and confirmed once per non-sink node; and m_sync timestamp
    broadcasts plus one completion report per non-sink node.
    """
    meta = run_meta(events)
    n, k = meta["n"], meta["k"]
    d = n - 1
    sent: dict[str, int] = {}
    for ev in round_slice(events, round_no):
        if ev.kind == tr.SEND:
            sent[ev.msg] = sent.get(ev.msg, 0) + 1
    phases = [
        PhaseAudit("discovery", sent.get("NDM", 0), k * n),
        PhaseAudit("flooding",
                   sent.get("NBM", 0) + sent.get("NBM_ACK", 0),
                   (d + 1) * (n - 1) ** 2),
        PhaseAudit("dissemination",
                   sent.get("CDM", 0) + sent.get("CDM_ACK", 0),
                   2 * (n - 1)),
        PhaseAudit("sync",
                   sent.get("SYNC", 0) + sent.get("SYNCED", 0),
                   (m_sync + 1) * (n - 1)),
    ]
    return BoundAudit(n=n, k=k, d=d, m=m_sync, phases=phases,
                      total_actual=sum(p.actual for p in phases),
                      total_bound=sum(p.bound for p in phases))


# ----------------------------------------------------------------- bundle


@dataclass
class MetricsBundle:
    """Everything the evaluation cares about for one node in one round."""

    node: int
    yield_: int
    data_sent: int
    acks_received: int
    sleeps_sent: int
    sleeps_received: int
    max_tries_per_slot: dict[int, int]
    dualloss_events: int
    energy_drop: tuple[float, float] | None  # (mV, mAh), None without reports


def build_bundles(events, round_no: int) -> dict[int, MetricsBundle]:
    yields = node_yield(events, round_no)
    census = packet_census(events, round_no)
    dual = [e for e in detect_dualloss(events) if e.round_no == round_no]
    energy = {r.node: (r.delta_mv, r.delta_mah)
              for r in energy_table(events, round_no=round_no).rows}
    out = {}
    for node in sorted(set(yields) | set(census)):
        c = census.get(node, Census())
        out[node] = MetricsBundle(
            node=node,
            yield_=yields.get(node, 0),
            data_sent=c.data_sent,
            acks_received=c.acks_received,
            sleeps_sent=c.sleeps_sent,
            sleeps_received=c.sleeps_received,
            max_tries_per_slot=dict(c.max_tries),
            dualloss_events=sum(1 for e in dual if e.child == node),
            energy_drop=energy.get(node),
        )
    return out
