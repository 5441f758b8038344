"""Trace records: the unit the simulator emits and the analyzer consumes.

One record per line, tab separated, stable column order, UTF-8:

    t_us  node  kind  msg  src  dst  seq  slot  rssi  extra

Numeric fields use fixed decimal formats so a run's trace is byte-identical
across platforms. Missing values are "-". extra is "key=value" pairs joined
with commas; list values inside extra use "|" separators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

COLUMNS = ("t_us", "node", "kind", "msg", "src", "dst", "seq", "slot", "rssi", "extra")
HEADER = "\t".join(COLUMNS)

# record kinds
META = "META"
ROUND = "ROUND"
STATE = "STATE"
SEND = "SEND"
RECV = "RECV"
SNOOP = "SNOOP"
TIMEOUT = "TIMEOUT"
REPORT = "REPORT"
ASSEMBLY = "ASSEMBLY"
GRAPH = "GRAPH"
TREE = "TREE"
REBUILD = "REBUILD"
WARN = "WARN"

# node phases as they appear in STATE records
DISCOVERY = "DISCOVERY"
FLOODING = "FLOODING"
AWAIT_CDM = "AWAIT_CDM"
SYNCING = "SYNCING"
ACTIVE_SLOT = "ACTIVE_SLOT"
SLEEPING = "SLEEPING"
DEAD = "DEAD"

_PHASE_ORDER = {
    (DISCOVERY, FLOODING),
    (FLOODING, AWAIT_CDM),
    # a node whose tree assignment arrives while it is still relaying
    # neighbour lists skips the explicit wait state
    (FLOODING, SYNCING),
    (AWAIT_CDM, SYNCING),
    (SYNCING, ACTIVE_SLOT),
    (ACTIVE_SLOT, SLEEPING),
    (SLEEPING, ACTIVE_SLOT),
    # next round, or a stale node resetting when it hears fresh discovery traffic
    (SLEEPING, DISCOVERY),
    (AWAIT_CDM, DISCOVERY),
    (SYNCING, DISCOVERY),
    (ACTIVE_SLOT, DISCOVERY),
}


@dataclass(slots=True)
class TraceEvent:
    t_us: int
    node: int
    kind: str
    msg: str = "-"
    src: int | None = None
    dst: int | None = None
    seq: int | None = None
    slot: int = -1
    rssi: float | None = None
    extra: dict = field(default_factory=dict)

    def encode(self) -> str:
        src = "-" if self.src is None else str(self.src)
        dst = "-" if self.dst is None else str(self.dst)
        seq = "-" if self.seq is None else str(self.seq)
        rssi = "-" if self.rssi is None else f"{self.rssi:.2f}"
        if self.extra:
            extra = ",".join(f"{k}={v}" for k, v in self.extra.items())
        else:
            extra = "-"
        return (f"{self.t_us}\t{self.node}\t{self.kind}\t{self.msg}\t{src}\t{dst}"
                f"\t{seq}\t{self.slot}\t{rssi}\t{extra}")

    @classmethod
    def decode(cls, line: str) -> "TraceEvent":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"malformed trace line: {line!r}")
        t, node, kind, msg, src, dst, seq, slot, rssi, extra = parts
        ev = cls(
            t_us=int(t),
            node=int(node),
            kind=kind,
            msg=msg,
            src=None if src == "-" else int(src),
            dst=None if dst == "-" else int(dst),
            seq=None if seq == "-" else int(seq),
            slot=int(slot),
            rssi=None if rssi == "-" else float(rssi),
        )
        if extra != "-":
            for pair in extra.split(","):
                k, _, v = pair.partition("=")
                ev.extra[k] = v
        return ev


def write_trace(path, events) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HEADER + "\n")
        for ev in events:
            fh.write(ev.encode() + "\n")


def read_trace(path) -> list[TraceEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first.rstrip("\n") != HEADER:
            raise ValueError("not a trace file (bad header)")
        for line in fh:
            if line.strip():
                events.append(TraceEvent.decode(line))
    return events


def lint_phase_order(events) -> list[str]:
    """Check every node's STATE sequence against the protocol's phase diagram.

    Returns a list of human-readable violations; empty means clean.
    """
    problems = []
    current: dict[int, str] = {}
    for ev in events:
        if ev.kind != STATE:
            continue
        nxt = ev.extra.get("state")
        if nxt is None:
            problems.append(f"t={ev.t_us} node={ev.node}: STATE record without state")
            continue
        prev = current.get(ev.node)
        ok = (
            nxt == DEAD
            or (prev is None and nxt == DISCOVERY)
            or (prev is not None and (prev, nxt) in _PHASE_ORDER)
        )
        if not ok:
            problems.append(f"t={ev.t_us} node={ev.node}: bad transition {prev} -> {nxt}")
        current[ev.node] = nxt
    return problems
