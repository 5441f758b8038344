"""Graph model for tree-based data collection networks.

Vertices are node ids with a remaining-capacity annotation (mAh), edges carry
link-quality weights. The sink builds a shortest-path tree over this graph and
rebuilds it when nodes fail.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

NodeId = int

# dst value meaning "all neighbours"; real node ids start at 1
BROADCAST: NodeId = 0

# weight constants: capacity term scale and rssi term scale
K1_DEFAULT = 5.0 * 2200.0
K2_DEFAULT = -5.0


class MsgKind(str, Enum):
    NDM = "NDM"
    NBM = "NBM"
    NBM_ACK = "NBM_ACK"
    CDM = "CDM"
    CDM_ACK = "CDM_ACK"
    SYNC = "SYNC"
    SYNCED = "SYNCED"
    DATA = "DATA"
    DATA_ACK = "DATA_ACK"
    SLEEP = "SLEEP"
    NODEFAIL = "NODEFAIL"
    NODEFAIL_ACK = "NODEFAIL_ACK"

    def __str__(self) -> str:
        return self.value


@dataclass
class Message:
    """One radio message. dst == BROADCAST means every listener may take it."""

    kind: MsgKind
    src: NodeId
    dst: NodeId
    seq: int
    payload: dict = field(default_factory=dict)


@dataclass
class SensorReading:
    """One sensing burst: agronomic values plus the node's own battery voltage."""

    node: NodeId
    slot: int
    soil_moisture_pct: float
    soil_temp_c: float
    air_temp_c: float
    rel_humidity_pct: float
    battery_mv: float

    def validate(self) -> None:
        if not 0.0 <= self.rel_humidity_pct <= 100.0:
            raise ValueError(f"humidity out of range: {self.rel_humidity_pct}")
        if not 2500.0 <= self.battery_mv <= 4300.0:
            raise ValueError(f"battery mv out of range: {self.battery_mv}")


@dataclass
class LinkRecord:
    """Running view of one neighbour during discovery."""

    neighbour: NodeId
    avg_rssi: float = 0.0
    ndm_received: int = 0
    ndm_expected: int = 0
    remote_capacity_mah: float = 0.0

    def update(self, rssi: float, remote_capacity_mah: float) -> None:
        """Fold one discovery message into the running mean."""
        self.ndm_received += 1
        self.avg_rssi += (rssi - self.avg_rssi) / self.ndm_received
        self.remote_capacity_mah = remote_capacity_mah


def edge_weight(rc_u: float, rc_v: float, avg_rssi: float,
                k1: float = K1_DEFAULT, k2: float = K2_DEFAULT) -> float:
    """Directed link weight: capacity term plus signal-strength term.

    Lower is better. Healthy batteries and strong links give small weights;
    k2 < 0 turns the (negative) rssi into a positive penalty.
    """
    if rc_u <= 0 or rc_v <= 0:
        raise ValueError("remaining capacity must be positive")
    if avg_rssi >= 0:
        raise ValueError("avg_rssi must be negative dBm")
    if k1 <= 0 or k2 >= 0:
        raise ValueError("expected k1 > 0 and k2 < 0")
    return k1 * (1.0 / rc_u + 1.0 / rc_v) + k2 * avg_rssi


def symmetrize(e_uv: float, e_vu: float) -> float:
    """Undirected weight from the two directed estimates: keep the worse one."""
    return max(e_uv, e_vu)


@dataclass
class NetworkGraph:
    """Undirected weighted graph assembled at the sink.

    vertices: id -> remaining capacity (mAh); edges keyed by (min, max) pair.
    """

    vertices: dict[NodeId, float] = field(default_factory=dict)
    edges: dict[tuple[NodeId, NodeId], float] = field(default_factory=dict)

    @staticmethod
    def edge_key(u: NodeId, v: NodeId) -> tuple[NodeId, NodeId]:
        return (u, v) if u < v else (v, u)

    def add_vertex(self, u: NodeId, capacity_mah: float) -> None:
        if capacity_mah < 0:
            raise ValueError("vertex capacity must be >= 0")
        self.vertices[u] = capacity_mah

    def add_edge(self, u: NodeId, v: NodeId, weight: float) -> None:
        if u == v:
            raise ValueError("self loops are not allowed")
        if weight <= 0:
            raise ValueError("edge weight must be positive")
        self.edges[self.edge_key(u, v)] = weight

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return self.edge_key(u, v) in self.edges

    def weight(self, u: NodeId, v: NodeId) -> float:
        return self.edges[self.edge_key(u, v)]

    def neighbours(self, u: NodeId) -> list[NodeId]:
        out = []
        for (a, b) in self.edges:
            if a == u:
                out.append(b)
            elif b == u:
                out.append(a)
        return sorted(out)

    def degree(self, u: NodeId) -> int:
        return len(self.neighbours(u))

    def max_degree(self) -> int:
        if not self.vertices:
            return 0
        return max(self.degree(u) for u in self.vertices)

    def edge_set(self) -> set[tuple[NodeId, NodeId]]:
        return set(self.edges)

    def without(self, removed: set[NodeId]) -> "NetworkGraph":
        g = NetworkGraph()
        for u, cap in self.vertices.items():
            if u not in removed:
                g.vertices[u] = cap
        for (a, b), w in self.edges.items():
            if a not in removed and b not in removed:
                g.edges[(a, b)] = w
        return g

    def to_edge_lines(self) -> str:
        """Text form: one `EDGE u v weight` line per edge, sorted, 0.01 resolution."""
        lines = [f"EDGE {a} {b} {w:.2f}" for (a, b), w in sorted(self.edges.items())]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_edge_lines(cls, text: str) -> "NetworkGraph":
        g = cls()
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            tag, a, b, w = ln.split()
            if tag != "EDGE":
                raise ValueError(f"expected EDGE line, got: {ln}")
            u, v, wt = int(a), int(b), float(w)
            g.vertices.setdefault(u, 0.0)
            g.vertices.setdefault(v, 0.0)
            g.add_edge(u, v, wt)
        return g


@dataclass
class CollectionTree:
    """Rooted tree: parent map plus sorted children lists, root maps to itself."""

    root: NodeId
    parent: dict[NodeId, NodeId] = field(default_factory=dict)
    children: dict[NodeId, list[NodeId]] = field(default_factory=dict)

    @classmethod
    def from_parent_map(cls, root: NodeId, parent: dict[NodeId, NodeId]) -> "CollectionTree":
        t = cls(root=root, parent=dict(parent))
        t.parent[root] = root
        t.children = {u: [] for u in t.parent}
        for u, p in t.parent.items():
            if u != root:
                t.children.setdefault(p, []).append(u)
        for p in t.children:
            t.children[p].sort()
        t.validate()
        return t

    def validate(self) -> None:
        if self.parent.get(self.root) != self.root:
            raise ValueError("root must be its own parent")
        for u, p in self.parent.items():
            if u == self.root:
                continue
            if p not in self.parent:
                raise ValueError(f"parent {p} of {u} is not in the tree")
            if u not in self.children.get(p, []):
                raise ValueError(f"children map out of sync for {u}")
        # walking up from any node must reach the root (no cycles)
        for u in self.parent:
            seen = set()
            v = u
            while v != self.root:
                if v in seen:
                    raise ValueError(f"cycle detected at {v}")
                seen.add(v)
                v = self.parent[v]

    def nodes(self) -> list[NodeId]:
        return sorted(self.parent)

    def is_leaf(self, u: NodeId) -> bool:
        return not self.children.get(u)

    def depth(self, u: NodeId) -> int:
        d = 0
        while u != self.root:
            u = self.parent[u]
            d += 1
        return d

    def subtree(self, u: NodeId) -> list[NodeId]:
        out, stack = [], [u]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(self.children.get(v, []))
        return sorted(out)

    def to_tree_lines(self) -> str:
        """Text form: one `TREE child parent` line per non-root node, sorted."""
        lines = [f"TREE {u} {p}" for u, p in sorted(self.parent.items()) if u != self.root]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_tree_lines(cls, text: str, root: NodeId) -> "CollectionTree":
        parent = {root: root}
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            tag, c, p = ln.split()
            if tag != "TREE":
                raise ValueError(f"expected TREE line, got: {ln}")
            parent[int(c)] = int(p)
        return cls.from_parent_map(root, parent)


def subtree_height(parent: dict[NodeId, NodeId], u: NodeId) -> int:
    """Longest downward path from u in a parent-map tree (leaf = 0)."""
    kids: dict[NodeId, list[NodeId]] = {}
    for c, p in parent.items():
        if c != p:
            kids.setdefault(p, []).append(c)
    best = 0
    stack = [(u, 0)]
    while stack:
        v, d = stack.pop()
        if d > best:
            best = d
        for w in kids.get(v, ()):
            stack.append((w, d + 1))
    return best


def dijkstra_spt(graph: NetworkGraph, root: NodeId) -> tuple[CollectionTree, list[NodeId]]:
    """Shortest-path tree from the root; ties broken toward the smaller parent id.

    Returns the tree over the reachable component plus the sorted list of
    unreachable vertices (caller decides what to do with them).
    """
    if root not in graph.vertices:
        raise ValueError(f"root {root} is not a vertex")
    adj: dict[NodeId, list[tuple[NodeId, float]]] = {u: [] for u in graph.vertices}
    for (a, b), w in graph.edges.items():
        adj[a].append((b, w))
        adj[b].append((a, w))
    for u in adj:
        adj[u].sort()

    dist: dict[NodeId, float] = {root: 0.0}
    parent: dict[NodeId, NodeId] = {root: root}
    done: set[NodeId] = set()
    heap: list[tuple[float, NodeId]] = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done or d > dist.get(u, float("inf")):
            continue
        done.add(u)
        for v, w in adj[u]:
            if v in done:
                continue
            alt = d + w
            cur = dist.get(v, float("inf"))
            if alt < cur or (alt == cur and u < parent.get(v, u + 1)):
                dist[v] = alt
                parent[v] = u
                heapq.heappush(heap, (alt, v))

    unreachable = sorted(u for u in graph.vertices if u not in parent)
    tree = CollectionTree.from_parent_map(root, parent)
    return tree, unreachable


def path_cost(graph: NetworkGraph, tree: CollectionTree, u: NodeId) -> float:
    """Sum of edge weights along the tree path from u up to the root."""
    total = 0.0
    while u != tree.root:
        total += graph.weight(u, tree.parent[u])
        u = tree.parent[u]
    return total


def rebuild_without(graph: NetworkGraph, failed: set[NodeId],
                    root: NodeId) -> tuple[CollectionTree, list[NodeId]]:
    """New tree after removing failed vertices; orphans returned separately."""
    if root in failed:
        raise ValueError("cannot remove the root")
    return dijkstra_spt(graph.without(set(failed)), root)
