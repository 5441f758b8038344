"""Graph, weight, and tree-construction tests.

The shortest-path tree is checked against an independent Bellman-Ford
relaxation oracle, not against another Dijkstra.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecollect.core import (BROADCAST, CollectionTree, LinkRecord,
                              NetworkGraph, SensorReading, dijkstra_spt,
                              edge_weight, path_cost, rebuild_without,
                              subtree_height, symmetrize)


def bellman_ford(graph: NetworkGraph, root) -> dict:
    """Distance oracle: plain |V|-1 rounds of edge relaxation."""
    dist = {u: math.inf for u in graph.vertices}
    dist[root] = 0.0
    for _ in range(len(graph.vertices) - 1):
        changed = False
        for (u, v), w in graph.edges.items():
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
            if dist[v] + w < dist[u]:
                dist[u] = dist[v] + w
                changed = True
        if not changed:
            break
    return dist


def random_connected_graph(rng: np.random.Generator, n: int) -> NetworkGraph:
    """Random spanning tree plus extra edges; weights in the protocol's range."""
    g = NetworkGraph()
    ids = list(range(1, n + 1))
    for u in ids:
        g.add_vertex(u, float(rng.uniform(200.0, 2200.0)))
    for v in ids[1:]:
        u = int(rng.integers(1, v))
        g.add_edge(u, v, float(rng.uniform(300.0, 500.0)))
    extras = int(rng.integers(0, n * (n - 1) // 2 - (n - 1) + 1))
    for _ in range(extras):
        u, v = rng.choice(ids, size=2, replace=False)
        if not g.has_edge(int(u), int(v)):
            g.add_edge(int(u), int(v), float(rng.uniform(300.0, 500.0)))
    return g


# ----------------------------------------------------------------- weights


def test_edge_weight_hand_values():
    # hand evaluations of the capacity + rssi form with the stock constants
    assert edge_weight(2200, 2200, -60, 11000, -5) == pytest.approx(310.0)
    assert edge_weight(1100, 2200, -85, 11000, -5) == pytest.approx(440.0)
    assert edge_weight(2200, 2200, -85, 11000, -5) == pytest.approx(435.0)


def test_edge_weight_rejects_bad_domain():
    with pytest.raises(ValueError):
        edge_weight(0, 2200, -60)
    with pytest.raises(ValueError):
        edge_weight(2200, -5, -60)
    with pytest.raises(ValueError):
        edge_weight(2200, 2200, 10.0)
    with pytest.raises(ValueError):
        edge_weight(2200, 2200, -60, k1=-1.0)
    with pytest.raises(ValueError):
        edge_weight(2200, 2200, -60, k2=2.0)


@given(rc_u=st.floats(100.0, 2200.0), rc_v=st.floats(100.0, 2200.0),
       rssi=st.floats(-95.0, -20.0), bump=st.floats(1.0, 500.0))
def test_edge_weight_monotone_in_capacity(rc_u, rc_v, rssi, bump):
    base = edge_weight(rc_u, rc_v, rssi)
    assert edge_weight(rc_u + bump, rc_v, rssi) <= base
    assert edge_weight(rc_u, rc_v + bump, rssi) <= base


@given(rc=st.floats(100.0, 2200.0), rssi=st.floats(-95.0, -20.0),
       drop=st.floats(0.1, 40.0))
def test_edge_weight_monotone_in_rssi(rc, rssi, drop):
    weaker = max(rssi - drop, -140.0)
    assert edge_weight(rc, rc, weaker) >= edge_weight(rc, rc, rssi)


@given(a=st.floats(0.0, 1e6), b=st.floats(0.0, 1e6))
def test_symmetrize_commutative_idempotent(a, b):
    s = symmetrize(a, b)
    assert s == symmetrize(b, a)
    assert symmetrize(s, s) == s
    assert s == max(a, b)


def test_symmetrize_keeps_worse_direction():
    assert symmetrize(310.0, 440.0) == 440.0
    assert symmetrize(435.0, 435.0) == 435.0


def test_link_record_running_mean():
    rec = LinkRecord(neighbour=5)
    for rssi in (-60.0, -70.0, -65.0):
        rec.update(rssi, remote_capacity_mah=2100.0)
    assert rec.ndm_received == 3
    assert rec.avg_rssi == pytest.approx(-65.0)
    assert rec.remote_capacity_mah == 2100.0


# ------------------------------------------------------------------- graph


def test_graph_rejects_self_loops_and_nonpositive_weights():
    g = NetworkGraph()
    g.add_vertex(1, 2200.0)
    g.add_vertex(2, 2200.0)
    with pytest.raises(ValueError):
        g.add_edge(1, 1, 5.0)
    with pytest.raises(ValueError):
        g.add_edge(1, 2, 0.0)
    with pytest.raises(ValueError):
        g.add_vertex(3, -1.0)


def test_graph_edges_undirected():
    g = NetworkGraph()
    g.add_vertex(1, 2200.0)
    g.add_vertex(2, 2200.0)
    g.add_edge(2, 1, 7.5)
    assert g.has_edge(1, 2) and g.has_edge(2, 1)
    assert g.weight(1, 2) == g.weight(2, 1) == 7.5
    assert g.neighbours(1) == [2]
    assert g.degree(2) == 1


def test_graph_edge_lines_round_trip():
    rng = np.random.default_rng(11)
    g = random_connected_graph(rng, 8)
    text = g.to_edge_lines()
    back = NetworkGraph.from_edge_lines(text)
    assert back.edge_set() == g.edge_set()
    for key, w in g.edges.items():
        assert back.edges[key] == pytest.approx(w, abs=0.005)  # 0.01 resolution


def test_graph_without_removes_vertex_and_incident_edges():
    g = NetworkGraph()
    for u in (1, 2, 3):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 1.0)
    g.add_edge(2, 3, 1.0)
    h = g.without({2})
    assert set(h.vertices) == {1, 3}
    assert h.edges == {}


def test_broadcast_id_reserved():
    assert BROADCAST == 0


# -------------------------------------------------------------------- tree


def test_tree_from_parent_map_builds_children_inverse():
    t = CollectionTree.from_parent_map(2, {2: 2, 3: 2, 4: 2, 5: 3})
    assert t.children[2] == [3, 4]
    assert t.children[3] == [5]
    assert t.is_leaf(5) and not t.is_leaf(3)
    assert t.depth(5) == 2
    assert t.subtree(3) == [3, 5]
    assert t.nodes() == [2, 3, 4, 5]


def test_tree_rejects_cycles_and_unknown_parents():
    with pytest.raises(ValueError):
        CollectionTree.from_parent_map(1, {1: 1, 2: 3, 3: 2})
    with pytest.raises(ValueError):
        CollectionTree.from_parent_map(1, {1: 1, 2: 9})


def test_tree_lines_round_trip():
    t = CollectionTree.from_parent_map(2, {2: 2, 3: 2, 4: 3, 5: 3})
    back = CollectionTree.from_tree_lines(t.to_tree_lines(), root=2)
    assert back.parent == t.parent
    assert back.children == t.children


def test_subtree_height():
    parent = {2: 2, 3: 2, 4: 3, 5: 4, 6: 2}
    assert subtree_height(parent, 2) == 3
    assert subtree_height(parent, 3) == 2
    assert subtree_height(parent, 5) == 0
    assert subtree_height(parent, 6) == 0


# ---------------------------------------------------------------- dijkstra


def test_spt_path_graph():
    g = NetworkGraph()
    for u in (1, 2, 3):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 5.0)
    g.add_edge(2, 3, 7.0)
    tree, unreachable = dijkstra_spt(g, 1)
    assert unreachable == []
    assert tree.parent == {1: 1, 2: 1, 3: 2}


def test_spt_square_brute_forced():
    # 1-2 (1), 2-4 (1), 1-3 (5), 3-4 (1): the 3-hop route to 3 wins, cost 3
    g = NetworkGraph()
    for u in (1, 2, 3, 4):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 1.0)
    g.add_edge(2, 4, 1.0)
    g.add_edge(1, 3, 5.0)
    g.add_edge(3, 4, 1.0)
    tree, _ = dijkstra_spt(g, 1)
    assert tree.parent == {1: 1, 2: 1, 4: 2, 3: 4}
    assert path_cost(g, tree, 3) == pytest.approx(3.0)


def test_spt_star_when_direct_edges_dominate():
    g = NetworkGraph()
    for u in (1, 2, 3, 4):
        g.add_vertex(u, 1000.0)
    for v in (2, 3, 4):
        g.add_edge(1, v, 1.0)
    g.add_edge(2, 3, 10.0)
    g.add_edge(3, 4, 10.0)
    tree, _ = dijkstra_spt(g, 1)
    assert all(tree.parent[v] == 1 for v in (2, 3, 4))


def test_spt_matches_bellman_ford_on_random_graphs():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        n = int(rng.integers(2, 11))
        g = random_connected_graph(rng, n)
        tree, unreachable = dijkstra_spt(g, 1)
        assert unreachable == []
        oracle = bellman_ford(g, 1)
        for v in g.vertices:
            assert path_cost(g, tree, v) == pytest.approx(oracle[v], rel=1e-12)


def test_spt_deterministic_tie_break_prefers_smaller_parent():
    # two equal-cost routes to 4; the smaller upstream id must win
    g = NetworkGraph()
    for u in (1, 2, 3, 4):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 1.0)
    g.add_edge(1, 3, 1.0)
    g.add_edge(2, 4, 1.0)
    g.add_edge(3, 4, 1.0)
    tree, _ = dijkstra_spt(g, 1)
    assert tree.parent[4] == 2


def test_spt_reports_unreachable():
    g = NetworkGraph()
    for u in (1, 2, 3):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 1.0)
    tree, unreachable = dijkstra_spt(g, 1)
    assert unreachable == [3]
    assert 3 not in tree.parent


def test_spt_root_must_exist():
    with pytest.raises(ValueError):
        dijkstra_spt(NetworkGraph(), 1)


def all_spanning_trees(g: NetworkGraph, root):
    """Every spanning tree of a small graph, as parent maps (brute force)."""
    edges = list(g.edges)
    n = len(g.vertices)
    for combo in itertools.combinations(edges, n - 1):
        adj = {u: [] for u in g.vertices}
        for (a, b) in combo:
            adj[a].append(b)
            adj[b].append(a)
        parent = {root: root}
        stack = [root]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in parent:
                    parent[v] = u
                    stack.append(v)
        if len(parent) == n:
            yield parent


def test_spt_minimizes_total_convergecast_cost():
    """Delivering one packet from every node is never cheaper on another tree.

    Total cost of a tree here is the sum over nodes of their path cost to the
    root, which the SPT minimizes per node and hence in total.
    """
    rng = np.random.default_rng(77)
    for _ in range(25):
        n = int(rng.integers(3, 8))
        g = random_connected_graph(rng, n)
        tree, _ = dijkstra_spt(g, 1)
        spt_total = sum(path_cost(g, tree, v) for v in g.vertices)
        sampled = 0
        for parent in all_spanning_trees(g, 1):
            other = CollectionTree.from_parent_map(1, parent)
            other_total = sum(path_cost(g, other, v) for v in g.vertices)
            assert spt_total <= other_total + 1e-9
            sampled += 1
            if sampled >= 500:
                break


# ----------------------------------------------------------------- rebuild


def test_rebuild_without_drops_failed_and_keeps_maps_inverse():
    rng = np.random.default_rng(5)
    g = random_connected_graph(rng, 9)
    tree, _ = dijkstra_spt(g, 1)
    failed = {u for u in (4, 7) if u in g.vertices}
    new_tree, orphans = rebuild_without(g, failed, 1)
    assert failed.isdisjoint(new_tree.parent)
    assert failed.isdisjoint(orphans)
    for u, p in new_tree.parent.items():
        if u != 1:
            assert u in new_tree.children[p]
    for p, kids in new_tree.children.items():
        for c in kids:
            assert new_tree.parent[c] == p


def test_rebuild_without_empty_set_is_identity():
    rng = np.random.default_rng(6)
    g = random_connected_graph(rng, 7)
    base, _ = dijkstra_spt(g, 1)
    again, orphans = rebuild_without(g, set(), 1)
    assert again.parent == base.parent
    assert orphans == []


def test_rebuild_without_chain_orphans_far_side():
    g = NetworkGraph()
    for u in (1, 2, 3):
        g.add_vertex(u, 1000.0)
    g.add_edge(1, 2, 1.0)
    g.add_edge(2, 3, 1.0)
    tree, orphans = rebuild_without(g, {2}, 1)
    assert tree.parent == {1: 1}
    assert orphans == [3]


def test_rebuild_cannot_remove_root():
    g = NetworkGraph()
    g.add_vertex(1, 1000.0)
    with pytest.raises(ValueError):
        rebuild_without(g, {1}, 1)


# ----------------------------------------------------------------- reading


def test_sensor_reading_validation():
    ok = SensorReading(node=3, slot=0, soil_moisture_pct=22.0, soil_temp_c=16.0,
                       air_temp_c=19.0, rel_humidity_pct=55.0, battery_mv=3700.0)
    ok.validate()
    bad_rh = SensorReading(node=3, slot=0, soil_moisture_pct=22.0,
                           soil_temp_c=16.0, air_temp_c=19.0,
                           rel_humidity_pct=120.0, battery_mv=3700.0)
    with pytest.raises(ValueError):
        bad_rh.validate()
    bad_mv = SensorReading(node=3, slot=0, soil_moisture_pct=22.0,
                           soil_temp_c=16.0, air_temp_c=19.0,
                           rel_humidity_pct=50.0, battery_mv=2000.0)
    with pytest.raises(ValueError):
        bad_mv.validate()


@settings(max_examples=50)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_spt_property_random(n, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, n)
    tree, unreachable = dijkstra_spt(g, 1)
    assert unreachable == []
    oracle = bellman_ford(g, 1)
    for v in g.vertices:
        assert path_cost(g, tree, v) == pytest.approx(oracle[v], rel=1e-12)
