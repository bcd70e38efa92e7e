"""Simulated V2V network: directed topologies and synchronous broadcast rounds.

Delivery is perfect and instantaneous within a round; the latency model is
bookkeeping for the real-time budget report only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, TypeVar

T = TypeVar("T")


@dataclass(frozen=True)
class Topology:
    nodes: frozenset[int]
    arcs: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.arcs:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if i not in self.nodes or j not in self.nodes:
                raise ValueError(f"arc ({i},{j}) references unknown node")

    @staticmethod
    def complete(nodes) -> "Topology":
        ns = frozenset(nodes)
        return Topology(ns, frozenset((i, j) for i in ns for j in ns if i != j))

    @staticmethod
    def ring(nodes) -> "Topology":
        """Directed cycle over the nodes in ascending order."""
        order = sorted(nodes)
        if len(order) < 2:
            return Topology(frozenset(order), frozenset())
        arcs = {(order[k], order[(k + 1) % len(order)]) for k in range(len(order))}
        return Topology(frozenset(order), frozenset(arcs))

    def induced(self, keep) -> "Topology":
        ks = frozenset(keep)
        if not ks <= self.nodes:
            raise ValueError("induced node set must be a subset")
        return Topology(ks, frozenset((i, j) for i, j in self.arcs if i in ks and j in ks))


@dataclass(frozen=True)
class LatencyModel:
    per_hop_latency_ms: float = 3.0

    def __post_init__(self):
        if self.per_hop_latency_ms <= 0:
            raise ValueError("per-hop latency must be > 0")


def out_neighbors(t: Topology, i: int) -> set[int]:
    if i not in t.nodes:
        raise KeyError(f"unknown node {i}")
    return {j for a, j in t.arcs if a == i}


def in_neighbors(t: Topology, i: int) -> set[int]:
    if i not in t.nodes:
        raise KeyError(f"unknown node {i}")
    return {a for a, j in t.arcs if j == i}


def _bfs_dists(adj: dict[int, list[int]], src: int) -> dict[int, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def _adjacency(t: Topology) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {i: [] for i in t.nodes}
    for i, j in sorted(t.arcs):
        adj[i].append(j)
    return adj


def is_strongly_connected(t: Topology) -> bool:
    if len(t.nodes) <= 1:
        return True
    adj = _adjacency(t)
    n = len(t.nodes)
    return all(len(_bfs_dists(adj, i)) == n for i in t.nodes)


def graph_ell(t: Topology) -> int:
    """Largest over ordered node pairs of the shortest directed path length.

    Bounds how many synchronous rounds a max-consensus sweep needs; a single
    node still costs one round.
    """
    if len(t.nodes) <= 1:
        return 1
    adj = _adjacency(t)
    worst = 0
    for i in t.nodes:
        dist = _bfs_dists(adj, i)
        if len(dist) != len(t.nodes):
            raise ValueError("topology is not strongly connected")
        worst = max(worst, max(dist.values()))
    return worst


def broadcast_round(t: Topology, payloads: Mapping[int, T]) -> dict[int, list[T]]:
    """One synchronous round: every receiver gets its in-neighbors' payloads.

    Messages arrive in ascending sender-index order, so delivery is
    deterministic regardless of the caller's iteration order.
    """
    for sender in payloads:
        if sender not in t.nodes:
            raise KeyError(f"unknown sender {sender}")
    inbox: dict[int, list[T]] = {i: [] for i in t.nodes}
    for sender in sorted(payloads):
        for j in sorted(out_neighbors(t, sender)):
            inbox[j].append(payloads[sender])
    return inbox


def cbaam_time_bound(n_agents: int, ell: int, lat: LatencyModel | None = None) -> float:
    """Worst-case auction agreement latency in ms: n_agents * ell * per-hop."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    per_hop = (lat or LatencyModel()).per_hop_latency_ms
    return n_agents * ell * per_hop
