"""Static system model: processes, directed channels, failure patterns and
the residual-graph computations everything else builds on.

Processes are numbered 1..n. A channel is an ordered pair of distinct
process ids; the base network is the complete directed graph on all
processes. A failure pattern names the processes that MAY crash and the
channels that MAY disconnect in one execution; a channel in the drop set
must connect two processes outside the crash set (channels touching a
crashed process are implicitly dead). No (p, p) channel exists: a process
delivers to itself locally and reliably.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

Channel = Tuple[int, int]


class ModelError(ValueError):
    """Raised when a system description is internally inconsistent or
    references unknown processes/channels."""


def _channel(raw) -> Channel:
    u, v = raw
    u, v = int(u), int(v)
    if u == v:
        raise ModelError(f"self channel ({u},{v}) is not modeled")
    return (u, v)


@dataclass(frozen=True)
class FailurePattern:
    """One allowed failure scenario: crash-able processes plus
    disconnect-able channels between the remaining correct processes."""

    crash_set: frozenset
    drop_set: frozenset

    @staticmethod
    def make(crashes: Iterable[int] = (), drops: Iterable = ()) -> "FailurePattern":
        crash_set = frozenset(int(p) for p in crashes)
        drop_set = frozenset(_channel(c) for c in drops)
        for (u, v) in drop_set:
            if u in crash_set or v in crash_set:
                raise ModelError(
                    f"dropped channel ({u},{v}) touches crashed process; "
                    "channels incident to crashed processes are faulty by default"
                )
        return FailurePattern(crash_set, drop_set)

    def sort_key(self):
        return (tuple(sorted(self.crash_set)), tuple(sorted(self.drop_set)))


@dataclass(frozen=True)
class FailProneSystem:
    """A non-empty, duplicate-free collection of failure patterns."""

    patterns: tuple

    @staticmethod
    def make(patterns: Iterable[FailurePattern]) -> "FailProneSystem":
        pats = tuple(patterns)
        if not pats:
            raise ModelError("fail-prone system needs at least one pattern")
        if len(set(pats)) != len(pats):
            raise ModelError("duplicate failure patterns")
        return FailProneSystem(pats)


@dataclass(frozen=True)
class NetworkGraph:
    vertices: frozenset
    edges: frozenset

    @staticmethod
    def complete(n: int) -> "NetworkGraph":
        if n < 1:
            raise ModelError("need at least one process")
        vs = frozenset(range(1, n + 1))
        es = frozenset((u, v) for u in vs for v in vs if u != v)
        return NetworkGraph(vs, es)

    @staticmethod
    def make(vertices: Iterable[int], edges: Iterable) -> "NetworkGraph":
        vs = frozenset(int(v) for v in vertices)
        es = frozenset(_channel(e) for e in edges)
        for (u, v) in es:
            if u not in vs or v not in vs:
                raise ModelError(f"edge ({u},{v}) references unknown process")
        return NetworkGraph(vs, es)

    def out_neighbors(self, u: int) -> list:
        return sorted(v for (x, v) in self.edges if x == u)


def residual_graph(g: NetworkGraph, f: FailurePattern) -> NetworkGraph:
    """Remove f's crashed processes (with their incident channels) and f's
    dropped channels from g."""
    unknown = f.crash_set - g.vertices
    if unknown:
        raise ModelError(f"pattern crashes unknown processes {sorted(unknown)}")
    bad = f.drop_set - g.edges
    if bad:
        raise ModelError(f"pattern drops unknown channels {sorted(bad)}")
    vs = g.vertices - f.crash_set
    es = frozenset(
        (u, v) for (u, v) in g.edges
        if u in vs and v in vs and (u, v) not in f.drop_set
    )
    return NetworkGraph(vs, es)


def _adjacency(g: NetworkGraph) -> dict:
    adj = {v: [] for v in sorted(g.vertices)}
    for (u, v) in sorted(g.edges):
        adj[u].append(v)
    return adj


def strongly_connected_components(g: NetworkGraph) -> list:
    """SCC partition of g as frozensets, sorted by smallest member.

    Iterative Kosaraju; deterministic because vertices and adjacency lists
    are visited in sorted order.
    """
    adj = _adjacency(g)
    radj = {v: [] for v in sorted(g.vertices)}
    for (u, v) in sorted(g.edges):
        radj[v].append(u)

    order = []
    seen = set()
    for root in sorted(g.vertices):
        if root in seen:
            continue
        stack = [(root, iter(adj[root]))]
        seen.add(root)
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()

    comps = []
    assigned = set()
    for root in reversed(order):
        if root in assigned:
            continue
        comp = {root}
        assigned.add(root)
        stack = [root]
        while stack:
            node = stack.pop()
            for nxt in radj[node]:
                if nxt not in assigned:
                    assigned.add(nxt)
                    comp.add(nxt)
                    stack.append(nxt)
        comps.append(frozenset(comp))
    return sorted(comps, key=min)


def reachable_set(g: NetworkGraph, src: int) -> frozenset:
    """Vertices reachable from src via directed paths, src included."""
    if src not in g.vertices:
        raise ModelError(f"unknown process {src}")
    adj = _adjacency(g)
    seen = {src}
    stack = [src]
    while stack:
        node = stack.pop()
        for nxt in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return frozenset(seen)


def is_f_available(q, f: FailurePattern, g: NetworkGraph) -> bool:
    """True iff the set q is correct under f and lies inside a single
    strongly connected component of the residual graph. A singleton of one
    correct process is available."""
    q = frozenset(q)
    if not q:
        raise ModelError("empty quorum")
    if q & f.crash_set:
        return False
    rg = residual_graph(g, f)
    if not q <= rg.vertices:
        return False
    for comp in strongly_connected_components(rg):
        if q <= comp:
            return True
    return False


def is_f_reachable(w, r, f: FailurePattern, g: NetworkGraph) -> bool:
    """True iff every member of w can be reached from every member of r via
    directed paths in the residual graph, all members being correct under f.
    A process reaches itself trivially."""
    w, r = frozenset(w), frozenset(r)
    if not w or not r:
        raise ModelError("empty quorum")
    if (w | r) & f.crash_set:
        return False
    rg = residual_graph(g, f)
    if not (w | r) <= rg.vertices:
        return False
    for src in sorted(r):
        if not w <= reachable_set(rg, src):
            return False
    return True
