"""Exact integral minimum-cost flow.

Successive shortest augmenting paths with node potentials. Reduced costs stay
nonnegative, so each augmenting path is found with Dijkstra on an indexed
binary heap. The inner loops are compiled with numba; everything else is
plain numpy.

Networks are given as parallel edge arrays plus a per-node supply vector
(positive = source, negative = demand). Costs and capacities are nonnegative
integers; there is no "infinite" cost, forbidden arcs are simply left out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numba
import numpy as np

__all__ = [
    "FlowNetwork",
    "FlowAssignment",
    "InfeasibleFlow",
    "solve",
    "verify_flow",
    "residual_has_negative_cycle",
    "write_dimacs",
    "read_dimacs",
]


class InfeasibleFlow(Exception):
    """No flow satisfies every supply and demand within the capacities."""

    def __init__(self, message: str, shipped: int = 0, required: int = 0):
        super().__init__(message)
        self.shipped = shipped
        self.required = required


@dataclass(frozen=True)
class FlowNetwork:
    node_count: int
    tail: np.ndarray
    head: np.ndarray
    capacity: np.ndarray
    cost: np.ndarray
    supply: np.ndarray

    def __post_init__(self) -> None:
        for name in ("tail", "head", "capacity", "cost", "supply"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.int64))
        m = len(self.tail)
        if not (len(self.head) == len(self.capacity) == len(self.cost) == m):
            raise ValueError("edge arrays must have equal length")
        if len(self.supply) != self.node_count:
            raise ValueError("supply vector length must equal node_count")
        if m and (self.tail.min() < 0 or self.head.min() < 0
                  or self.tail.max() >= self.node_count or self.head.max() >= self.node_count):
            raise ValueError("edge endpoint out of range")
        if m and (self.capacity.min() < 0 or self.cost.min() < 0):
            raise ValueError("capacities and costs must be nonnegative")
        if int(self.supply.sum()) != 0:
            raise ValueError(f"supplies must sum to zero, got {int(self.supply.sum())}")

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[tuple[int, int, int, int]],
        supply: Iterable[int],
    ) -> FlowNetwork:
        """Build from ``(tail, head, capacity, cost)`` tuples."""
        arr = np.array(list(edges), dtype=np.int64).reshape(-1, 4)
        return cls(node_count, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                   np.array(list(supply), dtype=np.int64))

    @property
    def edge_count(self) -> int:
        return len(self.tail)


@dataclass(frozen=True)
class FlowAssignment:
    flow: np.ndarray
    total_cost: int
    potential: np.ndarray = field(repr=False, default=None)
    augmentations: int = 0


@numba.njit(cache=True)
def _heap_push_or_decrease(heap, pos, key, size, v, k):
    # indexed binary min-heap keyed by key[], ties broken by node index
    if pos[v] < 0:
        heap[size] = v
        pos[v] = size
        i = size
        size += 1
    else:
        i = pos[v]
    key[v] = k
    while i > 0:
        parent = (i - 1) >> 1
        pv = heap[parent]
        if key[pv] < k or (key[pv] == k and pv < v):
            break
        heap[i] = pv
        pos[pv] = i
        i = parent
    heap[i] = v
    pos[v] = i
    return size


@numba.njit(cache=True)
def _heap_pop(heap, pos, key, size):
    top = heap[0]
    pos[top] = -2
    size -= 1
    if size == 0:
        return top, size
    v = heap[size]
    k = key[v]
    i = 0
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        cv = heap[child]
        if child + 1 < size:
            rv = heap[child + 1]
            if key[rv] < key[cv] or (key[rv] == key[cv] and rv < cv):
                child += 1
                cv = rv
        if k < key[cv] or (k == key[cv] and v < cv):
            break
        heap[i] = cv
        pos[cv] = i
        i = child
    heap[i] = v
    pos[v] = i
    return top, size


@numba.njit(cache=True)
def _zero_cost_maxflow(n, start, head, cost, resid, mate, source, sink, limit):
    """Dinic blocking flows restricted to zero-cost arcs, up to ``limit`` units.

    With nonnegative costs any zero-cost flow is optimal for its value, so
    this is a valid warm start for the shortest-path phase.
    """
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    ptr = np.empty(n, np.int64)
    stack = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    shipped = 0
    while shipped < limit:
        for v in range(n):
            level[v] = -1
        level[source] = 0
        queue[0] = source
        qh, qt = 0, 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for a in range(start[u], start[u + 1]):
                w = head[a]
                if resid[a] > 0 and cost[a] == 0 and level[w] < 0:
                    level[w] = level[u] + 1
                    queue[qt] = w
                    qt += 1
        if level[sink] < 0:
            break
        for v in range(n):
            ptr[v] = start[v]
        depth = 0
        stack[0] = source
        while shipped < limit:
            u = stack[depth]
            if u == sink:
                push = limit - shipped
                for d in range(depth):
                    if resid[path[d]] < push:
                        push = resid[path[d]]
                cut = depth
                for d in range(depth):
                    a = path[d]
                    resid[a] -= push
                    resid[mate[a]] += push
                    if resid[a] == 0 and d < cut:
                        cut = d
                shipped += push
                depth = cut
                continue
            advanced = False
            while ptr[u] < start[u + 1]:
                a = ptr[u]
                w = head[a]
                if resid[a] > 0 and cost[a] == 0 and level[w] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    stack[depth] = w
                    advanced = True
                    break
                ptr[u] += 1
            if not advanced:
                if depth == 0:
                    break
                level[u] = -1
                depth -= 1
                ptr[stack[depth]] += 1
    return shipped


@numba.njit(cache=True)
def _ssp(n, start, head, cost, resid, mate, source, sink, demand):
    """Ship ``demand`` units from source to sink over a CSR residual graph.

    Arc ``a`` runs from its CSR row to ``head[a]``; ``mate[a]`` is its reverse.
    Returns units shipped, node potentials and the number of Dijkstra rounds.
    """
    big = np.int64(1) << np.int64(62)
    pi = np.zeros(n, np.int64)
    dist = np.empty(n, np.int64)
    pred = np.empty(n, np.int64)
    heap = np.empty(n, np.int64)
    pos = np.empty(n, np.int64)
    shipped = _zero_cost_maxflow(n, start, head, cost, resid, mate, source, sink, demand)
    rounds = 0
    while shipped < demand:
        for v in range(n):
            dist[v] = big
            pred[v] = -1
            pos[v] = -1
        size = _heap_push_or_decrease(heap, pos, dist, 0, source, 0)
        reached = False
        while size > 0:
            u, size = _heap_pop(heap, pos, dist, size)
            if u == sink:
                reached = True
                break
            du = dist[u] + pi[u]
            for a in range(start[u], start[u + 1]):
                if resid[a] <= 0:
                    continue
                w = head[a]
                if pos[w] == -2:
                    continue
                nd = du + cost[a] - pi[w]
                if nd < dist[w]:
                    pred[w] = a
                    size = _heap_push_or_decrease(heap, pos, dist, size, w, nd)
        if not reached:
            break
        dt = dist[sink]
        for v in range(n):
            if pos[v] == -2:
                pi[v] += dist[v]
            else:
                pi[v] += dt
        push = demand - shipped
        v = sink
        while v != source:
            a = pred[v]
            if resid[a] < push:
                push = resid[a]
            v = head[mate[a]]
        v = sink
        while v != source:
            a = pred[v]
            resid[a] -= push
            resid[mate[a]] += push
            v = head[mate[a]]
        shipped += push
        rounds += 1
    return shipped, pi, rounds


def solve(network: FlowNetwork, warm_start: tuple[np.ndarray, np.ndarray] | None = None
          ) -> FlowAssignment:
    """Minimum-cost feasible integral flow.

    Raises InfeasibleFlow when the supplies cannot all be routed. The result is
    a deterministic function of the edge order (and of the warm start).

    ``warm_start`` is a ``(flow, potential)`` pair, typically an optimum for a
    network that has since gained arcs. Arcs whose reduced cost disagrees with
    their flow are reset to the bound the potentials call for, and only the
    resulting imbalance is re-routed.
    """
    if warm_start is not None:
        return _resolve(network, *warm_start)
    n = network.node_count
    supply = network.supply
    pos_nodes = np.flatnonzero(supply > 0)
    neg_nodes = np.flatnonzero(supply < 0)
    demand = int(supply[pos_nodes].sum())
    m = network.edge_count
    if demand == 0:
        return FlowAssignment(np.zeros(m, np.int64), 0, np.zeros(n, np.int64), 0)

    # super source n, super sink n + 1
    s, t = n, n + 1
    tail = np.concatenate([network.tail, np.full(len(pos_nodes), s), neg_nodes])
    head = np.concatenate([network.head, pos_nodes, np.full(len(neg_nodes), t)])
    cap = np.concatenate([network.capacity, supply[pos_nodes], -supply[neg_nodes]])
    cost = np.concatenate([network.cost, np.zeros(len(pos_nodes) + len(neg_nodes), np.int64)])
    n2 = n + 2
    m2 = len(tail)

    # arc 2i is edge i, arc 2i+1 its reverse; lay them out in CSR order
    arc_tail = np.empty(2 * m2, np.int64)
    arc_tail[0::2] = tail
    arc_tail[1::2] = head
    order = np.argsort(arc_tail, kind="stable")
    where = np.empty(2 * m2, np.int64)
    where[order] = np.arange(2 * m2)
    arc_head = np.empty(2 * m2, np.int64)
    arc_head[0::2] = head
    arc_head[1::2] = tail
    arc_cost = np.empty(2 * m2, np.int64)
    arc_cost[0::2] = cost
    arc_cost[1::2] = -cost
    resid = np.zeros(2 * m2, np.int64)
    resid[0::2] = cap
    csr_head = arc_head[order]
    csr_cost = arc_cost[order]
    csr_resid = resid[order]
    mate = where[order ^ 1]
    start = np.zeros(n2 + 1, np.int64)
    np.cumsum(np.bincount(arc_tail, minlength=n2), out=start[1:])

    shipped, pi, rounds = _ssp(n2, start, csr_head, csr_cost, csr_resid, mate, s, t, demand)
    resid = csr_resid[where]
    if shipped < demand:
        raise InfeasibleFlow(
            f"only {shipped} of {demand} supply units can be routed", int(shipped), demand)
    flow = cap[:m] - resid[0:2 * m:2]
    total = int(np.dot(flow, network.cost))
    return FlowAssignment(flow, total, pi[:n].copy(), int(rounds))


def _resolve(network: FlowNetwork, flow, potential) -> FlowAssignment:
    flow = np.array(flow, dtype=np.int64)
    pi = np.asarray(potential, dtype=np.int64)
    cap, cost = network.capacity, network.cost
    rc = cost + pi[network.tail] - pi[network.head]
    flow = np.clip(flow, 0, cap)
    flow[rc < 0] = cap[rc < 0]
    flow[rc > 0] = 0
    n = network.node_count
    net_out = (np.bincount(network.tail, weights=flow, minlength=n)
               - np.bincount(network.head, weights=flow, minlength=n)).astype(np.int64)
    excess = network.supply - net_out
    fwd = np.flatnonzero(flow < cap)
    bwd = np.flatnonzero(flow > 0)
    residual = FlowNetwork(
        n,
        np.concatenate([network.tail[fwd], network.head[bwd]]),
        np.concatenate([network.head[fwd], network.tail[bwd]]),
        np.concatenate([cap[fwd] - flow[fwd], flow[bwd]]),
        np.concatenate([rc[fwd], -rc[bwd]]),
        excess,
    )
    delta = solve(residual)
    flow[fwd] += delta.flow[:len(fwd)]
    flow[bwd] -= delta.flow[len(fwd):]
    return FlowAssignment(flow, int(np.dot(flow, cost)), pi + delta.potential,
                          delta.augmentations)


def verify_flow(network: FlowNetwork, assignment: FlowAssignment) -> bool:
    """True iff the flow respects capacities, conservation and supplies exactly."""
    flow = np.asarray(assignment.flow)
    if flow.shape != (network.edge_count,):
        return False
    if not np.issubdtype(flow.dtype, np.integer):
        if not np.all(flow == np.round(flow)):
            return False
        flow = flow.astype(np.int64)
    if np.any(flow < 0) or np.any(flow > network.capacity):
        return False
    n = network.node_count
    out = np.bincount(network.tail, weights=flow, minlength=n)
    inn = np.bincount(network.head, weights=flow, minlength=n)
    if not np.array_equal(out - inn, network.supply.astype(float)):
        return False
    return int(np.dot(flow, network.cost)) == int(assignment.total_cost)


def residual_has_negative_cycle(network: FlowNetwork, flow: np.ndarray) -> bool:
    """Label-correcting (Bellman-Ford) pass over the residual graph.

    Every node starts at distance 0, as if joined to a virtual root. A
    negative cycle exists iff labels still change after ``node_count`` passes.
    Independent of any potentials the solver may report.
    """
    flow = np.asarray(flow, dtype=np.int64)
    fwd = flow < network.capacity
    bwd = flow > 0
    u = np.concatenate([network.tail[fwd], network.head[bwd]])
    v = np.concatenate([network.head[fwd], network.tail[bwd]])
    w = np.concatenate([network.cost[fwd], -network.cost[bwd]])
    dist = np.zeros(network.node_count, np.int64)
    for _ in range(network.node_count + 1):
        cand = dist[u] + w
        new = dist.copy()
        np.minimum.at(new, v, cand)
        if np.array_equal(new, dist):
            return False
        dist = new
    return True


def write_dimacs(network: FlowNetwork, fh: TextIO, comment: str | None = None) -> None:
    """DIMACS min-cost-flow text (1-based nodes, zero lower bounds)."""
    if comment:
        for line in comment.splitlines():
            fh.write(f"c {line}\n")
    fh.write(f"p min {network.node_count} {network.edge_count}\n")
    for i, b in enumerate(network.supply):
        if b:
            fh.write(f"n {i + 1} {int(b)}\n")
    for u, v, c, w in zip(network.tail, network.head, network.capacity, network.cost):
        fh.write(f"a {u + 1} {v + 1} 0 {c} {w}\n")


def read_dimacs(fh: TextIO) -> FlowNetwork:
    node_count = None
    supply: dict[int, int] = {}
    edges = []
    for lineno, line in enumerate(fh, 1):
        parts = line.split()
        if not parts or parts[0] == "c":
            continue
        tag = parts[0]
        if tag == "p":
            if len(parts) != 4 or parts[1] != "min":
                raise ValueError(f"line {lineno}: expected 'p min <nodes> <arcs>'")
            node_count = int(parts[2])
        elif tag == "n":
            supply[int(parts[1]) - 1] = int(parts[2])
        elif tag == "a":
            u, v, low, cap, cost = (int(x) for x in parts[1:6])
            if low != 0:
                raise ValueError(f"line {lineno}: nonzero lower bounds are not supported")
            edges.append((u - 1, v - 1, cap, cost))
        else:
            raise ValueError(f"line {lineno}: unknown record {tag!r}")
    if node_count is None:
        raise ValueError("missing problem line")
    sup = np.zeros(node_count, np.int64)
    for i, b in supply.items():
        sup[i] = b
    return FlowNetwork.from_edges(node_count, edges, sup)
