"""Spanning trees, fundamental cycles, and cycle-space analysis.

The null space of the transposed incidence matrix is spanned by the signed
indicator vectors of the fundamental cycles of any spanning tree. Two
structural conditions gate the exactness guarantees of the relaxation-based
solver: no compressor may lie on a cycle, and cycles must be pairwise
edge-disjoint (a cactus cycle space). Both are decided here via bridge /
two-edge-connected component decomposition instead of cycle enumeration.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .network import GasNetwork, NetworkError
from .tolerances import EPS_DECOMP


@dataclass(frozen=True)
class SpanningTree:
    tree_edges: tuple[int, ...]
    link_edges: tuple[int, ...]
    parent_node: tuple[int, ...]   # -1 at the root
    parent_edge: tuple[int, ...]   # -1 at the root
    root: int


@dataclass(frozen=True)
class CycleIndicator:
    """Signed {-1, 0, +1} edge vector of one simple cycle."""

    vector: tuple[int, ...]
    edge_ids: tuple[int, ...]      # edges of the cycle in traversal order

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=float)


@dataclass(frozen=True)
class CycleBasis:
    cycles: tuple[CycleIndicator, ...]

    def __len__(self) -> int:
        return len(self.cycles)


@dataclass(frozen=True)
class AssumptionReport:
    a1_holds: bool                      # no compressors on cycles
    a2_holds: bool                      # cycles pairwise edge-disjoint
    compressor_witnesses: tuple[int, ...]
    overlap_witnesses: tuple[int, ...]

    def to_dict(self, net: GasNetwork) -> dict:
        return {
            "no_compressors_in_cycles": self.a1_holds,
            "cycles_edge_disjoint": self.a2_holds,
            "compressors_on_cycles": [net.edge_names[i] for i in self.compressor_witnesses],
            "overlapping_cycle_edges": [net.edge_names[i] for i in self.overlap_witnesses],
        }


@dataclass(frozen=True)
class CycleDecomposition:
    terms: tuple[tuple[float, CycleIndicator], ...]

    def reconstruct(self, n_edges: int) -> np.ndarray:
        out = np.zeros(n_edges)
        for lam, cyc in self.terms:
            out += lam * cyc.as_array()
        return out


def spanning_tree(net: GasNetwork) -> SpanningTree:
    """BFS tree rooted at the reference node; ties broken by edge id."""
    n = net.n_nodes
    parent_node = [-1] * n
    parent_edge = [-1] * n
    seen = [False] * n
    root = net.reference
    seen[root] = True
    tree: list[int] = []
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for eid, v in net.incident[u]:
            if not seen[v]:
                seen[v] = True
                parent_node[v] = u
                parent_edge[v] = eid
                tree.append(eid)
                queue.append(v)
    if not all(seen):
        raise NetworkError("graph is not connected")
    tree_set = set(tree)
    links = tuple(i for i in range(net.n_edges) if i not in tree_set)
    return SpanningTree(tuple(sorted(tree)), links, tuple(parent_node),
                        tuple(parent_edge), root)


def _tree_path(tree: SpanningTree, u: int, v: int) -> list[tuple[int, int, int]]:
    """Edges (edge_id, from, to) along the tree path u -> v."""
    depth = {}

    def depth_of(x):
        if x in depth:
            return depth[x]
        d = 0
        y = x
        while tree.parent_node[y] != -1:
            y = tree.parent_node[y]
            d += 1
        depth[x] = d
        return d

    up_u: list[tuple[int, int, int]] = []
    up_v: list[tuple[int, int, int]] = []
    du, dv = depth_of(u), depth_of(v)
    while du > dv:
        up_u.append((tree.parent_edge[u], u, tree.parent_node[u]))
        u = tree.parent_node[u]
        du -= 1
    while dv > du:
        up_v.append((tree.parent_edge[v], v, tree.parent_node[v]))
        v = tree.parent_node[v]
        dv -= 1
    while u != v:
        up_u.append((tree.parent_edge[u], u, tree.parent_node[u]))
        u = tree.parent_node[u]
        up_v.append((tree.parent_edge[v], v, tree.parent_node[v]))
        v = tree.parent_node[v]
    return up_u + [(eid, b, a) for eid, a, b in reversed(up_v)]


def fundamental_cycles(net: GasNetwork, tree: SpanningTree) -> CycleBasis:
    """One indicator per link edge; normalized so the first nonzero is +1."""
    cycles = []
    for link in tree.link_edges:
        e = net.edges[link]
        vec = [0] * net.n_edges
        vec[link] = 1
        order = [link]
        for eid, frm, _to in _tree_path(tree, e.head, e.tail):
            edge = net.edges[eid]
            vec[eid] = 1 if edge.tail == frm else -1
            order.append(eid)
        first = next(i for i, x in enumerate(vec) if x != 0)
        if vec[first] < 0:
            vec = [-x for x in vec]
        cycles.append(CycleIndicator(tuple(vec), tuple(order)))
    return CycleBasis(tuple(cycles))


def _blocks(net: GasNetwork) -> list[list[int]]:
    """Biconnected components as edge-id lists (iterative Hopcroft-Tarjan).

    Handles parallel edges: only the entry edge id is skipped, so a second
    edge between the same endpoints counts as a cycle-closing back edge.
    """
    n = net.n_nodes
    disc = [-1] * n
    low = [0] * n
    timer = 0
    estack: list[int] = []
    blocks: list[list[int]] = []
    for start in range(n):
        if disc[start] != -1:
            continue
        stack: list[tuple[int, int, int]] = [(start, -1, 0)]  # node, entry edge, idx
        while stack:
            u, entry, idx = stack.pop()
            if idx == 0:
                disc[u] = low[u] = timer
                timer += 1
            incident = net.incident[u]
            advanced = False
            while idx < len(incident):
                eid, v = incident[idx]
                idx += 1
                if eid == entry:
                    continue
                if disc[v] == -1:
                    estack.append(eid)
                    stack.append((u, entry, idx))
                    stack.append((v, eid, 0))
                    advanced = True
                    break
                if disc[v] < disc[u]:     # back edge to an ancestor
                    estack.append(eid)
                    low[u] = min(low[u], disc[v])
            if not advanced and entry != -1:
                parent = net.edges[entry].tail if net.edges[entry].head == u \
                    else net.edges[entry].head
                low[parent] = min(low[parent], low[u])
                if low[u] >= disc[parent]:
                    block = []
                    while True:
                        e = estack.pop()
                        block.append(e)
                        if e == entry:
                            break
                    blocks.append(block)
    return blocks


def bridges(net: GasNetwork) -> tuple[int, ...]:
    """Edges whose removal disconnects the graph (hence not on any cycle)."""
    return tuple(sorted(b[0] for b in _blocks(net) if len(b) == 1))


def bridge_flow(net: GasNetwork, q: np.ndarray, edge_id: int) -> float:
    """Flow forced through a bridge: the net injection behind its tail."""
    edge = net.edges[edge_id]
    seen = [False] * net.n_nodes
    seen[edge.tail] = True
    stack = [edge.tail]
    total = 0.0
    while stack:
        u = stack.pop()
        total += q[u]
        for eid, v in net.incident[u]:
            if eid == edge_id or seen[v]:
                continue
            seen[v] = True
            stack.append(v)
    if seen[edge.head]:
        raise NetworkError(f"edge {net.edge_names[edge_id]!r} is not a bridge")
    return total


def check_assumptions(net: GasNetwork) -> AssumptionReport:
    """Structural gate for exactness of the direction-relaxed solver.

    An edge lies on a cycle iff its biconnected block has more than one
    edge. Cycles are pairwise edge-disjoint iff every block carries at most
    one independent cycle, i.e. its cyclomatic number is at most one.
    """
    comp_on_cycle: list[int] = []
    overlap: list[int] = []
    for block in _blocks(net):
        if len(block) == 1:
            continue
        comp_on_cycle.extend(e for e in block if net.edges[e].is_compressor)
        nodes = set()
        for e in block:
            nodes.add(net.edges[e].tail)
            nodes.add(net.edges[e].head)
        if len(block) - len(nodes) + 1 > 1:
            overlap.extend(block)
    return AssumptionReport(
        a1_holds=not comp_on_cycle,
        a2_holds=not overlap,
        compressor_witnesses=tuple(sorted(comp_on_cycle)),
        overlap_witnesses=tuple(sorted(overlap)),
    )


def cycle_decompose(net: GasNetwork, v: np.ndarray,
                    eps: float = EPS_DECOMP) -> CycleDecomposition:
    """Write a circulation as a conic combination of cycle indicators.

    Peels cycles off the subgraph of nonzero entries, always traversing each
    edge in the direction of its residual flow, so every extracted indicator
    agrees in sign with the input on its support and any two extracted
    indicators are sign-compatible entrywise.
    """
    v = np.asarray(v, dtype=float).copy()
    if v.shape != (net.n_edges,):
        raise NetworkError("vector length does not match edge count")

    # Membership check: A^T v = 0.
    balance = np.zeros(net.n_nodes)
    for i, e in enumerate(net.edges):
        balance[e.tail] += v[i]
        balance[e.head] -= v[i]
    if balance.size and np.max(np.abs(balance)) > eps:
        raise NetworkError("vector is not in the null space of the incidence transpose")

    terms: list[tuple[float, CycleIndicator]] = []
    sign0 = np.sign(v) * (np.abs(v) > eps)
    while True:
        active = np.nonzero(np.abs(v) > eps)[0]
        if active.size == 0:
            break
        # Outgoing (in flow direction) active edges per node.
        out: dict[int, list[tuple[int, int]]] = {}
        for i in active:
            e = net.edges[i]
            src, dst = (e.tail, e.head) if v[i] > 0 else (e.head, e.tail)
            out.setdefault(src, []).append((i, dst))
        start = net.edges[active[0]].tail if v[active[0]] > 0 else net.edges[active[0]].head
        visited_at: dict[int, int] = {}
        walk: list[tuple[int, int]] = []     # (edge, next node)
        node = start
        while node not in visited_at:
            visited_at[node] = len(walk)
            choices = out.get(node)
            if not choices:
                raise NetworkError("vector is not a circulation; peeling is stuck")
            eid, nxt = min(choices)
            walk.append((eid, nxt))
            node = nxt
        cycle = walk[visited_at[node]:]
        lam = min(abs(v[eid]) for eid, _ in cycle)
        vec = [0] * net.n_edges
        for eid, _ in cycle:
            vec[eid] = 1 if v[eid] > 0 else -1
            v[eid] -= lam * vec[eid]
        terms.append((lam, CycleIndicator(tuple(vec), tuple(e for e, _ in cycle))))

    # Contract guards: nonnegative weights, sign compatibility with input.
    for lam, cyc in terms:
        assert lam >= 0
        arr = np.asarray(cyc.vector)
        assert np.all(arr * sign0 >= 0)
    return CycleDecomposition(tuple(terms))
