"""Closed-form solver for tree-shaped networks.

On a tree, mass conservation fixes every edge flow (invert by repeatedly
stripping degree-1 nodes), and squared pressures then propagate outward from
the reference node through the pipe drop law and compressor ratios.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from .network import FlowState, GasNetwork, NetworkError, require_balanced


class TreeSolveError(NetworkError):
    """Base for tree-solver failures."""


class NotATreeError(TreeSolveError):
    pass


class InfeasiblePressureError(TreeSolveError):
    """An implied squared pressure would be negative."""


class InfeasibleCompressorDirectionError(TreeSolveError):
    """A compressor would have to carry flow against its direction."""


def pipe_pressure_drop(a: float, phi: float) -> float:
    """Squared-pressure drop across a pipe: a * sign(phi) * phi**2.

    Odd and strictly increasing in phi for a > 0.
    """
    if not a > 0:
        raise ValueError("friction coefficient must be positive")
    return a * math.copysign(phi * phi, phi) if phi else 0.0


def solve_tree(net: GasNetwork, q: np.ndarray) -> FlowState:
    """Solve the network equations on a tree by leaf elimination.

    Raises NotATreeError on meshed input, InfeasiblePressureError if any
    implied squared pressure goes negative, and
    InfeasibleCompressorDirectionError if a compressor flow comes out
    negative.
    """
    q = np.asarray(q, dtype=float)
    if net.n_edges != net.n_nodes - 1:
        raise NotATreeError(
            f"network has {net.n_edges} edges over {net.n_nodes} nodes; not a tree")
    require_balanced(q)

    degree = [len(net.incident[u]) for u in range(net.n_nodes)]
    residual = q.copy()
    used = [False] * net.n_edges
    phi = np.zeros(net.n_edges)
    leaves = deque(u for u in range(net.n_nodes) if degree[u] == 1)
    stripped = 0
    while leaves:
        u = leaves.popleft()
        if degree[u] != 1:
            continue
        eid = next(e for e, _ in net.incident[u] if not used[e])
        edge = net.edges[eid]
        if edge.tail == u:
            phi[eid] = residual[u]
        else:
            phi[eid] = -residual[u]
        other = edge.head if edge.tail == u else edge.tail
        residual[other] += residual[u]
        residual[u] = 0.0
        used[eid] = True
        degree[u] -= 1
        degree[other] -= 1
        stripped += 1
        if degree[other] == 1:
            leaves.append(other)
    if stripped != net.n_edges:
        raise NotATreeError("leaf elimination stalled; graph contains a cycle")

    psi = np.full(net.n_nodes, np.nan)
    psi[net.reference] = net.psi_ref
    queue = deque([net.reference])
    while queue:
        u = queue.popleft()
        for eid, v in net.incident[u]:
            if not math.isnan(psi[v]):
                continue
            edge = net.edges[eid]
            if edge.is_pipe:
                drop = pipe_pressure_drop(edge.kind.a, phi[eid])
                psi[v] = psi[u] - drop if edge.tail == u else psi[u] + drop
            else:
                if phi[eid] < 0:
                    raise InfeasibleCompressorDirectionError(
                        f"compressor {net.edge_names[eid]!r} carries flow {phi[eid]:g}")
                alpha = edge.kind.alpha
                psi[v] = alpha * psi[u] if edge.tail == u else psi[u] / alpha
            if psi[v] < 0:
                raise InfeasiblePressureError(
                    f"implied squared pressure at node {net.node_names[v]!r} "
                    f"is {psi[v]:g}")
            queue.append(v)

    for eid in net.compressor_edges:
        if phi[eid] < 0:
            raise InfeasibleCompressorDirectionError(
                f"compressor {net.edge_names[eid]!r} carries flow {phi[eid]:g}")
    return FlowState(phi=phi, psi=psi)
