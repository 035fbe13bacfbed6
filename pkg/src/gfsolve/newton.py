"""Newton-Raphson baseline solver in nodal squared-pressure variables.

The classical approach: express every lossy-pipe flow as a function of the
endpoint squared pressures, eliminate compressor pressure ratios by chaining
them into per-group scale factors, and iterate damped Newton on the nodal
balance equations. Convergence depends on the starting point; failures are
reported, not repaired.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import FlowState, GasNetwork, NetworkError, require_balanced, require_valid

MAX_ITER = "max_iter"
SINGULAR_JACOBIAN = "singular_jacobian"
DIRECTION_VIOLATED = "direction_violated"
NEGATIVE_PRESSURE = "negative_pressure"


class NrFailure(RuntimeError):
    """Non-convergence of the Newton iteration, with a reason tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class NrOptions:
    max_iter: int = 60
    tol: float = 1e-9            # infinity norm of the nodal balance residual
    max_halvings: int = 30
    delta: float | None = None   # smoothing width; default 1e-6 * psi_ref
    shrink_rounds: int = 3       # smoothing reductions to clear in-band pipes


def flow_from_pressures(a: float, psi_m: float, psi_n: float, delta: float) -> float:
    """Invert the pipe drop law: sign(d) * sqrt(|d|/a) with d = psi_m - psi_n.

    Linearized to d / sqrt(a * delta) for |d| < delta so the derivative stays
    bounded near zero pressure difference.
    """
    if not a > 0:
        raise ValueError("friction coefficient must be positive")
    d = psi_m - psi_n
    if abs(d) < delta:
        return d / math.sqrt(a * delta)
    return math.copysign(math.sqrt(abs(d) / a), d)


def _flow_derivative(a: float, d: float, delta: float) -> float:
    if abs(d) < delta:
        return 1.0 / math.sqrt(a * delta)
    return 0.5 / math.sqrt(a * abs(d))


class NrSystem:
    """Reduced nodal system: residual and analytic Jacobian.

    Unknowns: one squared-pressure scale per compressor-connected node group
    (the group holding the reference node is pinned), then one flow per
    compressor edge. Equations: nodal balance at every node but the
    reference.
    """

    def __init__(self, net: GasNetwork, q: np.ndarray, delta: float):
        self.net = net
        self.q = np.asarray(q, dtype=float)
        self.delta = float(delta)

        N = net.n_nodes
        # Group nodes connected through compressors; gain[n] maps the group
        # scale to the node pressure: psi_n = gain[n] * theta_group.
        self.group = list(range(N))
        self.gain = [1.0] * N
        adj: list[list[tuple[int, int]]] = [[] for _ in range(N)]
        for e in net.compressor_edges:
            edge = net.edges[e]
            adj[edge.tail].append((e, edge.head))
            adj[edge.head].append((e, edge.tail))
        seen = [False] * N
        for start in range(N):
            if seen[start]:
                continue
            seen[start] = True
            stack = [start]
            while stack:
                u = stack.pop()
                for eid, v in adj[u]:
                    edge = net.edges[eid]
                    g = (self.gain[u] * edge.kind.alpha if edge.tail == u
                         else self.gain[u] / edge.kind.alpha)
                    if not seen[v]:
                        seen[v] = True
                        self.group[v] = start
                        self.gain[v] = g
                        stack.append(v)
                    elif self.group[v] == start and abs(g - self.gain[v]) > 1e-12 * abs(g):
                        raise NetworkError(
                            "compressors form a cycle with inconsistent gain")
                    elif self.group[v] != start:
                        raise NetworkError("compressor grouping failed")

        self.pinned = self.group[net.reference]
        self.pinned_theta = net.psi_ref / self.gain[net.reference]
        groups = sorted(set(self.group))
        self.theta_index = {g: i for i, g in enumerate(g for g in groups
                                                       if g != self.pinned)}
        self.n_theta = len(self.theta_index)
        self.comp_index = {e: self.n_theta + i
                           for i, e in enumerate(net.compressor_edges)}
        self.n_unknowns = self.n_theta + len(net.compressor_edges)
        self.rows = [n for n in range(N) if n != net.reference]
        if len(self.rows) != self.n_unknowns:
            raise NetworkError("reduced system is not square")

    def psi_of(self, u: np.ndarray) -> np.ndarray:
        psi = np.empty(self.net.n_nodes)
        for n in range(self.net.n_nodes):
            g = self.group[n]
            theta = self.pinned_theta if g == self.pinned else u[self.theta_index[g]]
            psi[n] = self.gain[n] * theta
        return psi

    def flows_of(self, u: np.ndarray, psi: np.ndarray | None = None) -> np.ndarray:
        if psi is None:
            psi = self.psi_of(u)
        phi = np.empty(self.net.n_edges)
        for e in range(self.net.n_edges):
            edge = self.net.edges[e]
            if edge.is_pipe:
                phi[e] = flow_from_pressures(edge.kind.a, psi[edge.tail],
                                             psi[edge.head], self.delta)
            else:
                phi[e] = u[self.comp_index[e]]
        return phi

    def residual(self, u: np.ndarray) -> np.ndarray:
        psi = self.psi_of(u)
        phi = self.flows_of(u, psi)
        F = np.zeros(len(self.rows))
        for i, n in enumerate(self.rows):
            acc = -self.q[n]
            for eid, _ in self.net.incident[n]:
                sgn = 1.0 if self.net.edges[eid].tail == n else -1.0
                acc += sgn * phi[eid]
            F[i] = acc
        return F

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        psi = self.psi_of(u)
        J = np.zeros((len(self.rows), self.n_unknowns))
        row_of = {n: i for i, n in enumerate(self.rows)}
        for e in range(self.net.n_edges):
            edge = self.net.edges[e]
            m, n = edge.tail, edge.head
            if edge.is_pipe:
                d = psi[m] - psi[n]
                slope = _flow_derivative(edge.kind.a, d, self.delta)
                for node, sgn in ((m, 1.0), (n, -1.0)):
                    g = self.group[node]
                    if g == self.pinned:
                        continue
                    col = self.theta_index[g]
                    dpsi_dtheta = self.gain[node]
                    if m in row_of:
                        J[row_of[m], col] += slope * sgn * dpsi_dtheta
                    if n in row_of:
                        J[row_of[n], col] -= slope * sgn * dpsi_dtheta
            else:
                col = self.comp_index[e]
                if m in row_of:
                    J[row_of[m], col] += 1.0
                if n in row_of:
                    J[row_of[n], col] -= 1.0
        return J

    def initial_guess(self, psi_init: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_unknowns)
        sums: dict[int, list[float]] = {}
        for n in range(self.net.n_nodes):
            g = self.group[n]
            if g != self.pinned:
                sums.setdefault(g, []).append(psi_init[n] / self.gain[n])
        for g, vals in sums.items():
            u[self.theta_index[g]] = float(np.mean(vals))
        return u


def nr_solve(net: GasNetwork, q: np.ndarray, psi_init: np.ndarray | None = None,
             options: NrOptions = NrOptions()) -> FlowState:
    """Damped Newton on the nodal equations; raises NrFailure on failure.

    ``psi_init`` must be entrywise positive; the default is a flat start at
    the reference squared pressure.
    """
    require_valid(net)
    q = np.asarray(q, dtype=float)
    require_balanced(q)
    if psi_init is None:
        psi_init = np.full(net.n_nodes, net.psi_ref)
    psi_init = np.asarray(psi_init, dtype=float)
    if psi_init.shape != (net.n_nodes,):
        raise NetworkError("psi_init length does not match the node count")
    if np.any(psi_init <= 0):
        raise NetworkError("psi_init must be entrywise positive")

    delta = options.delta if options.delta is not None else 1e-6 * net.psi_ref
    system = NrSystem(net, q, delta)
    u = system.initial_guess(psi_init)

    iters_left = options.max_iter
    for _round in range(options.shrink_rounds + 1):
        F = system.residual(u)
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        converged = norm <= options.tol
        while not converged:
            if iters_left <= 0:
                raise NrFailure(MAX_ITER, f"residual {norm:.3g} after iteration cap")
            iters_left -= 1
            J = system.jacobian(u)
            try:
                step = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                raise NrFailure(SINGULAR_JACOBIAN) from None
            if not np.all(np.isfinite(step)):
                raise NrFailure(SINGULAR_JACOBIAN, "non-finite Newton step")
            scale = 1.0
            for _ in range(options.max_halvings):
                trial = u + scale * step
                Ft = system.residual(trial)
                nt = float(np.max(np.abs(Ft)))
                if nt < norm:
                    break
                scale *= 0.5
            else:
                raise NrFailure(MAX_ITER, "line search exhausted")
            u, F, norm = trial, Ft, nt
            converged = norm <= options.tol
        # Pipes inside the smoothing band satisfy the linearized drop law,
        # not the true one; shrink the band and re-converge until clear.
        psi = system.psi_of(u)
        in_band = any(
            abs(psi[net.edges[e].tail] - psi[net.edges[e].head]) < system.delta
            for e in net.lossy_edges)
        if not in_band or system.delta <= 1e-15 * net.psi_ref:
            break
        system.delta *= 1e-3

    psi = system.psi_of(u)
    phi = system.flows_of(u, psi)
    if np.any(psi < 0):
        worst = int(np.argmin(psi))
        raise NrFailure(NEGATIVE_PRESSURE,
                        f"node {net.node_names[worst]!r} at {psi[worst]:.3g}")
    for e in net.compressor_edges:
        if phi[e] < 0:
            raise NrFailure(DIRECTION_VIOLATED,
                            f"compressor {net.edge_names[e]!r} flow {phi[e]:.3g}")
    return FlowState(phi=phi, psi=psi)
