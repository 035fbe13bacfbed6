"""Independent brute-force oracles for pinning expected values.

These deliberately share no propagation code with the solvers: flows on
tree parts come from a separate leaf-stripping pass, the single free loop
flow is found by bisection of the loop closure residual, and pressures are
re-propagated from scratch. Oracle output is only accepted when its own
residuals are below EPS_ORACLE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .misocp import solve_gf
from .network import (FlowState, GasNetwork, NetworkError, ResidualReport,
                      require_balanced, residuals)
from .newton import NrFailure, NrOptions, nr_solve
from .tolerances import EPS_ORACLE


class OracleError(NetworkError):
    pass


class NoCycleError(OracleError):
    pass


class MultiCycleError(OracleError):
    pass


class PreconditionError(ValueError):
    """A scenario check was fed states that do not qualify."""


@dataclass(frozen=True)
class OracleSolution:
    state: FlowState
    method: str
    residual_report: ResidualReport

    def to_dict(self, net: GasNetwork) -> dict:
        return {
            "method": self.method,
            "phi": {net.edge_names[i]: float(v)
                    for i, v in enumerate(self.state.phi)},
            "psi": {net.node_names[i]: float(v)
                    for i, v in enumerate(self.state.psi)},
            "max_residual": self.residual_report.max_violation,
        }


def _strip_leaves(net: GasNetwork, q: np.ndarray):
    """Peel degree-1 nodes, fixing their edge flows from local balance.

    Returns (flows dict, residual injections aggregated onto what remains,
    set of remaining edge ids).
    """
    degree = [len(net.incident[u]) for u in range(net.n_nodes)]
    alive = [True] * net.n_edges
    resid = np.asarray(q, dtype=float).copy()
    flows: dict[int, float] = {}
    stack = [u for u in range(net.n_nodes) if degree[u] == 1]
    while stack:
        u = stack.pop()
        if degree[u] != 1:
            continue
        eid = next(e for e, _ in net.incident[u] if alive[e])
        edge = net.edges[eid]
        flows[eid] = resid[u] if edge.tail == u else -resid[u]
        other = edge.head if edge.tail == u else edge.tail
        resid[other] += resid[u]
        resid[u] = 0.0
        alive[eid] = False
        degree[u] -= 1
        degree[other] -= 1
        if degree[other] == 1:
            stack.append(other)
    remaining = {e for e in range(net.n_edges) if alive[e]}
    return flows, resid, remaining


def _cycle_order(net: GasNetwork, remaining: set[int]):
    """Order the remaining edges into one simple cycle.

    Returns [(edge_id, direction)] where direction is +1 when the traversal
    runs tail -> head. Raises if the remainder is not a single cycle.
    """
    if not remaining:
        raise NoCycleError("network is a tree; no loop to bisect")
    touched: dict[int, list[int]] = {}
    for e in remaining:
        touched.setdefault(net.edges[e].tail, []).append(e)
        touched.setdefault(net.edges[e].head, []).append(e)
    if any(len(es) != 2 for es in touched.values()):
        raise MultiCycleError("remaining subgraph is not a single simple cycle")
    start = min(touched)
    order: list[tuple[int, int]] = []
    node, prev_edge = start, -1
    while True:
        eid = next(e for e in touched[node] if e != prev_edge)
        edge = net.edges[eid]
        direction = 1 if edge.tail == node else -1
        order.append((eid, direction))
        node = edge.head if direction == 1 else edge.tail
        prev_edge = eid
        if node == start:
            break
    if len(order) != len(remaining):
        raise MultiCycleError("remaining subgraph contains several cycles")
    return order


def _propagate_pressures(net: GasNetwork, phi: np.ndarray) -> np.ndarray:
    psi = np.full(net.n_nodes, np.nan)
    psi[net.reference] = net.psi_ref
    stack = [net.reference]
    while stack:
        u = stack.pop()
        for eid, v in net.incident[u]:
            if not math.isnan(psi[v]):
                continue
            edge = net.edges[eid]
            if edge.is_pipe:
                drop = edge.kind.a * math.copysign(phi[eid] ** 2, phi[eid]) \
                    if phi[eid] else 0.0
                psi[v] = psi[u] - drop if edge.tail == u else psi[u] + drop
            else:
                psi[v] = edge.kind.alpha * psi[u] if edge.tail == u \
                    else psi[u] / edge.kind.alpha
            stack.append(v)
    return psi


def brute_force_single_cycle(net: GasNetwork, q: np.ndarray, *,
                             tol: float = 1e-12) -> OracleSolution:
    """Exact reference solution for a network with exactly one cycle.

    All flows are written as a particular solution plus one loop flow; the
    loop closure residual is strictly increasing in the loop flow (sum of
    increasing drop laws), so bisection pins it. Compressors must sit on
    tree branches, off the cycle.
    """
    q = np.asarray(q, dtype=float)
    require_balanced(q)
    flows, resid, remaining = _strip_leaves(net, q)
    order = _cycle_order(net, remaining)
    if any(net.edges[e].is_compressor for e, _ in order):
        raise OracleError("cycle contains a compressor; oracle does not apply")

    # Flow along the traversal on leg i is lam + offset[i].
    offsets = [0.0]
    for eid, direction in order[:-1]:
        edge = net.edges[eid]
        nxt = edge.head if direction == 1 else edge.tail
        offsets.append(offsets[-1] + resid[nxt])
    coeffs = [net.edges[e].kind.a for e, _ in order]

    def closure(lam: float) -> float:
        total = 0.0
        for a, off in zip(coeffs, offsets):
            t = lam + off
            total += a * math.copysign(t * t, t)
        return total

    lam_max = float(np.sum(np.abs(q))) + 1.0
    grid = np.linspace(-lam_max, lam_max, 9)
    values = [closure(g) for g in grid]
    if any(b < a for a, b in zip(values, values[1:])):
        raise OracleError("loop closure residual is not monotone; aborting")
    lo, hi = -lam_max, lam_max
    if not (closure(lo) <= 0.0 <= closure(hi)):
        raise OracleError("loop flow bracket does not straddle the root")
    lam = 0.0
    for _ in range(300):
        lam = 0.5 * (lo + hi)
        val = closure(lam)
        if abs(val) <= tol:
            break
        if val > 0:
            hi = lam
        else:
            lo = lam
    else:
        if abs(closure(lam)) > 1e2 * tol:
            raise OracleError("loop bisection failed to reach tolerance")

    phi = np.zeros(net.n_edges)
    for eid, value in flows.items():
        phi[eid] = value
    for (eid, direction), off in zip(order, offsets):
        phi[eid] = direction * (lam + off)

    psi = _propagate_pressures(net, phi)
    if np.any(psi < 0):
        worst = int(np.argmin(psi))
        raise OracleError(
            f"implied squared pressure at node {net.node_names[worst]!r} "
            f"is {psi[worst]:g}; instance infeasible")
    for e in net.compressor_edges:
        if phi[e] < 0:
            raise OracleError(
                f"compressor {net.edge_names[e]!r} flow {phi[e]:g} is negative; "
                "instance infeasible")
    state = FlowState(phi=phi, psi=psi)
    report = residuals(net, q, state)
    if report.max_violation > EPS_ORACLE:
        raise OracleError(
            f"oracle residual {report.max_violation:g} exceeds {EPS_ORACLE:g}")
    return OracleSolution(state=state, method="single-cycle-bisection",
                          residual_report=report)


@dataclass(frozen=True)
class UniquenessReport:
    n_starts: int
    n_converged: int
    spread: float              # max pairwise inf-norm distance between psi vectors
    misocp_status: str
    failure_reasons: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "n_converged": self.n_converged,
            "spread": self.spread,
            "misocp_status": self.misocp_status,
            "failure_reasons": list(self.failure_reasons),
        }


def multistart_uniqueness(net: GasNetwork, q: np.ndarray, n_starts: int = 20,
                          seed: int = 0,
                          nr_options: NrOptions = NrOptions()) -> UniquenessReport:
    """Probe solution uniqueness with many Newton starts plus the global solver.

    Reports the largest pairwise pressure disagreement over everything that
    converged; a unique solution means the spread stays at rounding level.
    """
    rng = np.random.default_rng(seed)
    solutions: list[np.ndarray] = []
    failures: list[str] = []
    for _ in range(n_starts):
        psi0 = net.psi_ref * np.exp(rng.normal(0.0, 0.5, net.n_nodes))
        try:
            state = nr_solve(net, q, psi0, nr_options)
            solutions.append(state.psi)
        except NrFailure as exc:
            failures.append(exc.reason)
    result = solve_gf(net, q)
    if result.status == "solved":
        solutions.append(result.state.psi)
    spread = 0.0
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            spread = max(spread, float(np.max(np.abs(solutions[i] - solutions[j]))))
    return UniquenessReport(
        n_starts=n_starts, n_converged=len(solutions),
        spread=spread, misocp_status=result.status,
        failure_reasons=tuple(failures))


def lemma2_scenario_check(net: GasNetwork, state_a: FlowState,
                          state_b: FlowState, eps: float = EPS_ORACLE) -> bool:
    """Check the forbidden sign patterns of two single-cycle flow states.

    Both states must satisfy the pipe and compressor laws to ``eps`` and
    share the squared pressure at the reference node. Returns True iff the
    flow difference is NOT strictly aligned (nor strictly anti-aligned)
    with the cycle orientation on every cycle edge.
    """
    for state in (state_a, state_b):
        rep = residuals(net, np.zeros(net.n_nodes), state)
        law_residual = max(
            float(np.max(rep.weymouth_by_edge, initial=0.0)),
            float(np.max(rep.ratio_by_edge, initial=0.0)),
            float(np.max(rep.direction_by_edge, initial=0.0)))
        if law_residual > eps:
            raise PreconditionError(
                f"state violates the edge laws by {law_residual:g}")
    if abs(state_a.psi[net.reference] - state_b.psi[net.reference]) > eps:
        raise PreconditionError("states do not share the anchor pressure")

    _, _, remaining = _strip_leaves(net, np.zeros(net.n_nodes))
    order = _cycle_order(net, remaining)
    products = []
    for eid, direction in order:
        diff = state_b.phi[eid] - state_a.phi[eid]
        products.append(direction * float(np.sign(diff)))
    all_pos = all(pv > 0 for pv in products)
    all_neg = all(pv < 0 for pv in products)
    return not (all_pos or all_neg)
