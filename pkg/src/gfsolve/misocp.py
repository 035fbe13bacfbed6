"""Global flow solver: branch-and-bound over flow-direction variables.

Minimizes the sum of absolute squared-pressure differences over the big-M
relaxation, branching on fractional direction variables with the continuous
conic relaxation as lower bound. A solution with small relaxation gap solves
the original nonlinear flow problem; the gap is surfaced, never repaired
heuristically. An active-set Newton polish removes interior-point
complementarity noise from exact solutions so the reported gap reflects the
relaxation, not solver tolerance.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graphs import bridge_flow, bridges, check_assumptions
from .network import (FlowState, GasNetwork, require_balanced, require_valid,
                      residuals)
from .relaxation import (FREE, ConicOptions, ConicProgram, PrimalSolution,
                         build_relaxation, solve_conic)
from .tolerances import DEFAULT_BIG_M, EPS_DIV, EPS_EXACT, EPS_FEAS

log = logging.getLogger("gfsolve.misocp")

SOLVED = "solved"
INFEASIBLE = "infeasible"
INEXACT = "inexact"
TIMEOUT = "timeout"

_EPS_INT = 1e-6
_EPS_PRUNE = 1e-8


@dataclass
class BnbStats:
    nodes: int = 0            # branch-and-bound nodes whose relaxation was solved
    relaxations: int = 0      # total conic solves, heuristic re-solves included
    wall_ms: float = 0.0
    max_pres: float = 0.0     # worst conic primal feasibility seen
    max_rel_gap: float = 0.0  # worst conic duality gap seen
    stalled_leaves: int = 0   # fully fixed nodes whose relaxation never converged

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "relaxations": self.relaxations,
            "wall_ms": self.wall_ms,
            "max_conic_pres": self.max_pres,
            "max_conic_rel_gap": self.max_rel_gap,
            "stalled_leaves": self.stalled_leaves,
        }


@dataclass
class SolveResult:
    status: str
    state: FlowState | None
    x: dict[int, int] | None
    objective: float | None
    gap: float | None
    stats: BnbStats
    certificate: dict | None = None
    warnings: list[str] = field(default_factory=list)
    polished: bool = False

    def to_dict(self, net: GasNetwork) -> dict:
        out: dict = {
            "status": self.status,
            "objective": self.objective,
            "gap": self.gap,
            "bnb": self.stats.to_dict(),
            "warnings": list(self.warnings),
        }
        if self.state is not None:
            out["phi"] = {net.edge_names[i]: float(v)
                          for i, v in enumerate(self.state.phi)}
            out["psi"] = {net.node_names[i]: float(v)
                          for i, v in enumerate(self.state.psi)}
        if self.x is not None:
            out["x"] = {net.edge_names[e]: int(v) for e, v in self.x.items()}
        if self.certificate is not None:
            out["certificate"] = self.certificate
        return out


def recover_x(net: GasNetwork, state: FlowState) -> dict[int, int]:
    """Direction variables implied by flow signs; zero flow maps to 1."""
    return {e: (1 if state.phi[e] >= 0 else 0) for e in net.lossy_edges}


def inexactness_gap(net: GasNetwork, state: FlowState) -> float:
    """Worst relative slack of the relaxed drop law over lossy pipes.

    For a pipe with near-zero a*phi^2 (below EPS_DIV) the relative form is
    meaningless, so the slack is measured against the reference squared
    pressure instead (an absolute test).
    """
    phi, psi = state.phi, state.psi
    worst = 0.0
    for e in net.lossy_edges:
        edge = net.edges[e]
        denom = edge.kind.a * phi[e] ** 2
        slack = abs(psi[edge.tail] - psi[edge.head]) - denom
        if denom >= EPS_DIV:
            worst = max(worst, slack / denom)
        else:
            worst = max(worst, slack / net.psi_ref)
    return max(0.0, worst)


def _quads_active(net: GasNetwork, x: dict[int, int], sol: PrimalSolution,
                  tol: float = 1e-5) -> bool:
    """True when every directed drop inequality is tight at the solution."""
    for e in net.lossy_edges:
        edge = net.edges[e]
        dpsi = sol.psi[edge.tail] - sol.psi[edge.head]
        u = dpsi if x[e] == 1 else -dpsi
        slack = u - edge.kind.a * sol.phi[e] ** 2
        if slack > tol * max(1.0, abs(u), edge.kind.a * sol.phi[e] ** 2):
            return False
    return True


def _polish(net: GasNetwork, q: np.ndarray, x: dict[int, int],
            sol: PrimalSolution) -> FlowState | None:
    """Newton refinement of the tight system implied by a direction choice.

    Solves mass conservation, the reference pin, compressor ratios, and the
    directed drop equalities to machine precision, starting from the conic
    solution. Returns None when the refinement fails or leaves the feasible
    region of the relaxation (which would mean the tight system is wrong).
    """
    P, N = net.n_edges, net.n_nodes
    phi = sol.phi.copy()
    psi = sol.psi.copy()
    sigma = {e: (1.0 if x[e] == 1 else -1.0) for e in net.lossy_edges}
    scale = max(1.0, net.psi_ref, float(np.max(np.abs(q))) if q.size else 1.0)

    def system(phi, psi):
        F = np.zeros(N + P)
        J = np.zeros((N + P, N + P))     # unknown order: phi then psi
        row = 0
        for n in range(N):
            if n == net.reference:
                continue
            acc = -q[n]
            for eid, _ in net.incident[n]:
                sgn = 1.0 if net.edges[eid].tail == n else -1.0
                acc += sgn * phi[eid]
                J[row, eid] += sgn
            F[row] = acc
            row += 1
        F[row] = psi[net.reference] - net.psi_ref
        J[row, P + net.reference] = 1.0
        row += 1
        for e in net.compressor_edges:
            edge = net.edges[e]
            F[row] = psi[edge.head] - edge.kind.alpha * psi[edge.tail]
            J[row, P + edge.head] = 1.0
            J[row, P + edge.tail] = -edge.kind.alpha
            row += 1
        for e in net.lossy_edges:
            edge = net.edges[e]
            a, sg = edge.kind.a, sigma[e]
            F[row] = psi[edge.tail] - psi[edge.head] - a * sg * phi[e] ** 2
            J[row, P + edge.tail] = 1.0
            J[row, P + edge.head] = -1.0
            J[row, e] = -2.0 * a * sg * phi[e]
            row += 1
        return F, J

    best = None
    best_norm = math.inf
    for _ in range(25):
        F, J = system(phi, psi)
        norm = float(np.max(np.abs(F)))
        if norm < best_norm:
            best, best_norm = (phi.copy(), psi.copy()), norm
        elif norm > 2.0 * best_norm:
            break              # past the rounding floor; keep the best point
        if norm <= 1e-15 * scale:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        phi = phi + step[:P]
        psi = psi + step[P:]
    if best is None or best_norm > 1e-10 * scale:
        return None
    phi, psi = best

    # The refined point must stay (tolerantly) inside the relaxed region.
    if np.min(psi) < -1e-9 * scale:
        return None
    for e in net.lossy_edges:
        if sigma[e] * phi[e] < -1e-6 * scale:
            return None
    for e in net.compressor_edges:
        if phi[e] < -1e-7 * scale:
            return None
    psi = np.maximum(psi, 0.0)
    return FlowState(phi=phi, psi=psi)


@dataclass
class BnbOutcome:
    status: str               # "optimal" | "infeasible" | "timeout" | "stalled"
    fixing: dict[int, int] | None
    solution: PrimalSolution | None
    bound: float | None
    certificate: dict | None
    stats: BnbStats


def branch_and_bound(root: ConicProgram, *, options: ConicOptions = ConicOptions(),
                     time_limit: float | None = None,
                     strategy: str = "most_fractional",
                     root_solution: PrimalSolution | None = None,
                     stats: BnbStats | None = None,
                     seeded_leaves: dict[tuple[int, ...], PrimalSolution] | None = None,
                     ) -> BnbOutcome:
    """Best-first search over direction fixings using conic lower bounds.

    Prunes on infeasibility and on bound >= incumbent; branches on the most
    fractional direction variable (ties to the smallest edge id). A rounding
    heuristic solves the fully fixed program implied by each new relaxation
    flow pattern, which supplies the incumbent early. A caller that already
    solved the root (or some fully fixed programs) can pass the solutions in.
    """
    t0 = time.monotonic()
    stats = stats if stats is not None else BnbStats()
    net = root.net
    lossy = net.lossy_edges

    def out_of_time() -> bool:
        return time_limit is not None and (time.monotonic() - t0) >= time_limit

    def track(sol: PrimalSolution):
        if sol.status == "optimal":
            stats.max_pres = max(stats.max_pres, sol.pres)
            stats.max_rel_gap = max(stats.max_rel_gap, sol.rel_gap)

    import threading

    lock = threading.Lock()
    solved_leaves: dict[tuple[int, ...], PrimalSolution] = dict(seeded_leaves or {})

    def conic(prog: ConicProgram) -> PrimalSolution:
        key = None
        if all(v != FREE for v in prog.fixing.values()):
            key = tuple(int(prog.fixing[e]) for e in lossy)
            with lock:
                if key in solved_leaves:
                    return solved_leaves[key]
        sol = solve_conic(prog, options)
        if sol.status == "max_iter":
            log.info("conic solve stalled: %s", sol.message)
        with lock:
            stats.relaxations += 1
            track(sol)
            if key is not None:
                solved_leaves[key] = sol
        return sol

    incumbent: tuple[float, dict[int, int], PrimalSolution] | None = None
    tried: set[tuple[int, ...]] = set(solved_leaves)
    for key, sol in solved_leaves.items():
        if sol.status == "optimal" and (incumbent is None
                                        or sol.objective < incumbent[0]):
            incumbent = (sol.objective, dict(zip(lossy, key)), sol)

    def heuristic(sol: PrimalSolution):
        nonlocal incumbent
        pattern = tuple(
            1 if (root.fixing[e] == FREE and sol.phi[e] >= 0)
            or root.fixing[e] == 1 else 0
            for e in lossy)
        if pattern in tried:
            return
        tried.add(pattern)
        fix = dict(zip(lossy, pattern))
        hsol = conic(root.with_fixing(fix))
        if hsol.status == "optimal" and (incumbent is None
                                         or hsol.objective < incumbent[0]):
            incumbent = (hsol.objective, fix, hsol)

    def finish(status: str) -> BnbOutcome:
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        if incumbent is None:
            return BnbOutcome(status, None, None, None, None, stats)
        obj, fix, sol = incumbent
        return BnbOutcome(status, fix, sol, obj, None, stats)

    if out_of_time():
        return finish("timeout")

    root_sol = root_solution
    if root_sol is None:
        stats.nodes += 1
        root_sol = conic(root)
    if root_sol.status == "infeasible":
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return BnbOutcome("infeasible", None, None, None,
                          root_sol.certificate, stats)
    if root_sol.status != "optimal":
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return BnbOutcome("stalled", None, None, None, None, stats)

    counter = itertools.count()
    # Heap entries: (lower bound, tiebreak, fixing, solution or None).
    # A None solution marks a node whose own relaxation still needs solving
    # (its bound is inherited from the parent).
    heap: list[tuple[float, int, dict[int, object], PrimalSolution | None]] = []
    heapq.heappush(heap, (root_sol.objective, next(counter), dict(root.fixing),
                          root_sol))
    timed_out = False
    pool = ThreadPoolExecutor(max_workers=2)

    def prune(bound: float) -> bool:
        return incumbent is not None and bound >= incumbent[0] - _EPS_PRUNE * max(
            1.0, abs(incumbent[0]))

    while heap:
        if out_of_time():
            timed_out = True
            break
        bound, _, fixing, sol = heapq.heappop(heap)
        if prune(bound):
            break   # best-first: every remaining node is at least as bad
        free = [e for e in lossy if fixing[e] == FREE]
        if sol is None:
            stats.nodes += 1
            sol = conic(root.with_fixing(fixing))
            if sol.status == "infeasible":
                continue
            if sol.status != "optimal":
                # Unbounded node; split it blindly rather than trust a stale
                # solution. Terminates because every level fixes a variable.
                if not free:
                    stats.stalled_leaves += 1
                    log.warning("dropping a leaf whose relaxation stalled")
                    continue
                for val in (1, 0):
                    child_fix = dict(fixing)
                    child_fix[min(free)] = val
                    heapq.heappush(heap, (bound, next(counter), child_fix, None))
                continue
            bound = sol.objective
            if prune(bound):
                continue
        fractional = [e for e in free
                      if min(sol.x[e], 1.0 - sol.x[e]) > _EPS_INT]
        if not fractional:
            fix = {e: (int(round(sol.x[e])) if fixing[e] == FREE else int(fixing[e]))
                   for e in lossy}
            if incumbent is None or sol.objective < incumbent[0]:
                incumbent = (sol.objective, fix, sol)
            continue
        heuristic(sol)
        if prune(bound):
            continue
        if strategy == "first_free":
            branch = min(fractional)
        else:
            branch = max(fractional,
                         key=lambda e: (min(sol.x[e], 1.0 - sol.x[e]), -e))
        children = []
        for val in (1, 0):
            child_fix = dict(fixing)
            child_fix[branch] = val
            children.append((child_fix, root.with_fixing(child_fix)))
        stats.nodes += 2
        # The two child relaxations are independent pure solves; overlap them
        # (the factorizations release the GIL). Results are merged in a fixed
        # order so the search stays deterministic.
        csols = list(pool.map(conic, (prog for _, prog in children)))
        for (child_fix, _), csol in zip(children, csols):
            if csol.status == "infeasible":
                continue
            if csol.status != "optimal":
                heapq.heappush(heap, (bound, next(counter), child_fix, None))
                continue
            if not prune(csol.objective):
                heapq.heappush(heap, (csol.objective, next(counter), child_fix,
                                      csol))

    pool.shutdown(wait=False)
    if timed_out:
        return finish("timeout")
    return finish("optimal" if incumbent is not None else "infeasible")


def forced_directions(net: GasNetwork, q: np.ndarray,
                      tol: float = 1e-12) -> dict[int, int]:
    """Direction fixings implied by mass conservation on bridge pipes.

    The flow through a bridge equals the net injection behind it, a
    constant, so any integer-feasible point must pick its sign. Pipes on
    cycles, and bridges carrying (numerically) zero, stay free.
    """
    fixed: dict[int, int] = {}
    bridge_set = set(bridges(net))
    for e in net.lossy_edges:
        if e not in bridge_set:
            continue
        flow = bridge_flow(net, q, e)
        if abs(flow) > tol:
            fixed[e] = 1 if flow > 0 else 0
    return fixed


def _package(net, q, big_m, fix, sol, stats, *, timed_out=False) -> SolveResult:
    """Polish, measure the gap, and classify a candidate optimum."""
    polished = False
    state = FlowState(phi=sol.phi.copy(), psi=sol.psi.copy())
    if _quads_active(net, fix, sol):
        refined = _polish(net, q, fix, sol)
        if refined is not None:
            state = refined
            polished = True

    gap = inexactness_gap(net, state)
    res = residuals(net, q, state)
    objective = float(sum(abs(state.psi[net.edges[e].tail]
                              - state.psi[net.edges[e].head])
                          for e in net.lossy_edges))

    warnings = []
    mag = max(float(np.max(np.abs(state.phi), initial=0.0)),
              float(np.max(np.abs(state.psi), initial=0.0)))
    if mag > 0.1 * big_m:
        warnings.append(
            f"solution magnitude {mag:.3g} exceeds 0.1*M = {0.1 * big_m:.3g}; "
            "the big-M constant may be too tight")

    if timed_out:
        status = TIMEOUT
    elif gap <= EPS_EXACT and res.max_violation <= EPS_FEAS:
        status = SOLVED
    else:
        status = INEXACT
    return SolveResult(status=status, state=state, x=fix, objective=objective,
                       gap=gap, stats=stats, warnings=warnings, polished=polished)


def solve_gf(net: GasNetwork, q: np.ndarray, *, big_m: float = DEFAULT_BIG_M,
             time_limit: float | None = None, strategy: str = "most_fractional",
             options: ConicOptions = ConicOptions(),
             structural_certificate: bool = True) -> SolveResult:
    """Solve the flow problem globally and classify relaxation exactness.

    Returns status "solved" when the optimum satisfies the nonlinear
    equations (gap <= EPS_EXACT and residuals <= EPS_FEAS), "inexact" when
    the relaxation optimum does not, "infeasible" with a certificate when
    the root relaxation is infeasible (hence so is the flow problem), or
    "timeout".

    When the network has no compressors on cycles and pairwise edge-disjoint
    cycles, every minimizer of the relaxed problem solves the nonlinear
    equations, whose solution is unique. Under those (structurally checked)
    conditions a rounded direction choice whose solution polishes into an
    exact nonlinear solution is therefore the global optimum, and the
    branch-and-bound certification is skipped. Pass
    ``structural_certificate=False`` to force the full search.
    """
    require_valid(net)
    q = np.asarray(q, dtype=float)
    require_balanced(q)
    t0 = time.monotonic()
    stats = BnbStats()
    if time_limit is not None and time_limit <= 0:
        return SolveResult(status=TIMEOUT, state=None, x=None, objective=None,
                           gap=None, stats=stats)

    def conic(prog: ConicProgram) -> PrimalSolution:
        stats.relaxations += 1
        sol = solve_conic(prog, options)
        if sol.status == "optimal":
            stats.max_pres = max(stats.max_pres, sol.pres)
            stats.max_rel_gap = max(stats.max_rel_gap, sol.rel_gap)
        return sol

    fixed0 = forced_directions(net, q)
    root = build_relaxation(net, q, big_m, fixing=fixed0)
    stats.nodes += 1
    root_sol = conic(root)
    if root_sol.status == "max_iter":
        # Rare degenerate geometry; the plain relaxation bounds are weaker
        # but solve reliably.
        log.info("strengthened root stalled; retrying without cuts")
        root = build_relaxation(net, q, big_m, fixing=fixed0, strengthen=False)
        root_sol = conic(root)

    if root_sol.status == "infeasible":
        cert = dict(root_sol.certificate)
        cert["fixing"] = {net.edge_names[e]: int(v) for e, v in fixed0.items()}
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return SolveResult(status=INFEASIBLE, state=None, x=None, objective=None,
                           gap=None, stats=stats, certificate=cert)
    if root_sol.status != "optimal":
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return SolveResult(status=TIMEOUT, state=None, x=None, objective=None,
                           gap=None, stats=stats,
                           warnings=["conic solver stalled on the root"])

    lossy = net.lossy_edges
    pattern = tuple(
        int(fixed0[e]) if e in fixed0 else (1 if root_sol.phi[e] >= 0 else 0)
        for e in lossy)
    seeded: dict[tuple[int, ...], PrimalSolution] = {}
    if structural_certificate:
        assumptions = check_assumptions(net)
        if assumptions.a1_holds and assumptions.a2_holds:
            def round_pattern(phi):
                return tuple(
                    int(fixed0[e]) if e in fixed0 else (1 if phi[e] >= 0 else 0)
                    for e in lossy)

            def nr_pattern():
                # Direction hint from the nodal Newton baseline; cheap, and
                # its flow signs are usually right even when the flattened
                # root relaxation's are not.
                from .newton import NrFailure, nr_solve
                try:
                    return round_pattern(nr_solve(net, q).phi)
                except (NrFailure, ValueError):
                    return None

            queue = [pattern]
            nr_used = False
            for _ in range(6):
                if not queue and not nr_used:
                    nr_used = True
                    hint = nr_pattern()
                    if hint is not None and hint not in seeded:
                        queue.append(hint)
                if not queue:
                    break
                pat = queue.pop(0)
                if pat in seeded:
                    continue
                fix = dict(zip(lossy, pat))
                fsol = conic(root.with_fixing(fix))
                if fsol.status != "optimal":
                    continue
                seeded[pat] = fsol
                result = _package(net, q, big_m, fix, fsol, stats)
                if result.status == SOLVED and result.polished:
                    stats.wall_ms = 1000.0 * (time.monotonic() - t0)
                    return result
                # Iterate the rounding: a wrongly guessed direction shows up
                # as slack on its drop row; flip the offenders and re-solve.
                flip = set()
                for e in lossy:
                    if e in fixed0:
                        continue
                    edge = net.edges[e]
                    dpsi = fsol.psi[edge.tail] - fsol.psi[edge.head]
                    u = dpsi if fix[e] == 1 else -dpsi
                    slack = u - edge.kind.a * fsol.phi[e] ** 2
                    if slack > 1e-6 * max(1.0, abs(u), edge.kind.a * fsol.phi[e] ** 2):
                        flip.add(e)
                if flip:
                    queue.insert(0, tuple((1 - v if e in flip else v)
                                          for e, v in zip(lossy, pat)))

    remaining = None
    if time_limit is not None:
        remaining = max(0.0, time_limit - (time.monotonic() - t0))
    outcome = branch_and_bound(root, options=options, time_limit=remaining,
                               strategy=strategy, root_solution=root_sol,
                               stats=stats, seeded_leaves=seeded)

    if outcome.status == "infeasible" and outcome.solution is None:
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return SolveResult(status=INFEASIBLE, state=None, x=None,
                           objective=None, gap=None, stats=stats,
                           certificate=outcome.certificate,
                           warnings=["no feasible direction assignment found"])
    if outcome.solution is None:
        stats.wall_ms = 1000.0 * (time.monotonic() - t0)
        return SolveResult(status=TIMEOUT, state=None, x=None, objective=None,
                           gap=None, stats=stats)
    result = _package(net, q, big_m, outcome.fixing, outcome.solution, stats,
                      timed_out=outcome.status == "timeout")
    stats.wall_ms = 1000.0 * (time.monotonic() - t0)
    return result
