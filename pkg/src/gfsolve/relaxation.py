"""Continuous conic relaxation of the flow problem with direction variables.

For every lossy pipe (m, n) the sign-dependent drop law is replaced by four
big-M constraints gated by a direction variable x in [0, 1] (fixed to 0/1 or
left free):

    -M(1-x) <= phi <= M x
    a phi^2 <= (psi_m - psi_n) + M(1-x)
    a phi^2 <= M x - (psi_m - psi_n)

The convex quadratic rows are second-order cone representable. The objective
minimizes the sum of absolute squared-pressure differences across lossy
pipes, in epigraph form via one auxiliary t per pipe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import GasNetwork, NetworkError, require_balanced, require_valid
from .socp import (INFEASIBLE, MAX_ITER, OPTIMAL, ConeDims, ConicResult,
                   solve_cone_program)
from .tolerances import DEFAULT_BIG_M, EPS_CONIC, EPS_GAP, IPM_MAX_ITER

FREE = "free"


@dataclass(frozen=True)
class BigM:
    value: float = DEFAULT_BIG_M

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("big-M constant must be positive")


@dataclass(frozen=True)
class ConicOptions:
    feastol: float = EPS_CONIC
    gaptol: float = EPS_GAP
    max_iter: int = IPM_MAX_ITER


@dataclass
class PrimalSolution:
    status: str                       # "optimal" | "infeasible" | "max_iter"
    phi: np.ndarray | None
    psi: np.ndarray | None
    t: np.ndarray | None              # per lossy pipe, aligned with net.lossy_edges
    x: dict[int, float] | None        # direction values per lossy pipe
    objective: float | None
    pres: float
    dres: float
    rel_gap: float
    iterations: int
    certificate: dict | None = None   # infeasibility certificate {"y","z","residual"}
    message: str = ""


class ConicProgram:
    """Relaxation instance in standard conic form plus structural metadata."""

    def __init__(self, net: GasNetwork, q: np.ndarray, big_m: float,
                 fixing: dict[int, object], strengthen: bool = True):
        self.net = net
        self.q = np.asarray(q, dtype=float)
        self.big_m = float(big_m)
        self.fixing = dict(fixing)
        self.strengthen = bool(strengthen)

        P, N = net.n_edges, net.n_nodes
        self.var_phi = list(range(P))
        self.var_psi = [P + i for i in range(N)]
        # Epigraph variables are only needed while the direction is free; a
        # fixed direction forces the sign of the pressure difference, so its
        # |psi_m - psi_n| contribution enters the objective linearly.
        self.var_t: dict[int, int] = {}
        self.var_x: dict[int, int] = {}
        nxt = P + N
        for e in net.lossy_edges:
            if self.fixing[e] == FREE:
                self.var_t[e] = nxt
                nxt += 1
        for e in net.lossy_edges:
            if self.fixing[e] == FREE:
                self.var_x[e] = nxt
                nxt += 1
        self.n_var = nxt

        self._eq: list[tuple[str, dict[int, float], float]] = []
        self._ineq: list[tuple[str, dict[int, float], float]] = []
        # SOC metadata: (label, edge, a, u-expression, u-constant)
        self._soc: list[tuple[str, int, float, dict[int, float], float]] = []
        self._build()

        self.c = np.zeros(self.n_var)
        for idx in self.var_t.values():
            self.c[idx] = 1.0
        for e in net.lossy_edges:
            if self.fixing[e] != FREE:
                sign = 1.0 if self.fixing[e] == 1 else -1.0
                edge = net.edges[e]
                self.c[self.var_psi[edge.tail]] += sign
                self.c[self.var_psi[edge.head]] -= sign
        self.A = np.zeros((len(self._eq), self.n_var))
        self.b = np.zeros(len(self._eq))
        for i, (_, coeffs, rhs) in enumerate(self._eq):
            for j, v in coeffs.items():
                self.A[i, j] = v
            self.b[i] = rhs
        m = len(self._ineq) + 3 * len(self._soc)
        self.G = np.zeros((m, self.n_var))
        self.h = np.zeros(m)
        for i, (_, coeffs, rhs) in enumerate(self._ineq):
            for j, v in coeffs.items():
                self.G[i, j] = v
            self.h[i] = rhs
        row = len(self._ineq)
        for _, edge, a, expr, const in self._soc:
            # s = (u + 1, u - 1, 2 sqrt(a) phi) with u = expr + const
            for j, v in expr.items():
                self.G[row, j] = -v
                self.G[row + 1, j] = -v
            self.h[row] = const + 1.0
            self.h[row + 1] = const - 1.0
            self.G[row + 2, self.var_phi[edge]] = -2.0 * math.sqrt(a)
            self.h[row + 2] = 0.0
            row += 3
        self.dims = ConeDims(nonneg=len(self._ineq), soc=(3,) * len(self._soc))

    # -- construction -----------------------------------------------------

    def _x_term(self, edge: int) -> tuple[dict[int, float], float]:
        """x as (expression, constant): a variable when free, else its value."""
        if self.fixing[edge] == FREE:
            return {self.var_x[edge]: 1.0}, 0.0
        return {}, float(self.fixing[edge])

    def _build(self):
        net, q, M = self.net, self.q, self.big_m
        names = net.edge_names
        for n in range(net.n_nodes):
            if n == net.reference:
                continue
            coeffs: dict[int, float] = {}
            for eid, _ in net.incident[n]:
                e = net.edges[eid]
                sgn = 1.0 if e.tail == n else -1.0
                coeffs[self.var_phi[eid]] = coeffs.get(self.var_phi[eid], 0.0) + sgn
            self._eq.append((f"mass[{net.node_names[n]}]", coeffs, float(q[n])))
        self._eq.append(("reference", {self.var_psi[net.reference]: 1.0}, net.psi_ref))
        for eid in net.compressor_edges:
            e = net.edges[eid]
            self._eq.append((
                f"ratio[{names[eid]}]",
                {self.var_psi[e.head]: 1.0, self.var_psi[e.tail]: -e.kind.alpha},
                0.0))

        for n in range(net.n_nodes):
            self._ineq.append((f"psi_nonneg[{net.node_names[n]}]",
                               {self.var_psi[n]: -1.0}, 0.0))
        for eid in net.compressor_edges:
            self._ineq.append((f"direction[{names[eid]}]",
                               {self.var_phi[eid]: -1.0}, 0.0))

        for eid in net.lossy_edges:
            e = net.edges[eid]
            a = e.kind.a
            pm, pn = self.var_psi[e.tail], self.var_psi[e.head]
            if self.fixing[eid] == FREE:
                tv = self.var_t[eid]
                self._ineq.append((f"t_upper[{names[eid]}]",
                                   {pm: 1.0, pn: -1.0, tv: -1.0}, 0.0))
                self._ineq.append((f"t_lower[{names[eid]}]",
                                   {pm: -1.0, pn: 1.0, tv: -1.0}, 0.0))
            xexpr, xconst = self._x_term(eid)
            # phi <= M x
            coeffs = {self.var_phi[eid]: 1.0}
            for j, v in xexpr.items():
                coeffs[j] = -M * v
            self._ineq.append((f"flow_upper[{names[eid]}]", coeffs, M * xconst))
            # -phi <= M (1 - x)
            coeffs = {self.var_phi[eid]: -1.0}
            for j, v in xexpr.items():
                coeffs[j] = M * v
            self._ineq.append((f"flow_lower[{names[eid]}]", coeffs, M * (1.0 - xconst)))
            if self.fixing[eid] == FREE:
                xv = self.var_x[eid]
                self._ineq.append((f"x_upper[{names[eid]}]", {xv: 1.0}, 1.0))
                self._ineq.append((f"x_lower[{names[eid]}]", {xv: -1.0}, 0.0))
            # a phi^2 <= (psi_m - psi_n) + M(1 - x); trivially slack once the
            # direction is fixed to 0 (any violating point would cost more
            # than M/2 in the objective), so it is emitted only when needed.
            if self.fixing[eid] != 0:
                expr = {pm: 1.0, pn: -1.0}
                for j, v in xexpr.items():
                    expr[j] = -M * v
                self._soc.append((f"drop_pos[{names[eid]}]", eid, a, expr,
                                  M * (1.0 - xconst)))
            # a phi^2 <= M x - (psi_m - psi_n); mirror case, slack once fixed to 1.
            if self.fixing[eid] != 1:
                expr = {pm: -1.0, pn: 1.0}
                for j, v in xexpr.items():
                    expr[j] = M * v
                self._soc.append((f"drop_neg[{names[eid]}]", eid, a, expr,
                                  M * xconst))
            # Strengthening for free directions: (1-eps) a phi^2 <= t.
            # Implied at either integer choice (the active big-M side forces
            # |psi_m - psi_n| >= a phi^2 and t dominates the difference), so
            # it cuts no integer point but lifts the fractional lower bound
            # from near zero to near the optimum. The small shrink keeps the
            # row strictly inactive at points where t = a phi^2 would
            # otherwise coincide with the epigraph rows and destroy strict
            # complementarity. Fixed directions imply it already and skip it.
            if self.strengthen and self.fixing[eid] == FREE:
                self._soc.append((f"drop_bound[{names[eid]}]", eid,
                                  a * (1.0 - 1e-6),
                                  {self.var_t[eid]: 1.0}, 0.0))

    # -- utilities ---------------------------------------------------------

    def with_fixing(self, fixing: dict[int, object]) -> "ConicProgram":
        return ConicProgram(self.net, self.q, self.big_m, fixing,
                            strengthen=self.strengthen)

    def pack(self, phi, psi, t=None, x=None) -> np.ndarray:
        z = np.zeros(self.n_var)
        z[: self.net.n_edges] = phi
        z[self.net.n_edges: self.net.n_edges + self.net.n_nodes] = psi
        lossy = list(self.net.lossy_edges)
        for eid, idx in self.var_t.items():
            e = self.net.edges[eid]
            z[idx] = (abs(psi[e.tail] - psi[e.head]) if t is None
                      else t[lossy.index(eid)])
        for eid, idx in self.var_x.items():
            z[idx] = x[eid] if x is not None else (1.0 if phi[eid] >= 0 else 0.0)
        return z

    def split(self, z: np.ndarray):
        phi = z[: self.net.n_edges].copy()
        psi = z[self.net.n_edges: self.net.n_edges + self.net.n_nodes].copy()
        t = np.empty(len(self.net.lossy_edges))
        x = {}
        for j, e in enumerate(self.net.lossy_edges):
            edge = self.net.edges[e]
            if self.fixing[e] == FREE:
                t[j] = z[self.var_t[e]]
                x[e] = float(z[self.var_x[e]])
            else:
                t[j] = abs(psi[edge.tail] - psi[edge.head])
                x[e] = float(self.fixing[e])
        return phi, psi, t, x

    def violation(self, z: np.ndarray) -> float:
        """Largest structural constraint violation at a point (for checks)."""
        worst = 0.0
        for _, coeffs, rhs in self._eq:
            lhs = sum(v * z[j] for j, v in coeffs.items())
            worst = max(worst, abs(lhs - rhs))
        for _, coeffs, rhs in self._ineq:
            lhs = sum(v * z[j] for j, v in coeffs.items())
            worst = max(worst, lhs - rhs)
        for _, edge, a, expr, const in self._soc:
            u = sum(v * z[j] for j, v in expr.items()) + const
            worst = max(worst, a * z[self.var_phi[edge]] ** 2 - u)
        return worst

    def row_labels(self) -> dict[str, list[str]]:
        return {
            "eq": [lbl for lbl, _, _ in self._eq],
            "ineq": [lbl for lbl, _, _ in self._ineq],
            "soc": [lbl for lbl, *_ in self._soc],
        }

    def dump(self) -> str:
        """Plain-text listing of the built program, for debugging."""
        def term(coeffs):
            parts = []
            for j, v in sorted(coeffs.items()):
                parts.append(f"{v:+g}*v{j}")
            return " ".join(parts) if parts else "0"

        obj = " ".join(f"{v:+g}*v{j}" for j, v in enumerate(self.c) if v != 0.0)
        lines = [f"minimize {obj or '0'}"]
        lines.append("subject to")
        for lbl, coeffs, rhs in self._eq:
            lines.append(f"  {lbl}: {term(coeffs)} == {rhs:g}")
        for lbl, coeffs, rhs in self._ineq:
            lines.append(f"  {lbl}: {term(coeffs)} <= {rhs:g}")
        for lbl, edge, a, expr, const in self._soc:
            lines.append(
                f"  {lbl}: {a:g}*v{self.var_phi[edge]}^2 <= {term(expr)} {const:+g}")
        lines.append("variables")
        for eid, name in enumerate(self.net.edge_names):
            lines.append(f"  v{self.var_phi[eid]} = flow[{name}]")
        for n, name in enumerate(self.net.node_names):
            lines.append(f"  v{self.var_psi[n]} = pressure_sq[{name}]")
        for eid, idx in self.var_t.items():
            lines.append(f"  v{idx} = drop_abs[{self.net.edge_names[eid]}]")
        for eid, idx in self.var_x.items():
            lines.append(f"  v{idx} = direction[{self.net.edge_names[eid]}]")
        return "\n".join(lines)


def build_relaxation(net: GasNetwork, q: np.ndarray,
                     big_m: float | BigM = DEFAULT_BIG_M,
                     fixing: dict[int, object] | None = None,
                     strengthen: bool = True) -> ConicProgram:
    """Assemble the relaxation; ``fixing`` maps lossy edges to 0, 1 or "free".

    Omitted lossy pipes are left free. The network must validate and the
    injections must balance.
    """
    require_valid(net)
    require_balanced(q)
    if isinstance(big_m, BigM):
        big_m = big_m.value
    if not big_m > 0:
        raise ValueError("big-M constant must be positive")
    full: dict[int, object] = {e: FREE for e in net.lossy_edges}
    for eid, val in (fixing or {}).items():
        if eid not in full:
            raise NetworkError(
                f"edge {net.edge_names[eid]!r} is not a lossy pipe; cannot fix")
        if val not in (0, 1, FREE):
            raise ValueError(f"fixing for edge {eid} must be 0, 1 or 'free'")
        full[eid] = val
    return ConicProgram(net, q, big_m, full, strengthen=strengthen)


def solve_conic(prog: ConicProgram,
                options: ConicOptions = ConicOptions()) -> PrimalSolution:
    """Solve the relaxation with the interior-point engine."""
    res: ConicResult = solve_cone_program(
        prog.c, prog.A, prog.b, prog.G, prog.h, prog.dims,
        feastol=options.feastol, gaptol=options.gaptol, max_iter=options.max_iter)
    if res.status == OPTIMAL:
        phi, psi, t, x = prog.split(res.x)
        return PrimalSolution(
            status="optimal", phi=phi, psi=psi, t=t, x=x,
            objective=res.objective, pres=res.pres, dres=res.dres,
            rel_gap=res.rel_gap, iterations=res.iterations, message=res.message)
    if res.status == INFEASIBLE:
        cert = {
            "y": res.y.tolist(),
            "z": res.z.tolist(),
            "residual": res.certificate_residual,
        }
        return PrimalSolution(
            status="infeasible", phi=None, psi=None, t=None, x=None,
            objective=None, pres=res.pres, dres=res.dres, rel_gap=res.rel_gap,
            iterations=res.iterations, certificate=cert, message=res.message)
    return PrimalSolution(
        status="max_iter", phi=None, psi=None, t=None, x=None,
        objective=None, pres=res.pres, dres=res.dres, rel_gap=res.rel_gap,
        iterations=res.iterations, message=res.message or "no convergence")


def verify_infeasibility_certificate(prog: ConicProgram, cert: dict) -> float:
    """Residual of a Farkas certificate; small residual proves infeasibility.

    The pair (y, z) must satisfy z in the dual cone, b'y + h'z = -1 and
    A'y + G'z = 0; the returned value is the worst violation of these.
    """
    y = np.asarray(cert["y"], dtype=float)
    z = np.asarray(cert["z"], dtype=float)
    worst = float(np.max(np.abs(prog.A.T @ y + prog.G.T @ z)))
    worst = max(worst, abs(float(prog.b @ y) + float(prog.h @ z) + 1.0))
    l = prog.dims.nonneg
    if l:
        worst = max(worst, float(np.max(-z[:l], initial=0.0)))
    start = l
    for d in prog.dims.soc:
        blk = z[start: start + d]
        worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        start += d
    return worst
