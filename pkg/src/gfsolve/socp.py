"""Dense primal-dual interior-point solver for cone programs.

Solves
    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K

where K is a product of a nonnegative orthant and second-order cones.
The implementation uses the homogeneous self-dual embedding (so primal
infeasibility is detected with a certificate), Nesterov-Todd scaling, and a
Mehrotra predictor-corrector step. Linear systems are solved densely with LU
factorization, static regularization, and iterative refinement; problem data
is Ruiz-equilibrated up front. Intended for desk-scale problems (hundreds of
variables), not sparse industrial ones.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .tolerances import EPS_CONIC, EPS_GAP, IPM_MAX_ITER

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

_STEP_BACKOFF = 0.99
_TINY = 1e-14


class _NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConeDims:
    nonneg: int
    soc: tuple[int, ...] = ()

    @property
    def total(self) -> int:
        return self.nonneg + sum(self.soc)

    @property
    def degree(self) -> int:
        return self.nonneg + len(self.soc)


@dataclass
class ConicResult:
    status: str
    x: np.ndarray | None
    y: np.ndarray | None
    z: np.ndarray | None
    s: np.ndarray | None
    objective: float | None
    pres: float
    dres: float
    rel_gap: float
    iterations: int
    message: str = ""
    # For INFEASIBLE: (y, z) normalized so b'y + h'z = -1; residual of A'y+G'z.
    certificate_residual: float | None = None


class _Cones:
    """Cone geometry with second-order blocks batched by dimension."""

    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.l = dims.nonneg
        self.soc_slices = []
        start = dims.nonneg
        for d in dims.soc:
            if d < 2:
                raise ValueError("second-order cone blocks need dimension >= 2")
            self.soc_slices.append(slice(start, start + d))
            start += d
        self.total = start
        self.degree = dims.degree
        # Group blocks of equal dimension into (k, d) index matrices so all
        # per-block arithmetic runs as batched numpy operations.
        groups: dict[int, list[int]] = {}
        for sl, d in zip(self.soc_slices, dims.soc):
            groups.setdefault(d, []).append(sl.start)
        self.groups = [
            (d, np.array([[s + j for j in range(d)] for s in starts]))
            for d, starts in groups.items()]

    def identity(self) -> np.ndarray:
        e = np.zeros(self.total)
        e[: self.l] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def max_shift(self, u: np.ndarray) -> float:
        """Smallest t with u + a*e interior for all a > t."""
        worst = -math.inf
        if self.l:
            worst = max(worst, float(-np.min(u[: self.l])))
        for _, idx in self.groups:
            V = u[idx]
            worst = max(worst, float(np.max(
                np.linalg.norm(V[:, 1:], axis=1) - V[:, 0])))
        return worst

    def violation(self, u: np.ndarray) -> float:
        """Distance-like measure of cone infeasibility (0 inside K)."""
        return max(0.0, self.max_shift(u))

    def step_to_boundary(self, u: np.ndarray, du: np.ndarray) -> float:
        """sup {alpha >= 0 : u + alpha*du in K} for interior u."""
        alpha = math.inf
        if self.l:
            neg = du[: self.l] < 0
            if np.any(neg):
                alpha = float(np.min(-u[: self.l][neg] / du[: self.l][neg]))
        for _, idx in self.groups:
            alpha = min(alpha, self._soc_boundary(u[idx], du[idx]))
        return alpha

    def jordan_product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.total)
        out[: self.l] = u[: self.l] * v[: self.l]
        for _, idx in self.groups:
            U, V = u[idx], v[idx]
            W = np.empty_like(U)
            W[:, 0] = np.sum(U * V, axis=1)
            W[:, 1:] = U[:, [0]] * V[:, 1:] + V[:, [0]] * U[:, 1:]
            out[idx] = W
        return out

    def jordan_solve(self, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        """x with u o x = d, u interior."""
        out = np.empty(self.total)
        out[: self.l] = d[: self.l] / u[: self.l]
        for _, idx in self.groups:
            U, D = u[idx], d[idx]
            det = U[:, 0] ** 2 - np.sum(U[:, 1:] ** 2, axis=1)
            if np.any(det <= 0) or np.any(U[:, 0] <= 0):
                raise _NumericalError("jordan inverse at non-interior point")
            X = np.empty_like(U)
            X[:, 0] = (U[:, 0] * D[:, 0] - np.sum(U[:, 1:] * D[:, 1:], axis=1)) / det
            X[:, 1:] = (D[:, 1:] - X[:, [0]] * U[:, 1:]) / U[:, [0]]
            out[idx] = X
        return out

    def step_to_boundary_pair(self, u: np.ndarray, du_a: np.ndarray,
                              du_b: np.ndarray) -> float:
        """min of step_to_boundary over two directions, batched."""
        alpha = math.inf
        if self.l:
            ub = u[: self.l]
            for du in (du_a, du_b):
                neg = du[: self.l] < 0
                if np.any(neg):
                    alpha = min(alpha, float(np.min(-ub[neg] / du[: self.l][neg])))
        for _, idx in self.groups:
            U = np.vstack((u[idx], u[idx]))
            D = np.vstack((du_a[idx], du_b[idx]))
            alpha = min(alpha, self._soc_boundary(U, D))
        return alpha

    @staticmethod
    def _soc_boundary(U: np.ndarray, D: np.ndarray) -> float:
        dn = np.max(np.abs(D), axis=1)
        ok = np.isfinite(dn) & (dn > 0)
        if not np.any(ok):
            return math.inf
        U, D, dn = U[ok], D[ok] / dn[ok, None], dn[ok]
        c0 = U[:, 0] ** 2 - np.sum(U[:, 1:] ** 2, axis=1)
        c1 = 2.0 * (U[:, 0] * D[:, 0] - np.sum(U[:, 1:] * D[:, 1:], axis=1))
        c2 = D[:, 0] ** 2 - np.sum(D[:, 1:] ** 2, axis=1)
        roots = np.full(len(c0), math.inf)
        lin = np.abs(c2) < _TINY * np.maximum(1.0, np.maximum(np.abs(c1),
                                                              np.abs(c0)))
        use = lin & (c1 < 0)
        roots[use] = -c0[use] / c1[use]
        quad = ~lin
        disc = c1 ** 2 - 4.0 * c2 * c0
        has = quad & (disc >= 0)
        if np.any(has):
            sq = np.sqrt(disc[has])
            r1 = (-c1[has] - sq) / (2.0 * c2[has])
            r2 = (-c1[has] + sq) / (2.0 * c2[has])
            r1 = np.where(r1 > 0, r1, math.inf)
            r2 = np.where(r2 > 0, r2, math.inf)
            roots[has] = np.minimum(r1, r2)
        head_neg = D[:, 0] < 0
        if np.any(head_neg):
            roots[head_neg] = np.minimum(roots[head_neg],
                                         -U[head_neg, 0] / D[head_neg, 0])
        return float(np.min(roots / dn))


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda."""

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        l = cones.l
        if np.any(s[:l] <= 0) or np.any(z[:l] <= 0):
            raise _NumericalError("orthant iterate left the interior")
        self.w = np.sqrt(s[:l] / z[:l])
        self.soc: list[tuple[np.ndarray, np.ndarray]] = []   # per group: eta, wbar
        for _, idx in cones.groups:
            S, Z = s[idx], z[idx]
            js = S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1)
            jz = Z[:, 0] ** 2 - np.sum(Z[:, 1:] ** 2, axis=1)
            if np.any(js <= 0) or np.any(jz <= 0) or np.any(S[:, 0] <= 0) \
                    or np.any(Z[:, 0] <= 0):
                raise _NumericalError("cone iterate left the interior")
            rs, rz = np.sqrt(js), np.sqrt(jz)
            Sb, Zb = S / rs[:, None], Z / rz[:, None]
            gamma = np.sqrt((1.0 + np.sum(Sb * Zb, axis=1)) / 2.0)
            Wb = Sb.copy()
            Wb[:, 0] += Zb[:, 0]
            Wb[:, 1:] -= Zb[:, 1:]
            Wb /= (2.0 * gamma)[:, None]
            self.soc.append((np.sqrt(rs / rz), Wb))
        self.lmbda = self.apply(z)

    @staticmethod
    def _wbar_apply(Wb: np.ndarray, V: np.ndarray) -> np.ndarray:
        t = np.sum(Wb[:, 1:] * V[:, 1:], axis=1)
        out = np.empty_like(V)
        out[:, 0] = Wb[:, 0] * V[:, 0] + t
        out[:, 1:] = V[:, 1:] + (V[:, 0] + t / (1.0 + Wb[:, 0]))[:, None] * Wb[:, 1:]
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W v."""
        out = np.empty_like(v)
        l = self.cones.l
        out[:l] = self.w * v[:l]
        for (eta, Wb), (_, idx) in zip(self.soc, self.cones.groups):
            out[idx] = eta[:, None] * self._wbar_apply(Wb, v[idx])
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        """W^{-1} v, using Wbar^{-1} = J Wbar J."""
        out = np.empty_like(v)
        l = self.cones.l
        out[:l] = v[:l] / self.w
        for (eta, Wb), (_, idx) in zip(self.soc, self.cones.groups):
            V = v[idx].copy()
            V[:, 1:] = -V[:, 1:]
            res = self._wbar_apply(Wb, V)
            res[:, 1:] = -res[:, 1:]
            out[idx] = res / eta[:, None]
        return out

    def wtw_matrix(self) -> np.ndarray:
        """Dense W'W = W^2, using Wbar^2 = 2 wbar wbar' - J."""
        m = self.cones.total
        out = np.zeros((m, m))
        l = self.cones.l
        out[np.arange(l), np.arange(l)] = self.w ** 2
        for (eta, Wb), (d, idx) in zip(self.soc, self.cones.groups):
            blocks = 2.0 * Wb[:, :, None] * Wb[:, None, :]
            blocks[:, 0, 0] -= 1.0
            rng = np.arange(1, d)
            blocks[:, rng, rng] += 1.0
            blocks *= (eta ** 2)[:, None, None]
            out[idx[:, :, None], idx[:, None, :]] = blocks
        return out

    def apply_wtw(self, v: np.ndarray) -> np.ndarray:
        """W'W v = W(W v)."""
        return self.apply(self.apply(v))

    def inv_square_apply(self, v: np.ndarray) -> np.ndarray:
        """W^{-2} v, using Wbar^{-2} = 2 (J wbar)(J wbar)' - J."""
        out = np.empty_like(v)
        l = self.cones.l
        out[:l] = v[:l] / (self.w ** 2)
        for (eta, Wb), (_, idx) in zip(self.soc, self.cones.groups):
            B = v[idx]                       # (k, d)
            t = Wb[:, 0] * B[:, 0] - np.sum(Wb[:, 1:] * B[:, 1:], axis=1)
            R = np.empty_like(B)
            R[:, 0] = 2.0 * Wb[:, 0] * t - B[:, 0]
            R[:, 1:] = -2.0 * Wb[:, 1:] * t[:, None] + B[:, 1:]
            out[idx] = R / (eta ** 2)[:, None]
        return out

    def inv_square_matmul(self, M: np.ndarray) -> np.ndarray:
        """W^{-2} M for a dense matrix, blockwise.

        Uses Wbar^{-2} = 2 (J wbar)(J wbar)' - J with J = diag(1, -I).
        """
        out = np.empty_like(M)
        l = self.cones.l
        out[:l] = M[:l] / (self.w ** 2)[:, None]
        for (eta, Wb), (_, idx) in zip(self.soc, self.cones.groups):
            B = M[idx]                       # (k, d, ncols)
            v = Wb.copy()
            v[:, 1:] = -v[:, 1:]             # J wbar
            t = np.einsum("kd,kdn->kn", v, B)
            JB = B.copy()
            JB[:, 1:, :] = -JB[:, 1:, :]
            out[idx] = (2.0 * v[:, :, None] * t[:, None, :] - JB) \
                / (eta ** 2)[:, None, None]
        return out


class _KKT:
    """Solves [[0 A' G']; [A 0 0]; [G 0 -W'W]] (dx, dy, dz) = (bx, by, bz).

    The z block is eliminated (dz = W^{-2}(G dx - bz)), leaving a reduced
    (n + p) quasidefinite system that is LU-factored with static
    regularization. Iterative refinement runs against the full unreduced
    system, so the reduction costs no accuracy.
    """

    def __init__(self, A: np.ndarray, G: np.ndarray, reg: float = 1e-12):
        self.p, self.n = A.shape
        self.m = G.shape[0]
        self.A = A
        self.G = G
        N = self.n + self.p
        self.mat = np.zeros((N, N))
        self.mat[: self.n, self.n:] = A.T
        self.mat[self.n:, : self.n] = A
        self.reg = reg
        self.scaling: _Scaling | None = None
        self._lu = None

    def _winv2(self, v: np.ndarray) -> np.ndarray:
        if self.scaling is None:
            return v
        return self.scaling.inv_square_apply(v)

    def _wtw(self, v: np.ndarray) -> np.ndarray:
        if self.scaling is None:
            return v
        return self.scaling.apply_wtw(v)

    def factor(self, scaling: _Scaling | None):
        self.scaling = scaling
        n = self.n
        S = self.G if scaling is None else scaling.inv_square_matmul(self.G)
        self.mat[:n, :n] = self.G.T @ S
        reg = self.reg
        for _ in range(4):
            work = self.mat.copy()
            d = np.einsum("ii->i", work)
            d[:n] += reg
            d[n:] -= reg
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(work, check_finite=False)
            if np.all(np.abs(np.diag(self._lu[0])) > 0.0):
                return
            reg *= 1e3    # exactly singular pivot; add more regularization
        raise _NumericalError("KKT factorization is singular")

    def _reduced_solve(self, bx, by, bz):
        rhs = np.concatenate([bx + self.G.T @ self._winv2(bz), by])
        u = sla.lu_solve(self._lu, rhs, check_finite=False)
        dx, dy = u[: self.n], u[self.n:]
        dz = self._winv2(self.G @ dx - bz)
        return dx, dy, dz

    refine_rounds = 2

    def solve(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray,
              refine: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if refine is None:
            refine = self.refine_rounds
        dx, dy, dz = self._reduced_solve(bx, by, bz)
        if refine == 0:
            if not math.isfinite(float(dx.sum()) + float(dy.sum()) + float(dz.sum())):
                raise _NumericalError("linear solve produced non-finite values")
            return dx, dy, dz
        scale = max(1.0, float(np.max(np.abs(bx), initial=0.0)),
                    float(np.max(np.abs(by), initial=0.0)),
                    float(np.max(np.abs(bz), initial=0.0)))
        for _ in range(refine):
            rx = bx - (self.A.T @ dy + self.G.T @ dz)
            ry = by - self.A @ dx
            rz = bz - (self.G @ dx - self._wtw(dz))
            worst = max(float(np.max(np.abs(rx), initial=0.0)),
                        float(np.max(np.abs(ry), initial=0.0)),
                        float(np.max(np.abs(rz), initial=0.0)))
            if worst <= 1e-14 * scale:
                break
            ex, ey, ez = self._reduced_solve(rx, ry, rz)
            dx, dy, dz = dx + ex, dy + ey, dz + ez
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))
                and np.all(np.isfinite(dz))):
            raise _NumericalError("linear solve produced non-finite values")
        return dx, dy, dz


def _ruiz_equilibrate(A, b, G, h, c, cones: _Cones, sweeps: int = 6):
    """Symmetric row/column scaling of the stacked constraint matrix.

    Rows inside one second-order cone block share a single scaling factor so
    cone membership is preserved.
    """
    p, n = A.shape
    m = G.shape[0]
    A = A.copy()
    G = G.copy()
    dcol = np.ones(n)
    drow_a = np.ones(p)
    drow_g = np.ones(m)
    for _ in range(sweeps):
        cn = np.maximum(
            np.max(np.abs(A), axis=0, initial=0.0),
            np.max(np.abs(G), axis=0, initial=0.0))
        cs = 1.0 / np.sqrt(np.where(cn > 0, cn, 1.0))
        A *= cs
        G *= cs
        dcol *= cs
        if p:
            rn = np.max(np.abs(A), axis=1, initial=0.0)
            rs = 1.0 / np.sqrt(np.where(rn > 0, rn, 1.0))
            A *= rs[:, None]
            drow_a *= rs
        rn = np.max(np.abs(G), axis=1, initial=0.0)
        rs = np.ones(m)
        l = cones.l
        rs[:l] = 1.0 / np.sqrt(np.where(rn[:l] > 0, rn[:l], 1.0))
        for sl in cones.soc_slices:
            blk = np.max(rn[sl], initial=0.0)
            rs[sl] = 1.0 / math.sqrt(blk) if blk > 0 else 1.0
        G *= rs[:, None]
        drow_g *= rs
    b = b * drow_a
    h = h * drow_g
    c = c * dcol
    cost_scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    c = c / cost_scale
    return A, b, G, h, c, dcol, drow_a, drow_g, cost_scale


def solve_cone_program(c, A, b, G, h, dims: ConeDims, *,
                       feastol: float = EPS_CONIC, gaptol: float = EPS_GAP,
                       max_iter: int = IPM_MAX_ITER) -> ConicResult:
    """Solve the cone program; see module docstring for the form."""
    c0 = np.asarray(c, dtype=float)
    A0 = np.asarray(A, dtype=float).reshape(-1, c0.size)
    b0 = np.asarray(b, dtype=float)
    G0 = np.asarray(G, dtype=float).reshape(-1, c0.size)
    h0 = np.asarray(h, dtype=float)
    n = c0.size
    p, m = A0.shape[0], G0.shape[0]
    if dims.total != m:
        raise ValueError("cone dimensions do not match G")
    cones = _Cones(dims)

    As, bs, Gs, hs, cs, dcol, drow_a, drow_g, cost_scale = _ruiz_equilibrate(
        A0, b0, G0, h0, c0, cones)

    kkt = _KKT(As, Gs)
    e = cones.identity()

    # Interior starting point, least-norm primal/dual with the identity scaling.
    kkt.factor(None)
    x, _, _ = kkt.solve(np.zeros(n), bs, hs)
    s = hs - Gs @ x
    shift = cones.max_shift(s)
    if shift >= 0:
        s = s + (1.0 + shift) * e
    _, y, zsol = kkt.solve(-cs, np.zeros(p), np.zeros(m))
    z = zsol.copy()
    shift = cones.max_shift(z)
    if shift >= 0:
        z = z + (1.0 + shift) * e
    tau, kappa = 1.0, 1.0

    deg = cones.degree + 1

    def unscaled(xv, yv, zv, sv, tv):
        xo = dcol * xv / tv
        yo = cost_scale * drow_a * yv / tv
        zo = cost_scale * drow_g * zv / tv
        so = sv / (drow_g * tv)
        return xo, yo, zo, so

    def metrics(xv, yv, zv, sv, tv):
        """Residuals of the candidate solution extracted from the iterate.

        Primal feasibility is measured on the slack h - G x implied by the
        returned point, which is how the solution will actually be used.
        """
        xo, yo, zo, _ = unscaled(xv, yv, zv, sv, tv)
        sbar = h0 - G0 @ xo
        pres = cones.violation(sbar)
        if p:
            pres = max(pres, float(np.max(np.abs(A0 @ xo - b0))))
        dres = float(np.max(np.abs(A0.T @ yo + G0.T @ zo + c0))) if n else 0.0
        dres = max(dres, cones.violation(zo))
        pcost = float(c0 @ xo)
        dcost = -float(b0 @ yo) - float(h0 @ zo)
        gap = max(float(sbar @ zo), 0.0, abs(pcost - dcost))
        rel_gap = gap / max(1.0, abs(pcost), abs(dcost))
        return pres, dres, rel_gap, pcost

    best = None
    best_score = math.inf
    status = MAX_ITER
    message = ""
    iters_done = 0
    slow = 0

    for it in range(max_iter):
        iters_done = it
        pres, dres, rel_gap, pcost = metrics(x, y, z, s, tau)
        score = max(pres / feastol, dres / feastol, rel_gap / gaptol)
        if score < best_score:
            best_score = score
            best = (x.copy(), y.copy(), z.copy(), s.copy(), tau,
                    pres, dres, rel_gap, pcost)

        # Primal infeasibility certificate: z >= 0, A'y + G'z ~ 0, b'y + h'z < 0.
        yo = cost_scale * drow_a * y
        zo = cost_scale * drow_g * z
        xi = float(b0 @ yo) + float(h0 @ zo)
        if xi < 0:
            cert_res = float(np.max(np.abs(A0.T @ yo + G0.T @ zo))) / (-xi) if n else 0.0
            if cert_res <= 0.1 * feastol and tau <= 1e-4 * max(1.0, kappa):
                ycert, zcert = yo / (-xi), zo / (-xi)
                return ConicResult(
                    status=INFEASIBLE, x=None, y=ycert, z=zcert, s=None,
                    objective=None, pres=pres, dres=dres, rel_gap=rel_gap,
                    iterations=it, message="primal infeasibility certificate found",
                    certificate_residual=cert_res)
        xo = dcol * x
        cx = float(c0 @ xo)
        if cx < 0 and tau <= 1e-4 * max(1.0, kappa):
            so = s / drow_g
            ray_res = max(
                float(np.max(np.abs(A0 @ xo))) if p else 0.0,
                float(np.max(np.abs(G0 @ xo + so))))
            if ray_res <= 0.1 * feastol * max(1.0, -cx):
                return ConicResult(
                    status=UNBOUNDED, x=xo / (-cx), y=None, z=None, s=None,
                    objective=None, pres=pres, dres=dres, rel_gap=rel_gap,
                    iterations=it, message="dual infeasibility certificate found")

        if pres <= 0.5 * feastol and dres <= 0.5 * feastol and rel_gap <= 0.5 * gaptol:
            break

        mu = (float(s @ z) + tau * kappa) / deg
        if it == 0:
            mu0 = mu
        if mu <= 1e-16 * max(1.0, mu0):
            break
        # Far from the central-path target, single-precision-grade directions
        # are plenty; spend refinement only in the endgame.
        kkt.refine_rounds = 2 if mu <= 1e-4 * mu0 else 0

        try:
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(z))
                    and math.isfinite(tau) and math.isfinite(kappa)):
                raise _NumericalError("iterate left the finite range")
            scaling = _Scaling(cones, s, z)
            lam = scaling.lmbda
            kkt.factor(scaling)

            rx = As.T @ y + Gs.T @ z + cs * tau
            ry = As @ x - bs * tau
            rz = Gs @ x + s - hs * tau
            rtau = float(cs @ x) + float(bs @ y) + float(hs @ z) + kappa

            vx, vy, vz = kkt.solve(-cs, bs, hs)
            cv = float(cs @ vx) + float(bs @ vy) + float(hs @ vz)

            def direction(rho, ds_lam, dtau_kappa):
                # Also returns the scaled directions W dz and W^{-1} ds,
                # which the step computation and the corrector reuse.
                dtilde = cones.jordan_solve(lam, ds_lam)
                ux, uy, uz = kkt.solve(
                    -rho * rx, -rho * ry, -rho * rz - scaling.apply(dtilde))
                num = (-rho * rtau - dtau_kappa / tau
                       - (float(cs @ ux) + float(bs @ uy) + float(hs @ uz)))
                den = cv - kappa / tau
                if abs(den) < _TINY:
                    raise _NumericalError("degenerate tau step")
                dtau = num / den
                dx = ux + dtau * vx
                dy = uy + dtau * vy
                dz = uz + dtau * vz
                w_dz = scaling.apply(dz)
                winv_ds = dtilde - w_dz
                ds = scaling.apply(winv_ds)
                dkappa = (dtau_kappa - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkappa, w_dz, winv_ds

            def max_step(w_dz, winv_ds, dtau, dkappa):
                alpha = cones.step_to_boundary_pair(lam, winv_ds, w_dz)
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkappa < 0:
                    alpha = min(alpha, -kappa / dkappa)
                return alpha

            # Predictor.
            lam_sq = cones.jordan_product(lam, lam)
            (dxa, dya, dza, dsa, dta, dka,
             w_dza, winv_dsa) = direction(1.0, -lam_sq, -tau * kappa)
            alpha_aff = min(1.0, max_step(w_dza, winv_dsa, dta, dka))
            mu_aff = (float((s + alpha_aff * dsa) @ (z + alpha_aff * dza))
                      + (tau + alpha_aff * dta) * (kappa + alpha_aff * dka)) / deg
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

            # Corrector.
            corr = cones.jordan_product(winv_dsa, w_dza)
            ds_comb = sigma * mu * e - lam_sq - corr
            dx, dy, dz, ds, dt, dk, w_dz, winv_ds = direction(
                1.0 - sigma, ds_comb, sigma * mu - tau * kappa - dta * dka)
            alpha = min(1.0, _STEP_BACKOFF * max_step(w_dz, winv_ds, dt, dk))
        except _NumericalError as exc:
            message = str(exc)
            break

        if alpha <= 1e-7:
            slow += 1
            if slow >= 3:
                message = "step size collapsed"
                break
        else:
            slow = 0
        x += alpha * dx
        y += alpha * dy
        z += alpha * dz
        s += alpha * ds
        tau += alpha * dt
        kappa += alpha * dk
        if tau <= 0 or kappa < 0:
            message = "tau left the positive ray"
            break

    xb, yb, zb, sb, tb, pres, dres, rel_gap, pcost = best
    xo, yo, zo, _ = unscaled(xb, yb, zb, sb, tb)
    if best_score <= 1.0:
        status = OPTIMAL
        message = message or "converged"
    return ConicResult(
        status=status, x=xo, y=yo, z=zo, s=h0 - G0 @ xo,
        objective=pcost if status == OPTIMAL else None,
        pres=pres, dres=dres, rel_gap=rel_gap,
        iterations=iters_done, message=message or "iteration limit reached")
