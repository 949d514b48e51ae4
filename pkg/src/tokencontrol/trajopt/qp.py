"""Dense primal active-set solver for small convex quadratic programs.

Solves::

    minimize    0.5 z'P z + q'z
    subject to  A z = b,   G z <= h

Equalities are eliminated once through a null-space basis; the primal
active-set iteration then works in the reduced coordinates.  A phase-one
linear program supplies a feasible start when the caller does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import QPInfeasible, QPUnbounded


@dataclass
class QPResult:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    active: list
    iterations: int
    status: str = "optimal"

    def kkt_residuals(self, P, q, A=None, b=None, G=None, h=None):
        return kkt_residuals(P, q, A, b, G, h, self.x, self.eq_duals, self.ineq_duals)


def kkt_residuals(P, q, A, b, G, h, x, nu, lam):
    """Max-norm stationarity, primal feasibility and complementarity residuals."""
    grad = P @ x + q
    if A is not None and len(A):
        grad = grad + A.T @ nu
    primal = 0.0
    compl = 0.0
    if A is not None and len(A):
        primal = float(np.max(np.abs(A @ x - b)))
    if G is not None and len(G):
        grad = grad + G.T @ lam
        slack = G @ x - h
        primal = max(primal, float(np.max(slack, initial=0.0)))
        compl = float(np.max(np.abs(lam * slack), initial=0.0))
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal": primal,
        "complementarity": compl,
        "dual": float(np.max(-lam, initial=0.0)) if lam is not None and len(lam) else 0.0,
    }


def _null_space(M, n, tol):
    """Orthonormal basis of {p : M p = 0} for M with rows in R^n."""
    if M.shape[0] == 0:
        return np.eye(n)
    Q, R = np.linalg.qr(M.T, mode="complete")
    rank = int(np.sum(np.abs(np.diag(R)) > tol * max(1.0, np.abs(R).max()))) if R.size else 0
    return Q[:, rank:]


def _active_set(P, q, G, h, w, W, tol, max_iter):
    """Primal active-set iterations from a feasible ``w`` with working set ``W``."""
    nvar = len(w)
    W = list(W)
    ncon = len(h)
    scale = max(1.0, float(np.abs(P).max(initial=0.0)), float(np.abs(q).max(initial=0.0)))
    for it in range(max_iter):
        g = P @ w + q
        GW = G[W] if W else np.zeros((0, nvar))
        Z = _null_space(GW, nvar, 1e-12)
        ray = False
        if Z.shape[1] == 0:
            p = np.zeros(nvar)
        else:
            Pr = Z.T @ P @ Z
            gr = Z.T @ g
            try:
                L = np.linalg.cholesky(Pr)
                pz = -np.linalg.solve(L.T, np.linalg.solve(L, gr))
            except np.linalg.LinAlgError:
                evals, evecs = np.linalg.eigh(0.5 * (Pr + Pr.T))
                flat = evals <= 1e-12 * max(1.0, float(np.abs(evals).max()))
                gproj = evecs.T @ gr
                if np.any(flat & (np.abs(gproj) > tol * scale)):
                    # zero-curvature descent direction
                    d = np.where(flat, -gproj, 0.0)
                    pz = evecs @ d
                    ray = True
                else:
                    inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, evals))
                    pz = -evecs @ (inv * gproj)
            p = Z @ pz
        pnorm = float(np.max(np.abs(p), initial=0.0))
        if not ray and pnorm <= 1e-12 * max(1.0, float(np.max(np.abs(w), initial=0.0))):
            if not W:
                return w, W, np.zeros(0), it
            lam_w, *_ = np.linalg.lstsq(GW.T, -g, rcond=None)
            j = int(np.argmin(lam_w))
            if lam_w[j] >= -tol * scale:
                return w, W, lam_w, it
            W.pop(j)
            continue
        Gp = G @ p
        alpha = np.inf if ray else 1.0
        block = -1
        inW = np.zeros(ncon, dtype=bool)
        inW[W] = True
        cand = np.flatnonzero((~inW) & (Gp > 1e-14 * max(1.0, pnorm)))
        if cand.size:
            ratios = (h[cand] - G[cand] @ w) / Gp[cand]
            ratios = np.maximum(ratios, 0.0)
            i = int(np.argmin(ratios))
            if ratios[i] < alpha:
                alpha = float(ratios[i])
                block = int(cand[i])
        if not np.isfinite(alpha):
            raise QPUnbounded("objective decreases without bound along a feasible ray")
        w = w + alpha * p
        if block >= 0:
            W.append(block)
    raise QPInfeasible(f"active-set iteration limit {max_iter} reached")


def qp_solve(P, q, A=None, b=None, G=None, h=None, x0=None, tol=1e-9, max_iter=None) -> QPResult:
    """Minimise a convex quadratic under linear equalities and inequalities.

    Raises :class:`QPInfeasible` when no feasible point exists and
    :class:`QPUnbounded` when the objective is unbounded below.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
    if max_iter is None:
        max_iter = 50 * (n + len(h)) + 100

    # equality elimination: z = zp + Z w
    if len(A):
        zp, *_ = np.linalg.lstsq(A, b, rcond=None)
        eq_scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if np.max(np.abs(A @ zp - b)) > 1e-8 * eq_scale:
            raise QPInfeasible("equality constraints are inconsistent")
        Z = _null_space(A, n, 1e-12)
    else:
        zp = np.zeros(n)
        Z = np.eye(n)
    Pr = Z.T @ P @ Z
    qr = Z.T @ (P @ zp + q)
    Gr = G @ Z
    hr = h - G @ zp
    nw = Z.shape[1]

    # rows that no longer depend on the free coordinates
    row_norm = np.abs(Gr).max(axis=1) if len(Gr) else np.zeros(0)
    h_scale = 1.0 + np.abs(hr)
    dead = row_norm <= 1e-13 * np.maximum(1.0, np.abs(G).max(axis=1) if len(G) else 1.0)
    if np.any(dead & (hr < -1e-9 * h_scale)):
        raise QPInfeasible("constraint independent of free variables is violated")
    live = np.flatnonzero(~dead)
    Gl, hl = Gr[live], hr[live]

    w = np.zeros(nw) if x0 is None else Z.T @ (np.asarray(x0, dtype=float) - zp)
    feas_tol = 1e-10 * (1.0 + np.abs(hl)) if len(hl) else np.zeros(0)
    viol = Gl @ w - hl if len(hl) else np.zeros(0)
    total_iter = 0
    if len(hl) and np.any(viol > feas_tol):
        w, total_iter = _phase_one(Gl, hl, w, tol, max_iter)
        viol = Gl @ w - hl
    W = []
    if len(hl):
        near = np.flatnonzero(viol >= -feas_tol)
        for i in near:
            cand = W + [int(i)]
            if np.linalg.matrix_rank(Gl[cand]) == len(cand):
                W = cand
            if len(W) >= nw:
                break
    w, W, lam_w, it = _active_set(Pr, qr, Gl, hl, w, W, tol, max_iter)
    total_iter += it
    x = zp + Z @ w
    lam = np.zeros(len(h))
    if W:
        lam[live[np.array(W)]] = np.maximum(lam_w, 0.0)
    if len(A):
        rhs = -(P @ x + q + G.T @ lam)
        nu, *_ = np.linalg.lstsq(A.T, rhs, rcond=None)
    else:
        nu = np.zeros(0)
    active = sorted(int(live[i]) for i in W)
    return QPResult(x, nu, lam, active, total_iter)


def _phase_one(G, h, w0, tol, max_iter):
    """Find ``w`` with ``G w <= h`` by minimising the worst violation."""
    m, nw = G.shape
    # variables (w, s): minimise s s.t. G w - s <= h, -s <= 0
    G1 = np.zeros((m + 1, nw + 1))
    G1[:m, :nw] = G
    G1[:m, nw] = -1.0
    G1[m, nw] = -1.0
    h1 = np.concatenate([h, [0.0]])
    P1 = np.zeros((nw + 1, nw + 1))
    q1 = np.zeros(nw + 1)
    q1[nw] = 1.0
    s0 = float(np.max(G @ w0 - h))
    z = np.concatenate([w0, [s0]])
    slack = G1 @ z - h1
    W = [int(np.argmax(slack[:m]))]
    z, W, _, it = _active_set(P1, q1, G1, h1, z, W, tol, max_iter)
    s = z[nw]
    if s > 1e-9 * (1.0 + float(np.abs(h).max(initial=0.0))):
        raise QPInfeasible(f"inequalities infeasible (min worst violation {s:g})")
    return z[:nw], it
