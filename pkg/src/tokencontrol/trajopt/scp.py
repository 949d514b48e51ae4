"""Sequential convex programming with a trust region on control deviations."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import GuardViolation, NonPositiveSupply, QPInfeasible, SingularControlHessian, TrustRegionCollapsed
from .ilqr import _result, as_control_problem, as_decisions
from .lqr import backward_pass
from .problem import ControlProblem, SolveOptions, SolveResult, write_trace
from .qp import qp_solve

log = logging.getLogger(__name__)

MIN_RADIUS = 1e-12


def build_subproblem(cp: ControlProblem, X, U, radius, scale):
    """Convex QP over ``z = [dx_1..dx_H, du_0..du_{H-1}]`` around a rollout.

    Dynamics enter as linearized equalities, bounds as hard inequalities,
    and the trust region as an infinity-norm box on each ``du_t``.
    """
    H, n, m = cp.horizon, cp.n, cp.m
    nx, nu = H * n, H * m
    N = nx + nu
    A, B = cp.jacobians(X, U)
    lx, lu, lxx, luu, lux = cp.cost_derivatives(X, U)

    def xi(t):  # slice of dx_t, t >= 1
        return slice((t - 1) * n, t * n)

    def ui(t):
        return slice(nx + t * m, nx + (t + 1) * m)

    P = np.zeros((N, N))
    q = np.zeros(N)
    for t in range(1, H + 1):
        P[xi(t), xi(t)] = lxx[t]
        q[xi(t)] = lx[t]
    for t in range(H):
        P[ui(t), ui(t)] = luu[t]
        q[ui(t)] = lu[t]
        if t >= 1:
            P[ui(t), xi(t)] = lux[t]
            P[xi(t), ui(t)] = lux[t].T
    P = 0.5 * (P + P.T)

    Aeq = np.zeros((nx, N))
    for t in range(H):
        rows = slice(t * n, (t + 1) * n)
        Aeq[rows, xi(t + 1)] = np.eye(n)
        if t >= 1:
            Aeq[rows, xi(t)] = -A[t]
        Aeq[rows, ui(t)] = -B[t]
    beq = np.zeros(nx)

    rows, rhs = [], []

    def add(idx, sign, bound):
        r = np.zeros(N)
        r[idx] = sign
        rows.append(r)
        rhs.append(bound)

    for t in range(1, H + 1):
        for i in range(n):
            j = (t - 1) * n + i
            if np.isfinite(cp.x_lower[t, i]):
                add(j, -1.0, X[t, i] - cp.x_lower[t, i])
            if np.isfinite(cp.x_upper[t, i]):
                add(j, 1.0, cp.x_upper[t, i] - X[t, i])
    for t in range(H):
        for i in range(m):
            j = nx + t * m + i
            lo = max(cp.u_lower[t, i] - U[t, i], -radius * scale[i])
            hi = min(cp.u_upper[t, i] - U[t, i], radius * scale[i])
            add(j, -1.0, -lo)
            add(j, 1.0, hi)
    G = np.array(rows) if rows else np.zeros((0, N))
    h = np.array(rhs) if rhs else np.zeros(0)
    return P, q, Aeq, beq, G, h


def scp_solve(problem, opts: SolveOptions = SolveOptions(), initial_controls=None) -> SolveResult:
    """Trust-region SCP on the problem's dynamics, cost and bounds.

    Each iteration linearizes the dynamics about the current rollout, solves
    the convex QP on the deviations, and accepts the re-rolled-out candidate
    when the merit ``J + state_penalty * violation`` achieves more than a
    tenth of the predicted reduction.
    """
    cp = as_control_problem(problem)
    U = as_decisions(cp, initial_controls)
    X = cp.rollout(U)
    scale = np.asarray(cp.control_scale(), dtype=float)
    rho = opts.state_penalty
    H, n, m = cp.horizon, cp.n, cp.m
    nx = H * n

    def merit(Xc, Uc):
        return cp.total_cost(Xc, Uc) + rho * cp.constraint_violation(Xc, Uc)

    J = merit(X, U)
    radius = opts.trust_radius_init
    history = [cp.total_cost(X, U)]
    trace = []
    accepted = 0
    converged = False
    status = "max_iterations"
    for it in range(opts.max_iterations):
        P, q, Aeq, beq, G, h = build_subproblem(cp, X, U, radius, scale)
        try:
            sol = qp_solve(P, q, Aeq, beq, G, h, x0=np.zeros(len(q)))
        except QPInfeasible as exc:
            raise QPInfeasible(f"SCP subproblem: {exc}", iteration=it) from None
        z = sol.x
        dU = z[nx:].reshape(H, m)
        model = 0.5 * z @ P @ z + q @ z
        viol = cp.constraint_violation(X, U)
        pred = -model + rho * viol
        if pred <= 1e-12 * max(1.0, abs(J)):
            converged, status = True, "converged"
            break
        Un = U + dU
        try:
            Xn = cp.rollout(Un)
            Jn = merit(Xn, Un)
        except (GuardViolation, NonPositiveSupply):
            Jn = np.inf
        ratio = (J - Jn) / pred
        at_boundary = np.any(np.abs(dU) >= radius * scale * (1 - 1e-9))
        if ratio > 0.1:
            rel = (J - Jn) / max(abs(J), 1e-300)
            X, U, J = Xn, Un, Jn
            accepted += 1
            history.append(cp.total_cost(X, U))
            if ratio > 0.75 and at_boundary:
                radius *= 2.0
            trace.append((it, history[-1], cp.constraint_violation(X, U), radius))
            if rel < opts.cost_tolerance and not at_boundary and \
                    cp.constraint_violation(X, U) < opts.constraint_tolerance:
                converged, status = True, "converged"
                break
        else:
            radius = 0.25 * float(np.max(np.abs(dU) / scale)) if np.isfinite(Jn) else 0.25 * radius
            trace.append((it, history[-1], viol, radius))
            if radius < MIN_RADIUS:
                raise TrustRegionCollapsed(f"trust radius fell below {MIN_RADIUS:g} at iteration {it}")
    if opts.trace_path:
        write_trace(opts.trace_path, trace)
    K, k = _feedback(cp, X, U)
    return _result(cp, X, U, accepted, converged, status, K, k, history, trace)


def _feedback(cp, X, U):
    """Time-varying LQR gains about the returned trajectory (for diagnostics)."""
    try:
        A, B = cp.jacobians(X, U)
        lx, lu, lxx, luu, lux = cp.cost_derivatives(X, U)
        K, k, _, _ = backward_pass(A, B, lxx, luu, lux, lx, lu, reg=1e-9)
    except (SingularControlHessian, GuardViolation):
        K = np.zeros((cp.horizon, cp.m, cp.n))
        k = np.zeros((cp.horizon, cp.m))
    return K, k
