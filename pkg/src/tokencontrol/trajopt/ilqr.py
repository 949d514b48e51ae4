"""Iterative LQR and its augmented-Lagrangian extension for bound constraints."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import GuardViolation, NonPositiveSupply, PenaltyDiverged, SingularControlHessian
from .lqr import backward_pass
from .problem import ControlProblem, OCProblem, SolveOptions, SolveResult, token_problem, write_trace

log = logging.getLogger(__name__)

REG_MAX = 1e10
REG_MIN = 1e-10


def as_control_problem(problem) -> ControlProblem:
    if isinstance(problem, OCProblem):
        return token_problem(problem)
    return problem


def as_decisions(cp: ControlProblem, controls):
    """Normalise user-supplied initial controls to an (H, m) array."""
    if controls is None:
        return cp.initial_guess()
    if not isinstance(controls, np.ndarray):
        controls = np.array([c.as_array() if hasattr(c, "as_array") else c for c in controls], dtype=float)
    U = np.asarray(controls, dtype=float).reshape(cp.horizon, -1)
    return U[:, : cp.m].copy()


class AugmentedLagrangian:
    """Powell-Hestenes-Rockafellar terms for componentwise bounds.

    For a constraint ``g <= 0`` with multiplier ``lam`` and penalty ``mu`` the
    added cost is ``(max(0, lam + mu*g)**2 - lam**2) / (2*mu)``.
    """

    def __init__(self, cp: ControlProblem, mu: float):
        self.cp = cp
        self.mu = mu
        H, n, m = cp.horizon, cp.n, cp.m
        self.mask_xl = np.isfinite(cp.x_lower)
        self.mask_xu = np.isfinite(cp.x_upper)
        self.mask_xl[0] = False
        self.mask_xu[0] = False
        self.mask_ul = np.isfinite(cp.u_lower)
        self.mask_uu = np.isfinite(cp.u_upper)
        self.xl = np.where(self.mask_xl, cp.x_lower, 0.0)
        self.xu = np.where(self.mask_xu, cp.x_upper, 0.0)
        self.ul = np.where(self.mask_ul, cp.u_lower, 0.0)
        self.uu = np.where(self.mask_uu, cp.u_upper, 0.0)
        self.lam_xl = np.zeros((H + 1, n))
        self.lam_xu = np.zeros((H + 1, n))
        self.lam_ul = np.zeros((H, m))
        self.lam_uu = np.zeros((H, m))

    def _g(self, X, U):
        return ((self.xl - X) * self.mask_xl, (X - self.xu) * self.mask_xu,
                (self.ul - U) * self.mask_ul, (U - self.uu) * self.mask_uu)

    def _pairs(self, X, U):
        return zip(self._g(X, U), (self.lam_xl, self.lam_xu, self.lam_ul, self.lam_uu),
                   (self.mask_xl, self.mask_xu, self.mask_ul, self.mask_uu))

    def value(self, X, U) -> float:
        total = 0.0
        for g, lam, mask in self._pairs(X, U):
            act = np.maximum(0.0, lam + self.mu * g) * mask
            total += float(np.sum(act ** 2 - lam ** 2)) / (2 * self.mu)
        return total

    def derivatives(self, X, U):
        """Gradient and diagonal Hessian contributions for states and controls."""
        out = []
        for g, lam, mask in self._pairs(X, U):
            z = lam + self.mu * g
            out.append((np.maximum(0.0, z) * mask, self.mu * ((z > 0) & mask)))
        (gxl, hxl), (gxu, hxu), (gul, hul), (guu, huu) = out
        return -gxl + gxu, hxl + hxu, -gul + guu, hul + huu

    def update(self, X, U):
        for g, lam, mask in self._pairs(X, U):
            lam[...] = np.maximum(0.0, lam + self.mu * g) * mask

    def multipliers(self):
        return {"x_lower": self.lam_xl.copy(), "x_upper": self.lam_xu.copy(),
                "u_lower": self.lam_ul.copy(), "u_upper": self.lam_uu.copy()}


def _objective(cp, X, U, al):
    J = cp.total_cost(X, U)
    return J + al.value(X, U) if al is not None else J


def _forward(cp, X, U, K, k, alpha):
    H = cp.horizon
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    for t in range(H):
        Un[t] = U[t] + alpha * k[t] + K[t] @ (Xn[t] - X[t])
        Xn[t + 1] = cp.step(t, Xn[t], Un[t])
    return Xn, Un


def _ilqr_core(cp: ControlProblem, U, opts: SolveOptions, al=None, reg=None):
    H, n, m = cp.horizon, cp.n, cp.m
    X = cp.rollout(U)
    J = _objective(cp, X, U, al)
    history = [J]
    trace = []
    reg = opts.regularization_init if reg is None else reg
    K = np.zeros((H, m, n))
    k = np.zeros((H, m))
    accepted = 0
    converged = False
    status = "max_iterations"
    alphas = opts.line_search_shrink ** np.arange(opts.line_search_steps)
    for it in range(opts.max_iterations):
        A, B = cp.jacobians(X, U)
        lx, lu, lxx, luu, lux = cp.cost_derivatives(X, U)
        if al is not None:
            gx, hx, gu, hu = al.derivatives(X, U)
            lx = lx + gx
            lu = lu + gu
            lxx = lxx + hx[:, :, None] * np.eye(n)
            luu = luu + hu[:, :, None] * np.eye(m)
        while True:
            try:
                K, k, dv1, dv2 = backward_pass(A, B, lxx, luu, lux, lx, lu, reg=reg)
                break
            except SingularControlHessian:
                reg *= 10
                if reg > REG_MAX:
                    raise
        expected = -(dv1 + dv2)
        if expected <= 1e-14 * max(1.0, abs(J)):
            converged, status = True, "converged"
            break
        for alpha in alphas:
            try:
                Xn, Un = _forward(cp, X, U, K, k, alpha)
            except (GuardViolation, NonPositiveSupply):
                continue
            Jn = _objective(cp, Xn, Un, al)
            if Jn < J:
                break
        else:
            reg *= 10
            trace.append((it, J, cp.constraint_violation(X, U), reg))
            if reg > REG_MAX:
                status = "line_search_failed"
                log.debug("iLQR line search failed at iteration %d", it)
                break
            continue
        rel = (J - Jn) / max(abs(J), 1e-300)
        X, U, J = Xn, Un, Jn
        accepted += 1
        history.append(J)
        reg = max(reg / 2, REG_MIN)
        trace.append((it, J, cp.constraint_violation(X, U), reg))
        if rel < opts.cost_tolerance:
            converged, status = True, "converged"
            break
    return X, U, J, K, k, accepted, converged, status, history, trace, reg


def _result(cp, X, U, accepted, converged, status, K, k, history, trace, multipliers=None):
    traj = cp.to_trajectory(X, U) if hasattr(cp, "to_trajectory") else None
    return SolveResult(
        states=X, decisions=U, cost=cp.total_cost(X, U), iterations=accepted,
        converged=converged, max_constraint_violation=cp.constraint_violation(X, U),
        gains=(K, k), status=status, trace=trace, trajectory=traj,
        multipliers=multipliers, cost_history=history,
    )


def ilqr_solve(problem, initial_controls=None, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Unconstrained iLQR with Levenberg regularisation and backtracking.

    Accepted iterations strictly decrease the cost.  If no step scale down to
    ``shrink**(steps-1)`` improves the cost even at maximum regularisation,
    the best trajectory so far is returned with ``status='line_search_failed'``.
    """
    cp = as_control_problem(problem)
    U = as_decisions(cp, initial_controls)
    X, U, J, K, k, acc, conv, status, hist, trace, _ = _ilqr_core(cp, U, opts)
    if opts.trace_path:
        write_trace(opts.trace_path, trace)
    return _result(cp, X, U, acc, conv, status, K, k, hist, trace)


def al_ilqr_solve(problem, opts: SolveOptions = SolveOptions(), initial_controls=None,
                  warm_multipliers=None) -> SolveResult:
    """Augmented-Lagrangian iLQR enforcing the problem's state and control bounds.

    Multipliers start at zero (or ``warm_multipliers``) and are updated after
    each inner iLQR solve; the penalty grows by ``penalty_growth`` whenever
    the worst violation fails to drop by a factor of four.
    """
    cp = as_control_problem(problem)
    U = as_decisions(cp, initial_controls)
    al = AugmentedLagrangian(cp, opts.penalty_init)
    if warm_multipliers is not None:
        al.lam_xl[...] = warm_multipliers["x_lower"] * al.mask_xl
        al.lam_xu[...] = warm_multipliers["x_upper"] * al.mask_xu
        al.lam_ul[...] = warm_multipliers["u_lower"] * al.mask_ul
        al.lam_uu[...] = warm_multipliers["u_upper"] * al.mask_uu
        al.mu = warm_multipliers.get("mu", al.mu)
    total_acc = 0
    trace = []
    history = []
    prev_viol = np.inf
    reg = None
    converged = False
    status = "max_outer_iterations"
    K = k = None
    for outer in range(opts.max_outer_iterations):
        X, U, J, K, k, acc, inner_ok, inner_status, hist, tr, reg = _ilqr_core(cp, U, opts, al, reg)
        total_acc += acc
        trace.extend(tr)
        history.extend(hist)
        viol = cp.constraint_violation(X, U)
        if viol < opts.constraint_tolerance and inner_ok:
            converged, status = True, "converged"
            break
        al.update(X, U)
        if viol > 0.25 * prev_viol:
            al.mu *= opts.penalty_growth
            if al.mu > opts.penalty_max:
                raise PenaltyDiverged(f"penalty {al.mu:g} exceeded limit with violation {viol:g}")
        prev_viol = viol
    if opts.trace_path:
        write_trace(opts.trace_path, trace)
    mult = al.multipliers()
    mult["mu"] = al.mu
    return _result(cp, X, U, total_acc, converged, status, K, k, history, trace, mult)
