"""Finite-horizon Riccati recursion for time-varying affine-quadratic problems."""

from __future__ import annotations

import numpy as np

from ..errors import SingularControlHessian


def backward_pass(A, B, lxx, luu, lux, lx, lu, reg=0.0, c=None):
    """Dynamic-programming sweep for ``x' = A x + B u + c``.

    Costs are ``0.5 x'lxx x + lx'x + 0.5 u'luu u + lu'u + u'lux x`` per stage
    and ``0.5 x'lxx[H] x + lx[H]'x`` at the end.  ``reg`` is added to the
    diagonal of each control Hessian.  Returns ``(K, k, dv1, dv2)`` where the
    model predicts a cost change of ``a*dv1 + a^2*dv2`` for step scale ``a``.
    """
    H, n, m = B.shape
    K = np.empty((H, m, n))
    k = np.empty((H, m))
    V = lxx[H].copy()
    v = lx[H].copy()
    dv1 = dv2 = 0.0
    eye = np.eye(m)
    for t in range(H - 1, -1, -1):
        At, Bt = A[t], B[t]
        VA = V @ At
        VB = V @ Bt
        vc = v if c is None else v + V @ c[t]
        Qx = lx[t] + At.T @ vc
        Qu = lu[t] + Bt.T @ vc
        Qxx = lxx[t] + At.T @ VA
        Quu = luu[t] + Bt.T @ VB
        Qux = lux[t] + Bt.T @ VA
        Quu_reg = Quu + reg * eye
        try:
            L = np.linalg.cholesky(0.5 * (Quu_reg + Quu_reg.T))
        except np.linalg.LinAlgError:
            raise SingularControlHessian(f"control Hessian not positive definite at t={t}") from None
        rhs = np.column_stack([Qu, Qux])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        kt = -sol[:, 0]
        Kt = -sol[:, 1:]
        K[t] = Kt
        k[t] = kt
        dv1 += kt @ Qu
        dv2 += 0.5 * kt @ Quu @ kt
        # full (not reduced) update keeps V consistent when reg > 0
        V = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
        V = 0.5 * (V + V.T)
        v = Qx + Kt.T @ Quu @ kt + Kt.T @ Qu + Qux.T @ kt
    return K, k, dv1, dv2


def lqr_gains(A, B, Q, R, q=None, r=None, c=None, N=None, reg=0.0):
    """Optimal affine feedback ``u_t = K_t x_t + k_t`` for an LQ problem.

    Parameters
    ----------
    A, B : arrays (H, n, n) and (H, n, m), or a sequence of ``LinearizedStep``
        (in which case affine offsets are taken from the steps).
    Q, R : arrays (H+1, n, n) and (H, m, m), or ``Q`` a sequence of
        ``QuadraticStage`` of length H+1 (then ``R``, ``q``, ``r`` are read
        from it and the ``R`` argument is ignored).
    q, r, c, N : optional linear state/control cost terms, dynamics offsets,
        and control-state cross terms.

    Returns
    -------
    K : (H, m, n), k : (H, m)
    """
    if not isinstance(A, np.ndarray) and len(A) and hasattr(A[0], "state_jacobian"):
        steps = A
        A = np.array([s.state_jacobian for s in steps])
        B = np.array([s.control_jacobian for s in steps])
        if c is None:
            c = np.array([s.affine_offset for s in steps])
    if not isinstance(Q, np.ndarray) and len(Q) and hasattr(Q[0], "state_hessian"):
        stages = Q
        Q = np.array([s.state_hessian for s in stages])
        q = np.array([s.state_linear for s in stages])
        R = np.array([s.control_hessian for s in stages[:-1]])
        r = np.array([s.control_linear for s in stages[:-1]])
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    H, n, m = B.shape
    q = np.zeros((H + 1, n)) if q is None else np.asarray(q, dtype=float)
    r = np.zeros((H, m)) if r is None else np.asarray(r, dtype=float)
    N = np.zeros((H, m, n)) if N is None else np.asarray(N, dtype=float)
    c = None if c is None else np.asarray(c, dtype=float)
    K, k, _, _ = backward_pass(A, B, Q, R, N, q, r, reg=reg, c=c)
    return K, k


def lqr_rollout(A, B, K, k, x0, c=None):
    """Closed-loop states and controls under affine feedback."""
    H, n, m = B.shape
    X = np.empty((H + 1, n))
    U = np.empty((H, m))
    X[0] = x0
    for t in range(H):
        U[t] = K[t] @ X[t] + k[t]
        X[t + 1] = A[t] @ X[t] + B[t] @ U[t] + (0.0 if c is None else c[t])
    return X, U
