"""Independent oracles shared by the test modules.

These implement textbook recursions directly and slowly, never through the
package's own solvers, so they stay valid checks of the fast paths.
"""

import numpy as np


def dare_value_iteration(A, B, C, Q, R, sigma_w, sigma_v, iters=10_000):
    """Classical LQG gains by brute-force value iteration of the two
    standalone Riccati recursions (control and one-step-predictor filter).

    Returns (K, L) with the sign convention u = K xhat and the predictor
    update xhat+ = (A + BK) xhat + L (y - C xhat).
    """
    A, B, C = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(C)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    sigma_w, sigma_v = np.atleast_2d(sigma_w), np.atleast_2d(sigma_v)
    P = Q.copy()
    S = sigma_w.copy()
    for _ in range(iters):
        BtPB = R + B.T @ P @ B
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(BtPB, B.T @ P @ A)
        P = 0.5 * (P + P.T)
        CSC = sigma_v + C @ S @ C.T
        S = sigma_w + A @ S @ A.T - A @ S @ C.T @ np.linalg.solve(CSC, C @ S @ A.T)
        S = 0.5 * (S + S.T)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    L = A @ S @ C.T @ np.linalg.inv(sigma_v + C @ S @ C.T)
    return K, L


def lyapunov_iteration(A, Q, iters=20_000, tol=1e-14):
    """Fixed point of P = A P A' + Q by direct iteration (requires rho(A) < 1)."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)
    P = np.zeros_like(Q)
    for _ in range(iters):
        P_next = A @ P @ A.T + Q
        if np.abs(P_next - P).max() <= tol:
            return P_next
        P = P_next
    return P


def joint_closed_loop(system, K, L):
    """2n x 2n one-step map of [x; xhat] for the nominal (noise-free) loop."""
    A, B, C = system.A_bar, system.B_bar, system.C_bar
    return np.block([[A, B @ K], [L @ C, A + B @ K - L @ C]])
