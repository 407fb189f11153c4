"""Exact second-moment propagation for the closed loop, and the residual
statistics derived from it.

Stack the four vectorized second-moment blocks of the plant state x and the
estimate xh,

    X  = vec E[x x'],    Xt = vec E[x xh'],
    Xb = vec E[xh x'],   Xh = vec E[xh xh'],

into curly_X = [X; Xt; Xb; Xh]. Under the compensator u = K xh the stack
evolves by the exact affine recursion

    curly_X[k+1] = H curly_X[k] + Phi [vec(sigma_w); vec(sigma_v)],

where H is a 4n^2 x 4n^2 matrix of Kronecker blocks (assembled in
:func:`build_operator`) and Phi injects the additive-noise covariances into
the X and Xh rows. Mean-square compensation is exactly Schur stability of H;
the steady state then solves the generalized Lyapunov equation
(I - H) curly_X = Phi V, from which the estimation-error second moment and
the residual second moment

    E  = X - Xt - Xb + Xh
    R  = (C (x) C) E + E[Ch (x) Ch] X + vec(sigma_v)

follow. Everything here is a pure function of its inputs; first moments of
the error obey E[e[k+1]] = (A - LC) E[e[k]] with E[r[k]] = C E[e[k]].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import kron, matricize, solve_linear, spectral_radius, vectorize
from .model import UncertainLinearSystem

__all__ = [
    "NotCompensatedError",
    "SecondMomentOperator",
    "SteadyStateMoments",
    "MomentTrajectory",
    "StabilityDiagnostics",
    "build_operator",
    "steady_state",
    "propagate_moments",
    "stability_diagnostics",
    "expected_q",
    "lifted_covariances",
]

_SIGMA_R_COND_LIMIT = 1e12


class NotCompensatedError(RuntimeError):
    """The second-moment operator is not Schur stable (rho(H) >= 1).

    Steady-state moments do not exist in this regime; callers that need them
    must treat the operating point as undefined.
    """

    def __init__(self, rho: float):
        super().__init__(
            f"mean-square compensation lost: spectral radius of the "
            f"second-moment operator is {rho:.6f} >= 1; steady-state "
            f"residual moments do not exist"
        )
        self.rho = rho


def lifted_covariances(system: UncertainLinearSystem):
    """Kronecker-lifted multiplicative covariances.

    Returns (Sa, Sb, Sc) with Sa = sum_i s2a_i (Ai (x) Ai) of shape n^2 x n^2,
    Sb of shape n^2 x m^2 and Sc of shape p^2 x n^2 built the same way.
    """
    n, m, p = system.n, system.m, system.p
    Sa = np.zeros((n * n, n * n))
    for d in system.a_dirs:
        Sa += d.variance * kron(d.pattern, d.pattern)
    Sb = np.zeros((n * n, m * m))
    for d in system.b_dirs:
        Sb += d.variance * kron(d.pattern, d.pattern)
    Sc = np.zeros((p * p, n * n))
    for d in system.c_dirs:
        Sc += d.variance * kron(d.pattern, d.pattern)
    return Sa, Sb, Sc


@dataclass(frozen=True, eq=False)
class SecondMomentOperator:
    """The affine second-moment recursion: stack operator H, input map Phi,
    lifted multiplicative covariances, and the gains it was built from."""

    H: np.ndarray
    Phi: np.ndarray
    sigma_A_prime: np.ndarray
    sigma_B_prime: np.ndarray
    sigma_C_prime: np.ndarray
    K: np.ndarray
    L: np.ndarray


def build_operator(system: UncertainLinearSystem, K: np.ndarray, L: np.ndarray) -> SecondMomentOperator:
    """Assemble H (4n^2 x 4n^2) and Phi (4n^2 x (n^2 + p^2)) for gains (K, L).

    The block layout follows the four moment recursions for X, Xt, Xb, Xh in
    that order, under the column-stacking vec convention. The second block
    column of Phi has width p^2 and carries L (x) L against vec(sigma_v).
    """
    A, B, C = system.A_bar, system.B_bar, system.C_bar
    n, m, p = system.n, system.m, system.p
    K = np.asarray(K, dtype=float)
    L = np.asarray(L, dtype=float)
    if K.shape != (m, n):
        raise ValueError(f"K must be {m}x{n}, got {K.shape}")
    if L.shape != (n, p):
        raise ValueError(f"L must be {n}x{p}, got {L.shape}")

    Sa, Sb, Sc = lifted_covariances(system)
    BK = B @ K
    LC = L @ C
    F = A + BK - LC  # estimate propagation matrix
    H = np.block([
        [kron(A, A) + Sa, kron(BK, A), kron(A, BK), (kron(B, B) + Sb) @ kron(K, K)],
        [kron(LC, A), kron(F, A), kron(LC, BK), kron(F, BK)],
        [kron(A, LC), kron(BK, LC), kron(A, F), kron(BK, F)],
        [kron(L, L) @ (kron(C, C) + Sc), kron(F, LC), kron(LC, F), kron(F, F)],
    ])
    Phi = np.zeros((4 * n * n, n * n + p * p))
    Phi[: n * n, : n * n] = np.eye(n * n)
    Phi[3 * n * n :, n * n :] = kron(L, L)
    return SecondMomentOperator(H, Phi, Sa, Sb, Sc, K, L)


@dataclass(frozen=True, eq=False)
class SteadyStateMoments:
    """Steady-state second moments of the closed loop.

    ``sigma_r`` is the residual second-moment matrix mat(R, p, p) and
    ``sigma_x_err`` the estimation-error second moment mat(E, n, n). Only
    constructed when rho(H) < 1.
    """

    X_inf: np.ndarray
    Xtilde_inf: np.ndarray
    Xbreve_inf: np.ndarray
    Xhat_inf: np.ndarray
    E_inf: np.ndarray
    R_inf: np.ndarray
    sigma_r: np.ndarray
    sigma_x_err: np.ndarray
    rho_H: float


def _noise_stack(system: UncertainLinearSystem) -> np.ndarray:
    return np.concatenate([vectorize(system.sigma_w), vectorize(system.sigma_v)])


def steady_state(op: SecondMomentOperator, system: UncertainLinearSystem) -> SteadyStateMoments:
    """Solve (I - H) curly_X = Phi V for the stationary second moments.

    Raises :class:`NotCompensatedError` when rho(H) >= 1: the linear system
    may still be solvable there, but its solution is not a limit of the
    moment recursion and must not be used.
    """
    n, p = system.n, system.p
    rho = spectral_radius(op.H)
    if rho >= 1.0:
        raise NotCompensatedError(rho)
    rhs = op.Phi @ _noise_stack(system)
    X = solve_linear(np.eye(4 * n * n) - op.H, rhs)
    X0, X1, X2, X3 = np.split(X, 4)
    E = X0 - X1 - X2 + X3
    # Residual second moment; the lifted C-term is evaluated direction-wise,
    # sum_l s2c_l vec(Cl mat(X) Cl'), equivalent to sigma_C_prime @ X.
    Xmat = matricize(X0, n, n)
    R = kron(system.C_bar, system.C_bar) @ E + vectorize(system.sigma_v)
    for d in system.c_dirs:
        R = R + d.variance * vectorize(d.pattern @ Xmat @ d.pattern.T)
    sigma_r = matricize(R, p, p)
    sigma_r = 0.5 * (sigma_r + sigma_r.T)
    sigma_x_err = matricize(E, n, n)
    sigma_x_err = 0.5 * (sigma_x_err + sigma_x_err.T)
    return SteadyStateMoments(X0, X1, X2, X3, E, R, sigma_r, sigma_x_err, rho)


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    """Finite-horizon moment series, indexed k = 0..T.

    Second-moment blocks are rows of the (T+1, n^2) arrays; ``e_mean`` and
    ``r_mean`` carry E[e[k]] and E[r[k]] = C E[e[k]].
    """

    X: np.ndarray
    Xtilde: np.ndarray
    Xbreve: np.ndarray
    Xhat: np.ndarray
    e_mean: np.ndarray
    r_mean: np.ndarray


def propagate_moments(
    op: SecondMomentOperator,
    system: UncertainLinearSystem,
    x0_second_moment: np.ndarray,
    e0_mean: np.ndarray,
    horizon: int,
) -> MomentTrajectory:
    """Iterate the exact moment recursions for ``horizon`` steps.

    The estimate is initialized at xh[0] = 0, so the initial stack is
    [vec(E[x0 x0']); 0; 0; 0] and E[e[0]] = E[x0] = ``e0_mean``. Always
    defined for finite horizons, even when rho(H) >= 1 (values then grow).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n, p = system.n, system.p
    nn = n * n
    curly = np.zeros(4 * nn)
    curly[:nn] = vectorize(np.asarray(x0_second_moment, dtype=float))
    drive = op.Phi @ _noise_stack(system)

    stack = np.empty((horizon + 1, 4 * nn))
    e_mean = np.empty((horizon + 1, n))
    e = np.asarray(e0_mean, dtype=float).reshape(n)
    ALC = system.A_bar - op.L @ system.C_bar
    for k in range(horizon + 1):
        stack[k] = curly
        e_mean[k] = e
        if k < horizon:
            curly = op.H @ curly + drive
            e = ALC @ e
    r_mean = e_mean @ system.C_bar.T
    return MomentTrajectory(
        X=stack[:, :nn],
        Xtilde=stack[:, nn : 2 * nn],
        Xbreve=stack[:, 2 * nn : 3 * nn],
        Xhat=stack[:, 3 * nn :],
        e_mean=e_mean,
        r_mean=r_mean,
    )


@dataclass(frozen=True)
class StabilityDiagnostics:
    """Spectral radii of the three mean-square tests; each predicate is '< 1'.

    ``rho_open`` tests mean-square stability of the autonomous plant,
    ``rho_closed`` mean-square stabilization under u = Kx (full state), and
    ``rho_H`` mean-square compensation of the output-feedback joint system.
    """

    rho_open: float
    rho_closed: float | None = None
    rho_H: float | None = None


def stability_diagnostics(
    system: UncertainLinearSystem,
    K: np.ndarray | None = None,
    L: np.ndarray | None = None,
) -> StabilityDiagnostics:
    """Compute the mean-square stability / stabilizability / compensatability radii.

    Cross terms between the zero-mean multiplicative noises vanish by mutual
    independence, so the state-feedback operator reduces to
    (A+BK)(x)(A+BK) + Sa + Sb (K (x) K).
    """
    A, B = system.A_bar, system.B_bar
    Sa, Sb, _ = lifted_covariances(system)
    rho_open = spectral_radius(kron(A, A) + Sa)
    rho_closed = None
    rho_H = None
    if K is not None:
        K = np.asarray(K, dtype=float)
        ABK = A + B @ K
        rho_closed = spectral_radius(kron(ABK, ABK) + Sa + Sb @ kron(K, K))
        if L is not None:
            rho_H = spectral_radius(build_operator(system, K, L).H)
    elif L is not None:
        raise ValueError("rho_H requires both K and L")
    return StabilityDiagnostics(rho_open, rho_closed, rho_H)


def expected_q(ss: SteadyStateMoments, e_mean: np.ndarray, C_bar: np.ndarray) -> float:
    """Expected detection statistic p + (C e)' sigma_r^{-1} (C e).

    Equals the output dimension p exactly when the error mean has decayed.
    """
    C = np.asarray(C_bar, dtype=float)
    p = C.shape[0]
    cond = np.linalg.cond(ss.sigma_r)
    if not np.isfinite(cond) or cond > _SIGMA_R_COND_LIMIT:
        raise np.linalg.LinAlgError(
            f"sigma_r is singular to working precision (condition estimate {cond:.3e})"
        )
    ce = C @ np.asarray(e_mean, dtype=float).reshape(-1)
    return float(p + ce @ np.linalg.solve(ss.sigma_r, ce))
