"""Seeded Monte-Carlo simulation of the closed loop, residual generation,
and empirical statistics.

The simulator evolves the plant and the compensator jointly:

    y[k]     = C[k] x[k] + v[k]            (+ sensor bias when injected)
    r[k]     = y[k] - C_bar xh[k]
    u[k]     = K xh[k]
    x[k+1]   = A[k] x[k] + B[k] u[k] + w[k]
    xh[k+1]  = (A_bar + B_bar K) xh[k] + L r[k]

with fresh multiplicative draws per step in sampled-noise mode, or a fixed
"true" A (and no A-direction sampling) in fixed-mismatch mode. The detection
statistic is q[k] = r[k]' sigma_r^{-1} r[k] against the analytic steady-state
residual moment.

Reproducibility: the generator is a counter-based Philox stream keyed by the
seed entropy, and all noise is drawn vectorized up front in a fixed order
(a-direction scalars, then b, then c, then process-noise normals and mixing
weights, then sensor-noise normals and mixing weights). One trace is always
evolved sequentially; parallelism belongs at the replicate level, where each
replicate derives its own seed entropy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import UncertainLinearSystem
from .synthesis import CompensatorGains

__all__ = [
    "BURN_IN",
    "NoiseSampler",
    "AnomalySpec",
    "SimulationTrace",
    "EmpiricalStats",
    "simulate",
    "empirical_moments",
    "empirical_stats",
    "write_trace_csv",
    "read_trace_csv",
]

# Steps excluded from empirical statistics so steady-state formulas apply.
# Traces no longer than the window are used whole (debug-scale runs).
BURN_IN = 1000

_PSD_FACTOR_RTOL = 1e-10


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor F with F F' = cov, accepting singular PSD inputs."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
        if lam.min() < -_PSD_FACTOR_RTOL * max(lam.max(), 1.0):
            raise np.linalg.LinAlgError(
                f"covariance is not PSD (min eigenvalue {lam.min():.6e})"
            ) from None
        return vec * np.sqrt(np.clip(lam, 0.0, None))


@dataclass(frozen=True, eq=False)
class NoiseSampler:
    """Zero-mean additive-noise sampler with a prescribed covariance.

    ``gaussian`` draws F g with g standard normal and F the covariance
    factor. ``laplacian`` draws sqrt(W) F g with W ~ Exponential(mean 1)
    independent of g, which keeps E[z z'] equal to the covariance while
    giving heavier tails.
    """

    kind: str
    covariance: np.ndarray
    factor: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplacian"):
            raise ValueError(f"kind must be 'gaussian' or 'laplacian', got {self.kind!r}")
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "factor", _psd_factor(cov))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` vectors as rows of a (count, d) array."""
        g = rng.standard_normal((count, self.covariance.shape[0]))
        z = g @ self.factor.T
        if self.kind == "laplacian":
            z *= np.sqrt(rng.exponential(1.0, count))[:, None]
        return z


@dataclass(frozen=True)
class AnomalySpec:
    """Additive sensor bias on one output channel from step ``start`` on."""

    start: int
    channel: int
    bias: float


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Per-step records of one closed-loop run plus its reproducibility key.

    ``r[k] = y[k] - C_bar xh[k]`` and ``q[k] = r[k]' sigma_r^{-1} r[k]`` hold
    at every step by construction; ``alarm`` is q > alpha when a threshold
    was supplied, else all False.
    """

    k: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    q: np.ndarray
    alarm: np.ndarray
    seed: object = None
    noise_kind: str = "laplacian"
    mode: str = "sampled"
    alpha: float | None = None
    anomaly: AnomalySpec | None = None

    @property
    def steps(self) -> int:
        return self.q.shape[0]


def _window(length: int, burn_in: int) -> int:
    return burn_in if length > burn_in else 0


def simulate(
    system: UncertainLinearSystem,
    gains: CompensatorGains,
    sigma_r: np.ndarray,
    steps: int,
    seed=0,
    noise_kind: str = "laplacian",
    mode: str = "sampled",
    true_A: np.ndarray | None = None,
    anomaly: AnomalySpec | None = None,
    alpha: float | None = None,
    x0: np.ndarray | None = None,
) -> SimulationTrace:
    """Run one seeded closed-loop trace of ``steps`` steps.

    ``mode="sampled"`` draws fresh multiplicative scalars each step (the
    model the analysis assumes); ``mode="fixed-mismatch"`` evolves the plant
    with the constant ``true_A`` instead, without A-direction sampling, while
    B/C noises stay as configured. Bit-reproducible for fixed
    (seed, steps, mode, noise kind).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if mode not in ("sampled", "fixed-mismatch"):
        raise ValueError(f"mode must be 'sampled' or 'fixed-mismatch', got {mode!r}")
    if mode == "fixed-mismatch" and true_A is None:
        raise ValueError("fixed-mismatch mode requires a true_A matrix")

    A, B, C = system.A_bar, system.B_bar, system.C_bar
    n, m, p = system.n, system.m, system.p
    K, L = gains.K, gains.L
    sigma_r = np.asarray(sigma_r, dtype=float)

    rng = np.random.Generator(np.random.Philox(seed))
    sample_a = mode == "sampled"
    gam = (
        np.stack([rng.normal(0.0, np.sqrt(d.variance), steps) for d in system.a_dirs], axis=1)
        if sample_a and system.a_dirs
        else None
    )
    dlt = (
        np.stack([rng.normal(0.0, np.sqrt(d.variance), steps) for d in system.b_dirs], axis=1)
        if system.b_dirs
        else None
    )
    kap = (
        np.stack([rng.normal(0.0, np.sqrt(d.variance), steps) for d in system.c_dirs], axis=1)
        if system.c_dirs
        else None
    )
    w = NoiseSampler(noise_kind, system.sigma_w).sample(rng, steps)
    v = NoiseSampler(noise_kind, system.sigma_v).sample(rng, steps)

    bias = np.zeros((steps, p))
    if anomaly is not None:
        if not 0 <= anomaly.channel < p:
            raise ValueError(f"anomaly channel {anomaly.channel} out of range for p = {p}")
        bias[max(anomaly.start, 0) :, anomaly.channel] = anomaly.bias

    # Joint-state recursion over z = [x; xh]. The estimator row expands
    # L r[k] into LC x + kappa L Cl x + L (v + bias), so the multiplicative
    # draws enter as rank-structured per-step corrections to a constant map.
    BK = B @ K
    LC = L @ C
    Atop = np.asarray(true_A, dtype=float) if mode == "fixed-mismatch" else A
    M0 = np.block([[Atop, BK], [LC, A + BK - LC]])
    corrections: list[np.ndarray] = []
    coeff_cols: list[np.ndarray] = []
    if gam is not None:
        for i, d in enumerate(system.a_dirs):
            corrections.append(
                np.block([[d.pattern, np.zeros((n, n))], [np.zeros((n, 2 * n))]])
            )
            coeff_cols.append(gam[:, i])
    if dlt is not None:
        for j, d in enumerate(system.b_dirs):
            corrections.append(
                np.block([[np.zeros((n, n)), d.pattern @ K], [np.zeros((n, 2 * n))]])
            )
            coeff_cols.append(dlt[:, j])
    if kap is not None:
        for l, d in enumerate(system.c_dirs):
            corrections.append(
                np.block([[np.zeros((n, 2 * n))], [L @ d.pattern, np.zeros((n, n))]])
            )
            coeff_cols.append(kap[:, l])
    coeffs = np.stack(coeff_cols, axis=1) if coeff_cols else None
    drive = np.concatenate([w, (v + bias) @ L.T], axis=1)

    Z = np.empty((steps, 2 * n))
    z = np.zeros(2 * n)
    if x0 is not None:
        z[:n] = np.asarray(x0, dtype=float).reshape(n)
    if coeffs is None:
        for k in range(steps):
            Z[k] = z
            z = M0 @ z + drive[k]
    else:
        for k in range(steps):
            Z[k] = z
            zn = M0 @ z + drive[k]
            for i, Mi in enumerate(corrections):
                zn += coeffs[k, i] * (Mi @ z)
            z = zn

    x = Z[:, :n]
    xh = Z[:, n:]
    y = x @ C.T + v + bias
    if kap is not None:
        for l, d in enumerate(system.c_dirs):
            y += kap[:, l : l + 1] * (x @ d.pattern.T)
    r = y - xh @ C.T
    u = xh @ K.T
    q = np.einsum("ij,ji->i", r, np.linalg.solve(sigma_r, r.T))
    alarm = q > alpha if alpha is not None else np.zeros(steps, dtype=bool)
    return SimulationTrace(
        k=np.arange(steps),
        x=x,
        xhat=xh,
        u=u,
        y=y,
        r=r,
        q=q,
        alarm=alarm,
        seed=seed,
        noise_kind=noise_kind,
        mode=mode,
        alpha=alpha,
        anomaly=anomaly,
    )


def empirical_moments(trace: SimulationTrace, s: int, burn_in: int = BURN_IN) -> list[float]:
    """Raw moments [M1..Ms] of q over the post-burn-in window.

    Raises ``ValueError`` on non-finite results, which signals moment
    explosion of an uncompensated loop rather than a recoverable condition.
    """
    if s < 1:
        raise ValueError("moment order must be >= 1")
    if trace.steps == 0:
        raise ValueError("empty trace")
    window = trace.q[_window(trace.steps, burn_in) :]
    moments = [float(np.mean(window**j)) for j in range(1, s + 1)]
    if not all(np.isfinite(moments)):
        raise ValueError(f"non-finite moments {moments}: q trajectory exploded")
    return moments


@dataclass(frozen=True, eq=False)
class EmpiricalStats:
    """Alarm statistics of a trace against a fixed threshold.

    ``false_alarm_rate`` counts anomaly-free post-burn-in steps with
    q > alpha; ``alarm_times`` lists every step where q > alpha, anomalous
    or not; ``var_r`` is the empirical raw second-moment matrix of r.
    """

    false_alarm_rate: float
    alarm_times: np.ndarray
    mean_q: float
    var_r: np.ndarray


def empirical_stats(trace: SimulationTrace, alpha: float, burn_in: int = BURN_IN) -> EmpiricalStats:
    """Evaluate a threshold against a trace."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    start = _window(trace.steps, burn_in)
    clean_end = trace.anomaly.start if trace.anomaly is not None else trace.steps
    clean = trace.q[start:clean_end]
    rate = float(np.mean(clean > alpha)) if clean.size else 0.0
    rw = trace.r[start:clean_end]
    var_r = rw.T @ rw / max(len(rw), 1)
    return EmpiricalStats(
        false_alarm_rate=rate,
        alarm_times=np.flatnonzero(trace.q > alpha),
        mean_q=float(np.mean(clean)) if clean.size else float("nan"),
        var_r=var_r,
    )


# --- trace CSV -------------------------------------------------------------
# Header: k,x1..xn,xhat1..xhatn,u1..um,y1..yp,r1..rp,q,alarm
# Floats are written as shortest round-trip decimals; alarm as 0/1.


def _trace_header(n: int, m: int, p: int) -> list[str]:
    return (
        ["k"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"xhat{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"y{i + 1}" for i in range(p)]
        + [f"r{i + 1}" for i in range(p)]
        + ["q", "alarm"]
    )


def write_trace_csv(trace: SimulationTrace, path) -> None:
    n = trace.x.shape[1]
    m = trace.u.shape[1]
    p = trace.y.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_trace_header(n, m, p))
        for i in range(trace.steps):
            row = [str(int(trace.k[i]))]
            row += [repr(float(x)) for x in trace.x[i]]
            row += [repr(float(x)) for x in trace.xhat[i]]
            row += [repr(float(x)) for x in trace.u[i]]
            row += [repr(float(x)) for x in trace.y[i]]
            row += [repr(float(x)) for x in trace.r[i]]
            row.append(repr(float(trace.q[i])))
            row.append("1" if trace.alarm[i] else "0")
            writer.writerow(row)


def read_trace_csv(path) -> SimulationTrace:
    """Load a trace written by :func:`write_trace_csv`.

    Run metadata (seed, mode, anomaly) is not stored in the CSV, so the
    returned trace carries defaults there; the numeric columns round-trip
    bit-exactly.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        header = fh.readline().strip()
    if not header.startswith("k,"):
        raise ValueError(f"{path}: not a trace CSV (header {header[:40]!r})")
    cols = header.split(",")
    n = sum(1 for c in cols if c.startswith("x") and not c.startswith("xhat"))
    m = sum(1 for c in cols if c.startswith("u"))
    p = sum(1 for c in cols if c.startswith("y"))
    if cols != _trace_header(n, m, p):
        raise ValueError(f"{path}: unexpected trace columns {cols}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: empty trace")
    i = 1
    x = data[:, i : i + n]; i += n
    xh = data[:, i : i + n]; i += n
    u = data[:, i : i + m]; i += m
    y = data[:, i : i + p]; i += p
    r = data[:, i : i + p]; i += p
    q = data[:, i]; i += 1
    alarm = data[:, i] != 0.0
    return SimulationTrace(
        k=data[:, 0].astype(int),
        x=x,
        xhat=xh,
        u=u,
        y=y,
        r=r,
        q=q,
        alarm=alarm,
        seed=None,
    )
