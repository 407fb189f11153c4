"""System description: nominal matrices, multiplicative-noise directions,
additive-noise covariances, and the inverted-pendulum benchmark.

The plant model is

    x[k+1] = (A_bar + sum_i gamma[k,i] * A_i) x[k]
             + (B_bar + sum_j delta[k,j] * B_j) u[k] + w[k]
    y[k]   = (C_bar + sum_l kappa[k,l] * C_l) x[k] + v[k]

where gamma, delta, kappa are zero-mean white scalar noises with known
variances, and w, v are zero-mean white vector noises with covariances
sigma_w, sigma_v. All types here are immutable after construction (arrays are
frozen), so values can be shared freely across threads and processes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "NoiseDirection",
    "UncertainLinearSystem",
    "SynthesisWeights",
    "RunOptions",
    "ValidationReport",
    "validate_system",
    "validate_weights",
    "load_config",
    "parse_config_document",
    "write_config",
    "config_document",
    "build_pendulum",
]

# Relative tolerances for the symmetry / positive-semidefiniteness checks.
# These absorb decimal-parse rounding without accepting indefinite inputs.
SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-10


class ConfigError(ValueError):
    """A configuration file failed to parse, walk, or validate."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NoiseDirection:
    """One scalar multiplicative-noise channel.

    ``pattern`` fixes which entries of a system matrix the scalar noise
    perturbs; ``variance`` is the noise variance (dimensionless, >= 0).
    """

    pattern: np.ndarray
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "pattern", _frozen(self.pattern))
        object.__setattr__(self, "variance", float(self.variance))
        if not (np.isfinite(self.variance) and self.variance >= 0.0):
            raise ValueError(f"noise variance must be finite and >= 0, got {self.variance}")


@dataclass(frozen=True, eq=False)
class UncertainLinearSystem:
    """Nominal triple, multiplicative-noise direction lists, additive covariances."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    sigma_w: np.ndarray
    sigma_v: np.ndarray
    a_dirs: tuple[NoiseDirection, ...] = ()
    b_dirs: tuple[NoiseDirection, ...] = ()
    c_dirs: tuple[NoiseDirection, ...] = ()
    sigma_x0: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A_bar", "B_bar", "C_bar", "sigma_w", "sigma_v"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "a_dirs", tuple(self.a_dirs))
        object.__setattr__(self, "b_dirs", tuple(self.b_dirs))
        object.__setattr__(self, "c_dirs", tuple(self.c_dirs))
        x0 = self.sigma_x0 if self.sigma_x0 is not None else np.zeros((self.n, self.n))
        object.__setattr__(self, "sigma_x0", _frozen(x0))

    @property
    def n(self) -> int:
        return self.A_bar.shape[0]

    @property
    def m(self) -> int:
        return self.B_bar.shape[1] if self.B_bar.ndim == 2 else 0

    @property
    def p(self) -> int:
        return self.C_bar.shape[0]


@dataclass(frozen=True, eq=False)
class SynthesisWeights:
    """Quadratic cost weights: state penalty Q (PSD) and control penalty R (PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _frozen(self.Q))
        object.__setattr__(self, "R", _frozen(self.R))


@dataclass(frozen=True, eq=False)
class RunOptions:
    """Run-level settings carried by a config file.

    ``true_A`` is an optional constant replacement for the A matrix used only
    by the simulator's fixed-mismatch mode (the analysis always runs on the
    nominal + multiplicative model).
    """

    true_A: np.ndarray | None = None
    noise_kind: str = "laplacian"
    seed: int = 0

    def __post_init__(self):
        if self.true_A is not None:
            object.__setattr__(self, "true_A", _frozen(self.true_A))
        if self.noise_kind not in ("gaussian", "laplacian"):
            raise ValueError(f"noise_kind must be 'gaussian' or 'laplacian', got {self.noise_kind!r}")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_symmetric_psd(mat: np.ndarray, name: str, size: int, out: list[str]) -> None:
    if mat.shape != (size, size):
        out.append(f"{name} must be {size}x{size}, got {mat.shape}")
        return
    if not np.isfinite(mat).all():
        out.append(f"{name} has non-finite entries")
        return
    scale = np.abs(mat).max()
    if np.abs(mat - mat.T).max() > SYMMETRY_RTOL * max(scale, 1.0):
        out.append(f"{name} not symmetric (max asymmetry {np.abs(mat - mat.T).max():.3e})")
        return
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if lam.min() < -PSD_RTOL * lam.max():
        out.append(f"{name} not PSD (min eigenvalue {lam.min():.6e}, max {lam.max():.6e})")


def validate_system(system: UncertainLinearSystem) -> ValidationReport:
    """Check every structural invariant of a system description.

    Violations are data, not exceptions: the report names each failed
    invariant together with the offending dimensions or eigenvalue.
    """
    v: list[str] = []
    A, B, C = system.A_bar, system.B_bar, system.C_bar
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        v.append(f"A_bar must be square, got shape {A.shape}")
        return ValidationReport(tuple(v))
    n = A.shape[0]
    if B.ndim != 2 or B.shape[0] != n:
        v.append(f"B_bar row count != n = {n} (shape {B.shape})")
    if C.ndim != 2 or C.shape[1] != n:
        v.append(f"C_bar column count != n = {n} (shape {C.shape})")
    for name, mat in (("A_bar", A), ("B_bar", B), ("C_bar", C)):
        if mat.ndim == 2 and not np.isfinite(mat).all():
            v.append(f"{name} has non-finite entries")
    m = B.shape[1] if B.ndim == 2 else 0
    p = C.shape[0] if C.ndim == 2 else 0

    shapes = {"a_dirs": (n, n), "b_dirs": (n, m), "c_dirs": (p, n)}
    for list_name, want in shapes.items():
        for i, d in enumerate(getattr(system, list_name)):
            if d.pattern.shape != want:
                v.append(
                    f"{list_name}[{i}].pattern must be {want[0]}x{want[1]}, got {d.pattern.shape}"
                )
            if d.variance < 0:
                v.append(f"{list_name}[{i}].variance negative: {d.variance}")

    _check_symmetric_psd(system.sigma_w, "sigma_w", n, v)
    _check_symmetric_psd(system.sigma_v, "sigma_v", p, v)
    _check_symmetric_psd(system.sigma_x0, "sigma_x0", n, v)
    return ValidationReport(tuple(v))


def validate_weights(weights: SynthesisWeights, n: int, m: int) -> ValidationReport:
    """Check Q is symmetric PSD (n x n) and R symmetric positive definite (m x m)."""
    v: list[str] = []
    _check_symmetric_psd(weights.Q, "Q", n, v)
    _check_symmetric_psd(weights.R, "R", m, v)
    if weights.R.shape == (m, m) and np.isfinite(weights.R).all():
        lam = np.linalg.eigvalsh(0.5 * (weights.R + weights.R.T))
        if lam.min() <= 0:
            v.append(f"R not positive definite (min eigenvalue {lam.min():.6e})")
    return ValidationReport(tuple(v))


# --- configuration files ---------------------------------------------------
#
# One JSON document:
#   {
#     "system": {
#       "A_bar": [[..]], "B_bar": [[..]], "C_bar": [[..]],
#       "a_dirs": [{"pattern": [[..]], "variance": x}, ...],   (default [])
#       "b_dirs": [...], "c_dirs": [...],                      (default [])
#       "sigma_w": [[..]], "sigma_v": [[..]],
#       "sigma_x0": [[..]]                                     (default 0)
#     },
#     "weights": {"Q": [[..]], "R": [[..]]},                   (default identity)
#     "options": {
#       "true_A": [[..]],                                      (optional)
#       "noise_kind": "gaussian" | "laplacian",                (default "laplacian")
#       "seed": integer                                        (default 0)
#     }
#   }
#
# Matrices are row-major nested arrays of decimal numbers; covariances are
# given fully, not as Cholesky factors.


def _as_matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError(f"{where}: expected a matrix (list of rows), got {type(value).__name__}")
    width = len(value[0])
    for i, row in enumerate(value):
        if len(row) != width:
            raise ConfigError(f"{where}: ragged matrix (row {i} has {len(row)} entries, expected {width})")
        for j, x in enumerate(row):
            if not isinstance(x, (int, float)) or isinstance(x, bool):
                raise ConfigError(f"{where}[{i}][{j}]: expected a number, got {type(x).__name__}")
    return np.array(value, dtype=float)


def _require_matrix(doc: dict, section: str, key: str) -> np.ndarray:
    if key not in doc:
        raise ConfigError(f"{section}.{key}: required field missing")
    return _as_matrix(doc[key], f"{section}.{key}")


def _optional_matrix(doc: dict, section: str, key: str) -> np.ndarray | None:
    if key not in doc:
        return None
    return _as_matrix(doc[key], f"{section}.{key}")


def _parse_dirs(doc: dict, section: str, key: str) -> tuple[NoiseDirection, ...]:
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise ConfigError(f"{section}.{key}: expected a list, got {type(raw).__name__}")
    dirs = []
    for i, entry in enumerate(raw):
        where = f"{section}.{key}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected an object with 'pattern' and 'variance'")
        if "pattern" not in entry or "variance" not in entry:
            raise ConfigError(f"{where}: required field 'pattern' or 'variance' missing")
        pattern = _as_matrix(entry["pattern"], f"{where}.pattern")
        variance = entry["variance"]
        if not isinstance(variance, (int, float)) or isinstance(variance, bool):
            raise ConfigError(f"{where}.variance: expected a number, got {type(variance).__name__}")
        if variance < 0:
            raise ConfigError(f"{where}.variance: negative variance {variance}")
        dirs.append(NoiseDirection(pattern, float(variance)))
    return tuple(dirs)


def load_config(path) -> tuple[UncertainLinearSystem, SynthesisWeights, RunOptions]:
    """Read and validate one JSON configuration document.

    Raises :class:`ConfigError` with field identification for parse errors,
    schema errors (missing or mistyped fields), and invariant violations.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    return parse_config_document(doc)


def parse_config_document(doc) -> tuple[UncertainLinearSystem, SynthesisWeights, RunOptions]:
    """Validate an already-parsed JSON config document (see schema above)."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    if "system" not in doc or not isinstance(doc["system"], dict):
        raise ConfigError("system: required section missing or not an object")
    sd = doc["system"]

    system = UncertainLinearSystem(
        A_bar=_require_matrix(sd, "system", "A_bar"),
        B_bar=_require_matrix(sd, "system", "B_bar"),
        C_bar=_require_matrix(sd, "system", "C_bar"),
        sigma_w=_require_matrix(sd, "system", "sigma_w"),
        sigma_v=_require_matrix(sd, "system", "sigma_v"),
        a_dirs=_parse_dirs(sd, "system", "a_dirs"),
        b_dirs=_parse_dirs(sd, "system", "b_dirs"),
        c_dirs=_parse_dirs(sd, "system", "c_dirs"),
        sigma_x0=_optional_matrix(sd, "system", "sigma_x0"),
    )

    wd = doc.get("weights", {})
    if not isinstance(wd, dict):
        raise ConfigError("weights: expected an object")
    Q = _optional_matrix(wd, "weights", "Q")
    R = _optional_matrix(wd, "weights", "R")
    weights = SynthesisWeights(
        Q=Q if Q is not None else np.eye(system.n),
        R=R if R is not None else np.eye(system.m),
    )

    od = doc.get("options", {})
    if not isinstance(od, dict):
        raise ConfigError("options: expected an object")
    noise_kind = od.get("noise_kind", "laplacian")
    if noise_kind not in ("gaussian", "laplacian"):
        raise ConfigError(f"options.noise_kind: expected 'gaussian' or 'laplacian', got {noise_kind!r}")
    seed = od.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"options.seed: expected an integer, got {type(seed).__name__}")
    options = RunOptions(
        true_A=_optional_matrix(od, "options", "true_A"),
        noise_kind=noise_kind,
        seed=seed,
    )

    report = validate_system(system)
    wreport = validate_weights(weights, system.n, system.m)
    if not (report.ok and wreport.ok):
        raise ConfigError("; ".join(report.violations + wreport.violations))
    if options.true_A is not None and options.true_A.shape != (system.n, system.n):
        raise ConfigError(f"options.true_A must be {system.n}x{system.n}, got {options.true_A.shape}")
    return system, weights, options


def config_document(
    system: UncertainLinearSystem,
    weights: SynthesisWeights,
    options: RunOptions | None = None,
) -> dict:
    """Serialize to the JSON config schema (round-trips bit-exactly)."""
    doc = {
        "system": {
            "A_bar": system.A_bar.tolist(),
            "B_bar": system.B_bar.tolist(),
            "C_bar": system.C_bar.tolist(),
            "a_dirs": [{"pattern": d.pattern.tolist(), "variance": d.variance} for d in system.a_dirs],
            "b_dirs": [{"pattern": d.pattern.tolist(), "variance": d.variance} for d in system.b_dirs],
            "c_dirs": [{"pattern": d.pattern.tolist(), "variance": d.variance} for d in system.c_dirs],
            "sigma_w": system.sigma_w.tolist(),
            "sigma_v": system.sigma_v.tolist(),
            "sigma_x0": system.sigma_x0.tolist(),
        },
        "weights": {"Q": weights.Q.tolist(), "R": weights.R.tolist()},
    }
    if options is not None:
        od: dict = {"noise_kind": options.noise_kind, "seed": options.seed}
        if options.true_A is not None:
            od["true_A"] = options.true_A.tolist()
        doc["options"] = od
    return doc


def write_config(
    path,
    system: UncertainLinearSystem,
    weights: SynthesisWeights,
    options: RunOptions | None = None,
) -> None:
    """Write the JSON config document for ``load_config`` to read back."""
    Path(path).write_text(json.dumps(config_document(system, weights, options), indent=2) + "\n")


def build_pendulum(
    sigma2_a: float, sigma2_c: float
) -> tuple[UncertainLinearSystem, SynthesisWeights, RunOptions]:
    """Inverted-pendulum benchmark: torque actuator, noisy angle sensor.

    Forward-Euler discretization (step 0.1) of the linearized pendulum about
    the upright equilibrium, with the mass constant underestimated by the
    nominal model (0.5 per step vs. a true 1.0). The mass uncertainty enters
    as a scalar multiplicative noise on the velocity-coupling entry of A, and
    a second scalar noise perturbs the angle sensor gain. The true-dynamics A
    is recorded in the run options for the simulator's fixed-mismatch mode.
    """
    if sigma2_a < 0 or sigma2_c < 0:
        raise ValueError(f"variances must be >= 0, got ({sigma2_a}, {sigma2_c})")
    system = UncertainLinearSystem(
        A_bar=[[1.0, 0.1], [0.5, 1.0]],
        B_bar=[[0.0], [0.1]],
        C_bar=[[1.0, 0.0]],
        sigma_w=2.0 * np.eye(2),
        sigma_v=2.0 * np.eye(1),
        a_dirs=(NoiseDirection([[0.0, 0.0], [1.0, 0.0]], sigma2_a),),
        c_dirs=(NoiseDirection([[0.1, 0.0]], sigma2_c),),
    )
    weights = SynthesisWeights(Q=np.eye(2), R=np.eye(1))
    options = RunOptions(true_A=[[1.0, 0.1], [1.0, 1.0]])
    return system, weights, options
